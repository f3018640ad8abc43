import sys

from rqlab.cli import main

sys.exit(main())
