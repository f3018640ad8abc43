"""Independent reference computations used to derive frozen test values.

Everything here is plain Python over nested lists, deliberately sharing no
code with the package, so agreement between the two is meaningful.
"""

from __future__ import annotations

import math


def _lse(xs):
    m = max(xs)
    return m + math.log(sum(math.exp(x - m) for x in xs))


def soft_q_scalar(transition, reward, terminal, gamma, alpha, tol=1e-12, max_iter=1_000_000):
    """Soft value iteration with in-place-free scalar loops.

    Terminal states contribute zero continuation value.
    """
    n, m = len(reward), len(reward[0])
    q = [[0.0] * m for _ in range(n)]
    for _ in range(max_iter):
        v = [0.0 if terminal[s] else alpha * _lse([x / alpha for x in q[s]]) for s in range(n)]
        new = [[reward[s][a] + gamma * sum(transition[s][a][t] * v[t] for t in range(n))
                for a in range(m)] for s in range(n)]
        gap = max(abs(new[s][a] - q[s][a]) for s in range(n) for a in range(m))
        q = new
        if gap < tol:
            return q
    raise RuntimeError("oracle did not converge")


def policy_eval_scalar(transition, reward, terminal, policy, gamma, alpha,
                       tol=1e-12, max_iter=1_000_000):
    """Soft Q of a fixed policy: r + gamma E[sum_a pi (Q - alpha ln pi)]."""
    n, m = len(reward), len(reward[0])
    q = [[0.0] * m for _ in range(n)]
    for _ in range(max_iter):
        v = [0.0 if terminal[s] else
             sum(policy[s][a] * (q[s][a] - alpha * math.log(policy[s][a])) for a in range(m))
             for s in range(n)]
        new = [[reward[s][a] + gamma * sum(transition[s][a][t] * v[t] for t in range(n))
                for a in range(m)] for s in range(n)]
        gap = max(abs(new[s][a] - q[s][a]) for s in range(n) for a in range(m))
        q = new
        if gap < tol:
            return q
    raise RuntimeError("oracle did not converge")


def softmax_rows(q, alpha):
    out = []
    for row in q:
        z = _lse([x / alpha for x in row])
        out.append([math.exp(x / alpha - z) for x in row])
    return out


def residual_backward_induction(transition, addon, terminal, log_prior, gamma, horizon,
                                omega_prime, alpha_hat):
    """Finite-horizon residual Q: Q^1 = r_R, Q^k = r_R + gamma E[V_R(Q^{k-1})].

    Returns Q^horizon; terminal successors contribute zero.
    """
    n, m = len(addon), len(addon[0])
    q = [[addon[s][a] for a in range(m)] for s in range(n)]
    for _ in range(horizon - 1):
        v = [0.0 if terminal[s] else
             alpha_hat * _lse([(q[s][a] + omega_prime * log_prior[s][a]) / alpha_hat
                               for a in range(m)])
             for s in range(n)]
        q = [[addon[s][a] + gamma * sum(transition[s][a][t] * v[t] for t in range(n))
              for a in range(m)] for s in range(n)]
    return q


def truncated_return_scalar(transition, reward, terminal, policy, gamma, depth, start):
    """Expected discounted reward of ``depth`` policy steps from ``start`` (no entropy)."""
    n, m = len(reward), len(reward[0])
    v = [0.0] * n
    for _ in range(depth):
        v = [0.0 if terminal[s] else
             sum(policy[s][a] * (reward[s][a]
                                 + gamma * sum(transition[s][a][t] * v[t] for t in range(n)))
                 for a in range(m))
             for s in range(n)]
    return v[start]


def greedy_scalar(transition, addon, terminal, prior, gamma, alpha_hat, lam, iters=500):
    """Greedy baseline fixed point: evaluate r_R under pi, then
    pi = softmax((Q + lam ln prior) / (alpha_hat + lam))."""
    n, m = len(addon), len(addon[0])
    pol = [row[:] for row in prior]
    for _ in range(iters):
        q = policy_eval_scalar(transition, addon, terminal, pol, gamma, alpha_hat)
        logits = [[q[s][a] + lam * math.log(prior[s][a]) for a in range(m)] for s in range(n)]
        pol = softmax_rows(logits, alpha_hat + lam)
    return pol
