"""Pure-Python/numpy fallback for the compiled kernels.

Must produce bit-identical output to _kernels.pyx: both compute the same
IEEE-754 double operations in the same order.
"""

from __future__ import annotations

import numpy as np


def assemble_follower_obs(
    m_pt: np.ndarray,
    m_op: np.ndarray,
    m_busy: np.ndarray,
    m_budget: np.ndarray,
    m_next_avail: np.ndarray,
    n_products: int,
    n_ops: int,
    budget_cap: int,
    shift_ticks: int,
    wip: np.ndarray,
    delayed: np.ndarray,
    future_demand: np.ndarray,
    count_cap: int,
    goal: np.ndarray,
) -> np.ndarray:
    """Assemble one operation's observation vector, all features in [0, 1].

    Layout: per machine [product one-hot | operation one-hot | busy |
    budget used / cap | time to free / shift], then per product
    [wip | delayed | future demand per window shift] (counts over count_cap,
    clipped), then the goal coordinates.
    """
    nm = m_pt.shape[0]
    npo, window = future_demand.shape
    mf = n_products + n_ops + 3
    out = np.zeros(nm * mf + npo * (2 + window) + goal.shape[0], dtype=np.float64)

    block = out[: nm * mf].reshape(nm, mf)
    rows = np.arange(nm)
    ok = (m_pt >= 0) & (m_pt < n_products)
    block[rows[ok], m_pt[ok]] = 1.0
    ok = (m_op >= 0) & (m_op < n_ops)
    block[rows[ok], n_products + m_op[ok]] = 1.0
    block[:, n_products + n_ops] = m_busy.astype(np.float64)
    if budget_cap > 0:
        block[:, n_products + n_ops + 1] = np.minimum(
            1.0, m_budget.astype(np.float64) / float(budget_cap)
        )
    block[:, n_products + n_ops + 2] = np.minimum(
        1.0, m_next_avail.astype(np.float64) / float(shift_ticks)
    )

    pblock = out[nm * mf : nm * mf + npo * (2 + window)].reshape(npo, 2 + window)
    cap = float(count_cap)
    pblock[:, 0] = np.minimum(1.0, wip.astype(np.float64) / cap)
    pblock[:, 1] = np.minimum(1.0, delayed.astype(np.float64) / cap)
    pblock[:, 2:] = np.minimum(1.0, future_demand.astype(np.float64) / cap)

    out[nm * mf + npo * (2 + window) :] = goal
    return out


def gae_advantages(
    rewards: np.ndarray,
    values: np.ndarray,
    next_values: np.ndarray,
    ends: np.ndarray,
    gamma: float,
    lam: float,
) -> np.ndarray:
    """Generalized advantage estimation over a time-ordered buffer.

    ends marks episode boundaries: the recursion does not propagate across
    them. next_values[t] carries the bootstrap value at a truncation (or 0
    at a true terminal), so deltas stay well-defined at boundaries.
    """
    n = rewards.shape[0]
    adv = np.zeros(n, dtype=np.float64)
    acc = 0.0
    for t in range(n - 1, -1, -1):
        nonterminal = 0.0 if ends[t] else 1.0
        delta = rewards[t] + gamma * next_values[t] - values[t]
        acc = delta + gamma * lam * nonterminal * acc
        adv[t] = acc
    return adv
