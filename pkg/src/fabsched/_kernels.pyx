# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernels: observation assembly and the GAE recursion.

Bit-identical to _kernels_py: same IEEE-754 double operations in the same
order, just typed loops instead of numpy array expressions.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def assemble_follower_obs(
    cnp.int64_t[:] m_pt,
    cnp.int64_t[:] m_op,
    cnp.int64_t[:] m_busy,
    cnp.int64_t[:] m_budget,
    cnp.int64_t[:] m_next_avail,
    int n_products,
    int n_ops,
    int budget_cap,
    int shift_ticks,
    cnp.int64_t[:] wip,
    cnp.int64_t[:] delayed,
    cnp.int64_t[:, :] future_demand,
    int count_cap,
    cnp.float64_t[:] goal,
):
    cdef Py_ssize_t nm = m_pt.shape[0]
    cdef Py_ssize_t npo = future_demand.shape[0]
    cdef Py_ssize_t window = future_demand.shape[1]
    cdef Py_ssize_t gdim = goal.shape[0]
    cdef Py_ssize_t mf = n_products + n_ops + 3
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.zeros(
        nm * mf + npo * (2 + window) + gdim, dtype=np.float64
    )
    cdef cnp.float64_t[:] o = out
    cdef Py_ssize_t i, w, base
    cdef double cap = <double> count_cap
    cdef double frac

    for i in range(nm):
        base = i * mf
        if 0 <= m_pt[i] < n_products:
            o[base + m_pt[i]] = 1.0
        if 0 <= m_op[i] < n_ops:
            o[base + n_products + m_op[i]] = 1.0
        o[base + n_products + n_ops] = <double> m_busy[i]
        if budget_cap > 0:
            frac = <double> m_budget[i] / <double> budget_cap
            o[base + n_products + n_ops + 1] = frac if frac < 1.0 else 1.0
        frac = <double> m_next_avail[i] / <double> shift_ticks
        o[base + n_products + n_ops + 2] = frac if frac < 1.0 else 1.0

    for i in range(npo):
        base = nm * mf + i * (2 + window)
        frac = <double> wip[i] / cap
        o[base] = frac if frac < 1.0 else 1.0
        frac = <double> delayed[i] / cap
        o[base + 1] = frac if frac < 1.0 else 1.0
        for w in range(window):
            frac = <double> future_demand[i, w] / cap
            o[base + 2 + w] = frac if frac < 1.0 else 1.0

    for i in range(gdim):
        o[nm * mf + npo * (2 + window) + i] = goal[i]
    return out


def gae_advantages(
    cnp.float64_t[:] rewards,
    cnp.float64_t[:] values,
    cnp.float64_t[:] next_values,
    cnp.uint8_t[:] ends,
    double gamma,
    double lam,
):
    cdef Py_ssize_t n = rewards.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] adv = np.zeros(n, dtype=np.float64)
    cdef cnp.float64_t[:] a = adv
    cdef double acc = 0.0
    cdef double delta, nonterminal
    cdef Py_ssize_t t
    for t in range(n - 1, -1, -1):
        nonterminal = 0.0 if ends[t] else 1.0
        delta = rewards[t] + gamma * next_values[t] - values[t]
        acc = delta + gamma * lam * nonterminal * acc
        a[t] = acc
    return adv
