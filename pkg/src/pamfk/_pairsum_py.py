"""Pure-numpy pair sums, used when the compiled extension is unavailable.

Same contract as the ``_pairsum`` extension; results agree with it to
rounding (the summation order differs).
"""
import numpy as np

_ROWS = 256


def _profile(r2, kind, coef, table):
    if kind == 0:
        return np.exp(-coef * r2)
    u = r2 * coef
    top = len(table) - 1
    inside = u < top
    k = np.minimum(u, top - 1).astype(np.intp)
    f = u - k
    val = table[k] + f * (table[k + 1] - table[k])
    return np.where(inside, val, 0.0)


def _check(P, kind, coef, table):
    if P.ndim != 3 or P.shape[1] not in (1, 2, 3):
        raise ValueError("paths must have shape (M, d, n) with d in 1..3")
    if kind not in (0, 1):
        raise ValueError(f"unknown profile kind {kind}")
    if coef <= 0:
        raise ValueError("profile coefficient must be positive")
    if kind == 1 and len(table) < 2:
        raise ValueError("table profile needs at least two nodes")


def _one_sum(a, b, kind, coef, table, tri):
    n_b = b.shape[1]
    tot = 0.0
    for j0 in range(0, n_b, _ROWS):
        j1 = min(j0 + _ROWS, n_b)
        i_end = j1 if tri else a.shape[1]
        if i_end == 0:
            continue
        diff = b[:, j0:j1, None] - a[:, None, :i_end]
        r2 = np.einsum("kji,kji->ji", diff, diff)
        vals = _profile(r2, kind, coef, table)
        if tri:
            jj = np.arange(j0, j1)[:, None]
            ii = np.arange(i_end)[None, :]
            vals = np.where(ii < jj, vals, 0.0)
        tot += float(vals.sum())
    return tot


def tri_sum_batch(P, kind, coef, table):
    """Per sample, sum of f(|p_j - p_i|^2) over 0 <= i < j < n."""
    P = np.asarray(P, dtype=float)
    table = np.asarray(table, dtype=float)
    _check(P, kind, coef, table)
    return np.array([_one_sum(p, p, kind, coef, table, True) for p in P])


def rect_sum_batch(P, Q, kind, coef, table):
    """Per sample, sum of f(|q_j - p_i|^2) over all i, j."""
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    table = np.asarray(table, dtype=float)
    _check(P, kind, coef, table)
    if P.shape[0] != Q.shape[0] or P.shape[1] != Q.shape[1]:
        raise ValueError("path batches differ in sample count or dimension")
    return np.array([_one_sum(p, q, kind, coef, table, False) for p, q in zip(P, Q)])
