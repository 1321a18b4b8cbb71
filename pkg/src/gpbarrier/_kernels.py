"""Hot loops with a numba implementation and a numpy twin.

Both variants are always importable so the benchmark and tests can compare
them; ``greedy_fill`` dispatches according to ``GPBARRIER_DISABLE_NUMBA``.
"""
import numpy as np

from ._accel import HAS_NUMBA, njit


def greedy_fill_numpy(order, lower, upper):
    """Worst-case distributions for many interval rows sharing one payoff order.

    ``order`` lists destination columns by decreasing payoff. Each row starts
    at its lower bounds and the leftover mass is poured into columns in
    ``order`` up to their upper bounds.
    """
    slack = (upper - lower)[:, order]
    budget = 1.0 - lower.sum(axis=1)
    before = np.cumsum(slack, axis=1) - slack
    add = np.clip(budget[:, None] - before, 0.0, slack)
    p = lower.copy()
    p[:, order] += add
    return p


@njit(cache=True)
def _greedy_fill_jit(order, lower, upper):
    R, J = lower.shape
    p = lower.copy()
    for r in range(R):
        budget = 1.0
        for j in range(J):
            budget -= lower[r, j]
        for k in range(J):
            if budget <= 0.0:
                break
            j = order[k]
            add = upper[r, j] - lower[r, j]
            if add > budget:
                add = budget
            if add > 0.0:
                p[r, j] += add
                budget -= add
    return p


def greedy_fill_numba(order, lower, upper):
    return _greedy_fill_jit(np.ascontiguousarray(order, dtype=np.int64),
                            np.ascontiguousarray(lower), np.ascontiguousarray(upper))


greedy_fill = greedy_fill_numba if HAS_NUMBA else greedy_fill_numpy



def interval_sums_numpy(lo, hi, Z, W, ls, sf2):
    """Interval enclosures of ``sum_j W_j k(z, Z_j)`` and of its gradient over boxes.

    Returns ``(mean_lo, mean_hi)`` of shape (C, n) and ``(grad_lo, grad_hi)``
    of shape (C, n, D). Per training point the kernel range comes from the
    nearest and farthest box points; the gradient factor
    ``-k (z_d - Z_jd) / ls_d^2`` is enclosed by products of those ranges.
    """
    lo_w, hi_w, Zw = lo / ls, hi / ls, Z / ls
    near = np.clip(Zw[None, :, :], lo_w[:, None, :], hi_w[:, None, :]) - Zw[None, :, :]
    far = np.maximum(np.abs(lo_w[:, None, :] - Zw[None, :, :]), np.abs(hi_w[:, None, :] - Zw[None, :, :]))
    kmax = sf2 * np.exp(-0.5 * (near * near).sum(-1))
    kmin = sf2 * np.exp(-0.5 * (far * far).sum(-1))
    Wp, Wn = np.clip(W, 0, None), np.clip(W, None, 0)
    mean_lo = kmin @ Wp + kmax @ Wn
    mean_hi = kmax @ Wp + kmin @ Wn
    t_lo = lo[:, None, :] - Z[None, :, :]
    t_hi = hi[:, None, :] - Z[None, :, :]
    p_lo = np.minimum(kmin[:, :, None] * t_lo, kmax[:, :, None] * t_lo)
    p_hi = np.maximum(kmin[:, :, None] * t_hi, kmax[:, :, None] * t_hi)
    d_lo, d_hi = -p_hi / ls**2, -p_lo / ls**2
    g_lo = np.einsum("cmd,mi->cid", d_lo, Wp) + np.einsum("cmd,mi->cid", d_hi, Wn)
    g_hi = np.einsum("cmd,mi->cid", d_hi, Wp) + np.einsum("cmd,mi->cid", d_lo, Wn)
    return mean_lo, mean_hi, g_lo, g_hi


@njit(cache=True)
def _interval_sums_jit(lo, hi, Z, W, ls, sf2):
    C, D = lo.shape
    M, n = W.shape
    mean_lo = np.zeros((C, n))
    mean_hi = np.zeros((C, n))
    g_lo = np.zeros((C, n, D))
    g_hi = np.zeros((C, n, D))
    inv2 = 1.0 / (ls * ls)
    for c in range(C):
        for j in range(M):
            s_near = 0.0
            s_far = 0.0
            for d in range(D):
                z = Z[j, d]
                a = lo[c, d]
                b = hi[c, d]
                nz = min(max(z, a), b) - z
                fz = max(abs(a - z), abs(b - z))
                s_near += nz * nz * inv2[d]
                s_far += fz * fz * inv2[d]
            kmax = sf2 * np.exp(-0.5 * s_near)
            kmin = sf2 * np.exp(-0.5 * s_far)
            for i in range(n):
                w = W[j, i]
                if w >= 0.0:
                    mean_lo[c, i] += w * kmin
                    mean_hi[c, i] += w * kmax
                else:
                    mean_lo[c, i] += w * kmax
                    mean_hi[c, i] += w * kmin
            for d in range(D):
                tl = lo[c, d] - Z[j, d]
                th = hi[c, d] - Z[j, d]
                plo = min(kmin * tl, kmax * tl)
                phi = max(kmin * th, kmax * th)
                dlo = -phi * inv2[d]
                dhi = -plo * inv2[d]
                for i in range(n):
                    w = W[j, i]
                    if w >= 0.0:
                        g_lo[c, i, d] += w * dlo
                        g_hi[c, i, d] += w * dhi
                    else:
                        g_lo[c, i, d] += w * dhi
                        g_hi[c, i, d] += w * dlo
    return mean_lo, mean_hi, g_lo, g_hi


def interval_sums_numba(lo, hi, Z, W, ls, sf2):
    c = np.ascontiguousarray
    return _interval_sums_jit(c(lo, dtype=np.float64), c(hi, dtype=np.float64), c(Z, dtype=np.float64),
                              c(W, dtype=np.float64), c(ls, dtype=np.float64), float(sf2))


interval_sums = interval_sums_numba if HAS_NUMBA else interval_sums_numpy
