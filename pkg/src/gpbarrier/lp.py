"""Linear programs: ``min c.x  s.t.  A_ub x <= b_ub, A_eq x = b_eq, lo <= x <= hi``.

Two backends share one entry point. ``"simplex"`` is a dense two-phase
tableau simplex with Bland's rule, fine for a few hundred variables;
``"highs"`` hands the problem to scipy's HiGHS and is the default for the
barrier programs, whose cut matrices are large and sparse.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

HIGHS_TOL = 1e-10
PIVOT_TOL = 1e-9


class LPError(RuntimeError):
    pass


class LPInfeasible(LPError):
    pass


class LPUnbounded(LPError):
    pass


@dataclass
class LPResult:
    x: np.ndarray
    objective: float
    iterations: int = 0


def solve_lp(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, bounds=None, backend: str = "highs") -> LPResult:
    c = np.asarray(c, dtype=float)
    if bounds is None:
        bounds = [(0.0, None)] * c.size
    if backend == "highs":
        return _solve_highs(c, A_ub, b_ub, A_eq, b_eq, bounds)
    if backend == "simplex":
        dense = lambda A: None if A is None else (A.toarray() if sp.issparse(A) else np.asarray(A, float))
        return simplex(c, dense(A_ub), b_ub, dense(A_eq), b_eq, bounds)
    raise ValueError(f"unknown LP backend {backend!r}")


# tried in order; the strict dual simplex occasionally stalls on badly scaled
# cut matrices, in which case the interior-point method usually succeeds
HIGHS_ATTEMPTS = (("highs-ds", HIGHS_TOL), ("highs-ipm", HIGHS_TOL), ("highs-ds", 1e-9), ("highs-ipm", 1e-8))


def _solve_highs(c, A_ub, b_ub, A_eq, b_eq, bounds) -> LPResult:
    messages = []
    for method, tol in HIGHS_ATTEMPTS:
        res = linprog(
            c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method=method,
            options={"primal_feasibility_tolerance": tol, "dual_feasibility_tolerance": tol, "presolve": True},
        )
        if res.status == 0:
            return LPResult(np.asarray(res.x), float(res.fun), int(getattr(res, "nit", 0)))
        if res.status == 2:
            raise LPInfeasible(res.message)
        if res.status == 3:
            raise LPUnbounded(res.message)
        messages.append(f"{method}@{tol:g}: {res.message}")
    raise LPError("; ".join(messages))


# ---------------------------------------------------------------------------
# dense tableau simplex

def _pivot(T, row, col):
    T[row] /= T[row, col]
    piv = T[row]
    col_vals = T[:, col].copy()
    col_vals[row] = 0.0
    T -= np.outer(col_vals, piv)


REFACTOR_EVERY = 50


def _refactor(T, basis, data, cost):
    """Rebuild the tableau from the original rows ``data = [A | rhs]`` for ``basis``."""
    m = len(basis)
    try:
        X = np.linalg.solve(data[:, basis], data)
    except np.linalg.LinAlgError:
        return
    T[:m] = X
    T[:m, -1] = np.maximum(T[:m, -1], 0.0)
    cb = cost[basis]
    T[-1, :-1] = cost - cb @ X[:, :-1]
    T[-1, -1] = -cb @ T[:m, -1]


def _run(T, basis, tol, max_iter, data, cost, bounded=False):
    """Minimize ``cost`` over the tableau ``T`` whose rows came from ``data``.

    Column entries below ``PIVOT_TOL`` are never pivoted on; tiny pivots
    amplify rounding errors across the whole tableau. The tableau is rebuilt
    from ``data`` periodically and before optimality is declared, so rounding
    drift cannot stall Bland's rule. With ``bounded`` (phase one, objective
    >= 0) a column that looks unbounded is rounding noise and is skipped.
    """
    n_cols = cost.size
    it = 0
    fresh = False
    while True:
        if bounded and -T[-1, -1] <= tol:
            return it
        reduced = T[-1, :n_cols]
        col = None
        for cand in np.flatnonzero(reduced < -tol):  # Bland: lowest index first
            column = T[:-1, cand]
            if np.any(column > PIVOT_TOL):
                col = int(cand)
                break
            if not bounded and not np.any(column > tol):
                raise LPUnbounded("objective unbounded below")
            # only unusably small pivots in this column; try the next one
        if col is None:
            if fresh:
                return it
            _refactor(T, basis, data, cost)
            fresh = True
            continue
        pos = column > PIVOT_TOL
        ratios = np.full(column.shape, np.inf)
        ratios[pos] = np.maximum(T[:-1, -1][pos], 0.0) / column[pos]
        best = ratios.min()
        cands = np.flatnonzero(ratios <= best + tol * max(1.0, abs(best)))
        row = int(min(cands, key=lambda r: basis[r]))  # Bland: lowest basic index
        _pivot(T, row, col)
        basis[row] = col
        it += 1
        fresh = False
        if it % REFACTOR_EVERY == 0:
            _refactor(T, basis, data, cost)
            fresh = True
        if it > max_iter:
            raise LPError("simplex iteration limit reached")


def simplex(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, bounds=None, tol: float = 1e-11,
            max_iter: int = 50_000) -> LPResult:
    """Two-phase dense simplex with Bland's anti-cycling rule."""
    c = np.asarray(c, dtype=float)
    n = c.size
    bounds = [(0.0, None)] * n if bounds is None else list(bounds)
    A_ub = np.zeros((0, n)) if A_ub is None else np.atleast_2d(np.asarray(A_ub, float))
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, float).ravel()
    A_eq = np.zeros((0, n)) if A_eq is None else np.atleast_2d(np.asarray(A_eq, float))
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, float).ravel()

    # x = shift + S y with y >= 0; free variables take two columns
    shift = np.zeros(n)
    cols = []  # (original index, sign)
    upper_rows = []
    for k, (lo, hi) in enumerate(bounds):
        lo = -np.inf if lo is None else float(lo)
        hi = np.inf if hi is None else float(hi)
        if lo > hi:
            raise LPInfeasible(f"variable {k} has empty bounds")
        if np.isfinite(lo):
            shift[k] = lo
            cols.append((k, 1.0))
            if np.isfinite(hi):
                upper_rows.append((len(cols) - 1, hi - lo))
        elif np.isfinite(hi):
            shift[k] = hi
            cols.append((k, -1.0))
        else:
            cols.append((k, 1.0))
            cols.append((k, -1.0))
    S = np.zeros((n, len(cols)))
    for j, (k, sgn) in enumerate(cols):
        S[k, j] = sgn
    ny = len(cols)

    rows_ub = A_ub @ S
    rhs_ub = b_ub - A_ub @ shift
    if upper_rows:
        extra = np.zeros((len(upper_rows), ny))
        for r, (j, cap) in enumerate(upper_rows):
            extra[r, j] = 1.0
        rows_ub = np.vstack([rows_ub, extra])
        rhs_ub = np.concatenate([rhs_ub, [cap for _, cap in upper_rows]])
    rows_eq = A_eq @ S
    rhs_eq = b_eq - A_eq @ shift

    m_ub, m_eq = rows_ub.shape[0], rows_eq.shape[0]
    m = m_ub + m_eq
    n_slack = m_ub
    A = np.zeros((m, ny + n_slack))
    A[:m_ub, :ny] = rows_ub
    A[:m_ub, ny:] = np.eye(m_ub)
    A[m_ub:, :ny] = rows_eq
    rhs = np.concatenate([rhs_ub, rhs_eq])
    neg = rhs < 0
    A[neg] *= -1
    rhs[neg] *= -1

    n_struct = ny + n_slack
    T = np.zeros((m + 1, n_struct + m + 1))
    T[:m, :n_struct] = A
    T[:m, n_struct:n_struct + m] = np.eye(m)
    T[:m, -1] = rhs
    basis = list(range(n_struct, n_struct + m))
    data1 = T[:m].copy()
    # phase 1: minimize the sum of artificials
    cost1 = np.concatenate([np.zeros(n_struct), np.ones(m)])
    T[-1, :] = -T[:m, :].sum(axis=0)
    T[-1, n_struct:n_struct + m] = 0.0
    it1 = _run(T, basis, tol, max_iter, data1, cost1, bounded=True)
    if -T[-1, -1] > 1e-8 * max(1.0, np.abs(rhs).max(initial=0.0)):
        raise LPInfeasible("no feasible point")
    # drive remaining artificials out of the basis
    for r in range(m):
        if basis[r] >= n_struct:
            mag = np.abs(T[r, :n_struct])
            j = int(np.argmax(mag))
            if mag[j] > PIVOT_TOL:
                _pivot(T, r, j)
                basis[r] = j
    keep = [r for r in range(m) if basis[r] < n_struct]
    T = np.vstack([T[keep][:, list(range(n_struct)) + [T.shape[1] - 1]], np.zeros((1, n_struct + 1))])
    basis = [basis[r] for r in keep]
    # phase 2
    cost = np.concatenate([S.T @ c, np.zeros(n_slack)])
    T[-1, :n_struct] = cost
    for r, bcol in enumerate(basis):
        if T[-1, bcol] != 0.0:
            T[-1] -= T[-1, bcol] * T[r]
    data2 = data1[keep][:, list(range(n_struct)) + [data1.shape[1] - 1]]
    it2 = _run(T, basis, tol, max_iter, data2, cost)
    y = np.zeros(n_struct)
    for r, bcol in enumerate(basis):
        y[bcol] = T[r, -1]
    x = shift + S @ y[:ny]
    return LPResult(x, float(c @ x), it1 + it2)
