"""Piecewise-constant stochastic barrier synthesis.

The barrier takes value ``b_i`` on state cell ``i`` and 1 outside the safe
set. For every active state-control pair the worst-case expected next
barrier value over the interval polytope must not exceed ``b_i + beta_il``.
The inner maximum is solved greedily; the outer minimization of
``eta + N * beta`` is a cutting-plane LP where each cut is a vertex of some
row's polytope (a witness distribution) found violated at the current ``b``.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .lp import LPInfeasible, solve_lp
from .transitions import TransitionIntervalMatrix

log = logging.getLogger(__name__)

VIOLATION_TOL = 1e-9
MAX_CEGS_ITERATIONS = 200
CANONICAL_SLACK = 1e-9


class SynthesisError(RuntimeError):
    pass


def payoff_order(b) -> np.ndarray:
    """Destination columns by decreasing payoff ``(b, 1)``; ties keep index order."""
    v = np.append(np.asarray(b, dtype=float), 1.0)
    return np.argsort(-v, kind="stable")


def worst_case_rows(b, lower, upper):
    """Inner maximum for many rows at once: ``(values, witnesses)``."""
    b = np.asarray(b, dtype=float)
    lower = np.atleast_2d(lower)
    upper = np.atleast_2d(upper)
    p = _kernels.greedy_fill(payoff_order(b), lower, upper)
    return p[:, :-1] @ b + p[:, -1], p


def worst_case_expectation(b, lower, upper):
    """Maximize ``sum_j b_j p_j + p_unsafe`` over the interval polytope of one row."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if lower.sum() > 1 + 1e-9 or upper.sum() < 1 - 1e-9 or np.any(lower > upper):
        raise ValueError("infeasible interval row: need sum(lower) <= 1 <= sum(upper)")
    vals, p = worst_case_rows(b, lower[None, :], upper[None, :])
    return float(vals[0]), p[0]


@dataclass
class BarrierCertificate:
    b: np.ndarray
    eta: float
    beta: float
    N: int
    beta_matrix: dict  # (i, l) -> beta_il
    lp_objective: float = float("nan")
    iterations: int = 0

    @property
    def objective(self) -> float:
        return self.eta + self.N * self.beta

    @property
    def safety_lower_bound(self) -> float:
        return float(min(1.0, max(0.0, 1.0 - self.objective)))

    def to_dict(self) -> dict:
        return {
            "eta": self.eta, "beta": self.beta, "N": self.N,
            "safety_lower_bound": self.safety_lower_bound,
            "b": np.asarray(self.b).tolist(),
            "beta_matrix": [{"i": i, "l": l, "beta_il": v} for (i, l), v in sorted(self.beta_matrix.items())],
        }

    @classmethod
    def from_dict(cls, d) -> "BarrierCertificate":
        return cls(np.array(d["b"], dtype=float), d["eta"], d["beta"], d["N"],
                   {(e["i"], e["l"]): e["beta_il"] for e in d["beta_matrix"]})

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)


@dataclass
class CounterexamplePool:
    """Witness distributions already used as cuts, keyed by matrix row."""

    cuts: dict = field(default_factory=dict)  # row -> {key: witness}
    _rows: dict = field(default_factory=dict, repr=False)  # row -> list of sparse cut rows

    def add(self, row: int, witness: np.ndarray) -> bool:
        key = np.round(witness, 15).tobytes()
        bucket = self.cuts.setdefault(row, {})
        if key in bucket:
            return False
        bucket[key] = witness.copy()
        self._rows.pop(row, None)
        return True

    def drop(self, row: int) -> None:
        self.cuts.pop(row, None)
        self._rows.pop(row, None)

    def size(self) -> int:
        return sum(len(v) for v in self.cuts.values())

    def cut_rows(self, row: int, state: int, K: int):
        """Sparse form of ``sum_j w_j b_j - b_state - beta <= -w_unsafe`` for each cut of ``row``."""
        cached = self._rows.get(row)
        if cached is None:
            W = np.array(list(self.cuts.get(row, {}).values())).reshape(-1, K + 1)
            coef = W[:, :K].copy()
            coef[:, state] -= 1.0
            coef = np.hstack([coef, np.zeros((len(W), 1)), -np.ones((len(W), 1))])
            r, c = np.nonzero(coef)
            cached = (r, c, coef[r, c], -W[:, K])
            self._rows[row] = cached
        return cached


def _active_rows(active: np.ndarray):
    K, L = active.shape
    pairs = np.argwhere(active)
    return pairs, pairs[:, 0] * L + pairs[:, 1]


def _assemble_lp(K, N, initial, pool, row_state, active_rows, eta_cap=1.0):
    """Variables ``[b_0..b_{K-1}, eta, beta]``."""
    nv = K + 2
    n0 = len(initial)
    ri = [np.repeat(np.arange(n0), 2)]
    ci = [np.ravel([[i, K] for i in initial]).astype(int)]
    data = [np.tile([1.0, -1.0], n0)]
    rhs = [np.zeros(n0)]
    r = n0
    for row in active_rows:
        cr, cc, cv, cb = pool.cut_rows(int(row), int(row_state[row]), K)
        ri.append(cr + r)
        ci.append(cc)
        data.append(cv)
        rhs.append(cb)
        r += cb.size
    A = sp.csr_matrix((np.concatenate(data), (np.concatenate(ri), np.concatenate(ci))), shape=(r, nv))
    c = np.zeros(nv)
    c[K] = 1.0
    c[K + 1] = float(N)
    bounds = [(0.0, 1.0)] * K + [(0.0, eta_cap), (0.0, None)]
    return c, A, np.concatenate(rhs), bounds


def _cegs(K, N, initial, pool, row_state, rows, pairs, lower, upper, eta_cap, budget, backend, max_iterations):
    """Cutting-plane loop. With ``budget`` set, minimize sum(b) subject to eta + N beta <= budget."""
    it = 0
    while True:
        it += 1
        c, A, rhs, bounds = _assemble_lp(K, N, initial, pool, row_state, rows, eta_cap)
        if budget is not None:
            A = sp.vstack([A, sp.csr_matrix(c[None, :])]).tocsr()
            rhs = np.append(rhs, budget)
            c = np.zeros_like(c)
            c[:K] = 1.0
        res = solve_lp(c, A, rhs, bounds=bounds, backend=backend)
        b = np.clip(res.x[:K], 0.0, 1.0)
        beta_lp = max(0.0, float(res.x[K + 1]))
        vals, wit = worst_case_rows(b, lower, upper)
        excess = vals - b[pairs[:, 0]] - beta_lp
        bad = np.flatnonzero(excess > VIOLATION_TOL)
        added = sum(pool.add(int(rows[k]), wit[k]) for k in bad)
        log.debug("cegs iter %d: objective %.6g, %d violated rows, %d new cuts", it, res.objective, bad.size, added)
        if added == 0:
            if bad.size and excess.max() > 1e-6:
                log.warning("LP solution violates existing cuts by %.3g; beta_il absorbs the gap", excess.max())
            return res, b, vals, it
        if it >= max_iterations:
            raise SynthesisError(f"counterexample loop did not converge in {max_iterations} iterations")


def synthesize_barrier(matrix: TransitionIntervalMatrix, initial_cells, N: int, active=None,
                       pool: CounterexamplePool | None = None, backend: str = "highs",
                       max_iterations: int = MAX_CEGS_ITERATIONS, eta_cap: float = 1.0,
                       canonical: bool = True):
    """Counterexample-guided LP synthesis over the active (i, l) pairs.

    ``eta_cap`` bounds ``eta`` from above. Any cap at or above the optimal
    ``eta`` leaves the optimum unchanged; a cap below 1 rules out the trivial
    certificate ``b = 1`` when leakage is large.

    With ``canonical`` set, a second pass picks the componentwise least ``b``
    among optimal certificates so that ``beta_il`` does not depend on which
    LP vertex the solver lands on.

    Returns ``(certificate, pool)``; pass the pool back in to warm-start a
    later call on a smaller active set.
    """
    K, L = matrix.n_states, matrix.n_controls
    if N < 1:
        raise ValueError("horizon N must be >= 1")
    active = np.ones((K, L), dtype=bool) if active is None else np.asarray(active, dtype=bool)
    if active.shape != (K, L):
        raise ValueError(f"active mask must have shape {(K, L)}")
    empty = np.flatnonzero(~active.any(axis=1))
    if empty.size:
        raise ValueError(f"state cells without active controls: {empty.tolist()}")
    initial = sorted(int(i) for i in initial_cells)
    pairs, rows = _active_rows(active)
    row_state = np.repeat(np.arange(K), L)
    lower, upper = matrix.lower[rows], matrix.upper[rows]
    pool = CounterexamplePool() if pool is None else pool

    if pool.size() == 0:
        _, wit = worst_case_rows(np.zeros(K), lower, upper)
        for r, w in zip(rows, wit):
            pool.add(int(r), w)

    res, b, vals, it = _cegs(K, N, initial, pool, row_state, rows, pairs, lower, upper, eta_cap, None,
                             backend, max_iterations)
    if canonical:
        # among optimal certificates, take the least barrier (unique: feasible b's are closed under min)
        # cuts found in this pass can lift the optimum by up to N * VIOLATION_TOL; widen once if needed
        base = res.objective + CANONICAL_SLACK * max(1.0, abs(res.objective))
        for budget in (base, base + N * VIOLATION_TOL):
            try:
                res2, b2, vals2, it2 = _cegs(K, N, initial, pool, row_state, rows, pairs, lower, upper, eta_cap,
                                             budget, backend, max_iterations)
            except LPInfeasible:
                log.debug("canonical pass infeasible at budget %.12g", budget)
                continue
            res, b, vals, it = res2, b2, vals2, it + it2
            break

    beta_il = np.maximum(0.0, vals - b[pairs[:, 0]])
    beta = float(beta_il.max()) if beta_il.size else 0.0
    eta = float(b[initial].max()) if initial else 0.0
    cert = BarrierCertificate(
        b=b, eta=eta, beta=beta, N=int(N),
        beta_matrix={(int(i), int(l)): float(v) for (i, l), v in zip(pairs, beta_il)},
        lp_objective=float(res.x[K] + N * res.x[K + 1]), iterations=it,
    )
    return cert, pool


def verify_certificate(cert: BarrierCertificate, matrix: TransitionIntervalMatrix, initial_cells,
                       tol: float = 1e-9) -> list:
    """Re-check the barrier conditions with independently recomputed inner maxima.

    Returns a list of violation messages (empty when the certificate holds).
    """
    problems = []
    b = np.asarray(cert.b)
    if np.any(b < -tol) or np.any(b > 1 + tol):
        problems.append("barrier values outside [0, 1]")
    for i in initial_cells:
        if b[i] > cert.eta + tol:
            problems.append(f"initial cell {i}: b={b[i]} > eta={cert.eta}")
    for (i, l), beta_il in cert.beta_matrix.items():
        lo, hi = matrix.row(i, l)
        val = _lp_inner_max(b, lo, hi)
        if val > b[i] + beta_il + tol:
            problems.append(f"pair ({i},{l}): E={val} > b_i + beta_il={b[i] + beta_il}")
        if beta_il < -tol or beta_il > cert.beta + tol:
            problems.append(f"pair ({i},{l}): beta_il={beta_il} outside [0, beta={cert.beta}]")
    return problems


def _lp_inner_max(b, lower, upper) -> float:
    """Inner maximum by a generic LP, independent of the greedy routine."""
    v = np.append(b, 1.0)
    res = solve_lp(-v, A_eq=np.ones((1, v.size)), b_eq=[1.0], bounds=list(zip(lower, upper)), backend="highs")
    return float(v @ res.x)
