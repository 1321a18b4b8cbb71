"""Worst-first pruning of state-control pairs until the safety threshold holds."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .barrier import VIOLATION_TOL, BarrierCertificate, synthesize_barrier
from .geometry import StateControlPartition
from .transitions import TransitionIntervalMatrix

log = logging.getLogger(__name__)

TIE_TOL = 1e-6
# b is only pinned down to the cutting-plane tolerance, so closer beta_il are ties
TIE_ABS = VIOLATION_TOL


@dataclass
class Removal:
    iteration: int
    i: int
    l: int
    beta_il: float
    objective_before: float


@dataclass
class PermissibleStrategySet:
    retained: dict  # i -> sorted list of l
    certificate: BarrierCertificate
    p: float
    removal_log: list = field(default_factory=list)
    objective_trace: list = field(default_factory=list)
    n_controls: int = 0

    @property
    def active(self) -> np.ndarray:
        K = len(self.retained)
        mask = np.zeros((K, self.n_controls), dtype=bool)
        for i, ls in self.retained.items():
            mask[i, ls] = True
        return mask

    @property
    def retained_fraction(self) -> float:
        return float(self.active.mean())

    def admissible_pairs(self) -> dict:
        """Per-pair admissibility test against the final certificate."""
        c = self.certificate
        return {k: admissible(v, c.eta, self.p, c.N) for k, v in c.beta_matrix.items()}

    def to_dict(self) -> dict:
        adm = self.admissible_pairs()
        return {
            "p": self.p, "N": self.certificate.N,
            "retained": {str(i): ls for i, ls in sorted(self.retained.items())},
            "retained_fraction": self.retained_fraction,
            "removal_log": [vars(r) for r in self.removal_log],
            "objective_trace": self.objective_trace,
            "admissible": [{"i": i, "l": l, "admissible": ok} for (i, l), ok in sorted(adm.items())],
            "certificate": self.certificate.to_dict(),
        }

    @classmethod
    def from_dict(cls, d) -> "PermissibleStrategySet":
        cert = BarrierCertificate.from_dict(d["certificate"])
        retained = {int(i): list(ls) for i, ls in d["retained"].items()}
        n_controls = 1 + max((max(ls) for ls in retained.values() if ls), default=0)
        n_controls = max(n_controls, d.get("n_controls", 0))
        return cls(retained, cert, d["p"], [Removal(**r) for r in d.get("removal_log", [])],
                   d.get("objective_trace", []), n_controls)

    def save(self, path) -> None:
        doc = self.to_dict()
        doc["n_controls"] = self.n_controls
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=1)


@dataclass
class Infeasible:
    """Pruning emptied the control set of ``cell``."""

    cell: int
    removal_log: list
    objective_trace: list
    certificate: BarrierCertificate

    @property
    def retained_fraction(self) -> float:
        return 0.0

    def to_dict(self) -> dict:
        return {"infeasible": True, "cell": self.cell, "removal_log": [vars(r) for r in self.removal_log],
                "objective_trace": self.objective_trace, "certificate": self.certificate.to_dict()}


def admissible(beta_il: float, eta: float, p: float, N: int) -> bool:
    """True iff ``beta_il <= (1 - eta - p) / N``; the boundary counts, up to rounding."""
    t = (1.0 - eta - p) / N
    return beta_il <= t or math.isclose(beta_il, t, rel_tol=1e-12, abs_tol=0.0)


def worst_pair(cert: BarrierCertificate, tie_tol: float = TIE_TOL):
    """Pair with the largest ``beta_il``.

    Values within ``max(tie_tol * beta, TIE_ABS)`` of the maximum count as
    tied; ties go to the cell with the larger barrier value, then to the lowest
    ``(i, l)``.
    """
    top = cert.beta
    cut = top - max(tie_tol * top, TIE_ABS)
    tied = [k for k, v in cert.beta_matrix.items() if v >= cut]
    return min(tied, key=lambda k: (-cert.b[k[0]], k[0], k[1]))


def _restrict(cert: BarrierCertificate, active: np.ndarray) -> BarrierCertificate:
    """The same barrier with ``beta_il`` of removed pairs dropped."""
    kept = {k: v for k, v in cert.beta_matrix.items() if active[k]}
    beta = max(kept.values(), default=0.0)
    return BarrierCertificate(cert.b, cert.eta, beta, cert.N, kept, cert.lp_objective, cert.iterations)


def synthesize_permissible_set(matrix: TransitionIntervalMatrix, initial_cells, N: int, p: float,
                               backend: str = "highs", active=None):
    """Remove the pair with the largest ``beta_il`` until ``1 - (eta + N beta) >= p``.

    Returns a :class:`PermissibleStrategySet`, or :class:`Infeasible` when a
    state cell loses its last control cell.
    """
    if not 0 < p < 1:
        raise ValueError("p must lie in (0,1)")
    K, L = matrix.n_states, matrix.n_controls
    active = np.ones((K, L), dtype=bool) if active is None else np.array(active, dtype=bool)
    # capping eta at 1 - p cannot change whether the guard passes, but keeps
    # beta_il informative while the threshold is still out of reach
    cap = 1.0 - p
    cert, pool = synthesize_barrier(matrix, initial_cells, N, active=active, backend=backend, eta_cap=cap)
    trace = [cert.objective]
    removals = []
    it = 0
    while 1.0 - cert.objective < p:
        it += 1
        i, l = worst_pair(cert)
        worst = cert.beta_matrix[(i, l)]
        removals.append(Removal(it, i, l, worst, cert.objective))
        active[i, l] = False
        pool.drop(matrix.row_index(i, l))
        log.info("iteration %d: removed (%d, %d) beta_il=%.4g, bound was %.6g", it, i, l, worst, 1 - cert.objective)
        if not active[i].any():
            return Infeasible(i, removals, trace, cert)
        new, pool = synthesize_barrier(matrix, initial_cells, N, active=active, pool=pool, backend=backend,
                                       eta_cap=cap)
        # the previous certificate still holds on the smaller active set; keep it
        # when the fresh one lands above it within the canonical-pass slack
        old = _restrict(cert, active)
        cert = old if old.objective < new.objective else new
        trace.append(cert.objective)
    retained = {i: np.flatnonzero(active[i]).tolist() for i in range(K)}
    return PermissibleStrategySet(retained, cert, p, removals, trace, L)


def control_invariant_set(matrix: TransitionIntervalMatrix, N: int, p: float, backend: str = "highs") -> dict:
    """Run the pruning loop once per state cell with that cell as the initial set."""
    out = {}
    for i in range(matrix.n_states):
        out[i] = synthesize_permissible_set(matrix, [i], N, p, backend=backend)
    return out


def strategy_sample(strategy: PermissibleStrategySet, partition: StateControlPartition, x, rng) -> np.ndarray:
    """Uniform retained control cell for the cell of ``x``, then a uniform control inside it."""
    i = partition.locate_cell(x)
    if i is None:
        raise ValueError(f"state {np.asarray(x).tolist()} is outside the safe set")
    ls = strategy.retained[i]
    l = ls[int(rng.integers(len(ls)))]
    cell = partition.controls
    return rng.uniform(cell.lows[l], cell.highs[l])
