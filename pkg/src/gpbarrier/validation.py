"""Monte Carlo and adversarial rollouts on the true system."""
from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Box, StateControlPartition
from .systems import NoiseModel, SystemModel

ADVERSARY_CANDIDATES = 25


@dataclass
class Trajectory:
    """States ``x_0..x_T`` and the controls applied between them."""

    states: np.ndarray  # (T + 1, n)
    controls: np.ndarray  # (T, m)
    exited: bool

    @property
    def steps(self) -> int:
        return self.controls.shape[0]


@dataclass
class ValidationReport:
    trials: int
    N: int
    violations: int
    certified_lower_bound: float
    adversarial_full_set_exited: bool | None = None
    adversarial_permissible_exited: bool | None = None
    trajectories: list = field(default_factory=list, repr=False)

    @property
    def empirical_safety(self) -> float:
        return 1.0 - self.violations / self.trials

    @property
    def violation_limit(self) -> float:
        """Largest violation frequency compatible with the certificate (three standard errors)."""
        q = 1.0 - self.certified_lower_bound
        return q + 3.0 * math.sqrt(max(q * (1.0 - q), 0.0) / self.trials)

    @property
    def consistent(self) -> bool:
        return self.violations / self.trials <= self.violation_limit

    def to_dict(self) -> dict:
        return {
            "trials": self.trials, "N": self.N, "violations": self.violations,
            "empirical_safety": self.empirical_safety,
            "certified_lower_bound": self.certified_lower_bound,
            "violation_limit": self.violation_limit, "consistent": self.consistent,
            "adversarial_full_set_exited": self.adversarial_full_set_exited,
            "adversarial_permissible_exited": self.adversarial_permissible_exited,
        }

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)


def _require_known(system: SystemModel):
    if not system.known:
        raise ValueError("validation needs known dynamics; the system is data-only")


def _retained_table(retained: dict, K: int):
    """Padded ``(K, L)`` table of retained control cells and per-cell counts."""
    counts = np.array([len(retained.get(i, [])) for i in range(K)])
    table = np.zeros((K, max(1, counts.max(initial=0))), dtype=int)
    for i in range(K):
        ls = retained.get(i, [])
        table[i, :len(ls)] = ls
    return table, counts


def monte_carlo(system: SystemModel, noise: NoiseModel, strategy, partition: StateControlPartition,
                initial_set: Box, N: int, trials: int, seed: int = 0, keep: int = 0) -> ValidationReport:
    """Roll out ``trials`` random permissible strategies for ``N`` steps.

    Trial ``t`` draws from its own generator seeded with ``seed + t``: a
    uniform start in ``initial_set``, then per step a retained control cell,
    a uniform control inside it, and the noise. Trials therefore agree
    whether run alone or together. A trial stops at its first exit from the
    safe set. The first ``keep`` trajectories are stored on the report.
    """
    _require_known(system)
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if N < 1:
        raise ValueError("horizon N must be >= 1")
    n, m = system.state_dim, system.control_dim
    K = partition.n_states
    table, counts = _retained_table(strategy.retained, K)
    c_lo, c_hi = partition.controls.lows, partition.controls.highs
    safe = partition.safe_set

    x = np.empty((trials, n))
    pick = np.empty((trials, N))
    unif = np.empty((trials, N, m))
    w = np.empty((trials, N, n))
    for t in range(trials):
        rng = np.random.default_rng(seed + t)
        x[t] = rng.uniform(initial_set.lower, initial_set.upper)
        pick[t] = rng.random(N)
        unif[t] = rng.random((N, m))
        w[t] = noise.sample(rng, N)

    alive = np.ones(trials, dtype=bool)
    states = np.full((trials, N + 1, n), np.nan)
    controls = np.full((trials, N, m), np.nan)
    states[:, 0] = x
    for k in range(N):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        cells = partition.states.locate_many(x[idx])
        if np.any(cells < 0):
            raise RuntimeError("live trajectory outside the partition")
        cnt = counts[cells]
        if np.any(cnt == 0):
            raise ValueError("strategy has no retained control for a visited cell")
        slot = np.minimum((pick[idx, k] * cnt).astype(int), cnt - 1)
        ls = table[cells, slot]
        u = c_lo[ls] + unif[idx, k] * (c_hi[ls] - c_lo[ls])
        x[idx] = system.f(x[idx], u) + w[idx, k]
        controls[idx, k] = u
        states[idx, k + 1] = x[idx]
        inside = np.all((x[idx] >= safe.lower) & (x[idx] <= safe.upper), axis=1)
        alive[idx[~inside]] = False

    bound = strategy.certificate.safety_lower_bound
    trajs = []
    for t in range(min(keep, trials)):
        T = int(np.sum(~np.isnan(controls[t, :, 0])))
        trajs.append(Trajectory(states[t, :T + 1].copy(), controls[t, :T].copy(), not alive[t]))
    return ValidationReport(trials, N, int(np.sum(~alive)), bound, trajectories=trajs)


def _candidate_controls(partition: StateControlPartition, cells, per_cell: int = ADVERSARY_CANDIDATES) -> np.ndarray:
    """Grid of about ``per_cell`` controls (faces included) in each listed control cell."""
    m = partition.controls.dim
    k = per_cell if m == 1 else max(2, round(per_cell ** (1.0 / m)))
    frac = np.linspace(0.0, 1.0, k)
    grid = np.array(list(itertools.product(frac, repeat=m)))
    lo, hi = partition.controls.lows[cells], partition.controls.highs[cells]
    return (lo[:, None, :] + grid[None, :, :] * (hi - lo)[:, None, :]).reshape(-1, m)


def boundary_margin(points, box: Box) -> np.ndarray:
    """Signed distance to the nearest face of ``box``; negative outside."""
    p = np.atleast_2d(points)
    return np.minimum(p - box.lower, box.upper - p).min(axis=1)


def adversarial_rollout(system: SystemModel, noise: NoiseModel, partition: StateControlPartition, x0, N: int,
                        seed: int = 0, strategy=None) -> Trajectory:
    """Greedy boundary-seeking rollout.

    Each step scores candidate controls from the allowed control cells (every
    cell, or the retained cells of the current state cell when ``strategy``
    is given) by the margin of the noise-free successor to the safe-set
    boundary, applies the smallest-margin control plus noise, and stops once
    the state leaves the safe set.
    """
    _require_known(system)
    rng = np.random.default_rng(seed)
    safe = partition.safe_set
    x = np.asarray(x0, dtype=float).copy()
    states, controls = [x.copy()], []
    all_cells = np.arange(partition.n_controls)
    for _ in range(N):
        i = partition.locate_cell(x)
        if i is None:
            break
        cells = all_cells if strategy is None else np.asarray(strategy.retained[i], dtype=int)
        cand = _candidate_controls(partition, cells)
        succ = system.f(np.broadcast_to(x, (len(cand), x.size)), cand)
        u = cand[int(np.argmin(boundary_margin(succ, safe)))]
        x = system.f(x, u) + noise.sample(rng)
        states.append(x.copy())
        controls.append(u)
    exited = not safe.contains(states[-1])
    m = system.control_dim
    return Trajectory(np.array(states), np.array(controls).reshape(-1, m), exited)


def adversarial_contrast(system, noise, partition, strategy, x0, N: int, seed: int = 0):
    """Full-set and permissible-set adversarial rollouts from the same start."""
    full = adversarial_rollout(system, noise, partition, x0, N, seed)
    perm = adversarial_rollout(system, noise, partition, x0, N, seed, strategy=strategy)
    return full, perm


def write_trajectories(path, trajectories, safe_set: Box) -> None:
    """CSV with columns ``trial, step, x1..xn, u1..um, in_safe_set``.

    The control on a row is the one applied at that step; it is empty on the
    final row of each trajectory.
    """
    trajectories = list(trajectories)
    if not trajectories:
        n, m = safe_set.dim, 0
    else:
        n, m = trajectories[0].states.shape[1], trajectories[0].controls.shape[1]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["trial", "step"] + [f"x{d + 1}" for d in range(n)] + [f"u{d + 1}" for d in range(m)]
                    + ["in_safe_set"])
        for t, tr in enumerate(trajectories):
            for k, x in enumerate(tr.states):
                u = tr.controls[k] if k < tr.steps else [None] * m
                row = [t, k] + [repr(float(v)) for v in x]
                row += ["" if v is None else repr(float(v)) for v in u]
                row.append(int(safe_set.contains(x)))
                wr.writerow(row)
