"""Interval bounds on the one-step transition kernel between grid cells.

Every row corresponds to a state-control cell ``Z_il = X_i x U_l`` and holds
``K + 1`` probability intervals: one per destination state cell and a final
column for leaving the safe set.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .geometry import Box, StateControlPartition
from .systems import NoiseModel, SystemModel

log = logging.getLogger(__name__)

UNSAFE = -1
FEASIBILITY_TOL = 1e-9


class SoundnessError(RuntimeError):
    """Lower bounds of a row sum past one; indicates a bug, not bad data."""


@dataclass(frozen=True)
class ImageBounds:
    """Per-row enclosure of the learned mean plus the learning-error radius."""

    mean_lower: np.ndarray  # (R, n)
    mean_upper: np.ndarray  # (R, n)
    eps: np.ndarray  # (R, n)
    delta: float = 0.0

    def __len__(self):
        return self.mean_lower.shape[0]


def image_bounds(model, lower, upper, error_config=None, splits=1) -> ImageBounds:
    """Mean enclosure and error radius over rows of joint (x, u) boxes.

    ``model`` is either a known :class:`SystemModel` (exact image, no learning
    error) or a fitted GP; ``splits`` refines the GP enclosures.
    """
    lo = np.atleast_2d(np.asarray(lower, dtype=float))
    hi = np.atleast_2d(np.asarray(upper, dtype=float))
    if isinstance(model, SystemModel):
        mlo, mhi = model.image_bounds(lo, hi)
        return ImageBounds(mlo, mhi, np.zeros_like(mlo), 0.0)
    mlo, mhi, sd_hi = model.region_bounds(lo, hi, splits)
    if error_config is None:
        return ImageBounds(mlo, mhi, np.zeros_like(mlo), 0.0)
    return ImageBounds(mlo, mhi, error_config.alpha(model)[None, :] * sd_hi, error_config.delta)


def post_image(mean_lower, mean_upper, uncertainty: Box) -> Box:
    """Minkowski sum of the mean enclosure and an uncertainty box."""
    return Box(np.asarray(mean_lower, float) + uncertainty.lower, np.asarray(mean_upper, float) + uncertainty.upper)


def _gauss_mass(a, b):
    """P(a <= Z <= b) for standard normal Z, accurate in both tails; 0 if a >= b."""
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    right = a > 0
    m = np.where(right, ndtr(-a) - ndtr(-b), ndtr(b) - ndtr(a))
    return np.where(a < b, np.clip(m, 0.0, 1.0), 0.0)


def _gauss_outside(a, b):
    """P(Z < a or Z > b); 1 if a >= b."""
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    out = ndtr(a) + ndtr(-b)
    return np.where(a < b, np.clip(out, 0.0, 1.0), 1.0)


def _shrink_grow(img: ImageBounds, sigma, t_lo, t_hi):
    """Standardized limits for the all-inside (lower) and any-overlap (upper) noise zones.

    Shapes broadcast as rows (R, 1, n) against targets (1, J, n).
    """
    mlo = img.mean_lower[:, None, :]
    mhi = img.mean_upper[:, None, :]
    e = img.eps[:, None, :]
    s = np.asarray(sigma, dtype=float)
    inner = ((t_lo + e - mlo) / s, (t_hi - e - mhi) / s)
    outer = ((t_lo - e - mhi) / s, (t_hi + e - mlo) / s)
    return inner, outer


def target_intervals(img: ImageBounds, noise: NoiseModel, t_lo, t_hi):
    """Probability intervals for reaching each target box from each row.

    Returns ``(lower, upper)`` of shape (R, J).
    """
    t_lo = np.atleast_2d(np.asarray(t_lo, dtype=float))[None, :, :]
    t_hi = np.atleast_2d(np.asarray(t_hi, dtype=float))[None, :, :]
    (ia, ib), (oa, ob) = _shrink_grow(img, noise.sigma, t_lo, t_hi)
    d = img.delta
    lower = (1.0 - d) * np.prod(_gauss_mass(ia, ib), axis=2)
    upper = np.minimum(1.0, np.prod(_gauss_mass(oa, ob), axis=2) + d)
    return lower, np.maximum(upper, lower)


def exit_intervals(img: ImageBounds, noise: NoiseModel, safe_set: Box):
    """Probability interval for leaving ``safe_set``, computed from tail masses.

    Complements are formed with log1p/expm1 so tiny exit probabilities keep
    their relative precision.
    """
    (ia, ib), (oa, ob) = _shrink_grow(img, noise.sigma, safe_set.lower[None, None, :], safe_set.upper[None, None, :])
    d = img.delta
    with np.errstate(divide="ignore"):
        # 1 - P(all-inside zone), i.e. exit upper bound before delta
        miss_inner = -np.expm1(np.sum(np.log1p(-_gauss_outside(ia, ib)), axis=2))[:, 0]
        miss_outer = -np.expm1(np.sum(np.log1p(-_gauss_outside(oa, ob)), axis=2))[:, 0]
    hit_lower = 1.0 - miss_inner
    upper = np.clip(miss_inner + d * hit_lower, 0.0, 1.0)
    lower = np.clip(miss_outer - d, 0.0, 1.0)
    return lower, np.maximum(upper, lower)


def transition_interval(model, noise: NoiseModel, cell: Box, target: Box, error_config=None, splits=1):
    img = image_bounds(model, cell.lower, cell.upper, error_config, splits)
    lo, hi = target_intervals(img, noise, target.lower, target.upper)
    return float(lo[0, 0]), float(hi[0, 0])


def unsafe_interval(model, noise: NoiseModel, cell: Box, safe_set: Box, error_config=None, splits=1):
    img = image_bounds(model, cell.lower, cell.upper, error_config, splits)
    lo, hi = exit_intervals(img, noise, safe_set)
    return float(lo[0]), float(hi[0])


@dataclass(frozen=True, eq=False)
class TransitionIntervalMatrix:
    """Rows indexed by ``i * L + l``; last column is the unsafe destination."""

    lower: np.ndarray
    upper: np.ndarray
    n_states: int
    n_controls: int

    def __post_init__(self):
        object.__setattr__(self, "lower", np.asarray(self.lower, dtype=float))
        object.__setattr__(self, "upper", np.asarray(self.upper, dtype=float))
        shape = (self.n_states * self.n_controls, self.n_states + 1)
        if self.lower.shape != shape or self.upper.shape != shape:
            raise ValueError(f"interval arrays must have shape {shape}")

    def row_index(self, i: int, l: int) -> int:
        return i * self.n_controls + l

    def row(self, i: int, l: int):
        r = self.row_index(i, l)
        return self.lower[r], self.upper[r]

    def check(self, tol: float = FEASIBILITY_TOL) -> None:
        if np.any(self.lower < 0) or np.any(self.upper > 1) or np.any(self.lower > self.upper):
            raise SoundnessError("interval entries outside 0 <= lower <= upper <= 1")
        if np.any(self.lower.sum(axis=1) > 1 + tol) or np.any(self.upper.sum(axis=1) < 1 - tol):
            raise SoundnessError("row violates sum(lower) <= 1 <= sum(upper)")

    def to_json(self, path=None, threshold: float = 0.0):
        """Sparse JSON rows ``{i, l, lower, upper, dest}``; entries with upper <= threshold are dropped."""
        rows = []
        K, L = self.n_states, self.n_controls
        for i in range(K):
            for l in range(L):
                lo, hi = self.row(i, l)
                keep = np.flatnonzero(hi > threshold)
                rows.append({
                    "i": i, "l": l,
                    "dest": [int(j) if j < K else UNSAFE for j in keep],
                    "lower": lo[keep].tolist(), "upper": hi[keep].tolist(),
                })
        doc = {"n_states": K, "n_controls": L, "threshold": threshold, "rows": rows}
        if path is not None:
            with open(path, "w") as fh:
                json.dump(doc, fh)
        return doc

    @classmethod
    def from_json(cls, doc) -> "TransitionIntervalMatrix":
        K, L = doc["n_states"], doc["n_controls"]
        lower = np.zeros((K * L, K + 1))
        upper = np.full((K * L, K + 1), float(doc.get("threshold", 0.0)))
        for r in doc["rows"]:
            idx = r["i"] * L + r["l"]
            cols = [K if j == UNSAFE else j for j in r["dest"]]
            lower[idx, cols] = r["lower"]
            upper[idx, cols] = r["upper"]
        return cls(lower, upper, K, L)


def build_matrix(model, noise: NoiseModel, partition: StateControlPartition, error_config=None,
                 splits=1, chunk: int = 256) -> TransitionIntervalMatrix:
    """Interval matrix for every (i, l) pair of ``partition``."""
    z_lo, z_hi = partition.pair_boxes()
    K = partition.n_states
    R = z_lo.shape[0]
    lower = np.empty((R, K + 1))
    upper = np.empty((R, K + 1))
    s_lo, s_hi = partition.states.lows, partition.states.highs
    for start in range(0, R, chunk):
        sl = slice(start, min(R, start + chunk))
        img = image_bounds(model, z_lo[sl], z_hi[sl], error_config, splits)
        lower[sl, :K], upper[sl, :K] = target_intervals(img, noise, s_lo, s_hi)
        lower[sl, K], upper[sl, K] = exit_intervals(img, noise, partition.safe_set)
    return finalize_rows(lower, upper, K, partition.n_controls)


def finalize_rows(lower, upper, n_states, n_controls) -> TransitionIntervalMatrix:
    lower = np.clip(lower, 0.0, 1.0)
    upper = np.clip(np.maximum(upper, lower), 0.0, 1.0)
    over = lower.sum(axis=1) - 1.0
    if np.any(over > FEASIBILITY_TOL):
        bad = int(np.argmax(over))
        raise SoundnessError(f"row {bad}: lower bounds sum to {1 + over[bad]!r} > 1")
    # rounding can leave sum(lower) a hair above one; trim the largest entry
    for r in np.flatnonzero(over > 0):
        j = int(np.argmax(lower[r]))
        lower[r, j] = max(0.0, lower[r, j] - over[r])
    deficit = 1.0 - upper.sum(axis=1)
    short = np.flatnonzero(deficit > 0)
    if short.size:
        if np.max(deficit) > FEASIBILITY_TOL:
            log.warning("widening upper bounds of %d rows (max deficit %.3g)", short.size, np.max(deficit))
        # push the missing mass onto the unsafe column, the conservative choice
        upper[short, -1] = np.minimum(1.0, upper[short, -1] + deficit[short] * (1 + 1e-12) + 1e-300)
    m = TransitionIntervalMatrix(lower, upper, n_states, n_controls)
    m.check()
    return m
