"""Axis-aligned boxes and uniform grid partitions."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

DIVISIBILITY_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class Box:
    """Closed axis-aligned box ``[lower, upper]``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float)).copy()
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float)).copy()
        if lo.ndim != 1 or lo.shape != hi.shape or lo.size == 0:
            raise ValueError(f"box bounds must be equal-length 1-d vectors, got {lo.shape} and {hi.shape}")
        if np.any(lo > hi):
            raise ValueError(f"box lower {lo} exceeds upper {hi}")
        lo.flags.writeable = False
        hi.flags.writeable = False
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def volume(self) -> float:
        return float(np.prod(self.widths))

    def contains(self, point, tol: float = 0.0) -> bool:
        x = np.asarray(point, dtype=float)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def contains_box(self, other: "Box", tol: float = 0.0) -> bool:
        return bool(np.all(other.lower >= self.lower - tol) and np.all(other.upper <= self.upper + tol))

    def intersects(self, other: "Box") -> bool:
        """Closed-set intersection test (touching faces count)."""
        return bool(np.all(self.lower <= other.upper) and np.all(other.lower <= self.upper))

    def product(self, other: "Box") -> "Box":
        return Box(np.concatenate([self.lower, other.lower]), np.concatenate([self.upper, other.upper]))

    def __eq__(self, other):
        if not isinstance(other, Box):
            return NotImplemented
        return np.array_equal(self.lower, other.lower) and np.array_equal(self.upper, other.upper)

    def __hash__(self):
        return hash((self.lower.tobytes(), self.upper.tobytes()))

    def __repr__(self):
        return f"Box({self.lower.tolist()}, {self.upper.tolist()})"

    def to_list(self):
        return [self.lower.tolist(), self.upper.tolist()]


def _margin(box: Box, margin) -> np.ndarray:
    m = np.broadcast_to(np.asarray(margin, dtype=float), (box.dim,))
    if np.any(m < 0):
        raise ValueError("margin must be nonnegative")
    return m


def erode(box: Box, margin) -> Box | None:
    """Shrink every face inward by ``margin``; ``None`` if a dimension collapses."""
    m = _margin(box, margin)
    lo, hi = box.lower + m, box.upper - m
    if np.any(lo > hi):
        return None
    return Box(lo, hi)


def dilate(box: Box, margin) -> Box:
    m = _margin(box, margin)
    return Box(box.lower - m, box.upper + m)


def _axis_edges(lo: float, hi: float, width: float) -> np.ndarray:
    if not width > 0 or not math.isfinite(width):
        raise ValueError(f"cell width must be positive, got {width}")
    span = hi - lo
    if span == 0:
        return np.array([lo, hi])
    count = max(1, math.ceil(span / width - DIVISIBILITY_TOL))
    edges = lo + width * np.arange(count + 1, dtype=float)
    edges[-1] = hi
    return edges


def _count_edges(lo: float, hi: float, count: int) -> np.ndarray:
    if count < 1:
        raise ValueError(f"cell count must be >= 1, got {count}")
    edges = lo + (hi - lo) * np.arange(count + 1, dtype=float) / count
    edges[-1] = hi
    return edges


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform rectangular grid over a box.

    Cells are indexed in C order over per-axis indices, so the first axis is
    the most significant.
    """

    region: Box
    edges: tuple
    lows: np.ndarray = field(init=False, repr=False)
    highs: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        edges = tuple(np.asarray(e, dtype=float) for e in self.edges)
        object.__setattr__(self, "edges", edges)
        lo_axes = [e[:-1] for e in edges]
        hi_axes = [e[1:] for e in edges]
        lows = np.stack([g.ravel() for g in np.meshgrid(*lo_axes, indexing="ij")], axis=1)
        highs = np.stack([g.ravel() for g in np.meshgrid(*hi_axes, indexing="ij")], axis=1)
        object.__setattr__(self, "lows", lows)
        object.__setattr__(self, "highs", highs)

    @classmethod
    def from_width(cls, region: Box, cell_width) -> "Grid":
        w = np.broadcast_to(np.asarray(cell_width, dtype=float), (region.dim,))
        return cls(region, tuple(_axis_edges(a, b, c) for a, b, c in zip(region.lower, region.upper, w)))

    @classmethod
    def from_counts(cls, region: Box, counts) -> "Grid":
        c = np.broadcast_to(np.asarray(counts, dtype=int), (region.dim,))
        return cls(region, tuple(_count_edges(a, b, int(k)) for a, b, k in zip(region.lower, region.upper, c)))

    @property
    def shape(self) -> tuple:
        return tuple(len(e) - 1 for e in self.edges)

    @property
    def dim(self) -> int:
        return self.region.dim

    def __len__(self) -> int:
        return int(np.prod(self.shape))

    def cell(self, index: int) -> Box:
        return Box(self.lows[index], self.highs[index])

    @property
    def cells(self) -> list:
        return [self.cell(i) for i in range(len(self))]

    def locate(self, point) -> int | None:
        x = np.asarray(point, dtype=float).ravel()
        if x.size != self.dim:
            raise ValueError(f"point has dimension {x.size}, grid has {self.dim}")
        if not self.region.contains(x):
            return None
        axes = []
        for d, e in enumerate(self.edges):
            # lowest cell whose upper edge is >= x, so shared faces go to the lower cell
            k = int(np.searchsorted(e[1:], x[d], side="left"))
            axes.append(min(k, len(e) - 2))
        return int(np.ravel_multi_index(axes, self.shape))

    def locate_many(self, points) -> np.ndarray:
        """Vectorized :meth:`locate`; -1 marks points outside the region."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        inside = np.all((pts >= self.region.lower) & (pts <= self.region.upper), axis=1)
        axes = []
        for d, e in enumerate(self.edges):
            k = np.searchsorted(e[1:], pts[:, d], side="left")
            axes.append(np.clip(k, 0, len(e) - 2))
        idx = np.ravel_multi_index(axes, self.shape)
        return np.where(inside, idx, -1)

    def overlapping(self, box: Box) -> list:
        """Indices of cells whose closure meets ``box``."""
        hit = np.all((self.lows <= box.upper) & (box.lower <= self.highs), axis=1)
        return np.flatnonzero(hit).tolist()


def grid_partition(region: Box, cell_width) -> list:
    """Uniform cells of ``region``; a non-dividing width leaves a narrower last cell."""
    return Grid.from_width(region, cell_width).cells


@dataclass(frozen=True, eq=False)
class StateControlPartition:
    """Product of a state grid over the safe set and a control grid over U."""

    states: Grid
    controls: Grid
    initial_set: Box

    def __post_init__(self):
        if self.initial_set.dim != self.states.dim:
            raise ValueError("initial set and safe set dimensions differ")

    @classmethod
    def build(cls, safe_set: Box, initial_set: Box, state_width, control_box: Box, control_counts) -> "StateControlPartition":
        return cls(Grid.from_width(safe_set, state_width), Grid.from_counts(control_box, control_counts), initial_set)

    @property
    def safe_set(self) -> Box:
        return self.states.region

    @property
    def control_box(self) -> Box:
        return self.controls.region

    @property
    def state_cells(self) -> list:
        return self.states.cells

    @property
    def control_cells(self) -> list:
        return self.controls.cells

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_controls(self) -> int:
        return len(self.controls)

    @property
    def initial_cell_indices(self) -> list:
        return self.states.overlapping(self.initial_set)

    def locate_cell(self, point) -> int | None:
        return self.states.locate(point)

    def pair_boxes(self):
        """Lower/upper corners of every Z_il = X_i x U_l, rows ordered by (i, l)."""
        K, L = self.n_states, self.n_controls
        xs_lo = np.repeat(self.states.lows, L, axis=0)
        xs_hi = np.repeat(self.states.highs, L, axis=0)
        us_lo = np.tile(self.controls.lows, (K, 1))
        us_hi = np.tile(self.controls.highs, (K, 1))
        return np.hstack([xs_lo, us_lo]), np.hstack([xs_hi, us_hi])


def box_vertices(lower, upper) -> np.ndarray:
    lo, hi = np.asarray(lower, float), np.asarray(upper, float)
    return np.array([np.where(bits, hi, lo) for bits in itertools.product((0, 1), repeat=lo.size)])
