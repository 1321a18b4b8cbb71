"""Ground-truth dynamics, noise, and datasets."""
from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from .geometry import Box

DUBINS_SPEED = 0.2
_CONTROL_TOL = 1e-12


class DatasetParseError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SystemModel:
    """``x' = f(x, u) + w`` for the supported vector fields.

    ``kind`` is ``"linear"`` (``f = A x + B u``), ``"dubins"``
    (``f = x + speed [cos u, sin u]``) or ``"external"`` (no known f; data only).
    """

    kind: str
    state_dim: int
    control_dim: int
    control_box: Box
    A: np.ndarray | None = None
    B: np.ndarray | None = None
    speed: float = DUBINS_SPEED

    def __post_init__(self):
        if self.kind not in ("linear", "dubins", "external"):
            raise ValueError(f"unknown system kind {self.kind!r}")
        if self.control_box.dim != self.control_dim:
            raise ValueError("control box dimension does not match control_dim")
        if self.kind == "linear":
            A = np.atleast_2d(np.asarray(self.A, dtype=float))
            B = np.asarray(self.B, dtype=float).reshape(self.state_dim, self.control_dim)
            if A.shape != (self.state_dim, self.state_dim):
                raise ValueError(f"A must be {self.state_dim}x{self.state_dim}")
            object.__setattr__(self, "A", A)
            object.__setattr__(self, "B", B)
        elif self.kind == "dubins":
            if self.state_dim != 2 or self.control_dim != 1:
                raise ValueError("dubins system has n=2, m=1")

    @classmethod
    def linear(cls, A, B, control_box: Box) -> "SystemModel":
        A = np.atleast_2d(np.asarray(A, dtype=float))
        B = np.asarray(B, dtype=float)
        n = A.shape[0]
        return cls("linear", n, control_box.dim, control_box, A=A, B=B.reshape(n, control_box.dim))

    @classmethod
    def dubins(cls, speed: float = DUBINS_SPEED) -> "SystemModel":
        return cls("dubins", 2, 1, Box([-math.pi], [math.pi]), speed=speed)

    @property
    def known(self) -> bool:
        return self.kind != "external"

    def f(self, x, u) -> np.ndarray:
        """Deterministic part; accepts single points or row-stacked batches."""
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        if self.kind == "linear":
            return x @ self.A.T + u @ self.B.T
        if self.kind == "dubins":
            th = u[..., 0]
            return x + self.speed * np.stack([np.cos(th), np.sin(th)], axis=-1)
        raise ValueError("external system has no known vector field")

    def image_bounds(self, lower, upper):
        """Exact box enclosure of ``f`` over rows of joint (x, u) boxes."""
        lo = np.atleast_2d(np.asarray(lower, dtype=float))
        hi = np.atleast_2d(np.asarray(upper, dtype=float))
        n = self.state_dim
        xl, xh, ul, uh = lo[:, :n], hi[:, :n], lo[:, n:], hi[:, n:]
        if self.kind == "linear":
            M = np.hstack([self.A, self.B])
            pos, neg = np.clip(M, 0, None), np.clip(M, None, 0)
            return lo @ pos.T + hi @ neg.T, hi @ pos.T + lo @ neg.T
        if self.kind == "dubins":
            cl, ch = cos_range(ul[:, 0], uh[:, 0])
            sl, sh = cos_range(ul[:, 0] - math.pi / 2, uh[:, 0] - math.pi / 2)
            s = self.speed
            return xl + s * np.stack([cl, sl], axis=1), xh + s * np.stack([ch, sh], axis=1)
        raise ValueError("external system has no known vector field")

    def check_control(self, u) -> None:
        if not self.control_box.contains(u, tol=_CONTROL_TOL):
            raise ValueError(f"control {np.asarray(u).tolist()} outside control box {self.control_box}")

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "n": self.state_dim, "m": self.control_dim, "control_box": self.control_box.to_list()}
        if self.kind == "linear":
            d.update(A=self.A.tolist(), B=self.B.tolist())
        elif self.kind == "dubins":
            d["speed"] = self.speed
        return d


def cos_range(a, b):
    """Elementwise [min, max] of cos over [a, b]."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ca, cb = np.cos(a), np.cos(b)
    lo, hi = np.minimum(ca, cb), np.maximum(ca, cb)
    # a multiple of 2pi inside [a, b] attains 1, an odd multiple of pi attains -1
    has_max = np.floor(b / (2 * math.pi)) >= np.ceil(a / (2 * math.pi))
    has_min = np.floor((b - math.pi) / (2 * math.pi)) >= np.ceil((a - math.pi) / (2 * math.pi))
    hi = np.where(has_max, 1.0, hi)
    lo = np.where(has_min, -1.0, lo)
    return lo, hi


@dataclass(frozen=True, eq=False)
class NoiseModel:
    """Zero-mean Gaussian noise with diagonal covariance."""

    sigma: np.ndarray

    def __post_init__(self):
        s = np.atleast_1d(np.asarray(self.sigma, dtype=float)).copy()
        if np.any(s <= 0):
            raise ValueError("noise standard deviations must be positive")
        object.__setattr__(self, "sigma", s)

    @property
    def dim(self) -> int:
        return self.sigma.size

    def sample(self, rng: np.random.Generator, size=None) -> np.ndarray:
        shape = (self.dim,) if size is None else (size, self.dim)
        return rng.standard_normal(shape) * self.sigma


def step(system: SystemModel, noise: NoiseModel, x, u, noise_draw) -> np.ndarray:
    """One transition ``f(x, u) + noise_draw``; pass zeros for the noise-free map."""
    x = np.asarray(x, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    w = np.asarray(noise_draw, dtype=float)
    if w.shape[-1] != system.state_dim or noise.dim != system.state_dim:
        raise ValueError("noise dimension does not match state dimension")
    system.check_control(u)
    return system.f(x, u) + w


@dataclass(frozen=True, eq=False)
class Dataset:
    """Input-output triples ``(x, u, x')`` stored row-wise."""

    X: np.ndarray
    U: np.ndarray
    Xn: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        U = np.asarray(self.U, dtype=float).reshape(X.shape[0], -1)
        Xn = np.atleast_2d(np.asarray(self.Xn, dtype=float))
        if not (X.shape[0] == U.shape[0] == Xn.shape[0]) or X.shape != Xn.shape:
            raise ValueError("dataset arrays have inconsistent shapes")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "Xn", Xn)

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def n(self) -> int:
        return self.X.shape[1]

    @property
    def m(self) -> int:
        return self.U.shape[1]

    @property
    def inputs(self) -> np.ndarray:
        return np.hstack([self.X, self.U])

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return all(np.array_equal(a, b) for a, b in ((self.X, other.X), (self.U, other.U), (self.Xn, other.Xn)))

    __hash__ = None


def default_sampling_region(system: SystemModel, safe_set: Box, state_margin) -> Box:
    """Safe set dilated by ``state_margin`` times the control box."""
    m = np.broadcast_to(np.asarray(state_margin, dtype=float), (safe_set.dim,))
    return Box(safe_set.lower - m, safe_set.upper + m).product(system.control_box)


def generate_dataset(system: SystemModel, noise: NoiseModel, sampling_region: Box, M: int, seed) -> Dataset:
    """M i.i.d. triples with inputs uniform over ``sampling_region``."""
    if M < 1:
        raise ValueError("dataset size M must be at least 1")
    n, m = system.state_dim, system.control_dim
    if sampling_region.dim != n + m:
        raise ValueError(f"sampling region must have dimension {n + m}")
    ctrl = Box(sampling_region.lower[n:], sampling_region.upper[n:])
    if not system.control_box.contains_box(ctrl, tol=_CONTROL_TOL):
        raise ValueError("sampling region exceeds the control box")
    rng = np.random.default_rng(seed)
    Z = rng.uniform(sampling_region.lower, sampling_region.upper, size=(M, n + m))
    X, U = Z[:, :n], Z[:, n:]
    W = noise.sample(rng, M)
    return Dataset(X, U, system.f(X, U) + W)


def save_dataset(dataset: Dataset, path) -> None:
    rows = np.hstack([dataset.X, dataset.U, dataset.Xn])
    with open(path, "w") as fh:
        fh.write(f"# n={dataset.n} m={dataset.m}\n")
        for r in rows:
            fh.write(",".join(f"{v:.17g}" for v in r) + "\n")


def load_dataset(path) -> Dataset:
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DatasetParseError(f"{path}: no records")
    header = lines[0].strip()
    try:
        if not header.startswith("#"):
            raise ValueError
        fields = dict(tok.split("=") for tok in header[1:].split())
        n, m = int(fields["n"]), int(fields["m"])
    except (ValueError, KeyError):
        raise DatasetParseError(f"{path}:1: expected header '# n=<n> m=<m>', got {header!r}") from None
    width = 2 * n + m
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split(",")
        if len(parts) != width:
            raise DatasetParseError(f"{path}:{lineno}: expected {width} fields, got {len(parts)}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise DatasetParseError(f"{path}:{lineno}: non-numeric field in {line!r}") from None
    if not rows:
        raise DatasetParseError(f"{path}: no records")
    arr = np.array(rows)
    return Dataset(arr[:, :n], arr[:, n:n + m], arr[:, n + m:])
