"""Run configuration read from a TOML file.

Sections mirror the pipeline stages::

    [run]          seed, out
    [system]       kind, A, B, control_box, speed, known_system, dataset
    [noise]        sigma
    [abstraction]  safe_set, initial_set, state_width, control_cells
    [data]         M, state_margin
    [gp]           signal_variance, lengthscales, noise_variance, splits
    [error]        delta, rkhs_bound, gamma
    [synthesis]    N, p, backend
    [validation]   trials, keep_trajectories, adversarial_start

Boxes are written as ``[[lower...], [upper...]]``.
"""
from __future__ import annotations

import sys
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .geometry import Box, StateControlPartition
from .gp import ErrorBoundConfig, KernelConfig
from .systems import NoiseModel, SystemModel, default_sampling_region


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


@dataclass
class RunConfig:
    system: SystemModel
    noise: NoiseModel
    safe_set: Box
    initial_set: Box
    state_width: float
    control_cells: int
    N: int
    p: float
    known_system: bool = False
    dataset: str | None = None
    M: int = 500
    state_margin: float | None = None
    kernel: KernelConfig | None = None
    splits: int | tuple = 2
    error: ErrorBoundConfig | None = None
    backend: str = "highs"
    trials: int = 1000
    keep_trajectories: int = 20
    adversarial_start: tuple | None = None
    seed: int = 0
    out: str = "out"
    source: dict = field(default_factory=dict, repr=False)

    def partition(self) -> StateControlPartition:
        return StateControlPartition.build(self.safe_set, self.initial_set, self.state_width,
                                           self.system.control_box, self.control_cells)

    def with_overrides(self, **kw) -> "RunConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        if "p" in kw:
            _check_p(kw["p"], "--p")
        return replace(self, **kw)

    def sampling_region(self) -> Box:
        margin = self.state_width if self.state_margin is None else self.state_margin
        return default_sampling_region(self.system, self.safe_set, margin)


def substream_seed(root: int, label: str) -> int:
    """Seed for a named random stream; streams stay independent of one another."""
    ss = np.random.SeedSequence([int(root), zlib.crc32(label.encode())])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _check_p(p, key):
    if not (isinstance(p, (int, float)) and 0 < p < 1):
        raise ConfigError(f"{key}: p must lie in (0,1)")


def _get(doc, section, key, default=..., kind=None):
    sec = doc.get(section, {})
    name = f"{section}.{key}"
    if not isinstance(sec, dict):
        raise ConfigError(f"{section}: expected a table")
    if key not in sec:
        if default is ...:
            raise ConfigError(f"{name}: missing required key")
        return default
    val = sec[key]
    if kind is not None:
        try:
            val = kind(val)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{name}: {exc}") from None
    return val


def _box(val) -> Box:
    lo, hi = val
    return Box(lo, hi)


def _splits(val):
    if isinstance(val, (list, tuple)):
        return tuple(int(v) for v in val)
    return int(val)


def _system(doc) -> SystemModel:
    kind = _get(doc, "system", "kind", kind=str)
    if kind == "linear":
        A = _get(doc, "system", "A", kind=lambda v: np.asarray(v, dtype=float))
        B = _get(doc, "system", "B", kind=lambda v: np.asarray(v, dtype=float))
        cb = _get(doc, "system", "control_box", kind=_box)
        try:
            return SystemModel.linear(A, B, cb)
        except ValueError as exc:
            raise ConfigError(f"system.A/system.B: {exc}") from None
    if kind == "dubins":
        return SystemModel.dubins(_get(doc, "system", "speed", 0.2, float))
    if kind == "external":
        n = _get(doc, "system", "state_dim", kind=int)
        cb = _get(doc, "system", "control_box", kind=_box)
        return SystemModel("external", n, cb.dim, cb)
    raise ConfigError(f"system.kind: unknown kind {kind!r}")


def parse_config(doc: dict, base_dir=".") -> RunConfig:
    system = _system(doc)
    noise = NoiseModel(_get(doc, "noise", "sigma", kind=lambda v: np.atleast_1d(np.asarray(v, dtype=float))))
    if noise.dim != system.state_dim:
        raise ConfigError("noise.sigma: length must equal the state dimension")
    safe = _get(doc, "abstraction", "safe_set", kind=_box)
    init = _get(doc, "abstraction", "initial_set", kind=_box)
    if safe.dim != system.state_dim:
        raise ConfigError("abstraction.safe_set: dimension must equal the state dimension")
    if not safe.contains_box(init):
        raise ConfigError("abstraction.initial_set: must lie inside the safe set")
    width = _get(doc, "abstraction", "state_width", kind=float)
    cells = _get(doc, "abstraction", "control_cells", kind=int)
    if width <= 0:
        raise ConfigError("abstraction.state_width: must be positive")
    if cells < 1:
        raise ConfigError("abstraction.control_cells: must be >= 1")

    N = _get(doc, "synthesis", "N", kind=int)
    if N < 1:
        raise ConfigError("synthesis.N: horizon must be >= 1")
    p = _get(doc, "synthesis", "p")
    _check_p(p, "synthesis.p")
    backend = _get(doc, "synthesis", "backend", "highs", str)
    if backend not in ("highs", "simplex"):
        raise ConfigError(f"synthesis.backend: unknown backend {backend!r}")

    known = _get(doc, "system", "known_system", False, bool)
    if known and not system.known:
        raise ConfigError("system.known_system: an external system has no known dynamics")
    dataset = _get(doc, "system", "dataset", None)
    if dataset is not None:
        dataset = str(Path(base_dir) / dataset)
    if not system.known and dataset is None:
        raise ConfigError("system.dataset: required when system.kind is external")

    kernel = error = None
    if not known:
        n_in = system.state_dim + system.control_dim
        ls = _get(doc, "gp", "lengthscales", kind=lambda v: tuple(np.atleast_1d(np.asarray(v, dtype=float))))
        if len(ls) not in (1, n_in):
            raise ConfigError(f"gp.lengthscales: need 1 or {n_in} values")
        try:
            kernel = KernelConfig(_get(doc, "gp", "signal_variance", 1.0, float), ls,
                                  _get(doc, "gp", "noise_variance", kind=float))
        except ValueError as exc:
            raise ConfigError(f"gp: {exc}") from None
        gamma = _get(doc, "error", "gamma", "computed")
        if gamma != "computed" and not isinstance(gamma, (int, float)):
            raise ConfigError("error.gamma: expected a number or \"computed\"")
        try:
            error = ErrorBoundConfig(_get(doc, "error", "delta", kind=float),
                                     tuple(np.atleast_1d(_get(doc, "error", "rkhs_bound"))),
                                     None if gamma == "computed" else float(gamma))
        except ValueError as exc:
            raise ConfigError(f"error: {exc}") from None

    M = _get(doc, "data", "M", 500, int)
    if M < 1:
        raise ConfigError("data.M: must be >= 1")
    start = _get(doc, "validation", "adversarial_start", None)
    cfg = RunConfig(
        system=system, noise=noise, safe_set=safe, initial_set=init, state_width=width, control_cells=cells,
        N=N, p=float(p), known_system=known, dataset=dataset, M=M,
        state_margin=_get(doc, "data", "state_margin", None),
        kernel=kernel, splits=_get(doc, "gp", "splits", 2, _splits), error=error, backend=backend,
        trials=_get(doc, "validation", "trials", 1000, int),
        keep_trajectories=_get(doc, "validation", "keep_trajectories", 20, int),
        adversarial_start=None if start is None else tuple(float(v) for v in start),
        seed=_get(doc, "run", "seed", 0, int), out=_get(doc, "run", "out", "out", str), source=doc,
    )
    if cfg.trials < 1:
        raise ConfigError("validation.trials: must be >= 1")
    n_in = system.state_dim + system.control_dim
    if np.any(np.asarray(cfg.splits) < 1) or np.size(cfg.splits) not in (1, n_in):
        raise ConfigError(f"gp.splits: need one positive count or {n_in} of them")
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_config(doc, path.parent)


def default_start(cfg: RunConfig) -> np.ndarray:
    return cfg.initial_set.center if cfg.adversarial_start is None else np.asarray(cfg.adversarial_start)


__all__ = ["RunConfig", "ConfigError", "load_config", "parse_config", "substream_seed", "default_start"]
