"""Gaussian process regression over joint state-control inputs.

One zero-mean GP per output dimension with a shared squared-exponential
kernel, so a single Cholesky factor serves all outputs. Besides pointwise
posteriors the model provides sound enclosures of the posterior mean and an
upper bound on the posterior standard deviation over boxes, plus the
probabilistic learning-error radius ``alpha(delta) * sigma_D``.

Enclosures over a box with centre ``c`` and half-widths ``h``:

* mean: intersection of the interval sum over training points, the
  mean-value form with an interval gradient, and a first-order expansion at
  ``c`` whose remainder is bounded through the RKHS norm of the mean;
* std: ``sigma_D(c)`` plus the largest posterior std of the directional
  derivative over the box corners plus the prior-norm Taylor remainder.
  Posterior std is the norm of a contraction applied to the feature map, so
  the triangle inequality makes this sound.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from . import _kernels
from .systems import Dataset

JITTER_FLOOR = 1e-10
MAX_JITTER = 1e-6
_CHUNK_ELEMS = 2_000_000


class NumericalError(RuntimeError):
    pass


@dataclass(frozen=True)
class KernelConfig:
    """Squared-exponential kernel ``sf2 * exp(-0.5 * sum(((z - z') / ls)**2))``."""

    signal_variance: float
    lengthscales: tuple
    noise_variance: float

    def __post_init__(self):
        ls = tuple(float(v) for v in np.atleast_1d(self.lengthscales))
        object.__setattr__(self, "lengthscales", ls)
        if self.signal_variance <= 0 or any(v <= 0 for v in ls) or self.noise_variance < 0:
            raise ValueError("kernel needs signal_variance > 0, lengthscales > 0, noise_variance >= 0")

    @property
    def ls(self) -> np.ndarray:
        return np.asarray(self.lengthscales)

    def __call__(self, A, B) -> np.ndarray:
        ls = self.ls
        a = np.atleast_2d(A) / ls
        b = np.atleast_2d(B) / ls
        d2 = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
        return self.signal_variance * np.exp(-0.5 * np.maximum(d2, 0.0))


@dataclass(frozen=True)
class ErrorBoundConfig:
    """Parameters of ``alpha_i(delta) = C_i + sigma * sqrt(2 (gamma_i + 1 + ln(n / delta)))``.

    ``gamma`` of ``None`` means compute the information gain from the data.
    ``sigma`` defaults to the kernel's observation-noise standard deviation.
    """

    delta: float
    rkhs_bound: tuple
    gamma: float | None = None
    sigma: float | None = None

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0,1)")
        cb = tuple(float(v) for v in np.atleast_1d(self.rkhs_bound))
        if any(v <= 0 for v in cb):
            raise ValueError("RKHS norm bounds must be positive")
        object.__setattr__(self, "rkhs_bound", cb)

    def alpha(self, model: "GPModel") -> np.ndarray:
        n = model.n_outputs
        C = np.broadcast_to(np.asarray(self.rkhs_bound), (n,))
        gamma = model.information_gain() if self.gamma is None else self.gamma
        sigma = math.sqrt(model.kernel.noise_variance) if self.sigma is None else self.sigma
        return alpha(C, sigma, gamma, self.delta, n)


def alpha(C, sigma, gamma, delta, n) -> np.ndarray:
    """Error-radius scale; ``delta`` is split evenly over the ``n`` outputs."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0,1)")
    return np.asarray(C, dtype=float) + sigma * math.sqrt(2.0 * (gamma + 1.0 + math.log(n / delta)))


def taylor_remainder(s2) -> np.ndarray:
    """Prior RKHS norm of ``phi(c+h) - phi(c) - Dphi(c) h`` for a unit SE kernel.

    ``s2`` is the squared whitened step ``sum((h / ls)**2)``.
    """
    t = np.asarray(s2, dtype=float)
    e = np.exp(-0.5 * t)
    direct = -2.0 * np.expm1(-0.5 * t) - 2.0 * t * e + t
    series = t * t * (0.75 - t * (5.0 / 24.0 - t * (7.0 / 192.0 - t * (3.0 / 640.0 - t * (11.0 / 23040.0)))))
    r2 = np.where(t < 0.05, series, direct)
    # alternating series cut after a positive term, so it overestimates
    return np.sqrt(np.maximum(r2, 0.0) * (1.0 + 1e-9) + 1e-300)


class GPModel:
    """Posterior of independent GPs sharing inputs and kernel."""

    def __init__(self, Z, Y, kernel: KernelConfig):
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        Y = np.asarray(Y, dtype=float).reshape(Z.shape[0], -1)
        if Z.shape[0] == 0:
            raise ValueError("cannot fit a GP to an empty dataset")
        if len(kernel.lengthscales) not in (1, Z.shape[1]):
            raise ValueError(f"need 1 or {Z.shape[1]} lengthscales")
        if len(kernel.lengthscales) == 1:
            kernel = KernelConfig(kernel.signal_variance, (kernel.lengthscales[0],) * Z.shape[1],
                                  kernel.noise_variance)
        self.Z, self.Y, self.kernel = Z, Y, kernel
        K0 = kernel(Z, Z)
        noise = max(kernel.noise_variance, JITTER_FLOOR)
        jitter = noise
        while True:
            try:
                self.chol = np.linalg.cholesky(K0 + jitter * np.eye(len(Z)))
                break
            except np.linalg.LinAlgError:
                if jitter >= MAX_JITTER:
                    raise NumericalError("kernel matrix is singular even with maximal jitter") from None
                jitter = min(MAX_JITTER, max(jitter * 10, noise * 10))
        self.jitter = jitter
        self.weights = cho_solve((self.chol, True), Y)
        self._K0 = K0
        self._gamma = None

    @classmethod
    def fit(cls, dataset: Dataset, kernel: KernelConfig) -> "GPModel":
        if len(dataset) == 0:
            raise ValueError("cannot fit a GP to an empty dataset")
        return cls(dataset.inputs, dataset.Xn, kernel)

    @property
    def n_outputs(self) -> int:
        return self.Y.shape[1]

    @property
    def input_dim(self) -> int:
        return self.Z.shape[1]

    @property
    def signal_std(self) -> float:
        return math.sqrt(self.kernel.signal_variance)

    def information_gain(self) -> float:
        """``0.5 * log det(I + K / sigma^2)`` with the effective noise variance."""
        if self._gamma is None:
            self._gamma = float(np.sum(np.log(np.diag(self.chol))) - 0.5 * len(self.Z) * math.log(self.jitter))
        return self._gamma

    def rkhs_norms(self) -> np.ndarray:
        """RKHS norm of each posterior mean, ``sqrt(w' K0 w)``."""
        W = self.weights
        return np.sqrt(np.maximum(np.einsum("mi,mi->i", W, self._K0 @ W), 0.0))

    def posterior(self, z):
        """Mean (B, n) and std (B, n) at row-stacked inputs."""
        z = np.atleast_2d(np.asarray(z, dtype=float))
        if z.shape[1] != self.input_dim:
            raise ValueError(f"input has dimension {z.shape[1]}, model expects {self.input_dim}")
        kz = self.kernel(z, self.Z)
        mean = kz @ self.weights
        v = solve_triangular(self.chol, kz.T, lower=True)
        var = np.maximum(self.kernel.signal_variance - (v * v).sum(0), 0.0)
        std = np.sqrt(var)
        return mean, np.repeat(std[:, None], self.n_outputs, axis=1)

    def posterior_at(self, z):
        mean, std = self.posterior(np.asarray(z, dtype=float)[None, :])
        return mean[0], std[0]

    # -- enclosures over boxes -------------------------------------------------

    def region_bounds(self, lower, upper, splits=1):
        """Sound ``(mean_lower, mean_upper, std_upper)`` over rows of boxes.

        ``splits`` subdivides each box into ``splits**D`` pieces (an int or one
        count per input dimension) and returns the hull of their enclosures.
        """
        lo = np.atleast_2d(np.asarray(lower, dtype=float))
        hi = np.atleast_2d(np.asarray(upper, dtype=float))
        D = self.input_dim
        if lo.shape[1] != D or hi.shape != lo.shape:
            raise ValueError(f"boxes must have dimension {D}")
        k = np.broadcast_to(np.asarray(splits, dtype=int), (D,))
        if np.all(k == 1):
            return self._bounds(lo, hi)
        fr = [np.arange(kk + 1) / kk for kk in k]
        offs = list(itertools.product(*[range(kk) for kk in k]))
        n_sub = len(offs)
        w = hi - lo
        sub_lo = np.empty((lo.shape[0], n_sub, D))
        sub_hi = np.empty_like(sub_lo)
        for s, idx in enumerate(offs):
            a = np.array([fr[d][idx[d]] for d in range(D)])
            b = np.array([fr[d][idx[d] + 1] for d in range(D)])
            sub_lo[:, s] = lo + a * w
            sub_hi[:, s] = np.where(b == 1.0, hi, lo + b * w)
        mlo, mhi, shi = self._bounds(sub_lo.reshape(-1, D), sub_hi.reshape(-1, D))
        C = lo.shape[0]
        return (mlo.reshape(C, n_sub, -1).min(1), mhi.reshape(C, n_sub, -1).max(1),
                shi.reshape(C, n_sub, -1).max(1))

    def _bounds(self, lo, hi):
        C = lo.shape[0]
        step = max(1, _CHUNK_ELEMS // (self.Z.shape[0] * self.input_dim))
        out = [self._bounds_chunk(lo[s:s + step], hi[s:s + step]) for s in range(0, C, step)]
        return tuple(np.concatenate(parts) for parts in zip(*out))

    def _bounds_chunk(self, lo, hi):
        kern = self.kernel
        ls, sf2, Z, W = kern.ls, kern.signal_variance, self.Z, self.weights
        c = 0.5 * (lo + hi)
        h = 0.5 * (hi - lo)
        s2 = ((h / ls) ** 2).sum(1)
        rem = math.sqrt(sf2) * taylor_remainder(s2)  # (C,)

        kc = kern(c, Z)  # (C, M)
        mean_c = kc @ W
        diff = c[:, None, :] - Z[None, :, :]  # (C, M, D)
        dk = -kc[:, :, None] * diff / ls**2  # d k(c, Z_j) / d c
        grad_c = np.einsum("cmd,mi->cid", dk, W)  # (C, n, D)

        # interval sum over training points, and an interval gradient for the mean-value form
        naive_lo, naive_hi, g_lo, g_hi = _kernels.interval_sums(lo, hi, Z, W, ls, sf2)
        Wp, Wn = np.clip(W, 0, None), np.clip(W, None, 0)
        mv = (np.maximum(np.abs(g_lo), np.abs(g_hi)) * h[:, None, :]).sum(-1)

        # first-order expansion with RKHS remainder
        lin = (np.abs(grad_c) * h[:, None, :]).sum(-1)
        tay = lin + self.rkhs_norms()[None, :] * rem[:, None]

        spread = np.minimum(mv, tay)
        mean_lo = np.maximum(naive_lo, mean_c - spread)
        mean_hi = np.minimum(naive_hi, mean_c + spread)
        # rounding guard: scale-aware pad keeps the enclosure closed under fp error
        pad = 1e-12 * (np.abs(Wp).sum(0) + np.abs(Wn).sum(0)) * sf2 + 1e-15
        mean_lo, mean_hi = mean_lo - pad, mean_hi + pad

        # posterior std at the centre and of directional derivatives
        v_c = solve_triangular(self.chol, kc.T, lower=True)  # (M, C)
        var_c = np.maximum(sf2 - (v_c * v_c).sum(0), 0.0)
        Cn, M, D = dk.shape
        V = solve_triangular(self.chol, dk.transpose(1, 0, 2).reshape(M, Cn * D), lower=True)
        V = V.reshape(M, Cn, D)
        G = np.einsum("mcd,mce->cde", V, V)
        G = np.eye(D)[None] * (sf2 / ls**2)[None, :, None] - G  # posterior gradient covariance
        verts = np.array(list(itertools.product((-1.0, 1.0), repeat=D)))  # (2^D, D)
        hv = verts[None, :, :] * h[:, None, :]  # (C, V, D)
        quad = np.einsum("cvd,cde,cve->cv", hv, G, hv).max(1)
        std_hi = np.sqrt(var_c) + np.sqrt(np.maximum(quad, 0.0)) + rem
        std_hi = np.minimum(std_hi * (1 + 1e-9) + 1e-12, math.sqrt(sf2))
        return mean_lo, mean_hi, np.repeat(std_hi[:, None], self.n_outputs, axis=1)

    def error_radius(self, error_config: ErrorBoundConfig, lower, upper, splits=1) -> np.ndarray:
        _, _, sd = self.region_bounds(lower, upper, splits)
        return error_config.alpha(self)[None, :] * sd


def fit(dataset: Dataset, kernel: KernelConfig) -> GPModel:
    return GPModel.fit(dataset, kernel)
