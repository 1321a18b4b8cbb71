import itertools
import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gpbarrier import _kernels
from gpbarrier.gp import ErrorBoundConfig, GPModel, KernelConfig, NumericalError, alpha, taylor_remainder
from gpbarrier.systems import Dataset

# frozen from direct evaluation of (1 + 0.01 * sqrt(2 * (2 + 1 + ln 40))) * 0.1
EPS_EXAMPLE = 0.10365756188030058


def se(a, b, sf2, ls):
    d = (np.asarray(a) - np.asarray(b)) / ls
    return sf2 * math.exp(-0.5 * float(d @ d))


def random_model(seed, M=40, D=3, n=2):
    rng = np.random.default_rng(seed)
    Z = rng.uniform(0, 1, (M, D))
    Y = np.stack([np.sin(3 * Z[:, 0]) + Z[:, 1] * Z[:, 2], np.cos(2 * Z[:, 1]) - Z[:, 0]], axis=1)[:, :n]
    Y = Y + 0.01 * rng.standard_normal(Y.shape)
    ls = rng.uniform(0.3, 1.5, D)
    return GPModel(Z, Y, KernelConfig(rng.uniform(0.5, 2.0), tuple(ls), 1e-4))


def test_single_point_posterior():
    kern = KernelConfig(1.7, (0.5, 0.8), 0.01)
    z1, y1 = np.array([0.2, -0.3]), 0.9
    gp = GPModel(z1[None], [[y1]], kern)
    mean, _ = gp.posterior_at(z1)
    assert math.isclose(mean[0], 1.7 / (1.7 + 0.01) * y1, rel_tol=1e-12)


def test_single_point_posterior_away_from_data():
    kern = KernelConfig(1.0, (0.5,), 0.04)
    gp = GPModel([[0.0]], [[2.0]], kern)
    z = 0.3
    k = se([z], [0.0], 1.0, 0.5)
    mean, std = gp.posterior_at([z])
    assert math.isclose(mean[0], k * 2.0 / 1.04, rel_tol=1e-12)
    assert math.isclose(std[0], math.sqrt(1.0 - k * k / 1.04), rel_tol=1e-12)


def test_empty_dataset_rejected():
    with pytest.raises(ValueError):
        GPModel.fit(Dataset(np.zeros((0, 2)), np.zeros((0, 1)), np.zeros((0, 2))), KernelConfig(1.0, (1.0,), 1e-4))


def test_prior_recovered_far_from_data():
    gp = random_model(0)
    mean, std = gp.posterior_at(np.full(3, 100.0))
    assert np.allclose(mean, 0, atol=1e-6)
    assert np.allclose(std, gp.signal_std, atol=1e-6)


def test_near_interpolation_with_jitter_only():
    rng = np.random.default_rng(1)
    Z = rng.uniform(0, 1, (15, 2))
    Y = np.sin(4 * Z[:, :1])
    gp = GPModel(Z, Y, KernelConfig(1.0, (0.3, 0.3), 0.0))
    mean, _ = gp.posterior(Z)
    assert np.max(np.abs(mean - Y)) < 1e-4


def test_symmetric_dataset_midpoint_mean_zero():
    gp = GPModel([[-1.0, 0.5], [1.0, 0.5]], [[0.7], [-0.7]], KernelConfig(1.0, (1.0, 1.0), 1e-3))
    mean, _ = gp.posterior_at([0.0, 0.5])
    assert abs(mean[0]) < 1e-14


def test_fit_dataset_size():
    rng = np.random.default_rng(2)
    ds = Dataset(rng.random((500, 2)), rng.random((500, 1)), rng.random((500, 2)))
    gp = GPModel.fit(ds, KernelConfig(1.0, (1.0,), 1e-4))
    assert gp.Z.shape == (500, 3) and gp.n_outputs == 2


def test_singular_kernel_raises():
    Z = np.zeros((5, 1))  # repeated inputs with a huge lengthscale
    with pytest.raises(NumericalError):
        GPModel(Z, np.arange(5.0)[:, None], KernelConfig(1e12, (1.0,), 0.0))


def test_information_gain_matches_logdet():
    gp = random_model(3)
    K = gp.kernel(gp.Z, gp.Z)
    _, logdet = np.linalg.slogdet(np.eye(len(K)) + K / gp.kernel.noise_variance)
    assert math.isclose(gp.information_gain(), 0.5 * logdet, rel_tol=1e-9)


def test_rkhs_norm_matches_direct_solve():
    gp = random_model(4)
    K = gp.kernel(gp.Z, gp.Z)
    w = np.linalg.solve(K + gp.jitter * np.eye(len(K)), gp.Y)
    assert np.allclose(gp.rkhs_norms(), np.sqrt(np.einsum("mi,mi->i", w, K @ w)), rtol=1e-8)


def test_variance_bounded_by_prior():
    for seed in range(3):
        gp = random_model(seed)
        z = np.random.default_rng(seed).uniform(-1, 2, (1000, 3))
        _, std = gp.posterior(z)
        assert np.all(std >= 0) and np.all(std <= gp.signal_std + 1e-12)


def test_information_monotonicity():
    gp = random_model(5, M=30)
    rng = np.random.default_rng(5)
    q = rng.uniform(0, 1, (200, 3))
    _, before = gp.posterior(q)
    Z2 = np.vstack([gp.Z, rng.uniform(0, 1, (1, 3))])
    Y2 = np.vstack([gp.Y, [[0.0, 0.0]]])
    _, after = GPModel(Z2, Y2, gp.kernel).posterior(q)
    assert np.all(after <= before + 1e-8)


# -- error radius ---------------------------------------------------------------

def test_error_radius_example():
    a = alpha(1.0, 0.01, 2.0, 0.05, 2)
    assert math.isclose(float(a) * 0.1, EPS_EXAMPLE, rel_tol=1e-14)


def test_alpha_monotone_in_delta():
    vals = [float(alpha(1.0, 0.01, 2.0, d, 2)) for d in (1e-6, 1e-3, 0.1, 0.5, 0.999999)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    assert vals[-1] > 1.0 + 0.01 * math.sqrt(2 * 3.0)


@pytest.mark.parametrize("delta", [0.0, 1.0, -0.1, 1.5])
def test_alpha_delta_out_of_range(delta):
    with pytest.raises(ValueError):
        alpha(1.0, 0.01, 2.0, delta, 2)
    with pytest.raises(ValueError):
        ErrorBoundConfig(delta, (1.0,))


def test_error_config_uses_model_gamma_and_noise():
    gp = random_model(6)
    cfg = ErrorBoundConfig(0.01, (2.0, 3.0))
    want = np.array([2.0, 3.0]) + 0.01 * math.sqrt(2 * (gp.information_gain() + 1 + math.log(2 / 0.01)))
    assert np.allclose(cfg.alpha(gp), want)
    fixed = ErrorBoundConfig(0.01, (2.0,), gamma=5.0, sigma=0.1)
    assert np.allclose(fixed.alpha(gp), 2.0 + 0.1 * math.sqrt(2 * (6 + math.log(200))))


def test_zero_std_gives_zero_radius():
    assert float(alpha(1.0, 0.01, 2.0, 0.05, 2)) * 0.0 == 0.0


# -- Taylor remainder -------------------------------------------------------------

def _remainder_exact(t):
    t = mp.mpf(t)
    return mp.sqrt(2 * (1 - mp.exp(-t / 2)) - 2 * t * mp.exp(-t / 2) + t)


@pytest.mark.parametrize("t", [1e-8, 1e-4, 0.01, 0.049, 0.05, 0.3, 2.0, 50.0])
def test_taylor_remainder_overestimates_tightly(t):
    with mp.workdps(40):
        exact = float(_remainder_exact(t))
    got = float(taylor_remainder(t))
    assert got >= exact
    assert got <= exact * (1 + 1e-6) + 1e-150


def test_taylor_remainder_is_the_feature_map_residual():
    # ||phi(c+h) - phi(c) - Dphi(c) h||^2 expanded with kernel evaluations, unit SE kernel
    rng = np.random.default_rng(0)
    for _ in range(20):
        c, h = rng.standard_normal(3), 0.5 * rng.standard_normal(3)
        t = float(h @ h)
        k = math.exp(-0.5 * t)
        r2 = 1 + 1 - 2 * k + t - 2 * (h @ h) * k
        assert math.isclose(float(taylor_remainder(t)) ** 2, r2, rel_tol=1e-6, abs_tol=1e-15)


# -- box enclosures ----------------------------------------------------------------

def _grid(lo, hi, k):
    axes = [np.linspace(a, b, k) for a, b in zip(lo, hi)]
    return np.array(list(itertools.product(*axes)))


def test_point_box_collapses():
    gp = random_model(7)
    z = np.array([0.3, 0.6, 0.2])
    mlo, mhi, shi = gp.region_bounds(z, z)
    mean, std = gp.posterior_at(z)
    assert np.allclose(mlo[0], mean, atol=1e-9) and np.allclose(mhi[0], mean, atol=1e-9)
    assert np.allclose(shi[0], std, atol=1e-9)


def test_dense_grid_oracle():
    gp = random_model(8)
    lo, hi = np.array([0.2, 0.4, 0.1]), np.array([0.35, 0.5, 0.3])
    pts = _grid(lo, hi, 50)
    mean, std = gp.posterior(pts)
    for splits in (1, 2, (1, 3, 2)):
        mlo, mhi, shi = gp.region_bounds(lo, hi, splits)
        assert np.all(mean >= mlo - 1e-12) and np.all(mean <= mhi + 1e-12)
        assert np.all(std <= shi + 1e-12)


def test_random_cells_sound():
    rng = np.random.default_rng(9)
    for k in range(100):
        gp = random_model(100 + k % 10, M=25)
        lo = rng.uniform(-0.2, 1.0, 3)
        hi = lo + rng.uniform(0.0, 0.4, 3)
        pts = np.vstack([_grid(lo, hi, 6), rng.uniform(lo, hi, (200, 3))])
        mean, std = gp.posterior(pts)
        mlo, mhi, shi = gp.region_bounds(lo, hi, 1 + k % 3)
        assert np.all(mean >= mlo - 1e-12) and np.all(mean <= mhi + 1e-12)
        assert np.all(std <= shi + 1e-12)


def test_containment_monotone():
    gp = random_model(10)
    rng = np.random.default_rng(10)
    for _ in range(50):
        lo = rng.uniform(0, 0.8, 3)
        hi = lo + rng.uniform(0.05, 0.3, 3)
        a = rng.uniform(0, 0.5, 3) * (hi - lo)
        sub_lo, sub_hi = lo + a, hi - rng.uniform(0, 0.5, 3) * (hi - lo)
        B = gp.region_bounds(lo, hi)
        A = gp.region_bounds(sub_lo, sub_hi)
        assert np.all(A[0] >= B[0] - 1e-12) and np.all(A[1] <= B[1] + 1e-12)
        assert np.all(A[2] <= B[2] + 1e-12)


def test_subdivision_tightens():
    gp = random_model(11)
    lo, hi = np.array([0.1, 0.1, 0.1]), np.array([0.5, 0.5, 0.5])
    w1 = np.subtract(*gp.region_bounds(lo, hi, 1)[1::-1])
    w3 = np.subtract(*gp.region_bounds(lo, hi, 3)[1::-1])
    assert np.all(w3 <= w1 + 1e-12)


def test_error_radius_scales_std_bound():
    gp = random_model(12)
    cfg = ErrorBoundConfig(0.05, (1.0, 1.0))
    lo, hi = np.array([0.1, 0.1, 0.1]), np.array([0.2, 0.2, 0.2])
    eps = gp.error_radius(cfg, lo, hi)
    assert np.allclose(eps, cfg.alpha(gp) * gp.region_bounds(lo, hi)[2])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_numba_and_numpy_interval_sums_agree(seed):
    rng = np.random.default_rng(seed)
    lo = rng.uniform(0, 1, (20, 3))
    hi = lo + rng.uniform(0, 0.3, (20, 3))
    args = (lo, hi, rng.uniform(0, 1, (30, 3)), rng.standard_normal((30, 2)), rng.uniform(0.2, 2, 3), 1.3)
    for a, b in zip(_kernels.interval_sums_numba(*args), _kernels.interval_sums_numpy(*args)):
        assert np.allclose(a, b, rtol=1e-12, atol=1e-12)


def test_kernel_config_validation():
    with pytest.raises(ValueError):
        KernelConfig(0.0, (1.0,), 1e-4)
    with pytest.raises(ValueError):
        KernelConfig(1.0, (0.0,), 1e-4)
    with pytest.raises(ValueError):
        KernelConfig(1.0, (1.0,), -1.0)
