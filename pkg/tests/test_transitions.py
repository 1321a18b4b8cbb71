import json

import mpmath as mp
import numpy as np
import pytest

from gpbarrier.geometry import Box, StateControlPartition
from gpbarrier.gp import ErrorBoundConfig, GPModel, KernelConfig
from gpbarrier.systems import NoiseModel, SystemModel, default_sampling_region, generate_dataset
from gpbarrier.transitions import (
    ImageBounds, SoundnessError, TransitionIntervalMatrix, build_matrix, finalize_rows, post_image, target_intervals,
    transition_interval, unsafe_interval,
)

LIN = SystemModel.linear(0.5 * np.eye(2), [[1.0], [1.0]], Box([0.0], [0.5]))
IDENT = SystemModel.linear(np.eye(2), np.zeros((2, 1)), Box([0.0], [1.0]))
NOISE = NoiseModel([0.01, 0.01])
SAFE = Box([0, 0], [1, 1])


def rect_prob(mu, sigma, lo, hi):
    """Gaussian rectangle probability in 40-digit arithmetic."""
    with mp.workdps(40):
        out = mp.mpf(1)
        for m, s, a, b in zip(mu, sigma, lo, hi):
            out *= mp.ncdf((b - m) / s) - mp.ncdf((a - m) / s)
        return float(out)


def point_image(mu, eps=0.0, delta=0.0):
    mu = np.atleast_2d(mu)
    return ImageBounds(mu, mu.copy(), np.full_like(mu, eps), delta)


def test_post_image_examples():
    assert post_image([0.3, 0.3], [0.4, 0.4], Box([0, 0], [0, 0])) == Box([0.3, 0.3], [0.4, 0.4])
    got = post_image([0.3, 0.3], [0.4, 0.4], Box([-0.05, -0.05], [0.05, 0.05]))
    assert np.allclose(got.lower, 0.25) and np.allclose(got.upper, 0.45)
    got = post_image([0.2, 0.1], [0.2, 0.1], Box([0.01, 0.02], [0.01, 0.02]))
    assert np.allclose(got.lower, [0.21, 0.12]) and np.allclose(got.upper, [0.21, 0.12])


@pytest.mark.parametrize("mu,lo,hi", [
    ([0.45, 0.45], [0.4, 0.4], [0.5, 0.5]),
    ([0.45, 0.41], [0.4, 0.4], [0.5, 0.5]),
    ([0.395, 0.45], [0.4, 0.4], [0.5, 0.5]),
    ([0.37, 0.52], [0.4, 0.4], [0.5, 0.5]),
])
def test_point_enclosure_gives_exact_rectangle_probability(mu, lo, hi):
    lower, upper = target_intervals(point_image(mu), NOISE, [lo], [hi])
    want = rect_prob(mu, [0.01, 0.01], lo, hi)
    assert lower[0, 0] == pytest.approx(want, rel=1e-9, abs=1e-15)
    assert upper[0, 0] == pytest.approx(want, rel=1e-9, abs=1e-15)


def test_exact_kernel_through_known_system_point_cell():
    z = np.array([0.3, 0.5, 0.2])
    mu = LIN.f(z[None, :2], z[None, 2:])[0]
    p = transition_interval(LIN, NOISE, Box(z, z), Box([0.3, 0.4], [0.4, 0.5]))
    assert p[0] == pytest.approx(p[1], rel=1e-12)
    assert p[0] == pytest.approx(rect_prob(mu, [0.01, 0.01], [0.3, 0.4], [0.4, 0.5]), rel=1e-9)


def test_deep_interior_target():
    img = ImageBounds(np.array([[0.45]]), np.array([[0.55]]), np.zeros((1, 1)))
    lower, _ = target_intervals(img, NoiseModel([0.01]), [[0.0]], [[1.0]])
    assert lower[0, 0] >= 1 - 1e-12


def test_far_target_upper_is_delta():
    img = ImageBounds(np.array([[0.3, 0.3]]), np.array([[0.4, 0.4]]), np.full((1, 2), 0.02), 0.05)
    # 6 sigma beyond the dilated post image
    _, upper = target_intervals(img, NOISE, [[0.5, 0.5]], [[0.6, 0.6]])
    assert upper[0, 0] <= 0.05 + 1e-9


def test_unsafe_interval_examples():
    cell = Box([0.9, 0.9, 0.0], [1.0, 1.0, 0.0])  # 0.5 x maps to [0.45, 0.5]^2, deep inside
    lo, hi = unsafe_interval(LIN, NOISE, cell, SAFE)
    assert 0.0 <= lo <= hi <= 1e-9
    # entirely outside: identity dynamics on a box beyond the safe set
    lo, hi = unsafe_interval(IDENT, NOISE, Box([2.0, 2.0, 0.0], [2.1, 2.1, 0.0]), SAFE)
    assert lo == pytest.approx(1.0, abs=1e-12) and hi == pytest.approx(1.0, abs=1e-12)


def test_unsafe_interval_delta_slack():
    gp = _gp()
    cfg = ErrorBoundConfig(0.05, (1e-6, 1e-6), gamma=0.0, sigma=1e-6)
    lo, hi = unsafe_interval(gp, NOISE, Box([0.9, 0.9, 0.0], [0.95, 0.95, 0.05]), SAFE, cfg)
    assert hi <= 0.05 + 1e-9


def test_tiny_exit_probability_keeps_precision():
    cell = Box([0.99, 0.99, 0.5], [0.99, 0.99, 0.5])  # maps to (0.995, 0.995), half a sigma from the edge
    lo, hi = unsafe_interval(LIN, NOISE, cell, SAFE)
    inside = rect_prob([0.995, 0.995], [0.01, 0.01], [0, 0], [1, 1])
    assert lo == pytest.approx(1 - inside, rel=1e-9) and hi == pytest.approx(1 - inside, rel=1e-9)
    far = Box([0.5, 0.5, 0.0], [0.5, 0.5, 0.0])  # maps to 0.25: 25 sigma from the nearest face
    lo, hi = unsafe_interval(LIN, NOISE, far, SAFE)
    with mp.workdps(40):
        want = float(1 - (1 - 2 * mp.ncdf(-25)) ** 2)
    assert hi == pytest.approx(want, rel=1e-6)


def test_absorbing_single_cell():
    part = StateControlPartition.build(Box([-1, -1], [2, 2]), Box([0, 0], [1, 1]), 3.0, Box([0.0], [1.0]), 1)
    sm = SystemModel.linear(0.0 * np.eye(2), np.zeros((2, 1)), Box([0.0], [1.0]))
    m = build_matrix(sm, NoiseModel([1e-6, 1e-6]), part)
    assert m.lower[0, 0] == pytest.approx(1.0, abs=1e-12) and m.upper[0, 1] <= 1e-12


def test_linear_case_study_shape():
    part = StateControlPartition.build(SAFE, Box([0.4, 0.4], [0.5, 0.5]), 0.1, Box([0.0], [0.5]), 5)
    m = build_matrix(LIN, NOISE, part)
    assert m.lower.shape == (500, 101) and m.upper.shape == (500, 101)
    assert np.all(m.lower <= m.upper)
    assert np.all(m.lower.sum(1) <= 1 + 1e-9) and np.all(m.upper.sum(1) >= 1 - 1e-9)


def _gp(M=200, seed=0):
    reg = default_sampling_region(LIN, SAFE, 0.1)
    ds = generate_dataset(LIN, NOISE, reg, M, seed=seed)
    return GPModel.fit(ds, KernelConfig(1.0, (2.0, 2.0, 2.0), 1e-4))


def test_monte_carlo_containment_of_learned_kernel():
    """50 random (cell, target) pairs; 20 points per cell; kernel of the learned mean."""
    gp = _gp()
    cfg = ErrorBoundConfig(1e-3, (1.0, 1.0))
    part = StateControlPartition.build(SAFE, Box([0.4, 0.4], [0.5, 0.5]), 0.1, Box([0.0], [0.5]), 5)
    rng = np.random.default_rng(0)
    z_lo, z_hi = part.pair_boxes()
    draws = 20_000
    checks = 0
    for _ in range(50):
        r = int(rng.integers(len(z_lo)))
        cell = Box(z_lo[r], z_hi[r])
        z = rng.uniform(z_lo[r], z_hi[r], (20, 3))
        mean, _ = gp.posterior(z)
        # target: the state cell hit by the mean at a random point, or a neighbour
        j = part.states.locate(np.clip(mean[0] + rng.choice([-0.1, 0, 0.1], 2), 0, 1 - 1e-9))
        target = part.states.cell(j)
        plo, phi = transition_interval(gp, NOISE, cell, target, cfg, splits=2)
        for mu in mean:
            w = rng.normal(0, 0.01, (draws, 2))
            hit = np.mean(np.all((mu + w >= target.lower) & (mu + w <= target.upper), axis=1))
            se = np.sqrt(max(hit * (1 - hit), 1.0 / draws) / draws)
            assert plo - 3 * se <= hit <= phi + 3 * se
            checks += 1
    assert checks == 1000


def test_monte_carlo_containment_known_system_centre():
    part = StateControlPartition.build(SAFE, Box([0.4, 0.4], [0.5, 0.5]), 0.1, Box([0.0], [0.5]), 5)
    m = build_matrix(LIN, NOISE, part)
    rng = np.random.default_rng(1)
    z_lo, z_hi = part.pair_boxes()
    for r in rng.choice(len(z_lo), 10, replace=False):
        c = 0.5 * (z_lo[r] + z_hi[r])
        x = LIN.f(c[None, :2], c[None, 2:])[0] + rng.normal(0, 0.01, (100_000, 2))
        idx = part.states.locate_many(x)
        counts = np.bincount(np.where(idx < 0, part.n_states, idx), minlength=part.n_states + 1) / len(x)
        se = np.sqrt(np.maximum(counts * (1 - counts), 1e-5) / len(x))
        assert np.all(counts >= m.lower[r] - 3 * se) and np.all(counts <= m.upper[r] + 3 * se)


def test_enlarging_target_is_monotone():
    gp = _gp()
    cfg = ErrorBoundConfig(1e-3, (1.0, 1.0))
    cell = Box([0.4, 0.4, 0.1], [0.5, 0.5, 0.2])
    small = transition_interval(gp, NOISE, cell, Box([0.3, 0.3], [0.4, 0.4]), cfg)
    big = transition_interval(gp, NOISE, cell, Box([0.28, 0.25], [0.45, 0.4]), cfg)
    assert big[0] >= small[0] and big[1] >= small[1]


def test_gp_matrix_rows_feasible():
    gp = _gp(100)
    part = StateControlPartition.build(SAFE, Box([0.4, 0.4], [0.5, 0.5]), 0.2, Box([0.0], [0.5]), 2)
    m = build_matrix(gp, NOISE, part, ErrorBoundConfig(1e-3, (1.0, 1.0)), splits=2)
    m.check()
    assert m.lower.shape == (50, 26)


def test_finalize_rejects_lower_sum_above_one():
    with pytest.raises(SoundnessError):
        finalize_rows(np.array([[0.6, 0.6]]), np.array([[0.7, 0.7]]), 1, 1)


def test_finalize_widens_unsafe_upper():
    m = finalize_rows(np.array([[0.2, 0.0]]), np.array([[0.5, 0.3]]), 1, 1)
    assert m.upper.sum() >= 1.0 and m.upper[0, 0] == 0.5


def test_json_roundtrip(tmp_path):
    part = StateControlPartition.build(SAFE, Box([0.4, 0.4], [0.5, 0.5]), 0.2, Box([0.0], [0.5]), 2)
    m = build_matrix(LIN, NOISE, part)
    path = tmp_path / "b.json"
    m.to_json(path)
    back = TransitionIntervalMatrix.from_json(json.loads(path.read_text()))
    assert np.array_equal(back.lower, m.lower) and np.array_equal(back.upper, m.upper)
    doc = json.loads(path.read_text())
    assert doc["rows"][3]["i"] == 1 and doc["rows"][3]["l"] == 1
    assert doc["rows"][0]["dest"][-1] == -1 or m.upper[0, -1] == 0


def test_row_indexing():
    m = TransitionIntervalMatrix(np.zeros((6, 4)), np.ones((6, 4)), 3, 2)
    assert m.row_index(2, 1) == 5
    with pytest.raises(ValueError):
        TransitionIntervalMatrix(np.zeros((6, 3)), np.ones((6, 3)), 3, 2)
