import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from psupmix.errors import DataError, ShapeError
from psupmix.metrics import delta, e_min, frechet, params_pool
from psupmix.ps_codec import PsParams


def random_params(rng, frames=6):
    return PsParams(rng.uniform(-30, 30, (34, frames)), rng.uniform(-1, 1, (34, frames)))


class TestDelta:
    def test_iid_clipping_region(self):
        assert delta(30.0, 25.0, "iid") == 0.0

    def test_iid_weighting(self):
        assert delta(10.0, 0.0, "iid") == pytest.approx(1.5)

    def test_ic_absolute(self):
        assert delta(1.0, -1.0, "ic") == 2.0

    @settings(max_examples=30, deadline=None)
    @given(x=st.floats(-60, 60), y=st.floats(-60, 60))
    def test_symmetric(self, x, y):
        assert delta(x, y, "iid") == delta(y, x, "iid")
        assert delta(x / 60, y / 60, "ic") == delta(y / 60, x / 60, "ic")

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            delta(0.0, 0.0, "ipd")


class TestEMin:
    def test_zero_when_truth_included(self, rng):
        truth = random_params(rng)
        samples = [random_params(rng) for _ in range(4)] + [truth]
        assert e_min(truth, samples) == 0.0

    def test_monotone_in_k(self, rng):
        truth = random_params(rng)
        samples = [random_params(rng) for _ in range(8)]
        values = [e_min(truth, samples[:k]) for k in range(1, 9)]
        assert all(a >= b for a, b in zip(values, values[1:]))

    def test_hand_computed_case(self):
        # 1 band, 2 frames, one sample; deltas: iid (0, 1.5), ic (2, 0.5)
        truth = PsParams(np.array([[25.0, 10.0]]), np.array([[1.0, 0.0]]))
        sample = PsParams(np.array([[30.0, 0.0]]), np.array([[-1.0, 0.5]]))
        assert e_min(truth, [sample]) == pytest.approx(4.0 / 4.0)
        assert e_min(truth, [sample], raw_sum=True) == pytest.approx(4.0)

    def test_empty_samples(self, rng):
        with pytest.raises(DataError):
            e_min(random_params(rng), [])

    def test_nonnegative(self, rng):
        truth = random_params(rng)
        assert e_min(truth, [random_params(rng)]) >= 0.0


class TestFrechet:
    def test_self_distance_zero(self, rng):
        pool = rng.standard_normal((500, 68))
        assert frechet(pool, pool) < 1e-6

    def test_symmetry(self, rng):
        a = rng.standard_normal((400, 10))
        b = 1.5 * rng.standard_normal((400, 10)) + 0.3
        assert frechet(a, b) == pytest.approx(frechet(b, a), rel=1e-9)

    def test_mean_shift_reduction(self, rng):
        pool = rng.standard_normal((2000, 20))
        shift = rng.uniform(-1, 1, 20)
        assert frechet(pool, pool + shift) == pytest.approx(np.sum(shift ** 2), rel=1e-6)

    def test_gaussian_closed_form(self, rng):
        # Oracle: diagonal Gaussians have D_F = |mu_a - mu_b|^2
        # + sum (sqrt(a_i) - sqrt(b_i))^2.
        dims = 68
        mu_a = rng.uniform(-1, 1, dims)
        mu_b = rng.uniform(-1, 1, dims)
        var_a = rng.uniform(0.5, 2.0, dims)
        var_b = rng.uniform(0.5, 2.0, dims)
        n = 10_000
        pool_a = rng.standard_normal((n, dims)) * np.sqrt(var_a) + mu_a
        pool_b = rng.standard_normal((n, dims)) * np.sqrt(var_b) + mu_b
        expected = np.sum((mu_a - mu_b) ** 2) + np.sum(
            (np.sqrt(var_a) - np.sqrt(var_b)) ** 2
        )
        assert frechet(pool_a, pool_b) == pytest.approx(expected, rel=0.02)

    def test_monotone_along_interpolation_path(self, rng):
        target = rng.standard_normal((3000, 8))
        source = 2.0 * rng.standard_normal((3000, 8)) + 1.0
        distances = []
        for alpha in (0.0, 0.25, 0.5, 0.75):
            mixed = (1 - alpha) * source + alpha * target[: len(source)]
            distances.append(frechet(target, mixed))
        assert all(a > b for a, b in zip(distances, distances[1:]))

    def test_degenerate_pool_rejected(self, rng):
        with pytest.raises(DataError):
            frechet(rng.standard_normal((1, 5)), rng.standard_normal((10, 5)))

    def test_shape_mismatch(self, rng):
        with pytest.raises(ShapeError):
            frechet(rng.standard_normal((10, 5)), rng.standard_normal((10, 6)))


def test_params_pool_concatenates_frames(rng):
    a = random_params(rng, frames=3)
    b = random_params(rng, frames=5)
    pool = params_pool([a, b])
    assert pool.shape == (8, 68)
    assert np.array_equal(pool[:3], a.joined().T)
