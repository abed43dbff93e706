import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lowdose.sparsity import HaarBasis, IdentityBasis, haar2, ihaar2, make_basis, soft_threshold


class TestHaar:
    def test_zero(self):
        b = HaarBasis(16)
        assert not b.synthesize(np.zeros(b.coef_shape)).any()
        assert not b.analyze(np.zeros((16, 16))).any()

    def test_coarsest_coefficient_is_constant(self):
        # one unit of the scaling coefficient spreads evenly over 4x4 pixels,
        # with orthonormal weight 1/side
        theta = np.zeros((4, 4))
        theta[0, 0] = 3.0
        np.testing.assert_allclose(ihaar2(theta), np.full((4, 4), 3.0 / 4), atol=1e-15)

    def test_hand_computed_2x2(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]])
        # average, row detail, column detail, diagonal detail, each /2
        np.testing.assert_allclose(haar2(x), [[5.0, -1.0], [-2.0, 0.0]], atol=1e-15)

    def test_requires_power_of_two(self):
        with pytest.raises(ValueError):
            haar2(np.zeros((6, 6)))
        with pytest.raises(ValueError):
            ihaar2(np.zeros((4, 8)))

    def test_orthonormal_round_trip_many(self, rng):
        b = HaarBasis(16)
        imgs = rng.normal(size=(1000, 16, 16))
        err = max(np.abs(b.synthesize(b.analyze(x)) - x).max() for x in imgs)
        assert err <= 1e-10

    def test_norm_preserved(self, rng):
        x = rng.normal(size=(32, 32))
        assert np.linalg.norm(haar2(x)) == pytest.approx(np.linalg.norm(x), rel=1e-12)

    def test_padding(self, rng):
        b = HaarBasis(20)
        assert b.coef_shape == (32, 32) and b.padding == 12
        x = rng.normal(size=(20, 20))
        np.testing.assert_allclose(b.synthesize(b.analyze(x)), x, atol=1e-12)
        assert b.synthesize(b.analyze(x)).shape == (20, 20)

    def test_adjoint_of_cropped_synthesis(self, rng):
        b = HaarBasis(12)
        theta = rng.normal(size=b.coef_shape)
        img = rng.normal(size=(12, 12))
        assert np.vdot(b.synthesize(theta), img) == pytest.approx(np.vdot(theta, b.adjoint_synthesize(img)), rel=1e-12)

    def test_piecewise_constant_is_sparser(self, rng):
        b = HaarBasis(32)
        blocky = np.zeros((32, 32))
        blocky[8:24, 4:20] = 1.0
        blocky[2:6, 20:30] = 2.0
        noise = rng.normal(size=(32, 32))
        noise *= np.linalg.norm(blocky) / np.linalg.norm(noise)
        zeros = lambda x: int((np.abs(b.analyze(x)) < 1e-8).sum())
        assert zeros(blocky) > zeros(noise)

    def test_make_basis(self):
        assert isinstance(make_basis("haar", 8), HaarBasis)
        assert isinstance(make_basis("identity", 8), IdentityBasis)
        with pytest.raises(ValueError):
            make_basis("db4", 8)


class TestSoftThreshold:
    def test_identity_at_zero(self, rng):
        c = rng.normal(size=50)
        np.testing.assert_array_equal(soft_threshold(c, 0.0), c)

    @pytest.mark.parametrize("c, t, expected", [(1.5, 1.0, 0.5), (-2.0, 0.5, -1.5), (0.3, 0.5, 0.0)])
    def test_values(self, c, t, expected):
        assert soft_threshold(c, t) == pytest.approx(expected)

    def test_negative_threshold(self):
        with pytest.raises(ValueError):
            soft_threshold(1.0, -0.1)

    @settings(max_examples=60, deadline=None)
    @given(c=st.floats(-5, 5), t=st.floats(0, 3))
    def test_minimises_scalar_problem(self, c, t):
        z = np.linspace(-8, 8, 160001)
        f = 0.5 * (c - z) ** 2 + t * np.abs(z)
        zs = float(soft_threshold(c, t))
        assert 0.5 * (c - zs) ** 2 + t * abs(zs) <= f.min() + 1e-9
        assert abs(zs - z[np.argmin(f)]) <= 2e-4


class TestProjectNonneg:
    def test_feasible_unchanged(self, rng):
        b = HaarBasis(16)
        theta = b.analyze(rng.uniform(size=(16, 16)))
        np.testing.assert_allclose(b.project_nonneg(theta), theta, atol=1e-10)

    def test_negative_constant(self):
        b = HaarBasis(8)
        np.testing.assert_allclose(b.project_nonneg(b.analyze(-np.ones((8, 8)))), 0.0, atol=1e-15)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), side=st.sampled_from([8, 12, 16]))
    def test_feasible_and_idempotent(self, seed, side):
        b = HaarBasis(side)
        theta = np.random.default_rng(seed).normal(size=b.coef_shape)
        once = b.project_nonneg(theta)
        assert b.synthesize(once).min() >= -1e-12
        np.testing.assert_allclose(b.project_nonneg(once), once, atol=1e-12)
