import numpy as np
import pytest

from lowdose.phantoms import (
    PHANTOMS,
    Change,
    Scenario,
    base_phantom,
    change_mask,
    disc,
    generate_phantom,
    shepp_logan,
)


class TestPhantoms:
    @pytest.mark.parametrize("name", sorted(PHANTOMS))
    def test_nonnegative_deterministic(self, name):
        a = PHANTOMS[name](32, 3)
        assert a.shape == (32, 32) and a.min() >= 0 and a.max() > 0
        np.testing.assert_array_equal(a, PHANTOMS[name](32, 3))

    def test_shepp_logan_peak(self):
        assert shepp_logan(64).max() == pytest.approx(1.0)

    def test_disc_area(self):
        d = disc(64, 31.5, 31.5, 10.0)
        assert d.sum() == pytest.approx(np.pi * 100, rel=0.01)


class TestScenario:
    def test_mass_normalised(self):
        spec = Scenario(size=64, mass=75.0)
        assert base_phantom(spec).sum() == pytest.approx(75.0, abs=1e-9)

    def test_peak_mode(self):
        assert base_phantom(Scenario(size=32, mass=None, peak=0.5)).max() == pytest.approx(0.5)

    def test_default_dose_ladder(self):
        assert Scenario().doses == (20.0, 40.0, 80.0, 160.0, 320.0, 620.0)

    def test_no_change_test_is_template_mean(self):
        spec = Scenario(size=32)
        mean = np.mean([generate_phantom(spec, k) for k in range(spec.n_templates)], axis=0)
        np.testing.assert_allclose(generate_phantom(spec, "test"), mean, atol=1e-12)

    def test_removed_disc(self):
        c = Change(row=12, col=14, radius=4, delta=-0.2)
        spec = Scenario(size=32, mass=None, changes=(c,))
        plain = Scenario(size=32, mass=None)
        diff = generate_phantom(spec, "test") - generate_phantom(plain, "test")
        footprint = disc(32, 12, 14, 4) > 0
        assert not diff[~footprint].any()
        # removal is clipped at zero where the object is already dark
        assert np.all(diff[footprint] <= 0) and diff.sum() < 0
        assert change_mask(spec).sum() == pytest.approx(np.pi * 16, rel=0.15)

    def test_changes_never_touch_templates(self):
        c = Change(row=12, col=14, radius=4, delta=0.3)
        a = Scenario(size=32, changes=(c,))
        b = Scenario(size=32)
        for k in range(a.n_templates):
            np.testing.assert_array_equal(generate_phantom(a, k), generate_phantom(b, k))

    def test_templates_differ(self):
        spec = Scenario(size=32)
        assert not np.allclose(generate_phantom(spec, 0), generate_phantom(spec, 1))

    @pytest.mark.parametrize(
        "kw",
        [
            dict(phantom="brain"),
            dict(n_templates=1),
            dict(gaussian_kind="snr"),
            dict(changes=(Change(2, 2, 5, 0.1),)),
            dict(changes=(Change(10, 10, 3, 0.1), Change(12, 12, 3, -0.1))),
            dict(changes=(Change(10, 10, -1, 0.1),)),
            dict(lambda_grid=(0.0, 1.0)),
            dict(calibration_seed=1),
        ],
    )
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            Scenario(size=32, **kw)

    def test_rejects_tiny(self):
        with pytest.raises(ValueError):
            Scenario(size=4)

    def test_template_index(self):
        with pytest.raises(ValueError):
            generate_phantom(Scenario(size=16), 7)

    def test_hash(self):
        a = Scenario(size=32)
        assert a.hash() == Scenario(size=32).hash()
        assert a.hash() != Scenario(size=32, n_views=199).hash()
        assert a.hash() != Scenario(size=32, changes=({"row": 10, "col": 10, "radius": 2, "delta": 0.1},)).hash()
        assert a.hash() != Scenario(size=32, lambda1={"nlls": 1.0}).hash()
        assert Scenario(size=32, lambda1={"nlls": 1}).hash() == Scenario(size=32, lambda1={"nlls": 1.0}).hash()
