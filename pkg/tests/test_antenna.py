import numpy as np
import pytest

from lenseek.antenna import (
    AntennaLayout,
    build_manifold,
    default_layout,
    hemisphere_grid,
    load_layout_csv,
    sample_template,
    save_layout_csv,
)
from lenseek.errors import ConfigError, ParseError
from lenseek.geometry import Direction, HemisphereAngles, dir_from_angles
from lenseek.lens import synth_gain_psi, synth_template


@pytest.fixture(scope="module")
def template():
    return synth_template()


@pytest.fixture(scope="module")
def layout():
    return default_layout()


class TestDefaultLayout:
    def test_ten_elements(self, layout):
        assert layout.n == 10

    def test_zenith_first(self, layout):
        assert layout.locations[0].theta_deg == pytest.approx(90.0)

    def test_ring_populations(self, layout):
        thetas = [round(loc.theta_deg) for loc in layout.locations]
        assert thetas.count(60) == 3
        assert thetas.count(30) == 6

    def test_pairwise_distinct(self, layout):
        vecs = layout.unit_vectors()
        dots = np.clip(vecs @ vecs.T, -1, 1)
        np.fill_diagonal(dots, -1.0)
        assert np.degrees(np.arccos(dots.max())) > 1.0

    def test_too_few_antennas_rejected(self):
        with pytest.raises(ConfigError):
            AntennaLayout((HemisphereAngles.from_degrees(90, 0),))

    def test_coincident_rejected(self):
        with pytest.raises(ConfigError):
            AntennaLayout(
                (
                    HemisphereAngles.from_degrees(45, 10),
                    HemisphereAngles.from_degrees(45, 10.5),
                )
            )


class TestLayoutCsv:
    def test_round_trip(self, tmp_path, layout):
        path = tmp_path / "layout.csv"
        save_layout_csv(layout, path)
        back = load_layout_csv(path)
        assert back.n == layout.n
        for a, b in zip(back.locations, layout.locations):
            assert a.theta == pytest.approx(b.theta, abs=1e-12)
            assert a.phi == pytest.approx(b.phi, abs=1e-12)

    def test_malformed_row(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("theta_deg,phi_deg\n90,zero\n")
        with pytest.raises(ParseError, match="row 2"):
            load_layout_csv(path)


class TestSampleTemplate:
    def test_zenith_uses_layout_directly(self, template, layout):
        s = sample_template(template, layout, Direction(0.0, 0.0, 1.0))
        for i, loc in enumerate(layout.locations):
            direct = float(template.lookup_deg(loc.theta_deg, loc.phi_deg))
            assert s[i] == pytest.approx(direct, abs=1e-9)

    def test_zenith_antenna_dominates_at_zenith(self, template, layout):
        s = sample_template(template, layout, Direction(0.0, 0.0, 1.0))
        assert int(np.argmax(s)) == 0

    def test_angular_distance_oracle(self, template, layout):
        # for the axially symmetric lobe the sampled vector must equal the
        # closed-form gain at the angle between incidence and each antenna,
        # up to bilinear interpolation error (largest at the floor kink)
        rng = np.random.default_rng(123)
        ants = layout.unit_vectors()
        for _ in range(50):
            v = rng.normal(size=3)
            v[2] = abs(v[2])
            u = v / np.linalg.norm(v)
            s = sample_template(template, layout, Direction.from_array(u, normalize=True))
            psi = np.degrees(np.arccos(np.clip(ants @ u, -1, 1)))
            expected = synth_gain_psi(psi)
            near_kink = np.abs(expected - (-10.0)) < 0.5
            assert np.allclose(s[~near_kink], expected[~near_kink], atol=2e-3)
            assert np.allclose(s[near_kink], expected[near_kink], atol=0.1)

    def test_three_fold_symmetry(self, template, layout):
        # rotating both the incidence and the array by 120 deg in azimuth
        # permutes ring elements, leaving the sorted vector unchanged
        u1 = dir_from_angles(HemisphereAngles.from_degrees(47.0, 13.0))
        u2 = dir_from_angles(HemisphereAngles.from_degrees(47.0, 133.0))
        s1 = sample_template(template, layout, u1)
        s2 = sample_template(template, layout, u2)
        assert np.allclose(np.sort(s1), np.sort(s2), atol=1e-9)

    def test_fold_below_horizon_reads_floor(self, template, layout):
        # at horizon incidence the far-side antennas rotate below the
        # horizon; the folded lookup must return the horizon-row value
        s = sample_template(template, layout, Direction(1.0, 0.0, 0.0))
        psi = np.degrees(
            np.arccos(np.clip(layout.unit_vectors() @ np.array([1.0, 0.0, 0.0]), -1, 1))
        )
        floored = psi > 90.0
        assert floored.any()
        assert np.allclose(s[floored], synth_gain_psi(90.0), atol=1e-9)


class TestHemisphereGrid:
    def test_grid_size_one_degree(self):
        dirs, th, ph = hemisphere_grid(1.0)
        assert dirs.shape == (91 * 360, 3)
        assert th.min() == 0.0 and th.max() == 90.0
        assert ph.min() == pytest.approx(-179.0) and ph.max() == pytest.approx(180.0)

    def test_unit_norm(self):
        dirs, _, _ = hemisphere_grid(10.0)
        assert np.allclose(np.linalg.norm(dirs, axis=1), 1.0, atol=1e-12)

    def test_bad_resolution(self):
        with pytest.raises(ConfigError):
            hemisphere_grid(7.3)


class TestManifold:
    def test_row_count_one_degree(self, template, layout):
        m = build_manifold(template, layout, 1.0)
        assert m.n_dirs == 32760

    def test_rows_zero_mean_unit_norm(self, template, layout):
        m = build_manifold(template, layout, 5.0)
        ok = ~m.degenerate
        sums = m.centered_unit[ok].sum(axis=1)
        norms = np.linalg.norm(m.centered_unit[ok], axis=1)
        assert np.allclose(sums, 0.0, atol=1e-9)
        assert np.allclose(norms, 1.0, atol=1e-9)

    def test_deterministic_rebuild(self, template, layout):
        a = build_manifold(template, layout, 5.0)
        b = build_manifold(template, layout, 5.0)
        assert np.array_equal(a.raw, b.raw)
        assert np.array_equal(a.centered_unit, b.centered_unit)

    def test_raw_matches_sample_template(self, template, layout):
        m = build_manifold(template, layout, 15.0)
        rng = np.random.default_rng(0)
        for i in rng.integers(0, m.n_dirs, size=12):
            u = Direction.from_array(m.directions[i], normalize=True)
            assert np.allclose(m.raw[i], sample_template(template, layout, u), atol=1e-12)

    def test_no_degenerate_rows_with_defaults(self, template, layout):
        m = build_manifold(template, layout, 5.0)
        assert not m.degenerate.any()
