import numpy as np
import pytest
from scipy import integrate, optimize

from tvshrink import mplaw
from tvshrink.mplaw import DiscreteSpectrum, MpModel


def mp_identity_m(z, y):
    """Closed-form Stieltjes transform for a unit point-mass population
    spectrum: the Im > 0 root of y*z*m^2 + (z + y - 1)*m + 1 = 0."""
    a, b, c = y * z, z + y - 1.0, 1.0
    disc = np.sqrt(b * b - 4 * a * c + 0j)
    r1, r2 = (-b + disc) / (2 * a), (-b - disc) / (2 * a)
    return r1 if r1.imag > 0 else r2


def mp_identity_quantiles(y, alphas):
    """Quantiles of the bulk law for a unit point-mass spectrum, by
    quadrature of the closed-form density (independent oracle)."""
    lo, hi = (1 - np.sqrt(y)) ** 2, (1 + np.sqrt(y)) ** 2

    def dens(x):
        return np.sqrt(max((hi - x) * (x - lo), 0.0)) / (2 * np.pi * x * y)

    def cdf(q):
        return integrate.quad(dens, lo, q, limit=200)[0]

    return np.array([
        optimize.brentq(lambda q: cdf(q) - a, lo + 1e-12, hi - 1e-12, xtol=1e-12)
        for a in alphas
    ])


def wasserstein1(s1: DiscreteSpectrum, s2: DiscreteSpectrum) -> float:
    grid = np.sort(np.unique(np.concatenate([s1.locations, s2.locations])))
    return float(np.sum(np.abs(s1.cdf(grid[:-1]) - s2.cdf(grid[:-1])) * np.diff(grid)))


DELTA_ONE = DiscreteSpectrum(np.array([1.0]), np.array([1.0]))


def random_model(rng) -> MpModel:
    k = int(rng.integers(1, 6))
    locs = np.sort(rng.uniform(0.2, 4.0, k))
    w = rng.dirichlet(np.ones(k))
    return MpModel(float(rng.uniform(0.2, 2.5)), DiscreteSpectrum(locs, w))


class TestDiscreteSpectrum:
    def test_normalizes_and_sorts(self):
        spec = DiscreteSpectrum(np.array([2.0, 1.0]), np.array([2.0, 6.0]))
        np.testing.assert_allclose(spec.locations, [1.0, 2.0])
        np.testing.assert_allclose(spec.weights, [0.75, 0.25])
        assert abs(spec.weights.sum() - 1.0) < 1e-12

    def test_rejects_bad_atoms(self):
        with pytest.raises(ValueError):
            DiscreteSpectrum(np.array([-1.0]), np.array([1.0]))
        with pytest.raises(ValueError):
            DiscreteSpectrum(np.array([1.0]), np.array([0.0]))

    def test_cdf_quantile_roundtrip(self):
        spec = DiscreteSpectrum(np.array([1.0, 2.0, 5.0]), np.array([0.2, 0.5, 0.3]))
        np.testing.assert_allclose(spec.cdf([0.5, 1.0, 3.0, 6.0]), [0.0, 0.2, 0.7, 1.0])
        np.testing.assert_allclose(spec.quantile([0.1, 0.5, 0.95]), [1.0, 2.0, 5.0])

    def test_csv_roundtrip(self, tmp_path):
        spec = DiscreteSpectrum(np.array([0.5, 1.5]), np.array([0.4, 0.6]))
        path = tmp_path / "spec.csv"
        spec.save_csv(path)
        back = DiscreteSpectrum.load_csv(path)
        np.testing.assert_allclose(back.locations, spec.locations)
        np.testing.assert_allclose(back.weights, spec.weights)

    def test_degenerate_model_rejected(self):
        with pytest.raises(ValueError, match="degenerate"):
            MpModel(0.5, DiscreteSpectrum(np.array([0.0]), np.array([1.0])))


class TestStieltjes:
    def test_identity_closed_form_random_points(self):
        model = MpModel(0.5, DELTA_ONE)
        rng = np.random.default_rng(0)
        for _ in range(100):
            z = complex(rng.uniform(-3, 5), rng.uniform(0.05, 3.0))
            m = mplaw.stieltjes(model, z)
            assert abs(m - mp_identity_m(z, 0.5)) < 1e-8

    def test_small_ratio_degenerates_to_population_transform(self):
        model = MpModel(1e-8, DiscreteSpectrum(np.array([2.0]), np.array([1.0])))
        m = mplaw.stieltjes(model, 1j)
        assert abs(m - 1.0 / (2.0 - 1j)) < 1e-6

    def test_residual_self_consistency_random(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            model = random_model(rng)
            z = complex(rng.uniform(-2, 6), rng.uniform(0.02, 2.0))
            m = mplaw.stieltjes(model, z)
            tau, w = model.h.locations, model.h.weights
            rhs = np.sum(w / (tau * (1 - model.y * (1 + z * m)) - z))
            assert abs(rhs - m) <= 1e-10

    def test_herglotz_property(self):
        rng = np.random.default_rng(2)
        for _ in range(1000):
            model = random_model(rng)
            z = complex(rng.uniform(-2, 6), rng.uniform(0.01, 3.0))
            assert mplaw.stieltjes(model, z).imag >= 0.0

    def test_rejects_lower_half_plane(self):
        with pytest.raises(ValueError, match="Im z"):
            mplaw.stieltjes(MpModel(0.5, DELTA_ONE), 1 - 1j)


class TestMBreve:
    def test_inside_support_closed_form(self):
        model = MpModel(0.5, DELTA_ONE)
        mb = mplaw.m_breve(model, 1.0)
        assert abs(mb - (-0.5 + 1j * np.sqrt(7) / 2)) < 1e-6

    def test_above_support_matches_small_offset(self):
        model = MpModel(0.5, DELTA_ONE)
        mb = mplaw.m_breve(model, 5.0)
        direct = mplaw.stieltjes(model, 5.0 + 1e-10j)
        assert abs(mb - direct) < 1e-6
        assert abs(mb.imag) < 1e-8

    def test_imaginary_part_nonnegative(self):
        rng = np.random.default_rng(3)
        model = MpModel(0.8, DiscreteSpectrum(np.array([0.7, 1.8]), np.array([0.5, 0.5])))
        for lam in rng.uniform(0.0, 5.0, 25):
            assert mplaw.m_breve(model, float(lam)).imag >= -1e-8

    def test_curve_evaluation_matches_ladder(self):
        model = MpModel(0.8, DiscreteSpectrum(np.array([0.6, 1.0, 2.2]), np.array([0.3, 0.4, 0.3])))
        intervals, _ = mplaw.support_intervals(model)
        lams = np.concatenate([
            np.linspace(intervals[0][0] + 1e-3, intervals[-1][1] - 1e-3, 17),
            [intervals[-1][1] + 0.5, 6.0, 1e-3],
        ])
        via_curve = mplaw._mbreve_u(model, lams)
        via_ladder = mplaw._m_breve_vec(model, lams)
        np.testing.assert_allclose(via_curve, via_ladder, atol=1e-7)

    def test_companion_at_zero_identity(self):
        # for a unit point mass at y = 2 the companion transform at zero is 1
        val = mplaw._companion_mbreve_at_zero(MpModel(2.0, DELTA_ONE))
        assert val == pytest.approx(1.0, abs=1e-10)


class TestForwardEsd:
    def test_identity_support_edges(self):
        spec = mplaw.forward_esd(MpModel(0.8, DELTA_ONE), 256)
        lo, hi = (1 - np.sqrt(0.8)) ** 2, (1 + np.sqrt(0.8)) ** 2
        assert abs(spec.locations.min() - lo) < 1e-3
        assert abs(spec.locations.max() - hi) < 1e-3

    def test_zero_atom_weight(self):
        spec = mplaw.forward_esd(MpModel(4.0, DELTA_ONE), 128)
        zero_w = spec.weights[spec.locations == 0.0].sum()
        assert abs(zero_w - 0.75) < 1e-6

    def test_mass_normalized_random_models(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            spec = mplaw.forward_esd(random_model(rng), 128)
            assert abs(spec.weights.sum() - 1.0) < 1e-6

    def test_split_support_two_atoms_small_ratio(self):
        model = MpModel(0.02, DiscreteSpectrum(np.array([1.0, 4.0]), np.array([0.5, 0.5])))
        intervals, _ = mplaw.support_intervals(model)
        assert len(intervals) == 2
        spec = mplaw.forward_esd(model, 256)
        # roughly half the mass near each population atom
        low_mass = spec.weights[spec.locations < 2.0].sum()
        assert abs(low_mass - 0.5) < 1e-3

    def test_small_grid_rejected(self):
        with pytest.raises(ValueError, match="64"):
            mplaw.forward_esd(MpModel(0.5, DELTA_ONE), 32)

    @pytest.mark.slow
    def test_quantiles_match_monte_carlo(self):
        p, n = 1000, 1250
        rng = np.random.default_rng(5)
        d = np.concatenate([np.ones(p // 2), 3 * np.ones(p - p // 2)])
        x = rng.standard_normal((p, n)) * np.sqrt(d)[:, None]
        ev = np.sort(np.linalg.eigvalsh(x @ x.T / n))
        alphas = (np.arange(1, p + 1) - 0.5) / p
        model = MpModel(p / n, DiscreteSpectrum(np.array([1.0, 3.0]), np.array([0.5, 0.5])))
        q = mplaw.forward_quantiles(model, alphas, points_per_region=512)
        assert np.max(np.abs(q - ev)) < 0.08


class TestQuestInvert:
    def test_self_inversion_identity(self):
        alphas = (np.arange(1, 101) - 0.5) / 100
        lam = mp_identity_quantiles(0.8, alphas)
        res = mplaw.quest_invert(lam[::-1], 0.8)
        spec = res.spectrum
        assert wasserstein1(spec, DELTA_ONE) <= 0.05
        in_band = spec.weights[(spec.locations >= 0.9) & (spec.locations <= 1.1)].sum()
        assert in_band >= 0.95

    def test_self_inversion_two_atoms(self):
        h2 = DiscreteSpectrum(np.array([1.0, 3.0]), np.array([0.5, 0.5]))
        alphas = (np.arange(1, 101) - 0.5) / 100
        lam = mplaw.forward_quantiles(MpModel(0.8, h2), alphas, points_per_region=512)
        res = mplaw.quest_invert(lam[::-1], 0.8)
        assert wasserstein1(res.spectrum, h2) <= 0.05

    def test_output_is_probability_spectrum(self):
        rng = np.random.default_rng(6)
        lam = np.sort(rng.uniform(0.1, 3.0, 60))
        res = mplaw.quest_invert(lam[::-1], 0.6)
        assert np.all(res.spectrum.weights > 0)
        assert abs(res.spectrum.weights.sum() - 1.0) < 1e-12
        assert res.objective >= 0.0

    def test_trace_preserved(self):
        rng = np.random.default_rng(7)
        lam = np.sort(rng.uniform(0.2, 2.5, 80))
        res = mplaw.quest_invert(lam[::-1], 0.8)
        assert res.spectrum.mean() == pytest.approx(lam.mean(), rel=1e-8)

    def test_rejects_negative_eigenvalues(self):
        with pytest.raises(ValueError, match="nonnegative"):
            mplaw.quest_invert(np.array([2.0, 1.0, -0.5]), 0.5)


class TestGeneralizedStieltjes:
    def test_constant_weight_equals_plain_transform(self):
        from tvshrink.linalg import eig_sym

        rng = np.random.default_rng(8)
        b = rng.standard_normal((30, 40))
        s = b @ b.T / 40
        dec = eig_sym(s)
        sigma = np.diag(rng.uniform(0.5, 2.0, 30))
        z = 0.7 + 0.9j
        plain = np.mean(1.0 / (dec.eigenvalues - z))
        weighted = mplaw.generalized_stieltjes(dec, sigma, lambda t: np.ones_like(t), z)
        assert abs(weighted - plain) < 1e-12

    def test_identity_population_with_identity_weight(self):
        from tvshrink.linalg import eig_sym

        rng = np.random.default_rng(9)
        b = rng.standard_normal((25, 30))
        s = b @ b.T / 30
        dec = eig_sym(s)
        z = 1.2 + 0.5j
        plain = np.mean(1.0 / (dec.eigenvalues - z))
        weighted = mplaw.generalized_stieltjes(dec, np.eye(25), lambda t: t, z)
        assert abs(weighted - plain) < 1e-12

    def test_limit_conventions_disagree_by_ratio_inversion(self):
        # the printed limit uses reciprocal-ratio factors; the self-consistent
        # form must reproduce the plain transform at unit weight
        model = MpModel(0.8, DiscreteSpectrum(np.array([0.5, 1.5]), np.array([0.5, 0.5])))
        z = 1 + 1j
        m = mplaw.stieltjes(model, z)
        ones = lambda t: np.ones_like(t)
        consistent = mplaw.generalized_stieltjes_limit(model, ones, z, "self_consistent")
        printed = mplaw.generalized_stieltjes_limit(model, ones, z, "as_printed")
        assert abs(consistent - m) < 1e-9
        assert abs(printed - m) > 1e-3  # the printed form does not reduce to m_F
