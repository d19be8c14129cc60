import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tvshrink.linalg import eig_sym
from tvshrink.metrics import eig_l2_distance, frobenius_error, levy_distance, second_moment
from tvshrink.mplaw import DiscreteSpectrum


class TestLevy:
    def test_self_distance_zero(self):
        x = np.array([0.1, 0.5, 2.0])
        assert levy_distance(x, x) == 0.0

    def test_point_masses(self):
        # delta_0 vs delta_{1/2}: both inequalities first hold at eps = 1/2
        d0 = DiscreteSpectrum(np.array([0.0]), np.array([1.0]))
        dh = DiscreteSpectrum(np.array([0.5]), np.array([1.0]))
        assert levy_distance(d0, dh) == pytest.approx(0.5, abs=2e-6)

    def test_symmetry(self):
        rng = np.random.default_rng(0)
        a = rng.uniform(0, 3, 12)
        b = rng.uniform(0, 3, 7)
        assert levy_distance(a, b) == pytest.approx(levy_distance(b, a), abs=2e-6)

    def test_triangle_inequality_random(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            a = rng.uniform(0, 2, 8)
            b = rng.uniform(0, 2, 5)
            c = rng.uniform(0, 2, 11)
            ab = levy_distance(a, b)
            bc = levy_distance(b, c)
            ac = levy_distance(a, c)
            assert ac <= ab + bc + 5e-6

    def test_mixed_inputs(self):
        spec = DiscreteSpectrum(np.array([1.0, 2.0]), np.array([0.5, 0.5]))
        sample = np.array([1.0, 2.0])
        assert levy_distance(spec, sample) == pytest.approx(0.0, abs=2e-6)

    def test_uniform_shift(self):
        # shifting a distribution by s moves it by at most s in Levy distance
        x = np.linspace(0, 1, 50)
        assert levy_distance(x, x + 0.3) <= 0.3 + 2e-6


class TestEigL2:
    def test_identical(self):
        assert eig_l2_distance(np.array([1.0, 2.0]), np.array([2.0, 1.0])) == 0.0

    def test_single_coordinate(self):
        assert eig_l2_distance(np.array([1.0, 2.0, 3.0]), np.array([1.0, 2.0, 5.0])) == pytest.approx(2.0)

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="length"):
            eig_l2_distance(np.ones(3), np.ones(4))

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(0, 10), min_size=2, max_size=10),
           st.lists(st.floats(0, 10), min_size=2, max_size=10),
           st.lists(st.floats(0, 10), min_size=2, max_size=10))
    def test_metric_properties(self, a, b, c):
        n = min(len(a), len(b), len(c))
        a, b, c = np.array(a[:n]), np.array(b[:n]), np.array(c[:n])
        assert eig_l2_distance(a, b) == pytest.approx(eig_l2_distance(b, a))
        assert eig_l2_distance(a, c) <= eig_l2_distance(a, b) + eig_l2_distance(b, c) + 1e-9


class TestFrobenius:
    def test_zero_on_equal(self):
        a = np.array([[1.0, 0.2], [0.2, 2.0]])
        assert frobenius_error(a, a) == 0.0

    def test_identity_scale(self):
        assert frobenius_error(np.eye(4), 2 * np.eye(4)) == pytest.approx(2.0)

    def test_dim_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            frobenius_error(np.eye(2), np.eye(3))

    def test_symmetry_and_triangle(self):
        rng = np.random.default_rng(2)
        a, b, c = (rng.standard_normal((5, 5)) for _ in range(3))
        assert frobenius_error(a, b) == pytest.approx(frobenius_error(b, a))
        assert frobenius_error(a, c) <= frobenius_error(a, b) + frobenius_error(b, c) + 1e-12


class TestSecondMoment:
    def test_identity(self):
        assert second_moment(np.eye(9)) == pytest.approx(1.0)

    def test_agrees_with_eigenvalue_path(self):
        rng = np.random.default_rng(3)
        b = rng.standard_normal((15, 15))
        s = b @ b.T
        via_trace = second_moment(s)
        via_eigs = float(np.mean(eig_sym(s).eigenvalues ** 2))
        assert via_trace == pytest.approx(via_eigs, abs=1e-8 * (1 + via_eigs))
