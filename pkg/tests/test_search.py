import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rsmtune.doe import FactorSpec, ccd, CcdSpec
from rsmtune.errors import FlatSurfaceError
from rsmtune.linalg import jacobi_eigh, jacobi_eigvalsh
from rsmtune.regress import RegressionFit, fit_design, model_matrix, predict
from rsmtune.search import (classify, default_schedule, quadratic_parts, stationary_point,
                            steepest_path)

from .conftest import SCREENING_COEFS


def first_fit(linear):
    p = len(linear)
    return RegressionFit(order="first", term_names=["Intercept"] + [f"x{i}" for i in range(p)],
                         coefficients=np.array([0.0] + list(linear)), n_factors=p)


def second_fit(coefs, p):
    names = [f"x{i}" for i in range(p)]
    return RegressionFit(order="second", term_names=[str(i) for i in range(len(coefs))],
                         coefficients=np.asarray(coefs, float), n_factors=p, factor_names=names)


def plain(p):
    return [FactorSpec(f"x{i}", "continuous", -1, 1) for i in range(p)]


class TestSteepestPath:
    def test_unit_direction(self):
        steps = steepest_path(first_fit([3, 4]), plain(2), [-5])
        assert steps[0].coded == pytest.approx((-3, -4))
        assert steps[0].s == 5

    def test_optimal_points_from_screening_fit(self, cann_factors, screening_fit_fixture):
        (st_,) = steepest_path(screening_fit_fixture, cann_factors, [-1])
        assert st_.s == pytest.approx(31.5506, abs=1e-4)
        assert st_.s == pytest.approx(float(np.linalg.norm(SCREENING_COEFS[1:])), rel=1e-15)
        assert st_.decoded == {"Op": 5, "N1": 20, "N2": 18, "N3": 10, "Ep": 703, "Bh": 8542, "Lr": 3}
        assert all(type(v) is int for v in st_.decoded.values())

    def test_default_schedule(self):
        assert default_schedule() == [-1.0 * i for i in range(1, 11)]
        assert default_schedule(3) == [-1.0, -2.0, -3.0]

    def test_flat_surface(self):
        with pytest.raises(FlatSurfaceError):
            steepest_path(first_fit([0, 0]), plain(2), [-1])

    def test_held_values_copied(self):
        steps = steepest_path(first_fit([1.0]), plain(1), [-1, -2], held={"z": 10})
        assert all(s.decoded["z"] == 10 for s in steps)

    def test_requires_first_order(self):
        with pytest.raises(ValueError):
            steepest_path(second_fit([0, 1, 1], 1), plain(1), [-1])

    @given(st.lists(st.floats(-100, 100), min_size=1, max_size=8).filter(lambda v: np.linalg.norm(v) > 1e-3),
           st.floats(1e-3, 1e3), st.lists(st.floats(-20, -0.01), min_size=2, max_size=5))
    @settings(max_examples=60)
    def test_path_properties(self, b, scale, ts):
        p = len(b)
        steps = steepest_path(first_fit(b), plain(p), ts)
        scaled = steepest_path(first_fit([scale * v for v in b]), plain(p), ts)
        for s, s2, t in zip(steps, scaled, ts):
            assert np.linalg.norm(s.coded) == pytest.approx(abs(t), abs=1e-10)
            assert np.allclose(s.coded, s2.coded, atol=1e-10)
        c1, c2 = np.array(steps[0].coded), np.array(steps[1].coded)
        assert np.allclose(c1 * ts[1], c2 * ts[0], atol=1e-10 * max(1, abs(ts[0] * ts[1])))


class TestStationary:
    def test_bowl(self):
        a = stationary_point(second_fit([0, 0, 0, 1, 1, 0], 2), plain(2))
        assert a.x_o_coded == pytest.approx((0, 0))
        assert a.eigenvalues == pytest.approx([1, 1])
        assert a.classification == "minimum"

    def test_saddle(self):
        a = stationary_point(second_fit([0, 0, 0, 1, -1, 0], 2), plain(2))
        assert a.x_o_coded == pytest.approx((0, 0))
        assert a.eigenvalues == pytest.approx([-1, 1])
        assert a.classification == "saddle"

    def test_one_dimensional(self):
        a = stationary_point(second_fit([1, -2, 1], 1), plain(1))
        assert a.x_o_coded == pytest.approx((1,))
        assert a.predicted_response == pytest.approx(0, abs=1e-15)
        assert a.classification == "minimum"
        assert not a.outside_region

    def test_maximum_and_outside_region(self):
        a = stationary_point(second_fit([0, 6, -1], 1), plain(1))
        assert a.classification == "maximum"
        assert a.x_o_coded == pytest.approx((3,))
        assert a.outside_region

    def test_degenerate(self):
        a = stationary_point(second_fit([0, 1, 0, 1, 0, 0], 2), plain(2))
        assert a.classification == "degenerate"
        assert a.x_o_coded is None

    def test_b_matrix_layout(self):
        B, b = quadratic_parts(second_fit([9, 1, 2, 3, 4, 6], 2))
        assert B.tolist() == [[3, 3], [3, 4]]
        assert b.tolist() == [1, 2]

    def test_classify_threshold(self):
        assert classify([1e-9, 1.0]) == "degenerate"
        assert classify([1e-7, 1.0]) == "minimum"
        assert classify([0.0, 0.0]) == "degenerate"

    def test_held_factors_decoded(self):
        a = stationary_point(second_fit([0, 0, 1], 1), [FactorSpec("a", "integer", 0, 10)], held={"N3": 10})
        assert a.x_o_decoded == {"N3": 10, "a": 5}

    @given(st.integers(0, 10 ** 6), st.integers(1, 6))
    @settings(max_examples=50, deadline=None)
    def test_gradient_vanishes_and_quadratic_form(self, seed, p):
        rng = np.random.default_rng(seed)
        d = ccd(CcdSpec(p=p, n_0=2))
        fit = fit_design(d, rng.normal(size=len(d)), "second")
        a = stationary_point(fit, plain(p))
        if a.classification == "degenerate":
            return
        x = np.array(a.x_o_coded)
        assert np.linalg.norm(a.b_star + 2 * a.B @ x) <= 1e-8 * (np.linalg.norm(a.b_star) + 1)
        assert np.all(np.diff(a.eigenvalues) >= 0)
        v = rng.normal(size=(100, p))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        q = np.einsum("ij,jk,ik->i", v, a.B, v)
        assert np.all(q >= a.eigenvalues[0] - 1e-9)
        assert np.all(q <= a.eigenvalues[-1] + 1e-9)
        assert a.predicted_response == pytest.approx(predict(fit, x))


@given(st.integers(0, 10 ** 6))
@settings(max_examples=30, deadline=None)
def test_minimum_beats_grid(seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(2, 2))
    B = A @ A.T + 0.05 * np.eye(2)
    b = rng.normal(scale=2, size=2)
    coefs = [rng.normal(), b[0], b[1], B[0, 0], B[1, 1], 2 * B[0, 1]]
    fit = second_fit(coefs, 2)
    a = stationary_point(fit, plain(2))
    assert a.classification == "minimum"
    g = np.linspace(-2, 2, 101)
    pts = np.array([(u, v) for u in g for v in g])
    grid_min = (model_matrix(pts, "second") @ np.asarray(coefs)).min()
    assert a.predicted_response <= grid_min + 1e-9


class TestJacobi:
    @given(st.integers(0, 10 ** 6), st.integers(1, 9))
    @settings(max_examples=50)
    def test_matches_numpy(self, seed, n):
        A = np.random.default_rng(seed).normal(size=(n, n))
        A = A + A.T
        w, V = jacobi_eigh(A)
        assert np.allclose(w, np.linalg.eigvalsh(A), atol=1e-10 * max(1, np.abs(A).max()))
        assert np.allclose(A @ V, V * w, atol=1e-9 * max(1, np.abs(A).max()))
        assert np.allclose(V.T @ V, np.eye(n), atol=1e-10)

    def test_diagonal_and_repeated(self):
        assert jacobi_eigvalsh(np.diag([3.0, -1.0, 2.0])).tolist() == [-1.0, 2.0, 3.0]
        assert jacobi_eigvalsh(np.ones((3, 3))) == pytest.approx([0, 0, 3], abs=1e-12)

    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError):
            jacobi_eigh(np.array([[1.0, 2.0], [0.0, 1.0]]))
