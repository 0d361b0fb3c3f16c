import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hysurv import geometry as g

CURVATURES = (0.1, 0.5, 1.0, 2.0)


def ball_point(rng, dim, c, max_frac=0.95):
    v = rng.normal(size=dim)
    return v / np.linalg.norm(v) * rng.uniform(0, max_frac) / np.sqrt(c)


def inside(x, c):
    return c * np.sum(np.asarray(x) ** 2, axis=-1) <= (1 - 1e-6) ** 2


tangents = arrays(np.float64, 3, elements=st.floats(-1.7, 1.7))


# -- frozen values (50-digit mpmath, see tests/oracles.py) -------------------

def test_conformal_factor_values():
    assert g.conformal_factor(np.zeros(3), 0.7) == 2.0
    assert g.conformal_factor(np.array([0.5, 0.0]), 1.0) == pytest.approx(8 / 3, abs=1e-15)
    assert g.conformal_factor(np.array([0.54, 0.72]), 0.5) == pytest.approx(3.3613445378151260504, rel=1e-12)


def test_mobius_add_values():
    y = np.array([0.2, -0.1])
    assert np.array_equal(g.mobius_add(np.zeros(2), y, 1.0), y)
    x = np.array([0.3, 0.1])
    assert np.allclose(g.mobius_add(-x, x, 1.0), 0.0, atol=1e-9)
    out = g.mobius_add(np.array([0.3, 0.0]), np.array([0.4, 0.0]), 1.0)
    assert out == pytest.approx([0.62500000000000000867, 0.0], abs=1e-15)


def test_exp_map0_value():
    out = g.exp_map0(np.array([0.3, 0.4]), 1.0)
    assert out == pytest.approx([0.27727029435600584392, 0.3696937258080078261], abs=1e-15)
    assert np.linalg.norm(out) == pytest.approx(math.tanh(0.5), abs=1e-15)


def test_exp_log_zero():
    assert np.array_equal(g.exp_map0(np.zeros(4), 1.3), np.zeros(4))
    assert np.array_equal(g.exp_map(np.zeros(4), np.zeros(4), 1.3), np.zeros(4))
    w = np.array([0.2, -0.3])
    assert np.allclose(g.log_map(w, w, 1.0), 0.0, atol=1e-12)


def test_log_map0_round_trip_example():
    y = g.exp_map0(np.array([0.3, 0.4]), 1.0)
    assert g.log_map0(y, 1.0) == pytest.approx([0.3, 0.4], abs=1e-6)


@pytest.mark.parametrize("c", [0.5, 1.0, 2.0])
def test_log_map0_near_boundary_is_finite(c):
    y = np.array([0.6, 0.8]) * (1 - 1e-5) / np.sqrt(c)
    v = g.log_map0(y, c)
    assert np.all(np.isfinite(v))
    # artanh(1 - 1e-5) at 50 digits
    assert np.linalg.norm(v) * np.sqrt(c) == pytest.approx(6.103033822758836803, rel=1e-9)


def test_distance_values():
    assert g.geodesic_distance(np.zeros(2), np.array([0.5, 0.0]), 1.0) == pytest.approx(
        1.0986122886681096914, rel=1e-14)
    x = np.array([0.1, 0.7])
    assert g.geodesic_distance(x, x, 1.0) == 0.0


def test_lift_values():
    p = g.lift_to_lorentz(np.array([0.5, 0.0]), 1.0)
    assert p.time == pytest.approx(5 / 3, rel=1e-15)
    assert p.space == pytest.approx([4 / 3, 0.0], rel=1e-15)
    apex = g.lift_to_lorentz(np.zeros(3), 4.0)
    assert apex.time == 0.5 and np.array_equal(apex.space, np.zeros(3))


def test_lorentz_inner_values():
    apex = g.lift_to_lorentz(np.zeros(2), 1.0)
    assert g.lorentz_inner(apex, apex) == -1.0
    u = g.lift_to_lorentz(np.array([0.1, -0.2, 0.3]), 1.0)
    v = g.lift_to_lorentz(np.array([-0.4, 0.05, 0.2]), 1.0)
    assert g.lorentz_inner(u, v) == pytest.approx(-1.9404388714733543455, rel=1e-13)
    assert g.lorentz_inner(u, v) == g.lorentz_inner(v, u)


def test_project_to_ball_rules():
    x = np.array([0.1, 0.2])
    assert np.array_equal(g.project_to_ball(x, 1.0), x)
    assert np.array_equal(g.project_to_ball(np.zeros(3), 1.0), np.zeros(3))
    y = g.project_to_ball(np.array([2.0, 0.0]), 1.0)
    assert np.linalg.norm(y) == pytest.approx(1 - 1e-6, abs=1e-15)
    with pytest.raises(FloatingPointError):
        g.project_to_ball(np.array([np.nan, 0.0]), 1.0)


def test_bad_curvature():
    for bad in (0.0, -1.0, np.inf, np.nan):
        with pytest.raises(ValueError):
            g.exp_map0(np.zeros(2), bad)


# -- properties --------------------------------------------------------------

@settings(max_examples=200, deadline=None)
@given(v=tangents, c=st.sampled_from(CURVATURES))
def test_round_trip_property(v, c):
    back = g.log_map0(g.exp_map0(v, c), c)
    assert np.linalg.norm(back - v) <= 1e-6 * (1 + np.linalg.norm(v))


@settings(max_examples=200, deadline=None)
@given(v=arrays(np.float64, 3, elements=st.floats(-50, 50)), c=st.sampled_from(CURVATURES))
def test_exp_map0_containment(v, c):
    assert inside(g.exp_map0(v, c), c)


@pytest.mark.parametrize("c", CURVATURES)
def test_general_base_point_round_trip_and_containment(c):
    rng = np.random.default_rng(3)
    for _ in range(100):
        w = ball_point(rng, 4, c, 0.8)
        # keep the exact image well inside the stored ball so the margin clamp is inactive
        v = rng.normal(size=4) * 0.5 / g.conformal_factor(w, c)
        y = g.exp_map(w, v, c)
        assert inside(y, c)
        assert np.allclose(g.log_map(w, y, c), v, atol=1e-7 * (1 + np.linalg.norm(v)))
        assert inside(g.mobius_add(w, y, c), c)


def test_general_exp_at_origin_matches_origin_map():
    rng = np.random.default_rng(0)
    v = rng.normal(size=5)
    assert np.allclose(g.exp_map(np.zeros(5), v, 1.0), g.exp_map0(v, 1.0), atol=1e-15)


def test_euclidean_limit():
    rng = np.random.default_rng(1)
    for _ in range(200):
        v = rng.normal(size=4)
        v *= rng.uniform(0, 1) / np.linalg.norm(v)
        assert np.linalg.norm(g.exp_map0(v, 1e-9) - v) <= 1e-4


@pytest.mark.parametrize("c", CURVATURES)
def test_distance_symmetry_and_triangle(c):
    rng = np.random.default_rng(7)
    for _ in range(200):
        x, y, z = (ball_point(rng, 3, c) for _ in range(3))
        dxy = g.geodesic_distance(x, y, c)
        assert dxy == pytest.approx(g.geodesic_distance(y, x, c), abs=1e-9)
        assert g.geodesic_distance(x, z, c) <= dxy + g.geodesic_distance(y, z, c) + 1e-7


@pytest.mark.parametrize("c", [0.5, 1.0, 2.0])
def test_lift_round_trip_and_constraint(c):
    rng = np.random.default_rng(11)
    x = np.stack([ball_point(rng, 5, c) for _ in range(100)])
    p = g.lift_to_lorentz(x, c)
    assert np.max(np.abs(c * g.lorentz_inner(p, p) + 1)) <= 1e-9
    assert np.max(np.abs(g.lorentz_to_poincare(p, c) - x)) <= 1e-9
    assert np.allclose(g.lorentz_time(p.space, c), p.time, rtol=1e-12)


def test_conformal_factor_at_least_two():
    rng = np.random.default_rng(5)
    for c in CURVATURES:
        assert g.conformal_factor(ball_point(rng, 3, c), c) >= 2.0


def test_batched_rows_match_single_rows():
    rng = np.random.default_rng(2)
    v = rng.normal(size=(6, 3))
    batch = g.exp_map0(v, 0.7)
    for i in range(6):
        assert np.array_equal(batch[i], g.exp_map0(v[i], 0.7))


def test_lift_gradients_match_finite_differences():
    from hysurv import diffengine as de
    rng = np.random.default_rng(11)
    point = {"x": ball_point(rng, 3, 1.5, 0.8), "y": ball_point(rng, 3, 1.5, 0.8)}

    def f(p):
        u, v = g.lift_to_lorentz(p["x"], 1.5), g.lift_to_lorentz(p["y"], 1.5)
        return de.sum(u.time) * 0.1 + g.lorentz_inner(u, v)

    assert de.finite_diff_check(f, point, step=1e-6).max_rel_error <= 1e-6


def test_lift_constraint_holds_near_the_boundary():
    rng = np.random.default_rng(12)
    x = np.stack([ball_point(rng, 8, 2.0, 0.9995) for _ in range(200)])
    p = g.lift_to_lorentz(x, 2.0)
    assert np.max(np.abs(2.0 * g.lorentz_inner(p, p) + 1)) <= 1e-9
