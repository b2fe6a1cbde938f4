import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from coalition_ne.plant import (
    Disturbance,
    PlantLayout,
    PlantState,
    UnitMassModel,
    adaptive_laws,
    control_law,
    make_model,
    plant_rhs,
    sign,
    tracking_error,
    zero_disturbance,
)
from coalition_ne.scenario import random_toy_scenario
from coalition_ne.sim import SimConfig, rk4_step, run

vec = arrays(float, 3, elements=st.floats(-1e3, 1e3, allow_nan=False))


# -- tracking error and control law ---------------------------------------------------

def test_perfect_tracking_has_zero_error():
    eta, th = np.array([[1.0, 2.0]]), np.array([[0.5, -0.5]])
    e, xref_dot = tracking_error(eta, th, eta, th)
    np.testing.assert_array_equal(e, 0.0)
    np.testing.assert_array_equal(xref_dot, th)


def test_position_offset_shows_up_in_error():
    eta, th, delta = np.array([[1.0, 2.0]]), np.array([[0.5, -0.5]]), np.array([[0.25, -3.0]])
    e, _ = tracking_error(eta + delta, th, eta, th)
    np.testing.assert_allclose(e, delta, atol=1e-15)


def test_control_law_limits():
    ups = np.array([[[2.0]], [[-1.0]]])
    mu = np.array([[1.5], [0.5]])
    zero = np.zeros((2, 1))
    np.testing.assert_allclose(control_law(ups, zero, mu, zero, np.array([4.0, 4.0]), 3.0),
                               [[3.0], [-0.5]])
    e = np.array([[0.2], [-0.1]])
    np.testing.assert_allclose(control_law(ups, zero, np.zeros((2, 1)), e, np.zeros(2), 3.0), -3.0 * e)


def test_adaptive_law_examples():
    ups = np.random.default_rng(0).standard_normal((1, 2, 3))
    mu_dot, d_dot = adaptive_laws(ups, np.zeros((1, 2)))
    np.testing.assert_array_equal(mu_dot, 0.0)
    np.testing.assert_array_equal(d_dot, 0.0)
    _, d_dot = adaptive_laws(ups, np.array([[1.0, -2.0]]))
    assert d_dot[0] == 3.0


@settings(max_examples=100, deadline=None)
@given(vec)
def test_disturbance_bound_rate_is_nonnegative(e):
    _, d_dot = adaptive_laws(np.zeros((1, 3, 1)), e[None, :])
    assert d_dot[0] >= 0
    assert d_dot[0] == pytest.approx(np.abs(e).sum())


def test_sign_conventions():
    np.testing.assert_array_equal(sign([-2.0, 0.0, 3.0]), [-1.0, 0.0, 1.0])
    bl = sign(np.array([[3e-4, -4e-4]]), "boundary_layer", 1e-3)
    np.testing.assert_allclose(bl, [[0.3, -0.4]])
    big = sign(np.array([[3.0, -4.0]]), "boundary_layer", 1e-3)
    np.testing.assert_allclose(big, [[0.6, -0.8]])
    with pytest.raises(ValueError):
        sign([1.0], "smooth")


# -- models -----------------------------------------------------------------------------

def test_free_particle_at_rest():
    m = UnitMassModel(r=2, mass=1.0)
    np.testing.assert_array_equal(m.acceleration(np.zeros((1, 2)), np.zeros((1, 2)), np.zeros((1, 2))), 0.0)


def test_unit_mass_regressor_identity():
    rng = np.random.default_rng(1)
    m = UnitMassModel(r=3, mass=np.array([1.7, 0.4]))
    x, v, yh, yt = rng.standard_normal((4, 2, 3))
    np.testing.assert_allclose(m.lhs(x, v, yh, yt),
                               (m.regressor(x, v, yh, yt) @ m.true_params())
                               if m.true_params().size == 1 else
                               np.einsum("pij,pj->pi", m.regressor(x, v, yh, yt), m.true_params()[:, None]),
                               atol=1e-14)


def test_model_registry():
    assert isinstance(make_model("unit_mass", r=2), UnitMassModel)
    assert make_model("usv").name == "usv"
    with pytest.raises(ValueError):
        make_model("submarine")


# -- disturbances ---------------------------------------------------------------------------

def test_disturbance_parse_and_evaluate():
    d = Disturbance.parse([[[2.0, 0.5, 0.0]], [[1.0, 1.0, 0.5], "square(0.5, 4.0)"]])
    t = 1.3
    np.testing.assert_allclose(d(t), [2 * np.sin(0.5 * t), np.sin(t + 0.5) + 0.5])
    assert d(3.0)[1] == pytest.approx(np.sin(3.5) - 0.5)
    np.testing.assert_array_equal(d.bound(), [2.0, 1.5])
    assert d.r == 2
    np.testing.assert_array_equal(zero_disturbance(3)(7.0), np.zeros(3))


@pytest.mark.parametrize("bad", [[["square(1)"]], [[[1.0, 2.0]]], [["square(1, 0)"]]])
def test_disturbance_parse_errors(bad):
    with pytest.raises(ValueError):
        Disturbance.parse(bad)


# -- closed loop ---------------------------------------------------------------------------

def test_plant_layout_round_trip():
    lay = PlantLayout(3, 2, 4)
    y = np.arange(lay.size, dtype=float)
    s = lay.unpack(y)
    np.testing.assert_array_equal(lay.pack(s), y)
    assert s.mu_hat.shape == (3, 4) and s.d_hat.shape == (3,)


def test_constant_disturbance_rejected_by_unit_mass_loop():
    model = UnitMassModel(r=1, mass=2.5)
    dist = Disturbance.parse([[[0.7, 0.0, 0.5 * np.pi]]])  # 0.7 sin(pi/2), a constant
    lay = PlantLayout(1, 1, 1)
    eta = np.array([[1.0]])
    zero = np.zeros((1, 1))
    state = PlantState(np.array([[-1.0]]), zero.copy(), zero.copy(), np.zeros(1), zero.copy())
    y = lay.pack(state)

    def f(t, v):
        d, _, _ = plant_rhs(lay.unpack(v), model, eta, zero, zero, t, dist, 3.0)
        return lay.pack(d)

    d_hat = []
    for k in range(30_000):
        y = rk4_step(f, k * 1e-3, y, 1e-3)
        d_hat.append(lay.unpack(y).d_hat[0])
    final = lay.unpack(y)
    _, e, _ = plant_rhs(final, model, eta, zero, zero, 30.0, dist, 3.0)
    assert np.linalg.norm(e) <= 1e-3
    assert abs(final.x[0, 0] - 1.0) <= 1e-3
    assert np.all(np.diff(d_hat) >= 0)
    assert np.isfinite(d_hat[-1]) and d_hat[-1] >= 0.7 - 1e-2


@pytest.fixture(scope="module")
def short_plant_run():
    sc = random_toy_scenario(0, with_plant=True, sim=SimConfig(horizon=20.0, log_stride=10))
    return run(sc)


def test_disturbance_bound_estimate_never_decreases(short_plant_run):
    d_hat = np.array([short_plant_run.loop.d_hat(y) for y in short_plant_run.states])
    assert np.all(np.diff(d_hat, axis=0) >= 0)


def test_parameter_estimate_stays_bounded(short_plant_run):
    lay = short_plant_run.loop.play
    ns = short_plant_run.loop.ns
    mu = np.array([lay.unpack(y[ns:]).mu_hat for y in short_plant_run.states])
    assert np.all(np.isfinite(mu)) and np.abs(mu).max() < 100.0
