import dataclasses

import numpy as np
import pytest

from coalition_ne.game import CoalitionGame, QuadraticCost, SmoothCost, kkt_certificate
from coalition_ne.graph import CommTopology, build_selectors
from coalition_ne.scenario import random_toy_game, random_toy_scenario, toy_topology
from coalition_ne.seeker import (
    GainConfig,
    SeekerLayout,
    StackedSeeker,
    action_estimate_rhs,
    agent_view,
    auxiliary_rhs,
    check_gains,
    estimate_slot,
    gain_lower_bounds,
    gradient_tracking_rhs,
    multiplier_rhs,
    seeker_rhs,
)
from coalition_ne.sim import SimConfig, rk4_step, run
from coalition_ne.usv import build_confrontation_game, reference_battlefield, reference_topology

GAINS = GainConfig()


def random_state(layout, rng, scale=1.0):
    y = scale * rng.standard_normal(layout.size)
    return y, layout.unpack(y)


def scalar_pair_game(targets=(2.0, -1.0)):
    costs = []
    for p, a in enumerate(targets):
        H = np.zeros((2, 2))
        H[p, p] = 2.0
        q = np.zeros(2)
        q[p] = -2.0 * a
        costs.append(QuadraticCost(H, q, a * a))
    empty = [np.zeros((0, 1))] * 2
    return CoalitionGame((1, 1), 1, costs, empty, [np.zeros(0)] * 2, empty, [np.zeros(0)] * 2)


PAIR_TOPOLOGY = CommTopology.from_edges((1, 1), [[], []], [(0, 1), (1, 0)])


# -- renumbering ------------------------------------------------------------------

def test_renumbering_is_a_bijection(toy_game):
    seen = set()
    for i in range(toy_game.N):
        for j in range(toy_game.sizes[i]):
            p = toy_game.agent_index(i, j)
            assert toy_game.coalition_of(p) == i
            assert list(toy_game.coalition_agents(i))[j] == p
            seen.add(p)
    assert seen == set(range(toy_game.n))
    for p in range(5):
        slots = [estimate_slot(p, q) for q in range(5) if q != p]
        assert sorted(slots) == list(range(4))
    with pytest.raises(ValueError):
        estimate_slot(2, 2)


def test_layout_round_trip(toy_game):
    lay = SeekerLayout(toy_game)
    y = np.random.default_rng(0).standard_normal(lay.size)
    np.testing.assert_array_equal(lay.pack(lay.unpack(y)), y)
    with pytest.raises(ValueError):
        lay.unpack(np.zeros(lay.size + 1))


def test_agent_view_uses_own_eta_and_estimates(toy_game):
    lay = SeekerLayout(toy_game)
    _, st = random_state(lay, np.random.default_rng(1))
    for p in range(toy_game.n):
        chi = agent_view(st, p)
        np.testing.assert_array_equal(chi[p], st.eta[p])
        for q in range(toy_game.n):
            if q != p:
                np.testing.assert_array_equal(chi[q], st.s_est[p][estimate_slot(p, q)])


# -- per-agent versus stacked ----------------------------------------------------------

def _smooth_copy(game):
    return CoalitionGame(game.sizes, game.r, tuple(SmoothCost(c) for c in game.costs),
                         game.B, game.b, game.G, game.g)


@pytest.mark.parametrize("which", ["toy", "toy_sparse", "vessels"])
def test_per_agent_equals_stacked_on_random_states(which):
    if which == "vessels":
        game, topo, count, scale = build_confrontation_game(reference_battlefield()), reference_topology(), 100, 300.0
    else:
        game, topo, count, scale = random_toy_game(3), toy_topology(), 100, 2.0
    stacked = StackedSeeker(game, topo, GAINS, dense_threshold=0 if which == "toy_sparse" else 400)
    lay = stacked.layout
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(count):
        y, st = random_state(lay, rng, scale)
        ref = lay.pack(seeker_rhs(st, game, topo, GAINS))
        got = stacked.rhs(y)
        worst = max(worst, np.max(np.abs(ref - got)) / max(1.0, np.max(np.abs(ref))))
    assert worst <= 1e-10


def test_per_agent_equals_stacked_for_black_box_costs():
    game = _smooth_copy(random_toy_game(2))
    topo = toy_topology()
    stacked = StackedSeeker(game, topo, GAINS)
    rng = np.random.default_rng(5)
    for _ in range(20):
        y, st = random_state(stacked.layout, rng)
        np.testing.assert_allclose(stacked.rhs(y), stacked.layout.pack(seeker_rhs(st, game, topo, GAINS)),
                                   atol=1e-10)


def test_estimation_error_dynamics_match_dense_form(toy_game, toy_topo):
    # zbar = Xi (s - 1 kron eta) obeys zbar' = -kappa Xi L Xi^T zbar - Xi (1 kron theta)
    n, r = toy_game.n, toy_game.r
    lay = SeekerLayout(toy_game)
    sel = build_selectors(n, r)
    big = np.kron(toy_topo.global_laplacian, np.eye(n * r))
    rng = np.random.default_rng(2)
    for _ in range(100):
        _, st = random_state(lay, rng)
        z = np.concatenate([s.ravel() for s in st.s_est])
        ones_eta = np.tile(st.eta.ravel(), n)
        ones_theta = np.tile(st.theta_aux.ravel(), n)
        zbar = z - sel.xi @ ones_eta
        expected = -GAINS.kappa * sel.xi @ big @ sel.xi.T @ zbar - sel.xi @ ones_theta
        dz = np.concatenate([d.ravel() for d in action_estimate_rhs(st, toy_topo, GAINS)])
        got = dz - sel.xi @ ones_theta
        np.testing.assert_allclose(got, expected, atol=1e-10)


def test_rhs_is_deterministic(toy_game, toy_topo):
    stacked = StackedSeeker(toy_game, toy_topo, GAINS)
    y = np.random.default_rng(9).standard_normal(stacked.size)
    a, b = stacked.rhs(y), stacked.rhs(y.copy())
    assert a.tobytes() == b.tobytes()
    st = stacked.layout.unpack(y)
    p1 = stacked.layout.pack(seeker_rhs(st, toy_game, toy_topo, GAINS))
    p2 = stacked.layout.pack(seeker_rhs(st.copy(), toy_game, toy_topo, GAINS))
    assert p1.tobytes() == p2.tobytes()


# -- examples of the individual pieces ----------------------------------------------------

def test_zero_state_with_feasible_origin(toy_game, toy_topo):
    # zero gradients at the origin: replace q by zero
    costs = tuple(QuadraticCost(c.H, np.zeros_like(c.q)) for c in toy_game.costs)
    game = dataclasses.replace(toy_game, costs=costs)
    lay = SeekerLayout(game)
    st = lay.zeros()
    d = seeker_rhs(st, game, toy_topo, GAINS)
    for name in ("eta", "theta_aux", "omega", "rho", "xi", "zeta", "s_est"):
        assert np.all(lay.pack(d)[lay.blocks[name]] == 0.0), name
    # the budget residual drives lambda towards the feasible side
    for p in range(game.n):
        np.testing.assert_array_equal(d.lam[p], -game.g[p])


def test_damped_gradient_flow_sign():
    game = scalar_pair_game()
    lay = SeekerLayout(game)
    st = lay.zeros()
    st.eta[:] = [[3.0], [0.0]]  # agent 1 above its optimum 2, agent 2 above -1
    for p in range(2):
        st.xi[p][0] = game.costs[p].gradient(st.eta.ravel())[p]
    deta, dtheta = auxiliary_rhs(st, game, GAINS)
    np.testing.assert_array_equal(deta, 0.0)
    assert dtheta[0, 0] < 0 and dtheta[1, 0] < 0
    np.testing.assert_allclose(dtheta[:, 0], [-2.0, -2.0])


def test_interior_local_multiplier_is_still(toy_game, toy_topo):
    lay = SeekerLayout(toy_game)
    st = lay.zeros()  # box is |x| <= 10, origin is interior
    domega, _, _ = multiplier_rhs(st, toy_game, toy_topo)
    for d in domega:
        np.testing.assert_array_equal(d, 0.0)


def test_dual_consensus_terms_vanish_when_agents_agree(toy_game, toy_topo):
    lay = SeekerLayout(toy_game)
    st = lay.zeros()
    for i in range(toy_game.N):
        for p in toy_game.coalition_agents(i):
            st.lam[p][:] = -0.3 + i
            st.rho[p][:] = 0.7
            # choose eta with G eta = g for every agent
            st.eta[p] = np.linalg.lstsq(toy_game.G[p], toy_game.g[p], rcond=None)[0]
    _, dlam, drho = multiplier_rhs(st, toy_game, toy_topo)
    for p in range(toy_game.n):
        np.testing.assert_allclose(dlam[p], -st.lam[p] + np.maximum(st.lam[p], 0), atol=1e-14)
        np.testing.assert_array_equal(drho[p], 0.0)


def test_tracking_singleton_coalition_fixed_point():
    game = scalar_pair_game()
    lay = SeekerLayout(game)
    st = lay.zeros()
    st.eta[:] = [[0.5], [0.25]]
    st.s_est[0][0] = st.eta[1]
    st.s_est[1][0] = st.eta[0]
    grads = [game.costs[p].gradient(st.eta.ravel())[p] for p in range(2)]
    for p in range(2):
        st.xi[p][0] = grads[p]
    dxi, dzeta = gradient_tracking_rhs(st, game, PAIR_TOPOLOGY, GAINS)
    for p in range(2):
        np.testing.assert_array_equal(dxi[p], 0.0)
        np.testing.assert_array_equal(dzeta[p], 0.0)


def test_tracking_converges_to_coalition_gradient_with_frozen_views(toy_game, toy_topo):
    stacked = StackedSeeker(toy_game, toy_topo, GAINS)
    lay = stacked.layout
    rng = np.random.default_rng(4)
    y0, st = random_state(lay, rng)
    # freeze a consistent view: every estimate equals the true eta
    for p in range(toy_game.n):
        st.s_est[p][:] = np.delete(st.eta, p, axis=0)
    y = lay.pack(st)
    moving = np.zeros(lay.size, bool)
    moving[lay.blocks["xi"]] = moving[lay.blocks["zeta"]] = True
    f = lambda t, v: np.where(moving, stacked.rhs(v), 0.0)  # noqa: E731
    for _ in range(8000):
        y = rk4_step(f, 0.0, y, 1e-3)
    final = lay.unpack(y)
    x = st.eta.ravel()
    for i in range(toy_game.N):
        target = toy_game.coalition_gradient(i, x).reshape(-1, toy_game.r)
        for p in toy_game.coalition_agents(i):
            np.testing.assert_allclose(final.xi[p], target, atol=1e-8)


def test_tracking_integrator_sums_to_zero(toy_game, toy_topo):
    lay = SeekerLayout(toy_game)
    _, st = random_state(lay, np.random.default_rng(8))
    _, dzeta = gradient_tracking_rhs(st, toy_game, toy_topo, GAINS)
    for i in range(toy_game.N):
        total = sum(dzeta[p] for p in toy_game.coalition_agents(i))
        np.testing.assert_allclose(total, 0.0, atol=1e-12)


def test_estimates_at_truth_do_not_move(toy_game, toy_topo):
    lay = SeekerLayout(toy_game)
    _, st = random_state(lay, np.random.default_rng(3))
    for p in range(toy_game.n):
        st.s_est[p][:] = np.delete(st.eta, p, axis=0)
    for d in action_estimate_rhs(st, toy_topo, GAINS):
        np.testing.assert_array_equal(d, 0.0)


def test_two_agent_estimate_decays_at_rate_kappa():
    game = scalar_pair_game()
    lay = SeekerLayout(game)
    st = lay.zeros()
    st.eta[:] = [[1.0], [-2.0]]
    stacked = StackedSeeker(game, PAIR_TOPOLOGY, GAINS)
    moving = np.zeros(lay.size, bool)
    moving[lay.blocks["s_est"]] = True
    f = lambda t, v: np.where(moving, stacked.rhs(v), 0.0)  # noqa: E731
    y = lay.pack(st)
    h, steps = 1e-3, 200
    for _ in range(steps):
        y = rk4_step(f, 0.0, y, h)
    t = h * steps
    final = lay.unpack(y)
    decay = np.exp(-GAINS.kappa * t)
    assert final.s_est[0][0, 0] == pytest.approx(-2.0 * (1 - decay), rel=1e-9)
    assert final.s_est[1][0, 0] == pytest.approx(1.0 * (1 - decay), rel=1e-9)


def test_estimation_error_norm_decreases_when_theta_is_zero(toy_game, toy_topo):
    stacked = StackedSeeker(toy_game, toy_topo, GAINS)
    lay = stacked.layout
    moving = np.zeros(lay.size, bool)
    moving[lay.blocks["s_est"]] = True
    f = lambda t, v: np.where(moving, stacked.rhs(v), 0.0)  # noqa: E731
    rng = np.random.default_rng(6)
    for _ in range(5):
        y, st = random_state(lay, rng, 5.0)
        y[lay.blocks["theta_aux"]] = 0.0
        norms = []
        for _ in range(400):
            st = lay.unpack(y)
            norms.append(np.sqrt(sum(np.sum((st.s_est[p] - np.delete(st.eta, p, axis=0)) ** 2)
                                     for p in range(toy_game.n))))
            y = rk4_step(f, 0.0, y, 1e-3)
        assert np.all(np.diff(norms) < 0)


# -- trajectory-level properties ---------------------------------------------------------------

@pytest.fixture(scope="module")
def tight_run():
    sc = random_toy_scenario(1, sim=SimConfig(horizon=200.0, tolerance=1e-10, log_stride=100))
    return sc, run(sc)


def test_stationary_point_passes_certificate(tight_run):
    sc, log = tight_run
    assert log.stop_reason == "converged"
    st = log.loop.seeker_state(log.final_state)
    cert = kkt_certificate(sc.game, st.eta.ravel(), st.lam, st.omega)
    assert cert.passes(1e-6)


def test_dual_integrator_sum_is_conserved(tight_run):
    sc, log = tight_run
    sums = np.array([[sum(log.loop.seeker_state(y).rho[p] for p in sc.game.coalition_agents(i))
                      for i in range(sc.game.N)] for y in log.states])
    drift = np.abs(sums - sums[0]).max()
    assert drift <= 1e-8 * log.final_time


# -- gains ------------------------------------------------------------------------------------

def test_gain_config_rejects_non_positive():
    with pytest.raises(ValueError):
        GainConfig(alpha=0.0)
    with pytest.raises(ValueError):
        GainConfig(kappa=float("nan"))


def test_gain_bounds_on_toy_game(toy_game, toy_topo):
    bounds = gain_lower_bounds(toy_game, toy_topo)
    assert bounds["hbar"] > 0 and bounds["lambda_L"] > 0
    assert bounds["gamma"] == 0.25
    expected_alpha = 2 + max(np.linalg.norm(B, 2) for B in toy_game.B) ** 2 \
        + 2 * bounds["ell"] ** 2 / bounds["hbar"] + toy_game.n / 2
    assert bounds["alpha"] == pytest.approx(expected_alpha)
    # the published simulation gains sit below these sufficient thresholds
    assert check_gains(GAINS, bounds) == ["alpha", "beta", "kappa"]
    big = GainConfig(alpha=bounds["alpha"] + 1, beta=bounds["beta"] + 1, kappa=bounds["kappa"] + 1)
    assert check_gains(big, bounds) == []


def test_gain_bounds_undefined_without_strong_monotonicity():
    bounds = gain_lower_bounds(build_confrontation_game(reference_battlefield()), reference_topology())
    assert bounds["alpha"] == np.inf and bounds["kappa"] == np.inf
