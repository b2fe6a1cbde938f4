"""Surface-vessel swarm confrontation: vessel dynamics in Euler-Lagrange form,
task costs, battlefield constraints and the reference two-swarm scenario.

Action of every vessel is ``(x, y, heading)``; headings are in radians.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .game import CoalitionGame, GameError, QuadraticCost
from .graph import CommTopology
from .plant import ElModel, register_model

# Body-frame generator: Psi(phi)^T dPsi/dphi
SKEW = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])

PARAM_NAMES = ("X_u", "Y_v", "Y_r", "N_v", "N_r", "X_udot", "Y_vdot", "Y_rdot", "N_vdot", "N_rdot")


@dataclass(frozen=True)
class UsvParams:
    """Rigid-body constants (known) and hydrodynamic coefficients (unknown).

    Naming follows the usual surge/sway/yaw convention: ``u`` surge speed,
    ``v`` sway speed, ``r`` yaw rate.
    """

    mass: float = 23.8
    x_g: float = 0.046
    I_z: float = 1.76
    X_u: float = -0.723
    Y_v: float = -0.861
    Y_r: float = 0.108
    N_v: float = 0.105
    N_r: float = 1.900
    X_udot: float = -2.0
    Y_vdot: float = -10.0
    Y_rdot: float = 0.0
    N_vdot: float = 0.0
    N_rdot: float = -1.0

    def hydro(self) -> np.ndarray:
        return np.array([getattr(self, k) for k in PARAM_NAMES])

    def mass_matrix(self) -> np.ndarray:
        m, xg = self.mass, self.x_g
        return np.array([
            [m - self.X_udot, 0.0, 0.0],
            [0.0, m - self.Y_vdot, m * xg - self.Y_rdot],
            [0.0, m * xg - self.N_vdot, self.I_z - self.N_rdot],
        ])

    def damping_matrix(self) -> np.ndarray:
        return -np.array([
            [self.X_u, 0.0, 0.0],
            [0.0, self.Y_v, self.Y_r],
            [0.0, self.N_v, self.N_r],
        ])

    def coriolis_body(self, nu) -> np.ndarray:
        u, v, r = nu
        a = (self.mass - self.X_udot) * u
        c = -(self.mass - self.Y_vdot) * v - (self.mass * self.x_g - self.Y_rdot) * r
        return np.array([[0.0, 0.0, c], [0.0, 0.0, a], [-c, -a, 0.0]])

    def check(self) -> list:
        problems = []
        M = self.mass_matrix()
        if not np.allclose(M, M.T):
            problems.append("mass matrix is not symmetric")
        elif np.linalg.eigvalsh(M)[0] <= 0:
            problems.append("mass matrix is not positive definite")
        return problems


def rotation(phi) -> np.ndarray:
    """Body-to-world rotation; batched over the shape of ``phi``."""
    phi = np.asarray(phi, dtype=float)
    c, s = np.cos(phi), np.sin(phi)
    out = np.zeros(phi.shape + (3, 3))
    out[..., 0, 0] = c
    out[..., 0, 1] = -s
    out[..., 1, 0] = s
    out[..., 1, 1] = c
    out[..., 2, 2] = 1.0
    return out


def usv_el_matrices(params: UsvParams, phi: float, xdot):
    """World-frame ``(E, C, D)`` at heading ``phi`` and velocity ``xdot``."""
    psi = rotation(phi)
    M = params.mass_matrix()
    nu = psi.T @ np.asarray(xdot, dtype=float)
    H = M @ SKEW * nu[2]
    E = psi @ M @ psi.T
    C = psi @ (params.coriolis_body(nu) - H) @ psi.T
    D = psi @ params.damping_matrix() @ psi.T
    return E, C, D


def _body_terms(x, xdot, yhat, ytilde):
    psi = rotation(np.asarray(x)[..., 2])
    psiT = np.swapaxes(psi, -1, -2)
    nu = np.einsum("...ij,...j->...i", psiT, xdot)
    nh = np.einsum("...ij,...j->...i", psiT, yhat)
    nt = np.einsum("...ij,...j->...i", psiT, ytilde)
    r = nu[..., 2]
    a = np.stack([nh[..., 0] + r * nt[..., 1], nh[..., 1] - r * nt[..., 0], nh[..., 2]], axis=-1)
    return psi, nu, nt, a


def usv_regressor(x, xdot, yhat, ytilde) -> np.ndarray:
    """3 x 10 matrix (batched) multiplying the hydrodynamic coefficients in
    ``E yhat + C ytilde + D ytilde``; columns ordered as ``PARAM_NAMES``."""
    psi, nu, nt, a = _body_terms(x, xdot, yhat, ytilde)
    u, v, r = nu[..., 0], nu[..., 1], nu[..., 2]
    z = np.zeros_like(u)
    cols = [
        (-nt[..., 0], z, z),                                  # X_u
        (z, -nt[..., 1], z),                                  # Y_v
        (z, -nt[..., 2], z),                                  # Y_r
        (z, z, -nt[..., 1]),                                  # N_v
        (z, z, -nt[..., 2]),                                  # N_r
        (-a[..., 0], -u * nt[..., 2], u * nt[..., 1]),        # X_udot
        (v * nt[..., 2], -a[..., 1], -v * nt[..., 0]),        # Y_vdot
        (r * nt[..., 2], -a[..., 2], -r * nt[..., 0]),        # Y_rdot
        (z, z, -a[..., 1]),                                   # N_vdot
        (z, z, -a[..., 2]),                                   # N_rdot
    ]
    body = np.stack([np.stack(c, axis=-1) for c in cols], axis=-1)
    return psi @ body


def usv_known_offset(params: UsvParams, x, xdot, yhat, ytilde) -> np.ndarray:
    """Part of ``E yhat + C ytilde + D ytilde`` that depends only on mass,
    centre-of-gravity offset and yaw inertia."""
    psi, nu, nt, a = _body_terms(x, xdot, yhat, ytilde)
    m, xg, iz = params.mass, params.x_g, params.I_z
    u, v, r = nu[..., 0], nu[..., 1], nu[..., 2]
    c0 = -m * v - m * xg * r
    body = np.stack([
        m * a[..., 0] + c0 * nt[..., 2],
        m * a[..., 1] + m * xg * a[..., 2] + m * u * nt[..., 2],
        m * xg * a[..., 1] + iz * a[..., 2] - c0 * nt[..., 0] - m * u * nt[..., 1],
    ], axis=-1)
    return np.einsum("...ij,...j->...i", psi, body)


def usv_controller(phi, u_world) -> np.ndarray:
    """Body-frame thrust/moment producing the world-frame command ``u_world``."""
    psi = rotation(phi)
    return np.einsum("...ji,...j->...i", psi, u_world)


class UsvModel(ElModel):
    """Batched vessel model; the disturbance enters in the body frame."""

    name = "usv"
    r = 3
    n_params = 10

    def __init__(self, params: UsvParams | None = None, **overrides):
        self.params = params or UsvParams(**overrides)
        problems = self.params.check()
        if problems:
            raise ValueError("; ".join(problems))
        self._M = self.params.mass_matrix()
        self._Phi = self.params.damping_matrix()

    def inertia(self, x):
        psi = rotation(np.asarray(x)[..., 2])
        return psi @ self._M @ np.swapaxes(psi, -1, -2)

    def coriolis(self, x, xdot):
        x = np.asarray(x, dtype=float)
        xdot = np.asarray(xdot, dtype=float)
        flat_x = x.reshape(-1, 3)
        flat_v = xdot.reshape(-1, 3)
        out = np.array([usv_el_matrices(self.params, a[2], b)[1] for a, b in zip(flat_x, flat_v)])
        return out.reshape(x.shape + (3,))

    def lhs(self, x, xdot, yhat, ytilde):
        return (np.einsum("...ij,...j->...i", self.regressor(x, xdot, yhat, ytilde), self.params.hydro())
                + self.known_offset(x, xdot, yhat, ytilde))

    def regressor(self, x, xdot, yhat, ytilde):
        return usv_regressor(x, xdot, yhat, ytilde)

    def known_offset(self, x, xdot, yhat, ytilde):
        return usv_known_offset(self.params, x, xdot, yhat, ytilde)

    def disturbance_input(self, x, d):
        return np.einsum("...ij,...j->...i", rotation(np.asarray(x)[..., 2]), d)

    def true_params(self):
        return self.params.hydro()

    def acceleration(self, x, xdot, force):
        # body frame: M nudot = Psi^T force - Pi(nu) nu - Phi nu ; xdd = Psi (nudot + S r nu)
        psi = rotation(np.asarray(x)[..., 2])
        psiT = np.swapaxes(psi, -1, -2)
        nu = np.einsum("...ij,...j->...i", psiT, xdot)
        tau = np.einsum("...ij,...j->...i", psiT, force)
        u, v, r = nu[..., 0], nu[..., 1], nu[..., 2]
        p = self.params
        a_ = (p.mass - p.X_udot) * u
        c_ = -(p.mass - p.Y_vdot) * v - (p.mass * p.x_g - p.Y_rdot) * r
        pi_nu = np.stack([c_ * r, a_ * r, -c_ * u - a_ * v], axis=-1)
        rhs = tau - pi_nu - nu @ self._Phi.T
        nudot = np.linalg.solve(self._M, rhs.reshape(-1, 3).T).T.reshape(rhs.shape)
        body = nudot + np.stack([-r * v, r * u, np.zeros_like(u)], axis=-1)
        return np.einsum("...ij,...j->...i", psi, body)


register_model("usv", UsvModel)


# -- battlefield and tasks ----------------------------------------------------------

ATTACK, INTERCEPT = "attack", "intercept"


@dataclass(frozen=True)
class VesselSpec:
    role: str
    position: tuple
    heading: float = 0.0
    supply: float = 0.0
    formation_offset: tuple = (0.0, 0.0)
    attack_angle: float = 0.0   # attackers only (rad)
    target: int = -1            # interceptors only: 0-based index into the opposing swarm


@dataclass(frozen=True)
class SwarmSpec:
    name: str
    vessels: tuple
    command_center: tuple
    supply_line: float
    attack_weights: tuple       # four weights for the attacker tasks
    defense_weights: tuple      # five weights for the interceptor tasks
    supply_sign: float = 1.0    # +1: budget on x - line, -1: budget on line - x

    @property
    def attackers(self) -> list:
        return [k for k, v in enumerate(self.vessels) if v.role == ATTACK]

    @property
    def defenders(self) -> list:
        return [k for k, v in enumerate(self.vessels) if v.role == INTERCEPT]


@dataclass(frozen=True)
class BattlefieldConfig:
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    swarms: tuple

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise GameError("; ".join(problems))

    def problems(self) -> list:
        out = []
        if not self.x_min < self.x_max:
            out.append("x_min must be below x_max")
        if not self.y_min < self.y_max:
            out.append("y_min must be below y_max")
        if len(self.swarms) != 2:
            out.append("exactly two swarms are supported")
            return out
        for i, sw in enumerate(self.swarms):
            other = self.swarms[1 - i]
            if len(sw.attack_weights) != 4 or len(sw.defense_weights) != 5:
                out.append(f"swarm {sw.name}: need 4 attack and 5 defense weights")
            for k, v in enumerate(sw.vessels):
                if v.role not in (ATTACK, INTERCEPT):
                    out.append(f"swarm {sw.name} vessel {k + 1}: unknown role {v.role!r}")
                elif v.role == INTERCEPT:
                    if not 0 <= v.target < len(other.vessels) or other.vessels[v.target].role != ATTACK:
                        out.append(f"swarm {sw.name} vessel {k + 1}: intercept target must be an "
                                   f"attacker of swarm {other.name}")
        return out

    @property
    def sizes(self) -> tuple:
        return tuple(len(s.vessels) for s in self.swarms)

    def global_index(self, i: int, k: int) -> int:
        return sum(self.sizes[:i]) + k

    def initial_positions(self) -> np.ndarray:
        return np.array([[*v.position, v.heading] for sw in self.swarms for v in sw.vessels])


def _positions(cfg: BattlefieldConfig, x):
    return np.asarray(x, dtype=float).reshape(sum(cfg.sizes), 3)


def task_cost(kind: str, cfg: BattlefieldConfig, i: int, k: int, x) -> float:
    """Evaluate one named task cost for vessel ``k`` (0-based) of swarm ``i``
    directly from positions.

    Kinds: ``attack1..attack4`` and ``defend1..defend5``.
    """
    X = _positions(cfg, x)
    sw, other = cfg.swarms[i], cfg.swarms[1 - i]
    role = sw.vessels[k].role
    if kind.startswith("attack") and role != ATTACK:
        raise GameError(f"{kind} applies to attackers, vessel {k + 1} of {sw.name} is {role}")
    if kind.startswith("defend") and role != INTERCEPT:
        raise GameError(f"{kind} applies to interceptors, vessel {k + 1} of {sw.name} is {role}")
    me = X[cfg.global_index(i, k)]
    pos = me[:2]
    if kind == "attack1":
        return float(np.sum((pos - np.asarray(other.command_center)) ** 2))
    if kind == "attack2":
        return float(-sum(np.sum((pos - X[cfg.global_index(1 - i, q), :2]) ** 2)
                          for q in range(len(other.vessels))))
    if kind == "attack3":
        return float((me[2] - sw.vessels[k].attack_angle) ** 2)
    if kind == "attack4":
        centre = np.mean([X[cfg.global_index(i, q), :2] for q in sw.attackers], axis=0)
        return float(np.sum((pos - centre - np.asarray(sw.vessels[k].formation_offset)) ** 2))
    if kind in ("defend1", "defend2", "defend3"):
        foe = X[cfg.global_index(1 - i, sw.vessels[k].target)]
        if kind == "defend1":
            goal = 0.5 * (foe[:2] - np.asarray(sw.command_center))
            return float(np.sum((pos - goal) ** 2))
        if kind == "defend2":
            return float(np.sum((pos - foe[:2]) ** 2))
        return float((me[2] + foe[2]) ** 2)
    if kind == "defend4":
        centre = np.mean([X[cfg.global_index(i, q), :2] for q in sw.defenders], axis=0)
        return float(np.sum((pos - centre - np.asarray(sw.vessels[k].formation_offset)) ** 2))
    if kind == "defend5":
        centre = np.mean([X[cfg.global_index(i, q), :2] for q in sw.defenders], axis=0)
        return float(np.sum((centre - np.asarray(sw.command_center)) ** 2))
    raise GameError(f"unknown task kind {kind!r}")


def vessel_cost(cfg: BattlefieldConfig, i: int, k: int, x) -> float:
    """Weighted task sum of one vessel, by direct evaluation."""
    sw = cfg.swarms[i]
    if sw.vessels[k].role == ATTACK:
        return sum(w * task_cost(f"attack{l + 1}", cfg, i, k, x) for l, w in enumerate(sw.attack_weights))
    return sum(w * task_cost(f"defend{l + 1}", cfg, i, k, x) for l, w in enumerate(sw.defense_weights))


def _square(weight, S, t) -> QuadraticCost:
    """``weight * ||S x - t||^2`` as a quadratic form."""
    S = np.atleast_2d(S)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    return QuadraticCost(2 * weight * S.T @ S, -2 * weight * S.T @ t, weight * float(t @ t))


def build_confrontation_game(cfg: BattlefieldConfig) -> CoalitionGame:
    n = sum(cfg.sizes)
    dim = 3 * n

    def pos(p):
        S = np.zeros((2, dim))
        S[0, 3 * p] = S[1, 3 * p + 1] = 1.0
        return S

    def head(p):
        S = np.zeros((1, dim))
        S[0, 3 * p + 2] = 1.0
        return S

    costs, B, b, G, g = [], [], [], [], []
    box = np.array([[1.0, 0, 0], [0, 1.0, 0], [-1.0, 0, 0], [0, -1.0, 0]])
    box_rhs = np.array([cfg.x_max, cfg.y_max, -cfg.x_min, -cfg.y_min])
    for i, sw in enumerate(cfg.swarms):
        other = cfg.swarms[1 - i]
        gi = lambda q: cfg.global_index(i, q)        # noqa: E731
        go = lambda q: cfg.global_index(1 - i, q)    # noqa: E731
        for k, v in enumerate(sw.vessels):
            p = gi(k)
            total = QuadraticCost(np.zeros((dim, dim)), np.zeros(dim))
            if v.role == ATTACK:
                w = sw.attack_weights
                total += _square(w[0], pos(p), other.command_center)
                for q in range(len(other.vessels)):
                    total += _square(-w[1], pos(p) - pos(go(q)), np.zeros(2))
                total += _square(w[2], head(p), [v.attack_angle])
                centre = np.mean([pos(gi(q)) for q in sw.attackers], axis=0)
                total += _square(w[3], pos(p) - centre, v.formation_offset)
            else:
                w = sw.defense_weights
                foe = go(v.target)
                total += _square(w[0], pos(p) - 0.5 * pos(foe), -0.5 * np.asarray(sw.command_center))
                total += _square(w[1], pos(p) - pos(foe), np.zeros(2))
                total += _square(w[2], head(p) + head(foe), [0.0])
                centre = np.mean([pos(gi(q)) for q in sw.defenders], axis=0)
                total += _square(w[3], pos(p) - centre, v.formation_offset)
                total += _square(w[4], centre, sw.command_center)
            costs.append(total)
            B.append(box)
            b.append(box_rhs)
            G.append(np.array([[sw.supply_sign, 0.0, 0.0]]))
            g.append(np.array([v.supply + sw.supply_sign * sw.supply_line]))
    return CoalitionGame(cfg.sizes, 3, tuple(costs), tuple(B), tuple(b), tuple(G), tuple(g))


# -- reference scenario ----------------------------------------------------------------

def reference_battlefield() -> BattlefieldConfig:
    """Two six-vessel swarms on a 2000 m square with the published roster."""
    deg = np.pi / 180.0
    red_offsets = [(0, 100), (0, -100), (0, 150), (0, 50), (0, -50), (0, -150)]
    blue_offsets = [(0, 100), (0, 0), (0, -10), (0, 100), (0, 0), (0, -100)]
    red = SwarmSpec(
        name="red",
        vessels=(
            VesselSpec(ATTACK, (-500, -300), 0.0, 500, red_offsets[0], 120 * deg),
            VesselSpec(ATTACK, (-500, -500), 0.0, 500, red_offsets[1], 60 * deg),
            VesselSpec(INTERCEPT, (-500, 500), 0.0, 300, red_offsets[2], target=0),
            VesselSpec(INTERCEPT, (-500, 300), 0.0, 300, red_offsets[3], target=1),
            VesselSpec(INTERCEPT, (-500, 100), 0.0, 400, red_offsets[4], target=2),
            VesselSpec(INTERCEPT, (-500, -100), 0.0, 500, red_offsets[5], target=2),
        ),
        command_center=(-1000.0, 0.0),
        supply_line=-1000.0,
        attack_weights=(0.01, 5.0, 1.0, 20.0),
        defense_weights=(2.0, 1.0, 30.0, 5.0, 1.0),
        supply_sign=1.0,
    )
    pi = np.pi
    blue = SwarmSpec(
        name="blue",
        vessels=(
            VesselSpec(ATTACK, (500, -100), pi, 500, blue_offsets[0], 225 * deg),
            VesselSpec(ATTACK, (500, -300), pi, 500, blue_offsets[1], 270 * deg),
            VesselSpec(ATTACK, (500, -500), pi, 500, blue_offsets[2], 315 * deg),
            VesselSpec(INTERCEPT, (500, 500), pi, 300, blue_offsets[3], target=0),
            VesselSpec(INTERCEPT, (500, 300), pi, 300, blue_offsets[4], target=0),
            VesselSpec(INTERCEPT, (500, 100), pi, 400, blue_offsets[5], target=1),
        ),
        command_center=(1000.0, 0.0),
        supply_line=1000.0,
        attack_weights=(0.01, 5.0, 1.0, 0.4),
        defense_weights=(2.0, 5.0, 10.0, 1.0, 3.0),
        supply_sign=-1.0,
    )
    return BattlefieldConfig(-1000.0, 1000.0, -1000.0, 1000.0, (red, blue))


def reference_topology() -> CommTopology:
    """Six-node ring-with-chords graphs inside each swarm and a directed
    cross-swarm ring (0-based; blue vessel j is global node 6 + j)."""
    red_edges = [(0, 1), (0, 5), (1, 2), (2, 5), (2, 3), (3, 4), (4, 5)]
    blue_edges = [(0, 1), (0, 3), (0, 5), (1, 2), (2, 3), (3, 4), (4, 5)]
    ring = [(p, p + 1) for p in range(11)] + [(11, 0)]
    chords = [(11, 2), (9, 4)]
    return CommTopology.from_edges((6, 6), [red_edges, blue_edges], ring + chords)
