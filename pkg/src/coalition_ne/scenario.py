"""Scenario files (TOML), their schema, and the random quadratic toy generator."""

from __future__ import annotations

import sys
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError, model_validator

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .game import CoalitionGame, QuadraticCost, solve_ne_oracle
from .graph import CommTopology
from .plant import Disturbance, PlantState, make_model
from .seeker import GainConfig, SeekerLayout
from .sim import Scenario, SimConfig
from . import usv

SCHEMA_VERSION = 1


class ScenarioError(ValueError):
    """Unreadable or invalid scenario file."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class AgentSection(_Strict):
    H: list[list[float]]
    q: list[float]
    c: float = 0.0
    B: list[list[float]]
    b: list[float]
    G: list[list[float]]
    g: list[float]


class GameSection(_Strict):
    sizes: list[int]
    r: int
    agents: list[AgentSection]


class VesselSection(_Strict):
    role: Literal["attack", "intercept"]
    position: tuple[float, float]
    heading_deg: float = 0.0
    supply: float
    formation_offset: tuple[float, float] = (0.0, 0.0)
    attack_angle_deg: Optional[float] = None
    target: Optional[int] = None

    @model_validator(mode="after")
    def _role_fields(self):
        if self.role == "attack" and self.attack_angle_deg is None:
            raise ValueError("attackers need attack_angle_deg")
        if self.role == "intercept" and self.target is None:
            raise ValueError("interceptors need a target (1-based opposing vessel)")
        return self


class SwarmSection(_Strict):
    name: str
    command_center: tuple[float, float]
    supply_line: float
    supply_sign: Literal[1, -1]
    attack_weights: tuple[float, float, float, float]
    defense_weights: tuple[float, float, float, float, float]
    vessels: list[VesselSection]


class UsvSection(_Strict):
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    swarms: list[SwarmSection]


class TopologySection(_Strict):
    intra_edges: list[list[tuple[int, int]]]
    global_edges: list[tuple[int, int]]


class GainsSection(_Strict):
    alpha: float = 3.0
    beta: float = 13.0
    gamma: float = 3.0
    kappa: float = 19.0
    strict: bool = False


class PlantSection(_Strict):
    model: str
    params: dict[str, Union[float, list[float]]] = {}
    disturbance: list[list[Union[str, tuple[float, float, float]]]] = []


class InitialSection(_Strict):
    eta: Optional[list[list[float]]] = None
    x: Optional[list[list[float]]] = None
    xdot: Optional[list[list[float]]] = None


class SimSection(_Strict):
    step_size: float = 1e-3
    horizon: float = 200.0
    integrator: Literal["euler", "rk4"] = "rk4"
    log_stride: int = 100
    convergence_window: float = 1.0
    tolerance: float = 1e-6
    early_stop: bool = True
    sign_mode: Literal["exact", "boundary_layer"] = "exact"
    sigma: float = 1e-3
    divergence_bound: float = 1e12


class ScenarioFile(_Strict):
    schema_version: Literal[1]
    name: str
    description: str = ""
    game: Optional[GameSection] = None
    usv_scenario: Optional[UsvSection] = None
    topology: TopologySection
    gains: GainsSection = GainsSection()
    plant_models: Optional[PlantSection] = None
    initial: InitialSection = InitialSection()
    sim: SimSection = SimSection()

    @model_validator(mode="after")
    def _one_game(self):
        if (self.game is None) == (self.usv_scenario is None):
            raise ValueError("exactly one of [game] or [usv_scenario] is required")
        return self


# -- loading -------------------------------------------------------------------------

def resolve_path(path) -> Path:
    p = Path(path)
    if not p.exists() and p.suffix != ".toml" and p.with_suffix(".toml").exists():
        p = p.with_suffix(".toml")
    return p


def _parse_value(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(raw: dict, overrides) -> dict:
    """Apply ``key.sub=value`` strings in place; values are parsed as TOML."""
    for item in overrides or ():
        if "=" not in item:
            raise ScenarioError(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        parts = key.strip().split(".")
        node = raw
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ScenarioError(f"override {key!r}: {part!r} is not a table")
        node[parts[-1]] = _parse_value(value.strip())
    return raw


def load_raw(path) -> dict:
    p = resolve_path(path)
    try:
        with open(p, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ScenarioError(f"{p}: no such scenario file") from None
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"{p}: {exc}") from None


def parse_scenario(raw: dict, source: str = "<scenario>") -> ScenarioFile:
    try:
        return ScenarioFile.model_validate(raw)
    except ValidationError as exc:
        lines = [f"{source}: invalid scenario"]
        for err in exc.errors():
            loc = ".".join(str(v) for v in err["loc"])
            lines.append(f"  {loc}: {err['msg']}")
        raise ScenarioError("\n".join(lines)) from None


def load_scenario(path, overrides=()) -> tuple:
    """Return ``(Scenario, ScenarioFile)`` for a TOML file."""
    raw = apply_overrides(load_raw(path), overrides)
    spec = parse_scenario(raw, str(resolve_path(path)))
    return build_scenario(spec), spec


# -- building ------------------------------------------------------------------------

def _battlefield(sec: UsvSection) -> usv.BattlefieldConfig:
    deg = np.pi / 180.0
    swarms = []
    for sw in sec.swarms:
        vessels = []
        for v in sw.vessels:
            vessels.append(usv.VesselSpec(
                role=v.role, position=tuple(v.position), heading=v.heading_deg * deg,
                supply=v.supply, formation_offset=tuple(v.formation_offset),
                attack_angle=(v.attack_angle_deg or 0.0) * deg,
                target=(v.target - 1) if v.target is not None else -1))
        swarms.append(usv.SwarmSpec(sw.name, tuple(vessels), tuple(sw.command_center),
                                    sw.supply_line, tuple(sw.attack_weights),
                                    tuple(sw.defense_weights), float(sw.supply_sign)))
    try:
        return usv.BattlefieldConfig(sec.x_min, sec.x_max, sec.y_min, sec.y_max, tuple(swarms))
    except ValueError as exc:
        raise ScenarioError(f"usv_scenario: {exc}") from None


def _quadratic_game(sec: GameSection) -> CoalitionGame:
    n = sum(sec.sizes)
    if len(sec.agents) != n:
        raise ScenarioError(f"game: {len(sec.agents)} agent entries for {n} agents")
    try:
        return CoalitionGame(
            tuple(sec.sizes), sec.r,
            tuple(QuadraticCost(a.H, a.q, a.c) for a in sec.agents),
            tuple(a.B for a in sec.agents), tuple(a.b for a in sec.agents),
            tuple(a.G for a in sec.agents), tuple(a.g for a in sec.agents))
    except ValueError as exc:
        raise ScenarioError(f"game: {exc}") from None


def _topology(sec: TopologySection, sizes) -> CommTopology:
    if len(sec.intra_edges) != len(sizes):
        raise ScenarioError(f"topology: {len(sec.intra_edges)} edge lists for {len(sizes)} coalitions")
    n = sum(sizes)
    for i, edges in enumerate(sec.intra_edges):
        for e in edges:
            if not all(1 <= v <= sizes[i] for v in e):
                raise ScenarioError(f"topology.intra_edges[{i}]: edge {list(e)} outside 1..{sizes[i]}")
    for e in sec.global_edges:
        if not all(1 <= v <= n for v in e):
            raise ScenarioError(f"topology.global_edges: edge {list(e)} outside 1..{n}")
    return CommTopology.from_edges(
        sizes, [[(a - 1, b - 1) for a, b in edges] for edges in sec.intra_edges],
        [(a - 1, b - 1) for a, b in sec.global_edges])


def build_scenario(spec: ScenarioFile) -> Scenario:
    meta = {}
    if spec.usv_scenario is not None:
        field = _battlefield(spec.usv_scenario)
        game = usv.build_confrontation_game(field)
        default_x = field.initial_positions()
        meta["battlefield"] = spec.usv_scenario.model_dump()
    else:
        game = _quadratic_game(spec.game)
        field = None
        default_x = np.zeros((game.n, game.r))
    topology = _topology(spec.topology, game.sizes)
    try:
        gains = GainConfig(**spec.gains.model_dump())
        sim = SimConfig(**spec.sim.model_dump())
    except ValueError as exc:
        raise ScenarioError(str(exc)) from None

    def arr(v, name):
        a = np.asarray(v, dtype=float)
        if a.shape != (game.n, game.r):
            raise ScenarioError(f"initial.{name}: expected shape {(game.n, game.r)}, got {a.shape}")
        return a

    model = disturbance = plant_init = None
    if spec.plant_models is not None:
        pm = spec.plant_models
        kwargs = dict(pm.params)
        if pm.model == "unit_mass":
            kwargs.setdefault("r", game.r)
        try:
            model = make_model(pm.model, **kwargs)
        except (TypeError, ValueError) as exc:
            raise ScenarioError(f"plant_models: {exc}") from None
        try:
            disturbance = Disturbance.parse(pm.disturbance) if pm.disturbance else None
        except ValueError as exc:
            raise ScenarioError(f"plant_models.disturbance: {exc}") from None
        if disturbance is not None and disturbance.r != game.r:
            raise ScenarioError(f"plant_models.disturbance: {disturbance.r} coordinates, expected {game.r}")
        x0 = arr(spec.initial.x, "x") if spec.initial.x is not None else default_x
        v0 = arr(spec.initial.xdot, "xdot") if spec.initial.xdot is not None else np.zeros_like(x0)
        plant_init = PlantState(x0, v0, np.zeros((game.n, model.n_params)), np.zeros(game.n),
                                np.zeros_like(x0))
    # every decision-layer state starts at zero unless eta is given
    seeker_init = None
    if spec.initial.eta is not None:
        layout = SeekerLayout(game)
        st = layout.zeros()
        st.eta = arr(spec.initial.eta, "eta")
        seeker_init = layout.pack(st)
    meta["description"] = spec.description
    return Scenario(game=game, topology=topology, gains=gains, model=model, disturbance=disturbance,
                    seeker_init=seeker_init, plant_init=plant_init, sim=sim, name=spec.name, meta=meta)


# -- random toy -------------------------------------------------------------------------

def random_toy_game(seed: int, margin: float = 0.05) -> CoalitionGame:
    """Two coalitions of two scalar agents with strongly monotone quadratic
    costs, a binding budget in each coalition and wide, inactive bounds.

    Draws are repeated (deterministically from ``seed``) until the coupling
    multipliers exceed ``margin`` and the bounds are slack at the solution.
    """
    rng = np.random.default_rng(seed)
    sizes, n = (2, 2), 4
    for _ in range(1000):
        costs = []
        for _p in range(n):
            M = 0.5 * rng.standard_normal((n, n))
            costs.append(QuadraticCost(0.5 * M @ M.T + np.eye(n), 2.0 * rng.standard_normal(n)))
        free = CoalitionGame(sizes, 1, tuple(costs), ((),) * n, ((),) * n, ((),) * n, ((),) * n)
        Q = free.pseudo_jacobian()
        if np.linalg.eigvalsh(0.5 * (Q + Q.T))[0] < 0.3:
            continue
        x_free = np.linalg.solve(Q, -free.pseudo_offset())
        cut = rng.uniform(0.5, 1.5, size=2)
        budget = [x_free[0] + x_free[1] - cut[0], x_free[2] + x_free[3] - cut[1]]
        g = tuple(np.array([budget[i // 2] / 2]) for i in range(n))
        box = np.array([[1.0], [-1.0]])
        game = CoalitionGame(sizes, 1, tuple(costs), (box,) * n, (np.array([10.0, 10.0]),) * n,
                             (np.array([[1.0]]),) * n, g)
        sol = solve_ne_oracle(game, tol=1e-10)
        if min(sol.lam[0][0], sol.lam[2][0]) > margin and np.max(np.abs(sol.x)) < 9.0:
            return game
    raise RuntimeError(f"seed {seed}: no admissible toy game found")


def toy_topology() -> CommTopology:
    """Pairs inside each coalition, directed ring 1 -> 2 -> 3 -> 4 -> 1 across."""
    return CommTopology.from_edges((2, 2), [[(0, 1)], [(0, 1)]], [(0, 1), (1, 2), (2, 3), (3, 0)])


TOY_DISTURBANCE = Disturbance.parse([[(0.8, 1.3, 0.0), (0.4, 0.37, 1.0), "square(0.5, 7.0)"]])


def random_toy_scenario(seed: int, with_plant: bool = False, sim: SimConfig | None = None,
                        mass: float = 1.7) -> Scenario:
    game = random_toy_game(seed)
    model = make_model("unit_mass", r=1, mass=mass) if with_plant else None
    plant_init = None
    if with_plant:
        x0 = np.array([[1.0], [-1.0], [0.5], [-0.5]])
        plant_init = PlantState(x0, np.zeros((4, 1)), np.zeros((4, 1)), np.zeros(4), np.zeros((4, 1)))
    return Scenario(game, toy_topology(), GainConfig(), model, TOY_DISTURBANCE if with_plant else None,
                    None, plant_init, sim or SimConfig(), name=f"toy_seed{seed}")
