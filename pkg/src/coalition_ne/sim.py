"""Fixed-step integration of the coupled decision + physical layers, trajectory
logging and CSV/JSON output."""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .game import CoalitionGame, KktCertificate, kkt_certificate, project_nonneg
from .graph import CommTopology
from .plant import Disturbance, ElModel, PlantLayout, PlantState, sign, zero_disturbance
from .seeker import GainConfig, SeekerLayout, StackedSeeker


class DivergenceError(RuntimeError):
    """Raised when the state leaves the finite range; carries the partial log."""

    def __init__(self, message, log=None):
        super().__init__(message)
        self.log = log


@dataclass(frozen=True)
class SimConfig:
    step_size: float = 1e-3
    horizon: float = 200.0
    integrator: str = "rk4"
    log_stride: int = 100
    convergence_window: float = 1.0
    tolerance: float = 1e-6
    early_stop: bool = True
    sign_mode: str = "exact"
    sigma: float = 1e-3
    divergence_bound: float = 1e12

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if not self.horizon >= self.step_size:
            raise ValueError("horizon must be at least one step")
        if int(self.log_stride) < 1:
            raise ValueError("log_stride must be at least 1")
        if self.integrator not in ("euler", "rk4"):
            raise ValueError(f"integrator must be 'euler' or 'rk4', got {self.integrator!r}")
        if self.sign_mode not in ("exact", "boundary_layer"):
            raise ValueError(f"sign_mode must be 'exact' or 'boundary_layer', got {self.sign_mode!r}")


def euler_step(f, t, y, h, k1=None):
    return y + h * (f(t, y) if k1 is None else k1)


def rk4_step(f, t, y, h, k1=None):
    if k1 is None:
        k1 = f(t, y)
    k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = f(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


@dataclass
class Scenario:
    """Everything needed for one run. ``model`` is None for a decision-layer-only run."""

    game: CoalitionGame
    topology: CommTopology
    gains: GainConfig = field(default_factory=GainConfig)
    model: ElModel | None = None
    disturbance: Disturbance | None = None
    seeker_init: np.ndarray | None = None
    plant_init: PlantState | None = None
    sim: SimConfig = field(default_factory=SimConfig)
    name: str = "scenario"
    meta: dict = field(default_factory=dict)


class ClosedLoop:
    """Vector field of the full system on ``y = [seeker, plant]``."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        game = scenario.game
        self.game = game
        self.seeker = StackedSeeker(game, scenario.topology, scenario.gains)
        self.slay = self.seeker.layout
        self.ns = self.slay.size
        self.model = scenario.model
        n, r = game.n, game.r
        if self.model is not None:
            if self.model.r != r:
                raise ValueError(f"plant model has r={self.model.r}, game has r={r}")
            self.play = PlantLayout(n, r, self.model.n_params)
            self.disturbance = scenario.disturbance or zero_disturbance(r)
            if self.disturbance.r != r:
                raise ValueError(f"disturbance has {self.disturbance.r} coordinates, expected {r}")
        else:
            self.play = None
        self.size = self.ns + (self.play.size if self.play else 0)
        blk = self.slay.blocks
        self._eta = blk["eta"]
        self._theta = blk["theta_aux"]
        self.gamma = scenario.gains.gamma
        self.sign_mode = scenario.sim.sign_mode
        self.sigma = scenario.sim.sigma

    def initial_state(self) -> np.ndarray:
        y = np.zeros(self.size)
        if self.scenario.seeker_init is not None:
            y[:self.ns] = self.scenario.seeker_init
        if self.play is not None:
            if self.scenario.plant_init is not None:
                y[self.ns:] = self.play.pack(self.scenario.plant_init)
        return y

    def _plant_terms(self, t, y, dseek):
        n, r = self.game.n, self.game.r
        v = self.model.n_params
        a = y[self.ns:].reshape(n, self.play.width)
        x, xdot = a[:, :r], a[:, r:2 * r]
        mu_hat, d_hat = a[:, 3 * r:3 * r + v], a[:, -1]
        eta = y[self._eta].reshape(n, r)
        th = y[self._theta].reshape(n, r)
        th_dot = dseek[self._theta].reshape(n, r)
        xref_dot = th - (x - eta)
        e = xdot - xref_dot
        xref_ddot = th_dot - (xdot - th)
        ups = self.model.regressor(x, xdot, xref_ddot, xref_dot)
        off = self.model.known_offset(x, xdot, xref_ddot, xref_dot)
        sg = sign(e, self.sign_mode, self.sigma)
        u = (ups @ mu_hat[:, :, None])[:, :, 0] + off - self.gamma * e - sg * d_hat[:, None]
        d = np.broadcast_to(self.disturbance(t), x.shape)
        xddot = self.model.acceleration(x, xdot, u + self.model.disturbance_input(x, d))
        out = np.empty_like(a)
        out[:, :r] = xdot
        out[:, r:2 * r] = xddot
        out[:, 2 * r:3 * r] = xref_dot
        out[:, 3 * r:3 * r + v] = -(np.swapaxes(ups, 1, 2) @ e[:, :, None])[:, :, 0]
        out[:, -1] = np.sum(e * sg, axis=1)
        return out.ravel(), e

    def rhs(self, t, y):
        dseek = self.seeker.rhs(y[:self.ns])
        if self.play is None:
            return dseek
        dplant, _ = self._plant_terms(t, y, dseek)
        return np.concatenate([dseek, dplant])

    def tracking_error(self, t, y) -> np.ndarray:
        """Per-agent ``e`` (n x r); zeros for a decision-layer-only run."""
        if self.play is None:
            return np.zeros((self.game.n, self.game.r))
        return self._plant_terms(t, y, self.seeker.rhs(y[:self.ns]))[1]

    # -- views of the flat state ------------------------------------------
    def eta(self, y):
        return y[self._eta].reshape(self.game.n, self.game.r)

    def positions(self, y):
        if self.play is None:
            return self.eta(y)
        return y[self.ns:].reshape(self.game.n, self.play.width)[:, :self.game.r]

    def velocities(self, y):
        if self.play is None:
            return y[self._theta].reshape(self.game.n, self.game.r)
        r = self.game.r
        return y[self.ns:].reshape(self.game.n, self.play.width)[:, r:2 * r]

    def d_hat(self, y):
        if self.play is None:
            return np.zeros(self.game.n)
        return y[self.ns:].reshape(self.game.n, self.play.width)[:, -1].copy()

    def seeker_state(self, y):
        return self.slay.unpack(y[:self.ns])

    def certificate(self, y) -> KktCertificate:
        st = self.seeker_state(y)
        return kkt_certificate(self.game, st.eta.ravel(), st.lam, st.omega)

    def locate(self, index: int) -> str:
        """Human-readable owner (agent, field) of a flat state index."""
        if index < self.ns:
            for name, slices in self.slay.agent_slices.items():
                for p, s in enumerate(slices):
                    if s.start <= index < s.stop:
                        return f"agent {p + 1}, seeker field {name}"
        off = index - self.ns
        p, col = divmod(off, self.play.width)
        r, v = self.game.r, self.model.n_params
        names = ["x"] * r + ["xdot"] * r + ["x_ref"] * r + ["mu_hat"] * v + ["d_hat"]
        return f"agent {p + 1}, plant field {names[col]}"


@dataclass
class TrajectoryLog:
    times: np.ndarray
    states: np.ndarray
    e_norm: np.ndarray
    kkt_stationarity: np.ndarray
    kkt_coupling: np.ndarray
    kkt_local: np.ndarray
    loop: ClosedLoop = field(repr=False)
    certificate: KktCertificate | None = None
    stop_reason: str = "horizon"
    steps: int = 0
    wall_time: float = 0.0
    oracle_x: np.ndarray | None = None

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    @property
    def final_time(self) -> float:
        return float(self.times[-1])

    def series(self, what: str) -> np.ndarray:
        """(K, n, r) array of ``x``, ``xdot`` or ``eta`` over the records."""
        fn = {"x": self.loop.positions, "xdot": self.loop.velocities, "eta": self.loop.eta}[what]
        return np.array([fn(y) for y in self.states])

    def gap(self) -> np.ndarray | None:
        if self.oracle_x is None:
            return None
        xs = self.series("x").reshape(len(self.times), -1)
        return np.linalg.norm(xs - self.oracle_x, axis=1)


def _record(loop: ClosedLoop, t, y):
    e = loop.tracking_error(t, y)
    cert = loop.certificate(y)
    game = loop.game
    coal = np.maximum(cert.coupling_feasibility, cert.coupling_slackness)
    return (np.linalg.norm(e, axis=1), cert.stationarity,
            np.array([coal[game.coalition_of(p)] for p in range(game.n)]),
            np.maximum(np.maximum(cert.local_feasibility, cert.local_slackness), cert.dual_feasibility))


def run(scenario: Scenario, config: SimConfig | None = None, oracle_x=None,
        progress=None) -> TrajectoryLog:
    """Integrate to the horizon or until the derivative stays below the
    tolerance for a full convergence window."""
    cfg = config or scenario.sim
    loop = ClosedLoop(scenario) if config is None else ClosedLoop(_with_sim(scenario, cfg))
    step = rk4_step if cfg.integrator == "rk4" else euler_step
    h = cfg.step_size
    n_steps = int(round(cfg.horizon / h))
    stride = int(cfg.log_stride)
    window_steps = max(1, int(round(cfg.convergence_window / h)))
    y = loop.initial_state()
    times, states, recs = [], [], []

    def keep(t, y):
        times.append(t)
        states.append(y.copy())
        recs.append(_record(loop, t, y))

    def build(reason, k):
        return TrajectoryLog(
            np.array(times), np.array(states) if states else np.zeros((0, loop.size)),
            *(np.array([rr[c] for rr in recs]) if recs else np.zeros((0, loop.game.n))
              for c in range(4)),
            loop=loop, stop_reason=reason, steps=k, wall_time=time.perf_counter() - t0,
            oracle_x=None if oracle_x is None else np.asarray(oracle_x, dtype=float).ravel())

    t0 = time.perf_counter()
    keep(0.0, y)
    quiet = 0
    f = loop.rhs
    k = 0
    reason = "horizon"
    while k < n_steps:
        t = k * h
        k1 = f(t, y)
        if cfg.early_stop:
            if np.max(np.abs(k1)) < cfg.tolerance:
                quiet += 1
                if quiet >= window_steps:
                    reason = "converged"
                    break
            else:
                quiet = 0
        y = step(f, t, y, h, k1)
        k += 1
        bad = ~np.isfinite(y) | (np.abs(y) > cfg.divergence_bound)
        if bad.any():
            where = loop.locate(int(np.argmax(bad)))
            log = build("diverged", k)
            raise DivergenceError(f"state diverged at t={k * h:.6g} s ({where})", log)
        if k % stride == 0 or k == n_steps:
            keep(k * h, y)
        if progress is not None and k % 10000 == 0:
            progress(k * h)
    if times[-1] != k * h:
        keep(k * h, y)
    log = build(reason, k)
    log.certificate = loop.certificate(y)
    return log


def _with_sim(scenario: Scenario, cfg: SimConfig) -> Scenario:
    d = dict(scenario.__dict__)
    d["sim"] = cfg
    return Scenario(**d)


# -- output -----------------------------------------------------------------------

def log_header(log: TrajectoryLog) -> list:
    game = log.loop.game
    r = game.r
    p = max(G.shape[0] for G in game.G)
    q = max(B.shape[0] for B in game.B)
    cols = ["t", "agent"]
    cols += [f"x{k + 1}" for k in range(r)]
    cols += [f"xdot{k + 1}" for k in range(r)]
    cols += [f"eta{k + 1}" for k in range(r)]
    cols += ["e_norm"]
    cols += [f"lambda_plus{k + 1}" for k in range(p)]
    cols += [f"omega{k + 1}" for k in range(q)]
    cols += ["d_hat", "kkt_stationarity", "kkt_coupling", "kkt_local"]
    return cols


def _fmt(v) -> str:
    return format(float(v), ".17g")


def write_log(log: TrajectoryLog, path, config: dict | None = None) -> tuple:
    """Write ``path`` (CSV) and ``path`` with a ``.json`` suffix (sidecar)."""
    path = Path(path)
    game = log.loop.game
    header = log_header(log)
    p = max(G.shape[0] for G in game.G)
    q = max(B.shape[0] for B in game.B)
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for k, t in enumerate(log.times):
                y = log.states[k]
                st = log.loop.seeker_state(y)
                xs, vs, dh = log.loop.positions(y), log.loop.velocities(y), log.loop.d_hat(y)
                for a in range(game.n):
                    lam = project_nonneg(st.lam[a])
                    om = st.omega[a]
                    row = [_fmt(t), str(a + 1)]
                    row += [_fmt(v) for v in xs[a]]
                    row += [_fmt(v) for v in vs[a]]
                    row += [_fmt(v) for v in st.eta[a]]
                    row.append(_fmt(log.e_norm[k, a]))
                    row += [_fmt(v) for v in lam] + ["nan"] * (p - lam.size)
                    row += [_fmt(v) for v in om] + ["nan"] * (q - om.size)
                    row += [_fmt(dh[a]), _fmt(log.kkt_stationarity[k, a]),
                            _fmt(log.kkt_coupling[k, a]), _fmt(log.kkt_local[k, a])]
                    w.writerow(row)
        side = path.with_suffix(".json")
        meta = {
            "config": config or {},
            "stop_reason": log.stop_reason,
            "steps": log.steps,
            "final_time": float(log.times[-1]) if len(log.times) else 0.0,
            "certificate": log.certificate.as_dict() if log.certificate else None,
            "max_kkt_residual": log.certificate.max_residual if log.certificate else None,
        }
        if log.oracle_x is not None:
            meta["oracle_x"] = log.oracle_x.tolist()
            meta["final_gap"] = float(log.gap()[-1])
        with open(side, "w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise OSError(f"cannot write trajectory log to {path}: {exc}") from exc
    return path, side


def read_log(path):
    """Parse a CSV written by ``write_log`` into ``(header, float array)``."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    data = np.array([[float(v) for v in row] for row in rows[1:]]) if len(rows) > 1 \
        else np.zeros((0, len(header)))
    return header, data


def config_dict(scenario: Scenario) -> dict:
    return {"name": scenario.name, "gains": asdict(scenario.gains), "sim": asdict(scenario.sim),
            "sizes": list(scenario.game.sizes), "r": scenario.game.r,
            "model": scenario.model.name if scenario.model else None, **scenario.meta}
