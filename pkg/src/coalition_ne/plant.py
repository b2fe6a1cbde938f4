"""Euler-Lagrange physical layer under the adaptive robust tracking law.

Models work on batches: positions and velocities are ``(n, r)`` arrays, one
row per agent. Every agent of a scenario shares one model class but may
carry its own true parameters.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np


class ElModel:
    """Interface for ``E(x) x'' + C(x, x') x' + D = input``.

    Subclasses implement ``inertia``, ``coriolis``, ``lhs``, ``regressor`` and
    optionally ``known_offset`` / ``disturbance_input``. ``lhs(x, v, yh, yt)``
    is ``E yh + C yt + D-term``, the expression the regressor reproduces:
    ``lhs = regressor @ true_params + known_offset``.
    """

    name = "abstract"
    r: int
    n_params: int

    def inertia(self, x):
        raise NotImplementedError

    def coriolis(self, x, xdot):
        raise NotImplementedError

    def lhs(self, x, xdot, yhat, ytilde):
        raise NotImplementedError

    def regressor(self, x, xdot, yhat, ytilde):
        raise NotImplementedError

    def known_offset(self, x, xdot, yhat, ytilde):
        return np.zeros_like(np.asarray(yhat, dtype=float))

    def disturbance_input(self, x, d):
        """Generalized force produced by the raw disturbance ``d``."""
        return d

    def true_params(self) -> np.ndarray:
        raise NotImplementedError

    def acceleration(self, x, xdot, force):
        """Solve ``E xdd = force - (C xdot + D-term)`` for every agent."""
        bias = self.lhs(x, xdot, np.zeros_like(xdot), xdot)
        return np.linalg.solve(self.inertia(x), (force - bias)[..., None])[..., 0]


class UnitMassModel(ElModel):
    """Double integrator ``m x'' = input`` with unknown mass ``m``."""

    name = "unit_mass"
    n_params = 1

    def __init__(self, r: int = 1, mass=1.0):
        self.r = r
        self.mass = np.asarray(mass, dtype=float)

    def _m(self, x):
        return np.broadcast_to(self.mass, np.asarray(x).shape[:-1])

    def inertia(self, x):
        x = np.asarray(x, dtype=float)
        return self._m(x)[..., None, None] * np.eye(self.r)

    def coriolis(self, x, xdot):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape + (self.r,))

    def lhs(self, x, xdot, yhat, ytilde):
        return self._m(yhat)[..., None] * np.asarray(yhat, dtype=float)

    def regressor(self, x, xdot, yhat, ytilde):
        return np.asarray(yhat, dtype=float)[..., None]

    def true_params(self):
        return np.atleast_1d(self.mass).astype(float)


MODEL_REGISTRY = {"unit_mass": UnitMassModel}


def register_model(name: str, cls) -> None:
    MODEL_REGISTRY[name] = cls


def make_model(name: str, **kwargs) -> ElModel:
    if name not in MODEL_REGISTRY:
        from . import usv  # noqa: F401  registers the vessel model
    try:
        cls = MODEL_REGISTRY[name]
    except KeyError:
        raise ValueError(f"unknown plant model {name!r}; known: {sorted(MODEL_REGISTRY)}") from None
    return cls(**kwargs)


# -- disturbances ---------------------------------------------------------------

_SQUARE = re.compile(r"^\s*square\(\s*([^,]+)\s*,\s*([^)]+)\)\s*$")


@dataclass(frozen=True)
class Disturbance:
    """Per-coordinate sum of sinusoids and square waves.

    ``terms[c]`` is a list of ``("sin", amplitude, frequency, phase)`` or
    ``("square", amplitude, period)`` tuples; frequency is in rad/s.
    """

    terms: tuple

    @classmethod
    def parse(cls, spec):
        """Accept, per coordinate, a list whose items are ``[A, w, phase]``
        triples or ``"square(A, period)"`` strings."""
        coords = []
        for c, items in enumerate(spec):
            parsed = []
            for item in items:
                if isinstance(item, str):
                    m = _SQUARE.match(item)
                    if not m:
                        raise ValueError(f"disturbance coordinate {c + 1}: cannot parse {item!r}")
                    amp, period = float(m.group(1)), float(m.group(2))
                    if period <= 0:
                        raise ValueError(f"disturbance coordinate {c + 1}: period must be positive")
                    parsed.append(("square", amp, period))
                else:
                    vals = [float(v) for v in item]
                    if len(vals) != 3:
                        raise ValueError(f"disturbance coordinate {c + 1}: sinusoid needs "
                                         "(amplitude, frequency, phase)")
                    parsed.append(("sin", *vals))
            coords.append(tuple(parsed))
        return cls(tuple(coords))

    @property
    def r(self) -> int:
        return len(self.terms)

    def __call__(self, t: float) -> np.ndarray:
        out = np.zeros(len(self.terms))
        for c, items in enumerate(self.terms):
            for item in items:
                if item[0] == "sin":
                    out[c] += item[1] * np.sin(item[2] * t + item[3])
                else:
                    # +A on the first half period, -A on the second
                    out[c] += item[1] * (1.0 if (t % item[2]) < 0.5 * item[2] else -1.0)
        return out

    def bound(self) -> np.ndarray:
        return np.array([sum(abs(item[1]) for item in items) for items in self.terms])


def zero_disturbance(r: int) -> Disturbance:
    return Disturbance(tuple(() for _ in range(r)))


# -- control law ------------------------------------------------------------------

def sign(e, mode: str = "exact", sigma: float = 1e-3):
    """Elementwise sgn with sgn(0) = 0, or the boundary-layer surrogate
    ``e / max(||e||, sigma)`` (row-wise norm)."""
    e = np.asarray(e, dtype=float)
    if mode == "exact":
        return np.sign(e)
    if mode == "boundary_layer":
        norm = np.linalg.norm(e, axis=-1, keepdims=True)
        return e / np.maximum(norm, sigma)
    raise ValueError(f"unknown sign mode {mode!r}")


@dataclass
class PlantState:
    x: np.ndarray
    xdot: np.ndarray
    mu_hat: np.ndarray
    d_hat: np.ndarray
    x_ref: np.ndarray


class PlantLayout:
    """Flat packing: per agent ``[x, xdot, x_ref, mu_hat, d_hat]``."""

    def __init__(self, n: int, r: int, v: int):
        self.n, self.r, self.v = n, r, v
        self.width = 3 * r + v + 1
        self.size = n * self.width

    def unpack(self, y) -> PlantState:
        a = np.asarray(y, dtype=float).reshape(self.n, self.width)
        r, v = self.r, self.v
        return PlantState(a[:, :r], a[:, r:2 * r], a[:, 3 * r:3 * r + v], a[:, -1], a[:, 2 * r:3 * r])

    def pack(self, s: PlantState) -> np.ndarray:
        a = np.empty((self.n, self.width))
        r, v = self.r, self.v
        a[:, :r] = s.x
        a[:, r:2 * r] = s.xdot
        a[:, 2 * r:3 * r] = s.x_ref
        a[:, 3 * r:3 * r + v] = s.mu_hat
        a[:, -1] = s.d_hat
        return a.ravel()


def tracking_error(x, xdot, eta, theta_aux):
    """Return ``(e, xref_dot)`` with ``xref_dot = theta - (x - eta)``."""
    xref_dot = np.asarray(theta_aux) - (np.asarray(x) - np.asarray(eta))
    return np.asarray(xdot) - xref_dot, xref_dot


def reference_acceleration(xdot, theta_aux, theta_aux_dot):
    return np.asarray(theta_aux_dot) - (np.asarray(xdot) - np.asarray(theta_aux))


def control_law(regressor, offset, mu_hat, e, d_hat, gamma, sign_mode="exact", sigma=1e-3):
    """``u = Upsilon mu_hat + offset - gamma e - sgn(e) d_hat`` per agent."""
    ff = np.einsum("...ij,...j->...i", regressor, mu_hat) + offset
    return ff - gamma * e - sign(e, sign_mode, sigma) * np.asarray(d_hat)[..., None]


def adaptive_laws(regressor, e, sign_mode="exact", sigma=1e-3):
    """``(mu_hat_dot, d_hat_dot) = (-Upsilon^T e, e^T sgn(e))``."""
    mu_dot = -np.einsum("...ij,...i->...j", regressor, e)
    d_dot = np.sum(e * sign(e, sign_mode, sigma), axis=-1)
    return mu_dot, d_dot


def plant_rhs(state: PlantState, model: ElModel, eta, theta_aux, theta_aux_dot, t,
              disturbance, gamma, sign_mode="exact", sigma=1e-3):
    """Closed-loop derivative of every agent's plant state.

    Returns ``(dstate, e, u)`` where ``dstate`` is a ``PlantState`` of rates.
    """
    x, xdot = state.x, state.xdot
    e, xref_dot = tracking_error(x, xdot, eta, theta_aux)
    xref_ddot = reference_acceleration(xdot, theta_aux, theta_aux_dot)
    ups = model.regressor(x, xdot, xref_ddot, xref_dot)
    off = model.known_offset(x, xdot, xref_ddot, xref_dot)
    u = control_law(ups, off, state.mu_hat, e, state.d_hat, gamma, sign_mode, sigma)
    d = np.broadcast_to(disturbance(t), x.shape)
    xddot = model.acceleration(x, xdot, u + model.disturbance_input(x, d))
    mu_dot, d_dot = adaptive_laws(ups, e, sign_mode, sigma)
    return PlantState(xdot.copy(), xddot, mu_dot, d_dot, xref_dot), e, u
