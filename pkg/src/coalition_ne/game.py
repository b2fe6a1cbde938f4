"""Coalition game data model, projections and KKT certification."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog


class GameError(ValueError):
    """Malformed game data or an evaluation outside the contract."""


def project_nonneg(v) -> np.ndarray:
    return np.maximum(np.asarray(v, dtype=float), 0.0)


@dataclass(frozen=True)
class QuadraticCost:
    """``J(x) = 0.5 x^T H x + q^T x + c`` over the full stacked action."""

    H: np.ndarray
    q: np.ndarray
    c: float = 0.0

    def __post_init__(self):
        H = np.array(self.H, dtype=float)
        q = np.array(self.q, dtype=float).ravel()
        if H.shape != (q.size, q.size):
            raise GameError(f"H has shape {H.shape}, expected {(q.size, q.size)}")
        H = 0.5 * (H + H.T)
        H.setflags(write=False)
        q.setflags(write=False)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "c", float(self.c))

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.H @ x + self.q @ x + self.c)

    def gradient(self, x) -> np.ndarray:
        return self.H @ np.asarray(x, dtype=float) + self.q

    def __add__(self, other):
        return QuadraticCost(self.H + other.H, self.q + other.q, self.c + other.c)

    def scaled(self, w: float):
        return QuadraticCost(w * self.H, w * self.q, w * self.c)


@dataclass(frozen=True)
class SmoothCost:
    """Black-box differentiable cost; gradient by central differences."""

    fn: object
    rel_step: float = 1e-6

    def __call__(self, x) -> float:
        val = float(self.fn(np.asarray(x, dtype=float)))
        if not np.isfinite(val):
            raise GameError("cost is not finite at the evaluation point")
        return val

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        g = np.empty_like(x)
        for k in range(x.size):
            h = self.rel_step * max(1.0, abs(x[k]))
            xp = x.copy()
            xm = x.copy()
            xp[k] += h
            xm[k] -= h
            g[k] = (self(xp) - self(xm)) / (2 * h)
        return g


def finite_difference_gradient(fn, x, rel_step=1e-6) -> np.ndarray:
    return SmoothCost(fn, rel_step).gradient(x)


@dataclass(frozen=True)
class CoalitionGame:
    """N coalitions, ``sizes[i]`` agents each, every action in R^r.

    ``costs``, ``B``, ``b``, ``G``, ``g`` are flat tuples indexed by the global
    agent number. Agent ``p`` has local constraint ``B[p] x_p <= b[p]`` and
    contributes ``G[p] x_p`` / ``g[p]`` to its coalition's shared budget.
    """

    sizes: tuple
    r: int
    costs: tuple
    B: tuple
    b: tuple
    G: tuple
    g: tuple
    offsets: tuple = field(init=False, repr=False)

    def __post_init__(self):
        sizes = tuple(int(m) for m in self.sizes)
        if not sizes or min(sizes) < 1:
            raise GameError("every coalition needs at least one agent")
        n = sum(sizes)
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "offsets", tuple(int(o) for o in np.cumsum((0,) + sizes[:-1])))
        for name in ("costs", "B", "b", "G", "g"):
            if len(getattr(self, name)) != n:
                raise GameError(f"{name} must have one entry per agent ({n})")
        B = tuple(np.atleast_2d(np.array(m, dtype=float)).reshape(-1, self.r) for m in self.B)
        b = tuple(np.array(v, dtype=float).ravel() for v in self.b)
        G = tuple(np.atleast_2d(np.array(m, dtype=float)).reshape(-1, self.r) for m in self.G)
        g = tuple(np.array(v, dtype=float).ravel() for v in self.g)
        for p in range(n):
            if B[p].shape[0] != b[p].size:
                raise GameError(f"agent {p + 1}: B has {B[p].shape[0]} rows but b has {b[p].size}")
            if G[p].shape[0] != g[p].size:
                raise GameError(f"agent {p + 1}: G has {G[p].shape[0]} rows but g has {g[p].size}")
        for i in range(len(sizes)):
            rows = {G[p].shape[0] for p in self.coalition_agents(i)}
            if len(rows) != 1:
                raise GameError(f"coalition {i + 1}: coupling matrices disagree on row count")
        for arr in B + b + G + g:
            arr.setflags(write=False)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "g", g)

    # -- indexing ---------------------------------------------------------
    @property
    def N(self) -> int:
        return len(self.sizes)

    @property
    def n(self) -> int:
        return sum(self.sizes)

    @property
    def dim(self) -> int:
        return self.n * self.r

    def agent_index(self, i: int, j: int) -> int:
        if not 0 <= i < self.N:
            raise GameError(f"no coalition {i}")
        if not 0 <= j < self.sizes[i]:
            raise GameError(f"coalition {i} has no agent {j}")
        return self.offsets[i] + j

    def coalition_of(self, p: int) -> int:
        return int(np.searchsorted(self.offsets, p, side="right") - 1)

    def coalition_agents(self, i: int) -> range:
        return range(self.offsets[i], self.offsets[i] + self.sizes[i])

    def agent_slice(self, p: int) -> slice:
        return slice(p * self.r, (p + 1) * self.r)

    def coalition_slice(self, i: int) -> slice:
        return slice(self.offsets[i] * self.r, (self.offsets[i] + self.sizes[i]) * self.r)

    def coupling_rows(self, i: int) -> int:
        return self.G[self.offsets[i]].shape[0]

    @property
    def is_quadratic(self) -> bool:
        return all(isinstance(c, QuadraticCost) for c in self.costs)

    def _check_x(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).ravel()
        if x.size != self.dim:
            raise GameError(f"stacked action has length {x.size}, expected {self.dim}")
        return x

    # -- costs and gradients ------------------------------------------------
    def coalition_cost(self, i: int, x) -> float:
        if not 0 <= i < self.N:
            raise GameError(f"no coalition {i}")
        x = self._check_x(x)
        return float(np.mean([self.costs[p](x) for p in self.coalition_agents(i)]))

    def partial_gradient(self, i: int, j: int, k: int, x) -> np.ndarray:
        """Gradient of agent (i, j)'s own cost w.r.t. agent (i, k)'s action."""
        p = self.agent_index(i, j)
        q = self.agent_index(i, k)
        x = self._check_x(x)
        return self.costs[p].gradient(x)[self.agent_slice(q)]

    def coalition_gradient(self, i: int, x) -> np.ndarray:
        """``d J_i / d x_i`` (length m_i * r)."""
        x = self._check_x(x)
        sl = self.coalition_slice(i)
        return np.mean([self.costs[p].gradient(x)[sl] for p in self.coalition_agents(i)], axis=0)

    def pseudogradient(self, x) -> np.ndarray:
        x = self._check_x(x)
        return np.concatenate([self.coalition_gradient(i, x) for i in range(self.N)])

    def pseudo_jacobian(self) -> np.ndarray:
        """Constant Jacobian of the pseudogradient (quadratic games only)."""
        if not self.is_quadratic:
            raise GameError("pseudo_jacobian needs quadratic costs")
        rows = []
        for i in range(self.N):
            sl = self.coalition_slice(i)
            rows.append(np.mean([self.costs[p].H[sl] for p in self.coalition_agents(i)], axis=0))
        return np.vstack(rows)

    def pseudo_offset(self) -> np.ndarray:
        """``F(0)`` for quadratic games, so ``F(x) = Q x + F(0)``."""
        return self.pseudogradient(np.zeros(self.dim))

    # -- constraint data in stacked form ----------------------------------
    def constraint_system(self):
        """Stack every inequality as ``A x <= c``.

        Rows are ordered: coupling rows of coalition 1..N, then local rows of
        agent 1..n. Returns ``(A, c, coupling_index, local_index)`` where the
        index lists hold row slices per coalition / per agent.
        """
        blocks, rhs, coup_idx, loc_idx = [], [], [], []
        row = 0
        for i in range(self.N):
            a = np.zeros((self.coupling_rows(i), self.dim))
            c = np.zeros(self.coupling_rows(i))
            for p in self.coalition_agents(i):
                a[:, self.agent_slice(p)] = self.G[p]
                c += self.g[p]
            blocks.append(a)
            rhs.append(c)
            coup_idx.append(slice(row, row + a.shape[0]))
            row += a.shape[0]
        for p in range(self.n):
            a = np.zeros((self.B[p].shape[0], self.dim))
            a[:, self.agent_slice(p)] = self.B[p]
            blocks.append(a)
            rhs.append(self.b[p])
            loc_idx.append(slice(row, row + a.shape[0]))
            row += a.shape[0]
        if row == 0:
            return np.zeros((0, self.dim)), np.zeros(0), coup_idx, loc_idx
        return np.vstack(blocks), np.concatenate(rhs), coup_idx, loc_idx

    def coupling_violation(self, i: int, x) -> np.ndarray:
        """``sum_j G_ij x_ij - sum_j g_ij`` (nonpositive when feasible)."""
        x = self._check_x(x)
        return sum(self.G[p] @ x[self.agent_slice(p)] - self.g[p] for p in self.coalition_agents(i))


@dataclass(frozen=True)
class KktCertificate:
    """Residuals of the NE optimality system, all nonnegative.

    ``stationarity``, ``local_feasibility``, ``local_slackness`` and
    ``dual_feasibility`` are per agent; coupling entries are per coalition.
    ``dual_feasibility`` is the norm of the negative part of omega.
    """

    stationarity: np.ndarray
    coupling_feasibility: np.ndarray
    local_feasibility: np.ndarray
    coupling_slackness: np.ndarray
    local_slackness: np.ndarray
    dual_feasibility: np.ndarray

    def as_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in self.__dataclass_fields__}

    @property
    def max_residual(self) -> float:
        vals = [np.max(getattr(self, k), initial=0.0) for k in self.__dataclass_fields__]
        return float(max(vals))

    def passes(self, tol: float) -> bool:
        return self.max_residual <= tol


def kkt_certificate(game: CoalitionGame, x, lam, omega) -> KktCertificate:
    """Evaluate the KKT residuals of ``x`` with per-agent multipliers.

    ``lam[p]`` is agent p's raw coupling dual (its positive part is used),
    ``omega[p]`` its local-constraint multiplier.
    """
    x = game._check_x(x)
    if len(lam) != game.n or len(omega) != game.n:
        raise GameError("need one lambda and one omega per agent")
    lam = [np.asarray(v, dtype=float).ravel() for v in lam]
    omega = [np.asarray(v, dtype=float).ravel() for v in omega]
    n, N = game.n, game.N
    stat = np.zeros(n)
    loc_feas = np.zeros(n)
    loc_slack = np.zeros(n)
    dual = np.zeros(n)
    coup_feas = np.zeros(N)
    coup_slack = np.zeros(N)
    for i in range(N):
        grad = game.coalition_gradient(i, x)
        viol = game.coupling_violation(i, x)
        coup_feas[i] = np.linalg.norm(project_nonneg(viol))
        for j, p in enumerate(game.coalition_agents(i)):
            if lam[p].size != game.G[p].shape[0]:
                raise GameError(f"agent {p + 1}: lambda has {lam[p].size} entries, "
                                f"expected {game.G[p].shape[0]}")
            if omega[p].size != game.B[p].shape[0]:
                raise GameError(f"agent {p + 1}: omega has {omega[p].size} entries, "
                                f"expected {game.B[p].shape[0]}")
            lp = project_nonneg(lam[p])
            xp = x[game.agent_slice(p)]
            res = grad[j * game.r:(j + 1) * game.r] + game.G[p].T @ lp + game.B[p].T @ omega[p]
            stat[p] = np.linalg.norm(res)
            local = game.B[p] @ xp - game.b[p]
            loc_feas[p] = np.linalg.norm(project_nonneg(local))
            loc_slack[p] = np.linalg.norm(omega[p] * local)
            dual[p] = np.linalg.norm(np.minimum(omega[p], 0.0))
            coup_slack[i] = max(coup_slack[i], np.linalg.norm(lp * viol))
    return KktCertificate(stat, coup_feas, loc_feas, coup_slack, loc_slack, dual)


# -- load-time validation ----------------------------------------------------

@dataclass
class CheckResult:
    name: str
    status: str  # "pass" | "warn" | "fail"
    detail: str
    value: float = float("nan")


def slater_margin(game: CoalitionGame, i: int) -> float:
    """Largest ``t`` (capped at 1) such that some ``x_i`` satisfies every
    local and coupling row of coalition ``i`` with slack ``t``."""
    agents = list(game.coalition_agents(i))
    r = game.r
    nv = len(agents) * r + 1
    rows, rhs = [], []
    coup = np.zeros((game.coupling_rows(i), nv))
    coup_rhs = np.zeros(game.coupling_rows(i))
    for j, p in enumerate(agents):
        coup[:, j * r:(j + 1) * r] = game.G[p]
        coup_rhs += game.g[p]
        loc = np.zeros((game.B[p].shape[0], nv))
        loc[:, j * r:(j + 1) * r] = game.B[p]
        rows.append(loc)
        rhs.append(game.b[p])
    rows.append(coup)
    rhs.append(coup_rhs)
    a = np.vstack(rows)
    a[:, -1] = 1.0
    c = np.zeros(nv)
    c[-1] = -1.0
    bounds = [(None, None)] * (nv - 1) + [(None, 1.0)]
    res = linprog(c, A_ub=a, b_ub=np.concatenate(rhs), bounds=bounds, method="highs")
    if res.status == 2:
        return -np.inf
    if res.status != 0:
        raise GameError(f"coalition {i + 1}: Slater program failed ({res.message})")
    return float(res.x[-1])


def convexity_moduli(game: CoalitionGame) -> np.ndarray:
    """Per coalition, the smallest eigenvalue of the Hessian of J_i over x_i."""
    if not game.is_quadratic:
        raise GameError("convexity moduli are computed for quadratic games")
    out = []
    for i in range(game.N):
        sl = game.coalition_slice(i)
        h = np.mean([game.costs[p].H[sl, sl] for p in game.coalition_agents(i)], axis=0)
        out.append(np.linalg.eigvalsh(h)[0])
    return np.array(out)


def monotonicity_constants(game: CoalitionGame, samples: int = 64, seed: int = 0):
    """Estimate (hbar, ell): strong-monotonicity and Lipschitz constants of F.

    Exact eigenvalue computations for quadratic games, random pairs otherwise.
    """
    if game.is_quadratic:
        Q = game.pseudo_jacobian()
        hbar = float(np.linalg.eigvalsh(0.5 * (Q + Q.T))[0])
        ell = float(np.linalg.norm(Q, 2))
        return hbar, ell
    rng = np.random.default_rng(seed)
    hbar, ell = np.inf, 0.0
    for _ in range(samples):
        x, y = rng.standard_normal((2, game.dim))
        d = x - y
        dF = game.pseudogradient(x) - game.pseudogradient(y)
        hbar = min(hbar, d @ dF / (d @ d))
        ell = max(ell, np.linalg.norm(dF) / np.linalg.norm(d))
    return float(hbar), float(ell)


def validate_game(game: CoalitionGame, slater_tol: float = 1e-6) -> list:
    checks = []
    for i in range(game.N):
        margin = slater_margin(game, i)
        ok = margin > slater_tol
        checks.append(CheckResult(
            f"slater[coalition {i + 1}]", "pass" if ok else "fail",
            f"strict feasibility margin {margin:.3g}" if np.isfinite(margin)
            else "constraints are infeasible", margin))
    if game.is_quadratic:
        for i, mod in enumerate(convexity_moduli(game)):
            checks.append(CheckResult(
                f"convexity[coalition {i + 1}]", "pass" if mod > 0 else "fail",
                f"smallest Hessian eigenvalue of J_i over x_i: {mod:.4g}", mod))
        hbar, ell = monotonicity_constants(game)
        checks.append(CheckResult(
            "monotonicity", "pass" if hbar > 0 else "warn",
            f"pseudogradient strong-monotonicity {hbar:.4g}, Lipschitz {ell:.4g}", hbar))
    return checks


# -- centralized reference solver ----------------------------------------------

class OracleError(RuntimeError):
    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


@dataclass
class OracleResult:
    x: np.ndarray
    lam: list
    omega: list
    certificate: KktCertificate
    iterations: int
    method: str


def _split_multipliers(game, mu, coup_idx, loc_idx):
    lam, omega = [], []
    for i in range(game.N):
        for _ in game.coalition_agents(i):
            lam.append(mu[coup_idx[i]].copy())
    for p in range(game.n):
        omega.append(mu[loc_idx[p]].copy())
    return lam, omega


def _polish(game, A, c, x, mu, act_tol):
    """Solve the equality-constrained KKT system on the guessed active set."""
    Q = game.pseudo_jacobian()
    f0 = game.pseudo_offset()
    active = np.flatnonzero((mu > 1e-12) | (A @ x - c > -act_tol))
    k = active.size
    K = np.zeros((game.dim + k, game.dim + k))
    K[:game.dim, :game.dim] = Q
    K[:game.dim, game.dim:] = A[active].T
    K[game.dim:, :game.dim] = A[active]
    rhs = np.concatenate([-f0, c[active]])
    sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    mu_new = np.zeros_like(mu)
    mu_new[active] = np.maximum(sol[game.dim:], 0.0)
    return sol[:game.dim], mu_new


@np.errstate(over="ignore", invalid="ignore")  # divergence is reported as OracleError
def solve_ne_oracle(game: CoalitionGame, tol: float = 1e-8, max_iter: int = 200_000,
                    x0=None, check_every: int = 50) -> OracleResult:
    """Centralized NE by extragradient on the primal-dual monotone operator
    ``(x, mu) -> (F(x) + A^T mu, c - A x)`` with ``mu >= 0``.

    Quadratic games additionally try an active-set solve of the linear KKT
    system every ``check_every`` iterations, which makes the answer exact up
    to round-off once the active set is identified. Returns the first iterate
    whose certificate passes ``tol``.
    """
    A, c, coup_idx, loc_idx = game.constraint_system()
    x = np.zeros(game.dim) if x0 is None else np.asarray(x0, dtype=float).copy()
    mu = np.zeros(A.shape[0])
    _, ell = monotonicity_constants(game)
    a_norm = np.linalg.norm(A, 2) if A.size else 0.0
    tau = 0.9 / max(ell + a_norm, 1e-12)
    F = game.pseudogradient
    best = (np.inf, None)
    scale = max(1.0, float(np.max(np.abs(c), initial=0.0)))

    def certify(xc, muc):
        lam, om = _split_multipliers(game, muc, coup_idx, loc_idx)
        return kkt_certificate(game, xc, lam, om), lam, om

    for it in range(1, max_iter + 1):
        g = F(x) + A.T @ mu
        xb = x - tau * g
        mub = np.maximum(mu + tau * (A @ x - c), 0.0)
        x = x - tau * (F(xb) + A.T @ mub)
        mu = np.maximum(mu + tau * (A @ xb - c), 0.0)
        if not np.all(np.isfinite(x)):
            raise OracleError("oracle iterate became non-finite", best[1])
        if it % check_every:
            continue
        cert, lam, om = certify(x, mu)
        if cert.max_residual < best[0]:
            best = (cert.max_residual, cert)
        if cert.passes(tol):
            return OracleResult(x, lam, om, cert, it, "extragradient")
        if game.is_quadratic:
            xp, mup = _polish(game, A, c, x, mu, act_tol=1e-3 * scale)
            cert, lam, om = certify(xp, mup)
            if cert.max_residual < best[0]:
                best = (cert.max_residual, cert)
            if cert.passes(tol):
                return OracleResult(xp, lam, om, cert, it, "active-set")
    raise OracleError(f"oracle did not reach tol={tol:g} in {max_iter} iterations "
                      f"(best max residual {best[0]:.3g})", best[1])
