"""Decision-layer dynamics: auxiliary primal flow, multipliers, gradient
tracking and leader-following action estimation.

Two independent evaluations of the same vector field live here. The
per-agent functions (``auxiliary_rhs`` ... ``seeker_rhs``) loop over agents
and neighbours exactly as each agent would compute its update. ``StackedSeeker``
assembles the whole field as sparse/dense matrices acting on a flat vector
and is what the integrator uses.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .game import CoalitionGame, project_nonneg, monotonicity_constants
from .graph import CommTopology, build_selectors, build_u_basis, estimation_min_eigenvalue


@dataclass(frozen=True)
class GainConfig:
    alpha: float = 3.0
    beta: float = 13.0
    gamma: float = 3.0
    kappa: float = 19.0
    strict: bool = False

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "kappa"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"gain {name} must be a positive number, got {v}")


def gain_lower_bounds(game: CoalitionGame, topology: CommTopology) -> dict:
    """Sufficient gain thresholds of the convergence analysis.

    Uses hbar/ell from ``monotonicity_constants`` and ``Q_i = I``. Returns
    ``inf`` for alpha/beta/kappa when the pseudogradient is not strongly
    monotone (the thresholds are then undefined).
    """
    hbar, ell = monotonicity_constants(game)
    b_norm = max(np.linalg.norm(B, 2) for B in game.B) if game.n else 0.0
    c_p = 0.0
    for i, lap in enumerate(topology.intra_laplacian):
        m = lap.shape[0]
        if m < 2:
            continue
        u = build_u_basis(m)
        top = np.hstack([-np.eye(m) - lap, -lap @ u])
        bottom = np.hstack([u.T @ lap, np.zeros((m - 1, m - 1))])
        M = np.vstack([top, bottom])
        P = scipy.linalg.solve_continuous_lyapunov(M.T, -np.eye(2 * m - 1))
        c_p = max(c_p, float(np.linalg.eigvalsh(0.5 * (P + P.T))[-1]))
    lam_l = estimation_min_eigenvalue(topology)
    out = {"hbar": hbar, "ell": ell, "c_p": c_p, "lambda_L": lam_l, "gamma": 0.25}
    if hbar <= 0 or lam_l <= 0:
        out.update(alpha=np.inf, beta=np.inf, kappa=np.inf)
        return out
    out["alpha"] = 2 + b_norm ** 2 + 2 * ell ** 2 / hbar + game.n / 2
    out["kappa"] = (2 / lam_l) * (0.5 + ell * c_p + ell ** 2 / hbar + ell ** 2 / 2)
    out["beta"] = ell * c_p + 8 * ell ** 2 * c_p ** 2 / hbar + 1 / hbar + 0.5
    return out


def check_gains(gains: GainConfig, bounds: dict) -> list:
    """Names of gains that do not exceed their sufficient threshold."""
    return [k for k in ("alpha", "beta", "gamma", "kappa") if not getattr(gains, k) > bounds[k]]


@dataclass
class SeekerState:
    """Per-agent decision state (global agent index ``p``).

    ``xi[p]`` and ``zeta[p]`` have one row per agent of p's coalition (the
    tracked target ``k``); ``s_est[p]`` has one row per other agent, in
    increasing global order.
    """

    eta: np.ndarray
    theta_aux: np.ndarray
    omega: list
    lam: list
    rho: list
    xi: list
    zeta: list
    s_est: list

    def copy(self):
        return SeekerState(self.eta.copy(), self.theta_aux.copy(),
                           *[[a.copy() for a in getattr(self, k)]
                             for k in ("omega", "lam", "rho", "xi", "zeta", "s_est")])


class SeekerLayout:
    """Maps a ``SeekerState`` to and from one flat vector.

    Blocks in order: eta, theta_aux, omega, lam, rho, xi, zeta, s_est; each
    block is the concatenation over agents.
    """

    FIELDS = ("eta", "theta_aux", "omega", "lam", "rho", "xi", "zeta", "s_est")

    def __init__(self, game: CoalitionGame):
        self.game = game
        n, r = game.n, game.r
        self.n, self.r = n, r
        sizes = {
            "eta": [r] * n,
            "theta_aux": [r] * n,
            "omega": [game.B[p].shape[0] for p in range(n)],
            "lam": [game.G[p].shape[0] for p in range(n)],
            "rho": [game.G[p].shape[0] for p in range(n)],
            "xi": [game.sizes[game.coalition_of(p)] * r for p in range(n)],
            "zeta": [game.sizes[game.coalition_of(p)] * r for p in range(n)],
            "s_est": [(n - 1) * r] * n,
        }
        self.agent_slices = {}
        self.blocks = {}
        pos = 0
        for name in self.FIELDS:
            start = pos
            sl = []
            for length in sizes[name]:
                sl.append(slice(pos, pos + length))
                pos += length
            self.agent_slices[name] = sl
            self.blocks[name] = slice(start, pos)
        self.size = pos

    def zeros(self) -> SeekerState:
        return self.unpack(np.zeros(self.size))

    def unpack(self, y) -> SeekerState:
        y = np.asarray(y, dtype=float)
        if y.shape != (self.size,):
            raise ValueError(f"seeker vector has shape {y.shape}, expected ({self.size},)")
        n, r = self.n, self.r
        a = self.agent_slices
        return SeekerState(
            eta=y[self.blocks["eta"]].reshape(n, r).copy(),
            theta_aux=y[self.blocks["theta_aux"]].reshape(n, r).copy(),
            omega=[y[s].copy() for s in a["omega"]],
            lam=[y[s].copy() for s in a["lam"]],
            rho=[y[s].copy() for s in a["rho"]],
            xi=[y[s].reshape(-1, r).copy() for s in a["xi"]],
            zeta=[y[s].reshape(-1, r).copy() for s in a["zeta"]],
            s_est=[y[s].reshape(n - 1, r).copy() for s in a["s_est"]],
        )

    def pack(self, state: SeekerState) -> np.ndarray:
        y = np.empty(self.size)
        y[self.blocks["eta"]] = np.asarray(state.eta).ravel()
        y[self.blocks["theta_aux"]] = np.asarray(state.theta_aux).ravel()
        for name in ("omega", "lam", "rho", "xi", "zeta", "s_est"):
            for p, s in enumerate(self.agent_slices[name]):
                y[s] = np.asarray(getattr(state, name)[p]).ravel()
        return y


def estimate_slot(p: int, q: int) -> int:
    """Row of ``s_est[p]`` holding agent q's estimate (q != p)."""
    if p == q:
        raise ValueError("an agent keeps no estimate of itself")
    return q if q < p else q - 1


def agent_view(state: SeekerState, p: int) -> np.ndarray:
    """Agent p's view of the whole profile (n x r): own eta, estimates elsewhere."""
    n = state.eta.shape[0]
    chi = np.empty_like(state.eta)
    for q in range(n):
        chi[q] = state.eta[p] if q == p else state.s_est[p][estimate_slot(p, q)]
    return chi


# -- per-agent route ---------------------------------------------------------

def auxiliary_rhs(state: SeekerState, game: CoalitionGame, gains: GainConfig):
    deta = state.theta_aux.copy()
    dtheta = np.empty_like(state.theta_aux)
    for i in range(game.N):
        for j, p in enumerate(game.coalition_agents(i)):
            B, b, G = game.B[p], game.b[p], game.G[p]
            own_grad = state.xi[p][j]
            local = project_nonneg(state.omega[p] + B @ state.eta[p] - b)
            dtheta[p] = (-gains.alpha * state.theta_aux[p]
                         - (own_grad + G.T @ project_nonneg(state.lam[p]) + B.T @ local))
    return deta, dtheta


def multiplier_rhs(state: SeekerState, game: CoalitionGame, topology: CommTopology):
    domega, dlam, drho = [], [], []
    for p in range(game.n):
        B, b = game.B[p], game.b[p]
        domega.append(B @ state.theta_aux[p] - state.omega[p]
                      + project_nonneg(state.omega[p] + B @ state.eta[p] - b))
    for i in range(game.N):
        agents = list(game.coalition_agents(i))
        adj = topology.intra_adjacency[i]
        for j, p in enumerate(agents):
            rho_cons = np.zeros_like(state.rho[p])
            lam_cons = np.zeros_like(state.lam[p])
            own_plus = project_nonneg(state.lam[p])
            for l, q in enumerate(agents):
                if adj[j, l]:
                    rho_cons += adj[j, l] * (state.rho[p] - state.rho[q])
                    lam_cons += adj[j, l] * (own_plus - project_nonneg(state.lam[q]))
            dlam.append(-state.lam[p] + own_plus + game.G[p] @ state.eta[p] - game.g[p]
                        - rho_cons - lam_cons)
            drho.append(lam_cons)
    return domega, dlam, drho


def gradient_tracking_rhs(state: SeekerState, game: CoalitionGame, topology: CommTopology,
                          gains: GainConfig):
    dxi, dzeta = [], []
    for i in range(game.N):
        agents = list(game.coalition_agents(i))
        adj = topology.intra_adjacency[i]
        for j, p in enumerate(agents):
            chi = agent_view(state, p).ravel()
            grad = game.costs[p].gradient(chi)
            dx = np.empty_like(state.xi[p])
            dz = np.empty_like(state.zeta[p])
            for k, q in enumerate(agents):
                xi_cons = np.zeros(game.r)
                zeta_cons = np.zeros(game.r)
                for l, o in enumerate(agents):
                    if adj[j, l]:
                        xi_cons += adj[j, l] * (state.xi[p][k] - state.xi[o][k])
                        zeta_cons += adj[j, l] * (state.zeta[p][k] - state.zeta[o][k])
                driving = grad[game.agent_slice(q)]
                dx[k] = -gains.beta * (state.xi[p][k] + xi_cons + zeta_cons - driving)
                dz[k] = gains.beta * xi_cons
            dxi.append(dx)
            dzeta.append(dz)
    return dxi, dzeta


def action_estimate_rhs(state: SeekerState, topology: CommTopology, gains: GainConfig):
    adj = topology.global_adjacency
    n = adj.shape[0]
    out = []
    for p in range(n):
        ds = np.zeros_like(state.s_est[p])
        for l in range(n):
            if not adj[p, l]:
                continue
            for q in range(n):
                if q == p:
                    continue
                mine = state.s_est[p][estimate_slot(p, q)]
                theirs = state.eta[l] if q == l else state.s_est[l][estimate_slot(l, q)]
                ds[estimate_slot(p, q)] -= gains.kappa * adj[p, l] * (mine - theirs)
        out.append(ds)
    return out


def seeker_rhs(state: SeekerState, game: CoalitionGame, topology: CommTopology,
               gains: GainConfig) -> SeekerState:
    deta, dtheta = auxiliary_rhs(state, game, gains)
    domega, dlam, drho = multiplier_rhs(state, game, topology)
    dxi, dzeta = gradient_tracking_rhs(state, game, topology, gains)
    ds = action_estimate_rhs(state, topology, gains)
    return SeekerState(deta, dtheta, domega, dlam, drho, dxi, dzeta, ds)


# -- stacked route -----------------------------------------------------------

def _block_diag(blocks, shape_rows, shape_cols):
    if not blocks:
        return sp.csr_matrix((shape_rows, shape_cols))
    return sp.block_diag(blocks, format="csr")


@dataclass
class StackedSeeker:
    """Matrix form of the decision layer on the flat ``SeekerLayout`` vector.

    ``rhs(y) = A y + c + K_lam P+(y[lam]) + K_om P+(S_om y - b) [+ beta * Gamma(y)]``
    where the last term is only present for non-quadratic costs.
    """

    game: CoalitionGame
    topology: CommTopology
    gains: GainConfig
    dense_threshold: int = 400
    layout: SeekerLayout = field(init=False)

    def __post_init__(self):
        game, topo, gains = self.game, self.topology, self.gains
        if topo.sizes != game.sizes:
            raise ValueError(f"topology sizes {topo.sizes} do not match game sizes {game.sizes}")
        lay = self.layout = SeekerLayout(game)
        n, r, N = game.n, game.r, game.N
        blk = lay.blocks
        size = lay.size

        Bd = _block_diag([sp.csr_matrix(B) for B in game.B], 0, n * r)
        Gd = _block_diag([sp.csr_matrix(G) for G in game.G], 0, n * r)
        b = np.concatenate(game.b) if n else np.zeros(0)
        g = np.concatenate(game.g) if n else np.zeros(0)
        n_om = Bd.shape[0]
        n_lam = Gd.shape[0]
        L_lam = sp.block_diag(
            [sp.kron(topo.intra_laplacian[i], sp.identity(game.coupling_rows(i)))
             for i in range(N)], format="csr")
        L_xi = sp.block_diag(
            [sp.kron(topo.intra_laplacian[i], sp.identity(game.sizes[i] * r)) for i in range(N)],
            format="csr")
        n_xi = L_xi.shape[0]
        # own-gradient selector: row p*r+c picks xi_p[j_p][c]
        rows, cols = [], []
        for i in range(N):
            for j, p in enumerate(game.coalition_agents(i)):
                base = lay.agent_slices["xi"][p].start - blk["xi"].start + j * r
                rows.extend(range(p * r, (p + 1) * r))
                cols.extend(range(base, base + r))
        R_sel = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n * r, n_xi))

        sel = build_selectors(n, r)
        Theta = sp.csr_matrix(sel.theta)
        Xi = sp.csr_matrix(sel.xi)
        L_big = sp.kron(sp.csr_matrix(topo.global_laplacian), sp.identity(n * r), format="csr")
        est_z = -gains.kappa * (Xi @ L_big @ Xi.T)
        est_eta = -gains.kappa * (Xi @ L_big @ Theta.T)
        # s_full = Xi^T z + Theta^T eta
        self._xi_T = Xi.T.tocsr()
        self._theta_T = Theta.T.tocsr()

        A = sp.lil_matrix((size, size))
        c = np.zeros(size)

        def put(rsl, csl, mat):
            A[rsl, csl] = A[rsl, csl] + (mat.toarray() if sp.issparse(mat) else mat)

        put(blk["eta"], blk["theta_aux"], sp.identity(n * r))
        put(blk["theta_aux"], blk["theta_aux"], -gains.alpha * sp.identity(n * r))
        put(blk["theta_aux"], blk["xi"], -R_sel)
        put(blk["omega"], blk["theta_aux"], Bd)
        put(blk["omega"], blk["omega"], -sp.identity(n_om))
        put(blk["lam"], blk["lam"], -sp.identity(n_lam))
        put(blk["lam"], blk["eta"], Gd)
        put(blk["lam"], blk["rho"], -L_lam)
        c[blk["lam"]] = -g
        put(blk["xi"], blk["xi"], -gains.beta * (sp.identity(n_xi) + L_xi))
        put(blk["xi"], blk["zeta"], -gains.beta * L_xi)
        put(blk["zeta"], blk["xi"], gains.beta * L_xi)
        put(blk["s_est"], blk["s_est"], est_z)
        put(blk["s_est"], blk["eta"], est_eta)

        self.quadratic = game.is_quadratic
        if self.quadratic:
            # Gamma = W s_full + w0, one dense block per agent
            W_blocks, w0 = [], []
            for i in range(N):
                sl = game.coalition_slice(i)
                for p in game.coalition_agents(i):
                    W_blocks.append(sp.csr_matrix(game.costs[p].H[sl]))
                    w0.append(game.costs[p].q[sl])
            W = sp.block_diag(W_blocks, format="csr")
            self._w0 = np.concatenate(w0)
            put(blk["xi"], blk["s_est"], gains.beta * (W @ self._xi_T))
            put(blk["xi"], blk["eta"], gains.beta * (W @ self._theta_T))
            c[blk["xi"]] += gains.beta * self._w0

        K_lam = sp.lil_matrix((size, n_lam))
        K_lam[blk["theta_aux"], :] = -Gd.T.toarray()
        K_lam[blk["lam"], :] = (sp.identity(n_lam) - L_lam).toarray()
        K_lam[blk["rho"], :] = L_lam.toarray()
        K_om = sp.lil_matrix((size, n_om))
        K_om[blk["theta_aux"], :] = -Bd.T.toarray()
        K_om[blk["omega"], :] = sp.identity(n_om).toarray()
        S_om = sp.lil_matrix((n_om, size))
        S_om[:, blk["omega"]] = sp.identity(n_om).toarray()
        S_om[:, blk["eta"]] = Bd.toarray()

        dense = size <= self.dense_threshold
        conv = (lambda m: m.toarray()) if dense else (lambda m: m.tocsr())
        self.A = conv(A)
        self.c = c
        self.K_lam = conv(K_lam)
        self.K_om = conv(K_om)
        self.S_om = conv(S_om)
        self.b_vec = b
        self._lam_block = blk["lam"]
        self._dense = dense

    @property
    def size(self) -> int:
        return self.layout.size

    def full_estimates(self, y) -> np.ndarray:
        """``s = Xi^T z + Theta^T eta`` as an (n, n*r) array of agent views."""
        blk = self.layout.blocks
        s = self._xi_T @ y[blk["s_est"]] + self._theta_T @ y[blk["eta"]]
        return s.reshape(self.game.n, self.game.n * self.game.r)

    def _gradient_forcing(self, y) -> np.ndarray:
        game = self.game
        views = self.full_estimates(y)
        out = []
        for i in range(game.N):
            sl = game.coalition_slice(i)
            for p in game.coalition_agents(i):
                out.append(game.costs[p].gradient(views[p])[sl])
        return np.concatenate(out)

    def rhs(self, y) -> np.ndarray:
        dy = self.A @ y + self.c
        dy += self.K_lam @ np.maximum(y[self._lam_block], 0.0)
        dy += self.K_om @ np.maximum(self.S_om @ y - self.b_vec, 0.0)
        if not self.quadratic:
            dy[self.layout.blocks["xi"]] += self.gains.beta * self._gradient_forcing(y)
        return dy
