"""Communication topologies and the selector matrices of the estimation layer.

Agents are renumbered globally: agent ``j`` of coalition ``i`` gets index
``sum(m[:i]) + j`` (all indices 0-based inside the library).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def laplacian(adjacency) -> np.ndarray:
    """Return ``D - A`` with ``D`` the diagonal of row sums."""
    a = np.asarray(adjacency, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"adjacency must be square, got shape {a.shape}")
    return np.diag(a.sum(axis=1)) - a


def reachability(adjacency) -> np.ndarray:
    """Boolean transitive closure (Warshall). ``R[p, q]`` is True when a
    directed path p -> ... -> q exists along edges with ``A[u, v] = 1``."""
    reach = np.asarray(adjacency, dtype=bool).copy()
    np.fill_diagonal(reach, True)
    for k in range(reach.shape[0]):
        reach |= np.outer(reach[:, k], reach[k, :])
    return reach


@dataclass(frozen=True)
class CommTopology:
    """Intra-coalition undirected graphs plus the global directed graph.

    ``global_adjacency[p, q] = 1`` means agent ``p`` uses the estimates of
    agent ``q`` in its action-estimation update.
    """

    intra_adjacency: tuple
    global_adjacency: np.ndarray
    intra_laplacian: tuple = field(init=False, repr=False)
    global_laplacian: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        intra = tuple(np.array(a, dtype=float) for a in self.intra_adjacency)
        glob = np.array(self.global_adjacency, dtype=float)
        for a in intra + (glob,):
            a.setflags(write=False)
        object.__setattr__(self, "intra_adjacency", intra)
        object.__setattr__(self, "global_adjacency", glob)
        lis = tuple(laplacian(a) for a in intra)
        lg = laplacian(glob)
        for a in lis + (lg,):
            a.setflags(write=False)
        object.__setattr__(self, "intra_laplacian", lis)
        object.__setattr__(self, "global_laplacian", lg)
        sizes = [a.shape[0] for a in intra]
        if sum(sizes) != glob.shape[0]:
            raise ValueError(
                f"coalition sizes {sizes} do not add up to the {glob.shape[0]} "
                "nodes of the global graph")

    @property
    def sizes(self) -> tuple:
        return tuple(a.shape[0] for a in self.intra_adjacency)

    @property
    def n(self) -> int:
        return self.global_adjacency.shape[0]

    @classmethod
    def from_edges(cls, sizes, intra_edges, global_edges):
        """Build from edge lists (0-based). Intra edges are undirected pairs
        local to each coalition; a global edge ``(p, q)`` sets ``A[p, q] = 1``."""
        intra = []
        for m, edges in zip(sizes, intra_edges):
            a = np.zeros((m, m))
            for j, l in edges:
                a[j, l] = a[l, j] = 1.0
            intra.append(a)
        n = sum(sizes)
        glob = np.zeros((n, n))
        for p, q in global_edges:
            glob[p, q] = 1.0
        return cls(tuple(intra), glob)


@dataclass
class ConnectivityReport:
    intra_connected: list
    global_strongly_connected: bool
    violations: list

    @property
    def ok(self) -> bool:
        return not self.violations


def check_connectivity(topology: CommTopology) -> ConnectivityReport:
    """Check that every coalition graph is undirected and connected and the
    global graph is strongly connected. Uses exact reachability."""
    violations = []
    intra_ok = []
    for i, a in enumerate(topology.intra_adjacency):
        good = True
        if not np.array_equal(a, a.T):
            violations.append(f"coalition {i + 1}: graph is not undirected")
            good = False
        if np.any(np.diag(a) != 0):
            violations.append(f"coalition {i + 1}: graph has self-loops")
            good = False
        if not reachability(a).all():
            violations.append(f"coalition {i + 1}: graph is not connected")
            good = False
        intra_ok.append(good)
    strong = bool(reachability(topology.global_adjacency).all())
    if not strong:
        violations.append("global graph is not strongly connected")
    return ConnectivityReport(intra_ok, strong, violations)


@dataclass(frozen=True)
class SelectorMatrices:
    theta: np.ndarray
    xi: np.ndarray


def build_selectors(n: int, r: int) -> SelectorMatrices:
    """Block selectors on the stacked estimate vector ``s`` (length n*n*r).

    ``theta @ s`` picks every agent's own slot, ``xi @ s`` the remaining
    ``n - 1`` slots of each agent, in increasing index order.
    """
    if n < 2:
        raise ValueError("the estimation layer needs at least two agents")
    eye_n = np.eye(n)
    eye_r = np.eye(r)
    theta_blocks = [np.kron(eye_n[p:p + 1], eye_r) for p in range(n)]
    xi_blocks = [np.kron(np.delete(eye_n, p, axis=0), eye_r) for p in range(n)]
    return SelectorMatrices(_block_diag(theta_blocks), _block_diag(xi_blocks))


def _block_diag(blocks):
    rows = sum(b.shape[0] for b in blocks)
    cols = sum(b.shape[1] for b in blocks)
    out = np.zeros((rows, cols))
    i = j = 0
    for b in blocks:
        out[i:i + b.shape[0], j:j + b.shape[1]] = b
        i += b.shape[0]
        j += b.shape[1]
    return out


def build_u_basis(m: int, seed: int = 0) -> np.ndarray:
    """Orthonormal basis (m x (m-1)) of the complement of the ones vector."""
    if m < 2:
        return np.zeros((m, 0))
    rng = np.random.default_rng(seed)
    seedmat = np.column_stack([np.ones(m) / np.sqrt(m), rng.standard_normal((m, m - 1))])
    q, _ = np.linalg.qr(seedmat)
    return q[:, 1:]


def estimation_min_eigenvalue(topology: CommTopology, r: int = 1) -> float:
    """Smallest eigenvalue of ``Xi (L + L^T) Xi^T`` with ``L = Lbar kron I_{nr}``.

    Positive for the leader-following estimator to contract; computed per
    target agent (the matrix is block diagonal in the target index after a
    permutation), which keeps it cheap for larger swarms.
    """
    lbar = topology.global_laplacian
    n = lbar.shape[0]
    sym = lbar + lbar.T
    worst = np.inf
    for q in range(n):
        keep = [p for p in range(n) if p != q]
        worst = min(worst, np.linalg.eigvalsh(sym[np.ix_(keep, keep)])[0])
    return float(worst)


def grounded_min_real_part(topology: CommTopology) -> float:
    """Smallest real part over the spectra of ``Lbar`` with row and column q
    removed, minimised over q.

    Positive exactly when every estimate block ``z_q' = -kappa L_q z_q`` is
    exponentially stable; this holds for every strongly connected graph,
    while the symmetric-part test in ``estimation_min_eigenvalue`` is only
    sufficient and can fail on graphs with uneven in-degrees.
    """
    lbar = topology.global_laplacian
    n = lbar.shape[0]
    worst = np.inf
    for q in range(n):
        keep = [p for p in range(n) if p != q]
        worst = min(worst, np.linalg.eigvals(lbar[np.ix_(keep, keep)]).real.min())
    return float(worst)
