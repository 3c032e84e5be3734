"""Agent communication graphs, Laplacians, and spectral utilities.

Graphs are unweighted and undirected, and must be connected. The
dimension-lifted Laplacian operator (Laplacian Kronecker identity) is applied
without materializing the md x md matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "AgentGraph",
    "SpectralExtremes",
    "GraphError",
    "NotConnectedError",
    "build_topology",
    "spectral_extremes",
    "apply_lifted_laplacian",
    "lifted_laplacian_dense",
    "metropolis_weights",
]

# Relative eigenvalue threshold below which an eigenvalue counts as zero.
_CONNECTIVITY_RTOL = 1e-9


class GraphError(ValueError):
    pass


class NotConnectedError(GraphError):
    pass


@dataclass(frozen=True)
class AgentGraph:
    """Undirected connected graph over ``m`` agents with its Laplacian."""

    m: int
    edges: frozenset  # frozenset of (i, j) tuples with i < j
    laplacian: np.ndarray = field(repr=False)
    neighbors: tuple = field(repr=False)  # tuple of sorted neighbor tuples

    @property
    def degrees(self) -> np.ndarray:
        return np.diag(self.laplacian).astype(int)


@dataclass(frozen=True)
class SpectralExtremes:
    """Largest and smallest non-zero Laplacian eigenvalues."""

    lambda_max: float
    lambda_min_nonzero: float


def _graph_from_edges(m: int, edges) -> AgentGraph:
    edges = frozenset(tuple(sorted(e)) for e in edges)
    lap = np.zeros((m, m))
    nbrs = [[] for _ in range(m)]
    for i, j in edges:
        if i == j or not (0 <= i < m and 0 <= j < m):
            raise GraphError(f"invalid edge ({i}, {j}) for m={m}")
        lap[i, j] = lap[j, i] = -1.0
        lap[i, i] += 1.0
        lap[j, j] += 1.0
        nbrs[i].append(j)
        nbrs[j].append(i)
    g = AgentGraph(
        m=m,
        edges=edges,
        laplacian=lap,
        neighbors=tuple(tuple(sorted(n)) for n in nbrs),
    )
    g.laplacian.setflags(write=False)
    spectral_extremes(g)  # raises NotConnectedError on a disconnected graph
    return g


def build_topology(kind: str, m: int, p: float = 0.5, seed: int = 0,
                   max_retries: int = 100) -> AgentGraph:
    """Construct a named connected topology over ``m`` agents.

    ``kind`` is one of ring, path, star, complete, erdos_renyi. Erdos-Renyi
    graphs are resampled until connected, up to ``max_retries`` draws.
    """
    if m < 2:
        raise GraphError(f"need at least 2 agents, got m={m}")
    if kind == "ring":
        edges = [(i, (i + 1) % m) for i in range(m)]
        if m == 2:  # (0,1) and (1,0) collapse to a single edge
            edges = [(0, 1)]
        return _graph_from_edges(m, edges)
    if kind == "path":
        return _graph_from_edges(m, [(i, i + 1) for i in range(m - 1)])
    if kind == "star":
        return _graph_from_edges(m, [(0, i) for i in range(1, m)])
    if kind == "complete":
        return _graph_from_edges(
            m, [(i, j) for i in range(m) for j in range(i + 1, m)])
    if kind == "erdos_renyi":
        rng = np.random.default_rng(seed)
        for _ in range(max_retries):
            mask = rng.random((m, m)) < p
            edges = [(i, j) for i in range(m) for j in range(i + 1, m)
                     if mask[i, j]]
            try:
                return _graph_from_edges(m, edges)
            except NotConnectedError:
                continue
        raise NotConnectedError(
            f"no connected erdos_renyi(p={p}) graph in {max_retries} draws")
    raise GraphError(f"unknown topology kind: {kind!r}")


def spectral_extremes(g: AgentGraph) -> SpectralExtremes:
    """Largest and smallest non-zero eigenvalue of the graph Laplacian."""
    eigs = np.linalg.eigvalsh(g.laplacian)
    lam_max = float(eigs[-1])
    lam_2 = float(eigs[1])
    if lam_2 <= _CONNECTIVITY_RTOL * max(lam_max, 1.0):
        raise NotConnectedError(
            f"graph is not connected (second eigenvalue {lam_2:.3e})")
    return SpectralExtremes(lambda_max=lam_max, lambda_min_nonzero=lam_2)


def apply_lifted_laplacian(g: AgentGraph, d: int, X: np.ndarray) -> np.ndarray:
    """Apply the dimension-lifted Laplacian to a stacked state.

    Block ``i`` of the result is ``sum_{j in N_i} (x_i - x_j)``; equivalent to
    the Kronecker-lifted Laplacian times ``X`` without forming the md x md
    matrix.
    """
    X = np.asarray(X, dtype=float)
    if X.shape != (g.m * d,):
        raise ValueError(
            f"stacked state has length {X.shape}, expected ({g.m * d},)")
    blocks = X.reshape(g.m, d)
    return (g.laplacian @ blocks).reshape(-1)


def lifted_laplacian_dense(g: AgentGraph, d: int) -> np.ndarray:
    """Dense Kronecker form of the lifted Laplacian (test/oracle use)."""
    return np.kron(g.laplacian, np.eye(d))


def metropolis_weights(g: AgentGraph) -> np.ndarray:
    """Symmetric doubly stochastic mixing matrix from node degrees."""
    deg = g.degrees
    w = np.zeros((g.m, g.m))
    for i, j in g.edges:
        w[i, j] = w[j, i] = 1.0 / (1.0 + max(deg[i], deg[j]))
    np.fill_diagonal(w, 1.0 - w.sum(axis=1))
    return w
