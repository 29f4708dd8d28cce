"""Communication graphs and doubly stochastic mixing matrices.

Provides the four experiment graph families (Watts-Strogatz, Erdos-Renyi,
8-connected lattice, two-clique barbell), the lazy Metropolis and
normalized-Laplacian weight constructions, and spectral-gap utilities.
All generators are deterministic given (parameters, seed); connectivity of
random graphs is enforced by retrying with an incremented seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

#: Tolerance for row/column sums of a doubly stochastic matrix.
STOCHASTIC_TOL = 1e-12

#: Maximum reseeding attempts before a random generator gives up on connectivity.
MAX_CONNECTIVITY_RETRIES = 100


class GraphError(ValueError):
    """Invalid graph parameters or construction failure."""


class ConnectivityError(GraphError):
    """A random generator failed to produce a connected graph."""


class WeightMatrixError(ValueError):
    """A weight matrix violates the doubly stochastic contract."""


@dataclass(frozen=True, eq=False)
class GraphTopology:
    """Undirected connected graph on nodes 0..n-1.

    Edges are stored as sorted (i, j) pairs with i < j. Instances are
    immutable after construction and safe to share across threads.
    """

    n: int
    edges: frozenset[tuple[int, int]]
    degrees: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        if self.n < 1:
            raise GraphError(f"node count must be positive, got {self.n}")
        degs = [0] * self.n
        for i, j in self.edges:
            if i == j:
                raise GraphError(f"self-loop at node {i}")
            if not (0 <= i < j < self.n):
                raise GraphError(f"edge ({i}, {j}) out of range for n={self.n}")
            degs[i] += 1
            degs[j] += 1
        object.__setattr__(self, "degrees", tuple(degs))
        if not self.is_connected():
            raise GraphError("graph is disconnected")

    @classmethod
    def from_edges(cls, n: int, edges) -> "GraphTopology":
        """Build a topology from any iterable of (i, j) pairs."""
        canon = frozenset((min(i, j), max(i, j)) for i, j in edges)
        return cls(n=n, edges=canon)

    def adjacency_sets(self) -> list[set[int]]:
        adj: list[set[int]] = [set() for _ in range(self.n)]
        for i, j in self.edges:
            adj[i].add(j)
            adj[j].add(i)
        return adj

    def is_connected(self) -> bool:
        if self.n == 1:
            return True
        adj = self.adjacency_sets()
        seen = {0}
        stack = [0]
        while stack:
            u = stack.pop()
            for v in adj[u]:
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        return len(seen) == self.n

    def adjacency_matrix(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        for i, j in self.edges:
            a[i, j] = 1.0
            a[j, i] = 1.0
        return a

    def to_edgelist_text(self) -> str:
        """Serialize as: first line ``n``, then one ``i j`` pair per line."""
        lines = [str(self.n)]
        lines += [f"{i} {j}" for i, j in sorted(self.edges)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_edgelist_text(cls, text: str) -> "GraphTopology":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        n = int(lines[0])
        edges = [tuple(int(tok) for tok in ln.split()) for ln in lines[1:]]
        return cls.from_edges(n, edges)


@dataclass(frozen=True, eq=False)
class ConsensusMatrix:
    """Dense doubly stochastic mixing matrix with its cached sigma_2.

    ``sigma2`` is the second-largest singular value; 1 - sigma2 is the
    spectral gap. Entries are validated at construction: nonnegative, row
    and column sums within STOCHASTIC_TOL of 1, and (when a topology is
    supplied) zero off the graph edges.
    """

    n: int
    entries: np.ndarray
    sigma2: float

    def __post_init__(self):
        self.entries.setflags(write=False)

    @classmethod
    def from_entries(cls, entries: np.ndarray,
                     graph: GraphTopology | None = None) -> "ConsensusMatrix":
        w = np.asarray(entries, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise WeightMatrixError(f"expected a square matrix, got shape {w.shape}")
        n = w.shape[0]
        if np.any(w < -STOCHASTIC_TOL):
            raise WeightMatrixError("negative entries")
        rows = w.sum(axis=1)
        cols = w.sum(axis=0)
        if np.max(np.abs(rows - 1.0)) > STOCHASTIC_TOL:
            raise WeightMatrixError(
                f"row sums deviate from 1 by {np.max(np.abs(rows - 1.0)):.3e}")
        if np.max(np.abs(cols - 1.0)) > STOCHASTIC_TOL:
            raise WeightMatrixError(
                f"column sums deviate from 1 by {np.max(np.abs(cols - 1.0)):.3e}")
        if graph is not None:
            if graph.n != n:
                raise WeightMatrixError("graph size does not match matrix size")
            allowed = graph.adjacency_matrix() + np.eye(n)
            if np.any((w != 0.0) & (allowed == 0.0)):
                raise WeightMatrixError("nonzero entry off the graph structure")
        return cls(n=n, entries=w.copy(), sigma2=_second_singular_value(w))

    def to_csv_text(self) -> str:
        """One matrix row per line, comma separated, full precision."""
        return "\n".join(",".join(repr(float(v)) for v in row)
                         for row in self.entries) + "\n"

    @classmethod
    def from_csv_text(cls, text: str,
                      graph: GraphTopology | None = None) -> "ConsensusMatrix":
        rows = [[float(tok) for tok in ln.split(",")]
                for ln in text.splitlines() if ln.strip()]
        return cls.from_entries(np.array(rows), graph=graph)


def _second_singular_value(w: np.ndarray) -> float:
    """sigma_2 by full symmetric eigendecomposition, or SVD when asymmetric."""
    if w.shape == (1, 1):
        return 0.0
    if np.allclose(w, w.T, atol=1e-12, rtol=0.0):
        sigmas = np.sort(np.abs(np.linalg.eigvalsh(w)))[::-1]
    else:
        sigmas = np.linalg.svd(w, compute_uv=False)
    return float(sigmas[1])


def spectral_gap(w: ConsensusMatrix) -> float:
    """Return 1 - sigma_2(W)."""
    return 1.0 - w.sigma2


# ---------------------------------------------------------------------------
# graph generators
# ---------------------------------------------------------------------------

def _retry_connected(build, seed: int, what: str) -> GraphTopology:
    """Call build(seed) until connected, bumping the seed up to the retry cap."""
    for attempt in range(MAX_CONNECTIVITY_RETRIES):
        edges, n = build(seed + attempt)
        canon = frozenset((min(i, j), max(i, j)) for i, j in edges)
        candidate = object.__new__(GraphTopology)
        # bypass the connectivity check so we can retry instead of raising
        object.__setattr__(candidate, "n", n)
        object.__setattr__(candidate, "edges", canon)
        degs = [0] * n
        for i, j in canon:
            degs[i] += 1
            degs[j] += 1
        object.__setattr__(candidate, "degrees", tuple(degs))
        if candidate.is_connected():
            return candidate
    raise ConnectivityError(
        f"{what}: no connected graph after {MAX_CONNECTIVITY_RETRIES} seeds "
        f"starting at {seed}")


def generate_watts_strogatz(n: int, k: int, theta: float,
                            seed: int = 0) -> GraphTopology:
    """Watts-Strogatz small-world graph.

    Starts from a ring lattice where every node links to its k nearest
    neighbors (k/2 per side), then rewires the far endpoint of each ring
    edge independently with probability ``theta``, avoiding self-loops and
    duplicate edges. Reseeds until the result is connected.

    Parameters
    ----------
    n : int
        Node count, must exceed k.
    k : int
        Mean degree, even and >= 2.
    theta : float
        Rewiring probability in [0, 1].
    seed : int
        Base RNG seed.
    """
    if k < 2 or k % 2 != 0:
        raise GraphError(f"mean degree k must be even and >= 2, got {k}")
    if n <= k:
        raise GraphError(f"need n > k, got n={n}, k={k}")
    if not 0.0 <= theta <= 1.0:
        raise GraphError(f"rewiring probability must be in [0, 1], got {theta}")

    def build(s: int):
        rng = np.random.default_rng(s)
        adj: list[set[int]] = [set() for _ in range(n)]
        for i in range(n):
            for off in range(1, k // 2 + 1):
                j = (i + off) % n
                adj[i].add(j)
                adj[j].add(i)
        for i in range(n):
            for off in range(1, k // 2 + 1):
                j = (i + off) % n
                if rng.random() >= theta:
                    continue
                candidates = [v for v in range(n) if v != i and v not in adj[i]]
                if not candidates:
                    continue
                new_j = candidates[rng.integers(len(candidates))]
                adj[i].discard(j)
                adj[j].discard(i)
                adj[i].add(new_j)
                adj[new_j].add(i)
        edges = [(i, j) for i in range(n) for j in adj[i] if i < j]
        return edges, n

    return _retry_connected(build, seed, f"watts_strogatz(n={n}, k={k}, theta={theta})")


def generate_erdos_renyi(n: int, p: float, seed: int = 0) -> GraphTopology:
    """Erdos-Renyi G(n, p): every pair included independently with probability p."""
    if not 0.0 < p <= 1.0:
        raise GraphError(f"edge probability must be in (0, 1], got {p}")
    if n < 1:
        raise GraphError(f"node count must be positive, got {n}")

    iu, ju = np.triu_indices(n, k=1)

    def build(s: int):
        rng = np.random.default_rng(s)
        mask = rng.random(len(iu)) < p
        edges = list(zip(iu[mask].tolist(), ju[mask].tolist()))
        return edges, n

    return _retry_connected(build, seed, f"erdos_renyi(n={n}, p={p})")


def generate_lattice8(rows: int, cols: int) -> GraphTopology:
    """Unwrapped lattice where each cell links to its <= 8 Moore neighbors."""
    if rows < 2 or cols < 2:
        raise GraphError(f"lattice needs rows, cols >= 2, got {rows}x{cols}")
    edges = []
    for r in range(rows):
        for c in range(cols):
            u = r * cols + c
            for dr, dc in ((0, 1), (1, -1), (1, 0), (1, 1)):
                rr, cc = r + dr, c + dc
                if 0 <= rr < rows and 0 <= cc < cols:
                    edges.append((u, rr * cols + cc))
    return GraphTopology.from_edges(rows * cols, edges)


def generate_barbell(n: int, bridge_count: int = 1) -> GraphTopology:
    """Two cliques of size n/2 joined by ``bridge_count`` index-paired links.

    Bridge b connects node b of the first clique with node n/2 + b of the
    second, for b = 0..bridge_count-1.
    """
    if n % 2 != 0:
        raise GraphError(f"barbell needs an even node count, got {n}")
    half = n // 2
    if half < 2:
        raise GraphError(f"clique size n/2 must be >= 2, got {half}")
    if not 1 <= bridge_count <= half:
        raise GraphError(
            f"bridge count must be in [1, {half}], got {bridge_count}")
    edges = []
    for base in (0, half):
        for i in range(half):
            for j in range(i + 1, half):
                edges.append((base + i, base + j))
    for b in range(bridge_count):
        edges.append((b, half + b))
    return GraphTopology.from_edges(n, edges)


# ---------------------------------------------------------------------------
# weight matrices
# ---------------------------------------------------------------------------

def lazy_metropolis(g: GraphTopology) -> ConsensusMatrix:
    """Lazy Metropolis weights.

    Off-diagonal: W_ij = 1 / (2 max(d(i)+1, d(j)+1)) on edges, 0 elsewhere.
    Diagonal: W_ii = 1 - sum_{j != i} W_ij, the row-stochastic completion.
    The result is symmetric, doubly stochastic, diagonally dominant, and its
    spectral gap satisfies 1/(1 - sigma_2) <= 71 n^2.
    """
    n = g.n
    w = np.zeros((n, n))
    for i, j in g.edges:
        v = 1.0 / (2.0 * max(g.degrees[i] + 1, g.degrees[j] + 1))
        w[i, j] = v
        w[j, i] = v
    np.fill_diagonal(w, 1.0 - w.sum(axis=1))
    return ConsensusMatrix.from_entries(w, graph=g)


def laplacian_weights(g: GraphTopology) -> ConsensusMatrix:
    """Normalized-graph-Laplacian weights.

    For a degree-regular graph of degree d: W = I - d/(d+1) * Lap, with
    Lap = I - D^{-1/2} A D^{-1/2}. Otherwise W = I - D^{1/2} Lap D^{1/2}
    / (d_max + 1). Double stochasticity is validated post hoc.
    """
    n = g.n
    a = g.adjacency_matrix()
    degrees = np.array(g.degrees, dtype=float)
    if np.any(degrees == 0):
        raise GraphError("isolated node: Laplacian weights undefined")
    d_inv_sqrt = 1.0 / np.sqrt(degrees)
    lap = np.eye(n) - (d_inv_sqrt[:, None] * a * d_inv_sqrt[None, :])
    if np.all(degrees == degrees[0]):
        d = degrees[0]
        w = np.eye(n) - (d / (d + 1.0)) * lap
    else:
        d_sqrt = np.sqrt(degrees)
        d_max = degrees.max()
        w = np.eye(n) - (d_sqrt[:, None] * lap * d_sqrt[None, :]) / (d_max + 1.0)
    rows = w.sum(axis=1)
    cols = w.sum(axis=0)
    if max(np.max(np.abs(rows - 1.0)), np.max(np.abs(cols - 1.0))) > 1e-10:
        raise WeightMatrixError("Laplacian weights failed the stochasticity check")
    # symmetrize away representation noise before the 1e-12 gate
    w = 0.5 * (w + w.T)
    w[np.abs(w) < 1e-15] = 0.0
    np.fill_diagonal(w, np.diag(w) + (1.0 - w.sum(axis=1)))
    return ConsensusMatrix.from_entries(w, graph=g)
