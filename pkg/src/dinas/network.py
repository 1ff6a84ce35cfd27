"""Communication topologies, consensus weight matrices, spectral diagnostics.

Graphs are undirected, simple and connected; self-loops are implicit (every
node always hears itself) and never stored in the edge set.  Consensus
matrices are symmetric, doubly stochastic and share the graph's sparsity.
"""

from dataclasses import dataclass, field

import numpy as np


class TopologyError(ValueError):
    pass


@dataclass(frozen=True)
class Topology:
    """Undirected simple connected graph on nodes ``0..node_count-1``."""

    node_count: int
    edges: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.node_count < 1:
            raise TopologyError("node_count must be positive")
        norm = set()
        for e in self.edges:
            i, j = e
            if i == j:
                raise TopologyError("self-edges are implicit and must not be listed")
            if not (0 <= i < self.node_count and 0 <= j < self.node_count):
                raise TopologyError(f"edge {e} references a node >= {self.node_count}")
            norm.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", frozenset(norm))
        if not self.is_connected():
            raise TopologyError("graph is not connected")

    def neighbors(self, i):
        out = [j for a, b in self.edges for j in ((b,) if a == i else (a,) if b == i else ())]
        return sorted(out)

    def neighbor_lists(self):
        adj = [[] for _ in range(self.node_count)]
        for a, b in self.edges:
            adj[a].append(b)
            adj[b].append(a)
        return [sorted(v) for v in adj]

    def degrees(self):
        deg = np.zeros(self.node_count, dtype=np.int64)
        for a, b in self.edges:
            deg[a] += 1
            deg[b] += 1
        return deg

    def is_connected(self):
        # BFS from node 0
        adj = self.neighbor_lists()
        seen = np.zeros(self.node_count, dtype=bool)
        seen[0] = True
        frontier = [0]
        while frontier:
            nxt = []
            for u in frontier:
                for v in adj[u]:
                    if not seen[v]:
                        seen[v] = True
                        nxt.append(v)
            frontier = nxt
        return bool(seen.all())

    def diameter(self):
        adj = self.neighbor_lists()
        n = self.node_count
        diam = 0
        for s in range(n):
            dist = np.full(n, -1, dtype=np.int64)
            dist[s] = 0
            frontier = [s]
            while frontier:
                nxt = []
                for u in frontier:
                    for v in adj[u]:
                        if dist[v] < 0:
                            dist[v] = dist[u] + 1
                            nxt.append(v)
                frontier = nxt
            diam = max(diam, int(dist.max()))
        return diam


@dataclass(frozen=True)
class ConsensusMatrix:
    """Symmetric doubly stochastic weights respecting a topology."""

    weights: np.ndarray
    topology: Topology

    def __post_init__(self):
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=np.float64))
        validate_consensus_matrix(self)

    @property
    def node_count(self):
        return self.topology.node_count


def validate_consensus_matrix(matrix, tol=1e-12):
    w = matrix.weights
    topo = matrix.topology
    n = topo.node_count
    if w.shape != (n, n):
        raise TopologyError(f"weight matrix shape {w.shape} does not match {n} nodes")
    if not np.array_equal(w, w.T):
        raise TopologyError("weights must be exactly symmetric")
    if np.any(w < 0.0) or np.any(w > 1.0):
        raise TopologyError("weights must lie in [0, 1]")
    ones = np.ones(n)
    if np.max(np.abs(w.sum(axis=0) - ones)) > tol or np.max(np.abs(w.sum(axis=1) - ones)) > tol:
        raise TopologyError("rows and columns must each sum to 1")
    if np.any(np.diag(w) <= 0.0):
        raise TopologyError("diagonal weights must be positive")
    edge_set = topo.edges
    for i in range(n):
        for j in range(i + 1, n):
            on_edge = (i, j) in edge_set
            if on_edge and w[i, j] <= 0.0:
                raise TopologyError(f"edge {{{i},{j}}} must carry a positive weight")
            if not on_edge and w[i, j] != 0.0:
                raise TopologyError(f"non-edge pair {{{i},{j}}} must have zero weight")


def random_geometric_graph(n_nodes, radius, rng_seed, max_retries=100):
    """Nodes placed uniformly in the unit square; edge iff distance <= radius.

    Placements are redrawn from the same seeded stream until the graph is
    connected, up to ``max_retries`` redraws.
    """
    if n_nodes < 1:
        raise TopologyError("n_nodes must be positive")
    if radius <= 0:
        raise TopologyError("radius must be positive")
    rng = np.random.default_rng(rng_seed)
    for _ in range(max_retries):
        pos = rng.uniform(0.0, 1.0, size=(n_nodes, 2))
        diff = pos[:, None, :] - pos[None, :, :]
        dist = np.sqrt((diff**2).sum(axis=2))
        edges = {
            (i, j)
            for i in range(n_nodes)
            for j in range(i + 1, n_nodes)
            if dist[i, j] <= radius
        }
        try:
            return Topology(n_nodes, frozenset(edges))
        except TopologyError:
            continue
    raise TopologyError(
        f"disconnected topology: no connected draw after {max_retries} retries "
        f"(seed={rng_seed}, radius={radius})"
    )


def default_rgg_radius(n_nodes):
    """Connectivity-threshold radius sqrt(ln(N)/N) for unit-square placement."""
    if n_nodes == 1:
        return 1.0
    return float(np.sqrt(np.log(n_nodes) / n_nodes))


def complete_topology(n_nodes):
    edges = {(i, j) for i in range(n_nodes) for j in range(i + 1, n_nodes)}
    return Topology(n_nodes, frozenset(edges))


def path_topology(n_nodes):
    return Topology(n_nodes, frozenset((i, i + 1) for i in range(n_nodes - 1)))


def metropolis_weights(topology):
    """Metropolis weight rule: w_ij = 1 / (1 + max(deg_i, deg_j)) on edges,
    diagonal takes up the slack so rows sum to one."""
    n = topology.node_count
    deg = topology.degrees()
    w = np.zeros((n, n))
    for i, j in sorted(topology.edges):
        wij = 1.0 / (1.0 + max(deg[i], deg[j]))
        w[i, j] = wij
        w[j, i] = wij
    for i in range(n):
        w[i, i] = 1.0 - w[i].sum()
    return ConsensusMatrix(w, topology)


@dataclass(frozen=True)
class SpectralDiagnostics:
    lambda2: float
    w_bar: float
    degenerate: bool = False


def spectral_gap(matrix):
    """Second-largest eigenvalue of the weight matrix and the largest
    diagonal entry.

    For a single node the spectrum is trivially {1}; we report lambda2 = 1
    with the ``degenerate`` flag so callers never divide by (1 - lambda2).
    """
    w = matrix.weights
    n = matrix.node_count
    w_bar = float(np.max(np.diag(w)))
    if n == 1:
        return SpectralDiagnostics(lambda2=1.0, w_bar=w_bar, degenerate=True)
    eigs = np.linalg.eigvalsh(w)
    return SpectralDiagnostics(lambda2=float(eigs[-2]), w_bar=w_bar, degenerate=False)


def write_edgelist(topology, path):
    """Plain-text edge list: first line is the node count, then one
    zero-indexed "i j" pair per line."""
    lines = [str(topology.node_count)]
    lines += [f"{i} {j}" for i, j in sorted(topology.edges)]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_edgelist(path):
    with open(path) as fh:
        raw = [ln.strip() for ln in fh if ln.strip()]
    if not raw:
        raise TopologyError(f"empty edge-list file: {path}")
    n = int(raw[0])
    edges = set()
    for ln in raw[1:]:
        i, j = (int(tok) for tok in ln.split())
        edges.add((i, j))
    return Topology(n, frozenset(edges))
