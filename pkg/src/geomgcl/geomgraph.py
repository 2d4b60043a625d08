"""Directed-edge view graphs and their scalar geometric factors.

The 2D view connects covalently bonded atoms (both directions per
bond) with bond lengths and bond angles measured in the planar layout.
The 3D view connects every ordered atom pair closer than a cutoff in
the averaged conformer coordinates, and additionally bins each edge's
neighbor angle into one of n uniform angle domains over [0, pi] and
each edge's length into one of m uniform distance domains over
(0, cutoff).

Neighbors of a directed edge (u, v) are the incoming edges (w, u) with
w != v, so an edge never echoes its own reverse.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import kernels

VIEW_2D = "2d"
VIEW_3D = "3d"


@dataclass
class DirectedEdge:
    src: int
    dst: int
    bond_index: int | None = None


@dataclass
class ViewGraph:
    view: str
    n_nodes: int
    src: np.ndarray                 # (E,) int64
    dst: np.ndarray                 # (E,) int64
    bond_index: np.ndarray          # (E,) int64, -1 for non-covalent edges
    edge_distance: np.ndarray       # (E,) float64
    pair_target: np.ndarray         # (P,) int64 index of the edge being updated
    pair_neighbor: np.ndarray       # (P,) int64 index of the incoming neighbor edge
    pair_angle: np.ndarray          # (P,) float64 in [0, pi]
    pair_angle_domain: np.ndarray | None = None   # (P,) int64, 3D only
    dist_domain: np.ndarray | None = None         # (E,) int64, 3D only

    @property
    def n_edges(self):
        return int(self.src.shape[0])

    @property
    def n_pairs(self):
        return int(self.pair_target.shape[0])

    def edges(self):
        """Edge tuples as DirectedEdge records, in stored order."""
        out = []
        for i in range(self.n_edges):
            b = int(self.bond_index[i])
            out.append(DirectedEdge(int(self.src[i]), int(self.dst[i]), None if b < 0 else b))
        return out

    def in_edge_neighbors(self):
        """Per-edge lists of neighbor edge indices."""
        lists = [[] for _ in range(self.n_edges)]
        for t, nb in zip(self.pair_target, self.pair_neighbor):
            lists[int(t)].append(int(nb))
        return lists

    def node_in_edges(self):
        """Per-node lists of incoming edge indices."""
        lists = [[] for _ in range(self.n_nodes)]
        for e in range(self.n_edges):
            lists[int(self.dst[e])].append(e)
        return lists


def pair_distance(a, b):
    """Euclidean distance between two 2- or 3-coordinates."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.shape[0] not in (2, 3):
        raise ValueError(f"pair_distance: bad coordinate shapes {a.shape} vs {b.shape}")
    return float(np.sqrt(np.sum((a - b) ** 2)))


def angle_at(shared, p, q):
    """Angle in [0, pi] at `shared` between the rays to p and to q."""
    shared = np.asarray(shared, dtype=np.float64)
    v1 = np.asarray(p, dtype=np.float64) - shared
    v2 = np.asarray(q, dtype=np.float64) - shared
    n1 = float(np.sqrt(np.sum(v1 * v1)))
    n2 = float(np.sqrt(np.sum(v2 * v2)))
    if n1 == 0.0 or n2 == 0.0:
        raise ValueError("degenerate angle: zero-length vector")
    cos = float(np.dot(v1, v2)) / (n1 * n2)
    return float(math.acos(min(1.0, max(-1.0, cos))))


def assign_angle_domain(theta, n):
    """Uniform bin index over [0, pi]; the upper endpoint folds into bin n-1."""
    if theta < 0.0 or theta > math.pi:
        raise ValueError(f"angle {theta} outside [0, pi]")
    return min(int(theta * n / math.pi), n - 1)


def assign_distance_domain(r, cutoff, m):
    """Uniform bin index over (0, cutoff)."""
    if r <= 0.0 or r >= cutoff:
        raise ValueError(f"distance {r} outside (0, {cutoff})")
    return min(int(r * m / cutoff), m - 1)


def _neighbor_pairs(src, dst, n_nodes):
    """(target, neighbor) edge-index pairs: neighbors come into the target's source."""
    in_lists = [[] for _ in range(n_nodes)]
    for e in range(src.shape[0]):
        in_lists[dst[e]].append(e)
    targets, neighbors = [], []
    for e in range(src.shape[0]):
        u, v = src[e], dst[e]
        for f in in_lists[u]:
            if src[f] != v:
                targets.append(e)
                neighbors.append(f)
    return (
        np.asarray(targets, dtype=np.int64),
        np.asarray(neighbors, dtype=np.int64),
    )


def _pair_angles(coords, src, dst, pair_target, pair_neighbor):
    if pair_target.shape[0] == 0:
        return np.zeros(0)
    shared = src[pair_target]          # u: target source == neighbor destination
    p = src[pair_neighbor]             # w
    q = dst[pair_target]               # v
    return kernels.angles(np.ascontiguousarray(coords), shared, p, q)


def build_2d_graph(molecule):
    """Covalent-bond view graph over the planar coordinates."""
    pos = np.ascontiguousarray(molecule.pos2d, dtype=np.float64)
    n_nodes = molecule.n_atoms

    directed = []
    for b, (u, v) in enumerate(molecule.bond_list):
        d = pair_distance(pos[u], pos[v])
        if d == 0.0:
            raise ValueError(
                f"molecule {molecule.id}: bonded atoms {u} and {v} coincide in pos2d"
            )
        directed.append((u, v, b, d))
        directed.append((v, u, b, d))
    directed.sort(key=lambda e: (e[0], e[1]))

    src = np.asarray([e[0] for e in directed], dtype=np.int64)
    dst = np.asarray([e[1] for e in directed], dtype=np.int64)
    bond_index = np.asarray([e[2] for e in directed], dtype=np.int64)
    edge_distance = np.asarray([e[3] for e in directed], dtype=np.float64)
    if src.shape[0] == 0:
        src = np.zeros(0, dtype=np.int64)
        dst = np.zeros(0, dtype=np.int64)
        bond_index = np.zeros(0, dtype=np.int64)
        edge_distance = np.zeros(0)

    pair_target, pair_neighbor = _neighbor_pairs(src, dst, n_nodes)
    pair_angle = _pair_angles(pos, src, dst, pair_target, pair_neighbor)

    return ViewGraph(
        view=VIEW_2D,
        n_nodes=n_nodes,
        src=src,
        dst=dst,
        bond_index=bond_index,
        edge_distance=edge_distance,
        pair_target=pair_target,
        pair_neighbor=pair_neighbor,
        pair_angle=pair_angle,
    )


def build_3d_graph(molecule, cutoff, n_domains, m_domains):
    """Cutoff-radius view graph over the averaged conformer coordinates."""
    if cutoff <= 0:
        raise ValueError(f"cutoff must be positive, got {cutoff}")
    coords = np.ascontiguousarray(molecule.coords3d, dtype=np.float64)
    n_nodes = molecule.n_atoms

    dists = kernels.pairwise_distances(coords)
    offdiag = ~np.eye(n_nodes, dtype=bool)
    zero_pairs = np.argwhere((dists == 0.0) & offdiag)
    if zero_pairs.size:
        u, v = (int(x) for x in zero_pairs[0])
        raise ValueError(
            f"molecule {molecule.id}: atoms {u} and {v} have identical 3D coordinates"
        )

    pairs = np.argwhere((dists < cutoff) & offdiag)   # row-major: sorted by (u, v)
    src = np.ascontiguousarray(pairs[:, 0], dtype=np.int64)
    dst = np.ascontiguousarray(pairs[:, 1], dtype=np.int64)
    edge_distance = dists[src, dst]
    bond_index = np.full(src.shape[0], -1, dtype=np.int64)
    dist_domain = np.minimum(
        (edge_distance * m_domains / cutoff).astype(np.int64), m_domains - 1
    )

    pair_target, pair_neighbor = _neighbor_pairs(src, dst, n_nodes)
    pair_angle = _pair_angles(coords, src, dst, pair_target, pair_neighbor)
    pair_angle_domain = np.minimum(
        (pair_angle * n_domains / math.pi).astype(np.int64), n_domains - 1
    )

    return ViewGraph(
        view=VIEW_3D,
        n_nodes=n_nodes,
        src=src,
        dst=dst,
        bond_index=bond_index,
        edge_distance=edge_distance,
        pair_target=pair_target,
        pair_neighbor=pair_neighbor,
        pair_angle=pair_angle,
        pair_angle_domain=pair_angle_domain,
        dist_domain=dist_domain,
    )
