"""Dual-channel geometric message-passing encoder.

Each view runs T stacked layers of three stages:

  node->edge   per-edge MLP over the endpoint embeddings plus the bond
               embedding (2D) or the pair-distance expansion (3D)
  edge->edge   angle-gated aggregation over incoming neighbor edges;
               the 3D channel routes each neighbor through its angle
               domain's weights, max-pools across domains, and merges
               the concatenated domain slots back to the hidden size
  edge->node   distance-gated aggregation over incoming edges, with
               the analogous per-distance-domain routing in 3D

followed by an attentive readout that iterates a GRU over softmax
attention pooling of the node embeddings.

Parameter names follow ``<view>/<stage>/<t>/<role>[/<domain>]``, e.g.
``3d/e2e/0/W_theta/2``.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import rbf
from .geomgraph import VIEW_2D, VIEW_3D, build_2d_graph, build_3d_graph
from .tensorad import (
    ParameterStore,
    Tensor,
    add,
    concat,
    gather_rows,
    gru_cell,
    leaky_relu,
    matmul,
    maximum,
    mul,
    segment_sum,
    softmax,
    tile_rows,
    tsum,
)


@dataclass
class EncoderConfig:
    hidden: int = 128
    layers: int = 2            # message-passing rounds T
    readout_steps: int = 2     # attentive pooling rounds T_g
    angle_domains: int = 4     # n
    dist_domains: int = 4      # m
    rbf_dim: int = 64          # K
    cutoff: float = 5.0        # 3D neighbor threshold, Angstrom
    leaky_slope: float = 0.01
    d_max_2d: float = 4.0      # bond-length ceiling for the 2D distance expansion
    proj_dim: int | None = None

    def __post_init__(self):
        for name in ("hidden", "layers", "readout_steps", "angle_domains",
                     "dist_domains", "rbf_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.cutoff <= 0 or self.d_max_2d <= 0:
            raise ValueError("cutoff and d_max_2d must be positive")

    @property
    def projection_dim(self):
        return self.hidden if self.proj_dim is None else self.proj_dim


@dataclass
class MoleculeInputs:
    """Per-molecule static inputs: graphs plus precomputed expansions."""
    graph2d: object
    graph3d: object
    atom_features: np.ndarray
    bond_features: np.ndarray
    l_emb: np.ndarray          # (E_2d, K) bond-length expansion
    phi_emb: np.ndarray        # (P_2d, K) bond-angle expansion
    r_emb: np.ndarray          # (E_3d, K) pair-distance expansion
    theta_emb: np.ndarray      # (P_3d, K) spatial-angle expansion


def featurize(molecule, config):
    """Build both view graphs and the RBF inputs the encoder consumes."""
    g2 = build_2d_graph(molecule)
    g3 = build_3d_graph(molecule, config.cutoff, config.angle_domains, config.dist_domains)
    spec_l = rbf.make_spec(rbf.DISTANCE, config.rbf_dim, d_max=config.d_max_2d)
    spec_r = rbf.make_spec(rbf.DISTANCE, config.rbf_dim, d_max=config.cutoff)
    spec_ang = rbf.make_spec(rbf.ANGLE, config.rbf_dim)
    k = config.rbf_dim

    def expand_or_empty(spec, values):
        if values.shape[0] == 0:
            return np.zeros((0, k))
        return rbf.expand(spec, values)

    return MoleculeInputs(
        graph2d=g2,
        graph3d=g3,
        atom_features=np.asarray(molecule.atom_features, dtype=np.float64),
        bond_features=np.asarray(molecule.bond_features, dtype=np.float64),
        l_emb=expand_or_empty(spec_l, g2.edge_distance),
        phi_emb=expand_or_empty(spec_ang, g2.pair_angle),
        r_emb=expand_or_empty(spec_r, g3.edge_distance),
        theta_emb=expand_or_empty(spec_ang, g3.pair_angle),
    )


# ---------------------------------------------------------------------------
# parameter initialization


def _matrix(rng, fan_in, fan_out):
    s = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=(fan_in, fan_out))


def _add_mlp(store, rng, prefix, d_in, d_hidden, d_out):
    store.add(f"{prefix}/W1", _matrix(rng, d_in, d_hidden))
    store.add(f"{prefix}/b1", np.zeros(d_hidden))
    store.add(f"{prefix}/W2", _matrix(rng, d_hidden, d_out))
    store.add(f"{prefix}/b2", np.zeros(d_out))


def _add_gru(store, rng, prefix, d):
    for gate in ("z", "r", "n"):
        store.add(f"{prefix}/W_x{gate}", _matrix(rng, d, d))
        store.add(f"{prefix}/W_h{gate}", _matrix(rng, d, d))
        store.add(f"{prefix}/b_{gate}", np.zeros(d))


def init_encoder_params(config, feature_dims, rng, store=None):
    """Create every encoder weight for both views, in a fixed order."""
    store = store if store is not None else ParameterStore()
    d = config.hidden
    k = config.rbf_dim
    f_a, f_b = feature_dims

    for view in (VIEW_2D, VIEW_3D):
        store.add(f"{view}/embed/0/W_atom", _matrix(rng, f_a, d))
        store.add(f"{view}/embed/0/b_atom", np.zeros(d))
    store.add("2d/embed/0/W_bond", _matrix(rng, f_b, d))
    store.add("2d/embed/0/b_bond", np.zeros(d))

    for t in range(config.layers):
        _add_mlp(store, rng, f"2d/n2e/{t}", 3 * d, d, d)
        _add_mlp(store, rng, f"3d/n2e/{t}", 2 * d + k, d, d)

        store.add(f"2d/e2e/{t}/W_phi", _matrix(rng, k, d))
        store.add(f"2d/e2e/{t}/W_e", _matrix(rng, d, d))
        for i in range(config.angle_domains):
            store.add(f"3d/e2e/{t}/W_theta/{i}", _matrix(rng, k, d))
            store.add(f"3d/e2e/{t}/W_e/{i}", _matrix(rng, d, d))
        store.add(f"3d/e2e/{t}/W_merge", _matrix(rng, config.angle_domains * d, d))
        store.add(f"3d/e2e/{t}/b_merge", np.zeros(d))

        store.add(f"2d/e2n/{t}/W_l", _matrix(rng, k, d))
        store.add(f"2d/e2n/{t}/W_a", _matrix(rng, d, d))
        for i in range(config.dist_domains):
            store.add(f"3d/e2n/{t}/W_r/{i}", _matrix(rng, k, d))
            store.add(f"3d/e2n/{t}/W_a/{i}", _matrix(rng, d, d))
        store.add(f"3d/e2n/{t}/W_merge", _matrix(rng, config.dist_domains * d, d))
        store.add(f"3d/e2n/{t}/b_merge", np.zeros(d))

    for view in (VIEW_2D, VIEW_3D):
        for t in range(config.readout_steps):
            prefix = f"{view}/readout/{t}"
            store.add(f"{prefix}/W_cat", _matrix(rng, 2 * d, d))
            store.add(f"{prefix}/b_cat", np.zeros(d))
            store.add(f"{prefix}/w_att", _matrix(rng, d, 1))
            store.add(f"{prefix}/W_g", _matrix(rng, d, d))
            _add_gru(store, rng, prefix, d)
    return store


def init_projection_params(config, rng, store=None):
    """Projection heads mapping each view's readout into contrast space."""
    store = store if store is not None else ParameterStore()
    d = config.hidden
    _add_mlp(store, rng, "proj2d/head/0", d, d, config.projection_dim)
    _add_mlp(store, rng, "proj3d/head/0", d, d, config.projection_dim)
    return store


def init_prediction_params(config, task_count, rng, store=None):
    """Per-view fusion MLPs plus the output head for downstream tasks."""
    if task_count < 1:
        raise ValueError("task_count must be >= 1")
    store = store if store is not None else ParameterStore()
    d = config.hidden
    _add_mlp(store, rng, "pred2d/head/0", d, d, d)
    _add_mlp(store, rng, "pred3d/head/0", d, d, d)
    _add_mlp(store, rng, "predout/head/0", d, d, task_count)
    return store


# ---------------------------------------------------------------------------
# forward stages


def mlp2(x, params, prefix, slope):
    """Two-layer MLP with a leaky rectifier between the layers."""
    h = leaky_relu(add(matmul(x, params[f"{prefix}/W1"]), params[f"{prefix}/b1"]), slope)
    return add(matmul(h, params[f"{prefix}/W2"]), params[f"{prefix}/b2"])


def embed_inputs(view, params, config, inputs):
    """Initial node embeddings and the static per-edge input for the view."""
    x = Tensor(inputs.atom_features)
    node0 = add(matmul(x, params[f"{view}/embed/0/W_atom"]), params[f"{view}/embed/0/b_atom"])
    if view == VIEW_2D:
        g = inputs.graph2d
        if g.n_edges == 0:
            edge_in = Tensor(np.zeros((0, config.hidden)))
        else:
            bf = Tensor(inputs.bond_features[g.bond_index])
            edge_in = add(matmul(bf, params["2d/embed/0/W_bond"]), params["2d/embed/0/b_bond"])
    else:
        edge_in = Tensor(inputs.r_emb)
    return node0, edge_in


def node_to_edge(view, t, params, config, node_emb, edge_in, graph):
    """Per-edge embedding from both endpoints plus the edge input."""
    cat = concat([gather_rows(node_emb, graph.src), gather_rows(node_emb, graph.dst), edge_in], axis=1)
    return mlp2(cat, params, f"{view}/n2e/{t}", config.leaky_slope)


def edge_to_edge_2d(t, params, config, edge_emb, graph, phi_emb):
    """Angle-gated neighbor sum: each neighbor contributes its angle
    expansion times the projected target-edge embedding."""
    e = graph.n_edges
    gate = matmul(edge_emb, params[f"2d/e2e/{t}/W_e"])
    phi = matmul(Tensor(phi_emb), params[f"2d/e2e/{t}/W_phi"])
    terms = mul(phi, gather_rows(gate, graph.pair_target))
    return segment_sum(terms, graph.pair_target, e)


def edge_to_edge_3d(t, params, config, edge_emb, graph, theta_emb):
    """Domain-routed angle gating, max-pool across domains, then merge."""
    e = graph.n_edges
    domain_vecs = []
    for i in range(config.angle_domains):
        sel = np.nonzero(graph.pair_angle_domain == i)[0]
        gate = matmul(edge_emb, params[f"3d/e2e/{t}/W_e/{i}"])
        theta = matmul(Tensor(theta_emb[sel]), params[f"3d/e2e/{t}/W_theta/{i}"])
        terms = mul(theta, gather_rows(gate, graph.pair_target[sel]))
        domain_vecs.append(segment_sum(terms, graph.pair_target[sel], e))
    pooled = domain_vecs[0]
    for v in domain_vecs[1:]:
        pooled = maximum(pooled, v)
    slots = [mul(pooled, v) for v in domain_vecs]
    merged = concat(slots, axis=1)
    return add(matmul(merged, params[f"3d/e2e/{t}/W_merge"]), params[f"3d/e2e/{t}/b_merge"])


def edge_to_node_2d(t, params, config, edge_emb, graph, l_emb):
    """Distance-gated sum of incoming edges into each node."""
    gate = matmul(edge_emb, params[f"2d/e2n/{t}/W_a"])
    dist = matmul(Tensor(l_emb), params[f"2d/e2n/{t}/W_l"])
    terms = mul(dist, gate)
    return segment_sum(terms, graph.dst, graph.n_nodes)


def edge_to_node_3d(t, params, config, edge_emb, graph, r_emb):
    """Per-distance-domain sums concatenated and merged back to D."""
    slots = []
    for i in range(config.dist_domains):
        sel = np.nonzero(graph.dist_domain == i)[0]
        dist = matmul(Tensor(r_emb[sel]), params[f"3d/e2n/{t}/W_r/{i}"])
        gate = matmul(gather_rows(edge_emb, sel), params[f"3d/e2n/{t}/W_a/{i}"])
        terms = mul(dist, gate)
        slots.append(segment_sum(terms, graph.dst[sel], graph.n_nodes))
    merged = concat(slots, axis=1)
    return add(matmul(merged, params[f"3d/e2n/{t}/W_merge"]), params[f"3d/e2n/{t}/b_merge"])


def attentive_readout(view, params, config, node_emb):
    """GRU-iterated attention pooling from nodes to one graph vector."""
    n_nodes = node_emb.shape[0]
    if n_nodes == 0:
        raise ValueError("attentive_readout: empty node set")
    h = tsum(node_emb, axis=0, keepdims=True)
    for t in range(config.readout_steps):
        prefix = f"{view}/readout/{t}"
        cat = concat([tile_rows(h, n_nodes), node_emb], axis=1)
        act = leaky_relu(add(matmul(cat, params[f"{prefix}/W_cat"]), params[f"{prefix}/b_cat"]),
                         config.leaky_slope)
        scores = matmul(act, params[f"{prefix}/w_att"])
        alpha = softmax(scores, axis=0)
        g = tsum(mul(alpha, matmul(node_emb, params[f"{prefix}/W_g"])), axis=0, keepdims=True)
        h = gru_cell(
            g, h,
            params[f"{prefix}/W_xz"], params[f"{prefix}/W_hz"], params[f"{prefix}/b_z"],
            params[f"{prefix}/W_xr"], params[f"{prefix}/W_hr"], params[f"{prefix}/b_r"],
            params[f"{prefix}/W_xn"], params[f"{prefix}/W_hn"], params[f"{prefix}/b_n"],
        )
    return h


def encode_nodes(view, inputs, params, config):
    """Node embeddings after the final message-passing layer."""
    graph = inputs.graph2d if view == VIEW_2D else inputs.graph3d
    node_emb, edge_in = embed_inputs(view, params, config, inputs)
    for t in range(config.layers):
        edge_emb = node_to_edge(view, t, params, config, node_emb, edge_in, graph)
        if view == VIEW_2D:
            edge_emb = edge_to_edge_2d(t, params, config, edge_emb, graph, inputs.phi_emb)
            node_emb = edge_to_node_2d(t, params, config, edge_emb, graph, inputs.l_emb)
        else:
            edge_emb = edge_to_edge_3d(t, params, config, edge_emb, graph, inputs.theta_emb)
            node_emb = edge_to_node_3d(t, params, config, edge_emb, graph, inputs.r_emb)
    return node_emb


def encode_view(view, inputs, params, config):
    """Graph-level representation of one view, shape (hidden,)."""
    node_emb = encode_nodes(view, inputs, params, config)
    h = attentive_readout(view, params, config, node_emb)
    return h.reshape((config.hidden,))
