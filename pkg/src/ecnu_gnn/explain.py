"""Layer-wise relevance propagation (LRP) for one sensor's prediction.

Relevance starts at 1.0 on the chosen sensor's prediction and flows back
through the readout MLP, the edge sum, and the edge-conditional MLP down to
the node representations right after the encoder. Both conditional modules
also send relevance into embedding vectors, which plain LRP would drop; that
mass is folded back into the feature relevance of the node that owns the
embedding (degree-normalized for the edge module). A node's relevance is the
sum over its post-encoder representation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, ParseError
from .graph import Adjacency
from .model import ECNUGNN, Linear

DEFAULT_EPS = 1e-6


@dataclass
class RelevanceMap:
    target: int
    node_relevance: np.ndarray  # (N,)
    edge_relevance: dict[tuple[int, int], float]  # (target, source) -> signed relevance
    adjacency: Adjacency
    timestamp: int | None = None
    fallback_nodes: list[int] = field(default_factory=list)

    def ranking(self) -> np.ndarray:
        """Node ids by decreasing absolute relevance (stable on ties)."""
        return np.argsort(-np.abs(self.node_relevance), kind="stable")


def _stabilize(z: np.ndarray, eps: float) -> np.ndarray:
    return z + eps * np.where(z >= 0, 1.0, -1.0)


def lrp_linear(layer, x, r_out, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Epsilon-rule relevance of a linear layer's inputs.

    ``R_in[j] = sum_k x[j] * w[j, k] / (sum_j' x[j'] * w[j', k] + eps * sign) * R_out[k]``.
    The bias does not take part, so relevance is conserved up to the
    epsilon leakage. Rows of ``x`` and ``r_out`` are independent samples.
    """
    if x is None:
        raise ContractError("lrp_linear needs the cached layer input")
    weight = layer.weight.data if isinstance(layer, Linear) else np.asarray(layer, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    r_out = np.asarray(r_out, dtype=np.float64)
    squeeze = x.ndim == 1
    x2, r2 = np.atleast_2d(x), np.atleast_2d(r_out)
    z = x2 @ weight
    s = r2 / _stabilize(z, eps)
    r_in = x2 * (s @ weight.T)
    return r_in[0] if squeeze else r_in


def _fold(r_x: np.ndarray, mass: float) -> np.ndarray:
    total = r_x.sum()
    if total == 0:
        return r_x + mass / r_x.size
    return (mass / total + 1.0) * r_x


def reassign_readout(r_x, r_v) -> np.ndarray:
    """Fold the readout's embedding relevance into its feature relevance.

    ``R_hat = (sum(R_v) / sum(R_x) + 1) * R_x``, so ``sum(R_hat) = sum(R_x) + sum(R_v)``.
    When ``sum(R_x) == 0`` the embedding mass is spread uniformly instead.
    """
    r_x = np.asarray(r_x, dtype=np.float64)
    return _fold(r_x, float(np.sum(r_v)))


def reassign_ecnum(r_x, source_relevances, target_relevances, degree: int) -> np.ndarray:
    """Fold a node's edge-module embedding relevance into its feature relevance.

    Args:
        r_x: feature relevance of the node's representation.
        source_relevances: relevance vectors of the node's embedding where it
            acted as the source of an edge.
        target_relevances: same, where it acted as the target.
        degree: ``|N(i) ∪ {i}|``; the embedding mass is divided by it.
    """
    if degree < 1:
        raise ContractError(f"degree must be >= 1, got {degree}")
    r_x = np.asarray(r_x, dtype=np.float64)
    mass = sum(float(np.sum(r)) for r in source_relevances)
    mass += sum(float(np.sum(r)) for r in target_relevances)
    return _fold(r_x, mass / degree)


def _trace_mlp(layers: list[Linear], x: np.ndarray) -> list[np.ndarray]:
    """Inputs to each layer plus the final output (ReLU between layers)."""
    acts = [x]
    h = x
    for i, layer in enumerate(layers):
        h = np.einsum("ik,kj->ij", h, layer.weight.data) + layer.bias.data
        if i < len(layers) - 1:
            h = np.maximum(h, 0.0)
        acts.append(h)
    return acts


def _lrp_mlp(layers: list[Linear], acts: list[np.ndarray], r: np.ndarray, eps: float) -> np.ndarray:
    for layer, x in zip(reversed(layers), reversed(acts[:-1])):
        r = lrp_linear(layer, x, r, eps)
    return r


def explain_sensor(
    model: ECNUGNN,
    window,
    target: int,
    adjacency: Adjacency | None = None,
    eps: float = DEFAULT_EPS,
    timestamp: int | None = None,
) -> RelevanceMap:
    """Per-node and per-edge relevance for ``model``'s prediction of ``target``."""
    n = model.n_nodes
    if not 0 <= target < n:
        raise ContractError(f"target sensor {target} out of range [0, {n})")
    window = np.asarray(window, dtype=np.float64)
    if window.shape != (n, model.config.window):
        raise ContractError(f"window must have shape {(n, model.config.window)}, got {window.shape}")
    adjacency = model.graph() if adjacency is None else adjacency
    d_f = model.config.feature_dim
    d_e = model.config.embed_dim
    emb = model.embeddings.data

    z = np.einsum("ik,kj->ij", window, model.encoder.weight.data) + model.encoder.bias.data
    sources = np.concatenate([[target], adjacency.neighbors[target]]).astype(np.intp)
    degree = sources.size
    edge_in = np.concatenate(
        [z[sources], np.repeat(emb[target][None], degree, axis=0), emb[sources]], axis=1
    )
    edge_acts = _trace_mlp(model.ecnum, edge_in)
    transformed = edge_acts[-1]
    pre = transformed.sum(axis=0)
    z_agg = np.maximum(pre, 0.0) if model.config.activation == "relu" else pre

    readout_layers = [*model.ncrm, model.readout]
    read_acts = _trace_mlp(readout_layers, np.concatenate([z_agg, emb[target]])[None])
    r_in = _lrp_mlp(readout_layers, read_acts, np.ones((1, 1)), eps)[0]
    r_agg = reassign_readout(r_in[:d_f], r_in[d_f:])
    fallback = []
    if r_in[:d_f].sum() == 0 and r_in[d_f:].sum() != 0:
        fallback.append(int(target))

    # Split each channel of the edge sum in proportion to each edge's share.
    r_edges = transformed / _stabilize(pre, eps)[None, :] * r_agg[None, :]
    r_edge_in = _lrp_mlp(model.ecnum, edge_acts, r_edges, eps)
    r_z = r_edge_in[:, :d_f]
    r_tgt_emb = r_edge_in[:, d_f : d_f + d_e]
    r_src_emb = r_edge_in[:, d_f + d_e :]

    node_rel = np.zeros(n)
    for i in np.unique(sources):
        as_source = sources == i
        r_x = r_z[as_source].sum(axis=0)
        target_rel = list(r_tgt_emb) if i == target else []
        r_hat = reassign_ecnum(r_x, list(r_src_emb[as_source]), target_rel, degree)
        if r_x.sum() == 0 and not np.allclose(r_hat, r_x):
            fallback.append(int(i))
        node_rel[i] = r_hat.sum()

    targets_all, sources_all = adjacency.edge_index()
    edge_rel = {(int(t), int(s)): 0.0 for t, s in zip(targets_all, sources_all)}
    for e, s in enumerate(sources):
        edge_rel[(int(target), int(s))] = float(r_edges[e].sum())
    return RelevanceMap(
        target=int(target),
        node_relevance=node_rel,
        edge_relevance=edge_rel,
        adjacency=adjacency,
        timestamp=timestamp,
        fallback_nodes=sorted(set(fallback)),
    )


def export_relevance_graph(rmap: RelevanceMap, path, sensor_names=None) -> None:
    """Edge list ``target source weight`` with node annotations as comments.

    Holds one line per graph edge (N * k) and one per self-loop (N).
    """
    adjacency = rmap.adjacency
    n = adjacency.n_nodes
    names = sensor_names or [str(i) for i in range(n)]
    lines = [f"# relevance target={rmap.target} timestamp={rmap.timestamp}"]
    lines += [f"# node {i} {float(rmap.node_relevance[i])!r} {names[i]}" for i in range(n)]
    targets, sources = adjacency.edge_index()
    for t, s in zip(targets, sources):
        lines.append(f"{int(t)} {int(s)} {float(rmap.edge_relevance[(int(t), int(s))])!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_relevance_graph(path) -> tuple[list[tuple[int, int, float]], dict[int, float]]:
    """Parse an exported relevance graph into (edges, node relevance)."""
    edges, nodes = [], {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("# node "):
            parts = line.split()
            try:
                nodes[int(parts[2])] = float(parts[3])
            except (IndexError, ValueError):
                raise ParseError(f"{path}:{lineno}: bad node annotation") from None
            continue
        if line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ParseError(f"{path}:{lineno}: expected 'target source weight'")
        try:
            edges.append((int(parts[0]), int(parts[1]), float(parts[2])))
        except ValueError:
            raise ParseError(f"{path}:{lineno}: bad edge line") from None
    return edges, nodes
