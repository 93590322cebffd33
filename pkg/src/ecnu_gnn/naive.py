"""Per-edge transformation modules: the naive alternative to a shared ECNUM.

Every edge (i, j), self-edges included, owns a private MLP ``f_ij`` applied
to the source representation ``z_j``. Used at toy scale only, to check that
the shared conditional module reproduces a bank of per-edge modules and to
compare parameter counts.
"""

from __future__ import annotations

import copy

import numpy as np

from . import tensor as T
from .graph import Adjacency
from .model import ECNUGNN, Linear, ecnum_parameter_count, run_mlp
from .tensor import Tensor


class EdgeModule:
    """One edge's transformation, holding its conditioning vectors as constants."""

    def __init__(self, layers: list[Linear], v_target: np.ndarray, v_source: np.ndarray):
        self.layers = layers
        self.v_target = np.array(v_target, dtype=np.float64)
        self.v_source = np.array(v_source, dtype=np.float64)

    def __call__(self, z_source: Tensor) -> Tensor:
        cond = Tensor(np.concatenate([self.v_target, self.v_source])[None, :])
        return run_mlp(self.layers, T.concat([z_source, cond], axis=1))

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]


class PerEdgeGNN:
    """Shared encoder/NCRM with a separate transformation module per edge.

    The graph is fixed at construction; each module starts as a deep copy of
    the shared model's ECNUM stack.
    """

    def __init__(self, shared: ECNUGNN, adjacency: Adjacency | None = None):
        self.shared = shared
        self.adjacency = shared.graph() if adjacency is None else adjacency
        targets, sources = self.adjacency.edge_index()
        emb = shared.embeddings.data
        self.edges = list(zip(targets.tolist(), sources.tolist()))
        self.modules = {
            (i, j): EdgeModule(copy.deepcopy(shared.ecnum), emb[i], emb[j])
            for i, j in self.edges
        }

    def n_parameters(self) -> int:
        shared = self.shared.n_parameters() - ecnum_parameter_count(self.shared.config)
        per_edge = sum(p.data.size for m in self.modules.values() for p in m.parameters())
        return shared + per_edge

    def forward(self, x) -> Tensor:
        """Single-window forward, returning (N, 1)."""
        model = self.shared
        x = np.asarray(x, dtype=np.float64)
        z = model.encode(x)
        rows = [self.modules[(i, j)](T.gather_rows(z, [j])) for i, j in self.edges]
        transformed = T.concat(rows, axis=0)
        targets = np.array([i for i, _ in self.edges], dtype=np.intp)
        sources = np.array([j for _, j in self.edges], dtype=np.intp)
        z_agg = model.aggregate(transformed, targets, sources, model.n_nodes, self.adjacency.k)
        node_ids = np.arange(model.n_nodes, dtype=np.intp)
        return model.ncrm_readout(z_agg, T.gather_rows(model.embeddings, node_ids))


def per_edge_parameter_count(shared_count: int, ecnum_count: int, n_edges: int) -> int:
    """Closed form: the shared ECNUM is replaced by ``n_edges`` copies of it."""
    return shared_count - ecnum_count + n_edges * ecnum_count
