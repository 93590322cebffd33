"""ECNU-GNN forward computation.

A window ``x`` (N sensors by w steps) is encoded row-wise by one shared
linear layer. Every edge (target i, source j) of the top-k graph, plus a
self-edge per node, sends ``ECNUM([z_j, v_i, v_j])`` to its target; the sum
passes through an activation and ``NCRM([z_i, v_i])`` reads out the next
value of sensor i.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError
from .graph import Adjacency, extract_graph, init_embeddings
from .tensor import Tensor

ACTIVATIONS = ("relu", "identity")


@dataclass(frozen=True)
class ModelConfig:
    window: int = 5
    topk: int = 30
    embed_dim: int = 128
    feature_dim: int = 256
    n_ecnum: int = 4
    n_ncrm: int = 4
    # applied to the per-target edge sum
    activation: str = "relu"
    # std of the initial embedding entries; must be small next to the Adam
    # step size or the top-k graph never moves away from its random start
    embed_init_std: float = 0.01

    def __post_init__(self):
        for name in ("window", "topk", "embed_dim", "feature_dim", "n_ecnum", "n_ncrm"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ContractError(f"{name} must be a positive integer, got {value!r}")
        if not self.embed_init_std > 0:
            raise ContractError(f"embed_init_std must be positive, got {self.embed_init_std}")
        if self.activation not in ACTIVATIONS:
            raise ContractError(f"activation must be one of {ACTIVATIONS}")

    def to_dict(self) -> dict:
        return asdict(self)


class Linear:
    """Affine map ``x @ weight + bias`` with weight stored as (in, out)."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, name: str):
        bound = 1.0 / np.sqrt(n_in)
        self.weight = Tensor(rng.uniform(-bound, bound, (n_in, n_out)), True, f"{name}.weight")
        self.bias = Tensor(rng.uniform(-bound, bound, n_out), True, f"{name}.bias")

    @property
    def n_in(self) -> int:
        return self.weight.shape[0]

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.n_in:
            raise DimensionError(
                f"{self.weight.name}: expected input width {self.n_in}, got {x.shape}"
            )
        return T.add(T.matmul(x, self.weight), self.bias)

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]


def run_mlp(layers: list[Linear], h: Tensor) -> Tensor:
    """ReLU between layers, identity after the last one."""
    for i, layer in enumerate(layers):
        h = layer(h)
        if i < len(layers) - 1:
            h = T.relu(h)
    return h


def batched_edges(adjacency: Adjacency, n_windows: int):
    """Edge index of ``n_windows`` stacked copies of the graph.

    Node ``i`` of window ``b`` lives at row ``b * N + i``.
    """
    targets, sources = adjacency.edge_index()
    n = adjacency.n_nodes
    offsets = (np.arange(n_windows, dtype=np.intp) * n)[:, None]
    return (
        (targets[None, :] + offsets).reshape(-1),
        (sources[None, :] + offsets).reshape(-1),
        np.tile(targets, n_windows),
        np.tile(sources, n_windows),
    )


class ECNUGNN:
    """Parameters and forward pass of the edge-conditional node-update GNN.

    Args:
        config: architecture hyperparameters.
        n_nodes: number of sensors N.
        seed: seed (or Generator) for the parameter initialization.
    """

    def __init__(self, config: ModelConfig, n_nodes: int, seed=0):
        self.config = config
        self.n_nodes = int(n_nodes)
        if config.topk > self.n_nodes - 1:
            raise ContractError(
                f"topk={config.topk} needs at least {config.topk + 1} sensors, got {n_nodes}"
            )
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        d_e, d_f = config.embed_dim, config.feature_dim
        self.embeddings = init_embeddings(self.n_nodes, d_e, rng, scale=config.embed_init_std)
        self.encoder = Linear(config.window, d_f, rng, "encoder")
        self.ecnum = [Linear(d_f + 2 * d_e, d_f, rng, "ecnum.0")] + [
            Linear(d_f, d_f, rng, f"ecnum.{i}") for i in range(1, config.n_ecnum)
        ]
        self.ncrm = [Linear(d_f + d_e, d_f, rng, "ncrm.0")] + [
            Linear(d_f, d_f, rng, f"ncrm.{i}") for i in range(1, config.n_ncrm)
        ]
        self.readout = Linear(d_f, 1, rng, "readout")
        self.frozen_adjacency: Adjacency | None = None

    # -- parameters ---------------------------------------------------------

    def parameters(self) -> dict[str, Tensor]:
        params = {"embeddings": self.embeddings}
        for layer in [self.encoder, *self.ecnum, *self.ncrm, self.readout]:
            for p in layer.parameters():
                params[p.name] = p
        return params

    def n_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters().values())

    def zero_grads(self) -> None:
        T.zero_grads(self.parameters().values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise ContractError(f"state mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise DimensionError(f"{name}: expected shape {p.shape}, got {arr.shape}")
            p.data = arr.copy()
            p.zero_grad()

    # -- building blocks ----------------------------------------------------

    def graph(self) -> Adjacency:
        if self.frozen_adjacency is not None:
            return self.frozen_adjacency
        return extract_graph(self.embeddings, self.config.topk)

    def encode(self, x) -> Tensor:
        """Shared linear encoder applied to each row (sensor) of the window(s)."""
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
        if x.data.ndim != 2 or x.shape[1] != self.config.window:
            raise DimensionError(
                f"encoder expects rows of width {self.config.window}, got {x.shape}"
            )
        return self.encoder(x)

    def ecnum_transform(self, z_src: Tensor, v_tgt: Tensor, v_src: Tensor) -> Tensor:
        """Source representation rewritten for one target, row per edge."""
        d_e, d_f = self.config.embed_dim, self.config.feature_dim
        for t, width, what in ((z_src, d_f, "z_src"), (v_tgt, d_e, "v_tgt"), (v_src, d_e, "v_src")):
            if t.data.ndim != 2 or t.shape[1] != width:
                raise DimensionError(f"ecnum {what}: expected width {width}, got {t.shape}")
        return run_mlp(self.ecnum, T.concat([z_src, v_tgt, v_src], axis=1))

    def aggregate(self, transformed: Tensor, targets, sources, n_targets: int, k: int) -> Tensor:
        """Sum the transformed sources of each target, then apply the activation."""
        targets = np.asarray(targets, dtype=np.intp)
        sources = np.asarray(sources, dtype=np.intp)
        counts = np.bincount(targets, minlength=n_targets)
        if counts.shape[0] != n_targets or (counts != k + 1).any():
            raise ContractError(f"each target needs exactly k+1={k + 1} contributions")
        has_self = np.zeros(n_targets, dtype=bool)
        has_self[targets[targets == sources]] = True
        if not has_self.all():
            raise ContractError(f"missing self-edge for targets {np.flatnonzero(~has_self)[:5].tolist()}")
        summed = T.segment_sum(transformed, targets, n_targets)
        return T.relu(summed) if self.config.activation == "relu" else summed

    def ncrm_readout(self, z: Tensor, v: Tensor) -> Tensor:
        """Per-node scalar prediction from ``[z_i, v_i]``; returns (M, 1)."""
        d_e, d_f = self.config.embed_dim, self.config.feature_dim
        if z.shape[-1] != d_f or v.shape[-1] != d_e:
            raise DimensionError(f"ncrm expects widths ({d_f}, {d_e}), got {z.shape}, {v.shape}")
        h = T.relu(run_mlp(self.ncrm, T.concat([z, v], axis=1)))
        return self.readout(h)

    # -- full pass ----------------------------------------------------------

    def forward(self, x, adjacency: Adjacency | None = None) -> Tensor:
        """Predict the next value of every sensor for a batch of windows.

        Args:
            x: array of shape (B, N, w) or (N, w).
            adjacency: graph to use; extracted from the embeddings when omitted.

        Returns:
            Tensor of shape (B * N, 1), window-major.
        """
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        if x.ndim != 3 or x.shape[1] != self.n_nodes or x.shape[2] != self.config.window:
            raise DimensionError(
                f"expected windows of shape (B, {self.n_nodes}, {self.config.window}), got {x.shape}"
            )
        adjacency = self.graph() if adjacency is None else adjacency
        if adjacency.n_nodes != self.n_nodes:
            raise DimensionError(f"adjacency has {adjacency.n_nodes} nodes, model has {self.n_nodes}")
        n_windows = x.shape[0]
        tgt_rows, src_rows, tgt_nodes, src_nodes = batched_edges(adjacency, n_windows)
        z = self.encode(x.reshape(n_windows * self.n_nodes, self.config.window))
        transformed = self.ecnum_transform(
            T.gather_rows(z, src_rows),
            T.gather_rows(self.embeddings, tgt_nodes),
            T.gather_rows(self.embeddings, src_nodes),
        )
        z_agg = self.aggregate(
            transformed, tgt_rows, src_rows, n_windows * self.n_nodes, adjacency.k
        )
        node_ids = np.tile(np.arange(self.n_nodes, dtype=np.intp), n_windows)
        return self.ncrm_readout(z_agg, T.gather_rows(self.embeddings, node_ids))

    def loss(self, x, targets, adjacency: Adjacency | None = None) -> Tensor:
        pred = self.forward(x, adjacency)
        return T.mse(pred, np.asarray(targets, dtype=np.float64).reshape(-1, 1))

    def predict(self, x, batch_size: int = 256, adjacency: Adjacency | None = None) -> np.ndarray:
        """Numpy predictions: (B, N) for a batch, (N,) for a single window."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 2
        if single:
            x = x[None]
        adjacency = self.graph() if adjacency is None else adjacency
        chunks = [
            self.forward(x[i : i + batch_size], adjacency).data.reshape(-1, self.n_nodes)
            for i in range(0, x.shape[0], batch_size)
        ]
        out = np.concatenate(chunks, axis=0) if chunks else np.zeros((0, self.n_nodes))
        return out[0] if single else out


def expected_parameter_count(config: ModelConfig, n_nodes: int) -> int:
    """Closed-form parameter count of :class:`ECNUGNN`."""
    w, d_e, d_f = config.window, config.embed_dim, config.feature_dim
    return (
        (w * d_f + d_f)
        + ((d_f + 2 * d_e) * d_f + d_f)
        + (config.n_ecnum - 1) * (d_f * d_f + d_f)
        + ((d_f + d_e) * d_f + d_f)
        + (config.n_ncrm - 1) * (d_f * d_f + d_f)
        + (d_f + 1)
        + n_nodes * d_e
    )


def ecnum_parameter_count(config: ModelConfig) -> int:
    d_e, d_f = config.embed_dim, config.feature_dim
    return ((d_f + 2 * d_e) * d_f + d_f) + (config.n_ecnum - 1) * (d_f * d_f + d_f)
