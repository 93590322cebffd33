"""Node condition embeddings and the directed top-k cosine-similarity graph."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, ParseError
from .tensor import Tensor

ZERO_NORM = 1e-8


@dataclass(frozen=True)
class Adjacency:
    """For each target node, the ids of its ``k`` source neighbors.

    Self-loops are not stored here; aggregation adds them separately.
    """

    neighbors: np.ndarray  # (N, k) int

    def __post_init__(self):
        nb = np.asarray(self.neighbors, dtype=np.intp)
        if nb.ndim != 2:
            raise ContractError(f"neighbors must be (N, k), got shape {nb.shape}")
        n = nb.shape[0]
        if nb.size and (nb.min() < 0 or nb.max() >= n):
            raise ContractError("neighbor id out of range")
        for i, row in enumerate(nb):
            if i in row:
                raise ContractError(f"node {i} lists itself as a neighbor")
            if len(set(row.tolist())) != len(row):
                raise ContractError(f"node {i} has duplicate neighbors")
        nb.setflags(write=False)
        object.__setattr__(self, "neighbors", nb)

    @property
    def n_nodes(self) -> int:
        return self.neighbors.shape[0]

    @property
    def k(self) -> int:
        return self.neighbors.shape[1]

    def edge_index(self) -> tuple[np.ndarray, np.ndarray]:
        """Target-major (targets, sources) including one self-edge per node.

        Each target contributes ``k + 1`` consecutive entries, self first.
        """
        n, k = self.neighbors.shape
        targets = np.repeat(np.arange(n, dtype=np.intp), k + 1)
        sources = np.concatenate(
            [np.arange(n, dtype=np.intp)[:, None], self.neighbors], axis=1
        ).reshape(-1)
        return targets, sources

    def pairs(self) -> set[tuple[int, int]]:
        """Set of (target, source) pairs, excluding self-loops."""
        return {(i, int(j)) for i, row in enumerate(self.neighbors) for j in row}

    def __eq__(self, other):
        return isinstance(other, Adjacency) and np.array_equal(
            self.neighbors, other.neighbors
        )

    def __hash__(self):
        return hash(self.neighbors.tobytes())


def init_embeddings(n: int, d_e: int, seed, scale: float = 1.0) -> Tensor:
    """Draw an ``n x d_e`` learnable embedding table from a seeded normal.

    Entries are ``scale`` times standard normal draws. Rows whose norm falls
    below 1e-8 are redrawn, so cosine similarity is always defined.
    """
    if n < 2 or d_e < 1:
        raise ContractError(f"need n >= 2 and d_e >= 1, got n={n}, d_e={d_e}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if scale <= 0:
        raise ContractError(f"scale must be positive, got {scale}")
    table = scale * rng.standard_normal((n, d_e))
    while True:
        small = np.linalg.norm(table, axis=1) < ZERO_NORM
        if not small.any():
            break
        table[small] = scale * rng.standard_normal((int(small.sum()), d_e))
    return Tensor(table, requires_grad=True, name="embeddings")


def cosine_matrix(embeddings) -> np.ndarray:
    """Pairwise cosine similarity of embedding rows, exactly symmetric, unit diagonal."""
    v = embeddings.data if isinstance(embeddings, Tensor) else np.asarray(embeddings, float)
    norms = np.linalg.norm(v, axis=1)
    if (norms < ZERO_NORM).any():
        raise ContractError(f"zero embedding row(s): {np.flatnonzero(norms < ZERO_NORM).tolist()}")
    u = v / norms[:, None]
    e = np.einsum("ik,jk->ij", u, u)
    e = (e + e.T) / 2.0
    np.fill_diagonal(e, 1.0)
    return e


def topk_adjacency(similarity: np.ndarray, k: int) -> Adjacency:
    """Each node's ``k`` most similar other nodes; ties go to the lower node id."""
    e = np.asarray(similarity, dtype=np.float64)
    n = e.shape[0]
    if e.shape != (n, n):
        raise ContractError(f"similarity must be square, got {e.shape}")
    if not 1 <= k <= n - 1:
        raise ContractError(f"k must be in [1, {n - 1}], got {k}")
    keyed = -e
    np.fill_diagonal(keyed, np.inf)
    order = np.argsort(keyed, axis=1, kind="stable")
    return Adjacency(order[:, :k])


def extract_graph(embeddings, k: int) -> Adjacency:
    return topk_adjacency(cosine_matrix(embeddings), k)


def save_edge_list(adjacency: Adjacency, similarity: np.ndarray, path) -> None:
    """Write one ``target source similarity`` line per edge."""
    lines = ["# target source similarity"]
    for i, row in enumerate(adjacency.neighbors):
        for j in row:
            lines.append(f"{i} {int(j)} {float(similarity[i, j])!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_edge_list(path) -> list[tuple[int, int, float]]:
    edges = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ParseError(f"{path}:{lineno}: expected 'target source weight'")
        try:
            edges.append((int(parts[0]), int(parts[1]), float(parts[2])))
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from None
    return edges
