"""Scene-graph vectorization and one round of GCN message passing.

Entity and relation labels become continuous vectors (file-backed table or
deterministic synthetic hash vectors); visual entities keep their detector
features verbatim when present.  Projections map everything into the shared
latent dimension, then a single degree-normalized aggregation produces the
per-node features consumed by the pruner and the joint encoder.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from psgmt import kernels
from psgmt import numeric_core as nc
from psgmt.numeric_core import Tensor
from psgmt.sg_data import SceneGraph

__all__ = [
    "EmbeddingProvider",
    "SyntheticEmbeddings",
    "FileEmbeddings",
    "load_embedding_file",
    "save_embedding_file",
    "VectorizedSceneGraph",
    "vectorize",
    "GcnParams",
    "init_gcn_params",
    "gcn_forward",
]


class EmbeddingProvider:
    """Maps labels to fixed continuous vectors of dimension ``dim``."""

    dim: int

    def vector(self, label: str) -> np.ndarray:
        raise NotImplementedError


class SyntheticEmbeddings(EmbeddingProvider):
    """Unit-norm vectors from a seeded hash of the label.

    A pure function of (label, seed), so tests and synthetic corpora need no
    embedding files.
    """

    def __init__(self, dim: int, seed: int = 0):
        self.dim = dim
        self.seed = seed

    def vector(self, label: str) -> np.ndarray:
        digest = hashlib.sha256(f"{self.seed}:{label}".encode()).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        v = rng.standard_normal(self.dim)
        return v / np.linalg.norm(v)


class FileEmbeddings(EmbeddingProvider):
    def __init__(self, table: dict[str, np.ndarray], dim: int):
        self.table = table
        self.dim = dim

    def vector(self, label: str) -> np.ndarray:
        if label not in self.table:
            raise KeyError(f"no embedding for label {label!r}")
        return self.table[label]


def load_embedding_file(path) -> FileEmbeddings:
    """Reads the 'emb v1 <count> <dim>' text format."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 4 or header[0] != "emb" or header[1] != "v1":
            raise ValueError(f"{path}: not an emb v1 file")
        count, dim = int(header[2]), int(header[3])
        table = {}
        for _ in range(count):
            parts = fh.readline().rstrip("\n").split(" ")
            label = parts[0]
            values = np.array([float(v) for v in parts[1:]])
            if values.shape != (dim,):
                raise ValueError(f"{path}: row {label!r} has {values.size} values, expected {dim}")
            table[label] = values
    return FileEmbeddings(table, dim)


def save_embedding_file(table: dict[str, np.ndarray], dim: int, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"emb v1 {len(table)} {dim}\n")
        for label, vec in table.items():
            fh.write(label + " " + " ".join(f"{v:.17g}" for v in vec) + "\n")


@dataclass
class VectorizedSceneGraph:
    """Continuous entity/relation matrices plus the untouched index pairs."""

    modality: str
    entity_vectors: np.ndarray  # (p, d_c) language / (p, d_v or d_c) visual
    relation_vectors: np.ndarray  # (q, d_c)
    pairs: np.ndarray  # (q, 2)

    @property
    def num_entities(self) -> int:
        return self.entity_vectors.shape[0]


def vectorize(graph: SceneGraph, provider: EmbeddingProvider) -> VectorizedSceneGraph:
    """Per-entity and per-relation vectors; detector features pass through."""
    feature_dim = graph.feature_dim()
    rows = []
    for ent in graph.entities:
        if ent.feature is not None:
            rows.append(np.asarray(ent.feature, dtype=np.float64))
        else:
            rows.append(provider.vector(ent.label))
    ent_dim = feature_dim if feature_dim is not None else provider.dim
    if any(r.shape != (ent_dim,) for r in rows):
        raise ValueError(
            "visual graphs mixing detector features and label embeddings of "
            "different dimensions are not supported"
        )
    entity_vectors = np.stack(rows) if rows else np.zeros((0, ent_dim))
    relation_vectors = (
        np.stack([provider.vector(r.label) for r in graph.relations])
        if graph.relations
        else np.zeros((0, provider.dim))
    )
    pairs = np.asarray(graph.relation_pairs(), dtype=np.intp).reshape(-1, 2)
    return VectorizedSceneGraph(graph.modality, entity_vectors, relation_vectors, pairs)


@dataclass
class GcnParams:
    """Shared-space projections plus the message-passing weights.

    ``entity_proj`` maps raw entity vectors (label-embedding or detector
    dimension) to d; ``relation_proj`` maps relation-label vectors to d.
    ``w1``/``w2``/``bias`` are the aggregation weights.
    """

    entity_proj: Tensor  # (input_dim, d)
    relation_proj: Tensor  # (d_c, d)
    w1: Tensor  # (d, d)
    w2: Tensor  # (d, d)
    bias: Tensor  # (d,)

    def tensors(self) -> dict[str, Tensor]:
        return {
            "entity_proj": self.entity_proj,
            "relation_proj": self.relation_proj,
            "w1": self.w1,
            "w2": self.w2,
            "bias": self.bias,
        }


def init_gcn_params(input_dim: int, relation_dim: int, d: int, rng: np.random.Generator) -> GcnParams:
    def mat(n, m):
        return Tensor(rng.standard_normal((n, m)) / np.sqrt(n), requires_grad=True)

    return GcnParams(
        entity_proj=mat(input_dim, d),
        relation_proj=mat(relation_dim, d),
        w1=mat(d, d),
        w2=mat(d, d),
        bias=Tensor(np.zeros(d), requires_grad=True),
    )


def gcn_forward(vsg: VectorizedSceneGraph, params: GcnParams) -> Tensor:
    """One round of degree-normalized message passing; returns (p, d).

    Node j aggregates, over each incident relation (j, k) plus a self term,
    (W1 e_k + W2 r_jk) / sqrt(deg k * deg j) + b, with deg counting incident
    relations plus the self-loop.  The self term contributes e_j with no
    relation part.  Implemented as two sparse-coefficient matmuls so the
    whole thing stays inside the autodiff graph.
    """
    p = vsg.num_entities
    if p == 0:
        raise ValueError("gcn_forward requires at least one entity")
    entity = nc.matmul(Tensor(vsg.entity_vectors), params.entity_proj)  # (p, d)
    ent_coef, rel_coef, term_counts = kernels.gcn_coefficients(vsg.pairs, p)
    out = nc.matmul(Tensor(ent_coef), nc.matmul(entity, params.w1))
    if vsg.pairs.shape[0] > 0:
        relation = nc.matmul(Tensor(vsg.relation_vectors), params.relation_proj)  # (q, d)
        out = nc.add(out, nc.matmul(Tensor(rel_coef), nc.matmul(relation, params.w2)))
    bias_terms = nc.matmul(Tensor(term_counts.reshape(p, 1)), nc.reshape(params.bias, (1, -1)))
    return nc.add(out, bias_terms)
