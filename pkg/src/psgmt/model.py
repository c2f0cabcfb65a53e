"""Full translation model: graph encoding, pruning, and the backbone.

Two modes: ``psg`` (joint multimodal path plus the text-only auxiliary
path, sharing one encoder/decoder parameter set) and ``text`` (pure NMT
baseline whose loss path never touches graph or pruning code).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from psgmt import numeric_core as nc
from psgmt.backbone import Backbone, BackboneConfig, EncodedBatch
from psgmt.graph_encoder import (
    EmbeddingProvider,
    GcnParams,
    SyntheticEmbeddings,
    VectorizedSceneGraph,
    gcn_forward,
    init_gcn_params,
    vectorize,
)
from psgmt.numeric_core import Tensor
from psgmt.pruner import PruneConfig, PruneTrace, multi_step_prune
from psgmt.sg_data import SceneGraph

__all__ = ["ModelConfig", "Example", "PsgModel"]


@dataclass(frozen=True)
class ModelConfig:
    backbone: BackboneConfig
    prune: PruneConfig = PruneConfig()
    mode: str = "psg"  # "psg" | "text"
    lang_embed_dim: int = 32  # d_c: label-embedding dimension
    visual_feature_dim: int | None = None  # d_v: detector feature dimension
    embed_seed: int = 0

    def __post_init__(self):
        if self.mode not in ("psg", "text"):
            raise ValueError(f"unknown model mode {self.mode!r}")


@dataclass
class Example:
    """One parallel sentence pair with optional attached scene graphs."""

    src_ids: np.ndarray
    tgt_ids: np.ndarray
    lang_graph: VectorizedSceneGraph | None = None
    vis_graph: VectorizedSceneGraph | None = None
    example_id: str = ""


class PsgModel:
    def __init__(self, config: ModelConfig, rng: np.random.Generator,
                 provider: EmbeddingProvider | None = None):
        self.config = config
        self.backbone = Backbone(config.backbone, rng)
        self.provider = provider or SyntheticEmbeddings(config.lang_embed_dim, config.embed_seed)
        d = config.backbone.dim
        d_c = config.lang_embed_dim
        if config.mode == "psg":
            self.gcn_l = init_gcn_params(d_c, d_c, d, rng)
            vis_dim = config.visual_feature_dim or d_c
            self.gcn_v = init_gcn_params(vis_dim, d_c, d, rng)
        else:
            self.gcn_l = self.gcn_v = None

    # -- parameters --------------------------------------------------------

    def params(self) -> dict[str, Tensor]:
        out = {f"backbone.{k}": v for k, v in self.backbone.params.items()}
        if self.gcn_l is not None:
            out.update({f"gcn_l.{k}": v for k, v in self.gcn_l.tensors().items()})
            out.update({f"gcn_v.{k}": v for k, v in self.gcn_v.tensors().items()})
        return out

    def load_param_data(self, values: dict[str, np.ndarray]) -> None:
        params = self.params()
        missing = set(params) ^ set(values)
        if missing:
            raise ValueError(f"parameter schema mismatch: {sorted(missing)}")
        for name, tensor in params.items():
            if tensor.data.shape != values[name].shape:
                raise ValueError(f"shape mismatch for {name}")
            tensor.data[...] = values[name]

    # -- graph side --------------------------------------------------------

    def vectorize_graph(self, graph: SceneGraph) -> VectorizedSceneGraph:
        return vectorize(graph, self.provider)

    def _graph_features(self, example: Example) -> tuple[Tensor | None, Tensor | None]:
        f_l = f_v = None
        if example.lang_graph is not None and example.lang_graph.num_entities > 0:
            f_l = gcn_forward(example.lang_graph, self.gcn_l)
        if example.vis_graph is not None and example.vis_graph.num_entities > 0:
            f_v = gcn_forward(example.vis_graph, self.gcn_v)
        return f_l, f_v

    def prune_example(
        self, example: Example, rng: np.random.Generator | None = None
    ) -> tuple[Tensor | None, Tensor | None, Tensor | None, PruneTrace | None]:
        """GCN features plus pruned visual features and loss for one example."""
        f_l, f_v = self._graph_features(example)
        if f_l is None or f_v is None:
            # no guidance or nothing to prune: pass through with zero loss
            return f_l, f_v, None, None
        if rng is None and self.config.prune.strategy == "random":
            # deterministic inference draws for the ablation strategy
            rng = np.random.default_rng(0)
        pruned, loss, trace = multi_step_prune(f_v, f_l, self.config.prune, rng)
        return f_l, pruned, loss, trace

    # -- encoding ----------------------------------------------------------

    def encode_batch(
        self,
        examples: list[Example],
        joint: bool,
        train: bool = False,
        rng: np.random.Generator | None = None,
    ) -> tuple[EncodedBatch, Tensor]:
        """Returns the encoded batch and the mean per-example pruning loss."""
        text_feats = [self.backbone.embed_tokens(ex.src_ids) for ex in examples]
        if not joint:
            enc = self.backbone.encode_text_only(text_feats, train=train, rng=rng)
            return enc, Tensor(0.0)
        if self.config.mode != "psg":
            raise ValueError("joint encoding requires psg mode")
        lang_feats: list[Tensor | None] = []
        vis_feats: list[Tensor | None] = []
        prune_terms: list[Tensor] = []
        for ex in examples:
            f_l, f_v, loss, _ = self.prune_example(ex, rng)
            lang_feats.append(f_l)
            vis_feats.append(f_v)
            if loss is not None:
                prune_terms.append(loss)
        enc = self.backbone.encode_joint(text_feats, lang_feats, vis_feats, train=train, rng=rng)
        if prune_terms:
            total = prune_terms[0]
            for term in prune_terms[1:]:
                total = nc.add(total, term)
            prune_loss = nc.scale(total, 1.0 / len(examples))
        else:
            prune_loss = Tensor(0.0)
        return enc, prune_loss

    def encode_example(self, example: Example, joint: bool) -> np.ndarray:
        """Unpadded encoder rows for one example (inference path)."""
        with nc.no_grad():
            enc, _ = self.encode_batch([example], joint=joint, train=False)
        return enc.states.data[0][enc.row_mask[0]]
