"""Transformer encoder-decoder with joint multimodal encoding.

The encoder consumes the concatenation [source embedding + positional
encoding; language-graph features; pruned visual-graph features]; graph
segments are sets and get no positional encoding.  Pre-norm residual blocks
throughout.  The text-only path reuses the same encoder parameters with
empty graph segments.  Decoding exists in a teacher-forced batched form and
an incremental cached form that must agree with it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from psgmt import numeric_core as nc
from psgmt.numeric_core import Tensor

__all__ = [
    "BackboneConfig",
    "EncodedBatch",
    "Backbone",
    "positional_encoding",
    "DecodeCache",
    "decode_step",
]

NEG_INF = -1.0e30

SEG_TEXT, SEG_LANG_GRAPH, SEG_VIS_GRAPH = 0, 1, 2


@dataclass(frozen=True)
class BackboneConfig:
    vocab_size: int
    layers: int = 6
    heads: int = 8
    dim: int = 512
    ffn_dim: int = 2048
    dropout: float = 0.3
    max_positions: int = 512
    # modality tag added to each row after concatenation; ablation toggle
    segment_embeddings: bool = True
    # target embedding and output projection share weights
    tie_output: bool = True
    learned_positions: bool = False

    def __post_init__(self):
        if self.dim % self.heads != 0:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")
        for name in ("vocab_size", "layers", "heads", "dim", "ffn_dim", "max_positions"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def positional_encoding(length: int, dim: int) -> np.ndarray:
    """Sinusoidal table: PE[pos, 2i] = sin(pos / 10000^(2i/d)), odd -> cos."""
    pos = np.arange(length)[:, None]
    i = np.arange(0, dim, 2)[None, :]
    angle = pos / np.power(10000.0, i / dim)
    table = np.zeros((length, dim))
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle[:, : table[:, 1::2].shape[1]])
    return table


@dataclass
class EncodedBatch:
    states: Tensor  # (B, T, d)
    row_mask: np.ndarray  # (B, T) bool, True where the row is real
    segments: list[tuple[int, int, int]]  # (m, p_l, p_v) per example


class Backbone:
    """Owns all transformer parameters and the forward passes."""

    def __init__(self, config: BackboneConfig, rng: np.random.Generator):
        self.config = config
        d, ffn = config.dim, config.ffn_dim
        self.params: dict[str, Tensor] = {}

        def param(name, shape, std):
            t = Tensor(rng.standard_normal(shape) * std, requires_grad=True)
            self.params[name] = t
            return t

        def const_param(name, value):
            t = Tensor(value, requires_grad=True)
            self.params[name] = t
            return t

        param("token_embed", (config.vocab_size, d), d ** -0.5)
        if config.learned_positions:
            param("pos_embed", (config.max_positions, d), d ** -0.5)
        self._pe = positional_encoding(config.max_positions, d)
        if config.segment_embeddings:
            param("seg_embed", (3, d), d ** -0.5)
        for side, layers in (("enc", config.layers), ("dec", config.layers)):
            for i in range(layers):
                blocks = ["self"] if side == "enc" else ["self", "cross"]
                for blk in blocks:
                    base = f"{side}{i}.{blk}"
                    const_param(f"{base}.ln.g", np.ones(d))
                    const_param(f"{base}.ln.b", np.zeros(d))
                    for w in ("wq", "wk", "wv", "wo"):
                        param(f"{base}.{w}", (d, d), d ** -0.5)
                base = f"{side}{i}.ffn"
                const_param(f"{base}.ln.g", np.ones(d))
                const_param(f"{base}.ln.b", np.zeros(d))
                param(f"{base}.w1", (d, ffn), d ** -0.5)
                const_param(f"{base}.b1", np.zeros(ffn))
                param(f"{base}.w2", (ffn, d), ffn ** -0.5)
                const_param(f"{base}.b2", np.zeros(d))
            const_param(f"{side}.ln.g", np.ones(d))
            const_param(f"{side}.ln.b", np.zeros(d))
        if not config.tie_output:
            param("out_proj", (d, config.vocab_size), d ** -0.5)

    # -- building blocks ---------------------------------------------------

    def _p(self, name: str) -> Tensor:
        return self.params[name]

    def _dropout(self, x: Tensor, train: bool, rng: np.random.Generator | None) -> Tensor:
        if train and self.config.dropout > 0.0:
            if rng is None:
                raise ValueError("training forward requires a dropout rng")
            return nc.dropout(x, self.config.dropout, rng)
        return x

    def _heads_split(self, x: Tensor) -> Tensor:
        b, t, d = x.shape
        h = self.config.heads
        return nc.transpose(nc.reshape(x, (b, t, h, d // h)), (0, 2, 1, 3))

    def _heads_join(self, x: Tensor) -> Tensor:
        b, h, t, dh = x.shape
        return nc.reshape(nc.transpose(x, (0, 2, 1, 3)), (b, t, h * dh))

    def _attention(self, base: str, q_in: Tensor, kv_in: Tensor, mask: Tensor | None) -> Tensor:
        dh = self.config.dim // self.config.heads
        q = self._heads_split(nc.matmul(q_in, self._p(f"{base}.wq")))
        k = self._heads_split(nc.matmul(kv_in, self._p(f"{base}.wk")))
        v = self._heads_split(nc.matmul(kv_in, self._p(f"{base}.wv")))
        scores = nc.scale(nc.matmul(q, nc.transpose(k, (0, 1, 3, 2))), dh ** -0.5)
        if mask is not None:
            scores = nc.add(scores, mask)
        ctx = nc.matmul(nc.softmax(scores, axis=-1), v)
        return nc.matmul(self._heads_join(ctx), self._p(f"{base}.wo"))

    def _ln(self, base: str, x: Tensor) -> Tensor:
        return nc.layer_norm(x, self._p(f"{base}.ln.g"), self._p(f"{base}.ln.b"))

    def _ffn(self, base: str, x: Tensor) -> Tensor:
        h = nc.relu(nc.add(nc.matmul(x, self._p(f"{base}.w1")), self._p(f"{base}.b1")))
        return nc.add(nc.matmul(h, self._p(f"{base}.w2")), self._p(f"{base}.b2"))

    def _key_mask(self, row_mask: np.ndarray, t_query: int) -> Tensor:
        b, t_key = row_mask.shape
        h = self.config.heads
        add = np.where(row_mask[:, None, None, :], 0.0, NEG_INF)
        return Tensor(np.broadcast_to(add, (b, h, t_query, t_key)).copy())

    # -- embedding ---------------------------------------------------------

    def embed_tokens(self, ids: np.ndarray) -> Tensor:
        """sqrt(d)-scaled token embedding; ids may be any integer shape."""
        return nc.scale(nc.embedding(self._p("token_embed"), ids), math.sqrt(self.config.dim))

    def _positions(self, length: int) -> np.ndarray:
        if length > self.config.max_positions:
            raise ValueError(
                f"sequence length {length} exceeds max positions {self.config.max_positions}"
            )
        if self.config.learned_positions:
            return self._p("pos_embed").data[:length]
        return self._pe[:length]

    # -- encoder -----------------------------------------------------------

    def encode_joint(
        self,
        text_feats: list[Tensor],
        lang_feats: list[Tensor | None],
        vis_feats: list[Tensor | None],
        train: bool = False,
        rng: np.random.Generator | None = None,
    ) -> EncodedBatch:
        """Joint self-attention encoding of [text+PE; lang graph; vis graph].

        ``text_feats`` are embedded source rows (m_i x d) per example; graph
        features arrive in the shared dimension from the graph encoder.
        """
        d = self.config.dim
        rows_per_example: list[Tensor] = []
        segments: list[tuple[int, int, int]] = []
        seg = self._p("seg_embed").data if self.config.segment_embeddings else None
        for f_s, f_l, f_v in zip(text_feats, lang_feats, vis_feats):
            if f_s.shape[0] == 0:
                raise ValueError("empty text segment")
            if f_s.shape[-1] != d:
                raise nc.ShapeError("encode_joint", f_s.shape, (d,))
            parts = [nc.add(f_s, Tensor(self._positions(f_s.shape[0])))]
            if seg is not None:
                parts[0] = nc.add(parts[0], Tensor(np.broadcast_to(seg[SEG_TEXT], parts[0].shape).copy()))
            p_l = p_v = 0
            for f_g, seg_id in ((f_l, SEG_LANG_GRAPH), (f_v, SEG_VIS_GRAPH)):
                if f_g is None or f_g.shape[0] == 0:
                    continue
                if f_g.shape[-1] != d:
                    raise nc.ShapeError("encode_joint", f_g.shape, (d,))
                rows = f_g
                if seg is not None:
                    rows = nc.add(rows, Tensor(np.broadcast_to(seg[seg_id], rows.shape).copy()))
                parts.append(rows)
                if seg_id == SEG_LANG_GRAPH:
                    p_l = f_g.shape[0]
                else:
                    p_v = f_g.shape[0]
            rows_per_example.append(nc.concat(parts, axis=0) if len(parts) > 1 else parts[0])
            segments.append((f_s.shape[0], p_l, p_v))

        t_max = max(r.shape[0] for r in rows_per_example)
        row_mask = np.zeros((len(rows_per_example), t_max), dtype=bool)
        for i, r in enumerate(rows_per_example):
            row_mask[i, : r.shape[0]] = True
        x = nc.stack([nc.pad_rows(r, t_max) for r in rows_per_example])
        x = self._dropout(x, train, rng)

        mask = self._key_mask(row_mask, t_max)
        for i in range(self.config.layers):
            base = f"enc{i}"
            attn = self._attention(f"{base}.self", self._ln(f"{base}.self", x), self._ln(f"{base}.self", x), mask)
            x = nc.add(x, self._dropout(attn, train, rng))
            ff = self._ffn(f"{base}.ffn", self._ln(f"{base}.ffn", x))
            x = nc.add(x, self._dropout(ff, train, rng))
        x = self._ln("enc", x)
        return EncodedBatch(states=x, row_mask=row_mask, segments=segments)

    def encode_text_only(
        self,
        text_feats: list[Tensor],
        train: bool = False,
        rng: np.random.Generator | None = None,
    ) -> EncodedBatch:
        empty: list[Tensor | None] = [None] * len(text_feats)
        return self.encode_joint(text_feats, empty, list(empty), train=train, rng=rng)

    # -- decoder -----------------------------------------------------------

    def _out_proj(self, h: Tensor) -> Tensor:
        if self.config.tie_output:
            return nc.matmul(h, nc.transpose(self._p("token_embed"), (1, 0)))
        return nc.matmul(h, self._p("out_proj"))

    def decode_train(
        self,
        enc: EncodedBatch,
        target_in: np.ndarray,
        train: bool = False,
        rng: np.random.Generator | None = None,
    ) -> Tensor:
        """Teacher-forced logits (B, n, vocab) for bos-prefixed target ids."""
        b, n = target_in.shape
        x = self.embed_tokens(target_in)
        x = nc.add(x, Tensor(np.broadcast_to(self._positions(n), (b, n, self.config.dim)).copy()))
        x = self._dropout(x, train, rng)

        causal = np.triu(np.full((n, n), NEG_INF), k=1)
        self_mask = Tensor(np.broadcast_to(causal, (b, self.config.heads, n, n)).copy())
        cross_mask = self._key_mask(enc.row_mask, n)
        for i in range(self.config.layers):
            base = f"dec{i}"
            attn = self._attention(f"{base}.self", self._ln(f"{base}.self", x), self._ln(f"{base}.self", x), self_mask)
            x = nc.add(x, self._dropout(attn, train, rng))
            cross = self._attention(
                f"{base}.cross", self._ln(f"{base}.cross", x), self._ln(f"{base}.cross", enc.states), cross_mask
            )
            x = nc.add(x, self._dropout(cross, train, rng))
            ff = self._ffn(f"{base}.ffn", self._ln(f"{base}.ffn", x))
            x = nc.add(x, self._dropout(ff, train, rng))
        x = self._ln("dec", x)
        return self._out_proj(x)


# ---------------------------------------------------------------------------
# incremental decoding


@dataclass
class DecodeCache:
    """Per-layer projected self-attention keys/values plus fixed cross k/v."""

    length: int
    self_k: list[np.ndarray]  # (t, d) per layer
    self_v: list[np.ndarray]
    cross_k: list[np.ndarray]  # (H, Tk, dh) per layer
    cross_v: list[np.ndarray]
    cross_states: np.ndarray  # normalized encoder rows per cross block, keyed below
    cross_ln: list[np.ndarray]


def _init_cache(backbone: Backbone, enc_states: np.ndarray) -> DecodeCache:
    cfg = backbone.config
    h, dh = cfg.heads, cfg.dim // cfg.heads
    cross_k, cross_v, cross_ln = [], [], []
    with nc.no_grad():
        for i in range(cfg.layers):
            base = f"dec{i}.cross"
            normed = nc.layer_norm(
                Tensor(enc_states), backbone._p(f"{base}.ln.g"), backbone._p(f"{base}.ln.b")
            ).data
            cross_ln.append(normed)
            k = (normed @ backbone._p(f"{base}.wk").data).reshape(-1, h, dh).transpose(1, 0, 2)
            v = (normed @ backbone._p(f"{base}.wv").data).reshape(-1, h, dh).transpose(1, 0, 2)
            cross_k.append(k)
            cross_v.append(v)
    return DecodeCache(
        length=0,
        self_k=[np.zeros((0, cfg.dim)) for _ in range(cfg.layers)],
        self_v=[np.zeros((0, cfg.dim)) for _ in range(cfg.layers)],
        cross_k=cross_k,
        cross_v=cross_v,
        cross_states=enc_states,
        cross_ln=cross_ln,
    )


def decode_step(
    backbone: Backbone,
    enc_states: np.ndarray,
    prefix: list[int],
    cache: DecodeCache | None = None,
) -> tuple[np.ndarray, DecodeCache]:
    """Next-token logits for a bos-prefixed prefix, with incremental caching.

    ``enc_states`` holds the real (unpadded) encoder rows of one example.
    The returned logits equal the last row of :meth:`Backbone.decode_train`
    on the same prefix.  The cache is functional: appending builds new
    arrays, so branching searches may share caches.
    """
    if not prefix:
        raise ValueError("prefix must start with bos")
    if cache is None:
        cache = _init_cache(backbone, enc_states)
    if cache.length != len(prefix) - 1:
        raise ValueError(f"cache holds {cache.length} positions, prefix has {len(prefix)} tokens")
    cfg = backbone.config
    h, dh = cfg.heads, cfg.dim // cfg.heads
    pos = len(prefix) - 1
    token = prefix[-1]

    new_self_k, new_self_v = [], []
    with nc.no_grad():
        x = backbone.embed_tokens(np.array([token])).data + backbone._positions(pos + 1)[pos : pos + 1]
        for i in range(cfg.layers):
            base = f"dec{i}"
            normed = nc.layer_norm(
                Tensor(x), backbone._p(f"{base}.self.ln.g"), backbone._p(f"{base}.self.ln.b")
            ).data
            q = (normed @ backbone._p(f"{base}.self.wq").data).reshape(h, 1, dh)
            k_new = np.concatenate([cache.self_k[i], normed @ backbone._p(f"{base}.self.wk").data])
            v_new = np.concatenate([cache.self_v[i], normed @ backbone._p(f"{base}.self.wv").data])
            new_self_k.append(k_new)
            new_self_v.append(v_new)
            k = k_new.reshape(-1, h, dh).transpose(1, 0, 2)
            v = v_new.reshape(-1, h, dh).transpose(1, 0, 2)
            scores = (q @ k.transpose(0, 2, 1)) * dh ** -0.5
            w = np.exp(scores - scores.max(axis=-1, keepdims=True))
            w /= w.sum(axis=-1, keepdims=True)
            ctx = (w @ v).transpose(1, 0, 2).reshape(1, cfg.dim)
            x = x + ctx @ backbone._p(f"{base}.self.wo").data

            normed = nc.layer_norm(
                Tensor(x), backbone._p(f"{base}.cross.ln.g"), backbone._p(f"{base}.cross.ln.b")
            ).data
            q = (normed @ backbone._p(f"{base}.cross.wq").data).reshape(h, 1, dh)
            scores = (q @ cache.cross_k[i].transpose(0, 2, 1)) * dh ** -0.5
            w = np.exp(scores - scores.max(axis=-1, keepdims=True))
            w /= w.sum(axis=-1, keepdims=True)
            ctx = (w @ cache.cross_v[i]).transpose(1, 0, 2).reshape(1, cfg.dim)
            x = x + ctx @ backbone._p(f"{base}.cross.wo").data

            normed = nc.layer_norm(
                Tensor(x), backbone._p(f"{base}.ffn.ln.g"), backbone._p(f"{base}.ffn.ln.b")
            ).data
            hmid = np.maximum(normed @ backbone._p(f"{base}.ffn.w1").data + backbone._p(f"{base}.ffn.b1").data, 0.0)
            x = x + hmid @ backbone._p(f"{base}.ffn.w2").data + backbone._p(f"{base}.ffn.b2").data

        x = nc.layer_norm(Tensor(x), backbone._p("dec.ln.g"), backbone._p("dec.ln.b")).data
        if cfg.tie_output:
            logits = x @ backbone._p("token_embed").data.T
        else:
            logits = x @ backbone._p("out_proj").data

    new_cache = DecodeCache(
        length=cache.length + 1,
        self_k=new_self_k,
        self_v=new_self_v,
        cross_k=cache.cross_k,
        cross_v=cache.cross_v,
        cross_states=cache.cross_states,
        cross_ln=cache.cross_ln,
    )
    return logits[0], new_cache
