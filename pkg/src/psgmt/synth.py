"""Deterministic generators for desk-scale corpora and scene graphs.

The ambiguity corpus is the core fixture: each sentence carries one
ambiguous source token whose correct target-side sense token is decidable
only from a cue entity in the visual scene graph.  Sense assignments are
drawn independently of the text, so no text-only model can beat the sense
prior.  Distractor entities live in a feature subspace orthogonal to every
concept and cue direction.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, asdict

import numpy as np

from psgmt.sg_data import Entity, Relation, SceneGraph, serialize_scene_graph

__all__ = [
    "SynthSpec",
    "SynthExample",
    "SynthData",
    "generate",
    "write_dataset",
    "ambiguous_token_accuracy",
]


@dataclass(frozen=True)
class SynthSpec:
    seed: int = 0
    vocab_size: int = 12  # content word types
    sentence_len: tuple[int, int] = (3, 6)  # content words per sentence
    ambiguous_types: int = 2
    senses: int = 2
    distractors: int = 2  # distractor entities per visual graph
    distractor_dirs: int = 4
    splits: dict = field(default_factory=lambda: {"train": 64, "valid": 16, "test": 32})
    feature_scale: float = 3.0

    def __post_init__(self):
        if self.ambiguous_types > 0 and self.senses < 2:
            raise ValueError("ambiguous types need at least 2 senses")
        if self.vocab_size < 2 or self.sentence_len[0] < 1:
            raise ValueError("vocabulary too small")
        if self.sentence_len[0] > self.sentence_len[1]:
            raise ValueError("bad sentence length range")

    @property
    def feature_dim(self) -> int:
        return self.vocab_size + self.ambiguous_types * self.senses + self.distractor_dirs


@dataclass
class SynthExample:
    example_id: str
    source: str
    target: str
    lang_graph: SceneGraph
    vis_graph: SceneGraph


@dataclass
class SynthData:
    spec: SynthSpec
    splits: dict[str, list[SynthExample]]
    answer_key: list[dict]


def _concept_feature(spec: SynthSpec, concept: int) -> tuple[float, ...]:
    v = np.zeros(spec.feature_dim)
    v[concept] = spec.feature_scale
    return tuple(v)


def _cue_feature(spec: SynthSpec, amb_type: int, sense: int) -> tuple[float, ...]:
    v = np.zeros(spec.feature_dim)
    v[spec.vocab_size + amb_type * spec.senses + sense] = spec.feature_scale
    return tuple(v)


def _distractor_feature(spec: SynthSpec, direction: int) -> tuple[float, ...]:
    v = np.zeros(spec.feature_dim)
    v[spec.vocab_size + spec.ambiguous_types * spec.senses + direction] = spec.feature_scale
    return tuple(v)


def _chain_relations(n_entities: int, label: str) -> list[Relation]:
    return [
        Relation(id=i, label=label, subject=i, object=i + 1)
        for i in range(n_entities - 1)
    ]


def sense_token(amb_type: int, sense: int) -> str:
    return f"s{amb_type}x{sense}"


def _make_example(spec: SynthSpec, rng: np.random.Generator, split: str, index: int,
                  answer_key: list[dict]) -> SynthExample:
    length = int(rng.integers(spec.sentence_len[0], spec.sentence_len[1] + 1))
    concepts = [int(c) for c in rng.integers(0, spec.vocab_size, size=length)]
    src_tokens = [f"w{c}" for c in concepts]
    tgt_tokens = [f"t{c}" for c in concepts]

    example_id = f"{split}-{index}"
    amb_type = sense = None
    if spec.ambiguous_types > 0:
        amb_type = int(rng.integers(0, spec.ambiguous_types))
        sense = int(rng.integers(0, spec.senses))  # independent of all text
        slot = int(rng.integers(0, length + 1))
        src_tokens.insert(slot, f"amb{amb_type}")
        tgt_tokens.insert(slot, sense_token(amb_type, sense))
        answer_key.append(
            {
                "example_id": example_id,
                "split": split,
                "type": amb_type,
                "sense": sense,
                "correct_token": sense_token(amb_type, sense),
                "wrong_tokens": [
                    sense_token(amb_type, j) for j in range(spec.senses) if j != sense
                ],
            }
        )

    # language graph: one entity per distinct content word, chained
    seen: list[int] = []
    for c in concepts:
        if c not in seen:
            seen.append(c)
    lang_entities = [Entity(id=i, label=f"w{c}") for i, c in enumerate(seen)]
    lang_graph = SceneGraph(
        modality="language",
        entities=tuple(lang_entities),
        relations=tuple(_chain_relations(len(lang_entities), "near")),
    )

    # visual graph: concept entities, the sense cue, then distractors
    vis_entities = [
        Entity(id=i, label=f"v{c}", confidence=0.9, feature=_concept_feature(spec, c))
        for i, c in enumerate(seen)
    ]
    if amb_type is not None:
        vis_entities.append(
            Entity(
                id=len(vis_entities),
                label=f"cue{amb_type}",
                confidence=0.9,
                feature=_cue_feature(spec, amb_type, sense),
            )
        )
    for _ in range(spec.distractors):
        direction = int(rng.integers(0, spec.distractor_dirs))
        vis_entities.append(
            Entity(
                id=len(vis_entities),
                label=f"d{direction}",
                confidence=round(float(rng.uniform(0.05, 0.95)), 3),
                feature=_distractor_feature(spec, direction),
            )
        )
    vis_graph = SceneGraph(
        modality="visual",
        entities=tuple(vis_entities),
        relations=tuple(_chain_relations(len(vis_entities), "with")),
    )

    return SynthExample(
        example_id=example_id,
        source=" ".join(src_tokens),
        target=" ".join(tgt_tokens),
        lang_graph=lang_graph,
        vis_graph=vis_graph,
    )


def generate(spec: SynthSpec) -> SynthData:
    """Build all splits; byte-stable for a fixed spec (seed included)."""
    min_vocab_needed = 2
    if spec.vocab_size < min_vocab_needed:
        raise ValueError("vocabulary too small for the requested corpus")
    rng = np.random.default_rng(spec.seed)
    answer_key: list[dict] = []
    splits: dict[str, list[SynthExample]] = {}
    for split, count in spec.splits.items():
        splits[split] = [
            _make_example(spec, rng, split, i, answer_key) for i in range(count)
        ]
    return SynthData(spec=spec, splits=splits, answer_key=answer_key)


def write_dataset(data: SynthData, out_dir) -> None:
    """Emit parallel text, interchange graph files, and the answer key."""
    os.makedirs(out_dir, exist_ok=True)
    graph_dir = os.path.join(out_dir, "graphs")
    os.makedirs(graph_dir, exist_ok=True)
    for split, examples in data.splits.items():
        with open(os.path.join(out_dir, f"{split}.src"), "w", encoding="utf-8") as src_fh, open(
            os.path.join(out_dir, f"{split}.tgt"), "w", encoding="utf-8"
        ) as tgt_fh:
            for ex in examples:
                src_fh.write(ex.source + "\n")
                tgt_fh.write(ex.target + "\n")
        for ex in examples:
            for kind, graph in (("lang", ex.lang_graph), ("vis", ex.vis_graph)):
                path = os.path.join(graph_dir, f"{ex.example_id}.{kind}.json")
                with open(path, "w", encoding="utf-8") as fh:
                    fh.write(serialize_scene_graph(graph) + "\n")
    key_doc = {
        "spec": {**asdict(data.spec), "sentence_len": list(data.spec.sentence_len)},
        "items": data.answer_key,
    }
    with open(os.path.join(out_dir, "answer_key.json"), "w", encoding="utf-8") as fh:
        json.dump(key_doc, fh, indent=2, sort_keys=False)
        fh.write("\n")


def ambiguous_token_accuracy(hypotheses: list[str], key_items: list[dict]) -> float:
    """Fraction of ambiguous slots rendered with the correct sense token.

    ``hypotheses`` must align one-to-one with ``key_items``.  A slot counts
    as correct when the correct sense token appears and no competing sense
    token of the same type does.
    """
    if len(hypotheses) != len(key_items):
        raise ValueError(
            f"hypothesis/key misalignment: {len(hypotheses)} vs {len(key_items)}"
        )
    if not key_items:
        return 0.0
    correct = 0
    for hyp, item in zip(hypotheses, key_items):
        tokens = set(hyp.split())
        if item["correct_token"] in tokens and not tokens & set(item["wrong_tokens"]):
            correct += 1
    return correct / len(key_items)
