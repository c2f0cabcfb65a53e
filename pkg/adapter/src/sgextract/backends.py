"""Pluggable extraction backends.

Production deployments wrap pretrained models here (a detector-based
visual scene-graph network; a dependency-parse scene-graph parser).  The
built-in backends are deterministic lightweight stand-ins: the visual one
derives a plausible graph from a content hash of the image bytes, the
language one is a small rule-based parser.  Both honor the same output
contract, so swapping in heavyweight models changes no downstream code.
"""

from __future__ import annotations

import hashlib

import numpy as np

from sgextract.interchange import EntityOut, GraphOut, RelationOut

FEATURE_DIM = 512

# small inventories for the hash-based detector
_OBJECT_LABELS = (
    "man", "woman", "dog", "cat", "horse", "car", "tree", "table",
    "ball", "bicycle", "bird", "chair", "boat", "house", "street", "sky",
)
_PREDICATE_LABELS = ("on", "near", "holding", "riding", "behind", "wearing")

_STOPWORDS = {
    "a", "an", "the", "this", "that", "these", "those", "is", "are",
    "was", "were", "of", "and", "or", "to", "with", "at", "by",
}
_PREPOSITIONS = {"on", "in", "under", "near", "behind", "above", "beside"}


def _rng_for(data: bytes, salt: str) -> np.random.Generator:
    digest = hashlib.sha256(salt.encode() + data).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def label_vector(label: str, dim: int = FEATURE_DIM) -> np.ndarray:
    """Deterministic unit-norm embedding for a label."""
    rng = _rng_for(label.encode("utf-8"), "label:")
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


class VisualBackend:
    """Maps raw image bytes to a visual graph proposal."""

    def detect(self, image_bytes: bytes) -> GraphOut:
        raise NotImplementedError


class HashDetector(VisualBackend):
    """Deterministic stand-in for a pretrained scene-graph detector.

    Entity count, labels, confidences, and pairwise relations are all pure
    functions of the image content, so re-extraction is reproducible and
    testable without model weights.  Features blend the label direction
    with hash noise, mimicking detector hidden states.
    """

    def __init__(self, max_entities: int = 14, feature_dim: int = FEATURE_DIM):
        self.max_entities = max_entities
        self.feature_dim = feature_dim

    def detect(self, image_bytes: bytes) -> GraphOut:
        rng = _rng_for(image_bytes, "visual:")
        p = int(rng.integers(3, self.max_entities + 1))
        entities = []
        for i in range(p):
            label = _OBJECT_LABELS[int(rng.integers(0, len(_OBJECT_LABELS)))]
            base = label_vector(label, self.feature_dim)
            noise = rng.standard_normal(self.feature_dim) * (0.3 / self.feature_dim ** 0.5)
            entities.append(
                EntityOut(
                    id=i,
                    label=label,
                    confidence=round(float(rng.uniform(0.05, 1.0)), 6),
                    feature=[float(v) for v in base + noise],
                )
            )
        relations = []
        for i in range(p - 1):
            if rng.random() < 0.6:
                relations.append(
                    RelationOut(
                        id=len(relations),
                        label=_PREDICATE_LABELS[int(rng.integers(0, len(_PREDICATE_LABELS)))],
                        subject=i,
                        object=int(rng.integers(i + 1, p)),
                        confidence=round(float(rng.uniform(0.05, 1.0)), 6),
                    )
                )
        return GraphOut(modality="visual", entities=entities, relations=relations)


class LanguageBackend:
    def parse(self, sentence: str) -> GraphOut:
        raise NotImplementedError


class RuleParser(LanguageBackend):
    """Heuristic parse: content words become entities, verbs/prepositions
    between them become relations.

    "a man rides a horse" -> entities {man, horse}, relation (man, rides,
    horse).  Empty input yields an empty graph.
    """

    def parse(self, sentence: str) -> GraphOut:
        tokens = [t.strip(".,!?;:").lower() for t in sentence.split()]
        tokens = [t for t in tokens if t]
        entities: list[EntityOut] = []
        index: dict[str, int] = {}
        relations: list[RelationOut] = []
        pending: str | None = None  # candidate predicate seen since last entity
        last_entity: int | None = None
        for i, tok in enumerate(tokens):
            if tok in _STOPWORDS:
                continue
            is_predicate = (
                tok in _PREPOSITIONS
                or (tok.endswith("s") and i not in (0,) and pending is None and last_entity is not None)
            )
            if is_predicate and last_entity is not None:
                pending = tok
                continue
            if tok not in index:
                index[tok] = len(entities)
                entities.append(EntityOut(id=len(entities), label=tok))
            current = index[tok]
            if pending is not None and last_entity is not None and last_entity != current:
                relations.append(
                    RelationOut(
                        id=len(relations), label=pending,
                        subject=last_entity, object=current,
                    )
                )
            pending = None
            last_entity = current
        return GraphOut(modality="language", entities=entities, relations=relations)
