"""Scene-graph domain model, JSON interchange format, and entity statistics.

The interchange file is the system boundary: extraction tooling writes these
files, everything in this package only reads them.  One UTF-8 JSON document
per graph (or newline-delimited documents in a stream), schema version 1.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator

__all__ = [
    "Entity",
    "Relation",
    "SceneGraph",
    "EntityStats",
    "SceneGraphError",
    "parse_scene_graph",
    "serialize_scene_graph",
    "load_graph_stream",
    "entity_stats",
    "language_entity_stats",
]

INTERCHANGE_VERSION = 1

# Published means for real extracted corpora, kept for comparison; the
# stats tool reports its own measurement and does not adjudicate between
# them (9.17 also circulates for reliable visual entities).
REFERENCE_ENTITY_MEANS = {
    "visual_reliable": 9.06,
    "language_english": 3.48,
    "language_german": 3.66,
    "language_french": 3.92,
}


class SceneGraphError(ValueError):
    """Validation failure; ``path`` locates the offending field."""

    def __init__(self, message: str, path: str = "$") -> None:
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class Entity:
    id: int
    label: str
    confidence: float | None = None
    feature: tuple[float, ...] | None = None


@dataclass(frozen=True)
class Relation:
    id: int
    label: str
    subject: int
    object: int
    confidence: float | None = None


@dataclass(frozen=True)
class SceneGraph:
    modality: str
    entities: tuple[Entity, ...] = ()
    relations: tuple[Relation, ...] = ()

    def __post_init__(self) -> None:
        _validate_graph(self)

    @property
    def num_entities(self) -> int:
        return len(self.entities)

    @property
    def num_relations(self) -> int:
        return len(self.relations)

    def relation_pairs(self) -> list[tuple[int, int]]:
        """The q x 2 (subject, object) index pairs, in relation order."""
        return [(r.subject, r.object) for r in self.relations]

    def feature_dim(self) -> int | None:
        for ent in self.entities:
            if ent.feature is not None:
                return len(ent.feature)
        return None


@dataclass(frozen=True)
class EntityStats:
    graph_count: int
    mean_entities: float
    mean_reliable_entities: float
    threshold: float


def _validate_graph(graph: SceneGraph) -> None:
    if graph.modality not in ("visual", "language"):
        raise SceneGraphError(f"unknown modality {graph.modality!r}", "$.modality")
    seen_ids = set()
    feature_dim = None
    for i, ent in enumerate(graph.entities):
        path = f"$.entities[{i}]"
        if ent.id in seen_ids:
            raise SceneGraphError(f"duplicate entity id {ent.id}", path + ".id")
        seen_ids.add(ent.id)
        if ent.confidence is not None and not 0.0 <= ent.confidence <= 1.0:
            raise SceneGraphError(f"confidence {ent.confidence} outside [0, 1]", path + ".confidence")
        if ent.feature is not None:
            if graph.modality == "language":
                raise SceneGraphError("language entities must not carry features", path + ".feature")
            if feature_dim is None:
                feature_dim = len(ent.feature)
            elif len(ent.feature) != feature_dim:
                raise SceneGraphError(
                    f"feature length {len(ent.feature)} != {feature_dim}", path + ".feature"
                )
            if not all(math.isfinite(v) for v in ent.feature):
                raise SceneGraphError("non-finite feature value", path + ".feature")
    if seen_ids and seen_ids != set(range(len(graph.entities))):
        raise SceneGraphError(
            f"entity ids must be dense 0..{len(graph.entities) - 1}", "$.entities"
        )
    seen_rel = set()
    for i, rel in enumerate(graph.relations):
        path = f"$.relations[{i}]"
        if rel.id in seen_rel:
            raise SceneGraphError(f"duplicate relation id {rel.id}", path + ".id")
        seen_rel.add(rel.id)
        for end, value in (("subject", rel.subject), ("object", rel.object)):
            if value not in seen_ids:
                raise SceneGraphError(
                    f"dangling {end}: entity id {value} of {len(graph.entities)}",
                    f"{path}.{end}",
                )
        if rel.confidence is not None and not 0.0 <= rel.confidence <= 1.0:
            raise SceneGraphError(f"confidence {rel.confidence} outside [0, 1]", path + ".confidence")


def _require(obj: dict, key: str, kind, path: str):
    if key not in obj:
        raise SceneGraphError(f"missing field {key!r}", path)
    value = obj[key]
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SceneGraphError(f"field {key!r} must be a number", f"{path}.{key}")
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise SceneGraphError(f"field {key!r} must be an integer", f"{path}.{key}")
        return value
    if not isinstance(value, kind):
        raise SceneGraphError(f"field {key!r} must be {kind.__name__}", f"{path}.{key}")
    return value


def parse_scene_graph(raw: bytes | str) -> SceneGraph:
    """Parse and validate one interchange document.

    Unknown fields are ignored; errors carry a JSON-path-style location.
    """
    if isinstance(raw, bytes):
        raw = raw.decode("utf-8")
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as err:
        raise SceneGraphError(f"malformed JSON: {err}") from err
    if not isinstance(doc, dict):
        raise SceneGraphError("document must be a JSON object")
    version = _require(doc, "version", int, "$")
    if version != INTERCHANGE_VERSION:
        raise SceneGraphError(f"unsupported version {version}", "$.version")
    modality = _require(doc, "modality", str, "$")
    entities = []
    for i, ent in enumerate(_require(doc, "entities", list, "$")):
        path = f"$.entities[{i}]"
        if not isinstance(ent, dict):
            raise SceneGraphError("entity must be an object", path)
        confidence = None
        if ent.get("confidence") is not None:
            confidence = _require(ent, "confidence", float, path)
        feature = None
        if ent.get("feature") is not None:
            values = _require(ent, "feature", list, path)
            try:
                feature = tuple(float(v) for v in values)
            except (TypeError, ValueError) as err:
                raise SceneGraphError("feature entries must be numbers", path + ".feature") from err
        entities.append(
            Entity(
                id=_require(ent, "id", int, path),
                label=_require(ent, "label", str, path),
                confidence=confidence,
                feature=feature,
            )
        )
    relations = []
    for i, rel in enumerate(_require(doc, "relations", list, "$")):
        path = f"$.relations[{i}]"
        if not isinstance(rel, dict):
            raise SceneGraphError("relation must be an object", path)
        confidence = None
        if rel.get("confidence") is not None:
            confidence = _require(rel, "confidence", float, path)
        relations.append(
            Relation(
                id=_require(rel, "id", int, path),
                label=_require(rel, "label", str, path),
                subject=_require(rel, "subject", int, path),
                object=_require(rel, "object", int, path),
                confidence=confidence,
            )
        )
    return SceneGraph(modality=modality, entities=tuple(entities), relations=tuple(relations))


def serialize_scene_graph(graph: SceneGraph) -> str:
    """Inverse of :func:`parse_scene_graph`, field for field."""
    doc = {
        "version": INTERCHANGE_VERSION,
        "modality": graph.modality,
        "entities": [
            {
                "id": e.id,
                "label": e.label,
                **({"confidence": e.confidence} if e.confidence is not None else {}),
                **({"feature": list(e.feature)} if e.feature is not None else {}),
            }
            for e in graph.entities
        ],
        "relations": [
            {
                "id": r.id,
                "label": r.label,
                "subject": r.subject,
                "object": r.object,
                **({"confidence": r.confidence} if r.confidence is not None else {}),
            }
            for r in graph.relations
        ],
    }
    return json.dumps(doc, ensure_ascii=False)


def load_graph_stream(path) -> Iterator[SceneGraph]:
    """Yield graphs from a file holding one document or an NDJSON stream."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    stripped = text.strip()
    if not stripped:
        return
    if "\n" in stripped and not stripped.startswith("{\n"):
        lines = [ln for ln in stripped.splitlines() if ln.strip()]
        if all(ln.lstrip().startswith("{") and ln.rstrip().endswith("}") for ln in lines):
            for ln in lines:
                yield parse_scene_graph(ln)
            return
    yield parse_scene_graph(stripped)


def _reliable_count(graph: SceneGraph, threshold: float) -> int:
    # Missing confidence: reliable in language graphs (parses carry none),
    # unreliable in visual graphs (absence means unfiltered detector output).
    count = 0
    for ent in graph.entities:
        if ent.confidence is None:
            count += graph.modality == "language"
        elif ent.confidence >= threshold:
            count += 1
    return count


def entity_stats(graphs: Iterable[SceneGraph], threshold: float) -> EntityStats:
    """Mean total and mean confidence-filtered entity counts per graph."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold {threshold} outside [0, 1]")
    total = reliable = n = 0
    for graph in graphs:
        total += graph.num_entities
        reliable += _reliable_count(graph, threshold)
        n += 1
    if n == 0:
        raise ValueError("entity_stats requires at least one graph")
    return EntityStats(
        graph_count=n,
        mean_entities=total / n,
        mean_reliable_entities=reliable / n,
        threshold=threshold,
    )


def language_entity_stats(graphs: Iterable[SceneGraph]) -> EntityStats:
    """Mean entity counts for language graphs (no confidence filtering)."""
    total = n = 0
    for graph in graphs:
        total += graph.num_entities
        n += 1
    if n == 0:
        raise ValueError("language_entity_stats requires at least one graph")
    return EntityStats(
        graph_count=n,
        mean_entities=total / n,
        mean_reliable_entities=total / n,
        threshold=0.0,
    )
