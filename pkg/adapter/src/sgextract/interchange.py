"""Writer for the scene-graph interchange format (version 1).

The schema is the contract with the consuming translation tooling: one
UTF-8 JSON object per file with dense entity ids, optional confidences in
[0, 1], and detector features only on visual entities.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

INTERCHANGE_VERSION = 1


@dataclass
class EntityOut:
    id: int
    label: str
    confidence: float | None = None
    feature: list[float] | None = None


@dataclass
class RelationOut:
    id: int
    label: str
    subject: int
    object: int
    confidence: float | None = None


@dataclass
class GraphOut:
    modality: str
    entities: list[EntityOut] = field(default_factory=list)
    relations: list[RelationOut] = field(default_factory=list)

    def validate(self) -> None:
        if self.modality not in ("visual", "language"):
            raise ValueError(f"bad modality {self.modality!r}")
        ids = [e.id for e in self.entities]
        if ids != list(range(len(ids))):
            raise ValueError("entity ids must be dense and ordered")
        for e in self.entities:
            if e.confidence is not None and not 0.0 <= e.confidence <= 1.0:
                raise ValueError(f"entity {e.id}: confidence {e.confidence} outside [0, 1]")
            if e.feature is not None and self.modality == "language":
                raise ValueError("language entities must not carry features")
        for r in self.relations:
            for end in (r.subject, r.object):
                if not 0 <= end < len(self.entities):
                    raise ValueError(f"relation {r.id}: dangling endpoint {end}")
            if r.confidence is not None and not 0.0 <= r.confidence <= 1.0:
                raise ValueError(f"relation {r.id}: confidence {r.confidence} outside [0, 1]")


def serialize(graph: GraphOut) -> str:
    graph.validate()
    doc = {
        "version": INTERCHANGE_VERSION,
        "modality": graph.modality,
        "entities": [
            {
                "id": e.id,
                "label": e.label,
                **({"confidence": e.confidence} if e.confidence is not None else {}),
                **({"feature": e.feature} if e.feature is not None else {}),
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
