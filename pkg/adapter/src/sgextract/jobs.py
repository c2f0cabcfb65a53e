"""Extraction jobs: manifests in, content-hash-named interchange files out.

Jobs are idempotent: the output filename is a hash of the input content
and the extraction parameters, and existing files are left untouched.
Per-item failures are recorded and the job continues.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field

from sgextract.backends import HashDetector, LanguageBackend, RuleParser, VisualBackend
from sgextract.interchange import GraphOut, serialize


@dataclass(frozen=True)
class ExtractionJob:
    manifest: list[str]  # image paths, or raw sentences for language jobs
    modality: str  # "visual" | "language"
    out_dir: str
    confidence_floor: float = 0.0

    def __post_init__(self):
        if self.modality not in ("visual", "language"):
            raise ValueError(f"unknown modality {self.modality!r}")
        if not 0.0 <= self.confidence_floor <= 1.0:
            raise ValueError(f"confidence floor {self.confidence_floor} outside [0, 1]")


@dataclass
class JobResult:
    written: list[str] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)  # already present (idempotent hit)
    errors: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"written": self.written, "skipped": self.skipped, "errors": self.errors}


def _atomic_write(path: str, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _output_name(content: bytes, job: ExtractionJob) -> str:
    h = hashlib.sha256()
    h.update(f"{job.modality}:{job.confidence_floor}:".encode())
    h.update(content)
    return f"{job.modality[:4]}-{h.hexdigest()[:16]}.json"


def apply_confidence_floor(graph: GraphOut, floor: float) -> GraphOut:
    """Drop entities (and their relations) below the floor; reindex densely.

    Entities without a confidence are treated as unfiltered detector output
    and kept; the consumer applies its own reliability threshold.
    """
    keep = [
        e for e in graph.entities
        if e.confidence is None or e.confidence >= floor
    ]
    remap = {e.id: i for i, e in enumerate(keep)}
    entities = []
    for e in keep:
        entities.append(type(e)(id=remap[e.id], label=e.label,
                                confidence=e.confidence, feature=e.feature))
    relations = []
    for r in graph.relations:
        if r.subject in remap and r.object in remap:
            if r.confidence is not None and r.confidence < floor:
                continue
            relations.append(type(r)(id=len(relations), label=r.label,
                                     subject=remap[r.subject], object=remap[r.object],
                                     confidence=r.confidence))
    return GraphOut(modality=graph.modality, entities=entities, relations=relations)


def run_job(
    job: ExtractionJob,
    visual_backend: VisualBackend | None = None,
    language_backend: LanguageBackend | None = None,
) -> JobResult:
    os.makedirs(job.out_dir, exist_ok=True)
    result = JobResult()
    visual = visual_backend or HashDetector()
    language = language_backend or RuleParser()
    for item in job.manifest:
        try:
            if job.modality == "visual":
                with open(item, "rb") as fh:
                    content = fh.read()
                graph = visual.detect(content)
            else:
                content = item.encode("utf-8")
                graph = language.parse(item)
            graph = apply_confidence_floor(graph, job.confidence_floor)
            name = _output_name(content, job)
            path = os.path.join(job.out_dir, name)
            if os.path.exists(path):
                result.skipped.append(path)
                continue
            _atomic_write(path, serialize(graph) + "\n")
            result.written.append(path)
        except (OSError, ValueError) as err:
            result.errors.append({"item": item, "error": str(err)})
    manifest_path = os.path.join(job.out_dir, "job_result.json")
    _atomic_write(manifest_path, json.dumps(result.to_dict(), indent=2) + "\n")
    return result
