"""Label-embedding export in the ``emb v1`` text format (dimension 512)."""

from __future__ import annotations

from typing import Iterable

from sgextract.backends import FEATURE_DIM, label_vector
from sgextract.jobs import _atomic_write


def export_label_embeddings(labels: Iterable[str], out_path, dim: int = FEATURE_DIM) -> int:
    """One row per unique label, first-seen order; returns the row count."""
    unique: list[str] = []
    seen = set()
    for label in labels:
        if label not in seen:
            seen.add(label)
            unique.append(label)
    lines = [f"emb v1 {len(unique)} {dim}"]
    for label in unique:
        vec = label_vector(label, dim)
        lines.append(label + " " + " ".join(f"{v:.17g}" for v in vec))
    _atomic_write(out_path, "\n".join(lines) + "\n")
    return len(unique)
