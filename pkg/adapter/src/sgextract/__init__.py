"""Extraction tooling that produces scene-graph interchange files.

Visual graphs come from a pluggable detector backend, language graphs from
a pluggable parser backend, and label embeddings are exported in the
``emb v1`` text format.  The only coupling to the translation package is
the interchange file format itself.
"""

__version__ = "0.1.0"
