"""Scene-graph-guided multimodal machine translation with visual pruning."""

__version__ = "0.1.0"
