"""Corpus loading: text + graph files to model-ready examples."""

from __future__ import annotations

import os

import numpy as np

from psgmt.model import Example, PsgModel
from psgmt.sg_data import SceneGraph, parse_scene_graph
from psgmt.synth import SynthData
from psgmt.tokenizer import BpeModel, bpe_train

__all__ = [
    "build_tokenizer",
    "examples_from_synth",
    "load_parallel_split",
    "read_lines",
]


def read_lines(path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh]


def build_tokenizer(sentence_groups: list[list[str]], merges: int) -> BpeModel:
    """Shared source/target BPE model over all provided corpora."""
    corpus = [line for group in sentence_groups for line in group]
    return bpe_train(corpus, merges)


def _to_example(model: PsgModel, bpe: BpeModel, source: str, target: str,
                lang_graph: SceneGraph | None, vis_graph: SceneGraph | None,
                example_id: str) -> Example:
    return Example(
        src_ids=np.asarray(bpe.encode(source), dtype=np.intp),
        tgt_ids=np.asarray(bpe.encode(target), dtype=np.intp),
        lang_graph=model.vectorize_graph(lang_graph) if lang_graph is not None else None,
        vis_graph=model.vectorize_graph(vis_graph) if vis_graph is not None else None,
        example_id=example_id,
    )


def examples_from_synth(model: PsgModel, bpe: BpeModel, data: SynthData, split: str) -> list[Example]:
    use_graphs = model.config.mode == "psg"
    return [
        _to_example(
            model,
            bpe,
            ex.source,
            ex.target,
            ex.lang_graph if use_graphs else None,
            ex.vis_graph if use_graphs else None,
            ex.example_id,
        )
        for ex in data.splits[split]
    ]


def load_parallel_split(model: PsgModel, bpe: BpeModel, data_dir, split: str) -> list[Example]:
    """Read {split}.src/.tgt plus graphs/{split}-{i}.{lang,vis}.json files."""
    sources = read_lines(os.path.join(data_dir, f"{split}.src"))
    targets = read_lines(os.path.join(data_dir, f"{split}.tgt"))
    if len(sources) != len(targets):
        raise ValueError(f"{split}: source/target line count mismatch")
    graph_dir = os.path.join(data_dir, "graphs")
    use_graphs = model.config.mode == "psg"
    examples = []
    for i, (src, tgt) in enumerate(zip(sources, targets)):
        example_id = f"{split}-{i}"
        lang = vis = None
        if use_graphs:
            for kind in ("lang", "vis"):
                path = os.path.join(graph_dir, f"{example_id}.{kind}.json")
                if os.path.exists(path):
                    with open(path, "rb") as fh:
                        graph = parse_scene_graph(fh.read())
                    if kind == "lang":
                        lang = graph
                    else:
                        vis = graph
        examples.append(_to_example(model, bpe, src, tgt, lang, vis, example_id))
    return examples
