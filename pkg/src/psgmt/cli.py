"""Command-line surface.

Subcommands wire the library together: corpus synthesis, BPE training,
model training, translation, checkpoint averaging, evaluation, graph
statistics, and pruning analysis.  Exit codes: 0 ok, 2 usage, 3 data
error, 4 numeric failure.  Every run echoes its fully resolved
configuration next to its outputs, and all file writes are atomic.
"""

from __future__ import annotations

import argparse
import dataclasses
import glob
import json
import os
import re
import sys

import numpy as np

from psgmt import decoder_eval, sg_data, synth, tokenizer, trainer
from psgmt.backbone import BackboneConfig
from psgmt.data import load_parallel_split, read_lines
from psgmt.decoder_eval import BeamConfig, MeteorConfig
from psgmt.model import ModelConfig, PsgModel
from psgmt.numeric_core import NumericError
from psgmt.pruner import PruneConfig
from psgmt.sg_data import SceneGraphError
from psgmt.trainer import TrainConfig, atomic_write_text

__all__ = ["main"]

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


# ---------------------------------------------------------------------------
# configuration plumbing


def _coerce(value, target_type):
    if target_type is bool and isinstance(value, bool):
        return value
    if target_type is bool and isinstance(value, str):
        if value.lower() in ("true", "1", "yes"):
            return True
        if value.lower() in ("false", "0", "no"):
            return False
        raise UsageError(f"cannot parse {value!r} as a boolean")
    if target_type in (int, float) and isinstance(value, (int, float, str)):
        try:
            return target_type(value)
        except ValueError as err:
            raise UsageError(f"cannot parse {value!r} as {target_type.__name__}") from err
    return value


def load_flat_config(path) -> dict:
    """Flat JSON object with dotted keys, e.g. {"train.peak_lr": 0.001}."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as err:
        raise DataError(f"{path}: malformed JSON: {err}") from err
    if not isinstance(doc, dict):
        raise DataError(f"{path}: config must be a JSON object")
    return dict(doc)


def apply_overrides(config: dict, sets: list[str]) -> dict:
    out = dict(config)
    for item in sets or []:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


def _build_dataclass(cls, prefix: str, config: dict, consumed: set, **fixed):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = dict(fixed)
    for key, value in config.items():
        if not key.startswith(prefix + "."):
            continue
        name = key[len(prefix) + 1 :]
        if name not in fields:
            raise UsageError(f"unknown config key {key!r}")
        if name in kwargs:
            raise UsageError(f"config key {key!r} conflicts with a derived value")
        f = fields[name]
        target = f.type if isinstance(f.type, type) else None
        if target in (int, float, bool):
            value = _coerce(value, target)
        elif isinstance(f.default, bool):
            value = _coerce(value, bool)
        elif isinstance(f.default, int) and not isinstance(f.default, bool):
            value = _coerce(value, int)
        elif isinstance(f.default, float):
            value = _coerce(value, float)
        kwargs[name] = value
        consumed.add(key)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as err:
        raise UsageError(f"invalid {prefix} configuration: {err}") from err


def resolved_seed(config: dict, consumed: set) -> int:
    """train.seed from config, overridden by PSG_SEED for CI runs."""
    env = os.environ.get("PSG_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as err:
            raise UsageError(f"PSG_SEED must be an integer, got {env!r}") from err
    if "train.seed" in config:
        consumed.add("train.seed")
        return _coerce(config["train.seed"], int)
    return 0


def echo_config(out_path, payload: dict) -> None:
    atomic_write_text(out_path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _sidecar(path) -> str:
    return os.fspath(path) + ".config.json"


# ---------------------------------------------------------------------------
# model reconstruction


def model_from_checkpoint(ckpt: trainer.Checkpoint) -> PsgModel:
    snap = ckpt.config.get("model")
    if not isinstance(snap, dict):
        raise DataError("checkpoint carries no model configuration")
    backbone = BackboneConfig(**snap["backbone"])
    prune = PruneConfig(**snap["prune"])
    config = ModelConfig(
        backbone=backbone,
        prune=prune,
        mode=snap["mode"],
        lang_embed_dim=snap["lang_embed_dim"],
        visual_feature_dim=snap["visual_feature_dim"],
        embed_seed=snap["embed_seed"],
    )
    model = PsgModel(config, np.random.default_rng(0))
    model.load_param_data(ckpt.params)
    return model


def _infer_visual_feature_dim(data_dir) -> int | None:
    graph_dir = os.path.join(data_dir, "graphs")
    if not os.path.isdir(graph_dir):
        return None
    for path in sorted(glob.glob(os.path.join(graph_dir, "*.vis.json"))):
        with open(path, encoding="utf-8") as fh:
            graph = sg_data.parse_scene_graph(fh.read())
        dim = graph.feature_dim()
        if dim is not None:
            return dim
    return None


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    raw = load_flat_config(args.spec)
    field_names = {f.name for f in dataclasses.fields(synth.SynthSpec)}
    unknown = set(raw) - field_names
    if unknown:
        raise UsageError(f"unknown spec key {sorted(unknown)[0]!r}")
    if "sentence_len" in raw:
        raw["sentence_len"] = tuple(raw["sentence_len"])
    if os.environ.get("PSG_SEED") is not None:
        raw["seed"] = int(os.environ["PSG_SEED"])
    try:
        spec = synth.SynthSpec(**raw)
        data = synth.generate(spec)
    except ValueError as err:
        raise DataError(str(err)) from err
    os.makedirs(args.out, exist_ok=True)
    synth.write_dataset(data, args.out)
    echo_config(
        os.path.join(args.out, "config.json"),
        {"command": "synth", "spec": {**dataclasses.asdict(spec), "sentence_len": list(spec.sentence_len)}},
    )
    print(json.dumps({"out": args.out, "splits": {k: len(v) for k, v in data.splits.items()}}))
    return EXIT_OK


def cmd_bpe_train(args) -> int:
    corpus: list[str] = []
    for path in args.corpus:
        if not os.path.exists(path):
            raise DataError(f"corpus file not found: {path}")
        corpus.extend(read_lines(path))
    try:
        model = tokenizer.bpe_train(corpus, args.merges)
    except ValueError as err:
        raise DataError(str(err)) from err
    lines = [f"bpe v1 {len(model.merges)}"]
    lines.extend(f"{l} {r}" for l, r in model.merges)
    lines.append(f"chars {len(model.alphabet)}")
    lines.extend(model.alphabet)
    atomic_write_text(args.out, "\n".join(lines) + "\n")
    echo_config(_sidecar(args.out), {"command": "bpe-train", "corpus": args.corpus, "merges": args.merges})
    print(json.dumps({"out": args.out, "merges": len(model.merges), "vocab": model.vocab_size}))
    return EXIT_OK


def cmd_train(args) -> int:
    config = apply_overrides(load_flat_config(args.config) if args.config else {}, args.set)
    consumed: set[str] = set()
    seed = resolved_seed(config, consumed)

    for split in ("train", "valid"):
        for ext in ("src", "tgt"):
            path = os.path.join(args.data, f"{split}.{ext}")
            if not os.path.exists(path):
                raise DataError(f"missing data file: {path}")

    merges = _coerce(config.get("bpe.merges", 64), int)
    consumed.add("bpe.merges")
    train_src = read_lines(os.path.join(args.data, "train.src"))
    train_tgt = read_lines(os.path.join(args.data, "train.tgt"))
    try:
        bpe = tokenizer.bpe_train(train_src + train_tgt, merges)
    except ValueError as err:
        raise DataError(str(err)) from err

    backbone = _build_dataclass(
        BackboneConfig, "backbone", config, consumed, vocab_size=bpe.vocab_size
    )
    prune = _build_dataclass(PruneConfig, "prune", config, consumed)
    mode = config.get("model.mode", "psg")
    consumed.add("model.mode")
    vis_dim = config.get("model.visual_feature_dim")
    if vis_dim is None and mode == "psg":
        vis_dim = _infer_visual_feature_dim(args.data)
    consumed.add("model.visual_feature_dim")
    try:
        model_cfg = ModelConfig(
            backbone=backbone,
            prune=prune,
            mode=mode,
            lang_embed_dim=_coerce(config.get("model.lang_embed_dim", 32), int),
            visual_feature_dim=vis_dim,
            embed_seed=_coerce(config.get("model.embed_seed", 0), int),
        )
    except ValueError as err:
        raise UsageError(str(err)) from err
    consumed.update({"model.lang_embed_dim", "model.embed_seed"})
    train_cfg = _build_dataclass(TrainConfig, "train", config, consumed, seed=seed)

    unknown = set(config) - consumed
    if unknown:
        raise UsageError(f"unknown config key {sorted(unknown)[0]!r}")

    model = PsgModel(model_cfg, np.random.default_rng(seed))
    try:
        train_data = load_parallel_split(model, bpe, args.data, "train")
        valid_data = load_parallel_split(model, bpe, args.data, "valid")
    except (ValueError, SceneGraphError, OSError) as err:
        raise DataError(str(err)) from err

    os.makedirs(args.out, exist_ok=True)
    tokenizer.save_model(bpe, os.path.join(args.out, "bpe.model"))
    echo_config(
        os.path.join(args.out, "config.json"),
        {"command": "train", "data": args.data, "seed": seed,
         "config": trainer._config_snapshot(train_cfg, model), "bpe_merges": merges},
    )
    summary = trainer.train(train_cfg, model, train_data, valid_data, args.out)
    atomic_write_text(os.path.join(args.out, "summary.json"), json.dumps(summary, indent=2) + "\n")
    print(json.dumps({"out": args.out, "steps": summary["steps"], "epochs": summary["epochs"],
                      "best_val_loss": summary["best_val_loss"]}))
    return EXIT_OK


def _load_translate_examples(model, bpe, src_path, graphs_dir, prefix):
    sources = read_lines(src_path)
    examples = []
    for i, line in enumerate(sources):
        lang = vis = None
        if graphs_dir is not None and model.config.mode == "psg":
            for kind in ("lang", "vis"):
                path = os.path.join(graphs_dir, f"{prefix}-{i}.{kind}.json")
                if os.path.exists(path):
                    with open(path, encoding="utf-8") as fh:
                        graph = sg_data.parse_scene_graph(fh.read())
                    vect = model.vectorize_graph(graph)
                    if kind == "lang":
                        lang = vect
                    else:
                        vis = vect
        from psgmt.model import Example

        examples.append(
            Example(
                src_ids=np.asarray(bpe.encode(line), dtype=np.intp),
                tgt_ids=np.asarray([], dtype=np.intp),
                lang_graph=lang,
                vis_graph=vis,
                example_id=f"{prefix}-{i}",
            )
        )
    return sources, examples


def cmd_translate(args) -> int:
    try:
        ckpt = trainer.load_checkpoint(args.ckpt)
    except (OSError, ValueError) as err:
        raise DataError(str(err)) from err
    model = model_from_checkpoint(ckpt)
    try:
        bpe = tokenizer.load_model(args.bpe)
    except (OSError, ValueError) as err:
        raise DataError(str(err)) from err
    if bpe.vocab_size != model.config.backbone.vocab_size:
        raise DataError(
            f"bpe vocab {bpe.vocab_size} does not match model vocab {model.config.backbone.vocab_size}"
        )
    prefix = args.prefix or os.path.splitext(os.path.basename(args.src))[0]
    try:
        _, examples = _load_translate_examples(model, bpe, args.src, args.graphs, prefix)
    except (OSError, SceneGraphError, ValueError) as err:
        raise DataError(str(err)) from err
    beam = BeamConfig(beam_size=args.beam, max_length=args.max_length)
    joint = model.config.mode == "psg" and args.graphs is not None
    lines = []
    truncated = 0
    for ex in examples:
        hyp = decoder_eval.beam_search(model, ex, beam, joint=joint and ex.vis_graph is not None)
        truncated += hyp.truncated
        lines.append(bpe.decode(hyp.ids))
    atomic_write_text(args.out, "\n".join(lines) + "\n")
    echo_config(
        _sidecar(args.out),
        {"command": "translate", "ckpt": args.ckpt, "src": args.src, "graphs": args.graphs,
         "beam": args.beam, "max_length": args.max_length, "joint": joint},
    )
    report = {"out": args.out, "sentences": len(lines), "truncated": truncated}
    if truncated:
        report["warning"] = "some hypotheses hit the length limit"
    print(json.dumps(report))
    return EXIT_OK


def cmd_avg_ckpt(args) -> int:
    pattern = re.compile(r"checkpoint(\d+)\.bin$")
    found = []
    for name in os.listdir(args.dir):
        m = pattern.match(name)
        if m:
            found.append((int(m.group(1)), os.path.join(args.dir, name)))
    if not found:
        raise DataError(f"no checkpoints in {args.dir}")
    found.sort()
    chosen = [path for _, path in found[-args.last :]]
    try:
        avg = trainer.average_checkpoints(chosen)
    except (OSError, ValueError) as err:
        raise DataError(str(err)) from err
    trainer.save_checkpoint(args.out, avg.step, avg.config, avg.params)
    echo_config(_sidecar(args.out), {"command": "avg-ckpt", "dir": args.dir, "last": args.last,
                                     "averaged": chosen})
    print(json.dumps({"out": args.out, "averaged": len(chosen)}))
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        hyps = read_lines(args.hyp)
        refs = read_lines(args.ref)
    except OSError as err:
        raise DataError(str(err)) from err
    if len(hyps) != len(refs):
        raise DataError(f"hypothesis/reference line counts differ: {len(hyps)} vs {len(refs)}")
    if not hyps:
        raise DataError("empty evaluation corpus")
    meteor_cfg = MeteorConfig()
    report = {
        "sentences": len(hyps),
        "bleu": decoder_eval.corpus_bleu(hyps, refs),
        "meteor": float(np.mean([decoder_eval.meteor_lite(h, r, meteor_cfg) for h, r in zip(hyps, refs)])),
    }
    if args.items:
        try:
            with open(args.items, encoding="utf-8") as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as err:
            raise DataError(f"{args.items}: {err}") from err
        items = doc["items"] if isinstance(doc, dict) else doc
        if args.split:
            items = [i for i in items if i.get("split") == args.split]
        try:
            report["ambiguous_accuracy"] = synth.ambiguous_token_accuracy(hyps, items)
        except ValueError as err:
            raise DataError(str(err)) from err
    text = json.dumps(report, indent=2)
    if args.out:
        atomic_write_text(args.out, text + "\n")
        echo_config(_sidecar(args.out), {"command": "eval", "hyp": args.hyp, "ref": args.ref,
                                         "items": args.items, "split": args.split})
    print(text)
    return EXIT_OK


def cmd_stats(args) -> int:
    paths = sorted(glob.glob(os.path.join(args.graphs, "**", "*.json"), recursive=True))
    paths = [p for p in paths if not p.endswith("answer_key.json") and not p.endswith("config.json")]
    if not paths:
        raise DataError(f"no graph files under {args.graphs}")
    by_modality: dict[str, list] = {"visual": [], "language": []}
    for path in paths:
        try:
            for graph in sg_data.load_graph_stream(path):
                by_modality[graph.modality].append(graph)
        except (SceneGraphError, OSError) as err:
            raise DataError(f"{path}: {err}") from err
    report = {"threshold": args.threshold, "reference_means": sg_data.REFERENCE_ENTITY_MEANS}
    for modality, graphs in by_modality.items():
        if not graphs:
            continue
        stats = (
            sg_data.entity_stats(graphs, args.threshold)
            if modality == "visual"
            else sg_data.language_entity_stats(graphs)
        )
        report[modality] = {
            "graphs": stats.graph_count,
            "mean_entities": stats.mean_entities,
            "mean_reliable_entities": stats.mean_reliable_entities,
        }
    text = json.dumps(report, indent=2)
    if args.out:
        atomic_write_text(args.out, text + "\n")
        echo_config(_sidecar(args.out), {"command": "stats", "graphs": args.graphs,
                                         "threshold": args.threshold})
    print(text)
    return EXIT_OK


def cmd_prune_analyze(args) -> int:
    try:
        ckpt = trainer.load_checkpoint(args.ckpt)
    except (OSError, ValueError) as err:
        raise DataError(str(err)) from err
    model = model_from_checkpoint(ckpt)
    if model.config.mode != "psg":
        raise DataError("pruning analysis requires a psg-mode checkpoint")
    lang_path = os.path.join(args.graphs, f"{args.example}.lang.json")
    vis_path = os.path.join(args.graphs, f"{args.example}.vis.json")
    graphs = {}
    for kind, path in (("lang", lang_path), ("vis", vis_path)):
        if not os.path.exists(path):
            raise DataError(f"missing graph file: {path}")
        with open(path, encoding="utf-8") as fh:
            graphs[kind] = sg_data.parse_scene_graph(fh.read())
    from psgmt.model import Example

    ex = Example(
        src_ids=np.asarray([tokenizer.UNK], dtype=np.intp),
        tgt_ids=np.asarray([], dtype=np.intp),
        lang_graph=model.vectorize_graph(graphs["lang"]),
        vis_graph=model.vectorize_graph(graphs["vis"]),
        example_id=args.example,
    )
    from psgmt import numeric_core as nc

    with nc.no_grad():
        _, _, loss, trace = model.prune_example(ex)
    if trace is None:
        raise DataError("example has no prunable visual graph")
    os.makedirs(args.out, exist_ok=True)
    doc = trace.to_dict()
    doc["prune_loss"] = float(loss.data)
    doc["entity_labels"] = [e.label for e in graphs["vis"].entities]
    atomic_write_text(os.path.join(args.out, "trace.json"), json.dumps(doc, indent=2) + "\n")

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    for s, step in enumerate(trace.steps, start=1):
        fig, ax = plt.subplots(figsize=(4, 3))
        im = ax.imshow(step.attention, aspect="auto", cmap="viridis")
        ax.set_xlabel("language node")
        ax.set_ylabel("visual node (surviving)")
        ax.set_yticks(range(len(step.kept_original)))
        ax.set_title(f"step {s}: kept {len(step.kept)} nodes")
        fig.colorbar(im, ax=ax)
        fig.tight_layout()
        fig.savefig(os.path.join(args.out, f"attention_step{s}.png"), dpi=110)
        plt.close(fig)
    echo_config(os.path.join(args.out, "config.json"),
                {"command": "prune-analyze", "ckpt": args.ckpt, "example": args.example,
                 "graphs": args.graphs})
    print(json.dumps({"out": args.out, "steps": len(trace.steps),
                      "final_kept": trace.final_kept, "prune_loss": doc["prune_loss"]}))
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="psgmt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic ambiguity corpus")
    p.add_argument("--spec", required=True, help="JSON file with generator fields")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("bpe-train", help="learn a byte-pair-encoding model")
    p.add_argument("--corpus", nargs="+", required=True)
    p.add_argument("--merges", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bpe_train)

    p = sub.add_parser("train", help="train a translation model")
    p.add_argument("--config", help="flat JSON config with dotted keys")
    p.add_argument("--data", required=True, help="directory with {split}.src/.tgt and graphs/")
    p.add_argument("--out", required=True)
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key (repeatable)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("translate", help="beam-search decode a source file")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--bpe", required=True)
    p.add_argument("--src", required=True)
    p.add_argument("--graphs", help="graph directory ({prefix}-{i}.{lang,vis}.json)")
    p.add_argument("--prefix", help="graph filename prefix; default: src basename")
    p.add_argument("--beam", type=int, default=5)
    p.add_argument("--max-length", type=int, default=64)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("avg-ckpt", help="average the last K checkpoints")
    p.add_argument("--last", type=int, required=True)
    p.add_argument("--dir", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_avg_ckpt)

    p = sub.add_parser("eval", help="score hypotheses against references")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--items", help="answer-key JSON for ambiguous-token accuracy")
    p.add_argument("--split", help="filter answer-key items to one split")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("stats", help="entity statistics over graph files")
    p.add_argument("--graphs", required=True)
    p.add_argument("--threshold", type=float, default=0.3)
    p.add_argument("--out")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("prune-analyze", help="trace and plot pruning for one example")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--graphs", required=True, help="directory with {example}.{lang,vis}.json")
    p.add_argument("--example", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prune_analyze)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as err:
        print(json.dumps({"error": str(err), "kind": "usage"}), file=sys.stderr)
        return EXIT_USAGE
    except (DataError, SceneGraphError, FileNotFoundError) as err:
        print(json.dumps({"error": str(err), "kind": "data"}), file=sys.stderr)
        return EXIT_DATA
    except NumericError as err:
        print(json.dumps({"error": str(err), "kind": "numeric"}), file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
