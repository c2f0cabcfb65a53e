"""Acceptance suite: one test (and one printed PASS/FAIL line) per claim.

Covers the gradient battery, the pruning algebra, the constructed-distractor
selectivity check, the 64-sentence overfit run, the multimodal disambiguation
contrast with its random-pruning ablation, the metric oracles, the systems
equivalences (beam/greedy, incremental/full, checkpoint averaging,
determinism, padding invariance), and the corpus statistics tool.

The verdict lines bypass pytest capture so a plain ``pytest -v`` run shows
them inline.  Slow experiments (training runs) share module-scoped fixtures.
"""

from __future__ import annotations

import glob
import json
import math
import time

import numpy as np
import pytest

from psgmt import cli
from psgmt import decoder_eval as de
from psgmt import graph_encoder as ge
from psgmt import numeric_core as nc
from psgmt import trainer as tr
from psgmt.backbone import BackboneConfig, decode_step
from psgmt.data import build_tokenizer, examples_from_synth
from psgmt.decoder_eval import BeamConfig, corpus_bleu
from psgmt.model import Example, ModelConfig, PsgModel
from psgmt.numeric_core import Tensor
from psgmt.pruner import PruneConfig, cross_attention, mean_scores, multi_step_prune, prune_step
from psgmt.sg_data import parse_scene_graph
from psgmt.synth import SynthSpec, ambiguous_token_accuracy, generate
from psgmt.trainer import TrainConfig


def verdict(capfd, name: str, ok: bool, detail: str = "") -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {name}" + (f": {detail}" if detail else "")
    with capfd.disabled():
        print(f"\n{line}", flush=True)
    assert ok, line


# ---------------------------------------------------------------------------
# shared corpora and training runs


def synth_sentences(data):
    out = []
    for split in data.splits.values():
        out.extend(e.source for e in split)
        out.extend(e.target for e in split)
    return out


@pytest.fixture(scope="module")
def tiny_psg_setup():
    """Small untrained psg-mode model plus vectorized examples."""
    spec = SynthSpec(seed=3, vocab_size=6, splits={"train": 8})
    data = generate(spec)
    bpe = build_tokenizer([synth_sentences(data)], 12)
    cfg = ModelConfig(
        backbone=BackboneConfig(vocab_size=bpe.vocab_size, layers=2, heads=2, dim=16,
                                ffn_dim=32, dropout=0.0, max_positions=64),
        prune=PruneConfig(steps=2, threshold=0.2),
        mode="psg", lang_embed_dim=8, visual_feature_dim=spec.feature_dim,
    )
    model = PsgModel(cfg, np.random.default_rng(3))
    return model, examples_from_synth(model, bpe, data, "train"), bpe


def disamb_run(seed: int, mode: str, strategy: str, out_dir) -> float:
    """One ambiguity-resolution experiment; returns test-set cue accuracy.

    The corpus keeps text diversity low (3-word vocabulary, 2-3 word
    sentences, 256 training pairs), so identical source sentences occur with
    both senses and text alone cannot separate them; only the visual cue can.
    """
    spec = SynthSpec(seed=seed, vocab_size=3, sentence_len=(2, 3), ambiguous_types=2,
                     senses=2, distractors=2,
                     splits={"train": 256, "valid": 32, "test": 200})
    data = generate(spec)
    bpe = build_tokenizer([synth_sentences(data)], 24)
    cfg = ModelConfig(
        backbone=BackboneConfig(vocab_size=bpe.vocab_size, layers=2, heads=4, dim=64,
                                ffn_dim=128, dropout=0.0, max_positions=64),
        prune=PruneConfig(steps=5, threshold=0.2, strategy=strategy),
        mode=mode, lang_embed_dim=16, visual_feature_dim=spec.feature_dim,
    )
    model = PsgModel(cfg, np.random.default_rng(seed))
    train = examples_from_synth(model, bpe, data, "train")
    valid = examples_from_synth(model, bpe, data, "valid")
    config = TrainConfig(peak_lr=0.004, warmup_steps=150, label_smoothing=0.0,
                         batch_tokens=384, max_updates=300, patience=1000, seed=seed)
    tr.train(config, model, train, valid, out_dir)
    test = examples_from_synth(model, bpe, data, "test")
    items = [i for i in data.answer_key if i["split"] == "test"]
    joint = mode == "psg"
    hyps = [
        bpe.decode(de.greedy_decode(model, ex, BeamConfig(beam_size=1, max_length=24),
                                    joint=joint).ids)
        for ex in test
    ]
    return ambiguous_token_accuracy(hyps, items)


@pytest.fixture(scope="module")
def disamb_results(tmp_path_factory):
    """Text-only vs psg-guided vs psg-random accuracy on three seeds."""
    root = tmp_path_factory.mktemp("disamb")
    acc: dict[tuple[str, str, int], float] = {}
    t0 = time.time()
    for seed in (0, 1, 2):
        acc[("text", "guided", seed)] = disamb_run(seed, "text", "guided", root / f"t{seed}")
        acc[("psg", "guided", seed)] = disamb_run(seed, "psg", "guided", root / f"p{seed}")
    main_elapsed = time.time() - t0
    for seed in (0, 1, 2):
        acc[("psg", "random", seed)] = disamb_run(seed, "psg", "random", root / f"r{seed}")
    return acc, main_elapsed


# ---------------------------------------------------------------------------
# gradient battery


class TestGradients:
    def test_gradient_battery(self, capfd, tiny_psg_setup):
        """Analytic vs central-difference gradients across every layer of the
        stack, each below 1e-4 relative error, all within two minutes."""
        t0 = time.time()
        rng = np.random.default_rng(0)
        cases = []

        # elementwise / reduction chains (inputs kept away from relu kinks)
        x0 = rng.standard_normal((4, 5)) + np.sign(rng.standard_normal((4, 5))) * 0.3
        cases.append(("relu-mul-sum", lambda t: nc.tsum(nc.mul(nc.relu(t), t)), x0))
        ones = Tensor(np.ones(4))
        cases.append(("exp-log-mean", lambda t: nc.tmean(nc.log(nc.add(nc.exp(t), ones))),
                      rng.standard_normal((3, 4))))

        # matmul + softmax with a non-uniform readout (a plain row sum of a
        # softmax is constant, which makes relative error meaningless)
        w = Tensor(rng.standard_normal((3, 3)))
        probe = Tensor(np.arange(9, dtype=np.float64).reshape(3, 3))
        cases.append(
            ("matmul-softmax",
             lambda t: nc.tsum(nc.mul(nc.softmax(nc.matmul(t, w), axis=-1), probe)),
             rng.standard_normal((3, 3))))
        cases.append(
            ("log-softmax-pick",
             lambda t: nc.scale(nc.tsum(nc.gather_last(nc.log_softmax(t, axis=-1),
                                                       np.array([[1, 0], [2, 1]]))), -1.0),
             rng.standard_normal((2, 2, 3))))

        gain, bias = Tensor(rng.standard_normal(6)), Tensor(rng.standard_normal(6))
        probe6 = Tensor(rng.standard_normal((4, 6)))
        cases.append(("layer-norm",
                      lambda t: nc.tsum(nc.mul(nc.layer_norm(t, gain, bias), probe6)),
                      rng.standard_normal((4, 6))))

        # structural ops
        probe7 = Tensor(rng.standard_normal((7, 4)))
        cases.append(
            ("pad-gather-concat",
             lambda t: nc.tsum(nc.mul(
                 nc.concat([nc.pad_rows(t, 5), nc.gather_rows(t, [2, 0])], axis=0),
                 probe7)),
             rng.standard_normal((3, 4))))

        # graph encoder
        gcn = ge.init_gcn_params(3, 3, 4, rng)
        vsg = ge.VectorizedSceneGraph(
            "language", rng.standard_normal((4, 3)), rng.standard_normal((2, 3)),
            np.array([[0, 1], [2, 3]], dtype=np.intp))

        def gcn_loss(t):
            gcn.w1 = t
            out = ge.gcn_forward(vsg, gcn)
            return nc.tsum(nc.mul(out, out))

        cases.append(("gcn-w1", gcn_loss, gcn.w1.data.copy()))

        # pruning loss (hard selection is locally constant; the random draw
        # keeps every score away from the cut boundary)
        f_l = Tensor(rng.standard_normal((3, 4)))

        def prune_path(t):
            _, loss, _ = multi_step_prune(t, f_l, PruneConfig(steps=3, threshold=0.5))
            return loss

        cases.append(("prune-loss", prune_path, rng.standard_normal((5, 4)) * 1.5))

        # full model: joint + text losses through GCN, pruner, and backbone
        model, examples, _ = tiny_psg_setup
        batch = examples[:2]

        def model_loss_gcn(t):
            model.gcn_v.w2 = t
            loss, _ = tr.batch_loss(model, batch, 0.1, train=False, rng=None)
            return loss

        def model_loss_attn(t):
            model.backbone.params["enc0.self.wq"] = t
            loss, _ = tr.batch_loss(model, batch, 0.0, train=False, rng=None)
            return loss

        cases.append(("model-gcn-w2", model_loss_gcn, model.gcn_v.w2.data.copy()))
        cases.append(("model-enc-wq", model_loss_attn,
                      model.backbone.params["enc0.self.wq"].data.copy()))

        worst_name, worst = "", 0.0
        for name, f, x in cases:
            err = nc.grad_check(f, np.asarray(x, dtype=np.float64))
            if err > worst:
                worst_name, worst = name, err
            assert err < 1e-4, f"{name}: rel err {err:.3e}"
        elapsed = time.time() - t0
        verdict(capfd, "gradient battery (< 1e-4 rel err, < 2 min)",
                worst < 1e-4 and elapsed < 120,
                f"{len(cases)} cases, worst {worst:.2e} ({worst_name}), {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# pruning algebra


class TestPruningAlgebra:
    def test_invariants_on_1000_instances(self, capfd):
        rng = np.random.default_rng(7)
        tol = 1e-9
        for _ in range(1000):
            p_v = int(rng.integers(1, 9))
            p_l = int(rng.integers(1, 6))
            d = int(rng.integers(2, 7))
            scale = rng.uniform(0.3, 3.0)
            f_v = Tensor(rng.standard_normal((p_v, d)) * scale)
            f_l = Tensor(rng.standard_normal((p_l, d)) * scale)

            # attention columns are stochastic and mean scores sum to one
            alpha = cross_attention(f_v, f_l)
            assert np.abs(alpha.data.sum(axis=0) - 1.0).max() <= tol
            scores = mean_scores(alpha).data
            assert abs(scores.sum() - 1.0) <= tol

            # threshold monotonicity: a higher tau keeps a subset
            lo, hi = sorted(rng.uniform(0.0, 2.0, size=2))
            kept_lo, _ = prune_step(f_v, scores, float(lo))
            kept_hi, _ = prune_step(f_v, scores, float(hi))
            assert set(kept_hi) <= set(kept_lo)

            # step nestedness: survivors shrink monotonically
            _, _, trace = multi_step_prune(f_v, f_l, PruneConfig(steps=3, threshold=float(rng.uniform(0.0, 1.5))))
            survivors = [set(range(p_v))] + [set(s.kept_original) for s in trace.steps]
            for earlier, later in zip(survivors, survivors[1:]):
                assert later <= earlier

            # zero steps is the exact identity with exactly zero loss
            out, loss, trace0 = multi_step_prune(f_v, f_l, PruneConfig(steps=0))
            assert out is f_v and float(loss.data) == 0.0
            assert trace0.final_kept == list(range(p_v))
        verdict(capfd, "pruning algebra on 1000 random instances (tol 1e-9)", True,
                "column-stochastic, score sum 1, tau-monotone, nested, steps=0 identity")

    def test_constructed_distractors(self, capfd):
        """Visual nodes aligned with language directions survive five pruning
        steps at tau=0.2; orthogonal distractors are always removed."""
        rng = np.random.default_rng(11)
        config = PruneConfig(steps=5, threshold=0.2)
        c = math.sqrt(20.0)
        for _ in range(200):
            d = int(rng.integers(6, 12))
            n_aligned = int(rng.integers(1, 4))
            n_distract = int(rng.integers(1, d - n_aligned + 1))
            basis, _ = np.linalg.qr(rng.standard_normal((d, d)))
            lang = c * basis[:, :n_aligned].T
            vis = np.concatenate([c * basis[:, :n_aligned].T,
                                  c * basis[:, n_aligned:n_aligned + n_distract].T])
            perm = rng.permutation(len(vis))
            aligned_at = sorted(int(np.where(perm == i)[0][0]) for i in range(n_aligned))
            _, _, trace = multi_step_prune(Tensor(vis[perm]), Tensor(lang), config)
            assert sorted(trace.steps[0].kept_original) == aligned_at  # distractors out at step 1
            for step in trace.steps:  # aligned nodes survive every later step
                assert sorted(step.kept_original) == aligned_at
            assert sorted(trace.final_kept) == aligned_at
        verdict(capfd, "constructed distractors (tau=0.2, 5 steps)", True,
                "200 instances: orthogonal nodes pruned at step 1, aligned nodes kept throughout")


# ---------------------------------------------------------------------------
# training experiments


class TestExperiments:
    def test_overfit_64_sentences(self, capfd, tmp_path):
        """4-layer/4-head/128-dim model memorizes 64 synthetic pairs: train
        BLEU >= 99 and loss < 0.1 within 2000 updates and ten minutes."""
        t0 = time.time()
        spec = SynthSpec(seed=0, vocab_size=10, ambiguous_types=0, senses=1,
                         splits={"train": 64})
        data = generate(spec)
        bpe = build_tokenizer([synth_sentences(data)], 24)
        cfg = ModelConfig(
            backbone=BackboneConfig(vocab_size=bpe.vocab_size, layers=4, heads=4, dim=128,
                                    ffn_dim=256, dropout=0.0, max_positions=64),
            mode="text",
        )
        model = PsgModel(cfg, np.random.default_rng(0))
        examples = examples_from_synth(model, bpe, data, "train")
        config = TrainConfig(peak_lr=0.005, warmup_steps=400, label_smoothing=0.0,
                             batch_tokens=512, max_updates=2000, patience=1000,
                             seed=0, target_train_loss=0.05)
        summary = tr.train(config, model, examples, [], tmp_path / "overfit")
        loss = summary["history"][-1]["train_loss"]
        hyps = [
            bpe.decode(de.greedy_decode(model, ex, BeamConfig(beam_size=1, max_length=32),
                                        joint=False).ids)
            for ex in examples
        ]
        bleu = corpus_bleu(hyps, [e.target for e in data.splits["train"]])
        elapsed = time.time() - t0
        ok = bleu >= 99.0 and loss < 0.1 and summary["steps"] <= 2000 and elapsed < 600
        verdict(capfd, "overfit 64 sentences (BLEU >= 99, loss < 0.1, <= 2000 updates, < 10 min)",
                ok, f"BLEU {bleu:.2f}, loss {loss:.4f}, {summary['steps']} updates, {elapsed:.0f}s")

    def test_disambiguation_contrast(self, capfd, disamb_results):
        """Text-only accuracy <= 0.60 and full multimodal accuracy >= 0.90 on
        the held-out ambiguity set, for all three seeds, within 30 minutes."""
        acc, elapsed = disamb_results
        text = [acc[("text", "guided", s)] for s in (0, 1, 2)]
        psg = [acc[("psg", "guided", s)] for s in (0, 1, 2)]
        ok = all(a <= 0.60 for a in text) and all(a >= 0.90 for a in psg) and elapsed < 1800
        verdict(capfd, "disambiguation: text <= 0.60 vs psg >= 0.90, 3 seeds, < 30 min", ok,
                f"text {text}, psg {psg}, {elapsed:.0f}s")

    def test_random_pruning_not_better(self, capfd, disamb_results):
        acc, _ = disamb_results
        pairs = [(acc[("psg", "random", s)], acc[("psg", "guided", s)]) for s in (0, 1, 2)]
        ok = all(r <= g for r, g in pairs)
        verdict(capfd, "random pruning <= guided pruning on all 3 seeds", ok, f"{pairs}")


# ---------------------------------------------------------------------------
# metric oracles


def tiny_text_model(seed=0, vocab=14):
    cfg = ModelConfig(
        backbone=BackboneConfig(vocab_size=vocab, layers=1, heads=2, dim=8, ffn_dim=16,
                                dropout=0.0, max_positions=40),
        mode="text",
    )
    return PsgModel(cfg, np.random.default_rng(seed))


class TestMetricOracles:
    def test_bleu_reference_values(self, capfd):
        # five hand-derived pairs (counts worked out independently)
        checks = [
            (corpus_bleu(["the cat sat on the mat"], ["the cat sat on the mat"]), 100.0, 0.0),
            (corpus_bleu(["a b c d"], ["a b c d e"]), 100.0 * math.exp(-0.25), 1e-9),
            (corpus_bleu(["a b c d e"], ["a b c d f"]),
             100.0 * (4 / 5 * 3 / 4 * 2 / 3 * 1 / 2) ** 0.25, 1e-9),
            (corpus_bleu(["a b c d"], ["e f g h"]), 0.0, 0.0),
            # pooled corpus case: P=11/16, 6/13, 3/10, 1/7 with c = r = 16
            (corpus_bleu(["the cat sat on the mat", "a quick brown fox jumps",
                          "he reads a long book"],
                         ["the cat sat on a mat", "the quick brown fox jumped high",
                          "she reads a book"]),
             34.14883984883472, 1e-9),
        ]
        for got, want, tol in checks:
            assert abs(got - want) <= tol, (got, want)
        brevity = corpus_bleu(["a b c d"], ["a b c d e"])
        assert abs(brevity - 77.88) < 0.01
        verdict(capfd, "BLEU oracle pairs (5 cases, incl. 77.88 brevity case and identity=100)",
                True, "all within stated tolerance")

    def test_uniform_model_perplexity(self, capfd):
        oks = []
        for vocab in (11, 14):
            model = tiny_text_model(seed=0, vocab=vocab)
            model.backbone.params["token_embed"].data[...] = 0.0  # logits all zero
            ex = Example(src_ids=np.array([4, 5, 6], dtype=np.intp),
                         tgt_ids=np.array([4, 6, 5, 4], dtype=np.intp))
            ppl = de.perplexity(model, ex, ex.tgt_ids, joint=False)
            oks.append(abs(ppl - vocab) <= 1e-9)
        verdict(capfd, "uniform model perplexity equals vocab size (tol 1e-9)", all(oks),
                "V = 11 and 14")

    def test_chance_disambiguation(self, capfd):
        model = tiny_text_model(seed=21)
        rng = np.random.default_rng(5)
        items = []
        for i in range(300):
            ex = Example(src_ids=rng.integers(4, 14, size=4).astype(np.intp),
                         tgt_ids=rng.integers(4, 14, size=4).astype(np.intp))
            t_pos = rng.integers(4, 14, size=4).astype(np.intp)
            t_neg = rng.integers(4, 14, size=4).astype(np.intp)
            items.append((ex, t_pos, t_neg))
        acc = de.disambiguation_accuracy(model, items, joint=False)
        ok = abs(acc - 0.5) <= 0.1
        verdict(capfd, "untrained model disambiguation is chance (0.5 +- 0.1, 300 items)",
                ok, f"acc {acc:.3f}")


# ---------------------------------------------------------------------------
# systems equivalences


class TestSystems:
    def test_beam_one_equals_greedy(self, capfd, tiny_psg_setup):
        model, examples, _ = tiny_psg_setup
        text_model = tiny_text_model(seed=1)
        rng = np.random.default_rng(0)
        ok = True
        config = BeamConfig(beam_size=1, max_length=16)
        for ex in examples:  # joint multimodal path
            g = de.greedy_decode(model, ex, config, joint=True)
            b = de.beam_search(model, ex, config, joint=True)
            ok = ok and g.ids == b.ids
        for _ in range(10):  # text-only path
            ex = Example(src_ids=rng.integers(4, 14, size=5).astype(np.intp),
                         tgt_ids=rng.integers(4, 14, size=5).astype(np.intp))
            g = de.greedy_decode(text_model, ex, config, joint=False)
            b = de.beam_search(text_model, ex, config, joint=False)
            ok = ok and g.ids == b.ids
        verdict(capfd, "beam size 1 reproduces greedy decoding exactly", ok,
                f"{len(examples)} joint + 10 text examples")

    def test_incremental_matches_full(self, capfd, tiny_psg_setup):
        model, examples, _ = tiny_psg_setup
        worst = 0.0
        for ex in examples[:4]:
            states = model.encode_example(ex, joint=True)
            prefix = [1] + list(ex.tgt_ids[:4])
            enc, _ = model.encode_batch([ex], joint=True, train=False)
            with nc.no_grad():
                full = model.backbone.decode_train(enc, np.array([prefix])).data[0]
            cache = None
            for t in range(len(prefix)):
                logits, cache = decode_step(model.backbone, states, prefix[: t + 1], cache)
                worst = max(worst, float(np.abs(logits - full[t]).max()))
        verdict(capfd, "incremental decoding matches full forward (tol 1e-9)", worst <= 1e-9,
                f"max abs diff {worst:.2e}")

    def test_average_of_identical_checkpoints(self, capfd, tmp_path, tiny_psg_setup):
        model, _, _ = tiny_psg_setup
        params = model.params()
        for name in ("a.bin", "b.bin", "c.bin"):
            tr.save_checkpoint(tmp_path / name, 1, {}, params)
        avg = tr.average_checkpoints([tmp_path / n for n in ("a.bin", "b.bin", "c.bin")])
        ok = all(np.array_equal(avg.params[k], t.data) for k, t in params.items())
        verdict(capfd, "average of identical checkpoints is the identity (exact)", ok,
                f"{len(params)} parameter tensors")

    def test_seeded_training_is_byte_identical(self, capfd, tmp_path, tiny_psg_setup):
        _, examples, bpe = tiny_psg_setup
        blobs = []
        for run in ("a", "b"):
            cfg = ModelConfig(
                backbone=BackboneConfig(vocab_size=bpe.vocab_size, layers=1, heads=2, dim=16,
                                        ffn_dim=32, dropout=0.1, max_positions=64),
                prune=PruneConfig(steps=2, threshold=0.2),
                mode="psg", lang_embed_dim=8,
                visual_feature_dim=examples[0].vis_graph.entity_vectors.shape[1],
            )
            model = PsgModel(cfg, np.random.default_rng(9))
            config = TrainConfig(peak_lr=0.01, warmup_steps=10, batch_tokens=48,
                                 max_updates=6, patience=5, seed=4, label_smoothing=0.1)
            tr.train(config, model, examples, examples[:2], tmp_path / run)
            blobs.append([open(p, "rb").read()
                          for p in sorted(glob.glob(str(tmp_path / run / "checkpoint*.bin")))])
        ok = bool(blobs[0]) and blobs[0] == blobs[1]
        verdict(capfd, "seeded training is byte-identical across reruns", ok,
                f"{len(blobs[0])} checkpoints compared")

    def test_padding_invariance(self, capfd, tiny_psg_setup):
        model, examples, _ = tiny_psg_setup
        short = min(examples, key=lambda e: len(e.src_ids))
        long = max(examples, key=lambda e: len(e.src_ids))
        worst = 0.0
        for joint in (False, True):
            alone_enc, _ = model.encode_batch([short], joint=joint, train=False)
            batch_enc, _ = model.encode_batch([long, short], joint=joint, train=False)
            n = int(alone_enc.row_mask[0].sum())
            worst = max(worst, float(np.abs(batch_enc.states.data[1, :n]
                                            - alone_enc.states.data[0, :n]).max()))
            tgt_in, _ = tr.pad_batch([short])
            with nc.no_grad():
                alone_logits = model.backbone.decode_train(alone_enc, tgt_in).data[0]
                batch_tgt, _ = tr.pad_batch([long, short])
                batch_logits = model.backbone.decode_train(batch_enc, batch_tgt).data[1]
            t = tgt_in.shape[1]
            worst = max(worst, float(np.abs(batch_logits[:t] - alone_logits).max()))
        verdict(capfd, "padding invariance of encoder and decoder (tol 1e-9)", worst <= 1e-9,
                f"max abs diff {worst:.2e}")


# ---------------------------------------------------------------------------
# statistics tool


class TestStatsTool:
    def test_stats_matches_brute_force(self, capfd, tmp_path):
        spec = tmp_path / "spec.json"
        spec.write_text(json.dumps({"seed": 0, "vocab_size": 8, "splits": {"train": 50}}))
        assert cli.main(["synth", "--spec", str(spec), "--out", str(tmp_path / "data")]) == 0
        threshold = 0.3
        assert cli.main(["stats", "--graphs", str(tmp_path / "data" / "graphs"),
                         "--threshold", str(threshold),
                         "--out", str(tmp_path / "stats.json")]) == 0
        report = json.loads((tmp_path / "stats.json").read_text())

        counts = {"visual": [0, 0, 0], "language": [0, 0, 0]}  # graphs, entities, reliable
        for path in sorted(glob.glob(str(tmp_path / "data" / "graphs" / "*.json"))):
            graph = parse_scene_graph(open(path).read())
            c = counts[graph.modality]
            c[0] += 1
            c[1] += len(graph.entities)
            for e in graph.entities:
                if graph.modality == "language":
                    c[2] += 1 if e.confidence is None or e.confidence >= threshold else 0
                else:
                    c[2] += 1 if e.confidence is not None and e.confidence >= threshold else 0

        ok = True
        for modality in ("visual", "language"):
            n, total, reliable = counts[modality]
            got = report[modality]
            ok = ok and got["graphs"] == n
            ok = ok and got["mean_entities"] == total / n
            if modality == "visual":
                ok = ok and got["mean_reliable_entities"] == reliable / n
        ref = report["reference_means"]
        ok = ok and (ref["visual_reliable"], ref["language_english"],
                     ref["language_german"], ref["language_french"]) == (9.06, 3.48, 3.66, 3.92)
        verdict(capfd, "stats tool equals brute-force oracle exactly + reference means", ok,
                f"{counts['visual'][0]} visual / {counts['language'][0]} language graphs; "
                "reference means 9.06 / 3.48 / 3.66 / 3.92")
