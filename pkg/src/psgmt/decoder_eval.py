"""Beam-search inference and evaluation metrics.

Metrics: corpus BLEU-4 (clipped precisions, geometric mean, exponential
brevity penalty), an exact-unigram METEOR variant, teacher-forced
perplexity, and perplexity-contrast disambiguation accuracy.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from psgmt import numeric_core as nc
from psgmt.backbone import decode_step
from psgmt.model import Example, PsgModel
from psgmt.tokenizer import BOS, EOS, PAD
from psgmt.trainer import pad_batch

__all__ = [
    "BeamConfig",
    "MeteorConfig",
    "Hypothesis",
    "greedy_decode",
    "beam_search",
    "corpus_bleu",
    "meteor_lite",
    "perplexity",
    "disambiguation_accuracy",
]


@dataclass(frozen=True)
class BeamConfig:
    beam_size: int = 5
    max_length: int = 64
    length_penalty: float = 1.0

    def __post_init__(self):
        if self.beam_size < 1 or self.max_length < 1:
            raise ValueError("beam size and max length must be >= 1")


@dataclass(frozen=True)
class MeteorConfig:
    alpha: float = 0.9
    beta: float = 3.0
    gamma: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0 or self.beta < 0 or self.gamma < 0:
            raise ValueError("invalid meteor weights")


@dataclass
class Hypothesis:
    ids: list[int]  # generated tokens, excluding bos/eos
    score: float  # length-normalized log probability
    truncated: bool = False


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    return z - math.log(np.exp(z).sum())


def greedy_decode(model: PsgModel, example: Example, config: BeamConfig, joint: bool = True) -> Hypothesis:
    """Argmax decoding; the beam-1 reference point."""
    enc = model.encode_example(example, joint=joint)
    prefix = [BOS]
    cache = None
    logprob = 0.0
    for _ in range(config.max_length):
        logits, cache = decode_step(model.backbone, enc, prefix, cache)
        logp = _log_softmax(logits)
        token = int(np.argmax(logp))
        logprob += float(logp[token])
        prefix.append(token)
        if token == EOS:
            ids = prefix[1:-1]
            return Hypothesis(ids=ids, score=logprob / max(1, len(prefix) - 1) ** config.length_penalty)
    return Hypothesis(
        ids=prefix[1:],
        score=logprob / max(1, len(prefix) - 1) ** config.length_penalty,
        truncated=True,
    )


def beam_search(model: PsgModel, example: Example, config: BeamConfig, joint: bool = True) -> Hypothesis:
    """Length-normalized beam search over the incremental decoder."""
    enc = model.encode_example(example, joint=joint)
    beams: list[tuple[list[int], float, object]] = [([BOS], 0.0, None)]
    finished: list[Hypothesis] = []
    for _ in range(config.max_length):
        candidates: list[tuple[list[int], float, object]] = []
        for prefix, logprob, cache in beams:
            logits, cache = decode_step(model.backbone, enc, prefix, cache)
            logp = _log_softmax(logits)
            top = np.argsort(-logp, kind="stable")[: config.beam_size]
            for token in top:
                candidates.append((prefix + [int(token)], logprob + float(logp[token]), cache))
        candidates.sort(key=lambda c: -c[1])
        beams = []
        for prefix, logprob, cache in candidates:
            norm = logprob / (len(prefix) - 1) ** config.length_penalty
            if prefix[-1] == EOS:
                finished.append(Hypothesis(ids=prefix[1:-1], score=norm))
            else:
                beams.append((prefix, logprob, cache))
            if len(beams) >= config.beam_size:
                break
        if not beams:
            break
        if finished and len(finished) >= config.beam_size:
            break
    if finished:
        return max(finished, key=lambda h: h.score)
    prefix, logprob, _ = beams[0]
    return Hypothesis(
        ids=prefix[1:],
        score=logprob / (len(prefix) - 1) ** config.length_penalty,
        truncated=True,
    )


# ---------------------------------------------------------------------------
# BLEU


def _ngram_counts(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(hypotheses: list[str], references: list[str], max_n: int = 4,
                literal_brevity: bool = False) -> float:
    """Corpus-level BLEU in [0, 100]; any zero n-gram precision gives 0.

    ``literal_brevity`` switches to the (1 - r) * exp(...) form for
    comparison; the default is the standard min(1, e^(1 - r/c)) penalty.
    """
    if len(hypotheses) != len(references):
        raise ValueError("hypothesis/reference count mismatch")
    if not hypotheses:
        raise ValueError("empty corpus")
    matched = [0] * max_n
    totals = [0] * max_n
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        h_tok, r_tok = hyp.split(), ref.split()
        hyp_len += len(h_tok)
        ref_len += len(r_tok)
        for n in range(1, max_n + 1):
            h_counts = _ngram_counts(h_tok, n)
            r_counts = _ngram_counts(r_tok, n)
            totals[n - 1] += sum(h_counts.values())
            matched[n - 1] += sum(min(c, r_counts[g]) for g, c in h_counts.items())
    if hyp_len == 0 or any(t == 0 for t in totals) or any(m == 0 for m in matched):
        return 0.0
    log_mean = sum(math.log(m / t) for m, t in zip(matched, totals)) / max_n
    if literal_brevity:
        brevity = 1.0 - ref_len / hyp_len
    else:
        brevity = min(1.0, math.exp(1.0 - ref_len / hyp_len))
    return 100.0 * brevity * math.exp(log_mean)


# ---------------------------------------------------------------------------
# METEOR (exact-unigram variant)


def _align_chunks(hyp: list[str], ref: list[str]) -> tuple[int, int]:
    """(matches, chunks) under greedy longest-common-run alignment."""
    matches = sum((Counter(hyp) & Counter(ref)).values())
    if matches == 0:
        return 0, 0
    hyp_free = [True] * len(hyp)
    ref_free = [True] * len(ref)
    chunks = 0
    aligned = 0
    while aligned < matches:
        best_len, best = 0, None
        for i in range(len(hyp)):
            for j in range(len(ref)):
                k = 0
                while (
                    i + k < len(hyp)
                    and j + k < len(ref)
                    and hyp_free[i + k]
                    and ref_free[j + k]
                    and hyp[i + k] == ref[j + k]
                ):
                    k += 1
                if k > best_len:
                    best_len, best = k, (i, j)
        if best is None:
            break
        i, j = best
        for k in range(best_len):
            hyp_free[i + k] = False
            ref_free[j + k] = False
        aligned += best_len
        chunks += 1
    return aligned, chunks


def meteor_lite(hypothesis: str, reference: str, config: MeteorConfig = MeteorConfig()) -> float:
    """(1 - gamma F^beta) * R P / (alpha P + (1 - alpha) R); zero matches -> 0."""
    h_tok, r_tok = hypothesis.split(), reference.split()
    if not h_tok or not r_tok:
        return 0.0
    matches, chunks = _align_chunks(h_tok, r_tok)
    if matches == 0:
        return 0.0
    precision = matches / len(h_tok)
    recall = matches / len(r_tok)
    fmean = recall * precision / (config.alpha * precision + (1.0 - config.alpha) * recall)
    frag = chunks / matches
    return (1.0 - config.gamma * frag ** config.beta) * fmean


# ---------------------------------------------------------------------------
# perplexity and disambiguation accuracy


def sequence_nll(model: PsgModel, example: Example, target_ids: np.ndarray, joint: bool = True) -> float:
    """Mean per-token negative log-likelihood under teacher forcing."""
    target_ids = np.asarray(target_ids, dtype=np.intp)
    if target_ids.size == 0:
        raise ValueError("empty target")
    scored = replace_target(example, target_ids)
    tgt_in, tgt_out = pad_batch([scored])
    with nc.no_grad():
        enc, _ = model.encode_batch([scored], joint=joint and model.config.mode == "psg", train=False)
        logits = model.backbone.decode_train(enc, tgt_in, train=False)
    logp = logits.data - logits.data.max(axis=-1, keepdims=True)
    logp = logp - np.log(np.exp(logp).sum(axis=-1, keepdims=True))
    mask = tgt_out[0] != PAD
    picked = logp[0][np.arange(tgt_out.shape[1]), tgt_out[0]]
    return float(-(picked[mask]).mean())


def replace_target(example: Example, target_ids: np.ndarray) -> Example:
    return Example(
        src_ids=example.src_ids,
        tgt_ids=np.asarray(target_ids, dtype=np.intp),
        lang_graph=example.lang_graph,
        vis_graph=example.vis_graph,
        example_id=example.example_id,
    )


def perplexity(model: PsgModel, example: Example, target_ids: np.ndarray, joint: bool = True) -> float:
    """exp of the teacher-forced mean negative log-likelihood; >= 1."""
    return math.exp(sequence_nll(model, example, target_ids, joint=joint))


def disambiguation_accuracy(model: PsgModel, items: list[tuple[Example, np.ndarray, np.ndarray]],
                            joint: bool = True) -> float:
    """Fraction of items with PPL(correct) strictly below PPL(incorrect)."""
    if not items:
        raise ValueError("empty item list")
    wins = 0
    for example, t_pos, t_neg in items:
        if perplexity(model, example, t_pos, joint) < perplexity(model, example, t_neg, joint):
            wins += 1
    return wins / len(items)
