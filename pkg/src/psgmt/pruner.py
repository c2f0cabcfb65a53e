"""Language-guided pruning of visual node features.

Each step: cross-modal attention (normalized over visual nodes per language
node), mean scores, removal of nodes below tau times the uniform mass, and a
step-weighted KL term between pooled visual and language feature
distributions.  Selection is hard (non-differentiable); gradients flow
through the surviving rows and the KL term.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from psgmt import numeric_core as nc
from psgmt.numeric_core import Tensor

__all__ = [
    "PruneConfig",
    "PruneStep",
    "PruneTrace",
    "cross_attention",
    "mean_scores",
    "prune_step",
    "kl_pooled",
    "prune_loss",
    "multi_step_prune",
]


@dataclass(frozen=True)
class PruneConfig:
    steps: int = 5  # lambda
    threshold: float = 0.2  # tau
    keep_at_least_one: bool = True
    # literal reading of the printed loss weights every step by lambda;
    # default is the step-index weighting (intensity grows per step)
    constant_step_weight: bool = False
    # 'guided' uses language attention; 'random' draws scores from rng
    strategy: str = "guided"

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.threshold < 0:
            raise ValueError("threshold must be >= 0")
        if self.strategy not in ("guided", "random"):
            raise ValueError(f"unknown pruning strategy {self.strategy!r}")


@dataclass
class PruneStep:
    attention: np.ndarray  # (p_v_surviving, p_l)
    mean_attention: np.ndarray  # (p_v_surviving,)
    kept: list[int]  # indices into the step's input rows
    kept_original: list[int]  # indices into the original f_v rows
    kl: float


@dataclass
class PruneTrace:
    steps: list[PruneStep] = field(default_factory=list)
    final_kept: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "final_kept": self.final_kept,
            "steps": [
                {
                    "attention": s.attention.tolist(),
                    "mean_attention": s.mean_attention.tolist(),
                    "kept": s.kept,
                    "kept_original": s.kept_original,
                    "kl": s.kl,
                }
                for s in self.steps
            ],
        }


def cross_attention(f_v: Tensor, f_l: Tensor) -> Tensor:
    """alpha[i, j] = softmax over visual nodes i of f_v[i] . f_l[j]."""
    if f_v.ndim != 2 or f_l.ndim != 2 or f_v.shape[1] != f_l.shape[1]:
        raise nc.ShapeError("cross_attention", f_v.shape, f_l.shape)
    if f_v.shape[0] == 0 or f_l.shape[0] == 0:
        raise ValueError("cross_attention requires non-empty node sets")
    scores = nc.matmul(f_v, nc.transpose(f_l, (1, 0)))  # (p_v, p_l)
    return nc.softmax(scores, axis=0)


def mean_scores(alpha: Tensor) -> Tensor:
    """Mean over language nodes; sums to 1 because columns are stochastic."""
    return nc.tmean(alpha, axis=1)


def prune_step(f_v: Tensor, scores: np.ndarray, threshold: float, keep_at_least_one: bool = True):
    """Keep row i iff scores[i] >= (tau / p_v) * sum(scores).

    Returns (kept indices, surviving rows).  If nothing survives and the
    keep-at-least-one flag is on, the argmax row (smallest index on ties)
    is retained.
    """
    p_v = f_v.shape[0]
    cut = threshold / p_v * float(scores.sum())
    kept = [i for i in range(p_v) if scores[i] >= cut]
    if not kept and keep_at_least_one:
        kept = [int(np.argmax(scores))]
    return kept, nc.gather_rows(f_v, kept)


def kl_pooled(f_v: Tensor, f_l: Tensor) -> Tensor:
    """KL between softmax-normalized node-mean summaries of the two sets."""
    p = nc.softmax(nc.tmean(f_v, axis=0), axis=0)
    log_p = nc.log_softmax(nc.tmean(f_v, axis=0), axis=0)
    log_q = nc.log_softmax(nc.tmean(f_l, axis=0), axis=0)
    return nc.tsum(nc.mul(p, nc.sub(log_p, log_q)))


def prune_loss(step_features: list[Tensor], f_l: Tensor, constant_step_weight: bool = False) -> Tensor:
    """Sum over steps s of weight(s) * KL(pooled f_v^(s) || pooled f_l)."""
    steps = len(step_features)
    if steps == 0:
        return Tensor(0.0)
    total = None
    for s, f_v in enumerate(step_features, start=1):
        weight = float(steps if constant_step_weight else s)
        term = nc.scale(kl_pooled(f_v, f_l), weight)
        total = term if total is None else nc.add(total, term)
    return total


def multi_step_prune(
    f_v: Tensor,
    f_l: Tensor,
    config: PruneConfig,
    rng: np.random.Generator | None = None,
) -> tuple[Tensor, Tensor, PruneTrace]:
    """Iterate attention -> mean scores -> prune on surviving rows.

    Attention is recomputed over the survivors each step.  Returns the final
    features, the accumulated pruning loss, and the full trace.  steps=0 is
    the identity with exact zero loss.
    """
    if f_v.shape[0] == 0 or f_l.shape[0] == 0:
        raise ValueError("multi_step_prune requires non-empty feature sets")
    if config.strategy == "random" and rng is None:
        raise ValueError("random pruning strategy requires an rng")
    trace = PruneTrace(final_kept=list(range(f_v.shape[0])))
    current = f_v
    original = list(range(f_v.shape[0]))
    loss: Tensor | None = None
    for step_index in range(1, config.steps + 1):
        alpha = cross_attention(current, f_l)
        if config.strategy == "random":
            raw = rng.random(current.shape[0])
            scores = raw / raw.sum()
        else:
            scores = mean_scores(alpha).data
        kept, current = prune_step(current, scores, config.threshold, config.keep_at_least_one)
        original = [original[i] for i in kept]
        kl = kl_pooled(current, f_l)
        weight = float(config.steps if config.constant_step_weight else step_index)
        term = nc.scale(kl, weight)
        loss = term if loss is None else nc.add(loss, term)
        trace.steps.append(
            PruneStep(
                attention=alpha.data.copy(),
                mean_attention=np.asarray(scores, dtype=np.float64).copy(),
                kept=kept,
                kept_original=list(original),
                kl=float(kl.data),
            )
        )
    trace.final_kept = original
    if loss is None:
        loss = Tensor(0.0)
    return current, loss, trace
