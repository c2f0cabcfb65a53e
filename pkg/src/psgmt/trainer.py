"""Losses, optimizer, schedule, training loop, and checkpointing."""

from __future__ import annotations

import json
import math
import os
import struct
import tempfile
from dataclasses import asdict, dataclass, field

import numpy as np

from psgmt import numeric_core as nc
from psgmt.model import Example, ModelConfig, PsgModel
from psgmt.numeric_core import NumericError, Tensor
from psgmt.tokenizer import BOS, EOS, PAD

__all__ = [
    "TrainConfig",
    "Checkpoint",
    "smoothed_ce_loss",
    "total_loss",
    "lr_at",
    "AdamState",
    "adam_step",
    "make_batches",
    "train",
    "save_checkpoint",
    "load_checkpoint",
    "average_checkpoints",
    "atomic_write_bytes",
    "atomic_write_text",
]

CKPT_MAGIC = b"PSGCKPT1"


def atomic_write_bytes(path, data: bytes) -> None:
    """Write-temp-then-rename so readers never observe partial files."""
    directory = os.path.dirname(os.fspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


# ---------------------------------------------------------------------------
# losses


def smoothed_ce_loss(logits: Tensor, targets: np.ndarray, smoothing: float, pad_id: int = PAD) -> Tensor:
    """Label-smoothed cross-entropy, averaged over non-pad positions."""
    if not 0.0 <= smoothing < 1.0:
        raise ValueError(f"smoothing {smoothing} outside [0, 1)")
    if logits.shape[:-1] != targets.shape:
        raise nc.ShapeError("smoothed_ce_loss", logits.shape, targets.shape)
    mask = (targets != pad_id).astype(np.float64)
    n_tokens = mask.sum()
    if n_tokens == 0:
        raise ValueError("all-pad target batch")
    vocab = logits.shape[-1]
    logp = nc.log_softmax(logits, axis=-1)
    # clamp pad targets to a valid index; their contribution is masked out
    safe_targets = np.where(targets == pad_id, 0, targets)
    nll = nc.scale(nc.gather_last(logp, safe_targets), -1.0)
    loss_tok = nc.scale(nll, 1.0 - smoothing)
    if smoothing > 0.0:
        uniform = nc.scale(nc.tsum(logp, axis=-1), -smoothing / vocab)
        loss_tok = nc.add(loss_tok, uniform)
    masked = nc.mul(loss_tok, Tensor(mask))
    return nc.scale(nc.tsum(masked), 1.0 / n_tokens)


def total_loss(mmt: Tensor, prune: Tensor, nmt: Tensor) -> Tensor:
    """Exact sum of the three reported components."""
    for name, part in (("mmt", mmt), ("prune", prune), ("nmt", nmt)):
        if not np.isfinite(part.data):
            raise NumericError(f"non-finite {name} loss component")
    total = nc.add(mmt, nc.add(prune, nmt))
    if total.shape != mmt.shape and mmt.shape != ():
        raise nc.ShapeError("total_loss", mmt.shape, prune.shape, nmt.shape)
    return total


def lr_at(step: int, peak: float, warmup: int) -> float:
    """Linear warmup then inverse square root decay; continuous at warmup."""
    if step < 1:
        raise ValueError("step must be >= 1")
    return peak * min(step / warmup, math.sqrt(warmup / step))


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.98,
    eps: float = 1e-8,
) -> None:
    """Standard Adam with bias correction; aborts on non-finite gradients."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}; step aborted")
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for name, p in params.items():
        g = grads[name]
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


# ---------------------------------------------------------------------------
# training configuration and loop


@dataclass(frozen=True)
class TrainConfig:
    peak_lr: float = 0.005
    warmup_steps: int = 2000
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-8
    label_smoothing: float = 0.1
    batch_tokens: int = 1024
    max_updates: int = 80000
    patience: int = 10
    seed: int = 0
    max_epochs: int = 10_000
    grad_clip: float | None = None
    # optional early exit once the epoch-mean training loss drops below this
    target_train_loss: float | None = None

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        for name in ("peak_lr", "warmup_steps", "batch_tokens", "max_updates"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def pad_batch(examples: list[Example]) -> tuple[np.ndarray, np.ndarray]:
    """(tgt_in, tgt_out): bos-prefixed inputs and eos-suffixed outputs."""
    n = max(len(ex.tgt_ids) for ex in examples) + 1
    tgt_in = np.full((len(examples), n), PAD, dtype=np.intp)
    tgt_out = np.full((len(examples), n), PAD, dtype=np.intp)
    for i, ex in enumerate(examples):
        t = len(ex.tgt_ids)
        tgt_in[i, 0] = BOS
        tgt_in[i, 1 : t + 1] = ex.tgt_ids
        tgt_out[i, :t] = ex.tgt_ids
        tgt_out[i, t] = EOS
    return tgt_in, tgt_out


def make_batches(examples: list[Example], batch_tokens: int, rng: np.random.Generator | None = None) -> list[list[Example]]:
    """Token-budget batching with length bucketing (sort, then fill)."""
    order = np.arange(len(examples))
    if rng is not None:
        rng.shuffle(order)
    ordered = sorted(order, key=lambda i: (len(examples[i].tgt_ids), len(examples[i].src_ids)))
    batches: list[list[Example]] = []
    current: list[Example] = []
    max_len = 0
    for i in ordered:
        ex = examples[i]
        length = max(len(ex.src_ids), len(ex.tgt_ids) + 1)
        new_max = max(max_len, length)
        if current and new_max * (len(current) + 1) > batch_tokens:
            batches.append(current)
            current, max_len = [], 0
            new_max = length
        current.append(ex)
        max_len = new_max
    if current:
        batches.append(current)
    if rng is not None:
        perm = rng.permutation(len(batches))
        batches = [batches[i] for i in perm]
    return batches


def batch_loss(
    model: PsgModel,
    batch: list[Example],
    smoothing: float,
    train: bool,
    rng: np.random.Generator | None,
) -> tuple[Tensor, dict[str, float]]:
    """Eq.-16-style loss: mmt + prune + nmt for psg mode, nmt alone for text."""
    tgt_in, tgt_out = pad_batch(batch)
    if model.config.mode == "psg":
        enc_joint, l_prune = model.encode_batch(batch, joint=True, train=train, rng=rng)
        logits_mmt = model.backbone.decode_train(enc_joint, tgt_in, train=train, rng=rng)
        l_mmt = smoothed_ce_loss(logits_mmt, tgt_out, smoothing)
        enc_text, _ = model.encode_batch(batch, joint=False, train=train, rng=rng)
        logits_nmt = model.backbone.decode_train(enc_text, tgt_in, train=train, rng=rng)
        l_nmt = smoothed_ce_loss(logits_nmt, tgt_out, smoothing)
    else:
        enc_text, _ = model.encode_batch(batch, joint=False, train=train, rng=rng)
        logits_nmt = model.backbone.decode_train(enc_text, tgt_in, train=train, rng=rng)
        l_nmt = smoothed_ce_loss(logits_nmt, tgt_out, smoothing)
        l_mmt = Tensor(0.0)
        l_prune = Tensor(0.0)
    loss = total_loss(l_mmt, l_prune, l_nmt)
    parts = {
        "l_mmt": float(l_mmt.data),
        "l_prune": float(l_prune.data),
        "l_nmt": float(l_nmt.data),
        "l_total": float(loss.data),
    }
    return loss, parts


def _clip_grads(grads: dict[str, np.ndarray], max_norm: float) -> None:
    norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if norm > max_norm:
        factor = max_norm / norm
        for g in grads.values():
            g *= factor


def train(
    config: TrainConfig,
    model: PsgModel,
    train_data: list[Example],
    valid_data: list[Example],
    out_dir,
) -> dict:
    """Epoch loop with per-epoch validation, checkpoints, and early stopping.

    Deterministic under a fixed seed (single-threaded).  Returns a summary
    with the checkpoint paths and loss history.
    """
    if not train_data:
        raise ValueError("empty training set")
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(config.seed)
    params = model.params()
    state = AdamState()
    step = 0
    best_val = math.inf
    epochs_since_best = 0
    history: list[dict] = []
    checkpoints: list[str] = []
    log_path = os.path.join(out_dir, "train_log.ndjson")
    log_lines: list[str] = []
    stop = False

    for epoch in range(1, config.max_epochs + 1):
        epoch_losses = []
        for batch in make_batches(train_data, config.batch_tokens, rng):
            step += 1
            loss, parts = batch_loss(model, batch, config.label_smoothing, train=True, rng=rng)
            grads_by_id = nc.backward(loss, leaves=params.values())
            grads = {name: grads_by_id[id(t)] for name, t in params.items()}
            if config.grad_clip is not None:
                _clip_grads(grads, config.grad_clip)
            lr = lr_at(step, config.peak_lr, config.warmup_steps)
            adam_step(params, grads, state, lr, config.beta1, config.beta2, config.eps)
            epoch_losses.append(parts["l_total"])
            log_lines.append(json.dumps({"step": step, "lr": lr, **parts}))
            if step >= config.max_updates:
                stop = True
                break

        train_mean = float(np.mean(epoch_losses)) if epoch_losses else math.nan
        val_loss = evaluate_loss(model, valid_data, config) if valid_data else train_mean
        log_lines.append(json.dumps({"step": step, "epoch": epoch, "val_loss": val_loss}))

        ckpt_path = os.path.join(out_dir, f"checkpoint{epoch}.bin")
        save_checkpoint(ckpt_path, step, _config_snapshot(config, model), params, state)
        checkpoints.append(ckpt_path)
        history.append({"epoch": epoch, "train_loss": train_mean, "val_loss": val_loss})

        if val_loss < best_val - 1e-12:
            best_val = val_loss
            epochs_since_best = 0
        else:
            epochs_since_best += 1
        if epochs_since_best >= config.patience:
            stop = True
        if config.target_train_loss is not None and train_mean < config.target_train_loss:
            stop = True
        if stop:
            break

    atomic_write_text(log_path, "\n".join(log_lines) + "\n")
    return {
        "steps": step,
        "epochs": len(history),
        "best_val_loss": best_val,
        "history": history,
        "checkpoints": checkpoints,
        "log": log_path,
    }


def evaluate_loss(model: PsgModel, data: list[Example], config: TrainConfig) -> float:
    """Mean total loss over a dataset without dropout or updates."""
    if not data:
        raise ValueError("empty evaluation set")
    losses = []
    weights = []
    for batch in make_batches(data, config.batch_tokens):
        _, parts = batch_loss(model, batch, config.label_smoothing, train=False, rng=None)
        losses.append(parts["l_total"])
        weights.append(len(batch))
    return float(np.average(losses, weights=weights))


def _config_snapshot(config: TrainConfig, model: PsgModel) -> dict:
    return {
        "train": asdict(config),
        "model": {
            "mode": model.config.mode,
            "lang_embed_dim": model.config.lang_embed_dim,
            "visual_feature_dim": model.config.visual_feature_dim,
            "embed_seed": model.config.embed_seed,
            "backbone": asdict(model.config.backbone),
            "prune": asdict(model.config.prune),
        },
    }


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    step: int
    config: dict
    params: dict[str, np.ndarray]
    moments: dict[str, np.ndarray] = field(default_factory=dict)


def _pack_record(name: str, array: np.ndarray) -> bytes:
    encoded = name.encode("utf-8")
    parts = [struct.pack("<H", len(encoded)), encoded, struct.pack("<B", array.ndim)]
    parts.append(struct.pack(f"<{array.ndim}I", *array.shape))
    parts.append(np.ascontiguousarray(array, dtype="<f8").tobytes())
    return b"".join(parts)


def save_checkpoint(path, step: int, config: dict, params: dict[str, Tensor | np.ndarray],
                    state: AdamState | None = None) -> None:
    header = json.dumps({"step": step, "config": config}, sort_keys=True).encode("utf-8")
    records: list[tuple[str, np.ndarray]] = []
    for name, p in params.items():
        records.append((name, p.data if isinstance(p, Tensor) else np.asarray(p)))
    if state is not None:
        records.append(("adam.t", np.asarray(float(state.t))))
        for name, m in state.m.items():
            records.append((f"adam.m.{name}", m))
        for name, v in state.v.items():
            records.append((f"adam.v.{name}", v))
    blob = [CKPT_MAGIC, struct.pack("<I", len(header)), header, struct.pack("<I", len(records))]
    blob.extend(_pack_record(name, arr) for name, arr in records)
    atomic_write_bytes(path, b"".join(blob))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != CKPT_MAGIC:
        raise ValueError(f"{path}: bad checkpoint magic")
    offset = 8
    (header_len,) = struct.unpack_from("<I", data, offset)
    offset += 4
    header = json.loads(data[offset : offset + header_len].decode("utf-8"))
    offset += header_len
    (n_records,) = struct.unpack_from("<I", data, offset)
    offset += 4
    params: dict[str, np.ndarray] = {}
    moments: dict[str, np.ndarray] = {}
    for _ in range(n_records):
        (name_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        name = data[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<B", data, offset)
        offset += 1
        shape = struct.unpack_from(f"<{ndim}I", data, offset)
        offset += 4 * ndim
        count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        array = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
        offset += count * 8
        if name.startswith("adam."):
            moments[name] = array
        else:
            params[name] = array
    return Checkpoint(step=header["step"], config=header["config"], params=params, moments=moments)


def average_checkpoints(paths: list) -> Checkpoint:
    """Arithmetic mean per parameter; optimizer moments are dropped."""
    if not paths:
        raise ValueError("need at least one checkpoint")
    loaded = [load_checkpoint(p) for p in paths]
    schema = {name: arr.shape for name, arr in loaded[0].params.items()}
    for ckpt, path in zip(loaded[1:], paths[1:]):
        other = {name: arr.shape for name, arr in ckpt.params.items()}
        if set(other) != set(schema):
            diff = sorted(set(other) ^ set(schema))
            raise ValueError(f"checkpoint schema mismatch at {path}: {diff[0]}")
        for name, shape in schema.items():
            if other[name] != shape:
                raise ValueError(f"checkpoint schema mismatch at {path}: {name}")
    # mean as base + mean(offset) so averaging identical checkpoints is
    # bit-exact and nearby checkpoints lose no precision to cancellation
    mean_params = {
        name: loaded[0].params[name]
        + np.mean([c.params[name] - loaded[0].params[name] for c in loaded], axis=0)
        for name in schema
    }
    return Checkpoint(step=loaded[-1].step, config=loaded[-1].config, params=mean_params)
