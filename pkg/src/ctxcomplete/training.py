"""Language-model training: Adam with bias correction, global-norm gradient
clipping, and seeded mini-batch sampling.

Training runs in float32 so checkpoints round-trip bit-exactly (resuming a
run reproduces the uninterrupted one); gradient checks elsewhere use
float64. Loss is averaged per character, terminator included.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Vocab
from .factorcell import (
    FactorCellParams,
    ModelConfig,
    NumericError,
    backward,
    batch_forward,
    batch_nll,
    init_params,
)
from .tensors import Rng


@dataclass
class TrainConfig:
    lr: float = 2e-3
    batch_size: int = 32
    iterations: int = 3000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 5.0
    log_every: int = 50
    seed: int = 0
    preset: str = "desk"
    warmup_frac: float = 0.0  # fraction of iterations ramping LR from 0; 0 disables

    @classmethod
    def paper(cls, **overrides) -> "TrainConfig":
        base = dict(lr=5e-4, batch_size=32, iterations=80_000, preset="paper")
        base.update(overrides)
        return cls(**base)

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        base = dict(lr=2e-3, batch_size=32, iterations=3000, preset="desk")
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return {
            "lr": self.lr, "batch_size": self.batch_size, "iterations": self.iterations,
            "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
            "clip_norm": self.clip_norm, "log_every": self.log_every,
            "seed": self.seed, "preset": self.preset, "warmup_frac": self.warmup_frac,
        }


def lr_at(iteration: int, cfg: TrainConfig) -> float:
    """Linear warm-up from 0 to cfg.lr over the first warmup_frac of the run."""
    warm = cfg.warmup_frac * cfg.iterations
    if warm > 0 and iteration < warm:
        return cfg.lr * iteration / warm
    return cfg.lr


@dataclass
class LossCurve:
    iterations: list[int] = field(default_factory=list)
    values: list[float] = field(default_factory=list)

    def append(self, iteration: int, value: float) -> None:
        if self.iterations and iteration <= self.iterations[-1]:
            raise ValueError("loss-curve iterations must be strictly increasing")
        self.iterations.append(iteration)
        self.values.append(value)

    def to_csv(self, path) -> None:
        lines = ["iteration,nll"]
        lines += [f"{i},{v}" for i, v in zip(self.iterations, self.values)]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass
class AdamState:
    t: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]

    @classmethod
    def init(cls, arrays: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            t=0,
            m={k: np.zeros_like(a) for k, a in arrays.items()},
            v={k: np.zeros_like(a) for k, a in arrays.items()},
        )


def global_grad_norm(grads: dict[str, np.ndarray]) -> float:
    total = 0.0
    for name in sorted(grads):
        total += float(np.sum(np.square(grads[name], dtype=np.float64)))
    return float(np.sqrt(total))


def clip_grads(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients in place so the global norm is at most max_norm."""
    norm = global_grad_norm(grads)
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        for name in sorted(grads):
            grads[name] *= factor
    return norm


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """One in-place Adam update with bias correction.

    First step with constant gradient moves each weight by -lr*g/(|g|+eps).
    """
    for name in sorted(grads):
        if not np.all(np.isfinite(grads[name])):
            raise NumericError(f"non-finite gradient in parameter group {name!r}")
    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    for name in sorted(params):
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * np.square(g)
        params[name] -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return state


def assemble_batch(id_seqs: list[np.ndarray], vocab: Vocab, dtype=np.float32):
    """Pad encoded queries into (inputs, targets, mask) teacher-forcing arrays.

    Row layout: inputs [EOQ, q..., PAD...], targets [q..., EOQ, PAD...]; mask
    covers the len(q)+1 scored positions.
    """
    B = len(id_seqs)
    T = max(len(s) for s in id_seqs) + 1
    inputs = np.full((B, T), vocab.pad_id, dtype=np.int64)
    targets = np.full((B, T), vocab.pad_id, dtype=np.int64)
    mask = np.zeros((B, T), dtype=dtype)
    for bi, seq in enumerate(id_seqs):
        n = len(seq)
        inputs[bi, 0] = vocab.eoq_id
        inputs[bi, 1 : n + 1] = seq
        targets[bi, :n] = seq
        targets[bi, n] = vocab.eoq_id
        mask[bi, : n + 1] = 1.0
    return inputs, targets, mask


@dataclass
class TrainResult:
    params: FactorCellParams
    adam_state: AdamState
    curve: LossCurve
    rng: Rng


def train_lm(
    records,
    vocab: Vocab,
    model_cfg: ModelConfig,
    cfg: TrainConfig,
    rng: Rng | None = None,
    *,
    params: FactorCellParams | None = None,
    adam_state: AdamState | None = None,
    start_iteration: int = 0,
    iterations: int | None = None,
    context_mode: str = "image",
    dtype=np.float32,
    progress=None,
) -> TrainResult:
    """Train the adapted LM on (features, query) records.

    `context_mode="noise"` substitutes a fresh standard-normal context per
    example per batch, the language-only ablation. Passing `params`,
    `adam_state`, `start_iteration`, and a restored `rng` resumes a run
    mid-stream. `progress`, if given, is called as progress(iteration, loss).
    """
    if not records:
        raise ValueError("training dataset is empty")
    if context_mode not in ("image", "noise"):
        raise ValueError(f"unknown context mode {context_mode!r}")
    too_long = [r for r in records if len(r.query) > model_cfg.max_len]
    if too_long:
        raise ValueError(
            f"record {too_long[0].id!r}: query length {len(too_long[0].query)} "
            f"exceeds max_len {model_cfg.max_len}"
        )
    if rng is None:
        rng = Rng(cfg.seed)
    if params is None:
        params = init_params(model_cfg, rng, dtype=dtype)
    if adam_state is None:
        adam_state = AdamState.init(params.to_dict())

    id_seqs = [vocab.encode(r.query) for r in records]
    features = np.stack([r.features for r in records]).astype(dtype)
    n = len(records)
    curve = LossCurve()
    arrays = params.to_dict()
    total = cfg.iterations if iterations is None else iterations

    for local in range(total):
        it = start_iteration + local
        idx = rng.choice(n, size=cfg.batch_size, replace=n < cfg.batch_size)
        inputs, targets, mask = assemble_batch([id_seqs[i] for i in idx], vocab, dtype)
        if context_mode == "noise":
            C = rng.normal((len(idx), model_cfg.m)).astype(dtype)
            cache = batch_forward(params, inputs, C=C)
        else:
            cache = batch_forward(params, inputs, features=features[idx])
        total_nll, count = batch_nll(cache, targets, mask)
        loss = total_nll / count
        if not np.isfinite(loss):
            raise NumericError(f"non-finite training loss at iteration {it}")
        grads = backward(cache, targets, mask, params=params)
        clip_grads(grads, cfg.clip_norm)
        adam_step(arrays, grads, adam_state, lr_at(it, cfg), cfg.beta1, cfg.beta2, cfg.eps)
        if it % cfg.log_every == 0 or local == total - 1:
            curve.append(it, loss)
            if progress is not None:
                progress(it, loss)

    return TrainResult(params, adam_state, curve, rng)
