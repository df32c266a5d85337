"""Multilabel instance-probability head.

A context-free coupled-gate LSTM reads the query characters, the per-step
hidden states are mean-pooled, dropout hits the pooled vector in train mode,
and a dense sigmoid layer maps it to one independent probability per class:

    p_k = sigmoid(pooled . dense_W[:, k] + dense_b[k])

Probabilities are NOT normalized across classes; a query can name several
instances. The encoder reuses the recurrent cell with its adaptation tensors
and context pinned to zero, so W' = W exactly. Training minimizes the summed
per-class sigmoid cross-entropy, computed from logits for stability.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import ClassCatalog, Vocab
from .factorcell import (
    BatchCache,
    FactorCellParams,
    ModelConfig,
    NumericError,
    backward_from_hidden,
    batch_forward,
    init_params,
)
from .tensors import Rng, sigmoid, xavier_uniform
from .training import AdamState, LossCurve, TrainConfig, adam_step, clip_grads, lr_at

ENC_PREFIX = "enc."


@dataclass
class HeadConfig:
    e: int  # encoder character embedding dim
    h: int  # encoder hidden dim (pooled vector size)
    vocab_size: int
    n_classes: int
    max_len: int = 50
    dropout: float = 0.10

    def __post_init__(self):
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    @classmethod
    def desk(cls, vocab_size: int, n_classes: int, **overrides) -> "HeadConfig":
        return cls(e=16, h=64, vocab_size=vocab_size, n_classes=n_classes, **overrides)

    def to_dict(self) -> dict:
        return {
            "e": self.e, "h": self.h, "vocab_size": self.vocab_size,
            "n_classes": self.n_classes, "max_len": self.max_len,
            "dropout": self.dropout,
        }


@dataclass
class InstanceHeadParams:
    cfg: HeadConfig
    encoder: FactorCellParams
    dense_W: np.ndarray  # (h, n_classes)
    dense_b: np.ndarray  # (n_classes,)

    def to_dict(self) -> dict[str, np.ndarray]:
        arrays = {ENC_PREFIX + k: v for k, v in self.encoder.to_dict().items()}
        arrays["dense_W"] = self.dense_W
        arrays["dense_b"] = self.dense_b
        return arrays

    def replace_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.encoder.replace_arrays(
            {k[len(ENC_PREFIX) :]: v for k, v in arrays.items() if k.startswith(ENC_PREFIX)}
        )
        self.dense_W = arrays["dense_W"]
        self.dense_b = arrays["dense_b"]

    @property
    def dtype(self):
        return self.dense_W.dtype


def init_instance_head(cfg: HeadConfig, rng: Rng, dtype=np.float64) -> InstanceHeadParams:
    enc_cfg = ModelConfig(
        e=cfg.e, h=cfg.h, r=1, m=1, feat_dim=1,
        vocab_size=cfg.vocab_size, max_len=cfg.max_len,
    )
    encoder = init_params(enc_cfg, rng, dtype=dtype)
    # the encoder is context-free: no adaptation, no projection, no LM output
    for name in ("Z_L", "Z_R", "proj_W", "proj_b", "out_W", "out_b"):
        getattr(encoder, name)[...] = 0.0
    return InstanceHeadParams(
        cfg=cfg,
        encoder=encoder,
        dense_W=xavier_uniform(rng, cfg.h, cfg.n_classes, (cfg.h, cfg.n_classes), dtype),
        dense_b=np.zeros(cfg.n_classes, dtype=dtype),
    )


def _zero_context(B: int, dtype) -> np.ndarray:
    return np.zeros((B, 1), dtype=dtype)


def encode_id_batch(id_seqs, pad_id: int, dtype=np.float64):
    """Pad raw query-id rows into (inputs, mask); no terminator involved."""
    B = len(id_seqs)
    T = max(len(s) for s in id_seqs)
    inputs = np.full((B, T), pad_id, dtype=np.int64)
    mask = np.zeros((B, T), dtype=dtype)
    for bi, seq in enumerate(id_seqs):
        inputs[bi, : len(seq)] = seq
        mask[bi, : len(seq)] = 1.0
    return inputs, mask


def pool_hidden(cache: BatchCache, mask: np.ndarray) -> np.ndarray:
    """Length-weighted mean of per-step hidden states, (B, h)."""
    lens = mask.sum(axis=1)
    summed = np.einsum("bt,tbh->bh", mask, cache.H[1:])
    return summed / lens[:, None]


def batch_pooled(params: InstanceHeadParams, inputs: np.ndarray, mask: np.ndarray):
    cache = batch_forward(params.encoder, inputs, C=_zero_context(inputs.shape[0], params.dtype))
    return pool_hidden(cache, mask), cache


def encode_query(
    q: str,
    params: InstanceHeadParams,
    vocab: Vocab,
    mode: str = "infer",
    rng: Rng | None = None,
) -> np.ndarray:
    """Pooled encoder state for one query; dropout only in train mode."""
    if not q:
        raise ValueError("query must be non-empty")
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    ids = vocab.encode(q)
    inputs, mask = encode_id_batch([ids], vocab.pad_id, dtype=params.dtype)
    pooled, _ = batch_pooled(params, inputs, mask)
    pooled = pooled[0]
    if mode == "train":
        if rng is None:
            raise ValueError("train mode needs an rng for the dropout mask")
        keep = (rng.uniform(0.0, 1.0, params.cfg.h) >= params.cfg.dropout).astype(params.dtype)
        pooled = pooled * keep / (1.0 - params.cfg.dropout)
    return pooled


def instance_probs(q: str, params: InstanceHeadParams, vocab: Vocab) -> np.ndarray:
    """Independent per-class probabilities for one query (inference mode)."""
    pooled = encode_query(q, params, vocab, mode="infer")
    return sigmoid(pooled @ params.dense_W + params.dense_b)


def selection_loss(p_hat: np.ndarray, y: np.ndarray) -> float:
    """-sum_k [y_k log p_k + (1-y_k) log(1-p_k)], the multilabel loss.

    Defined by continuity at the endpoints: a coordinate with p_k = y_k
    contributes exactly 0. Training uses the logit form below instead.
    """
    p_hat = np.asarray(p_hat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if p_hat.shape != y.shape:
        raise ValueError(f"shape mismatch: probs {p_hat.shape} vs labels {y.shape}")
    pos = y == 1.0
    with np.errstate(divide="ignore"):
        total = -np.sum(np.log(p_hat[pos])) - np.sum(np.log1p(-p_hat[~pos]))
    return float(total)


def selection_loss_from_logits(logits: np.ndarray, y: np.ndarray) -> float:
    """Numerically stable form: sum_k [max(z,0) - z y + log(1 + exp(-|z|))]."""
    logits = np.asarray(logits, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if logits.shape != y.shape:
        raise ValueError(f"shape mismatch: logits {logits.shape} vs labels {y.shape}")
    return float(
        np.sum(np.maximum(logits, 0.0) - logits * y + np.log1p(np.exp(-np.abs(logits))))
    )


def head_forward(
    params: InstanceHeadParams,
    inputs: np.ndarray,
    mask: np.ndarray,
    keep_mask: np.ndarray | None = None,
):
    """Batched logits; `keep_mask` (B, h) applies inverted dropout when given."""
    pooled, cache = batch_pooled(params, inputs, mask)
    used = pooled
    if keep_mask is not None:
        used = pooled * keep_mask / (1.0 - params.cfg.dropout)
    logits = used @ params.dense_W + params.dense_b
    return logits, used, cache


def head_backward(
    params: InstanceHeadParams,
    cache: BatchCache,
    mask: np.ndarray,
    used_pooled: np.ndarray,
    logits: np.ndarray,
    Y: np.ndarray,
    keep_mask: np.ndarray | None = None,
) -> dict[str, np.ndarray]:
    """Gradients of the batch-mean selection loss for every head array."""
    B = logits.shape[0]
    dlogits = (sigmoid(logits) - Y) / B
    grads_dense_W = used_pooled.T @ dlogits
    grads_dense_b = dlogits.sum(axis=0)
    dpooled = dlogits @ params.dense_W.T
    if keep_mask is not None:
        dpooled = dpooled * keep_mask / (1.0 - params.cfg.dropout)
    lens = mask.sum(axis=1)
    dH_steps = np.transpose(mask / lens[:, None], (1, 0))[:, :, None] * dpooled[None, :, :]
    enc = backward_from_hidden(cache, dH_steps.astype(params.dtype), params.encoder)
    grads = {ENC_PREFIX + k: v for k, v in enc.items()}
    grads["dense_W"] = grads_dense_W
    grads["dense_b"] = grads_dense_b
    return grads


def head_loss(logits: np.ndarray, Y: np.ndarray) -> float:
    """Mean over the batch of the per-example selection loss."""
    return selection_loss_from_logits(logits, Y) / logits.shape[0]


def head_grad_check(
    cfg: HeadConfig | None = None,
    rng: Rng | None = None,
    tolerance: float = 1e-4,
    step_size: float = 1e-5,
):
    """Finite-difference check of the full head backward at small dims.

    Uses a fixed dropout mask so the dropout scaling path is covered while
    the loss stays deterministic. Adaptation/projection/LM-output groups of
    the encoder are pinned to zero and must stay at zero gradient.
    """
    from .factorcell import GradCheckReport, finite_difference_grads, max_relative_error

    if cfg is None:
        cfg = HeadConfig(e=4, h=6, vocab_size=9, n_classes=3, max_len=12)
    if rng is None:
        rng = Rng(0)
    params = init_instance_head(cfg, rng, dtype=np.float64)
    B, T = 2, 5
    id_seqs = [
        rng.integers(0, cfg.vocab_size, 5).astype(np.int64),
        rng.integers(0, cfg.vocab_size, 3).astype(np.int64),
    ]
    inputs, mask = encode_id_batch(id_seqs, pad_id=0)
    Y = (rng.uniform(0.0, 1.0, (B, cfg.n_classes)) < 0.5).astype(np.float64)
    keep = (rng.uniform(0.0, 1.0, (B, cfg.h)) >= cfg.dropout).astype(np.float64)
    arrays = params.to_dict()

    def loss_fn() -> float:
        logits, _, _ = head_forward(params, inputs, mask, keep_mask=keep)
        return head_loss(logits, Y)

    logits, used, cache = head_forward(params, inputs, mask, keep_mask=keep)
    analytic = head_backward(params, cache, mask, used, logits, Y, keep_mask=keep)
    numeric = finite_difference_grads(loss_fn, arrays, step_size)
    errors = {name: max_relative_error(analytic[name], numeric[name]) for name in arrays}
    return GradCheckReport(errors, tolerance)


@dataclass
class HeadTrainResult:
    params: InstanceHeadParams
    adam_state: AdamState
    curve: LossCurve
    rng: Rng


def head_train_config(**overrides) -> TrainConfig:
    """Head default: warm-up over the first 10% of iterations."""
    base = dict(lr=2e-3, batch_size=32, iterations=1500, warmup_frac=0.1, preset="desk")
    base.update(overrides)
    return TrainConfig(**base)


def train_instance_head(
    records,
    catalog: ClassCatalog,
    vocab: Vocab,
    head_cfg: HeadConfig,
    cfg: TrainConfig,
    rng: Rng | None = None,
    *,
    params: InstanceHeadParams | None = None,
    adam_state: AdamState | None = None,
    start_iteration: int = 0,
    iterations: int | None = None,
    dtype=np.float32,
    progress=None,
) -> HeadTrainResult:
    """Train the head on (query, instance-set) pairs with LR warm-up."""
    if not records:
        raise ValueError("training dataset is empty")
    if rng is None:
        rng = Rng(cfg.seed)
    if params is None:
        params = init_instance_head(head_cfg, rng, dtype=dtype)
    if adam_state is None:
        adam_state = AdamState.init(params.to_dict())

    id_seqs = [vocab.encode(r.query) for r in records]
    Y = np.stack([catalog.label_vector(r.instances) for r in records]).astype(dtype)
    n = len(records)
    arrays = params.to_dict()
    curve = LossCurve()
    total = cfg.iterations if iterations is None else iterations

    for local in range(total):
        it = start_iteration + local
        idx = rng.choice(n, size=cfg.batch_size, replace=n < cfg.batch_size)
        inputs, mask = encode_id_batch([id_seqs[i] for i in idx], vocab.pad_id, dtype=dtype)
        keep = (rng.uniform(0.0, 1.0, (len(idx), head_cfg.h)) >= head_cfg.dropout).astype(dtype)
        logits, used, cache = head_forward(params, inputs, mask, keep_mask=keep)
        loss = head_loss(logits, Y[idx])
        if not np.isfinite(loss):
            raise NumericError(f"non-finite head loss at iteration {it}")
        grads = head_backward(params, cache, mask, used, logits, Y[idx], keep_mask=keep)
        clip_grads(grads, cfg.clip_norm)
        adam_step(arrays, grads, adam_state, lr_at(it, cfg), cfg.beta1, cfg.beta2, cfg.eps)
        if it % cfg.log_every == 0 or local == total - 1:
            curve.append(it, loss)
            if progress is not None:
                progress(it, loss)

    return HeadTrainResult(params, adam_state, curve, rng)
