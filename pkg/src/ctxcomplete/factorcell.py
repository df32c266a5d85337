"""Context-adapted coupled-gate LSTM language model over characters.

The recurrent weight matrix is context-dependent: W' = W + A, where the
additive term is a rank-r product of two basis tensors contracted with an
m-dimensional context vector c,

    A = (c x1 Z_L) (Z_R x3 c),   Z_L: (m, e+h, r),  Z_R: (r, 3h, m).

Pre-activations z = [x_t, h_{t-1}] W' + b split into three h-sized blocks,
laid out as [candidate | forget | output]:

    g = tanh(z_g),  f = sigmoid(z_f),  o = sigmoid(z_o)
    cc_t = f * cc_{t-1} + (1 - f) * g        (input gate coupled to forget)
    h_t  = o * tanh(cc_t)

The end-of-query token doubles as the start-of-sequence input, so a query
"ab" is scored as the target sequence [a, b, EOQ] fed with [EOQ, a, b].
All gradients are derived by hand and verified against central finite
differences (see `grad_check`).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .tensors import Rng, ShapeError, log_softmax, sigmoid, xavier_uniform

GATE_BLOCKS = 3


class NumericError(RuntimeError):
    """A numeric invariant broke (non-finite loss or gradient)."""


@dataclass
class ModelConfig:
    e: int  # character embedding dim
    h: int  # hidden dim
    r: int  # adaptation rank
    m: int  # context dim
    feat_dim: int  # raw feature dim fed to the context projection
    vocab_size: int
    max_len: int = 50

    def __post_init__(self):
        for name in ("e", "h", "r", "m", "feat_dim", "vocab_size", "max_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"ModelConfig.{name} must be >= 1")

    @classmethod
    def paper(cls, vocab_size: int, feat_dim: int) -> "ModelConfig":
        return cls(e=24, h=512, r=64, m=128, feat_dim=feat_dim, vocab_size=vocab_size)

    @classmethod
    def desk(cls, vocab_size: int, feat_dim: int) -> "ModelConfig":
        return cls(e=16, h=64, r=8, m=16, feat_dim=feat_dim, vocab_size=vocab_size)

    def to_dict(self) -> dict:
        return {
            "e": self.e, "h": self.h, "r": self.r, "m": self.m,
            "feat_dim": self.feat_dim, "vocab_size": self.vocab_size,
            "max_len": self.max_len,
        }


@dataclass
class FactorCellParams:
    cfg: ModelConfig
    embed: np.ndarray   # (V, e)
    W: np.ndarray       # (e+h, 3h)
    b: np.ndarray       # (3h,)
    Z_L: np.ndarray     # (m, e+h, r)
    Z_R: np.ndarray     # (r, 3h, m)
    proj_W: np.ndarray  # (feat_dim, m)
    proj_b: np.ndarray  # (m,)
    out_W: np.ndarray   # (h, V)
    out_b: np.ndarray   # (V,)

    FIELDS = ("embed", "W", "b", "Z_L", "Z_R", "proj_W", "proj_b", "out_W", "out_b")

    def to_dict(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.FIELDS}

    def replace_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name in self.FIELDS:
            setattr(self, name, arrays[name])

    @property
    def dtype(self):
        return self.W.dtype


class CellState(NamedTuple):
    h: np.ndarray
    cc: np.ndarray


def initial_state(cfg: ModelConfig, dtype=np.float64) -> CellState:
    return CellState(np.zeros(cfg.h, dtype=dtype), np.zeros(cfg.h, dtype=dtype))


def init_params(cfg: ModelConfig, rng: Rng, dtype=np.float64) -> FactorCellParams:
    """Xavier-uniform weights, zero biases; Z_L/Z_R damped by 1/sqrt(r).

    The damping keeps A near zero at the start, so training begins from an
    effectively unadapted language model.
    """
    n = cfg.e + cfg.h
    cols = GATE_BLOCKS * cfg.h
    damp = 1.0 / np.sqrt(cfg.r)
    return FactorCellParams(
        cfg=cfg,
        embed=xavier_uniform(rng, cfg.vocab_size, cfg.e, (cfg.vocab_size, cfg.e), dtype),
        W=xavier_uniform(rng, n, cols, (n, cols), dtype),
        b=np.zeros(cols, dtype=dtype),
        Z_L=xavier_uniform(rng, cfg.m, cfg.r * n, (cfg.m, n, cfg.r), dtype, scale=damp),
        Z_R=xavier_uniform(rng, cfg.m, cfg.r * cols, (cfg.r, cols, cfg.m), dtype, scale=damp),
        proj_W=xavier_uniform(rng, cfg.feat_dim, cfg.m, (cfg.feat_dim, cfg.m), dtype),
        proj_b=np.zeros(cfg.m, dtype=dtype),
        out_W=xavier_uniform(rng, cfg.h, cfg.vocab_size, (cfg.h, cfg.vocab_size), dtype),
        out_b=np.zeros(cfg.vocab_size, dtype=dtype),
    )


def noise_context(m: int, rng: Rng, dtype=np.float64) -> np.ndarray:
    """i.i.d. standard-normal context, the language-only baseline."""
    return rng.normal(m).astype(dtype)


def project_context(features: np.ndarray, params: FactorCellParams) -> np.ndarray:
    """Affine map from raw scene features to the m-dim context."""
    features = np.asarray(features, dtype=params.dtype)
    return features @ params.proj_W + params.proj_b


def compute_adaptation(c: np.ndarray, Z_L: np.ndarray, Z_R: np.ndarray) -> np.ndarray:
    """A = L R with L[j,p] = sum_i c_i Z_L[i,j,p], R[p,k] = sum_i Z_R[p,k,i] c_i."""
    c = np.asarray(c)
    if c.ndim != 1:
        raise ShapeError(f"context must be a vector, got shape {c.shape}")
    m = c.shape[0]
    if Z_L.ndim != 3 or Z_L.shape[0] != m:
        raise ShapeError(f"Z_L shape {Z_L.shape} incompatible with context dim {m}")
    if Z_R.ndim != 3 or Z_R.shape[2] != m:
        raise ShapeError(f"Z_R shape {Z_R.shape} incompatible with context dim {m}")
    if Z_L.shape[2] != Z_R.shape[0]:
        raise ShapeError(f"rank mismatch: Z_L {Z_L.shape} vs Z_R {Z_R.shape}")
    L = np.einsum("i,ijp->jp", c, Z_L)
    R = np.einsum("pki,i->pk", Z_R, c)
    return L @ R


def adapted_weights(c: np.ndarray, params: FactorCellParams) -> np.ndarray:
    return params.W + compute_adaptation(
        np.asarray(c, dtype=params.dtype), params.Z_L, params.Z_R
    )


def _gates(z: np.ndarray, cc_prev: np.ndarray, h: int):
    g = np.tanh(z[..., :h])
    f = sigmoid(z[..., h : 2 * h])
    o = sigmoid(z[..., 2 * h :])
    cc = f * cc_prev + (1.0 - f) * g
    th = np.tanh(cc)
    return g, f, o, cc, th, o * th


def step(x_t: int, state: CellState, Wp: np.ndarray, params: FactorCellParams) -> CellState:
    """One recurrent step under a precomputed adapted weight matrix."""
    if not 0 <= x_t < params.cfg.vocab_size:
        raise ValueError(f"character id {x_t} outside vocabulary of size {params.cfg.vocab_size}")
    xh = np.concatenate([params.embed[x_t], state.h])
    z = xh @ Wp + params.b
    _, _, _, cc, _, h_new = _gates(z, state.cc, params.cfg.h)
    return CellState(h_new, cc)


def output_logprobs(h: np.ndarray, params: FactorCellParams) -> np.ndarray:
    """Log-softmax over the vocabulary for a hidden state (or batch of them)."""
    return log_softmax(h @ params.out_W + params.out_b, axis=-1)


@dataclass
class BatchCache:
    """Everything the backward pass needs from a teacher-forced forward."""

    inputs: np.ndarray    # (B, T) input char ids
    C: np.ndarray         # (B, m)
    features: np.ndarray | None
    L: np.ndarray         # (B, e+h, r)
    R: np.ndarray         # (B, r, 3h)
    Wp: np.ndarray        # (B, e+h, 3h)
    XH: np.ndarray        # (T, B, e+h)
    G: np.ndarray         # (T, B, h) candidate
    F: np.ndarray         # (T, B, h) forget gate
    O: np.ndarray         # (T, B, h) output gate
    TH: np.ndarray        # (T, B, h) tanh(cc)
    CC: np.ndarray        # (T+1, B, h) cell, CC[0] initial
    H: np.ndarray         # (T+1, B, h) hidden, H[0] initial
    logprobs: np.ndarray  # (T, B, V)


def _batch_adaptation(C: np.ndarray, params: FactorCellParams):
    L = np.einsum("bi,ijp->bjp", C, params.Z_L)
    R = np.einsum("pki,bi->bpk", params.Z_R, C)
    A = np.matmul(L, R)
    return L, R, A


def batch_forward(
    params: FactorCellParams,
    inputs: np.ndarray,
    C: np.ndarray | None = None,
    features: np.ndarray | None = None,
) -> BatchCache:
    """Teacher-forced forward over a padded batch of input-id rows.

    Context comes either directly as C (B, m) or as raw features (B, feat_dim)
    routed through the trainable projection; exactly one must be given.
    """
    if (C is None) == (features is None):
        raise ValueError("provide exactly one of C or features")
    cfg = params.cfg
    dtype = params.dtype
    if features is not None:
        features = np.asarray(features, dtype=dtype)
        if features.ndim != 2 or features.shape[1] != cfg.feat_dim:
            raise ShapeError(f"features shape {features.shape} != (B, {cfg.feat_dim})")
        C = features @ params.proj_W + params.proj_b
    else:
        C = np.asarray(C, dtype=dtype)
        if C.ndim != 2 or C.shape[1] != cfg.m:
            raise ShapeError(f"context shape {C.shape} != (B, {cfg.m})")
    B, T = inputs.shape
    h, e = cfg.h, cfg.e
    L, R, A = _batch_adaptation(C, params)
    Wp = params.W[None, :, :] + A

    XH = np.empty((T, B, e + h), dtype=dtype)
    G = np.empty((T, B, h), dtype=dtype)
    F = np.empty((T, B, h), dtype=dtype)
    O = np.empty((T, B, h), dtype=dtype)
    TH = np.empty((T, B, h), dtype=dtype)
    CC = np.zeros((T + 1, B, h), dtype=dtype)
    H = np.zeros((T + 1, B, h), dtype=dtype)
    logprobs = np.empty((T, B, cfg.vocab_size), dtype=dtype)

    X = params.embed[inputs]  # (B, T, e)
    for t in range(T):
        xh = np.concatenate([X[:, t, :], H[t]], axis=1)
        z = np.matmul(xh[:, None, :], Wp)[:, 0, :] + params.b
        g, f, o, cc, th, h_new = _gates(z, CC[t], h)
        XH[t], G[t], F[t], O[t], TH[t] = xh, g, f, o, th
        CC[t + 1], H[t + 1] = cc, h_new
        logprobs[t] = log_softmax(h_new @ params.out_W + params.out_b, axis=1)

    return BatchCache(inputs, C, features, L, R, Wp, XH, G, F, O, TH, CC, H, logprobs)


def batch_nll(cache: BatchCache, targets: np.ndarray, mask: np.ndarray):
    """(total NLL over unmasked target positions, number of positions)."""
    T, B, _ = cache.logprobs.shape
    picked = cache.logprobs[np.arange(T)[:, None], np.arange(B)[None, :], targets.T]
    total = -float(np.sum(picked * mask.T))
    return total, float(np.sum(mask))


def backward_from_hidden(
    cache: BatchCache,
    dH_steps: np.ndarray,
    params: FactorCellParams,
) -> dict[str, np.ndarray]:
    """Backprop through the recurrence given dLoss/dh_t for every step.

    `dH_steps` is (T, B, h). Returns a gradient dict covering every
    parameter array (output-layer entries stay zero; callers whose loss
    touches the logits add those separately). Projection gradients are zero
    when the cache was built from a direct context rather than features.
    """
    cfg = params.cfg
    dtype = params.dtype
    T, B, _ = dH_steps.shape
    h, e = cfg.h, cfg.e

    grads = {name: np.zeros_like(arr) for name, arr in params.to_dict().items()}
    dWp = np.zeros_like(cache.Wp)  # (B, e+h, 3h); doubles as dA per example
    dH_next = np.zeros((B, h), dtype=dtype)
    dCC_next = np.zeros((B, h), dtype=dtype)

    for t in reversed(range(T)):
        dh = dH_steps[t] + dH_next
        do = dh * cache.TH[t]
        dcc = dh * cache.O[t] * (1.0 - cache.TH[t] ** 2) + dCC_next
        df = dcc * (cache.CC[t] - cache.G[t])
        dg = dcc * (1.0 - cache.F[t])
        dCC_next = dcc * cache.F[t]

        dz = np.empty((B, GATE_BLOCKS * h), dtype=dtype)
        dz[:, :h] = dg * (1.0 - cache.G[t] ** 2)
        dz[:, h : 2 * h] = df * cache.F[t] * (1.0 - cache.F[t])
        dz[:, 2 * h :] = do * cache.O[t] * (1.0 - cache.O[t])

        grads["b"] += dz.sum(axis=0)
        dWp += cache.XH[t][:, :, None] * dz[:, None, :]
        dxh = np.matmul(cache.Wp, dz[:, :, None])[:, :, 0]
        np.add.at(grads["embed"], cache.inputs[:, t], dxh[:, :e])
        dH_next = dxh[:, e:]

    grads["W"] = dWp.sum(axis=0)
    dL = np.matmul(dWp, np.transpose(cache.R, (0, 2, 1)))
    dR = np.matmul(np.transpose(cache.L, (0, 2, 1)), dWp)
    grads["Z_L"] = np.einsum("bi,bjp->ijp", cache.C, dL)
    grads["Z_R"] = np.einsum("bpk,bi->pki", dR, cache.C)
    if cache.features is not None:
        dC = np.einsum("ijp,bjp->bi", params.Z_L, dL) + np.einsum(
            "pki,bpk->bi", params.Z_R, dR
        )
        grads["proj_W"] = cache.features.T @ dC
        grads["proj_b"] = dC.sum(axis=0)
    return grads


def backward(
    cache: BatchCache,
    targets: np.ndarray,
    mask: np.ndarray | None = None,
    params: FactorCellParams | None = None,
) -> dict[str, np.ndarray]:
    """Gradients of mean per-character NLL for every parameter array.

    `targets` is (B, T); `mask` marks the positions that count toward the
    loss (defaults to all).
    """
    assert params is not None, "backward needs the params used in the forward"
    dtype = params.dtype
    T, B, V = cache.logprobs.shape
    if mask is None:
        mask = np.ones((B, T), dtype=dtype)
    denom = float(np.sum(mask))
    if denom <= 0:
        raise ValueError("mask selects no target positions")
    scale = 1.0 / denom

    rows = np.arange(B)
    out_W = np.zeros_like(params.out_W)
    out_b = np.zeros_like(params.out_b)
    dH_steps = np.empty((T, B, params.cfg.h), dtype=dtype)
    for t in range(T):
        dlogits = np.exp(cache.logprobs[t])
        dlogits[rows, targets[:, t]] -= 1.0
        dlogits *= (mask[:, t] * scale)[:, None]
        out_W += cache.H[t + 1].T @ dlogits
        out_b += dlogits.sum(axis=0)
        dH_steps[t] = dlogits @ params.out_W.T

    grads = backward_from_hidden(cache, dH_steps, params)
    grads["out_W"] += out_W
    grads["out_b"] += out_b
    return grads


def forward(
    seq_ids: np.ndarray,
    params: FactorCellParams,
    *,
    c: np.ndarray | None = None,
    features: np.ndarray | None = None,
):
    """Score one target sequence (query chars ending with the EOQ id).

    Returns (logprobs, cache): logprobs[t] is the log-distribution that the
    model assigns at position t, whose target is seq_ids[t]. The final EOQ id
    is reused as the start-of-sequence input.
    """
    seq_ids = np.asarray(seq_ids, dtype=np.int64)
    if seq_ids.ndim != 1 or seq_ids.size == 0:
        raise ValueError("sequence must be a non-empty id vector")
    if seq_ids.size - 1 > params.cfg.max_len:
        raise ValueError(
            f"query length {seq_ids.size - 1} exceeds max_len {params.cfg.max_len}"
        )
    inputs = np.concatenate([seq_ids[-1:], seq_ids[:-1]])[None, :]
    kwargs = {}
    if features is not None:
        kwargs["features"] = np.asarray(features)[None, :]
    else:
        kwargs["C"] = np.asarray(c)[None, :]
    cache = batch_forward(params, inputs, **kwargs)
    return cache.logprobs[:, 0, :], cache


def sequence_nll(seq_ids, params, *, c=None, features=None) -> float:
    """Mean per-character NLL of one terminated sequence."""
    logprobs, _ = forward(seq_ids, params, c=c, features=features)
    t = np.arange(len(seq_ids))
    return -float(np.mean(logprobs[t, np.asarray(seq_ids, dtype=np.int64)]))


# --- finite-difference verification ----------------------------------------

def finite_difference_grads(loss_fn, arrays: dict[str, np.ndarray], step_size: float = 1e-5):
    """Central finite differences of loss_fn w.r.t. every array entry."""
    fd = {}
    for name, arr in arrays.items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step_size
            up = loss_fn()
            flat[i] = orig - step_size
            down = loss_fn()
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * step_size)
        fd[name] = g
    return fd


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-5)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


@dataclass
class GradCheckReport:
    errors: dict[str, float]
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(err < self.tolerance for err in self.errors.values())

    @property
    def worst(self) -> tuple[str, float]:
        name = max(self.errors, key=self.errors.get)
        return name, self.errors[name]


def grad_check(
    cfg: ModelConfig | None = None,
    rng: Rng | None = None,
    tolerance: float = 1e-4,
    step_size: float = 1e-5,
    _corrupt_sign: str | None = None,
) -> GradCheckReport:
    """Compare analytic gradients to central differences at small dims.

    Covers every parameter group; routing the context through raw features
    puts gradient on the adaptation tensors and the projection alike.
    """
    if cfg is None:
        cfg = ModelConfig(e=4, h=6, r=2, m=3, feat_dim=5, vocab_size=9, max_len=12)
    if rng is None:
        rng = Rng(0)
    params = init_params(cfg, rng, dtype=np.float64)
    B, T = 2, 5
    inputs = rng.integers(0, cfg.vocab_size, (B, T)).astype(np.int64)
    targets = rng.integers(0, cfg.vocab_size, (B, T)).astype(np.int64)
    mask = np.ones((B, T))
    mask[1, T - 2 :] = 0.0  # exercise padded positions
    features = rng.normal((B, cfg.feat_dim))

    def loss_fn() -> float:
        cache = batch_forward(params, inputs, features=features)
        total, count = batch_nll(cache, targets, mask)
        return total / count

    loss = loss_fn()
    if not np.isfinite(loss):
        raise NumericError(f"non-finite loss {loss} in gradient check")
    cache = batch_forward(params, inputs, features=features)
    analytic = backward(cache, targets, mask, params=params)
    if _corrupt_sign is not None:
        analytic[_corrupt_sign] = -analytic[_corrupt_sign]
    numeric = finite_difference_grads(loss_fn, params.to_dict(), step_size)
    errors = {
        name: max_relative_error(analytic[name], numeric[name])
        for name in params.FIELDS
    }
    return GradCheckReport(errors, tolerance)
