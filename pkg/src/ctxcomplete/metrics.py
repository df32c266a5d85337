"""Evaluation suite: per-character perplexity, MRR over top-k completions at
several prefix fractions, and multilabel F1, each under an image-feature or
a noise context.

Perplexity pools negative log-likelihood over every character in the split
(terminator included) before exponentiating. MRR gives a query 1/rank of
its exact match among the top k completions, 0 when absent. Noise contexts
are drawn one per query from a seeded stream, so reports are reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .beam import BeamParams, complete
from .data import ClassCatalog, Vocab
from .factorcell import FactorCellParams, batch_forward, batch_nll
from .instances import InstanceHeadParams, batch_pooled, encode_id_batch
from .tensors import Rng, sigmoid
from .training import assemble_batch

CONTEXT_MODES = ("image", "noise")


def _check_mode(context_mode: str) -> None:
    if context_mode not in CONTEXT_MODES:
        raise ValueError(f"context_mode must be one of {CONTEXT_MODES}, got {context_mode!r}")


def perplexity_from_nll(total_nll: float, n_chars: float) -> float:
    if n_chars <= 0:
        raise ValueError("perplexity needs at least one scored character")
    return float(np.exp(total_nll / n_chars))


def perplexity(
    params: FactorCellParams,
    records,
    vocab: Vocab,
    context_mode: str = "image",
    rng: Rng | None = None,
    chunk_size: int = 64,
) -> float:
    """exp(mean per-character NLL) pooled over the whole record list."""
    _check_mode(context_mode)
    if not records:
        raise ValueError("perplexity needs a non-empty dataset")
    if context_mode == "noise" and rng is None:
        rng = Rng(0)
    total, count = 0.0, 0.0
    for lo in range(0, len(records), chunk_size):
        chunk = records[lo : lo + chunk_size]
        inputs, targets, mask = assemble_batch(
            [vocab.encode(r.query) for r in chunk], vocab, params.dtype
        )
        if context_mode == "image":
            feats = np.stack([r.features for r in chunk]).astype(params.dtype)
            cache = batch_forward(params, inputs, features=feats)
        else:
            C = np.stack([rng.normal(params.cfg.m) for _ in chunk]).astype(params.dtype)
            cache = batch_forward(params, inputs, C=C)
        t, c = batch_nll(cache, targets, mask)
        total += t
        count += c
    return perplexity_from_nll(total, count)


def prefix_length(query: str, fraction: float) -> int:
    """floor(fraction * len), floored at one revealed character."""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"prefix fraction must lie in (0, 1), got {fraction}")
    return max(1, int(fraction * len(query)))


def mrr_from_ranks(ranks) -> float:
    """Mean reciprocal rank; None marks a query missing from the top k."""
    ranks = list(ranks)
    if not ranks:
        raise ValueError("MRR needs at least one query")
    return float(np.mean([0.0 if r is None else 1.0 / r for r in ranks]))


def completion_rank(completions, query: str) -> int | None:
    """1-based rank of the exact true query among completions, else None."""
    for comp in completions:
        if comp.text == query:
            return comp.rank
    return None


def mrr(
    params: FactorCellParams,
    records,
    vocab: Vocab,
    fraction: float,
    context_mode: str = "image",
    rng: Rng | None = None,
    k: int = 10,
) -> float:
    """MRR of the true query among top-k completions of its revealed prefix."""
    _check_mode(context_mode)
    if not records:
        raise ValueError("MRR needs a non-empty dataset")
    if context_mode == "noise" and rng is None:
        rng = Rng(0)
    beam = BeamParams(width=k, k=k, max_len=params.cfg.max_len)
    ranks = []
    for rec in records:
        if len(rec.query) < 2:
            raise ValueError(f"record {rec.id!r}: MRR needs queries of length >= 2")
        if context_mode == "image":
            c = np.asarray(rec.features, dtype=params.dtype) @ params.proj_W + params.proj_b
        else:
            c = rng.normal(params.cfg.m).astype(params.dtype)
        comps = complete(rec.query[: prefix_length(rec.query, fraction)], c, params, vocab, beam)
        ranks.append(completion_rank(comps, rec.query))
    return mrr_from_ranks(ranks)


def f1(predictions: np.ndarray, truth: np.ndarray, averaging: str = "micro") -> float:
    """F1 over thresholded label vectors, stacked (N, n_classes).

    Micro pools counts over every (example, class) cell; macro averages
    per-class F1, counting classes with no positives anywhere as 0.
    """
    predictions = np.asarray(predictions, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if predictions.shape != truth.shape or predictions.ndim != 2:
        raise ValueError(
            f"prediction/truth shapes must match as (N, K): "
            f"{predictions.shape} vs {truth.shape}"
        )
    tp = predictions * truth
    fp = predictions * (1.0 - truth)
    fn = (1.0 - predictions) * truth
    if averaging == "micro":
        denom = 2.0 * tp.sum() + fp.sum() + fn.sum()
        return float(2.0 * tp.sum() / denom) if denom > 0 else 0.0
    if averaging == "macro":
        denom = 2.0 * tp.sum(axis=0) + fp.sum(axis=0) + fn.sum(axis=0)
        per_class = np.divide(
            2.0 * tp.sum(axis=0), denom, out=np.zeros_like(denom), where=denom > 0
        )
        return float(per_class.mean())
    raise ValueError(f"averaging must be 'micro' or 'macro', got {averaging!r}")


def head_predictions(
    head: InstanceHeadParams,
    records,
    vocab: Vocab,
    threshold: float = 0.5,
    chunk_size: int = 64,
) -> np.ndarray:
    """Thresholded instance predictions for a record list, stacked (N, K)."""
    rows = []
    for lo in range(0, len(records), chunk_size):
        chunk = records[lo : lo + chunk_size]
        inputs, mask = encode_id_batch(
            [vocab.encode(r.query) for r in chunk], vocab.pad_id, dtype=head.dtype
        )
        pooled, _ = batch_pooled(head, inputs, mask)
        probs = sigmoid(pooled @ head.dense_W + head.dense_b)
        rows.append((probs >= threshold).astype(np.float64))
    return np.concatenate(rows, axis=0)


@dataclass
class EvalConfig:
    fractions: tuple[float, ...] = (0.2, 0.4, 0.6, 0.8)
    k: int = 10
    threshold: float = 0.5
    seed: int = 0
    max_mrr_queries: int | None = None  # cap the beam-search workload; None = all


@dataclass
class EvalReport:
    perplexity_image: float
    perplexity_noise: float
    mrr_by_prefix_fraction: dict[float, dict[str, float]]
    f1_micro: float
    f1_macro: float
    counts: dict[str, int]

    def to_dict(self) -> dict:
        return {
            "perplexity_image": self.perplexity_image,
            "perplexity_noise": self.perplexity_noise,
            "mrr_by_prefix_fraction": {
                str(frac): dict(modes) for frac, modes in self.mrr_by_prefix_fraction.items()
            },
            "f1_micro": self.f1_micro,
            "f1_macro": self.f1_macro,
            "counts": dict(self.counts),
        }

    def save(self, path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )

    def format_table(self) -> str:
        lines = [
            "metric                      image      noise",
            f"perplexity             {self.perplexity_image:10.4f} {self.perplexity_noise:10.4f}",
        ]
        for frac in sorted(self.mrr_by_prefix_fraction):
            modes = self.mrr_by_prefix_fraction[frac]
            lines.append(
                f"mrr @ prefix {frac:<4.2} {' ' * 6}{modes['image']:10.4f} {modes['noise']:10.4f}"
            )
        lines.append(f"f1 micro               {self.f1_micro:10.4f}")
        lines.append(f"f1 macro               {self.f1_macro:10.4f}")
        lines.append(
            "queries: "
            + ", ".join(f"{k}={v}" for k, v in sorted(self.counts.items()))
        )
        return "\n".join(lines)


def run_eval(
    params: FactorCellParams,
    head: InstanceHeadParams | None,
    records,
    vocab: Vocab,
    catalog: ClassCatalog | None = None,
    cfg: EvalConfig | None = None,
) -> EvalReport:
    """All metrics for one trained model, image and noise context modes.

    The noise mode feeds the same model a fresh seeded noise context per
    query, the language-only baseline. F1 is skipped (reported as 0 with
    count 0) when no head is given.
    """
    if cfg is None:
        cfg = EvalConfig()
    if not records:
        raise ValueError("evaluation needs a non-empty dataset")
    ppl_img = perplexity(params, records, vocab, "image")
    ppl_noise = perplexity(params, records, vocab, "noise", rng=Rng(cfg.seed))

    mrr_records = records
    if cfg.max_mrr_queries is not None:
        mrr_records = records[: cfg.max_mrr_queries]
    mrr_records = [r for r in mrr_records if len(r.query) >= 2]
    by_fraction: dict[float, dict[str, float]] = {}
    for frac in cfg.fractions:
        by_fraction[frac] = {
            "image": mrr(params, mrr_records, vocab, frac, "image", k=cfg.k),
            "noise": mrr(params, mrr_records, vocab, frac, "noise", rng=Rng(cfg.seed), k=cfg.k),
        }

    if head is not None and catalog is not None:
        preds = head_predictions(head, records, vocab, cfg.threshold)
        truth = np.stack([catalog.label_vector(r.instances) for r in records])
        f1_micro = f1(preds, truth, "micro")
        f1_macro = f1(preds, truth, "macro")
        n_f1 = len(records)
    else:
        f1_micro, f1_macro, n_f1 = 0.0, 0.0, 0

    return EvalReport(
        perplexity_image=ppl_img,
        perplexity_noise=ppl_noise,
        mrr_by_prefix_fraction=by_fraction,
        f1_micro=f1_micro,
        f1_macro=f1_macro,
        counts={"perplexity": len(records), "mrr": len(mrr_records), "f1": n_f1},
    )
