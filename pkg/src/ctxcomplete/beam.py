"""Top-k completion of a character prefix via length-synchronous beam search.

Hypotheses are scored by raw total log-probability of the generated suffix
(terminator emission included, no length normalization by default). A
hypothesis that emits the end-of-query token moves to a finished pool; at
the length cap only the end-of-query continuation is scored, so every
surviving hypothesis terminates. Ties break lexicographically.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from .data import OutOfVocabularyError, Vocab
from .factorcell import (
    CellState,
    FactorCellParams,
    adapted_weights,
    initial_state,
    output_logprobs,
    step,
)


@dataclass(frozen=True)
class Completion:
    text: str     # full query, prefix included, terminator stripped
    logprob: float  # total log-prob of the suffix given prefix and context
    rank: int     # 1-based

    def to_dict(self) -> dict:
        return {"text": self.text, "logprob": self.logprob, "rank": self.rank}


@dataclass
class BeamParams:
    width: int = 10
    k: int = 10
    max_len: int = 50
    length_normalize: bool = False  # rank by logprob / suffix length instead

    def __post_init__(self):
        if not self.width >= self.k >= 1:
            raise ValueError(f"need width >= k >= 1, got width={self.width} k={self.k}")
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")


@dataclass
class _Hyp:
    text: str
    logprob: float
    state: CellState


def _encode_prefix(prefix: str, vocab: Vocab) -> list[int]:
    ids = []
    for ch in prefix:
        if ch not in vocab:
            raise OutOfVocabularyError(ch)
        ids.append(vocab.char_id(ch))
    return ids


def _run_prefix(ids: list[int], Wp: np.ndarray, params: FactorCellParams) -> CellState:
    state = initial_state(params.cfg, dtype=params.dtype)
    for x in ids:
        state = step(x, state, Wp, params)
    return state


def _sort_key(length_normalize: bool, prefix_len: int):
    if not length_normalize:
        return lambda pair: (-pair[0], pair[1])
    # suffix length counts the terminator, so an immediate stop divides by 1
    return lambda pair: (-pair[0] / (len(pair[1]) - prefix_len + 1), pair[1])


def complete(
    prefix: str,
    c: np.ndarray,
    params: FactorCellParams,
    vocab: Vocab,
    beam: BeamParams | None = None,
) -> list[Completion]:
    """Top-k completions of `prefix` under context vector `c`.

    Returns at most k completions sorted by logprob descending (ties by
    text). With width >= |emittable|^remaining no candidate is ever pruned,
    so the result equals exhaustive enumeration.
    """
    if beam is None:
        beam = BeamParams()
    if len(prefix) >= beam.max_len:
        raise ValueError(f"prefix length {len(prefix)} must be < max_len {beam.max_len}")
    ids = _encode_prefix(prefix, vocab)
    c = np.asarray(c, dtype=params.dtype)
    Wp = adapted_weights(c, params)
    eoq = vocab.eoq_id
    emit = [int(i) for i in vocab.emittable_ids() if int(i) != eoq]
    start = _Hyp(prefix, 0.0, _run_prefix([eoq] + ids, Wp, params))

    key = _sort_key(beam.length_normalize, len(prefix))
    finished: list[tuple[float, str]] = []
    live = [start]
    while live:
        at_cap = len(live[0].text) >= beam.max_len
        continuations: list[tuple[float, str, int, _Hyp]] = []
        for hyp in live:
            lp = output_logprobs(hyp.state.h, params)
            finished.append((hyp.logprob + float(lp[eoq]), hyp.text))
            if not at_cap:
                for tok in emit:
                    continuations.append(
                        (hyp.logprob + float(lp[tok]), hyp.text + vocab.tokens[tok], tok, hyp)
                    )
        kept = heapq.nsmallest(
            beam.width, continuations, key=lambda cand: key((cand[0], cand[1]))
        )
        if not beam.length_normalize and len(finished) >= beam.k:
            # raw scores only fall with length, so a live hypothesis already
            # below the k-th finished score can never place; == survives
            # because a descendant may still win its lexicographic tie
            kth = heapq.nlargest(beam.k, (score for score, _ in finished))[-1]
            kept = [cand for cand in kept if cand[0] >= kth]
        live = [
            _Hyp(text, lp, step(tok, hyp.state, Wp, params))
            for lp, text, tok, hyp in kept
        ]

    finished.sort(key=key)
    return [
        Completion(text, lp, rank)
        for rank, (lp, text) in enumerate(finished[: beam.k], start=1)
    ]


def score_query(
    q: str,
    prefix: str,
    c: np.ndarray,
    params: FactorCellParams,
    vocab: Vocab,
) -> float:
    """Teacher-forced log-prob of q's suffix after `prefix`, terminator included.

    Accumulates in the same per-character order as `complete`, so the score
    of a returned completion reproduces its logprob exactly.
    """
    if not q.startswith(prefix):
        raise ValueError(f"query {q!r} does not extend prefix {prefix!r}")
    prefix_ids = _encode_prefix(prefix, vocab)
    suffix_ids = _encode_prefix(q[len(prefix) :], vocab)
    c = np.asarray(c, dtype=params.dtype)
    Wp = adapted_weights(c, params)
    state = _run_prefix([vocab.eoq_id] + prefix_ids, Wp, params)
    total = 0.0
    for x in suffix_ids:
        total += float(output_logprobs(state.h, params)[x])
        state = step(x, state, Wp, params)
    total += float(output_logprobs(state.h, params)[vocab.eoq_id])
    return total
