"""N-best rescoring with an interpolated recurrent LM."""

from __future__ import annotations

from typing import NamedTuple

from .lattice import nbest


class Rescored(NamedTuple):
    words: tuple
    score: float
    acoustic: float
    lm_ngram: float
    lm_rnn: float
    first_pass_rank: int


def rescore(lattice, ngram, rnn=None, lam=0.5, k=50, acoustic_scale=1.0):
    """Best hypothesis after replacing each k-best path's LM score with
    ``lam * log P_rnn + (1 - lam) * log P_ngram``.

    Returns ``(best, all_rescored)``; ties go to the lexicographically
    smaller word sequence.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    if k < 1:
        raise ValueError("k must be >= 1")
    if not lattice.arcs:
        raise ValueError("empty lattice")
    if lam > 0 and rnn is None:
        raise ValueError("a recurrent LM is required when lambda > 0")
    hyps = nbest(lattice, k, acoustic_scale)
    if not hyps:
        raise ValueError("lattice has no complete path")
    out = []
    for rank, h in enumerate(hyps):
        ng = ngram.sentence_logprob(h.words)
        if lam > 0:
            rn = rnn.sentence_logprob(h.words)
            lm = lam * rn + (1.0 - lam) * ng
        else:
            rn = float("nan")
            lm = ng
        out.append(Rescored(h.words, acoustic_scale * h.acoustic + lm, h.acoustic, ng, rn, rank))
    out.sort(key=lambda r: (-r.score, r.words))
    return out[0], out
