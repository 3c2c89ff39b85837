"""Character/syllable error rates with read vs. spontaneous breakdown."""

from __future__ import annotations

import logging
import unicodedata
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Optional

log = logging.getLogger(__name__)

STYLES = ("read", "spontaneous")


def is_punctuation(ch):
    """Unicode punctuation (P*) and symbol (S*) categories are stripped in character mode."""
    return unicodedata.category(ch)[0] in "PS"


def tokenize(text, mode="character", normalize_width=True):
    """Character mode: one token per code point after NFKC width folding and
    dropping whitespace and punctuation.  Syllable mode: whitespace split."""
    if mode == "syllable":
        return text.split()
    if mode != "character":
        raise ValueError(f"unknown tokenizer mode {mode!r}")
    if normalize_width:
        text = unicodedata.normalize("NFKC", text)
    return [ch for ch in text if not ch.isspace() and not is_punctuation(ch)]


def edit_distance(ref, hyp):
    """Unit-cost Levenshtein distance with a (sub, del, ins) breakdown.

    The breakdown follows one optimal alignment; on equal cost the
    backtrace prefers match/substitution, then deletion, then insertion.
    """
    ref, hyp = list(ref), list(hyp)
    n, m = len(ref), len(hyp)
    prev = list(range(m + 1))
    table = [prev]
    for i in range(1, n + 1):
        row = [i] + [0] * m
        r = ref[i - 1]
        for j in range(1, m + 1):
            diag = prev[j - 1] + (r != hyp[j - 1])
            up = prev[j] + 1
            left = row[j - 1] + 1
            row[j] = min(diag, up, left)
        table.append(row)
        prev = row
    i, j = n, m
    sub = dele = ins = 0
    while i > 0 or j > 0:
        cost = table[i][j]
        if i > 0 and j > 0 and cost == table[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]):
            sub += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif i > 0 and cost == table[i - 1][j] + 1:
            dele += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return table[n][m], sub, dele, ins


@dataclass
class ScoredPair:
    utt_id: str
    ref: list
    hyp: list
    style: str = "read"
    sub: Optional[int] = None
    dele: Optional[int] = None
    ins: Optional[int] = None

    def __post_init__(self):
        if self.sub is None:
            _, self.sub, self.dele, self.ins = edit_distance(self.ref, self.hyp)

    @property
    def errors(self):
        return self.sub + self.dele + self.ins


def round_rate(x):
    return float(Decimal(repr(float(x))).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


@dataclass
class ErrorReport:
    track: str
    rate_read: Optional[float]
    rate_spont: Optional[float]
    rate_average: float
    utt_count: int
    ref_tokens: int = 0
    errors: int = 0
    counts: dict = field(default_factory=dict)


def _pooled(pairs):
    tokens = sum(len(p.ref) for p in pairs)
    errors = sum(p.errors for p in pairs)
    return errors, tokens


def error_rate(pairs, tokenizer="character", macro=False):
    """Pooled rate 100 * sum(edits) / sum(ref tokens), per style and overall.

    ``macro=True`` averages per-utterance rates instead (not the default).
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("no scored pairs")
    track = "character" if tokenizer == "character" else "pinyin"

    def rate(subset):
        if not subset:
            return None
        if macro:
            per = [100.0 * p.errors / len(p.ref) for p in subset if p.ref]
            return round_rate(sum(per) / len(per)) if per else None
        errors, tokens = _pooled(subset)
        if tokens == 0:
            return None
        return round_rate(100.0 * errors / tokens)

    read = [p for p in pairs if p.style == "read"]
    spont = [p for p in pairs if p.style == "spontaneous"]
    errors, tokens = _pooled(pairs)
    counts = {"sub": sum(p.sub for p in pairs), "del": sum(p.dele for p in pairs),
              "ins": sum(p.ins for p in pairs)}
    return ErrorReport(track, rate(read), rate(spont), rate(pairs), len(pairs), tokens, errors, counts)


def relative_improvement(baseline_rate, system_rate):
    if not baseline_rate > 0:
        raise ValueError("baseline rate must be positive")
    return round_rate(100.0 * (baseline_rate - system_rate) / baseline_rate)


def read_transcripts(path):
    """``utt_id<space>text`` per line; blank lines skipped."""
    out = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            utt, _, text = line.partition(" ")
            if utt in out:
                raise ValueError(f"{path}:{lineno}: duplicate utterance {utt!r}")
            out[utt] = text
    return out


def score_transcripts(refs, hyps, mode="character", styles=None, intersect=False):
    """Pair references with hypotheses.

    A reference without a hypothesis counts as all deletions (warned), or is
    dropped when ``intersect`` is set.  Hypotheses without a reference are
    an error.
    """
    extra = sorted(set(hyps) - set(refs))
    if extra:
        raise ValueError(f"hypotheses without reference: {extra[:5]}")
    styles = styles or {}
    pairs = []
    for utt, text in refs.items():
        if utt not in hyps:
            if intersect:
                continue
            log.warning("no hypothesis for %s; counting all reference tokens as deletions", utt)
        ref = tokenize(text, mode)
        hyp = tokenize(hyps.get(utt, ""), mode)
        pairs.append(ScoredPair(utt, ref, hyp, styles.get(utt, "read")))
    return pairs


TRACK_NAMES = {"character": "Hakka Character (CER)", "pinyin": "Hakka Pinyin (SER)"}


def _fmt(x):
    return "-" if x is None else f"{x:.2f}"


def format_report(reports, baseline=None):
    """Text table with Read / Spont. / Average columns, plus a comparison
    block (Baseline, System, Rel. Improve.) when ``baseline`` rates are given."""
    header = f"{'Track':<26}{'Read':>8}{'Spont.':>8}{'Average':>9}{'#Utt.':>8}"
    lines = [header, "-" * len(header)]
    for r in reports:
        lines.append(f"{TRACK_NAMES.get(r.track, r.track):<26}{_fmt(r.rate_read):>8}"
                     f"{_fmt(r.rate_spont):>8}{_fmt(r.rate_average):>9}{r.utt_count:>8}")
    if baseline:
        lines.append("")
        sub = f"{'Track':<26}{'Baseline':>9}{'System':>8}{'Rel. Improve.':>15}"
        lines += [sub, "-" * len(sub)]
        for r in reports:
            if r.track in baseline:
                b = baseline[r.track]
                lines.append(f"{TRACK_NAMES.get(r.track, r.track):<26}{b:>9.2f}{r.rate_average:>8.2f}"
                             f"{relative_improvement(b, r.rate_average):>15.2f}")
    return "\n".join(lines)
