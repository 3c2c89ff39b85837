"""Utterance manifests and per-source corpus statistics.

A manifest is UTF-8 JSON Lines (optionally gzip-compressed when the file
name ends in ``.gz``), one object per utterance with the fields of
:class:`UtteranceRecord`.
"""

from __future__ import annotations

import gzip
import json
import logging
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Optional

log = logging.getLogger(__name__)

STYLES = ("read", "spontaneous", "unknown")
FIELDS = ("utt_id", "source", "duration_s", "audio_path", "transcript_char",
          "transcript_pinyin", "style", "channel")


class ManifestError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class UtteranceRecord:
    utt_id: str
    source: str
    duration_s: float
    audio_path: Optional[str] = None
    transcript_char: Optional[str] = None
    transcript_pinyin: Optional[str] = None
    style: str = "unknown"
    channel: str = ""

    def to_json(self):
        return json.dumps({k: v for k, v in asdict(self).items() if v is not None}, ensure_ascii=False)


@dataclass(frozen=True)
class CorpusStats:
    source: str
    hours: float
    num_utts: int
    spu: float


def round_half_up(x, places=2):
    q = Decimal(1).scaleb(-places)
    return float(Decimal(repr(float(x))).quantize(q, rounding=ROUND_HALF_UP))


def open_text(path, mode="r"):
    if str(path).endswith(".gz"):
        return gzip.open(path, mode + "t", encoding="utf-8")
    return open(path, mode, encoding="utf-8")


def parse_record(obj, lineno=None):
    if not isinstance(obj, dict):
        raise ManifestError("record is not an object", lineno)
    unknown = sorted(set(obj) - set(FIELDS))
    if unknown:
        log.warning("line %s: ignoring unknown fields %s", lineno, unknown)
    for key in ("utt_id", "source", "duration_s"):
        if key not in obj:
            raise ManifestError(f"missing required field {key!r}", lineno)
    try:
        duration = float(obj["duration_s"])
    except (TypeError, ValueError):
        raise ManifestError(f"duration_s {obj['duration_s']!r} is not a number", lineno) from None
    if not math.isfinite(duration) or duration <= 0:
        raise ManifestError(f"duration_s must be finite and positive, got {obj['duration_s']!r}", lineno)
    style = obj.get("style") or "unknown"
    if style not in STYLES:
        raise ManifestError(f"style {style!r} not in {STYLES}", lineno)
    return UtteranceRecord(
        utt_id=str(obj["utt_id"]), source=str(obj["source"]), duration_s=duration,
        audio_path=obj.get("audio_path"), transcript_char=obj.get("transcript_char"),
        transcript_pinyin=obj.get("transcript_pinyin"), style=style, channel=str(obj.get("channel") or ""))


def load_manifest(path):
    records = []
    first_line = {}
    with open_text(path) as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"malformed record ({exc.msg})", lineno) from None
            rec = parse_record(obj, lineno)
            if rec.utt_id in first_line:
                raise ManifestError(
                    f"duplicate utt_id {rec.utt_id!r} (first seen on line {first_line[rec.utt_id]})", lineno)
            first_line[rec.utt_id] = lineno
            records.append(rec)
    return records


def write_manifest(path, records):
    with open_text(path, "w") as f:
        for rec in records:
            f.write(rec.to_json() + "\n")


def _stats(source, durations):
    seconds = math.fsum(durations)
    hours = seconds / 3600.0
    return CorpusStats(source, round_half_up(hours), len(durations), round_half_up(seconds / len(durations)))


def compute_stats(records, group_by_source=True):
    """Per-source rows (first-appearance order) plus a totals row over all records."""
    records = list(records)
    if not records:
        raise ValueError("no records")
    rows = []
    if group_by_source:
        groups = OrderedDict()
        for rec in records:
            groups.setdefault(rec.source, []).append(rec.duration_s)
        rows = [_stats(src, durs) for src, durs in groups.items()]
    return rows, _stats("Total", [r.duration_s for r in records])


def filter_by_duration(records, max_s):
    if not max_s > 0:
        raise ValueError("max_s must be positive")
    kept, dropped = [], []
    for rec in records:
        (kept if rec.duration_s <= max_s else dropped).append(rec)
    return kept, dropped


def format_stats_table(rows, totals):
    header = f"{'Source':<32}{'Hours':>10}{'# Utt.':>10}{'SPU':>8}"
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(f"{r.source:<32}{r.hours:>10.2f}{r.num_utts:>10,}{r.spu:>8.2f}")
    if rows:
        lines.append("-" * len(header))
    lines.append(f"{totals.source:<32}{totals.hours:>10.2f}{totals.num_utts:>10,}{totals.spu:>8.2f}")
    return "\n".join(lines)
