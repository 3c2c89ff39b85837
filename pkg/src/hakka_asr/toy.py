"""Synthetic fixtures: the corpus-statistics manifest and a tone-speech toy ASR task.

The toy task has eight syllables, each realised as two pdf states; pdf 0
is silence.  Every pdf state is a pure tone at its own frequency, so MFCCs
separate the states easily and the whole pipeline trains in seconds.
Sentences come from a fixed Markov chain over syllables so that the
language models have structure to learn.
"""

from __future__ import annotations

import json
import math
import os

import numpy as np
from scipy.io import wavfile

from .corpus import UtteranceRecord, write_manifest

TABLE1_SOURCES = (
    ("Official Dataset (train)", 59.43, 20591, "lavalier"),
    ("Official Dataset (pilot-test)", 10.01, 3595, "zoom"),
    ("Hakka Dictionary", 5.84, 15250, "studio"),
    ("HAC", 11.26, 4216, "mixed"),
)

SYLLABLES = (("客", "hag2"), ("家", "ga24"), ("人", "ngin11"), ("話", "fa55"),
             ("好", "ho31"), ("食", "siid5"), ("水", "sui31"), ("山", "san24"))
STATES_PER_SYLLABLE = 2
NUM_PDFS = 1 + STATES_PER_SYLLABLE * len(SYLLABLES)
SAMPLE_RATE = 16000
FRAME_SHIFT = 160
FRAME_WINDOW = 400


def exact_durations(rng, total_ms, n, spread=0.35):
    """``n`` positive millisecond durations that sum to exactly ``total_ms``."""
    raw = rng.uniform(1.0 - spread, 1.0 + spread, size=n)
    ms = np.floor(raw / raw.sum() * total_ms).astype(np.int64)
    ms = np.maximum(ms, 1)
    diff = int(total_ms - ms.sum())
    order = rng.permutation(n)
    i = 0
    while diff != 0:
        j = order[i % n]
        step = 1 if diff > 0 else -1
        if ms[j] + step >= 1:
            ms[j] += step
            diff -= step
        i += 1
    return ms


def table1_records(seed=0):
    rng = np.random.Generator(np.random.PCG64(seed))
    records = []
    for source, hours, n, channel in TABLE1_SOURCES:
        tag = "".join(w[0] for w in source.replace("(", "").split()).lower()
        total_ms = int(round(hours * 3600 * 1000))
        for i, ms in enumerate(exact_durations(rng, total_ms, n)):
            records.append(UtteranceRecord(f"{tag}-{i:05d}", source, int(ms) / 1000.0, channel=channel))
    return records


def pdf_frequency(pdf):
    return 350.0 + 330.0 * pdf


def pdf_states(syllable):
    return [1 + STATES_PER_SYLLABLE * syllable + s for s in range(STATES_PER_SYLLABLE)]


def unit_of_pdf():
    """pdf -> syllable index (``None`` for silence)."""
    return [None] + [s for s in range(len(SYLLABLES)) for _ in range(STATES_PER_SYLLABLE)]


def transition_matrix():
    k = len(SYLLABLES)
    m = np.full((k, k), 0.02)
    for i in range(k):
        m[i, (i + 1) % k] = 1.0
        m[i, (i + 3) % k] = 0.6
        m[i, i] = 0.0
    return m / m.sum(axis=1, keepdims=True)


def sample_sentence(rng, min_len=3, max_len=6):
    m = transition_matrix()
    n = int(rng.integers(min_len, max_len + 1))
    out = [int(rng.integers(len(SYLLABLES)))]
    while len(out) < n:
        out.append(int(rng.choice(len(SYLLABLES), p=m[out[-1]])))
    return out


def synthesize(syllables, rng, snr_db=25.0, state_frames=(8, 13), sil_frames=10):
    """Waveform plus the frame-level pdf alignment at a 10 ms shift."""
    segments = [(0, sil_frames)]
    for s in syllables:
        for pdf in pdf_states(s):
            segments.append((pdf, int(rng.integers(state_frames[0], state_frames[1] + 1))))
    segments.append((0, sil_frames))
    labels_per_sample = np.concatenate([np.full(n * FRAME_SHIFT, pdf) for pdf, n in segments])
    labels_per_sample = np.concatenate([labels_per_sample, np.zeros(FRAME_WINDOW - FRAME_SHIFT, dtype=int)])
    t = np.arange(labels_per_sample.size) / SAMPLE_RATE
    signal = np.zeros_like(t)
    phase = rng.uniform(0, 2 * math.pi)
    for pdf in np.unique(labels_per_sample):
        if pdf == 0:
            continue
        mask = labels_per_sample == pdf
        signal[mask] = 0.5 * np.sin(2 * math.pi * pdf_frequency(pdf) * t[mask] + phase)
    noise_power = 0.125 / (10 ** (snr_db / 10))
    signal = signal + rng.standard_normal(signal.size) * math.sqrt(noise_power)
    signal = np.clip(signal, -1.0, 1.0)
    T = (signal.size - FRAME_WINDOW) // FRAME_SHIFT + 1
    centers = np.arange(T) * FRAME_SHIFT + FRAME_WINDOW // 2
    return signal, labels_per_sample[centers]


def chars(syllables):
    return "".join(SYLLABLES[s][0] for s in syllables)


def pinyin(syllables):
    return " ".join(SYLLABLES[s][1] for s in syllables)


def make_toy_corpus(workdir, num_utts=20, seed=0, lm_sentences=400, read_every=4):
    """Write wav files, a manifest, frame alignments, reference transcripts
    and an LM text corpus under ``workdir``.  Returns the manifest path."""
    rng = np.random.Generator(np.random.PCG64(seed))
    wav_dir = os.path.join(workdir, "wav")
    os.makedirs(wav_dir, exist_ok=True)
    records, ali_lines, ref_char, ref_pin = [], [], [], []
    for i in range(num_utts):
        utt = f"toy{i:03d}"
        style = "read" if i % read_every == 0 else "spontaneous"
        syl = sample_sentence(rng)
        wave, labels = synthesize(syl, rng, snr_db=30.0 if style == "read" else 18.0)
        path = os.path.join(wav_dir, utt + ".wav")
        wavfile.write(path, SAMPLE_RATE, (wave * 32767).astype(np.int16))
        records.append(UtteranceRecord(utt, "toy", wave.size / SAMPLE_RATE, os.path.relpath(path, workdir),
                                       chars(syl), pinyin(syl), style, "synthetic"))
        ali_lines.append(utt + " " + " ".join(str(int(x)) for x in labels))
        ref_char.append(f"{utt} {chars(syl)}")
        ref_pin.append(f"{utt} {pinyin(syl)}")
    manifest = os.path.join(workdir, "manifest.jsonl")
    write_manifest(manifest, records)
    _write_lines(os.path.join(workdir, "alignments.txt"), ali_lines)
    _write_lines(os.path.join(workdir, "ref_char.txt"), ref_char)
    _write_lines(os.path.join(workdir, "ref_pinyin.txt"), ref_pin)
    _write_lines(os.path.join(workdir, "lm_corpus.txt"), [chars(sample_sentence(rng)) for _ in range(lm_sentences)])
    with open(os.path.join(workdir, "lexicon.json"), "w", encoding="utf-8") as f:
        json.dump({"pdf_to_word": [None if u is None else SYLLABLES[u][0] for u in unit_of_pdf()],
                   "pronunciation": {c: p for c, p in SYLLABLES}}, f, ensure_ascii=False, indent=1)
    return manifest


def _write_lines(path, lines):
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def read_alignments(path):
    out = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.split()
            if not parts:
                continue
            try:
                out[parts[0]] = np.array([int(x) for x in parts[1:]], dtype=np.int64)
            except ValueError:
                raise ValueError(f"{path}:{lineno}: alignment labels must be integers") from None
    return out


def toy_training_set(num_utts=20, dim=12, num_pdfs=5, seed=0, min_frames=45, max_frames=60):
    """Small in-memory task: each pdf emits its own Gaussian mean in a
    ``dim``-dimensional feature space.  Returns (feats, frame_labels) pairs."""
    rng = np.random.Generator(np.random.PCG64(seed))
    means = rng.standard_normal((num_pdfs, dim)) * 1.5
    data = []
    for _ in range(num_utts):
        T = int(rng.integers(min_frames, max_frames + 1))
        labels = []
        while len(labels) < T:
            labels += [int(rng.integers(num_pdfs))] * int(rng.integers(6, 12))
        labels = np.array(labels[:T])
        feats = means[labels] + 0.5 * rng.standard_normal((T, dim))
        data.append((feats, labels))
    return data
