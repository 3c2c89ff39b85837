"""MFCC extraction, SSL embedding files, feature fusion and CMVN.

Feature matrix files (``.feat``) are a one-line ASCII header followed by
raw little-endian float64 data in row-major order::

    HKFEAT 1 <kind> <rows> <cols> <frame_shift_s>\\n
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np
import scipy.fft

KIND_DIMS = {"mfcc40": 40, "ssl1024": 1024, "fused1064": 1064}


class FeatureError(ValueError):
    pass


class FeatureConfigError(FeatureError):
    pass


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate_hz: int = 16000

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise FeatureError("waveform must be a nonempty 1-D sequence")
        if self.sample_rate_hz <= 0:
            raise FeatureError("sample rate must be positive")
        object.__setattr__(self, "samples", samples)


@dataclass(frozen=True)
class FeatureMatrix:
    frames: np.ndarray
    kind: str
    frame_shift_s: float = 0.01

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if self.kind not in KIND_DIMS:
            raise FeatureError(f"unknown feature kind {self.kind!r}")
        if frames.ndim != 2 or frames.shape[1] != KIND_DIMS[self.kind]:
            raise FeatureError(f"{self.kind} needs {KIND_DIMS[self.kind]} columns, got shape {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise FeatureError("feature matrix contains non-finite entries")
        object.__setattr__(self, "frames", frames)

    @property
    def num_frames(self):
        return self.frames.shape[0]


@dataclass(frozen=True)
class MfccConfig:
    window_s: float = 0.025
    shift_s: float = 0.010
    n_fft: int = 512
    num_mel_bins: int = 40
    num_ceps: int = 40
    low_freq: float = 20.0
    high_freq: float = 0.0
    preemphasis: float = 0.97
    log_floor: float = 1e-10

    def validate(self, sample_rate):
        window = int(round(self.window_s * sample_rate))
        shift = int(round(self.shift_s * sample_rate))
        if shift <= 0 or window <= 0:
            raise FeatureConfigError("window and shift must be positive")
        if shift > window:
            raise FeatureConfigError(f"shift ({shift} samples) exceeds window ({window} samples)")
        if self.num_mel_bins <= 0:
            raise FeatureConfigError("num_mel_bins must be positive")
        if not 0 < self.num_ceps <= self.num_mel_bins:
            raise FeatureConfigError("num_ceps must be in 1..num_mel_bins")
        if self.n_fft < window:
            raise FeatureConfigError(f"n_fft {self.n_fft} shorter than window {window}")
        nyquist = sample_rate / 2.0
        high = self.high_freq if self.high_freq > 0 else nyquist + self.high_freq
        if not 0 <= self.low_freq < high <= nyquist:
            raise FeatureConfigError(f"mel range [{self.low_freq}, {high}] invalid for {sample_rate} Hz")
        return window, shift, high


def hz_to_mel(f):
    return 1127.0 * np.log1p(np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * np.expm1(np.asarray(m, dtype=np.float64) / 1127.0)


def mel_centers(cfg, sample_rate):
    _, _, high = cfg.validate(sample_rate)
    edges = np.linspace(hz_to_mel(cfg.low_freq), hz_to_mel(high), cfg.num_mel_bins + 2)
    return edges[1:-1]


def mel_filterbank(cfg, sample_rate):
    """Triangular filters, linear in mel, over the ``n_fft // 2 + 1`` spectrum bins."""
    _, _, high = cfg.validate(sample_rate)
    edges = np.linspace(hz_to_mel(cfg.low_freq), hz_to_mel(high), cfg.num_mel_bins + 2)
    bin_mel = hz_to_mel(np.arange(cfg.n_fft // 2 + 1) * sample_rate / cfg.n_fft)
    left, center, right = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (bin_mel - left) / (center - left)
    down = (right - bin_mel) / (right - center)
    return np.clip(np.minimum(up, down), 0.0, None)


def frame_signal(samples, window, shift):
    n = samples.shape[0]
    if n < window:
        raise FeatureError(f"waveform has {n} samples, shorter than one {window}-sample window")
    T = (n - window) // shift + 1
    idx = np.arange(window)[None, :] + shift * np.arange(T)[:, None]
    return samples[idx]


def filterbank_energies(wave, cfg=MfccConfig()):
    """Mel filterbank energies (before the log) from the magnitude spectrum."""
    window, shift, _ = cfg.validate(wave.sample_rate_hz)
    frames = frame_signal(wave.samples, window, shift).copy()
    frames -= frames.mean(axis=1, keepdims=True)
    frames[:, 1:] -= cfg.preemphasis * frames[:, :-1]
    frames[:, 0] *= 1.0 - cfg.preemphasis
    frames *= np.hamming(window)
    spectrum = np.abs(np.fft.rfft(frames, n=cfg.n_fft, axis=1))
    return spectrum @ mel_filterbank(cfg, wave.sample_rate_hz).T


def compute_mfcc(wave, cfg=MfccConfig()):
    """Pre-emphasis, Hamming window, magnitude spectrum, mel filterbank, log, DCT-II."""
    energies = filterbank_energies(wave, cfg)
    logmel = np.log(np.maximum(energies, cfg.log_floor))
    ceps = scipy.fft.dct(logmel, type=2, norm="ortho", axis=1)[:, :cfg.num_ceps]
    if ceps.shape[1] != KIND_DIMS["mfcc40"]:
        raise FeatureConfigError(f"mfcc40 needs 40 kept coefficients, config keeps {ceps.shape[1]}")
    return FeatureMatrix(ceps, "mfcc40", cfg.shift_s)


def reconcile_frames(feat, expected_frames, tolerance=2):
    """Truncate ``feat`` to ``expected_frames`` when it is at most ``tolerance`` frames longer."""
    T = feat.num_frames
    if abs(T - expected_frames) > tolerance:
        raise FeatureError(f"frame count {T} differs from expected {expected_frames} by more than {tolerance}")
    if T > expected_frames:
        return FeatureMatrix(feat.frames[:expected_frames], feat.kind, feat.frame_shift_s)
    return feat


def fuse(mfcc, ssl, tolerance=0):
    """Concatenate MFCC columns then SSL columns, frame by frame.

    With ``tolerance`` > 0 the longer input is first truncated when the
    frame counts differ by at most that many frames.
    """
    if mfcc.kind != "mfcc40" or ssl.kind != "ssl1024":
        raise FeatureError(f"fuse expects mfcc40 + ssl1024, got {mfcc.kind} + {ssl.kind}")
    Tm, Ts = mfcc.num_frames, ssl.num_frames
    if Tm != Ts:
        if abs(Tm - Ts) > tolerance:
            raise FeatureError(f"frame count mismatch: mfcc has {Tm} frames, ssl has {Ts}")
        T = min(Tm, Ts)
        mfcc, ssl = reconcile_frames(mfcc, T, tolerance), reconcile_frames(ssl, T, tolerance)
    return FeatureMatrix(np.concatenate([mfcc.frames, ssl.frames], axis=1), "fused1064", mfcc.frame_shift_s)


def cmvn(feat, var_floor=1e-8):
    frames = feat.frames
    if frames.shape[0] < 2:
        raise FeatureError("cmvn needs at least 2 frames")
    mu = frames.mean(axis=0)
    var = np.maximum(frames.var(axis=0), var_floor)
    return FeatureMatrix((frames - mu) / np.sqrt(var), feat.kind, feat.frame_shift_s)


def stub_ssl_embeddings(utt_id, mfcc, seed=0, noise=0.1):
    """Deterministic stand-in for SSL embeddings: a fixed random projection of
    the MFCC frames through tanh plus per-utterance noise.

    The projection depends only on ``seed``; the noise on (seed, utt_id).
    """
    proj = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 1024]))).standard_normal((40, 1024))
    digest = int.from_bytes(hashlib.sha256(utt_id.encode()).digest()[:8], "little")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, digest])))
    x = mfcc.frames
    scale = np.maximum(x.std(axis=0), 1e-3)
    hidden = np.tanh(((x - x.mean(axis=0)) / scale) @ proj / math.sqrt(40))
    return FeatureMatrix(hidden + noise * rng.standard_normal(hidden.shape), "ssl1024", mfcc.frame_shift_s)


MAGIC = "HKFEAT"


def write_matrix(path, feat):
    rows, cols = feat.frames.shape
    with open(path, "wb") as f:
        f.write(f"{MAGIC} 1 {feat.kind} {rows} {cols} {feat.frame_shift_s!r}\n".encode("ascii"))
        f.write(np.ascontiguousarray(feat.frames, dtype="<f8").tobytes())


def read_matrix(path):
    with open(path, "rb") as f:
        header = f.readline().decode("ascii", errors="replace").split()
        if len(header) != 6 or header[0] != MAGIC:
            raise FeatureError(f"{path}: not a feature matrix file")
        if header[1] != "1":
            raise FeatureError(f"{path}: unsupported format version {header[1]}")
        kind, rows, cols, shift = header[2], int(header[3]), int(header[4]), float(header[5])
        data = np.frombuffer(f.read(), dtype="<f8")
    if data.size != rows * cols:
        raise FeatureError(f"{path}: expected {rows * cols} values, found {data.size}")
    frames = data.reshape(rows, cols).copy()
    if kind in KIND_DIMS and cols != KIND_DIMS[kind]:
        raise FeatureError(f"{path}: {kind} file has {cols} columns, expected {KIND_DIMS[kind]}")
    return FeatureMatrix(frames, kind, shift)


def load_ssl_embeddings(path, expected_frames, tolerance=2):
    feat = read_matrix(path)
    if feat.frames.shape[1] != 1024 or feat.kind != "ssl1024":
        raise FeatureError(f"{path}: SSL embeddings must be 1024-dimensional ssl1024, got {feat.kind} "
                           f"with {feat.frames.shape[1]} columns")
    return reconcile_frames(feat, expected_frames, tolerance)
