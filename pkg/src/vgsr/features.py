"""Acoustic front end: WAV ingestion, MFCC extraction with first and second
order derivatives, the fixed-duration padding contract, and the binary
feature-file format shared by the CLI tools.

The extractor uses conventional defaults throughout: 0.97 pre-emphasis,
25 ms Hamming windows with a 10 ms hop, magnitude FFT, 26 triangular mel
filters, a 1e-10 log floor, and an orthonormal DCT-II keeping the first
13 coefficients.  Any extractor producing the same dimensions can feed
the rest of the pipeline through the feature files.
"""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.fft import dct

from .errors import CorruptionError, DataFormatError

PRE_EMPHASIS = 0.97
WINDOW_SECONDS = 0.025
HOP_SECONDS = 0.010
N_MELS = 26
N_COEFFS = 13
LOG_FLOOR = 1e-10

FEATURE_MAGIC = b"VGSF"
FEATURE_VERSION = 1


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.size == 0:
            raise DataFormatError("waveform is empty")
        if self.sample_rate <= 0:
            raise DataFormatError(f"sample rate must be positive, got {self.sample_rate}")


def read_wav(path) -> Waveform:
    """Reads a mono 16-bit PCM WAV file into [-1, 1] samples."""
    try:
        handle = wave.open(str(path), "rb")
    except (wave.Error, EOFError) as exc:
        raise DataFormatError(f"{path}: not a readable WAV file ({exc})") from exc
    with handle as wf:
        if wf.getnchannels() != 1:
            raise DataFormatError(f"{path}: expected mono audio, got {wf.getnchannels()} channels")
        if wf.getsampwidth() != 2:
            raise DataFormatError(f"{path}: expected 16-bit PCM, got {8 * wf.getsampwidth()}-bit")
        if wf.getcomptype() != "NONE":
            raise DataFormatError(f"{path}: compressed WAV ({wf.getcomptype()}) is not supported")
        raw = wf.readframes(wf.getnframes())
        rate = wf.getframerate()
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if samples.size == 0:
        raise DataFormatError(f"{path}: no audio frames")
    return Waveform(samples, rate)


def write_wav(path, waveform: Waveform) -> None:
    """Writes mono 16-bit PCM; mainly for tests and synthetic fixtures."""
    clipped = np.clip(waveform.samples, -1.0, 1.0)
    pcm = np.round(clipped * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(waveform.sample_rate)
        wf.writeframes(pcm.tobytes())


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int) -> np.ndarray:
    """Triangular mel filters over rfft bin frequencies, n_mels x (n_fft//2+1)."""
    freqs = np.linspace(0.0, sample_rate / 2.0, n_fft // 2 + 1)
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mels + 2))
    bank = np.zeros((n_mels, freqs.size))
    for m in range(n_mels):
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        rising = (freqs - lo) / (mid - lo)
        falling = (hi - freqs) / (hi - mid)
        bank[m] = np.clip(np.minimum(rising, falling), 0.0, None)
    return bank


def pre_emphasize(samples: np.ndarray, coeff: float = PRE_EMPHASIS) -> np.ndarray:
    return np.concatenate([samples[:1], samples[1:] - coeff * samples[:-1]])


def frame_signal(samples: np.ndarray, win_samples: int, hop_samples: int) -> np.ndarray:
    if samples.size < win_samples:
        raise DataFormatError(
            f"audio has {samples.size} samples, shorter than one {win_samples}-sample window"
        )
    return sliding_window_view(samples, win_samples)[::hop_samples]


def mfcc(waveform: Waveform, n_coeffs: int = N_COEFFS, win: float = WINDOW_SECONDS,
         hop: float = HOP_SECONDS, n_mels: int = N_MELS, cmn: bool = False) -> np.ndarray:
    """MFCC matrix of shape T x n_coeffs with
    T = floor((len - win_samples) / hop_samples) + 1.

    cmn subtracts the per-coefficient mean over the utterance (off by
    default).
    """
    sr = waveform.sample_rate
    win_samples = int(round(win * sr))
    hop_samples = int(round(hop * sr))
    frames = frame_signal(pre_emphasize(waveform.samples), win_samples, hop_samples)
    n_fft = 1
    while n_fft < win_samples:
        n_fft *= 2
    windowed = frames * np.hamming(win_samples)
    magnitude = np.abs(np.fft.rfft(windowed, n=n_fft, axis=1))
    bank = mel_filterbank(n_mels, n_fft, sr)
    energies = magnitude @ bank.T
    log_energies = np.log(np.maximum(energies, LOG_FLOOR))
    coeffs = dct(log_energies, type=2, norm="ortho", axis=1)[:, :n_coeffs]
    if cmn:
        coeffs = coeffs - coeffs.mean(axis=0, keepdims=True)
    return np.ascontiguousarray(coeffs)


def _regression_delta(x: np.ndarray, span: int = 2) -> np.ndarray:
    """Regression derivative over a +-span window with edge replication."""
    padded = np.pad(x, ((span, span), (0, 0)), mode="edge")
    t = x.shape[0]
    num = np.zeros_like(x)
    for n in range(1, span + 1):
        num += n * (padded[span + n : span + n + t] - padded[span - n : span - n + t])
    return num / (2.0 * sum(n * n for n in range(1, span + 1)))


def add_deltas(static: np.ndarray) -> np.ndarray:
    """Appends first and second order derivatives: columns [static | d | dd]."""
    static = np.asarray(static, dtype=np.float64)
    delta = _regression_delta(static)
    delta2 = _regression_delta(delta)
    return np.ascontiguousarray(np.hstack([static, delta, delta2]))


def pad_or_truncate(frames: np.ndarray, max_frames: int = 800) -> np.ndarray:
    """Fixes the time axis to exactly max_frames rows: the tail beyond
    max_frames is cut, shorter inputs get all-zero rows appended."""
    frames = np.asarray(frames, dtype=np.float64)
    t = frames.shape[0]
    if t >= max_frames:
        return np.ascontiguousarray(frames[:max_frames])
    out = np.zeros((max_frames, frames.shape[1]))
    out[:t] = frames
    return out


def write_features(path, frames: np.ndarray) -> None:
    """VGSF file: magic, u32 version, u32 T, u32 D, then T*D float32 LE
    values row-major."""
    frames = np.asarray(frames)
    if frames.ndim != 2:
        raise DataFormatError(f"feature matrix must be 2-D, got shape {frames.shape}")
    t, d = frames.shape
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<III", FEATURE_VERSION, t, d))
        fh.write(frames.astype("<f4").tobytes())


def read_features(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != FEATURE_MAGIC:
            raise DataFormatError(f"{path}: bad magic {magic!r}, expected {FEATURE_MAGIC!r}")
        header = fh.read(12)
        if len(header) < 12:
            raise CorruptionError(f"{path}: truncated header")
        version, t, d = struct.unpack("<III", header)
        if version != FEATURE_VERSION:
            raise DataFormatError(f"{path}: unsupported feature file version {version}")
        payload = fh.read()
    expected = 4 * t * d
    if len(payload) != expected:
        raise CorruptionError(
            f"{path}: expected {expected} payload bytes for {t}x{d}, found {len(payload)}"
        )
    return np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(t, d)
