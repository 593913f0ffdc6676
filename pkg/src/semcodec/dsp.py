"""Waveform I/O and spectral analysis.

STFT magnitudes are computed with explicit cosine/sine DFT matrices rather
than an FFT: the training loss re-implements the same arithmetic through the
autodiff ops, and sharing the exact operation order makes the loss values
and these reference values bit-identical.
"""

import os
import wave
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import (DataError, FormatError, ParameterError, ShapeError,
                     UnsupportedFormatError)
from .fileio import atomic_write_bytes

LOG_FLOOR = 1e-5
LOSS_N_FFT = 1024
LOSS_HOP = 256
LOSS_N_MELS = 80

# Small constant added under the square root of the magnitude so the
# gradient at exactly-zero bins stays finite in the differentiable path.
MAG_EPS = 1e-24


@dataclass(frozen=True)
class Waveform:
    """Mono audio: float64 samples in [-1, 1] plus a sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.float64)
        if arr.ndim != 1:
            raise ShapeError("waveform samples must be 1-D")
        if arr.size < 1:
            raise DataError("waveform must contain at least one sample")
        if not np.all(np.isfinite(arr)):
            raise DataError("waveform samples must be finite")
        if self.sample_rate <= 0:
            raise ParameterError("sample rate must be positive")
        object.__setattr__(self, "samples", arr)

    @property
    def n(self):
        return self.samples.shape[0]

    @property
    def duration(self):
        return self.n / self.sample_rate


@dataclass(frozen=True)
class WindowSpec:
    kind: str
    length: int

    def array(self):
        if self.length < 1:
            raise ParameterError("window length must be >= 1")
        if self.kind == "hann":
            i = np.arange(self.length)
            return 0.5 - 0.5 * np.cos(2.0 * np.pi * i / self.length)
        if self.kind == "rect":
            return np.ones(self.length)
        raise ParameterError(f"unknown window kind {self.kind!r}")


@dataclass(frozen=True)
class Spectrogram:
    magnitudes: np.ndarray  # (bins, frames), bins = n_fft//2 + 1
    n_fft: int
    hop: int
    window: WindowSpec
    sample_rate: int


@dataclass(frozen=True)
class MelFilterbank:
    weights: np.ndarray  # (n_mels, bins)
    f_min: float
    f_max: float
    sample_rate: int
    n_fft: int


# -- WAV ------------------------------------------------------------------------


def load_wav(path):
    """Read a RIFF/WAVE file of 16-bit integer PCM; channels are averaged.

    Integer samples map to floats by division by 32768.
    """
    try:
        with wave.open(os.fspath(path), "rb") as wf:
            sampwidth = wf.getsampwidth()
            channels = wf.getnchannels()
            rate = wf.getframerate()
            nframes = wf.getnframes()
            raw = wf.readframes(nframes)
    except wave.Error as e:
        msg = str(e)
        if "unknown format" in msg or "compression" in msg.lower():
            raise UnsupportedFormatError(f"unsupported WAV encoding: {msg}") from None
        raise FormatError(f"malformed WAV file: {msg}") from None
    except EOFError:
        raise FormatError("malformed WAV file: unexpected end of header") from None
    if sampwidth != 2:
        raise UnsupportedFormatError(
            f"unsupported WAV encoding: {8 * sampwidth}-bit samples (need 16-bit PCM)"
        )
    if channels < 1:
        raise FormatError("malformed WAV file: zero channels")
    expected = nframes * channels * 2
    if len(raw) < expected:
        raise FormatError(
            f"truncated WAV data: header promises {expected} bytes, found {len(raw)}"
        )
    if nframes < 1:
        raise DataError("WAV file contains no samples")
    ints = np.frombuffer(raw, dtype="<i2", count=nframes * channels)
    frames = ints.reshape(nframes, channels).astype(np.float64)
    mono = frames.mean(axis=1) / 32768.0
    return Waveform(samples=mono, sample_rate=rate)


def save_wav(w, path):
    """Write mono 16-bit PCM. Samples are clamped to [-1, 1] and scaled so
    that load_wav(save_wav(w)) is within 1/32768 of the original per sample
    (full-scale mapping, clamped to the int16 range)."""
    clipped = np.clip(w.samples, -1.0, 1.0)
    ints = np.clip(np.rint(clipped * 32768.0), -32768, 32767).astype("<i2")
    buf = _wav_bytes(ints, w.sample_rate)
    atomic_write_bytes(path, buf)


def _wav_bytes(ints, rate):
    import io

    bio = io.BytesIO()
    with wave.open(bio, "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(rate)
        wf.writeframes(ints.tobytes())
    return bio.getvalue()


# -- framing and DFT -------------------------------------------------------------


def frame_count(n, n_fft, hop):
    """Number of analysis frames for an n-sample signal: the padded layout
    keeps (n_fft - hop) reflected samples on each side, so every frame is
    full and the count is floor((n + n_fft - hop)/hop)."""
    return (n + n_fft - hop) // hop


def reflect_indices(positions, n):
    """Map integer sample positions (possibly out of range) into [0, n) by
    reflection without repeating the edge sample."""
    p = np.asarray(positions, dtype=np.int64)
    if n == 1:
        return np.zeros_like(p)
    period = 2 * (n - 1)
    q = np.abs(p) % period
    return np.where(q >= n, period - q, q)


def frame_index_matrix(n, n_fft, hop):
    """(frames, n_fft) matrix of sample indices after reflect padding."""
    if n < 1:
        raise ParameterError("signal must be non-empty")
    pad = n_fft - hop
    frames = frame_count(n, n_fft, hop)
    starts = np.arange(frames) * hop - pad
    grid = starts[:, None] + np.arange(n_fft)[None, :]
    return reflect_indices(grid, n)


@lru_cache(maxsize=8)
def dft_matrices(n_fft):
    """Cosine and -sine matrices mapping a frame to its rfft real/imag parts."""
    bins = n_fft // 2 + 1
    t = np.arange(n_fft)[:, None]
    k = np.arange(bins)[None, :]
    ang = 2.0 * np.pi * t * k / n_fft
    cos = np.cos(ang)
    sin = -np.sin(ang)
    cos.setflags(write=False)
    sin.setflags(write=False)
    return cos, sin


def magnitude_frames(samples, n_fft, hop, window):
    """(bins, frames) magnitudes via the shared framing + DFT arithmetic.

    Exact modulus, no epsilon: the zero signal maps to all-zero magnitudes.
    The differentiable loss path adds MAG_EPS under its sqrt instead, to keep
    the backward rule finite at silent bins.
    """
    idx = frame_index_matrix(samples.shape[0], n_fft, hop)
    frames = samples[idx] * window.array()[None, :]
    cos, sin = dft_matrices(n_fft)
    re = frames @ cos
    im = frames @ sin
    return np.ascontiguousarray(np.sqrt(re * re + im * im).T)


def _is_power_of_two(v):
    return v >= 1 and (v & (v - 1)) == 0


def stft(w, n_fft=LOSS_N_FFT, hop=LOSS_HOP, window="hann"):
    """Magnitude spectrogram with centered frames via reflect padding.

    The frame count follows floor((n + n_fft - hop)/hop), i.e. reflect
    padding of (n_fft - hop) samples per side so no partial frames occur.
    """
    if not _is_power_of_two(n_fft):
        raise ParameterError(f"n_fft must be a power of two, got {n_fft}")
    if not (0 < hop <= n_fft):
        raise ParameterError(f"hop must satisfy 0 < hop <= n_fft, got {hop}")
    if isinstance(window, str):
        window = WindowSpec(window, n_fft)
    if window.length != n_fft:
        raise ParameterError(f"window length {window.length} must equal n_fft {n_fft}")
    mags = magnitude_frames(w.samples, n_fft, hop, window)
    return Spectrogram(magnitudes=mags, n_fft=n_fft, hop=hop, window=window,
                       sample_rate=w.sample_rate)


# -- mel ------------------------------------------------------------------------


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def _mel_weights(n_fft, n_mels, sample_rate, f_min, f_max):
    bins = n_fft // 2 + 1
    freqs = np.arange(bins) * (sample_rate / n_fft)
    pts = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    weights = np.zeros((n_mels, bins))
    for m in range(n_mels):
        lo, ctr, hi = pts[m], pts[m + 1], pts[m + 2]
        up = (freqs - lo) / (ctr - lo)
        down = (hi - freqs) / (hi - ctr)
        tri = np.maximum(0.0, np.minimum(up, down))
        peak = tri.max()
        if peak <= 0.0:
            raise ParameterError(
                f"mel filter {m} covers no FFT bin (n_fft={n_fft}, n_mels={n_mels}); "
                "reduce n_mels or raise n_fft"
            )
        weights[m] = tri / peak
    weights.setflags(write=False)
    return weights


def mel_filterbank(n_fft, n_mels, sample_rate, f_min=0.0, f_max=None):
    """Triangular filters with peaks equally spaced on the mel scale
    mel(f) = 2595*log10(1 + f/700); each row is peak-normalized to 1."""
    if f_max is None:
        f_max = sample_rate / 2.0
    if not (0 <= f_min < f_max <= sample_rate / 2.0):
        raise ParameterError(
            f"need 0 <= f_min < f_max <= sr/2, got f_min={f_min}, f_max={f_max}"
        )
    if n_mels < 1:
        raise ParameterError("n_mels must be >= 1")
    if not _is_power_of_two(n_fft):
        raise ParameterError(f"n_fft must be a power of two, got {n_fft}")
    weights = _mel_weights(n_fft, n_mels, sample_rate, float(f_min), float(f_max))
    return MelFilterbank(weights=weights, f_min=float(f_min), f_max=float(f_max),
                         sample_rate=sample_rate, n_fft=n_fft)


def mel_spectrogram(spec, fb):
    if fb.n_fft != spec.n_fft:
        raise ShapeError(f"filterbank n_fft {fb.n_fft} does not match spectrogram {spec.n_fft}")
    return fb.weights @ spec.magnitudes


# -- distances --------------------------------------------------------------------


def spectral_distance(a, b, kind="mel", n_fft=LOSS_N_FFT, hop=LOSS_HOP,
                      n_mels=LOSS_N_MELS):
    """Mean absolute difference of log(1e-5 + magnitude); kind selects raw
    STFT bins or an 80-band mel front-end. Symmetric by construction."""
    if a.n != b.n:
        raise ShapeError(f"waveform lengths differ: {a.n} vs {b.n}")
    if a.sample_rate != b.sample_rate:
        raise ParameterError("sample rates differ")
    sa = stft(a, n_fft=n_fft, hop=hop, window="hann")
    sb = stft(b, n_fft=n_fft, hop=hop, window="hann")
    if kind == "mel":
        fb = mel_filterbank(n_fft, n_mels, a.sample_rate)
        ma = mel_spectrogram(sa, fb)
        mb = mel_spectrogram(sb, fb)
    elif kind == "stft":
        ma = sa.magnitudes
        mb = sb.magnitudes
    else:
        raise ParameterError(f"unknown distance kind {kind!r}")
    return float(np.mean(np.abs(np.log(LOG_FLOOR + ma) - np.log(LOG_FLOOR + mb))))
