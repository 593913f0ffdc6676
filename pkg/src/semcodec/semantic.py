"""Frame-aligned semantic feature streams.

Features either come from "SFEA" files produced offline by an external
feature extractor, or from a deterministic built-in surrogate that turns
80-band log-mels into a fixed random orthonormal projection with temporal
context averaging. Either way the stream is H_s channels at the codec's
50 Hz token rate.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .dsp import LOG_FLOOR, WindowSpec, magnitude_frames, mel_filterbank, reflect_indices
from .errors import DataError, FormatError, ParameterError, ShapeError
from .fileio import ByteReader, atomic_write_bytes, pack_u32

SFEA_MAGIC = b"SFEA"
SFEA_VERSION = 1

SURROGATE_SAMPLE_RATE = 16000
SURROGATE_HOP = 320
SURROGATE_N_FFT = 512
SURROGATE_N_MELS = 80
# Fixed seed of the surrogate's random projection. The feature file layout
# has no metadata field, so the seed is a package constant instead.
SURROGATE_PROJECTION_SEED = 0x5EED
SURROGATE_CONTEXT = 2  # +-2 frames of temporal averaging


@dataclass(frozen=True)
class SemanticFeatures:
    features: np.ndarray  # (H_s, T) float64
    frame_rate: float
    source: str  # "file" | "surrogate"

    def __post_init__(self):
        arr = np.asarray(self.features, dtype=np.float64)
        if arr.ndim != 2:
            raise ShapeError("semantic features must be 2-D (channels, frames)")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DataError("semantic features must be non-empty")
        if not np.all(np.isfinite(arr)):
            raise DataError("semantic features contain non-finite entries")
        if self.source not in ("file", "surrogate"):
            raise ParameterError(f"unknown feature source {self.source!r}")
        object.__setattr__(self, "features", arr)

    @property
    def dim(self):
        return self.features.shape[0]

    @property
    def frames(self):
        return self.features.shape[1]


# -- SFEA file format -------------------------------------------------------------


def write_features(feats, path):
    """Serialize as SFEA v1: header + float32 little-endian payload,
    frame-major (frame index outermost)."""
    h, t = feats.features.shape
    payload = feats.features.T.astype("<f4").tobytes()
    rate_milli = int(round(feats.frame_rate * 1000.0))
    buf = b"".join([
        SFEA_MAGIC,
        pack_u32(SFEA_VERSION),
        pack_u32(h),
        pack_u32(t),
        pack_u32(rate_milli),
        payload,
    ])
    atomic_write_bytes(path, buf)


def load_features(path):
    with open(path, "rb") as fh:
        data = fh.read()
    r = ByteReader(data, what="feature file")
    r.magic(SFEA_MAGIC)
    version = r.u32("version")
    if version != SFEA_VERSION:
        raise FormatError(f"unsupported feature file version {version} (expected {SFEA_VERSION})")
    h = r.u32("channel count")
    t = r.u32("frame count")
    rate_milli = r.u32("frame rate")
    if h < 1 or t < 1:
        raise FormatError(f"feature file declares empty matrix {h}x{t}")
    expected = 4 * h * t
    actual = len(data) - r.pos
    if actual != expected:
        raise FormatError(
            f"feature payload length mismatch: expected {expected} bytes "
            f"for {h}x{t} floats, found {actual}"
        )
    flat = r.f32_array(h * t, "payload")
    mat = flat.reshape(t, h).T.astype(np.float64)
    if not np.all(np.isfinite(mat)):
        raise DataError("feature file contains non-finite values")
    return SemanticFeatures(features=mat, frame_rate=rate_milli / 1000.0, source="file")


# -- surrogate extractor -----------------------------------------------------------


@lru_cache(maxsize=4)
def _projection(feature_dim):
    """Seeded random projection from the mel bands to feature_dim channels
    with orthonormal columns (feature_dim >= bands) or rows (otherwise)."""
    rng = np.random.default_rng(SURROGATE_PROJECTION_SEED)
    g = rng.standard_normal((max(feature_dim, SURROGATE_N_MELS),
                             min(feature_dim, SURROGATE_N_MELS)))
    q, r = np.linalg.qr(g)
    q = q * np.sign(np.diag(r))[None, :]
    p = q if feature_dim >= SURROGATE_N_MELS else q.T
    p = np.ascontiguousarray(p)
    p.setflags(write=False)
    return p


def surrogate_extractor(w, feature_dim=768):
    """Deterministic 50 Hz stand-in for a pretrained semantic model.

    Per 320-sample hop: an 80-band log-mel frame (512-point window centered
    on the hop), projected through a fixed seeded orthonormal-ish map to
    feature_dim channels, then averaged over +-2 neighbouring frames with
    edge replication. T = ceil(n/320).
    """
    if w.sample_rate != SURROGATE_SAMPLE_RATE:
        raise ParameterError(
            f"surrogate extractor requires {SURROGATE_SAMPLE_RATE} Hz input, "
            f"got {w.sample_rate}"
        )
    if feature_dim < 1:
        raise ParameterError("feature_dim must be >= 1")
    n = w.n
    t_frames = -(-n // SURROGATE_HOP)
    centers = np.arange(t_frames) * SURROGATE_HOP + SURROGATE_HOP // 2
    starts = centers - SURROGATE_N_FFT // 2
    grid = starts[:, None] + np.arange(SURROGATE_N_FFT)[None, :]
    idx = reflect_indices(grid, n)
    window = WindowSpec("hann", SURROGATE_N_FFT).array()
    frames = w.samples[idx] * window[None, :]
    from .dsp import dft_matrices

    cos, sin = dft_matrices(SURROGATE_N_FFT)
    re = frames @ cos
    im = frames @ sin
    mags = np.sqrt(re * re + im * im).T  # (bins, T)
    fb = mel_filterbank(SURROGATE_N_FFT, SURROGATE_N_MELS, SURROGATE_SAMPLE_RATE)
    logmel = np.log(LOG_FLOOR + fb.weights @ mags)  # (80, T)
    proj = _projection(feature_dim) @ logmel  # (H_s, T)
    offsets = np.arange(-SURROGATE_CONTEXT, SURROGATE_CONTEXT + 1)
    neighbour = np.clip(np.arange(t_frames)[None, :] + offsets[:, None], 0, t_frames - 1)
    feats = proj[:, neighbour].mean(axis=1)
    return SemanticFeatures(features=feats, frame_rate=float(SURROGATE_SAMPLE_RATE) / SURROGATE_HOP,
                            source="surrogate")


# -- alignment ---------------------------------------------------------------------


def align_frames(feats, target_t):
    """Give the stream exactly target_t frames.

    Mismatches of at most 2 frames are fixed by right-truncation or
    edge-replication; anything larger is per-channel linear interpolation
    with frame centers aligned (so halving the rate averages frame pairs).
    """
    if target_t <= 0:
        raise ParameterError("target frame count must be positive")
    t = feats.frames
    if t == target_t:
        return feats
    f = feats.features
    if abs(t - target_t) <= 2:
        if t > target_t:
            out = f[:, :target_t].copy()
        else:
            pad = np.repeat(f[:, -1:], target_t - t, axis=1)
            out = np.concatenate([f, pad], axis=1)
    else:
        pos = np.clip((np.arange(target_t) + 0.5) * (t / target_t) - 0.5, 0.0, t - 1.0)
        lo = np.floor(pos).astype(np.int64)
        hi = np.minimum(lo + 1, t - 1)
        frac = pos - lo
        out = f[:, lo] * (1.0 - frac)[None, :] + f[:, hi] * frac[None, :]
    return SemanticFeatures(features=out, frame_rate=feats.frame_rate, source=feats.source)
