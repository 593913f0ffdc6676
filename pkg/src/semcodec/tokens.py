"""Compact on-disk container for quantizer token matrices.

Layout, all little-endian:
  magic "SCTK", version u32, sample_rate u32, original_length u64,
  n_layers u16, n_frames u32, codebook_size u16,
  then n_layers * n_frames token ids as u16, layer-major.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError, FormatError, ParameterError
from .fileio import ByteReader, atomic_write_bytes, pack_u16, pack_u32, pack_u64

TOKEN_MAGIC = b"SCTK"
TOKEN_VERSION = 1


@dataclass(frozen=True)
class TokenFile:
    tokens: np.ndarray  # (m, T) int64
    sample_rate: int
    original_length: int  # samples in the source waveform
    codebook_size: int

    def __post_init__(self):
        t = np.asarray(self.tokens)
        if t.ndim != 2 or t.size == 0:
            raise ParameterError("tokens must be a non-empty (layers, frames) matrix")
        if self.codebook_size < 1 or self.codebook_size > 65535:
            raise ParameterError("codebook_size must fit in u16")
        if t.min() < 0 or t.max() >= self.codebook_size:
            raise DataError("token id outside [0, codebook_size)")
        if self.sample_rate <= 0 or self.original_length <= 0:
            raise ParameterError("sample_rate and original_length must be positive")
        object.__setattr__(self, "tokens", t.astype(np.int64))

    @property
    def n_layers(self):
        return self.tokens.shape[0]

    @property
    def n_frames(self):
        return self.tokens.shape[1]

    @property
    def duration(self):
        return self.original_length / self.sample_rate

    def bitrate_bps(self):
        # m * T * log2(K) bits spread over the clip duration
        bits = self.n_layers * self.n_frames * math.log2(self.codebook_size)
        return bits / self.duration


def write_tokens(tf, path):
    parts = [
        TOKEN_MAGIC,
        pack_u32(TOKEN_VERSION),
        pack_u32(tf.sample_rate),
        pack_u64(tf.original_length),
        pack_u16(tf.n_layers),
        pack_u32(tf.n_frames),
        pack_u16(tf.codebook_size),
        tf.tokens.astype("<u2").tobytes(),
    ]
    atomic_write_bytes(path, b"".join(parts))


def load_tokens(path):
    with open(path, "rb") as f:
        data = f.read()
    r = ByteReader(data, "token file")
    r.magic(TOKEN_MAGIC)
    version = r.u32("version")
    if version != TOKEN_VERSION:
        raise FormatError(f"unsupported token file version {version}, expected {TOKEN_VERSION}")
    sample_rate = r.u32("sample_rate")
    original_length = r.u64("original_length")
    m = r.u16("n_layers")
    t = r.u32("n_frames")
    k = r.u16("codebook_size")
    if m < 1 or t < 1 or k < 1:
        raise FormatError("token file header declares an empty matrix")
    payload = r.u16_array(m * t, "token payload")
    r.expect_end()
    tokens = payload.astype(np.int64).reshape(m, t)
    return TokenFile(tokens=tokens, sample_rate=sample_rate,
                     original_length=original_length, codebook_size=k)
