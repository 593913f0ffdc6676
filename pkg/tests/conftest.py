import numpy as np
import pytest

from semcodec import CodecConfig, CodecModel, SemanticFeatures, Waveform


def tiny_config(**overrides):
    """Smallest architecture that still exercises every code path."""
    base = dict(stem_channels=4, block_channels=(4, 4, 8, 8), acoustic_hidden=8,
                semantic_feature_dim=12, semantic_hidden=8, fused_dim=8,
                codebook_size=16, max_layers=8)
    base.update(overrides)
    return CodecConfig(**base)


def tiny_model(seed=0, n_init=64, **overrides):
    """Tiny model with data-initialized codebooks, ready for forward passes."""
    cfg = tiny_config(**overrides)
    model = CodecModel(cfg, seed=seed)
    rng = np.random.default_rng(seed + 1)
    model.init_codebooks(rng.standard_normal((cfg.fused_dim, n_init)), seed=seed + 2)
    return model


def random_wave(rng, n=1600, sr=16000, scale=0.2):
    return Waveform(samples=rng.standard_normal(n) * scale, sample_rate=sr)


def random_feats(rng, dim=12, t=5, source="file"):
    return SemanticFeatures(features=rng.standard_normal((dim, t)),
                            frame_rate=50.0, source=source)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
