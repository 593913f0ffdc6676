"""The X-shaped codec: two encoders feeding one shared residual quantizer,
two decoders reconstructing both streams.

The acoustic path downsamples 16 kHz audio by strides (2,4,5,8) to a 50 Hz
latent A, the semantic path refines the 50 Hz feature stream S* to S, and
U = concat(phi_s(S), phi_a(A)) is quantized. beta_a/beta_s project the
quantized U_q back out for waveform and semantic-feature reconstruction.
With semantic_enabled=False the semantic half disappears and phi_a widens
to the full fused dimension, leaving the quantizer capacity unchanged.
"""

import math
from dataclasses import dataclass, field, fields

import numpy as np

from . import rvq
from .diffcore import Tensor, constant, conv1d, conv_transpose1d, linear
from .diffcore import concat_channels, no_grad
from .dsp import Waveform
from .errors import ConfigError, ParameterError, ShapeError, StateError
from .semantic import SemanticFeatures, align_frames

HOP = 320  # product of the downsample rates; one token per 320 samples


def _ceil_div(a, b):
    return -(-a // b)


@dataclass(frozen=True)
class CodecConfig:
    sample_rate: int = 16000
    downsample_rates: tuple = (2, 4, 5, 8)
    stem_channels: int = 32
    block_channels: tuple = (48, 96, 192, 256)
    acoustic_hidden: int = 256
    semantic_feature_dim: int = 768
    semantic_hidden: int = 768
    fused_dim: int = 512
    codebook_size: int = 1024
    max_layers: int = 8
    kernel_size: int = 7
    semantic_enabled: bool = True
    commitment_weight: float = 0.25
    ema_decay: float = 0.99
    dead_threshold: float = 1e-2

    def __post_init__(self):
        object.__setattr__(self, "downsample_rates", tuple(self.downsample_rates))
        object.__setattr__(self, "block_channels", tuple(self.block_channels))
        if self.sample_rate <= 0:
            raise ConfigError("sample_rate must be positive")
        prod = math.prod(self.downsample_rates)
        if prod != HOP:
            raise ConfigError(
                f"downsample rates {self.downsample_rates} multiply to {prod}, need {HOP}")
        if len(self.block_channels) != len(self.downsample_rates):
            raise ConfigError("block_channels must match downsample_rates in length")
        if self.block_channels[-1] != self.acoustic_hidden:
            raise ConfigError(
                f"last block width {self.block_channels[-1]} must equal "
                f"acoustic_hidden {self.acoustic_hidden}")
        if any(c < 1 for c in self.block_channels) or self.stem_channels < 1:
            raise ConfigError("channel counts must be >= 1")
        if self.fused_dim < 2 or self.fused_dim % 2 != 0:
            raise ConfigError("fused_dim must be even and >= 2")
        if self.codebook_size < 1 or self.max_layers < 1:
            raise ConfigError("codebook_size and max_layers must be >= 1")
        if self.kernel_size % 2 != 1:
            raise ConfigError("kernel_size must be odd (symmetric padding)")
        if self.semantic_feature_dim < 1 or self.semantic_hidden < 1:
            raise ConfigError("semantic dims must be >= 1")

    @property
    def frame_rate(self):
        return self.sample_rate / HOP

    def frames_for_samples(self, n):
        return _ceil_div(n, HOP)

    def length_chain(self, n):
        """Per-stage lengths [n, L1, ..., T] under ceil-mode striding."""
        chain = [n]
        for s in self.downsample_rates:
            chain.append(_ceil_div(chain[-1], s))
        return chain

    def to_dict(self):
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    @classmethod
    def from_dict(cls, d):
        kwargs = {f.name: d[f.name] for f in fields(cls) if f.name in d}
        return cls(**kwargs)


@dataclass
class ForwardOutput:
    x_hat: object  # (1, n) Tensor
    s_hat: object  # (H_s, T) Tensor or None
    tokens: object  # (m, T) int64 array or None when the quantizer is bypassed
    fused: object  # (H_u, T) Tensor, U
    quantized: object  # (H_u, T) Tensor, U_q
    losses: object = None  # LossReport, filled by the training module
    m_active: int = 0
    commitment: object = 0.0
    quantize_result: object = None
    n_samples: int = 0
    frames: int = 0
    aligned_features: object = None  # (H_s, T) ndarray used as the semantic target


class _Conv:
    def __init__(self, model, name, c_in, c_out, k, stride=1):
        self.stride = stride
        self.k = k
        bound = math.sqrt(6.0 / (c_in * k))
        self.weight = model._register(f"{name}.weight",
                                      model._rng.uniform(-bound, bound, (c_out, c_in, k)))
        self.bias = model._register(f"{name}.bias", np.zeros(c_out))

    def __call__(self, x, padding=0):
        return conv1d(x, self.weight, self.bias, stride=self.stride, padding=padding)


class _ConvT:
    def __init__(self, model, name, c_in, c_out, k, stride=1):
        self.stride = stride
        self.k = k
        bound = math.sqrt(6.0 / (c_in * k))
        self.weight = model._register(f"{name}.weight",
                                      model._rng.uniform(-bound, bound, (c_in, c_out, k)))
        self.bias = model._register(f"{name}.bias", np.zeros(c_out))

    def __call__(self, x, padding=0):
        return conv_transpose1d(x, self.weight, self.bias, stride=self.stride,
                                padding=padding)


class _Linear:
    def __init__(self, model, name, c_in, c_out):
        bound = math.sqrt(6.0 / c_in)
        self.weight = model._register(f"{name}.weight",
                                      model._rng.uniform(-bound, bound, (c_out, c_in)))
        self.bias = model._register(f"{name}.bias", np.zeros(c_out))

    def __call__(self, x):
        return linear(x, self.weight, self.bias)


class _ResUnit:
    """x + conv_k1(elu(conv_k7(elu(x)))), stride 1, width preserved."""

    def __init__(self, model, name, channels, k):
        self.conv_a = _Conv(model, f"{name}.res1", channels, channels, k)
        self.conv_b = _Conv(model, f"{name}.res2", channels, channels, 1)
        self.pad = k // 2

    def __call__(self, x):
        h = self.conv_a(x.elu(), padding=self.pad)
        h = self.conv_b(h.elu(), padding=0)
        return x + h


class _SemanticBlock:
    """x + conv_k7(elu(x)), stride 1."""

    def __init__(self, model, name, channels, k):
        self.conv = _Conv(model, f"{name}.conv", channels, channels, k)
        self.pad = k // 2

    def __call__(self, x):
        return x + self.conv(x.elu(), padding=self.pad)


class CodecModel:
    """Parameter container plus the forward pass in both modes."""

    def __init__(self, config, seed=0):
        self.config = config
        self.params = {}
        self._rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        cfg = config
        k = cfg.kernel_size

        # Acoustic encoder: stem conv then one strided block per rate, each
        # block a ceil-mode strided conv (kernel 2*stride) plus a residual unit.
        self.stem = _Conv(self, "acoustic.encoder.stem", 1, cfg.stem_channels, k)
        self.enc_blocks = []
        c_prev = cfg.stem_channels
        for i, (s, c) in enumerate(zip(cfg.downsample_rates, cfg.block_channels)):
            name = f"acoustic.encoder.block{i}"
            down = _Conv(self, f"{name}.down", c_prev, c, 2 * s, stride=s)
            res = _ResUnit(self, name, c, k)
            self.enc_blocks.append((down, res, s))
            c_prev = c

        half = cfg.fused_dim // 2
        phi_a_out = half if cfg.semantic_enabled else cfg.fused_dim
        self.phi_a = _Linear(self, "phi_a", cfg.acoustic_hidden, phi_a_out)

        if cfg.semantic_enabled:
            self.sem_in = None
            if cfg.semantic_feature_dim != cfg.semantic_hidden:
                self.sem_in = _Conv(self, "semantic.encoder.in_proj",
                                    cfg.semantic_feature_dim, cfg.semantic_hidden, 1)
            self.sem_enc_blocks = [
                _SemanticBlock(self, f"semantic.encoder.block{i}", cfg.semantic_hidden, k)
                for i in range(2)
            ]
            self.phi_s = _Linear(self, "phi_s", cfg.semantic_hidden, half)

        self.beta_a = _Linear(self, "beta_a", cfg.fused_dim, cfg.acoustic_hidden)
        self.dec_blocks = []
        up_rates = tuple(reversed(cfg.downsample_rates))
        dec_out = tuple(reversed((cfg.stem_channels,) + cfg.block_channels[:-1]))
        c_prev = cfg.acoustic_hidden
        for i, (s, c) in enumerate(zip(up_rates, dec_out)):
            name = f"acoustic.decoder.block{i}"
            up = _ConvT(self, f"{name}.up", c_prev, c, 2 * s, stride=s)
            res = _ResUnit(self, name, c, k)
            self.dec_blocks.append((up, res, s))
            c_prev = c
        self.head = _Conv(self, "acoustic.decoder.head", cfg.stem_channels, 1, k)

        if cfg.semantic_enabled:
            self.beta_s = _Linear(self, "beta_s", cfg.fused_dim, cfg.semantic_hidden)
            self.sem_dec_blocks = [
                _SemanticBlock(self, f"semantic.decoder.block{i}", cfg.semantic_hidden, k)
                for i in range(2)
            ]
            self.sem_head = _Conv(self, "semantic.decoder.head",
                                  cfg.semantic_hidden, cfg.semantic_feature_dim, 1)

        self.quantizer = None
        # Run bookkeeping carried into checkpoints by the training module.
        self.gamma = None
        self.train_config = None
        self.data_rng = None
        self.layers_rng = None
        self.metadata = None

    # -- parameter plumbing ------------------------------------------------------

    def _register(self, name, values):
        if name in self.params:
            raise StateError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(values, dtype=np.float64), requires_grad=True)
        self.params[name] = t
        return t

    def parameters(self):
        return dict(self.params)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def init_codebooks(self, frames, seed=0):
        """Build the quantizer from a (H_u, N) matrix of fused frames."""
        cfg = self.config
        self.quantizer = rvq.QuantizerState.init_from_frames(
            frames, n_layers=cfg.max_layers, codebook_size=cfg.codebook_size,
            seed=seed, decay=cfg.ema_decay, commitment_weight=cfg.commitment_weight,
            dead_threshold=cfg.dead_threshold)

    # -- input coercion ------------------------------------------------------------

    def _as_signal(self, x):
        if isinstance(x, Waveform):
            if x.sample_rate != self.config.sample_rate:
                raise ConfigError(
                    f"waveform sample rate {x.sample_rate} does not match the "
                    f"configured {self.config.sample_rate}")
            samples = x.samples
        elif isinstance(x, Tensor):
            n = int(np.prod(x.values.shape))
            if x.values.ndim == 1:
                x = x.reshape((1, n))
            return x, n
        else:
            samples = np.asarray(x, dtype=np.float64).reshape(-1)
        n = samples.shape[0]
        if n < HOP:
            raise ParameterError(f"input must span at least one hop ({HOP} samples), got {n}")
        return constant(samples.reshape(1, -1)), n

    # -- submodule forward passes -----------------------------------------------

    def encode_acoustic(self, x):
        """(1, n) -> (H_a, T) with T = ceil(n/320); each strided conv pads
        left/right so it consumes a whole number of hops (ceil mode)."""
        h, n = self._as_signal(x)
        if n < HOP:
            raise ParameterError(f"need n >= {HOP}")
        pad = self.config.kernel_size // 2
        h = self.stem(h, padding=(pad, pad))
        for down, res, s in self.enc_blocks:
            t_in = h.shape[1]
            t_out = _ceil_div(t_in, s)
            k = 2 * s
            total = (t_out - 1) * s + k - t_in
            h = down(h, padding=(total // 2, total - total // 2))
            h = res(h)
        return h

    def encode_semantic(self, s):
        if not self.config.semantic_enabled:
            raise StateError("semantic encoder absent in baseline mode")
        if isinstance(s, SemanticFeatures):
            s = constant(s.features)
        if s.shape[0] != self.config.semantic_feature_dim:
            raise ShapeError(
                f"semantic features have {s.shape[0]} channels, config expects "
                f"{self.config.semantic_feature_dim}")
        h = self.sem_in(s, padding=0) if self.sem_in is not None else s
        for block in self.sem_enc_blocks:
            h = block(h)
        return h

    def fuse(self, s_enc, a_enc):
        """U = concat(phi_s(S), phi_a(A)); baseline mode: U = phi_a(A)."""
        if self.config.semantic_enabled:
            if s_enc is None:
                raise ParameterError("semantic encoding required when semantic_enabled")
            if s_enc.shape[1] != a_enc.shape[1]:
                raise ShapeError(
                    f"frame mismatch: semantic {s_enc.shape[1]} vs acoustic {a_enc.shape[1]}")
            return concat_channels(linear(s_enc, self.phi_s.weight, self.phi_s.bias),
                                   linear(a_enc, self.phi_a.weight, self.phi_a.bias))
        return linear(a_enc, self.phi_a.weight, self.phi_a.bias)

    def decode_acoustic(self, u_q, n):
        """(H_u, T) -> (1, n): mirrored transposed convs, each stage trimmed
        centrally to the encoder's corresponding input length."""
        chain = self.config.length_chain(n)
        if u_q.shape[1] != chain[-1]:
            raise ShapeError(
                f"quantized input has {u_q.shape[1]} frames but n={n} implies {chain[-1]}")
        h = linear(u_q, self.beta_a.weight, self.beta_a.bias)
        targets = list(reversed(chain[:-1]))  # lengths after each upsample stage
        for (up, res, s), target in zip(self.dec_blocks, targets):
            t_in = h.shape[1]
            full = (t_in - 1) * s + 2 * s
            trim = full - target
            if trim < 0:
                raise ShapeError("length chain inconsistent with stride")
            h = up(h, padding=(trim // 2, trim - trim // 2))
            h = res(h)
        # No output squashing: a bounded activation here saturates under
        # spectral-only training (the head scale grows until every sample
        # clips, killing reconstruction gradients for good), so the head is
        # linear and WAV serialization clamps to [-1, 1] instead.
        pad = self.config.kernel_size // 2
        return self.head(h, padding=(pad, pad))

    def decode_semantic(self, u_q):
        if not self.config.semantic_enabled:
            raise StateError("semantic decoder absent in baseline mode")
        h = linear(u_q, self.beta_s.weight, self.beta_s.bias)
        for block in self.sem_dec_blocks:
            h = block(h)
        return self.sem_head(h, padding=0)

    # -- full passes -----------------------------------------------------------------

    def _encode_fused(self, x, s_star):
        """Shared front half: returns (U, aligned feature matrix or None, n)."""
        signal, n = self._as_signal(x)
        a_enc = self.encode_acoustic(signal)
        t = a_enc.shape[1]
        aligned = None
        s_enc = None
        if self.config.semantic_enabled:
            if s_star is None:
                raise ParameterError("semantic features required when semantic_enabled")
            aligned = align_frames(s_star, t).features
            s_enc = self.encode_semantic(constant(aligned))
        fused = self.fuse(s_enc, a_enc)
        return fused, aligned, n

    def forward(self, x, s_star=None, mode="train", m=None, bypass_quantizer=False):
        """Full two-stream pass. In eval mode no gradient graph is built.

        bypass_quantizer substitutes the identity for the quantizer so the
        whole model is smooth (used by the finite-difference gradient check).
        """
        if mode not in ("train", "eval"):
            raise ParameterError(f"mode must be 'train' or 'eval', got {mode!r}")
        training = mode == "train"
        if self.quantizer is None and not bypass_quantizer:
            raise StateError("quantizer not initialized; call init_codebooks or load a checkpoint")
        if m is None:
            m = self.config.max_layers
        if not bypass_quantizer and not (1 <= m <= self.quantizer.n_layers):
            raise ParameterError(f"m must lie in [1, {self.quantizer.n_layers}]")

        if training:
            return self._forward_impl(x, s_star, True, m, bypass_quantizer)
        with no_grad():
            return self._forward_impl(x, s_star, False, m, bypass_quantizer)

    def _forward_impl(self, x, s_star, training, m, bypass):
        fused, aligned, n = self._encode_fused(x, s_star)
        t = fused.shape[1]
        if bypass:
            quantized = fused
            tokens = None
            commitment = Tensor(np.asarray(0.0))
            qres = None
        else:
            qres = rvq.quantize(self.quantizer, fused, m, training=training,
                                keep_layer_inputs=training)
            quantized = qres.quantized
            tokens = qres.tokens
            commitment = qres.commitment_loss
        x_hat = self.decode_acoustic(quantized, n)
        s_hat = self.decode_semantic(quantized) if self.config.semantic_enabled else None
        return ForwardOutput(x_hat=x_hat, s_hat=s_hat, tokens=tokens, fused=fused,
                             quantized=quantized, m_active=m, commitment=commitment,
                             quantize_result=qres, n_samples=n, frames=t,
                             aligned_features=aligned)

    # -- token-level interface ----------------------------------------------------

    def encode_tokens(self, x, s_star=None, m=None):
        out = self.forward(x, s_star, mode="eval", m=m)
        return out.tokens

    def decode_tokens(self, tokens, n):
        if self.quantizer is None:
            raise StateError("quantizer not initialized")
        tokens = np.asarray(tokens)
        if tokens.ndim != 2:
            raise ShapeError("token matrix must be 2-D (layers, frames)")
        expected_t = self.config.frames_for_samples(n)
        if tokens.shape[1] != expected_t:
            raise ShapeError(
                f"token matrix has {tokens.shape[1]} frames but n={n} implies {expected_t}")
        u_q = rvq.dequantize(tokens, tokens.shape[0], self.quantizer)
        with no_grad():
            x_hat = self.decode_acoustic(constant(u_q), n)
        return Waveform(samples=x_hat.values.reshape(-1).copy(),
                        sample_rate=self.config.sample_rate)
