"""Training loop: spectral + semantic losses, EMA codebook updates,
checkpointing, and deterministic seeding.

The differentiable loss pipeline reuses the same framing indices, DFT
matrices, filterbank, and operation order as dsp.spectral_distance; the one
departure is a tiny epsilon under the magnitude square root that keeps the
backward rule finite at silent bins, so a logged training loss matches the
evaluation distance to far beyond float display precision without being
bitwise identical on exact zeros.
"""

import json
import math
import os
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import checkpoint as ckpt
from . import dsp, rvq
from .codec import HOP, CodecConfig, CodecModel
from .diffcore import Adam, Tensor, constant, mse, no_grad
from .dsp import LOG_FLOOR, LOSS_HOP, LOSS_N_FFT, LOSS_N_MELS, MAG_EPS, Waveform
from .errors import (DatasetError, ModeMismatchError, NumericError,
                     ParameterError, ShapeError, StateError)
from .semantic import SemanticFeatures, align_frames

MODES = ("xcodec", "baseline")
INIT_POOL_COVERAGE = 16  # fused frames pooled per codebook entry at initialization


@dataclass
class LossReport:
    mel_loss: float
    stft_loss: float
    semantic_mse: object  # float, or None when the semantic stream is absent
    commitment: float
    total: float
    gamma: float
    total_tensor: object = field(default=None, repr=False, compare=False)

    def terms(self):
        return (("mel", self.mel_loss), ("stft", self.stft_loss),
                ("sem", self.semantic_mse), ("commit", self.commitment),
                ("total", self.total))


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 4
    segment_samples: int = 16000
    lr: float = 3e-4
    seed: int = 0
    checkpoint_every: int = 500
    dead_code_every: int = 100
    gamma: object = None  # None = calibrate from the first batch

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise ParameterError("steps and batch_size must be >= 1")
        if self.segment_samples < HOP or self.segment_samples % HOP != 0:
            raise ParameterError(
                f"segment_samples must be a positive multiple of {HOP}, "
                f"got {self.segment_samples}")
        if self.lr <= 0:
            raise ParameterError("lr must be positive")
        if self.checkpoint_every < 1 or self.dead_code_every < 1:
            raise ParameterError("checkpoint_every and dead_code_every must be >= 1")
        if self.gamma is not None and self.gamma <= 0:
            raise ParameterError("gamma must be positive when given")
        if self.seed < 0:
            raise ParameterError("seed must be non-negative")


# -- differentiable spectral losses -----------------------------------------------


def _log_magnitudes(samples, kind, sample_rate):
    """Plain-array side of the loss: log(1e-5 + magnitudes), mel or stft."""
    window = dsp.WindowSpec("hann", LOSS_N_FFT)
    mags = dsp.magnitude_frames(samples, LOSS_N_FFT, LOSS_HOP, window)
    if kind == "mel":
        fb = dsp.mel_filterbank(LOSS_N_FFT, LOSS_N_MELS, sample_rate)
        mags = fb.weights @ mags
    return np.log(LOG_FLOOR + mags)


def spectral_loss_terms(x_hat, target_samples, sample_rate):
    """Differentiable (mel_term, stft_term) scalar tensors against a fixed
    target waveform, arithmetic-matched to dsp.spectral_distance."""
    target_samples = np.asarray(target_samples, dtype=np.float64).reshape(-1)
    n = target_samples.shape[0]
    pred_n = int(np.prod(x_hat.shape))
    if pred_n != n:
        raise ShapeError(f"prediction has {pred_n} samples, target has {n}")
    idx = dsp.frame_index_matrix(n, LOSS_N_FFT, LOSS_HOP)
    window = dsp.WindowSpec("hann", LOSS_N_FFT).array()
    cos, sin = dsp.dft_matrices(LOSS_N_FFT)

    framed = x_hat.reshape(n).gather_rows(idx)
    windowed = framed * constant(np.broadcast_to(window[None, :], idx.shape))
    re = windowed @ constant(cos)
    im = windowed @ constant(sin)
    mag_t = ((re * re) + (im * im) + MAG_EPS).sqrt().transpose()  # (bins, frames)

    fb = dsp.mel_filterbank(LOSS_N_FFT, LOSS_N_MELS, sample_rate)
    mel_pred = (LOG_FLOOR + (constant(fb.weights) @ mag_t)).log()
    stft_pred = (LOG_FLOOR + mag_t).log()
    mel_term = (mel_pred - constant(_log_magnitudes(target_samples, "mel", sample_rate))
                ).abs().mean()
    stft_term = (stft_pred - constant(_log_magnitudes(target_samples, "stft", sample_rate))
                 ).abs().mean()
    return mel_term, stft_term


def total_loss(out, x, s_star=None, gamma=1.0):
    """Combine reconstruction, semantic, and commitment terms.

    total = mel + stft + gamma*semantic_mse + commitment; the semantic term
    disappears (reported as None) when the model has no semantic stream.
    """
    if isinstance(x, Waveform):
        target = x.samples
        sample_rate = x.sample_rate
    else:
        target = np.asarray(x, dtype=np.float64).reshape(-1)
        sample_rate = 16000
    mel_t, stft_t = spectral_loss_terms(out.x_hat, target, sample_rate)

    commit = out.commitment
    if not isinstance(commit, Tensor):
        commit = constant(np.asarray(float(commit)))
    total_t = mel_t + stft_t + commit

    sem_value = None
    if out.s_hat is not None:
        if s_star is None:
            s_star = out.aligned_features
        if s_star is None:
            raise ParameterError("semantic target required for a semantic model")
        if isinstance(s_star, SemanticFeatures):
            s_star = align_frames(s_star, out.s_hat.shape[1]).features
        sem_t = mse(out.s_hat, constant(np.asarray(s_star, dtype=np.float64)))
        total_t = total_t + sem_t * float(gamma)
        sem_value = float(sem_t.values)

    report = LossReport(mel_loss=float(mel_t.values), stft_loss=float(stft_t.values),
                        semantic_mse=sem_value, commitment=float(commit.values),
                        total=float(total_t.values), gamma=float(gamma),
                        total_tensor=total_t)
    _check_report_finite(report)
    return report


def _check_report_finite(report):
    for name, value in report.terms():
        if value is None:
            continue
        if not math.isfinite(value):
            raise NumericError(f"training aborted: loss term {name} is non-finite ({value})")


# -- single optimization step -------------------------------------------------------


def train_step(model, batch, opt, rng, reinit_dead=False):
    """One optimizer step over a batch of (waveform, features) pairs.

    Samples one active-layer count for the whole batch, averages the total
    loss, backpropagates, applies Adam, then folds the batch's assignments
    into the EMA codebooks (and optionally revives dead codes).
    """
    if not batch:
        raise ParameterError("train_step needs a non-empty batch")
    state = model.quantizer
    if state is None:
        raise StateError("quantizer not initialized")
    gamma = model.gamma if model.gamma is not None else 1.0
    m = rvq.sample_active_layers(state, rng)

    model.zero_grad()
    reports = []
    total = None
    layer_inputs = [[] for _ in range(m)]
    layer_tokens = [[] for _ in range(m)]
    for x, feats in batch:
        out = model.forward(x, feats, mode="train", m=m)
        report = total_loss(out, x, s_star=out.aligned_features, gamma=gamma)
        reports.append(report)
        total = report.total_tensor if total is None else total + report.total_tensor
        qres = out.quantize_result
        for layer in range(m):
            layer_inputs[layer].append(qres.layer_inputs[layer])
            layer_tokens[layer].append(qres.tokens[layer])
    scaled = total * (1.0 / len(batch))
    scaled.backward()
    opt.step()

    for layer in range(m):
        inputs = np.concatenate(layer_inputs[layer], axis=1)
        tokens = np.concatenate(layer_tokens[layer])
        rvq.ema_update(state, layer, inputs, tokens)
        if reinit_dead:
            rvq.reinit_dead_codes(state, layer, inputs)

    k = len(reports)
    sem = None
    if reports[0].semantic_mse is not None:
        sem = sum(r.semantic_mse for r in reports) / k
    return LossReport(
        mel_loss=sum(r.mel_loss for r in reports) / k,
        stft_loss=sum(r.stft_loss for r in reports) / k,
        semantic_mse=sem,
        commitment=sum(r.commitment for r in reports) / k,
        total=sum(r.total for r in reports) / k,
        gamma=gamma)


# -- checkpoint round trip -----------------------------------------------------------


def _rng_state_json(rng):
    return json.dumps(rng.bit_generator.state, sort_keys=True)


def _rng_from_state_json(text):
    rng = np.random.default_rng(0)
    rng.bit_generator.state = json.loads(text)
    return rng


def save_checkpoint(model, opt, step, path):
    """Serialize parameters, Adam moments, codebook state, and run metadata
    so a load restores training bit for bit."""
    arrays = {f"param.{name}": t.values for name, t in model.params.items()}
    arrays.update(opt.state_arrays())
    if model.quantizer is not None:
        arrays.update(model.quantizer.state_arrays())
    metadata = {
        "kind": "codec-checkpoint",
        "step": int(step),
        "mode": "xcodec" if model.config.semantic_enabled else "baseline",
        "semantic_enabled": bool(model.config.semantic_enabled),
        "gamma": model.gamma,
        "codec_config": model.config.to_dict(),
        "train_config": asdict(model.train_config) if model.train_config else None,
        "padding": {"hop": HOP, "frame_rule": "ceil(n/hop)",
                    "encoder_pad": "centered per stage", "decoder_trim": "centered"},
        "rng_quantizer": (model.quantizer.rng_state_json()
                          if model.quantizer is not None else None),
        "rng_data": (_rng_state_json(model.data_rng)
                     if model.data_rng is not None else None),
        "rng_layers": (_rng_state_json(model.layers_rng)
                       if model.layers_rng is not None else None),
    }
    ckpt.write_arrays(path, arrays, metadata)
    return path


def load_checkpoint(path, expect_semantic=None):
    """Rebuild (model, opt, step) from a checkpoint file.

    expect_semantic pins the required mode: loading a baseline checkpoint
    where a semantic model is expected (or vice versa) raises a
    mode-mismatch error instead of mis-wiring parameters.
    """
    arrays, metadata = ckpt.read_arrays(path)
    if metadata.get("kind") != "codec-checkpoint":
        raise StateError(f"not a codec checkpoint: kind={metadata.get('kind')!r}")
    config = CodecConfig.from_dict(metadata["codec_config"])
    if expect_semantic is not None and bool(config.semantic_enabled) != bool(expect_semantic):
        have = "baseline" if not config.semantic_enabled else "xcodec"
        want = "xcodec" if expect_semantic else "baseline"
        raise ModeMismatchError(
            f"checkpoint holds a {have} model but a {want} model was requested")

    model = CodecModel(config, seed=0)
    for name, tensor in model.params.items():
        key = f"param.{name}"
        if key not in arrays:
            raise StateError(f"checkpoint missing parameter {key!r}")
        values = arrays[key]
        if values.shape != tensor.values.shape:
            raise ShapeError(f"checkpoint parameter {key!r} has shape {values.shape}, "
                             f"model expects {tensor.values.shape}")
        if not np.all(np.isfinite(values)):
            raise NumericError(f"checkpoint parameter {key!r} contains non-finite values")
        tensor.values = values.copy()

    layers = []
    for i in range(config.max_layers):
        key = f"rvq.layer{i}.entries"
        if key not in arrays:
            raise StateError(f"checkpoint missing quantizer array {key!r}")
        layers.append(rvq.Codebook(entries=arrays[key].copy(),
                                   ema_counts=arrays[f"rvq.layer{i}.ema_counts"].copy(),
                                   ema_sums=arrays[f"rvq.layer{i}.ema_sums"].copy()))
    model.quantizer = rvq.QuantizerState(
        layers, decay=config.ema_decay, commitment_weight=config.commitment_weight,
        dead_threshold=config.dead_threshold, rng_seed=0)
    if metadata.get("rng_quantizer"):
        model.quantizer.set_rng_state_json(metadata["rng_quantizer"])

    train_config = None
    if metadata.get("train_config"):
        tc = dict(metadata["train_config"])
        train_config = TrainConfig(**{f.name: tc[f.name] for f in fields(TrainConfig)
                                      if f.name in tc})
    model.gamma = metadata.get("gamma")
    model.train_config = train_config
    if metadata.get("rng_data"):
        model.data_rng = _rng_from_state_json(metadata["rng_data"])
    if metadata.get("rng_layers"):
        model.layers_rng = _rng_from_state_json(metadata["rng_layers"])
    model.metadata = metadata

    lr = train_config.lr if train_config else 3e-4
    opt = Adam(model.params, lr=lr)
    adam_arrays = {k: v for k, v in arrays.items() if k.startswith("adam.")}
    opt.load_state_arrays(adam_arrays)
    return model, opt, int(metadata["step"])


# -- data plumbing ----------------------------------------------------------------


def _load_corpus(corpus, semantic, feature_dim):
    """Materialize (name, Waveform, features-or-None); dataset errors name
    the offending clip."""
    items = []
    for clip in corpus:
        name = getattr(clip, "name", str(clip))
        wav = clip.waveform()
        feats = clip.features()
        if semantic:
            if feats is None:
                raise DatasetError(f"clip {name!r} has no semantic features "
                                   "(required for semantic training)")
            if feats.dim != feature_dim:
                raise DatasetError(f"clip {name!r} features have {feats.dim} channels, "
                                   f"config expects {feature_dim}")
        if wav.n < HOP:
            raise DatasetError(f"clip {name!r} is shorter than one hop ({wav.n} samples)")
        items.append((name, wav, feats))
    if not items:
        raise DatasetError("corpus is empty")
    return items


def _crop(wav, feats, seg, rng):
    """Hop-aligned random crop so features stay frame-synchronous."""
    n = wav.n
    if n <= seg:
        return wav, feats
    start = int(rng.integers(0, (n - seg) // HOP + 1)) * HOP
    samples = wav.samples[start:start + seg].copy()
    cropped = Waveform(samples=samples, sample_rate=wav.sample_rate)
    if feats is None:
        return cropped, None
    f0 = start // HOP
    sub = feats.features[:, f0:f0 + seg // HOP].copy()
    return cropped, SemanticFeatures(features=sub, frame_rate=feats.frame_rate,
                                     source=feats.source)


def _format_log_line(step, report, ppl):
    sem = "na" if report.semantic_mse is None else f"{report.semantic_mse:.6f}"
    ppl_text = ",".join(f"{v:.2f}" for v in ppl)
    return (f"step={step} mel={report.mel_loss:.6f} stft={report.stft_loss:.6f} "
            f"sem={sem} commit={report.commitment:.6f} total={report.total:.6f} "
            f"ppl=[{ppl_text}]")


def train_loop(config, corpus, mode, out_dir=".", codec_config=None,
               log=None, on_step=None, resume_from=None):
    """Run the full training schedule; returns the final checkpoint path.

    mode is "xcodec" (semantic stream on) or "baseline" (acoustic only).
    Seeding is hierarchical: one seed fans out to independent streams for
    model init, codebook init, data order, and layer-count sampling, so a
    run is reproducible end to end and a resumed run is bit-exact.
    """
    if mode not in MODES:
        raise ParameterError(f"mode must be one of {MODES}, got {mode!r}")
    train_cfg = config
    if not isinstance(train_cfg, TrainConfig):
        raise ParameterError("config must be a TrainConfig")
    semantic = mode == "xcodec"
    base_cfg = codec_config if codec_config is not None else CodecConfig()
    if base_cfg.semantic_enabled != semantic:
        base_cfg = replace(base_cfg, semantic_enabled=semantic)

    os.makedirs(out_dir, exist_ok=True)

    if resume_from is not None:
        # the checkpoint's architecture wins; validate the corpus against it
        model, opt, start_step = load_checkpoint(resume_from, expect_semantic=semantic)
        items = _load_corpus(corpus, semantic, model.config.semantic_feature_dim)
        if model.data_rng is None or model.layers_rng is None:
            raise StateError("checkpoint lacks rng state; cannot resume bit-exactly")
        data_rng, layers_rng = model.data_rng, model.layers_rng
        if start_step >= train_cfg.steps:
            raise ParameterError(
                f"checkpoint already at step {start_step}, config asks for {train_cfg.steps}")
        # The continued run adopts the caller's schedule; everything that
        # affects the arithmetic (lr, batch, rng streams) is restored state.
        model.train_config = train_cfg
        opt.lr = train_cfg.lr
    else:
        items = _load_corpus(corpus, semantic, base_cfg.semantic_feature_dim)
        seq = np.random.SeedSequence(train_cfg.seed)
        s_model, s_codebook, s_data, s_layers = seq.spawn(4)
        model = CodecModel(base_cfg, seed=np.random.default_rng(s_model))
        data_rng = np.random.default_rng(s_data)
        layers_rng = np.random.default_rng(s_layers)
        model.data_rng, model.layers_rng = data_rng, layers_rng
        model.train_config = train_cfg
        start_step = 0

        # Codebooks start from real fused frames, not random noise: push
        # whole clips through the untrained encoders until the pool covers
        # the codebook many times over.  Each residual layer consumes up to
        # codebook_size frames of the pool (their residuals go to zero), so
        # a thin pool would starve the deep layers of nonzero seeds.
        pool, pooled = [], 0
        target = INIT_POOL_COVERAGE * base_cfg.codebook_size
        with no_grad():
            for name, wav, feats in items:
                fused, _, _ = model._encode_fused(wav, feats)
                pool.append(fused.values)
                pooled += fused.values.shape[1]
                if pooled >= target:
                    break
        frames = np.concatenate(pool, axis=1)
        codebook_seed = int(s_codebook.generate_state(1)[0])
        model.init_codebooks(frames, seed=codebook_seed)

        if train_cfg.gamma is not None:
            model.gamma = float(train_cfg.gamma)
        elif not semantic:
            model.gamma = 1.0
        else:
            # Calibrate once at step 0: gamma scales the semantic term to
            # the initial mel loss, then stays frozen for the whole run.
            name, wav, feats = items[0]
            cw, cf = _crop(wav, feats, train_cfg.segment_samples,
                           np.random.default_rng(0))
            out = model.forward(cw, cf, mode="eval", m=base_cfg.max_layers)
            probe = total_loss(out, cw, s_star=out.aligned_features, gamma=1.0)
            if probe.semantic_mse is None or probe.semantic_mse <= 1e-12:
                model.gamma = 1.0
            else:
                model.gamma = probe.mel_loss / probe.semantic_mse
        opt = Adam(model.params, lr=train_cfg.lr)

    the_log = log if log is not None else (lambda line: None)
    final_path = os.path.join(out_dir, f"{mode}-final.sckp")
    for step in range(start_step + 1, train_cfg.steps + 1):
        picks = data_rng.integers(0, len(items), size=train_cfg.batch_size)
        batch = []
        for i in picks:
            name, wav, feats = items[int(i)]
            cw, cf = _crop(wav, feats, train_cfg.segment_samples, data_rng)
            batch.append((cw, cf))
        reinit = step % train_cfg.dead_code_every == 0
        report = train_step(model, batch, opt, layers_rng, reinit_dead=reinit)
        ppl = [rvq.perplexity_from_counts(cb.ema_counts) for cb in model.quantizer.layers]
        the_log(_format_log_line(step, report, ppl))
        if on_step is not None:
            on_step(step, report, ppl)
        if step % train_cfg.checkpoint_every == 0 and step < train_cfg.steps:
            save_checkpoint(model, opt, step,
                            os.path.join(out_dir, f"{mode}-step{step:06d}.sckp"))
    save_checkpoint(model, opt, train_cfg.steps, final_path)
    return final_path
