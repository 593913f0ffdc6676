"""Residual vector quantizer with EMA-learned codebooks.

Each layer holds K codewords of dimension D. quantize() subtracts the
nearest codeword per frame layer by layer; the quantized output accumulates
the selected codewords in the same order, so dequantize() over the same
tokens reproduces it bit-exactly. Codebooks learn from exponential moving
averages of assignment counts and sums, not gradients; the straight-through
estimator carries gradients across the discretization.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .diffcore import Tensor, constant, mse, straight_through
from .errors import DataError, ParameterError, ShapeError

LAYER_OPTIONS = (1, 2, 3, 4, 8)
EMA_EPS = 1e-5


@dataclass
class Codebook:
    entries: np.ndarray  # (K, D)
    ema_counts: np.ndarray  # (K,)
    ema_sums: np.ndarray  # (K, D)

    def validate(self):
        k, d = self.entries.shape
        if self.ema_counts.shape != (k,) or self.ema_sums.shape != (k, d):
            raise ShapeError("codebook EMA accumulator shapes do not match entries")
        if np.any(self.ema_counts < 0):
            raise DataError("EMA counts must be non-negative")


class QuantizerState:
    """Ordered codebook layers plus the EMA/dead-code hyperparameters.

    The internal generator (seeded by rng_seed) drives dead-code
    reinitialization; its state is checkpointable for bit-exact resume.
    """

    def __init__(self, layers, decay=0.99, commitment_weight=0.25,
                 dead_threshold=1e-2, rng_seed=0):
        if not layers:
            raise ParameterError("quantizer needs at least one layer")
        d = layers[0].entries.shape[1]
        for cb in layers:
            cb.validate()
            if cb.entries.shape[1] != d:
                raise ShapeError("all layers must share the code dimension")
        if not (0.0 < decay < 1.0):
            raise ParameterError("decay must lie in (0, 1)")
        self.layers = list(layers)
        self.decay = float(decay)
        self.commitment_weight = float(commitment_weight)
        self.dead_threshold = float(dead_threshold)
        self.rng_seed = int(rng_seed)
        self.rng = np.random.default_rng(self.rng_seed)

    @property
    def n_layers(self):
        return len(self.layers)

    @property
    def codebook_size(self):
        return self.layers[0].entries.shape[0]

    @property
    def dim(self):
        return self.layers[0].entries.shape[1]

    # -- construction ---------------------------------------------------------

    @classmethod
    def init_from_frames(cls, frames, n_layers, codebook_size, seed=0,
                         decay=0.99, commitment_weight=0.25, dead_threshold=1e-2):
        """Seed codebooks from data: layer 1 from the frames themselves,
        deeper layers from the residuals the earlier layers leave behind.

        Each deeper layer reserves its last slot for the zero vector, an
        always-available "add nothing" code: with it, no layer can make a
        frame's residual worse, which is what keeps per-layer residual MSE
        non-increasing for every input.  That slot is permanent; EMA updates
        and dead-code resets leave it alone.  The remaining slots sample
        nonzero residuals with probability proportional to squared norm:
        energetic residuals make codes that actually win frames from the
        zero code, where norm-blind sampling tends to seed codes the zero
        code immediately starves.  When too few nonzero residuals remain,
        the survivors are tiled with a small seeded jitter (duplicate codes
        would otherwise never separate).
        """
        frames = np.asarray(frames, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[1] < 1:
            raise ShapeError("init frames must be a non-empty (D, N) matrix")
        if n_layers < 1 or codebook_size < 1:
            raise ParameterError("layer count and codebook size must be >= 1")
        d, n = frames.shape
        rng = np.random.default_rng(seed)
        layers = []
        residual = frames.copy()
        for layer_index in range(n_layers):
            want = codebook_size if layer_index == 0 else codebook_size - 1
            sq_norm = (residual * residual).sum(axis=0)
            nz = np.flatnonzero(sq_norm > 0)
            if nz.size >= want > 0:
                p = sq_norm[nz] / sq_norm[nz].sum()
                pick = rng.choice(nz.size, size=want, replace=False, p=p)
                entries = residual[:, nz[pick]].T.copy()
            elif want > 0:
                base = nz if nz.size else np.arange(n)
                idx = base[np.arange(want) % base.size]
                scale = residual.std() + 1e-8
                entries = residual[:, idx].T + 1e-3 * scale * rng.standard_normal(
                    (want, d))
            else:
                entries = np.zeros((0, d))
            if layer_index > 0:
                entries = np.concatenate([entries, np.zeros((1, d))], axis=0)
            layers.append(Codebook(entries=entries,
                                   ema_counts=np.ones(codebook_size),
                                   ema_sums=entries.copy()))
            sq = (entries * entries).sum(axis=1)
            dist = sq[:, None] - 2.0 * (entries @ residual)
            tok = np.argmin(dist, axis=0)
            residual = residual - entries[tok].T
        return cls(layers, decay=decay, commitment_weight=commitment_weight,
                   dead_threshold=dead_threshold, rng_seed=seed)

    # -- checkpoint support -----------------------------------------------------

    def state_arrays(self):
        out = {}
        for i, cb in enumerate(self.layers):
            out[f"rvq.layer{i}.entries"] = cb.entries
            out[f"rvq.layer{i}.ema_counts"] = cb.ema_counts
            out[f"rvq.layer{i}.ema_sums"] = cb.ema_sums
        return out

    def load_state_arrays(self, arrays):
        for i, cb in enumerate(self.layers):
            for attr, suffix in (("entries", "entries"), ("ema_counts", "ema_counts"),
                                 ("ema_sums", "ema_sums")):
                key = f"rvq.layer{i}.{suffix}"
                if key not in arrays:
                    raise ShapeError(f"checkpoint missing quantizer array {key!r}")
                arr = np.asarray(arrays[key], dtype=np.float64)
                if arr.shape != getattr(cb, attr).shape:
                    raise ShapeError(f"checkpoint array {key!r} has shape {arr.shape}, "
                                     f"expected {getattr(cb, attr).shape}")
                setattr(cb, attr, arr.copy())
            if i > 0 and cb.entries.shape[0] and cb.entries[-1].any():
                raise DataError(
                    f"quantizer layer {i} must keep its last code at zero "
                    "(the reserved add-nothing code)")

    def rng_state_json(self):
        return json.dumps(self.rng.bit_generator.state, sort_keys=True)

    def set_rng_state_json(self, text):
        self.rng.bit_generator.state = json.loads(text)


@dataclass
class QuantizeResult:
    quantized: object  # Tensor in training mode, ndarray otherwise
    tokens: np.ndarray  # (m_active, T) int64
    per_layer_residual_mse: list
    commitment_loss: object  # scalar Tensor in training mode, float otherwise
    layer_inputs: list = field(default_factory=list)  # residual fed to each layer


def _pinned_zero_row(state, layer):
    """Index of the layer's reserved zero code, or None.

    Layers past the first keep their last code pinned at the zero vector
    for as long as it is exactly zero (init_from_frames plants it there);
    the pin is what guarantees a layer can never worsen a residual.
    """
    if layer == 0:
        return None
    entries = state.layers[layer].entries
    if entries.shape[0] and not entries[-1].any():
        return entries.shape[0] - 1
    return None


def _nearest(entries, residual, entries_sq):
    # ||r - e||^2 = ||r||^2 - 2 e.r + ||e||^2; the ||r||^2 term is constant
    # per frame so the argmin only needs the last two. np.argmin returns the
    # first minimum, which is the lowest-index tie-break the contract wants.
    dist = entries_sq[:, None] - 2.0 * (entries @ residual)
    return np.argmin(dist, axis=0)


def quantize(state, feats, m_active, training=False, keep_layer_inputs=False):
    """Residual quantization of (D, T) features through m_active layers.

    feats may be a plain array or a Tensor; with training=True and a Tensor
    input the result carries the straight-through quantized tensor and a
    commitment loss tensor (weighted mean squared distance to the detached
    quantized output).
    """
    if not (1 <= m_active <= state.n_layers):
        raise ParameterError(
            f"m_active must lie in [1, {state.n_layers}], got {m_active}")
    is_tensor = isinstance(feats, Tensor)
    values = feats.values if is_tensor else np.asarray(feats, dtype=np.float64)
    if values.ndim != 2:
        raise ShapeError("quantizer input must be 2-D (channels, frames)")
    if values.shape[0] != state.dim:
        raise ShapeError(
            f"quantizer input has {values.shape[0]} channels, codebooks expect {state.dim}")
    if values.shape[1] < 1:
        raise ShapeError("quantizer input must contain at least one frame")

    t = values.shape[1]
    residual = values.copy()
    quantized = np.zeros_like(values)
    tokens = np.empty((m_active, t), dtype=np.int64)
    mses = []
    layer_inputs = []
    for layer in range(m_active):
        entries = state.layers[layer].entries
        entries_sq = (entries * entries).sum(axis=1)
        if keep_layer_inputs:
            layer_inputs.append(residual.copy())
        tok = _nearest(entries, residual, entries_sq)
        selected = entries[tok].T
        residual = residual - selected
        quantized = quantized + selected
        tokens[layer] = tok
        mses.append(float(np.mean(residual * residual)))

    if training and is_tensor:
        q_out = straight_through(feats, quantized)
        commit = mse(feats, constant(quantized)) * state.commitment_weight
    else:
        # Tensor in, Tensor out (graph-stopping) so eval paths stay uniform.
        q_out = constant(quantized) if is_tensor else quantized
        diff = values - quantized
        commit = state.commitment_weight * float(np.mean(diff * diff))
    return QuantizeResult(quantized=q_out, tokens=tokens,
                          per_layer_residual_mse=mses, commitment_loss=commit,
                          layer_inputs=layer_inputs)


def dequantize(tokens, m, state):
    """Sum the selected codewords over the first m layers; bit-exact against
    quantize() because the accumulation order is identical."""
    tokens = np.asarray(tokens)
    if tokens.ndim != 2:
        raise ShapeError("token matrix must be 2-D (layers, frames)")
    if not (1 <= m <= tokens.shape[0]):
        raise ParameterError(f"m must lie in [1, {tokens.shape[0]}], got {m}")
    if m > state.n_layers:
        raise ParameterError(f"m={m} exceeds the quantizer's {state.n_layers} layers")
    k = state.codebook_size
    if tokens.min() < 0 or tokens.max() >= k:
        raise ParameterError(f"token index out of range [0, {k})")
    out = np.zeros((state.dim, tokens.shape[1]))
    for layer in range(m):
        out = out + state.layers[layer].entries[tokens[layer]].T
    return out


def ema_update(state, layer, residual_in, tokens_row):
    """Fold one batch of assignments into a layer's EMA statistics.

    counts <- decay*counts + (1-decay)*n; sums likewise with the summed
    assigned frames; entries <- sums / max(counts, 1e-5) wherever the code
    was ever observed.  A reserved zero code (see init_from_frames) keeps
    its statistics but its entry row never moves.
    """
    if not (0 <= layer < state.n_layers):
        raise ParameterError(f"layer {layer} out of range [0, {state.n_layers})")
    residual_in = np.asarray(residual_in, dtype=np.float64)
    tokens_row = np.asarray(tokens_row)
    if residual_in.ndim != 2 or residual_in.shape[0] != state.dim:
        raise ShapeError("residual_in must be (D, T)")
    if tokens_row.shape != (residual_in.shape[1],):
        raise ShapeError("tokens_row length must match the frame count")
    k = state.codebook_size
    if tokens_row.size and (tokens_row.min() < 0 or tokens_row.max() >= k):
        raise ParameterError(f"token index out of range [0, {k})")

    cb = state.layers[layer]
    lam = state.decay
    n = np.bincount(tokens_row, minlength=k).astype(np.float64)
    sums = np.zeros_like(cb.ema_sums)
    np.add.at(sums, tokens_row, residual_in.T)
    pin = _pinned_zero_row(state, layer)
    cb.ema_counts = lam * cb.ema_counts + (1.0 - lam) * n
    cb.ema_sums = lam * cb.ema_sums + (1.0 - lam) * sums
    touched = (n > 0) | (cb.ema_counts > 0)
    if pin is not None:
        touched[pin] = False
    denom = np.maximum(cb.ema_counts[touched], EMA_EPS)
    cb.entries[touched] = cb.ema_sums[touched] / denom[:, None]


def reinit_dead_codes(state, layer, batch):
    """Replace codes whose EMA count fell below dead_threshold with frames
    sampled (seeded, uniform) from the batch; returns how many were reset.
    A reserved zero code (see init_from_frames) is never replaced."""
    if not (0 <= layer < state.n_layers):
        raise ParameterError(f"layer {layer} out of range [0, {state.n_layers})")
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[0] != state.dim:
        raise ShapeError("batch must be (D, N)")
    if batch.shape[1] < 1:
        raise ParameterError("dead-code reinitialization needs a non-empty batch")
    cb = state.layers[layer]
    dead = cb.ema_counts < state.dead_threshold
    pin = _pinned_zero_row(state, layer)
    if pin is not None:
        dead[pin] = False
    count = int(dead.sum())
    if count == 0:
        return 0
    picks = state.rng.integers(0, batch.shape[1], size=count)
    frames = batch[:, picks].T
    cb.entries[dead] = frames
    cb.ema_counts[dead] = 1.0
    cb.ema_sums[dead] = frames
    return count


def sample_active_layers(state, rng):
    """Uniform draw over the quantizer-dropout options {1,2,3,4,8}, filtered
    to the layers this quantizer actually has (the full count is always an
    option)."""
    options = sorted({o for o in LAYER_OPTIONS if o <= state.n_layers} | {state.n_layers})
    return int(rng.choice(options))


def codebook_perplexity(tokens_row, k):
    """exp(entropy) of the empirical code usage; 1 = collapse, K = uniform."""
    tokens_row = np.asarray(tokens_row)
    if tokens_row.size == 0:
        raise ParameterError("perplexity of an empty token sequence")
    if tokens_row.min() < 0 or tokens_row.max() >= k:
        raise ParameterError(f"token index out of range [0, {k})")
    counts = np.bincount(tokens_row.reshape(-1), minlength=k).astype(np.float64)
    return perplexity_from_counts(counts)


def perplexity_from_counts(counts):
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        raise ParameterError("perplexity needs positive total count")
    p = counts / total
    nz = p[p > 0]
    return float(np.exp(-(nz * np.log(nz)).sum()))
