"""Measurement harness: ABX discriminability via DTW over angular frame
distances, reconstruction spectral distances, and codebook statistics."""

import os
from dataclasses import dataclass

import numpy as np

from . import dsp, rvq
from .diffcore import no_grad
from .errors import DatasetError, FormatError, ParameterError, ShapeError
from .semantic import load_features

ZERO_NORM_DISTANCE = 0.5  # declared convention for frames with no direction
DEFAULT_MAX_TRIPLES = 5000


# -- frame distances and DTW ---------------------------------------------------


def frame_distance_matrix(a, b):
    """(Ta, Tb) angular distances arccos(cos_sim)/pi between frame columns.

    Bitwise-identical frames get distance exactly 0 (the cosine route can
    lose that to rounding); zero-norm frames are 0.5 from everything.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] < 1 or b.shape[1] < 1:
        raise ShapeError("inputs must be non-empty (channels, frames) matrices")
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"channel counts differ: {a.shape[0]} vs {b.shape[0]}")
    na = np.sqrt((a * a).sum(axis=0))
    nb = np.sqrt((b * b).sum(axis=0))
    denom = na[:, None] * nb[None, :]
    safe = np.where(denom > 0.0, denom, 1.0)
    cos = np.clip((a.T @ b) / safe, -1.0, 1.0)
    dist = np.arccos(cos) / np.pi
    equal = np.all(a[:, :, None] == b[:, None, :], axis=0)
    dist[equal] = 0.0
    zero = (na[:, None] == 0.0) | (nb[None, :] == 0.0)
    dist[zero] = ZERO_NORM_DISTANCE
    return dist


def dtw_distance(a, b):
    """Path-averaged DTW cost with steps {(1,0),(0,1),(1,1)}.

    The recursion minimizes (total cost, path length) lexicographically,
    which keeps the result symmetric even through exact ties, and returns
    total/length for the optimal path.
    """
    dist = frame_distance_matrix(a, b)
    ta, tb = dist.shape
    total = np.empty((ta, tb))
    length = np.empty((ta, tb), dtype=np.int64)
    total[0, 0] = dist[0, 0]
    length[0, 0] = 1
    for j in range(1, tb):
        total[0, j] = total[0, j - 1] + dist[0, j]
        length[0, j] = j + 1
    for i in range(1, ta):
        total[i, 0] = total[i - 1, 0] + dist[i, 0]
        length[i, 0] = i + 1
        for j in range(1, tb):
            bt, bl = total[i - 1, j - 1], length[i - 1, j - 1]
            for ct, cl in ((total[i - 1, j], length[i - 1, j]),
                           (total[i, j - 1], length[i, j - 1])):
                if ct < bt or (ct == bt and cl < bl):
                    bt, bl = ct, cl
            total[i, j] = bt + dist[i, j]
            length[i, j] = bl + 1
    return float(total[-1, -1]) / int(length[-1, -1])


# -- ABX -------------------------------------------------------------------------


@dataclass(frozen=True)
class ABXItem:
    representation: np.ndarray  # (channels, frames)
    category: str
    context: str

    def __post_init__(self):
        r = np.asarray(self.representation, dtype=np.float64)
        if r.ndim != 2 or r.shape[1] < 1:
            raise ShapeError("representation must be a non-empty (channels, frames) matrix")
        object.__setattr__(self, "representation", r)


@dataclass(frozen=True)
class ABXResult:
    within_error: object = None  # percentage, None if not measured
    across_error: object = None
    n_triples: int = 0

    def error(self, mode):
        value = self.within_error if mode == "within" else self.across_error
        if value is None:
            raise ParameterError(f"no {mode} error in this result")
        return value


def _group_items(items):
    by_cell = {}
    for i, item in enumerate(items):
        by_cell.setdefault((item.category, item.context), []).append(i)
    categories = sorted({c for c, _ in by_cell})
    contexts = sorted({x for _, x in by_cell})
    return by_cell, categories, contexts


def _check_feasible(by_cell, categories, contexts, mode):
    if len(categories) < 2:
        raise DatasetError("ABX needs at least 2 categories")
    if mode == "within":
        for c in contexts:
            for g in categories:
                if len(by_cell.get((g, c), ())) < 2:
                    continue
                if any(g2 != g and by_cell.get((g2, c)) for g2 in categories):
                    return
        raise DatasetError("no context holds two same-category items plus a "
                           "different-category item (within mode infeasible)")
    if len(contexts) < 2:
        raise DatasetError("across mode needs at least 2 contexts")
    for c1 in contexts:
        for c2 in contexts:
            if c1 == c2:
                continue
            for g in categories:
                if not (by_cell.get((g, c1)) and by_cell.get((g, c2))):
                    continue
                if any(g2 != g and by_cell.get((g2, c1)) for g2 in categories):
                    return
    raise DatasetError("no context pair shares a category plus a contrast "
                       "(across mode infeasible)")


def abx_error_rate(items, mode, max_triples=DEFAULT_MAX_TRIPLES, seed=0):
    """Seeded machine-ABX error rate (percent) for one mode.

    Triples (A, B, X): A and X share a category, B differs; within mode keeps
    all three in one context, across mode draws X from a different context
    than A and B. An error is dtw(B,X) < dtw(A,X); exact ties count 0.5.
    """
    items = list(items)
    if mode not in ("within", "across"):
        raise ParameterError(f"mode must be 'within' or 'across', got {mode!r}")
    if max_triples < 1:
        raise ParameterError("max_triples must be >= 1")
    if not items:
        raise DatasetError("ABX corpus is empty")
    by_cell, categories, contexts = _group_items(items)
    _check_feasible(by_cell, categories, contexts, mode)

    rng = np.random.default_rng(seed)
    cache = {}

    def cached_dtw(i, j):
        key = (i, j) if i <= j else (j, i)
        if key not in cache:
            cache[key] = dtw_distance(items[key[0]].representation,
                                      items[key[1]].representation)
        return cache[key]

    errors = 0.0
    scored = 0
    attempts = 0
    attempt_cap = 200 * max_triples
    while scored < max_triples and attempts < attempt_cap:
        attempts += 1
        g = categories[int(rng.integers(0, len(categories)))]
        g2 = categories[int(rng.integers(0, len(categories)))]
        if g2 == g:
            continue
        if mode == "within":
            c = contexts[int(rng.integers(0, len(contexts)))]
            pool_ax = by_cell.get((g, c), ())
            pool_b = by_cell.get((g2, c), ())
            if len(pool_ax) < 2 or not pool_b:
                continue
            pick = rng.choice(len(pool_ax), size=2, replace=False)
            a_i, x_i = pool_ax[int(pick[0])], pool_ax[int(pick[1])]
            b_i = pool_b[int(rng.integers(0, len(pool_b)))]
        else:
            c1 = contexts[int(rng.integers(0, len(contexts)))]
            c2 = contexts[int(rng.integers(0, len(contexts)))]
            if c1 == c2:
                continue
            pool_a = by_cell.get((g, c1), ())
            pool_x = by_cell.get((g, c2), ())
            pool_b = by_cell.get((g2, c1), ())
            if not (pool_a and pool_x and pool_b):
                continue
            a_i = pool_a[int(rng.integers(0, len(pool_a)))]
            x_i = pool_x[int(rng.integers(0, len(pool_x)))]
            b_i = pool_b[int(rng.integers(0, len(pool_b)))]
        d_ax = cached_dtw(a_i, x_i)
        d_bx = cached_dtw(b_i, x_i)
        if d_bx < d_ax:
            errors += 1.0
        elif d_bx == d_ax:
            errors += 0.5
        scored += 1
    if scored == 0:
        raise DatasetError("could not assemble any valid ABX triple")
    rate = 100.0 * errors / scored
    if mode == "within":
        return ABXResult(within_error=rate, n_triples=scored)
    return ABXResult(across_error=rate, n_triples=scored)


def format_abx_line(mode, error, n):
    tag = "w" if mode == "within" else "a"
    return f"mode={tag} error={error:.4f} n={n}"


# -- representation taps -----------------------------------------------------------


def representation_dump(model, x, s_star=None, tap="post_vq_m", m=None):
    """Continuous representation of one clip: tap=pre_vq gives the fused U,
    tap=post_vq_m gives the dequantized U_q at m layers. Deterministic."""
    if tap == "pre_vq":
        with no_grad():
            fused, _, _ = model._encode_fused(x, s_star)
        return fused.values.copy()
    if tap == "post_vq_m":
        if m is None:
            raise ParameterError("tap post_vq_m requires m")
        out = model.forward(x, s_star, mode="eval", m=m)
        return out.quantized.values.copy()
    raise ParameterError(f"unknown tap {tap!r} (expected pre_vq or post_vq_m)")


# -- reconstruction report ----------------------------------------------------------


@dataclass(frozen=True)
class ReconstructionRow:
    m: int
    mel_distance: float
    stft_distance: float
    perplexities: tuple  # one value per active layer


def reconstruction_report(model, corpus, m_list):
    """Average spectral distances per layer count, over a clip corpus."""
    m_list = list(m_list)
    if not m_list:
        raise ParameterError("m_list must not be empty")
    if model.quantizer is None:
        raise ParameterError("model has no quantizer; load a trained checkpoint")
    for m in m_list:
        if not (1 <= m <= model.quantizer.n_layers):
            raise ParameterError(f"m={m} outside [1, {model.quantizer.n_layers}]")
    clips = list(corpus)
    if not clips:
        raise DatasetError("reconstruction corpus is empty")

    k = model.quantizer.codebook_size
    rows = []
    for m in m_list:
        mel_sum = 0.0
        stft_sum = 0.0
        counts = np.zeros((m, k))
        for clip in clips:
            wav = clip.waveform()
            feats = clip.features() if model.config.semantic_enabled else None
            if model.config.semantic_enabled and feats is None:
                name = getattr(clip, "name", "?")
                raise DatasetError(f"clip {name!r} has no semantic features")
            out = model.forward(wav, feats, mode="eval", m=m)
            recon = dsp.Waveform(samples=out.x_hat.values.reshape(-1).copy(),
                                 sample_rate=wav.sample_rate)
            mel_sum += dsp.spectral_distance(wav, recon, kind="mel")
            stft_sum += dsp.spectral_distance(wav, recon, kind="stft")
            for layer in range(m):
                counts[layer] += np.bincount(out.tokens[layer], minlength=k)
        ppl = tuple(rvq.perplexity_from_counts(counts[layer]) for layer in range(m))
        rows.append(ReconstructionRow(m=m, mel_distance=mel_sum / len(clips),
                                      stft_distance=stft_sum / len(clips),
                                      perplexities=ppl))
    return rows


def format_reconstruction_table(rows):
    """Aligned text table plus one machine-readable line per row."""
    header = f"{'m':>3}  {'mel':>10}  {'stft':>10}  perplexities"
    lines = [header, "-" * len(header)]
    for r in rows:
        ppl = ",".join(f"{v:.1f}" for v in r.perplexities)
        lines.append(f"{r.m:>3}  {r.mel_distance:>10.6f}  {r.stft_distance:>10.6f}  [{ppl}]")
    for r in rows:
        ppl = ",".join(f"{v:.4f}" for v in r.perplexities)
        lines.append(f"m={r.m} mel={r.mel_distance:.6f} stft={r.stft_distance:.6f} ppl=[{ppl}]")
    return "\n".join(lines)


# -- manifest --------------------------------------------------------------------


def load_manifest(path):
    """Parse `<path> <category> <context>` lines; relative paths resolve
    against the manifest's directory."""
    base = os.path.dirname(os.path.abspath(path))
    entries = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise FormatError(
                    f"manifest line {lineno}: expected `<path> <category> <context>`, "
                    f"got {len(parts)} fields")
            p = parts[0]
            if not os.path.isabs(p):
                p = os.path.join(base, p)
            entries.append((p, parts[1], parts[2]))
    if not entries:
        raise FormatError(f"manifest {path} lists no items")
    return entries


def abx_items_from_manifest(manifest_path, model=None, tap="post_vq_m", m=None,
                            feature_suffix=".sfea"):
    """Build ABXItems from a manifest of .sfea feature files (used directly)
    or .wav files (run through a model's representation tap)."""
    items = []
    for path, category, context in load_manifest(manifest_path):
        if path.endswith(".sfea"):
            rep = load_features(path).features
        else:
            if model is None:
                raise ParameterError("a model is required to embed wav manifest entries")
            wav = dsp.load_wav(path)
            feats = None
            if model.config.semantic_enabled:
                feats = load_features(os.path.splitext(path)[0] + feature_suffix)
            rep = representation_dump(model, wav, feats, tap=tap, m=m)
        items.append(ABXItem(representation=rep, category=category, context=context))
    return items
