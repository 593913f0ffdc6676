"""Seeded synthetic speech-like corpus.

Clips are harmonic "phonemes": each category fixes a formant template plus
an onset transition (formants start displaced and settle exponentially, the
way consonant-vowel onsets move), and each context (a pseudo-speaker) fixes
a pitch register and a mild spectral tilt. Every clip adds seeded jitter
(pitch offset and glide, formant jitter, onset depth and speed, phases,
tremolo, envelope, noise) so no two clips are alike. Categories stay
separable by spectral trajectory while contexts move pitch and tilt around,
which is the structure ABX needs; context profiles are loudness-equalized
so discrimination cannot key on energy alone.
"""

import os
from dataclasses import dataclass

import numpy as np

from . import evaluation
from .dsp import Waveform, load_wav, save_wav
from .errors import DatasetError
from .semantic import load_features, surrogate_extractor, write_features

SAMPLE_RATE = 16000

# Formant templates (center frequencies in Hz); rough vowel-like spacing.
CATEGORY_FORMANTS = {
    "aa": (730.0, 1090.0, 2440.0),
    "iy": (270.0, 2290.0, 3010.0),
    "uw": (300.0, 870.0, 2240.0),
    "eh": (530.0, 1840.0, 2480.0),
    "ao": (570.0, 840.0, 2410.0),
}
FORMANT_GAINS = (1.0, 0.7, 0.45)
FORMANT_BANDWIDTHS = (90.0, 120.0, 160.0)

# Context = pseudo-speaker: pitch register and spectral tilt (dB/octave).
# Gains stay equal and tilts mild so no context is separable by loudness.
CONTEXT_PROFILES = {
    "spk0": {"f0": 100.0, "tilt": -2.0, "gain": 1.0},
    "spk1": {"f0": 120.0, "tilt": -1.0, "gain": 1.0},
    "spk2": {"f0": 150.0, "tilt": 0.0, "gain": 1.0},
    "spk3": {"f0": 185.0, "tilt": 1.0, "gain": 1.0},
}

CATEGORIES = tuple(sorted(CATEGORY_FORMANTS))
CONTEXTS = tuple(sorted(CONTEXT_PROFILES))


def _onset_envelope(harm_freqs, t, formants, jitter, start_mult, tau):
    # Formant centers settle exponentially from start_mult*center to center;
    # harm_freqs is (n_harm, n) so the envelope tracks both curves in time.
    env = np.zeros_like(harm_freqs)
    for i, (center, gain, bw) in enumerate(zip(formants, FORMANT_GAINS,
                                               FORMANT_BANDWIDTHS)):
        c = center * jitter[i] * (1.0 + (start_mult[i] - 1.0) * np.exp(-t / tau[i]))
        env += gain * bw * bw / ((harm_freqs - c[None, :]) ** 2 + bw * bw)
    return env


def synth_clip(category, context, rng, duration=1.0, sample_rate=SAMPLE_RATE):
    """One jittered harmonic clip for a (category, context) cell."""
    if category not in CATEGORY_FORMANTS:
        raise DatasetError(f"unknown category {category!r}")
    if context not in CONTEXT_PROFILES:
        raise DatasetError(f"unknown context {context!r}")
    profile = CONTEXT_PROFILES[context]
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate

    f0_mult = 2.0 ** (rng.uniform(-0.5, 0.5) * 0.15)
    glide = rng.uniform(-0.25, 0.25)  # octaves per second
    f0_curve = profile["f0"] * f0_mult * 2.0 ** (glide * t)
    base_phase = 2.0 * np.pi * np.cumsum(f0_curve) / sample_rate

    f0_mean = float(f0_curve.mean())
    n_harm = max(3, int((sample_rate / 2.0 - 300.0) / f0_mean))
    h = np.arange(1, n_harm + 1, dtype=np.float64)
    harm_freqs = h[:, None] * f0_curve[None, :]
    formant_jitter = 2.0 ** (rng.uniform(-0.04, 0.04, size=3))
    start_mult = rng.uniform(0.6, 1.5, size=3)
    tau = rng.uniform(0.05, 0.15, size=3)
    env = _onset_envelope(harm_freqs, t, CATEGORY_FORMANTS[category],
                          formant_jitter, start_mult, tau)
    tilt = (harm_freqs / 300.0) ** (profile["tilt"] / 6.0206)
    amps = env * tilt
    amps /= amps.max() + 1e-12
    phases = rng.uniform(0.0, 2.0 * np.pi, size=n_harm)

    signal = (amps * np.sin(h[:, None] * base_phase[None, :]
                            + phases[:, None])).sum(axis=0)

    trem_depth = rng.uniform(0.0, 0.15)
    trem_rate = rng.uniform(3.0, 7.0)
    trem_phase = rng.uniform(0.0, 2.0 * np.pi)
    signal *= 1.0 + trem_depth * np.sin(2.0 * np.pi * trem_rate * t + trem_phase)

    attack = max(1, int(rng.uniform(0.005, 0.03) * sample_rate))
    release = max(1, int(rng.uniform(0.01, 0.05) * sample_rate))
    envelope = np.ones(n)
    envelope[:attack] = np.linspace(0.0, 1.0, attack, endpoint=False)
    envelope[n - release:] = np.linspace(1.0, 0.0, release)
    signal *= envelope

    noise_db = rng.uniform(-38.0, -33.0)
    signal += 10.0 ** (noise_db / 20.0) * rng.standard_normal(n)

    peak = np.abs(signal).max() + 1e-12
    signal *= 0.85 * profile["gain"] * rng.uniform(0.85, 1.0) / peak
    return Waveform(samples=signal, sample_rate=sample_rate)


# -- clip records (the corpus protocol: name/category/context + loaders) ---------------


@dataclass
class MemoryClip:
    name: str
    category: str
    context: str
    wav: Waveform
    feats: object = None  # SemanticFeatures or None

    def waveform(self):
        return self.wav

    def features(self):
        return self.feats


@dataclass
class DiskClip:
    name: str
    category: str
    context: str
    wav_path: str
    feature_path: str = None

    def waveform(self):
        return load_wav(self.wav_path)

    def features(self):
        if self.feature_path is None or not os.path.exists(self.feature_path):
            return None
        return load_features(self.feature_path)


def make_corpus(n_per_cell=3, duration=1.0, seed=0, feature_dim=768,
                with_features=True, categories=CATEGORIES, contexts=CONTEXTS):
    """In-memory corpus: n_per_cell clips per (category, context) cell,
    each clip independently seeded from one root seed."""
    seq = np.random.SeedSequence(seed)
    children = iter(seq.spawn(len(categories) * len(contexts) * n_per_cell))
    clips = []
    for category in categories:
        for context in contexts:
            for i in range(n_per_cell):
                rng = np.random.default_rng(next(children))
                wav = synth_clip(category, context, rng, duration=duration)
                feats = surrogate_extractor(wav, feature_dim=feature_dim) \
                    if with_features else None
                clips.append(MemoryClip(name=f"{category}-{context}-{i:02d}",
                                        category=category, context=context,
                                        wav=wav, feats=feats))
    return clips


def write_corpus(clips, out_dir, manifest_name="manifest.txt"):
    """Persist clips as WAV (+ SFEA when features exist) plus a manifest of
    `<wav> <category> <context>` lines; returns the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    lines = []
    for clip in clips:
        wav_name = f"{clip.name}.wav"
        save_wav(clip.waveform(), os.path.join(out_dir, wav_name))
        feats = clip.features()
        if feats is not None:
            write_features(feats, os.path.join(out_dir, f"{clip.name}.sfea"))
        lines.append(f"{wav_name} {clip.category} {clip.context}")
    manifest_path = os.path.join(out_dir, manifest_name)
    tmp = manifest_path + ".part"
    with open(tmp, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    os.replace(tmp, manifest_path)
    return manifest_path


def corpus_from_manifest(manifest_path):
    """DiskClip records from a manifest; a same-stem .sfea file, when
    present, becomes the clip's feature source."""
    clips = []
    for path, category, context in evaluation.load_manifest(manifest_path):
        stem = os.path.splitext(os.path.basename(path))[0]
        feature_path = os.path.splitext(path)[0] + ".sfea"
        clips.append(DiskClip(name=stem, category=category, context=context,
                              wav_path=path,
                              feature_path=feature_path if os.path.exists(feature_path)
                              else None))
    return clips
