"""Synthetic labelled feature maps: Gaussian blobs in a latent space pushed
through a fixed random linear map. Used for end-to-end checks without audio."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import ManifestEntry, MfccMatrix


@dataclass
class SynthSpec:
    n_classes: int = 9
    per_class: int = 200
    latent_dim: int = 20
    shape: tuple = (96, 28)
    separation: float = 4.0
    spread: float = 1.0
    time_knots: int = 24  # patterns vary smoothly over time, like pooled MFCC frames
    seed: int = 0


def mixing_patterns(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    """(latent_dim, H * W) map drawn at ``time_knots`` rows and linearly interpolated in time.

    ``time_knots >= H`` gives an independent weight per pixel.
    """
    h, w = spec.shape
    knots = min(max(spec.time_knots, 1), h)
    coarse = rng.normal(0.0, 1.0 / np.sqrt(spec.latent_dim), size=(spec.latent_dim, knots, w))
    if knots == h:
        return coarse.reshape(spec.latent_dim, h * w)
    if knots == 1:
        return np.repeat(coarse, h, axis=1).reshape(spec.latent_dim, h * w)
    pos = np.linspace(0.0, knots - 1, h)
    lo = np.minimum(pos.astype(int), knots - 2)
    frac = (pos - lo)[None, :, None]
    fine = coarse[:, lo] * (1.0 - frac) + coarse[:, lo + 1] * frac
    return fine.reshape(spec.latent_dim, h * w)


def make_blobs(spec: SynthSpec = SynthSpec()):
    """Return ``(maps, labels)``: (N, H, W) float32 maps and int class labels."""
    rng = np.random.default_rng(spec.seed)
    h, w = spec.shape
    means = rng.normal(0.0, spec.separation, size=(spec.n_classes, spec.latent_dim))
    mixing = mixing_patterns(spec, rng)
    labels = np.repeat(np.arange(spec.n_classes), spec.per_class)
    latent = means[labels] + rng.normal(0.0, spec.spread, size=(len(labels), spec.latent_dim))
    maps = (latent @ mixing).reshape(-1, h, w).astype(np.float32)
    return maps, labels


def synth_dataset(spec: SynthSpec = SynthSpec()):
    """Feature matrices and manifest entries for :func:`make_blobs` data."""
    maps, labels = make_blobs(spec)
    matrices, entries = [], []
    for i, (m, y) in enumerate(zip(maps, labels)):
        clip_id = f"synth/clip_{i:05d}.wav"
        matrices.append(MfccMatrix(m, clip_id))
        entries.append(ManifestEntry(clip_id, f"class_{y}"))
    return matrices, entries
