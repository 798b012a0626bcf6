"""Deterministic synthetic ear-like dataset generator.

Real challenge imagery is not redistributable, so acceptance experiments run
on generated data. Subject s draws a base texture from seeded multi-octave
noise (per-subject octave weights give each identity a distinct spatial
spectrum); image i of subject s is the base plus a seeded perturbation: a
small circular shift, a brightness offset, and pixel noise. All randomness
derives from numpy SeedSequence([seed, s, i]), so output bytes depend only on
the arguments.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError
from .protocol import DatasetManifest, ImageRecord, write_manifest

_OCTAVE_SCALES = (4, 8, 16, 32)
_MAX_SHIFT = 2
_MAX_BRIGHTNESS = 10.0
_NOISE_SIGMA = 4.0


def _smooth_noise(rng: np.random.Generator, height: int, width: int,
                  scale: int) -> np.ndarray:
    """Zero-mean blob texture: coarse noise upsampled bilinearly."""
    gh = max(2, height // scale + 1)
    gw = max(2, width // scale + 1)
    grid = rng.standard_normal((gh, gw))
    ys = np.linspace(0, gh - 1, height)
    xs = np.linspace(0, gw - 1, width)
    y0 = np.minimum(ys.astype(np.intp), gh - 2)
    x0 = np.minimum(xs.astype(np.intp), gw - 2)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    g00 = grid[np.ix_(y0, x0)]
    g01 = grid[np.ix_(y0, x0 + 1)]
    g10 = grid[np.ix_(y0 + 1, x0)]
    g11 = grid[np.ix_(y0 + 1, x0 + 1)]
    return (g00 * (1 - fy) * (1 - fx) + g01 * (1 - fy) * fx
            + g10 * fy * (1 - fx) + g11 * fy * fx)


def subject_base(seed: int, subject: int, height: int, width: int) -> np.ndarray:
    """Float base texture of one identity, value range roughly [30, 220]."""
    rng = np.random.default_rng([seed, subject])
    weights = rng.dirichlet(np.ones(len(_OCTAVE_SCALES)))
    tex = np.zeros((height, width))
    for w, scale in zip(weights, _OCTAVE_SCALES):
        tex += w * _smooth_noise(rng, height, width, scale)
    tex -= tex.min()
    peak = tex.max()
    if peak > 0:
        tex /= peak
    return 30.0 + 190.0 * tex


def render_image(seed: int, subject: int, index: int,
                 base: np.ndarray) -> np.ndarray:
    """uint8 image: shifted, brightness-offset, noise-corrupted base."""
    rng = np.random.default_rng([seed, subject, index])
    dy = int(rng.integers(-_MAX_SHIFT, _MAX_SHIFT + 1))
    dx = int(rng.integers(-_MAX_SHIFT, _MAX_SHIFT + 1))
    brightness = float(rng.uniform(-_MAX_BRIGHTNESS, _MAX_BRIGHTNESS))
    noise = rng.standard_normal(base.shape) * _NOISE_SIGMA
    img = np.roll(base, (dy, dx), axis=(0, 1)) + brightness + noise
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def generate_dataset(out_dir, subjects: int, images_per: int, seed: int,
                     width: int = 96, height: int = 128) -> DatasetManifest:
    """Write PNGs plus manifest.csv into ``out_dir``; returns the manifest.

    All images land in the test split; gender alternates by subject so
    stratified evaluation has something to chew on. Image paths are stored
    relative to the manifest.
    """
    if subjects < 1 or images_per < 1:
        raise DataError("need at least one subject and one image per subject")
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    records = []
    for s in range(subjects):
        base = subject_base(seed, s, height, width)
        subject_id = f"s{s:03d}"
        for i in range(images_per):
            arr = render_image(seed, s, i, base)
            image_id = f"{subject_id}_i{i:02d}"
            rel = f"images/{image_id}.png"
            Image.fromarray(arr, mode="L").save(out_dir / rel)
            records.append(ImageRecord(
                image_id=image_id, path=rel, subject_id=subject_id,
                split="test", width=width, height=height,
                annotations={"gender": "M" if s % 2 == 0 else "F"}))
    manifest = DatasetManifest(tuple(records), name=f"synth-{seed}")
    write_manifest(out_dir / "manifest.csv", manifest)
    return manifest
