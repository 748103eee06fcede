"""Procedural training images: anti-aliased ellipses over linear gradients.

Self-contained stand-in for a photo dataset; smooth by construction, so the
clean high-frequency energy baseline is low and perturbations stand out.
"""

from __future__ import annotations

import numpy as np


def make_image(size: int, seed_keys) -> np.ndarray:
    """One (1, size, size) image in [-1, 1], deterministic in seed_keys."""
    rng = np.random.default_rng(seed_keys)
    ax = np.linspace(-1.0, 1.0, size)
    xx, yy = np.meshgrid(ax, ax, indexing="xy")

    theta = rng.uniform(0.0, 2.0 * np.pi)
    slope = rng.uniform(0.2, 0.9)
    img = slope * (xx * np.cos(theta) + yy * np.sin(theta)) + rng.uniform(-0.3, 0.3)

    px = 2.0 / size
    for _ in range(int(rng.integers(1, 4))):
        cx, cy = rng.uniform(-0.55, 0.55, size=2)
        rx, ry = rng.uniform(0.18, 0.55, size=2)
        phi = rng.uniform(0.0, np.pi)
        value = rng.uniform(-0.95, 0.95)
        xr = (xx - cx) * np.cos(phi) + (yy - cy) * np.sin(phi)
        yr = -(xx - cx) * np.sin(phi) + (yy - cy) * np.cos(phi)
        d = np.sqrt((xr / rx) ** 2 + (yr / ry) ** 2)
        edge = 1.5 * px / min(rx, ry)  # ~1.5 px anti-aliasing ramp
        alpha = np.clip((1.0 - d) / edge + 0.5, 0.0, 1.0)
        img = (1.0 - alpha) * img + alpha * value

    return np.clip(img, -1.0, 1.0)[None, :, :]


def make_dataset(count: int, size: int, seed: int) -> np.ndarray:
    """(count, 1, size, size) stack; image i depends only on (seed, i)."""
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    return np.stack([make_image(size, [seed, i]) for i in range(count)])
