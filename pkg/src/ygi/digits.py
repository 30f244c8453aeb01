"""Offline handwritten-digit corpus.

MNIST itself cannot be fetched in an offline environment, so the bundled
scikit-learn digit set (1797 8x8 handwriting scans) stands in: images are
upsampled to the 28x28 / 1 mm sample format and pushed through a mild
s-curve so the masks are near-binary like digit transmittance targets.

The corpus is split at the digit level into disjoint train/val/test pools
with a fixed shuffle, and materialized as real IDX3 files so downstream
code always ingests digits through the standard loader.
"""

from __future__ import annotations

import os

import numpy as np
from scipy.ndimage import zoom

from .dataset import write_idx_images

__all__ = ["builtin_digit_images", "corpus_pools", "materialize_idx", "POOL_FILES"]

_SPLIT_SEED = 0x5EED
_POOL_SIZES = {"train": 1437, "val": 260, "test": 100}
POOL_FILES = {pool: f"digits-{pool}-idx3-ubyte" for pool in _POOL_SIZES}


def builtin_digit_images() -> np.ndarray:
    """All 1797 digits as float masks in [0, 1], shape (1797, 28, 28)."""
    from sklearn.datasets import load_digits

    raw = load_digits().images / 16.0
    out = np.empty((raw.shape[0], 28, 28))
    for i, img in enumerate(raw):
        up = np.clip(zoom(img, 28 / 8, order=1), 0.0, 1.0)
        t = np.clip((up - 0.15) / 0.65, 0.0, 1.0)
        out[i] = t * t * (3.0 - 2.0 * t)  # smoothstep: near-binary mask
    return out


def corpus_pools() -> dict[str, np.ndarray]:
    """Disjoint digit pools as uint8 image stacks, fixed shuffle."""
    images = builtin_digit_images()
    order = np.random.default_rng(_SPLIT_SEED).permutation(len(images))
    bytes_imgs = np.round(images * 255).astype(np.uint8)
    pools, at = {}, 0
    for pool, size in _POOL_SIZES.items():
        pools[pool] = bytes_imgs[order[at:at + size]]
        at += size
    return pools


def materialize_idx(out_dir) -> dict[str, str]:
    """Write the three pools as IDX3 files under ``out_dir``; returns paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    for pool, imgs in corpus_pools().items():
        path = os.path.join(out_dir, POOL_FILES[pool])
        write_idx_images(path, imgs)
        paths[pool] = path
    return paths
