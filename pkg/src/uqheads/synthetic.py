"""Synthetic embedding datasets for desk-scale experiments and tests."""

from __future__ import annotations

import numpy as np

from .data import EmbeddingDataset
from .numerics import RngStream

_GAUSS_STREAM = 101
_REGION_STREAM = 202


def two_gaussian_dataset(n: int = 2000, dim: int = 16, sep: float = 8.0,
                         seed: int = 0) -> EmbeddingDataset:
    """Two linearly separable Gaussian blobs along the first axis.

    ``sep`` is the distance between class means in units of the per-class
    standard deviation; 8 leaves the classes essentially non-overlapping.
    """
    rng = RngStream(seed, (_GAUSS_STREAM,))
    half = n // 2
    offset = np.zeros(dim)
    offset[0] = sep / 2.0
    x = np.vstack([
        rng.normal((half, dim)) - offset,
        rng.normal((n - half, dim)) + offset,
    ])
    y = np.concatenate([
        np.zeros(half, dtype=np.uint8),
        np.ones(n - half, dtype=np.uint8),
    ])
    perm = rng.permutation(n)
    return EmbeddingDataset(x[perm], y[perm], "synthetic-two-gaussians")


def noisy_region_dataset(n: int = 2000, dim: int = 16, seed: int = 0,
                         noise_rate: float = 0.2,
                         region_frac: float = 0.15) -> EmbeddingDataset:
    """Separable blobs plus a sparser off-axis cluster with flipped labels.

    The main mass is two clean Gaussians along axis 0. A ``region_frac``
    share of rows forms a third cluster far out along axis 1 whose labels are
    1 except for a ``noise_rate`` fraction flipped to 0: a region that is
    simultaneously under-represented and label-noisy, where a model that
    knows what it does not know should place its highest predictive variance.
    """
    rng = RngStream(seed, (_REGION_STREAM,))
    n_region = int(n * region_frac)
    n_main = n - n_region
    half = n_main // 2
    e1 = np.zeros(dim)
    e1[0] = 1.0
    e2 = np.zeros(dim)
    e2[1] = 1.0
    x = np.vstack([
        rng.normal((half, dim)) - 4.0 * e1,
        rng.normal((n_main - half, dim)) + 4.0 * e1,
        rng.normal((n_region, dim)) + 8.0 * e2,
    ])
    y_region = np.ones(n_region)
    y_region[rng.uniform(0.0, 1.0, n_region) < noise_rate] = 0.0
    y = np.concatenate([
        np.zeros(half),
        np.ones(n_main - half),
        y_region,
    ]).astype(np.uint8)
    perm = rng.permutation(n)
    return EmbeddingDataset(x[perm], y[perm], "synthetic-noisy-region")
