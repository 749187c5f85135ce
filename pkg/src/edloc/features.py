"""Feature-space refinement of attention-derived masks.

The attention mask is treated as a coarse partition of the stream's tokens.
Masked average pooling over L2-normalized features gives an edited-region
centroid and a preserved-region centroid; every token is then reassigned to
the nearer centroid by dot product. Exactly one pooling/assignment pass; no
iteration.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .core import (
    STAGE_FEATURE,
    CentroidPair,
    EditMask,
    FeatureBundle,
)

EPSILON_DEFAULT = 1e-8


def l2_normalize(f: np.ndarray) -> np.ndarray:
    """Row-wise unit normalization; all-zero rows stay all-zero."""
    f = np.asarray(f, dtype=np.float64)
    norms = np.linalg.norm(f, axis=1, keepdims=True)
    safe = np.where(norms == 0.0, 1.0, norms)
    return f / safe


def compute_centroids(f_hat: np.ndarray, seed_mask: EditMask,
                      epsilon: float = EPSILON_DEFAULT) -> CentroidPair:
    """Masked average pooling: c_k = sum of class-k rows / (count_k + epsilon).

    An empty class yields a near-zero centroid (the epsilon denominator), and
    its count is reported as 0 so callers can detect the degenerate case.
    """
    bits = seed_mask.bits.astype(bool)
    n1 = int(bits.sum())
    n0 = int((~bits).sum())
    c1 = f_hat[bits].sum(axis=0) / (n1 + epsilon)
    c0 = f_hat[~bits].sum(axis=0) / (n0 + epsilon)
    return CentroidPair(
        stream=seed_mask.stream,
        layer=seed_mask.layer if seed_mask.layer is not None else 0,
        timestep=seed_mask.timestep if seed_mask.timestep is not None else 0,
        c1=c1, c0=c0, n1=n1, n0=n0,
    )


def assign(f_hat: np.ndarray, centroids: CentroidPair, seed_mask: EditMask,
           layer: int | None = None) -> EditMask:
    """bits[i] = 1 iff <f_hat[i], c1> > <f_hat[i], c0> (strict; ties preserve).

    Guard: with an empty class on either side there is no partition to refine
    against, so the seed mask is returned unchanged, flagged degenerate.
    """
    if centroids.n1 == 0 or centroids.n0 == 0:
        return replace(seed_mask, stage=STAGE_FEATURE, layer=layer, degenerate=True)
    s1 = f_hat @ centroids.c1
    s0 = f_hat @ centroids.c0
    bits = (s1 > s0).astype(np.uint8)
    return EditMask(stream=seed_mask.stream, stage=STAGE_FEATURE, bits=bits,
                    timestep=seed_mask.timestep, layer=layer)


def refine(features: FeatureBundle, seed_mask: EditMask,
           epsilon: float = EPSILON_DEFAULT) -> EditMask:
    """One normalize -> pool -> assign pass over a stream's features."""
    f_hat = l2_normalize(features.f)
    centroids = compute_centroids(f_hat, seed_mask, epsilon)
    return assign(f_hat, centroids, seed_mask, layer=features.layer)
