"""Attention-derived coarse edit masks.

The within-stream self-attention slice acts as a transition matrix over image
tokens; one application of it to the image-to-text slice spreads linguistic
relevance along token affinities. Aggregating the result over layers and
instruction tokens, min-max normalizing, and thresholding yields a binary
seed mask per stream.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .core import (
    STAGE_ATTENTION_PROPAGATED,
    STAGE_ATTENTION_RAW,
    AttentionBundle,
    AttentionMap,
    EditMask,
    ValidationError,
)


def propagate(bundle: AttentionBundle) -> np.ndarray:
    """One transition step of the text relevance along image-token affinities:
    sa @ ca. Entries stay non-negative and each output row keeps total mass
    bounded by the corresponding sa row sum."""
    sa, ca = bundle.sa, bundle.ca
    if sa.shape[1] != ca.shape[0]:
        raise ValidationError("sa", f"cannot multiply sa {sa.shape} with ca {ca.shape}")
    return sa.astype(np.float64) @ ca.astype(np.float64)


def aggregate(
    diffused: Sequence[np.ndarray],
    selected_text_indices: Sequence[int],
    *,
    stream: str,
    timestep: int,
    layers_used: Sequence[int] = (),
) -> AttentionMap:
    """Sum per-layer maps, sum the selected text columns, min-max normalize.

    A constant summed map carries no localization signal and collapses to the
    all-zero map.
    """
    if len(diffused) == 0:
        raise ValidationError("diffused", "empty layer list")
    if len(selected_text_indices) == 0:
        raise ValidationError("selected_text_indices", "empty index subset")
    shape = diffused[0].shape
    for m in diffused:
        if m.shape != shape:
            raise ValidationError("diffused", f"shape {m.shape} != {shape}")
    summed = np.zeros(shape, dtype=np.float64)
    for m in diffused:
        summed += m
    vec = summed[:, list(selected_text_indices)].sum(axis=1)
    lo, hi = float(vec.min()), float(vec.max())
    if hi == lo:
        values = np.zeros_like(vec)
    else:
        values = (vec - lo) / (hi - lo)
    return AttentionMap(stream=stream, timestep=timestep, values=values,
                        layers_used=tuple(layers_used))


def threshold(amap: AttentionMap, tau: float,
              stage: str = STAGE_ATTENTION_PROPAGATED) -> EditMask:
    """bits[i] = 1 iff values[i] > tau (strict; ties excluded)."""
    if not (0.0 < tau < 1.0):
        raise ValidationError("tau", f"threshold {tau} outside (0, 1)")
    bits = (amap.values > tau).astype(np.uint8)
    return EditMask(stream=amap.stream, stage=stage, bits=bits, timestep=amap.timestep)


def propagated_map(bundles: Sequence[AttentionBundle],
                   selected_text_indices: Sequence[int]) -> AttentionMap:
    """Per-layer propagation then aggregation, for one (timestep, stream)."""
    if len(bundles) == 0:
        raise ValidationError("bundles", "empty layer list")
    return aggregate(
        [propagate(b) for b in bundles],
        selected_text_indices,
        stream=bundles[0].stream,
        timestep=bundles[0].timestep,
        layers_used=[b.layer for b in bundles],
    )


def raw_map(bundles: Sequence[AttentionBundle],
            selected_text_indices: Sequence[int]) -> AttentionMap:
    """Aggregation of the image-to-text slices alone (no propagation)."""
    if len(bundles) == 0:
        raise ValidationError("bundles", "empty layer list")
    return aggregate(
        [b.ca.astype(np.float64) for b in bundles],
        selected_text_indices,
        stream=bundles[0].stream,
        timestep=bundles[0].timestep,
        layers_used=[b.layer for b in bundles],
    )


def attention_mask_without_propagation(
    bundles: Sequence[AttentionBundle],
    selected_text_indices: Sequence[int],
    tau: float,
) -> EditMask:
    """Analysis baseline: threshold the aggregated raw image-to-text slices."""
    return threshold(raw_map(bundles, selected_text_indices), tau,
                     stage=STAGE_ATTENTION_RAW)


def propagated_mask(
    bundles: Sequence[AttentionBundle],
    selected_text_indices: Sequence[int],
    tau: float,
) -> EditMask:
    return threshold(propagated_map(bundles, selected_text_indices), tau)
