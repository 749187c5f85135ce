"""Mask-guided latent preservation.

At selected denoising steps the evolving target latent is blended with an
inverted latent — the step-aligned mixture of the initial noise and the
source latent — so that tokens outside the edit mask are anchored to source
content. Blending is pure row selection: mask-1 rows come from the current
latent and mask-0 rows from the inverted latent, bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

from .core import EditMask, LatentRecord, NoiseSchedule, ValidationError


def inverted_latent(z_init: LatentRecord, z_src: LatentRecord, sigma_t: float) -> np.ndarray:
    """sigma_t * initial noise + (1 - sigma_t) * source latent.

    The endpoints short-circuit to exact copies so that sigma 0 reproduces the
    source and sigma 1 the initial noise bit-for-bit.
    """
    if z_init.z.shape != z_src.z.shape:
        raise ValidationError("z", f"shape mismatch: {z_init.z.shape} vs {z_src.z.shape}")
    if not (0.0 <= sigma_t <= 1.0):
        raise ValidationError("sigma", f"sigma {sigma_t} outside [0, 1]")
    if sigma_t == 0.0:
        return z_src.z.copy()
    if sigma_t == 1.0:
        return z_init.z.copy()
    mixed = sigma_t * z_init.z.astype(np.float64) + (1.0 - sigma_t) * z_src.z.astype(np.float64)
    return mixed.astype(np.float32)


def blend(z_cur: LatentRecord, z_inv: np.ndarray, mask: EditMask) -> np.ndarray:
    """Row selection: mask-1 token rows from the current latent, mask-0 rows
    from the inverted latent. No arithmetic touches the selected values."""
    if z_cur.z.shape != z_inv.shape:
        raise ValidationError("z", f"shape mismatch: {z_cur.z.shape} vs {z_inv.shape}")
    if mask.bits.shape[0] != z_cur.z.shape[0]:
        raise ValidationError(
            "bits", f"mask length {mask.bits.shape[0]} != n_img {z_cur.z.shape[0]}")
    keep = mask.bits.astype(bool)
    out = z_inv.astype(z_cur.z.dtype, copy=True)
    out[keep] = z_cur.z[keep]
    return out


@dataclass
class PreservationPlan:
    """Which steps receive blending, against which schedule and masks.

    mask_for maps an applied step to its postprocessed task mask; a single
    fixed mask may be pinned across steps for ablation.
    """

    apply_at: frozenset[int]
    schedule: NoiseSchedule
    mask_for: Mapping[int, EditMask] | Callable[[int], Optional[EditMask]] = field(
        default_factory=dict)

    def validate(self) -> "PreservationPlan":
        n = len(self.schedule.sigma)
        for step in self.apply_at:
            if not (0 <= step < n):
                raise ValidationError("apply_at", f"step {step} outside [0, {n})")
        return self

    def mask_at(self, step: int) -> Optional[EditMask]:
        if callable(self.mask_for):
            return self.mask_for(step)
        return self.mask_for.get(step)


DEFAULT_APPLY_AT = (5, 10, 15)


def default_apply_at(n_timesteps: int) -> frozenset[int]:
    """Reference step set {5, 10, 15}, restricted to the dumped step range."""
    return frozenset(s for s in DEFAULT_APPLY_AT if s < n_timesteps)


def apply_plan(plan: PreservationPlan, step: int, z_cur: LatentRecord,
               z_init: LatentRecord, z_src: LatentRecord,
               mask: Optional[EditMask] = None) -> np.ndarray:
    """Blend at planned steps, identity elsewhere."""
    n = len(plan.schedule.sigma)
    if not (0 <= step < n):
        raise ValidationError("step", f"step {step} outside [0, {n})")
    if step not in plan.apply_at:
        return z_cur.z.copy()
    if mask is None:
        mask = plan.mask_at(step)
    if mask is None:
        raise ValidationError("mask", f"no mask available for applied step {step}")
    z_inv = inverted_latent(z_init, z_src, float(plan.schedule.sigma[step]))
    return blend(z_cur, z_inv, mask)
