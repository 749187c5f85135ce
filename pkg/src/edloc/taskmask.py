"""Task-aware mask combination and grid morphology.

Each editing task draws its edit region from a fixed stream policy: content
that appears (addition) localizes in the target stream, content that
disappears (removal) and appearance-only changes (color, material) localize
in the source stream, and coupled changes (replacement, text, position,
count, background) take the union of both streams. The combined mask is then
cleaned on the token grid: keep the largest connected component, fill
enclosed holes, dilate.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .core import (
    COMBINED,
    STAGE_POSTPROCESSED,
    STAGE_TASK_COMBINED,
    EditMask,
    ValidationError,
)

TARGET_ONLY = "target_only"
SOURCE_ONLY = "source_only"
UNION = "union"

TASK_POLICY = {
    "addition": TARGET_ONLY,
    "removal": SOURCE_ONLY,
    "replacement": UNION,
    "color": SOURCE_ONLY,
    "material": SOURCE_ONLY,
    "text_change": UNION,
    "position": UNION,
    "count": UNION,
    "background": UNION,
}


@dataclass(frozen=True)
class MorphologyConfig:
    connectivity: int = 8
    dilation_radius: int = 2
    fill_holes: bool = True

    def validate(self, grid: tuple[int, int]) -> "MorphologyConfig":
        if self.connectivity not in (4, 8):
            raise ValidationError("connectivity", f"must be 4 or 8, got {self.connectivity}")
        if self.dilation_radius < 0:
            raise ValidationError("dilation_radius", "must be >= 0")
        if self.dilation_radius > min(grid):
            raise ValidationError(
                "dilation_radius",
                f"{self.dilation_radius} exceeds min grid side {min(grid)}")
        return self


def combine(task: str, m_tgt: EditMask, m_src: EditMask) -> EditMask:
    """Apply the stream policy of `task` to the two per-stream masks."""
    if task not in TASK_POLICY:
        raise ValidationError("task", f"unknown task {task!r}")
    if m_tgt.bits.shape != m_src.bits.shape:
        raise ValidationError(
            "bits", f"length mismatch: {m_tgt.bits.shape} vs {m_src.bits.shape}")
    policy = TASK_POLICY[task]
    if policy == TARGET_ONLY:
        bits = m_tgt.bits.copy()
    elif policy == SOURCE_ONLY:
        bits = m_src.bits.copy()
    else:
        bits = (m_tgt.bits | m_src.bits).astype(np.uint8)
    return EditMask(stream=COMBINED, stage=STAGE_TASK_COMBINED, bits=bits,
                    timestep=m_tgt.timestep, layer=m_tgt.layer)


@lru_cache(maxsize=64)
def _neighbor_table(grid: tuple[int, int], connectivity: int) -> tuple[tuple[int, ...], ...]:
    h, w = grid
    if connectivity == 4:
        offsets = ((-1, 0), (1, 0), (0, -1), (0, 1))
    else:
        offsets = tuple((dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1)
                        if (dr, dc) != (0, 0))
    table = []
    for r in range(h):
        for c in range(w):
            cell = []
            for dr, dc in offsets:
                rr, cc = r + dr, c + dc
                if 0 <= rr < h and 0 <= cc < w:
                    cell.append(rr * w + cc)
            table.append(tuple(cell))
    return tuple(table)


def _components(bits: np.ndarray, grid: tuple[int, int], connectivity: int) -> list[list[int]]:
    """Connected components of the 1-cells, by BFS over flat indices.

    Components come out ordered by their smallest (row-major first) cell.
    """
    neighbors = _neighbor_table(grid, connectivity)
    on = bits.view() != 0
    seen = np.zeros(len(bits), dtype=bool)
    comps: list[list[int]] = []
    for start in range(len(bits)):
        if not on[start] or seen[start]:
            continue
        queue = [start]
        seen[start] = True
        comp = []
        while queue:
            i = queue.pop()
            comp.append(i)
            for j in neighbors[i]:
                if on[j] and not seen[j]:
                    seen[j] = True
                    queue.append(j)
        comps.append(comp)
    return comps


def largest_component(mask: EditMask, grid: tuple[int, int],
                      connectivity: int = 8) -> EditMask:
    """Keep only the largest connected component of 1-cells; ties go to the
    component containing the smallest row-major index."""
    comps = _components(mask.bits, grid, connectivity)
    bits = np.zeros_like(mask.bits)
    if comps:
        best = max(comps, key=lambda comp: (len(comp), -min(comp)))
        bits[best] = 1
    out = EditMask(stream=mask.stream, stage=mask.stage, bits=bits,
                   timestep=mask.timestep, layer=mask.layer)
    return out


def fill_holes(mask: EditMask, grid: tuple[int, int],
               connectivity: int = 8) -> EditMask:
    """Set to 1 every 0-region not connected to the grid border.

    The complement is traversed with the dual connectivity (8-connected
    foreground pairs with 4-connected background and vice versa).
    """
    dual = 4 if connectivity == 8 else 8
    h, w = grid
    inverted = (mask.bits == 0).astype(np.uint8)
    comps = _components(inverted, grid, dual)
    bits = mask.bits.copy()
    for comp in comps:
        touches_border = any(
            i // w == 0 or i // w == h - 1 or i % w == 0 or i % w == w - 1
            for i in comp
        )
        if not touches_border:
            bits[comp] = 1
    return EditMask(stream=mask.stream, stage=mask.stage, bits=bits,
                    timestep=mask.timestep, layer=mask.layer)


def dilate(mask: EditMask, grid: tuple[int, int], radius: int) -> EditMask:
    """`radius` iterations of 3x3 (Chebyshev-ball) dilation; radius 0 is identity."""
    if radius < 0:
        raise ValidationError("dilation_radius", "must be >= 0")
    h, w = grid
    g = mask.bits.reshape(h, w).astype(bool)
    for _ in range(radius):
        padded = np.zeros((h + 2, w + 2), dtype=bool)
        padded[1:-1, 1:-1] = g
        out = np.zeros_like(g)
        for dr in (0, 1, 2):
            for dc in (0, 1, 2):
                out |= padded[dr:dr + h, dc:dc + w]
        g = out
    return EditMask(stream=mask.stream, stage=mask.stage,
                    bits=g.reshape(-1).astype(np.uint8),
                    timestep=mask.timestep, layer=mask.layer)


def postprocess(mask: EditMask, grid: tuple[int, int],
                config: MorphologyConfig) -> EditMask:
    """largest_component -> fill_holes -> dilate, in that order."""
    config.validate(grid)
    out = largest_component(mask, grid, config.connectivity)
    if config.fill_holes:
        out = fill_holes(out, grid, config.connectivity)
    out = dilate(out, grid, config.dilation_radius)
    return EditMask(stream=mask.stream, stage=STAGE_POSTPROCESSED, bits=out.bits,
                    timestep=mask.timestep, layer=mask.layer)


def provenance_report(task: str, config: MorphologyConfig,
                      component_sizes: dict[str, list[int]],
                      notes: tuple[str, ...] = ()) -> str:
    """Text sidecar describing how the final mask was produced."""
    lines = [
        f"task = {task}",
        f"policy = {TASK_POLICY[task]}",
        f"connectivity = {config.connectivity}",
        f"dilation_radius = {config.dilation_radius}",
        f"fill_holes = {str(config.fill_holes).lower()}",
    ]
    for key in sorted(component_sizes):
        sizes = ",".join(str(s) for s in component_sizes[key])
        lines.append(f"component_sizes_{key} = {sizes}")
    for note in notes:
        lines.append(f"note = {note}")
    return "\n".join(lines) + "\n"


def component_sizes(mask: EditMask, grid: tuple[int, int], connectivity: int) -> list[int]:
    return sorted((len(c) for c in _components(mask.bits, grid, connectivity)), reverse=True)
