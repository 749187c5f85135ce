"""Binary PGM (P5) graymaps for visual mask/map inspection."""

from __future__ import annotations

from pathlib import Path
from typing import Union

import numpy as np


def write_pgm(values: np.ndarray, grid: tuple[int, int], out: Union[str, Path]) -> Path:
    """Write a [0, 1] map or a binary mask, reshaped to the grid, as P5.

    Deterministic: values scale to round(v * 255).
    """
    h, w = grid
    flat = np.asarray(values, dtype=np.float64).reshape(h, w)
    if flat.min() < 0.0 or flat.max() > 1.0:
        raise ValueError(f"values outside [0, 1]: [{flat.min()}, {flat.max()}]")
    gray = np.round(flat * 255.0).astype(np.uint8)
    out = Path(out)
    out.write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + gray.tobytes())
    return out
