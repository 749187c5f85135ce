"""Independent brute-force references and the IoU metric.

These implementations double-check the production paths and deliberately
share no code with them: plain triple-loop matrix multiply, stack-based flood
fill over (row, col) pairs, border flooding for holes, and a Chebyshev
distance scan for dilation.
"""

from __future__ import annotations

import numpy as np

from .core import EditMask, ValidationError


def brute_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Naive triple loop a @ b in float64."""
    n, k = a.shape
    k2, m = b.shape
    if k != k2:
        raise ValidationError("shape", f"cannot multiply {a.shape} with {b.shape}")
    out = np.zeros((n, m), dtype=np.float64)
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for t in range(k):
                acc += float(a[i, t]) * float(b[t, j])
            out[i, j] = acc
    return out


def _offsets(connectivity: int) -> tuple[tuple[int, int], ...]:
    if connectivity == 4:
        return ((-1, 0), (1, 0), (0, -1), (0, 1))
    return ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))


def brute_components(mask_bits: np.ndarray, grid: tuple[int, int],
                     connectivity: int) -> list[list[int]]:
    """Connected components of 1-cells via explicit-stack flood fill over
    (row, col) pairs; each component is a sorted list of flat indices."""
    h, w = grid
    g = np.asarray(mask_bits).reshape(h, w)
    visited = [[False] * w for _ in range(h)]
    offsets = _offsets(connectivity)
    comps: list[list[int]] = []
    for r0 in range(h):
        for c0 in range(w):
            if g[r0, c0] == 0 or visited[r0][c0]:
                continue
            stack = [(r0, c0)]
            visited[r0][c0] = True
            comp = []
            while stack:
                r, c = stack.pop()
                comp.append(r * w + c)
                for dr, dc in offsets:
                    rr, cc = r + dr, c + dc
                    if 0 <= rr < h and 0 <= cc < w and g[rr, cc] != 0 and not visited[rr][cc]:
                        visited[rr][cc] = True
                        stack.append((rr, cc))
            comps.append(sorted(comp))
    return comps


def brute_largest_component(mask_bits: np.ndarray, grid: tuple[int, int],
                            connectivity: int) -> np.ndarray:
    """Reference for largest-component retention, same tie rule: size first,
    then smallest row-major cell index."""
    comps = brute_components(mask_bits, grid, connectivity)
    out = np.zeros(grid[0] * grid[1], dtype=np.uint8)
    if comps:
        best = comps[0]
        for comp in comps[1:]:
            if len(comp) > len(best) or (len(comp) == len(best) and comp[0] < best[0]):
                best = comp
        out[best] = 1
    return out


def brute_fill_holes(mask_bits: np.ndarray, grid: tuple[int, int],
                     connectivity: int) -> np.ndarray:
    """Reference hole filling: flood the complement from every border 0-cell
    using the dual connectivity; unreached 0-cells become 1."""
    h, w = grid
    g = np.asarray(mask_bits).reshape(h, w)
    dual = 4 if connectivity == 8 else 8
    offsets = _offsets(dual)
    reach = [[False] * w for _ in range(h)]
    stack = []
    for r in range(h):
        for c in range(w):
            if (r in (0, h - 1) or c in (0, w - 1)) and g[r, c] == 0:
                if not reach[r][c]:
                    reach[r][c] = True
                    stack.append((r, c))
    while stack:
        r, c = stack.pop()
        for dr, dc in offsets:
            rr, cc = r + dr, c + dc
            if 0 <= rr < h and 0 <= cc < w and g[rr, cc] == 0 and not reach[rr][cc]:
                reach[rr][cc] = True
                stack.append((rr, cc))
    out = np.asarray(mask_bits, dtype=np.uint8).copy().reshape(h, w)
    for r in range(h):
        for c in range(w):
            if g[r, c] == 0 and not reach[r][c]:
                out[r, c] = 1
    return out.reshape(-1)


def brute_dilate(mask_bits: np.ndarray, grid: tuple[int, int], radius: int) -> np.ndarray:
    """Reference dilation via the distance transform: a cell turns on iff some
    input 1-cell lies within Chebyshev distance `radius`."""
    h, w = grid
    g = np.asarray(mask_bits).reshape(h, w)
    ones = [(r, c) for r in range(h) for c in range(w) if g[r, c] != 0]
    out = np.zeros((h, w), dtype=np.uint8)
    for r in range(h):
        for c in range(w):
            for rr, cc in ones:
                if max(abs(rr - r), abs(cc - c)) <= radius:
                    out[r, c] = 1
                    break
    return out.reshape(-1)


def iou(pred: EditMask | np.ndarray, gt: EditMask | np.ndarray) -> float:
    """|pred AND gt| / |pred OR gt|; two empty masks count as a perfect 1.0."""
    p = pred.bits if isinstance(pred, EditMask) else np.asarray(pred)
    g = gt.bits if isinstance(gt, EditMask) else np.asarray(gt)
    if p.shape != g.shape:
        raise ValidationError("bits", f"length mismatch: {p.shape} vs {g.shape}")
    p = p.astype(bool)
    g = g.astype(bool)
    union = int(np.sum(p | g))
    if union == 0:
        return 1.0
    return float(np.sum(p & g)) / union
