"""Domain types for the edit-localization pipeline.

Everything downstream operates on a unified token sequence split into three
contiguous index blocks: text tokens, target-image tokens, source-image
tokens. The types here pin the geometry of that sequence, the sliced
attention/feature records extracted from a host model, and the binary masks
the pipeline produces. All validation lives on the types so that the record
reader, the synthesizer, and the extraction adapter enforce one contract.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

TARGET = "target"
SOURCE = "source"
COMBINED = "combined"
STREAMS = (TARGET, SOURCE)
MASK_STREAMS = (TARGET, SOURCE, COMBINED)

STAGE_ATTENTION_RAW = "attention_raw"
STAGE_ATTENTION_PROPAGATED = "attention_propagated"
STAGE_FEATURE = "feature"
STAGE_TASK_COMBINED = "task_combined"
STAGE_POSTPROCESSED = "postprocessed"
STAGE_GROUND_TRUTH = "ground_truth"
STAGES = (
    STAGE_ATTENTION_RAW,
    STAGE_ATTENTION_PROPAGATED,
    STAGE_FEATURE,
    STAGE_TASK_COMBINED,
    STAGE_POSTPROCESSED,
    STAGE_GROUND_TRUTH,
)

TASKS = (
    "addition",
    "removal",
    "replacement",
    "color",
    "material",
    "text_change",
    "position",
    "count",
    "background",
)

LATENT_ROLES = ("initial_noise", "source", "current")

# Attention rows are slices of a softmax over the full joint sequence, so a
# sliced row can sum to at most 1; the tolerance absorbs float accumulation
# from head-averaging in the adapter.
ROW_SUM_TOL = 1e-4


class ValidationError(ValueError):
    """Invariant violation, carrying the name of the offending field."""

    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


def _require(cond: bool, field_name: str, message: str) -> None:
    if not cond:
        raise ValidationError(field_name, message)


def _check_finite(a: np.ndarray, field_name: str) -> None:
    if not np.all(np.isfinite(a)):
        bad = np.argwhere(~np.isfinite(np.asarray(a)))
        r, c = (int(bad[0][0]), int(bad[0][1])) if bad.shape[1] == 2 else (int(bad[0][0]), 0)
        raise ValidationError(field_name, f"non-finite value at ({r}, {c})")


def _check_f32(a: np.ndarray, field_name: str) -> None:
    _require(isinstance(a, np.ndarray) and a.dtype == np.float32,
             field_name, f"expected float32 array, got {getattr(a, 'dtype', type(a))}")


@dataclass(frozen=True)
class TokenLayout:
    """Index geometry of the unified token sequence plus the image grid.

    Text tokens occupy [0, n_txt), target image tokens
    [n_txt, n_txt + n_img), source image tokens [n_txt + n_img, n_txt + 2*n_img).
    """

    n_txt: int
    n_img: int
    grid_h: int
    grid_w: int
    d: int
    n_layers: int
    n_timesteps: int
    n_heads: int = 1

    def validate(self) -> "TokenLayout":
        _require(self.n_txt >= 1, "n_txt", "must be >= 1")
        _require(self.n_img >= 1, "n_img", "must be >= 1")
        _require(self.d >= 1, "d", "must be >= 1")
        _require(self.grid_h >= 1 and self.grid_w >= 1, "grid", "grid sides must be >= 1")
        _require(
            self.grid_h * self.grid_w == self.n_img,
            "grid",
            f"grid mismatch: {self.grid_h}x{self.grid_w} = {self.grid_h * self.grid_w} != n_img = {self.n_img}",
        )
        _require(self.n_layers >= 1, "n_layers", "must be >= 1")
        _require(self.n_timesteps >= 1, "n_timesteps", "must be >= 1")
        _require(self.n_heads >= 1, "n_heads", "must be >= 1")
        return self

    @property
    def grid(self) -> tuple[int, int]:
        return (self.grid_h, self.grid_w)

    def text_indices(self) -> range:
        return range(0, self.n_txt)

    def target_indices(self) -> range:
        return range(self.n_txt, self.n_txt + self.n_img)

    def source_indices(self) -> range:
        return range(self.n_txt + self.n_img, self.n_txt + 2 * self.n_img)


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step noise level sigma_t in [0, 1]; step 0 is the pure-noise end."""

    sigma: tuple[float, ...]

    def validate(self, layout: Optional[TokenLayout] = None) -> "NoiseSchedule":
        _require(len(self.sigma) >= 1, "sigma", "schedule must be non-empty")
        for i, s in enumerate(self.sigma):
            _require(np.isfinite(s), "sigma", f"non-finite value at step {i}")
            _require(0.0 <= s <= 1.0, "sigma", f"sigma[{i}] = {s} outside [0, 1]")
        for i in range(1, len(self.sigma)):
            _require(
                self.sigma[i] <= self.sigma[i - 1],
                "sigma",
                f"not monotone non-increasing at step {i}: {self.sigma[i - 1]} -> {self.sigma[i]}",
            )
        if layout is not None:
            _require(
                len(self.sigma) == layout.n_timesteps,
                "sigma",
                f"length {len(self.sigma)} != n_timesteps = {layout.n_timesteps}",
            )
        return self


@dataclass(frozen=True)
class InstructionSpec:
    """Editing task plus the text-token indices that carry the instruction."""

    task: str
    selected_text_indices: tuple[int, ...]
    label: str = ""

    def validate(self, layout: Optional[TokenLayout] = None) -> "InstructionSpec":
        _require(self.task in TASKS, "task", f"unknown task {self.task!r}")
        idx = self.selected_text_indices
        _require(len(idx) >= 1, "selected_text_indices", "must be non-empty")
        for a, b in zip(idx, idx[1:]):
            _require(a < b, "selected_text_indices", "must be strictly increasing")
        _require(idx[0] >= 0, "selected_text_indices", "indices must be >= 0")
        if layout is not None:
            _require(
                idx[-1] < layout.n_txt,
                "selected_text_indices",
                f"index {idx[-1]} >= n_txt = {layout.n_txt}",
            )
        return self


@dataclass(eq=False)
class AttentionBundle:
    """Sliced attention for one (layer, timestep, stream).

    ca is the image-to-text slice (n_img x n_txt), sa the within-stream
    image-to-image slice (n_img x n_img); both are rows of one softmax over
    the full joint sequence, so entries lie in [0, 1] and row sums cannot
    exceed 1.
    """

    layer: int
    timestep: int
    stream: str
    ca: np.ndarray
    sa: np.ndarray

    def validate(self, layout: TokenLayout) -> "AttentionBundle":
        _require(self.stream in STREAMS, "stream", f"unknown stream {self.stream!r}")
        _require(0 <= self.layer < layout.n_layers, "layer",
                 f"layer {self.layer} outside [0, {layout.n_layers})")
        _require(0 <= self.timestep < layout.n_timesteps, "timestep",
                 f"timestep {self.timestep} outside [0, {layout.n_timesteps})")
        _check_f32(self.ca, "ca")
        _check_f32(self.sa, "sa")
        _require(self.ca.shape == (layout.n_img, layout.n_txt), "ca",
                 f"shape {self.ca.shape} != ({layout.n_img}, {layout.n_txt})")
        _require(self.sa.shape == (layout.n_img, layout.n_img), "sa",
                 f"shape {self.sa.shape} != ({layout.n_img}, {layout.n_img})")
        for name, m in (("ca", self.ca), ("sa", self.sa)):
            _check_finite(m, name)
            _require(bool(np.all(m >= 0.0)) and bool(np.all(m <= 1.0)), name,
                     "entries must lie in [0, 1]")
            sums = m.sum(axis=1, dtype=np.float64)
            worst = int(np.argmax(sums))
            _require(bool(np.all(sums <= 1.0 + ROW_SUM_TOL)), name,
                     f"row {worst} sums to {sums[worst]:.6f} > 1 + {ROW_SUM_TOL}")
        return self

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, AttentionBundle)
            and self.layer == other.layer
            and self.timestep == other.timestep
            and self.stream == other.stream
            and np.array_equal(self.ca, other.ca)
            and np.array_equal(self.sa, other.sa)
        )


@dataclass(eq=False)
class FeatureBundle:
    """Post-attention latent features of one image stream at one (layer, timestep)."""

    layer: int
    timestep: int
    stream: str
    f: np.ndarray

    def validate(self, layout: TokenLayout) -> "FeatureBundle":
        _require(self.stream in STREAMS, "stream", f"unknown stream {self.stream!r}")
        _require(0 <= self.layer < layout.n_layers, "layer",
                 f"layer {self.layer} outside [0, {layout.n_layers})")
        _require(0 <= self.timestep < layout.n_timesteps, "timestep",
                 f"timestep {self.timestep} outside [0, {layout.n_timesteps})")
        _check_f32(self.f, "f")
        _require(self.f.shape == (layout.n_img, layout.d), "f",
                 f"shape {self.f.shape} != ({layout.n_img}, {layout.d})")
        _check_finite(self.f, "f")
        return self

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, FeatureBundle)
            and self.layer == other.layer
            and self.timestep == other.timestep
            and self.stream == other.stream
            and np.array_equal(self.f, other.f)
        )


@dataclass(eq=False)
class LatentRecord:
    """One image-stream latent: initial noise, source anchor, or the evolving
    target latent at a given step."""

    role: str
    z: np.ndarray
    timestep: Optional[int] = None

    def validate(self, layout: TokenLayout) -> "LatentRecord":
        _require(self.role in LATENT_ROLES, "role", f"unknown role {self.role!r}")
        if self.role == "current":
            _require(self.timestep is not None, "timestep", "required for role 'current'")
            _require(0 <= self.timestep < layout.n_timesteps, "timestep",
                     f"timestep {self.timestep} outside [0, {layout.n_timesteps})")
        else:
            _require(self.timestep is None, "timestep",
                     f"must be absent for role {self.role!r}")
        _check_f32(self.z, "z")
        _require(self.z.shape == (layout.n_img, layout.d), "z",
                 f"shape {self.z.shape} != ({layout.n_img}, {layout.d})")
        _check_finite(self.z, "z")
        return self

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, LatentRecord)
            and self.role == other.role
            and self.timestep == other.timestep
            and np.array_equal(self.z, other.z)
        )


@dataclass(eq=False)
class EditMask:
    """Binary mask over the image tokens of one stream at one pipeline stage."""

    stream: str
    stage: str
    bits: np.ndarray
    timestep: Optional[int] = None
    layer: Optional[int] = None
    degenerate: bool = False

    def validate(self, layout: TokenLayout) -> "EditMask":
        _require(self.stream in MASK_STREAMS, "stream", f"unknown stream {self.stream!r}")
        _require(self.stage in STAGES, "stage", f"unknown stage {self.stage!r}")
        _require(isinstance(self.bits, np.ndarray) and self.bits.dtype == np.uint8,
                 "bits", "expected uint8 array")
        _require(self.bits.shape == (layout.n_img,), "bits",
                 f"length {self.bits.shape} != n_img = {layout.n_img}")
        _require(bool(np.all((self.bits == 0) | (self.bits == 1))), "bits",
                 "entries must be 0 or 1")
        if self.timestep is not None:
            _require(0 <= self.timestep < layout.n_timesteps, "timestep",
                     f"timestep {self.timestep} outside [0, {layout.n_timesteps})")
        if self.layer is not None:
            _require(0 <= self.layer < layout.n_layers, "layer",
                     f"layer {self.layer} outside [0, {layout.n_layers})")
        return self

    def to_grid(self, grid: tuple[int, int]) -> np.ndarray:
        h, w = grid
        return self.bits.reshape(h, w)

    @property
    def count(self) -> int:
        return int(self.bits.sum())

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, EditMask)
            and self.stream == other.stream
            and self.stage == other.stage
            and self.timestep == other.timestep
            and self.layer == other.layer
            and self.degenerate == other.degenerate
            and np.array_equal(self.bits, other.bits)
        )


def make_mask(bits: Sequence[int] | np.ndarray, stream: str = COMBINED,
              stage: str = STAGE_TASK_COMBINED, timestep: Optional[int] = None,
              layer: Optional[int] = None, degenerate: bool = False) -> EditMask:
    return EditMask(
        stream=stream,
        stage=stage,
        bits=np.asarray(bits, dtype=np.uint8),
        timestep=timestep,
        layer=layer,
        degenerate=degenerate,
    )


@dataclass(eq=False)
class AttentionMap:
    """Min-max-normalized relevance of every image token of one stream.

    Values lie in [0, 1]; a constant pre-normalization map collapses to all
    zeros (no localization signal).
    """

    stream: str
    timestep: int
    values: np.ndarray
    layers_used: tuple[int, ...] = ()

    def validate(self, layout: Optional[TokenLayout] = None) -> "AttentionMap":
        _require(self.stream in STREAMS, "stream", f"unknown stream {self.stream!r}")
        _check_finite(self.values.reshape(-1, 1), "values")
        _require(bool(np.all(self.values >= 0.0)) and bool(np.all(self.values <= 1.0)),
                 "values", "entries must lie in [0, 1]")
        if layout is not None:
            _require(self.values.shape == (layout.n_img,), "values",
                     f"length {self.values.shape} != n_img = {layout.n_img}")
        vmin, vmax = float(self.values.min()), float(self.values.max())
        _require((vmin == 0.0 and vmax == 1.0) or (vmin == 0.0 and vmax == 0.0),
                 "values", "map must be min-max normalized or all-zero")
        return self

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, AttentionMap)
            and self.stream == other.stream
            and self.timestep == other.timestep
            and self.layers_used == other.layers_used
            and np.array_equal(self.values, other.values)
        )


@dataclass(eq=False)
class CentroidPair:
    """Edited-region / preserved-region feature centroids with member counts."""

    stream: str
    layer: int
    timestep: int
    c1: np.ndarray
    c0: np.ndarray
    n1: int
    n0: int

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, CentroidPair)
            and self.stream == other.stream
            and self.layer == other.layer
            and self.timestep == other.timestep
            and self.n1 == other.n1
            and self.n0 == other.n0
            and np.array_equal(self.c1, other.c1)
            and np.array_equal(self.c0, other.c0)
        )
