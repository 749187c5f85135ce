"""End-to-end mask computation over a record set.

Per (timestep, stream): raw and propagated attention maps over the configured
layer set, thresholded seeds, one feature-refinement pass at the configured
feature layer. Per timestep: task combination of the two stream masks and
grid post-processing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import attention, features
from .core import (
    SOURCE,
    STAGE_ATTENTION_PROPAGATED,
    STAGE_ATTENTION_RAW,
    STAGE_FEATURE,
    STAGE_POSTPROCESSED,
    STAGE_TASK_COMBINED,
    STREAMS,
    TARGET,
    AttentionMap,
    EditMask,
    ValidationError,
)
from .records import RecordSet
from .taskmask import MorphologyConfig, combine, postprocess


@dataclass(frozen=True)
class LocalizeConfig:
    tau: float = 0.5
    attention_layers: tuple[int, ...] | None = None  # None = all dumped layers
    feature_layer: int | None = None                 # None = deepest dumped layer
    epsilon: float = 1e-8
    morphology: MorphologyConfig = field(default_factory=MorphologyConfig)

    def resolve_layers(self, n_layers: int) -> tuple[int, ...]:
        layers = self.attention_layers if self.attention_layers is not None \
            else tuple(range(n_layers))
        for l in layers:
            if not (0 <= l < n_layers):
                raise ValidationError("attention_layers", f"layer {l} outside [0, {n_layers})")
        if not layers:
            raise ValidationError("attention_layers", "empty layer set")
        return layers

    def resolve_feature_layer(self, n_layers: int) -> int:
        l = self.feature_layer if self.feature_layer is not None else n_layers - 1
        if not (0 <= l < n_layers):
            raise ValidationError("feature_layer", f"layer {l} outside [0, {n_layers})")
        return l


@dataclass
class StreamMasks:
    map_raw: AttentionMap
    map_propagated: AttentionMap
    raw: EditMask
    propagated: EditMask
    feature: EditMask


@dataclass
class TimestepMasks:
    streams: dict[str, StreamMasks]
    combined: EditMask
    postprocessed: EditMask


def localize_stream(rs: RecordSet, timestep: int, stream: str,
                    cfg: LocalizeConfig) -> StreamMasks:
    layers = cfg.resolve_layers(rs.layout.n_layers)
    fl = cfg.resolve_feature_layer(rs.layout.n_layers)
    bundles = [rs.need_attention(l, timestep, stream) for l in layers]
    selected = rs.instruction.selected_text_indices
    m_raw = attention.raw_map(bundles, selected)
    m_prop = attention.propagated_map(bundles, selected)
    raw_mask = attention.threshold(m_raw, cfg.tau, stage=STAGE_ATTENTION_RAW)
    prop_mask = attention.threshold(m_prop, cfg.tau)
    feat = rs.need_features(fl, timestep, stream)
    feat_mask = features.refine(feat, prop_mask, cfg.epsilon)
    return StreamMasks(map_raw=m_raw, map_propagated=m_prop,
                       raw=raw_mask, propagated=prop_mask, feature=feat_mask)


def localize_timestep(rs: RecordSet, timestep: int, cfg: LocalizeConfig) -> TimestepMasks:
    per_stream = {s: localize_stream(rs, timestep, s, cfg) for s in STREAMS}
    combined = combine(rs.instruction.task,
                       per_stream[TARGET].feature, per_stream[SOURCE].feature)
    post = postprocess(combined, rs.layout.grid, cfg.morphology)
    return TimestepMasks(streams=per_stream, combined=combined, postprocessed=post)


def localize_all(rs: RecordSet, cfg: LocalizeConfig) -> dict[int, TimestepMasks]:
    return {t: localize_timestep(rs, t, cfg) for t in range(rs.layout.n_timesteps)}


def mask_records(result: TimestepMasks) -> list[EditMask]:
    """Flatten one timestep's masks for serialization."""
    out: list[EditMask] = []
    for sm in result.streams.values():
        out += [sm.raw, sm.propagated, sm.feature]
    out += [result.combined, result.postprocessed]
    return out


STAGE_OF = {
    "raw": STAGE_ATTENTION_RAW,
    "propagated": STAGE_ATTENTION_PROPAGATED,
    "feature": STAGE_FEATURE,
    "combined": STAGE_TASK_COMBINED,
    "postprocessed": STAGE_POSTPROCESSED,
}
