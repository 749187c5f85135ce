"""IoU analysis rows, sweeps, and deterministic CSV / plot-data emission.

Ground-truth convention: a stream's masks are scored against that stream's
own ground-truth region when the stream carries edit semantics for the task,
and against the task-level region (union of stream regions) otherwise;
combined-stream masks are always scored against the task-level region. Empty
vs. empty counts as IoU 1.0. Aggregate means are computed in ascending
sample-id order so outputs are bit-stable across platforms.
"""

from __future__ import annotations

import csv as _csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from . import attention, features
from .core import COMBINED, EditMask, STREAMS, TASKS, ValidationError
from .oracles import iou
from .pipeline import LocalizeConfig, localize_stream
from .records import RecordSet
from .synth import SceneParams, generate_scene
from .taskmask import combine, postprocess

DEFAULT_TAUS = (0.1, 0.3, 0.5, 0.7, 0.9)

CSV_HEADER = ("sample_id", "task", "stream", "stage", "layer", "timestep",
              "tau", "dilation_radius", "iou")


@dataclass(frozen=True)
class AnalysisRow:
    sample_id: str
    task: str
    stream: str
    stage: str
    layer: Optional[int]
    timestep: Optional[int]
    tau: float
    dilation_radius: Optional[int]
    iou: float

    def validate(self) -> "AnalysisRow":
        if self.task not in TASKS:
            raise ValidationError("task", f"unknown task {self.task!r}")
        if self.stream not in STREAMS + (COMBINED,):
            raise ValidationError("stream", f"unknown stream {self.stream!r}")
        if not (0.0 <= self.iou <= 1.0):
            raise ValidationError("iou", f"{self.iou} outside [0, 1]")
        return self


def gt_for_stream(gt_masks: dict[str, EditMask], stream: str) -> np.ndarray:
    """Own region for semantics-carrying streams, task region otherwise."""
    union = np.zeros_like(gt_masks[STREAMS[0]].bits)
    for s in STREAMS:
        union |= gt_masks[s].bits
    if stream == COMBINED:
        return union
    own = gt_masks[stream].bits
    return own if own.any() else union


def _sort_key(row: AnalysisRow):
    return (row.sample_id, row.task, row.stream, row.stage,
            -1 if row.layer is None else row.layer,
            -1 if row.timestep is None else row.timestep, row.tau)


def sort_rows(rows: Iterable[AnalysisRow]) -> list[AnalysisRow]:
    return sorted(rows, key=_sort_key)


def mean_iou(rows: Iterable[AnalysisRow], **filters) -> float:
    """Mean over matching rows, accumulated in ascending sample-id order."""
    picked = [r for r in sort_rows(rows)
              if all(getattr(r, k) == v for k, v in filters.items())]
    if not picked:
        raise ValidationError("rows", f"no rows match {filters}")
    total = 0.0
    for r in picked:
        total += r.iou
    return total / len(picked)


def _stream_rows(rs: RecordSet, gt_masks: dict[str, EditMask], cfg: LocalizeConfig,
                 sample_id: str, timestep: int, taus: Sequence[float],
                 with_combined: bool) -> list[AnalysisRow]:
    task = rs.instruction.task
    fl = cfg.resolve_feature_layer(rs.layout.n_layers)
    rows: list[AnalysisRow] = []
    per_stream = {s: localize_stream(rs, timestep, s, cfg) for s in STREAMS}
    for stream in STREAMS:
        sm = per_stream[stream]
        gt_bits = gt_for_stream(gt_masks, stream)
        fb = rs.need_features(fl, timestep, stream)
        for tau in taus:
            raw_mask = attention.threshold(sm.map_raw, tau, stage="attention_raw")
            prop_mask = attention.threshold(sm.map_propagated, tau)
            feature_mask = features.refine(fb, prop_mask, cfg.epsilon)
            for stage, mask, layer in (
                ("attention_raw", raw_mask, None),
                ("attention_propagated", prop_mask, None),
                ("feature", feature_mask, fl),
            ):
                rows.append(AnalysisRow(
                    sample_id=sample_id, task=task, stream=stream, stage=stage,
                    layer=layer, timestep=timestep, tau=tau, dilation_radius=None,
                    iou=iou(mask.bits, gt_bits)).validate())
    if with_combined:
        gt_union = gt_for_stream(gt_masks, COMBINED)
        combined = combine(task, per_stream["target"].feature, per_stream["source"].feature)
        post = postprocess(combined, rs.layout.grid, cfg.morphology)
        rows.append(AnalysisRow(
            sample_id=sample_id, task=task, stream=COMBINED, stage="task_combined",
            layer=fl, timestep=timestep, tau=cfg.tau, dilation_radius=None,
            iou=iou(combined.bits, gt_union)).validate())
        rows.append(AnalysisRow(
            sample_id=sample_id, task=task, stream=COMBINED, stage="postprocessed",
            layer=fl, timestep=timestep, tau=cfg.tau,
            dilation_radius=cfg.morphology.dilation_radius,
            iou=iou(post.bits, gt_union)).validate())
    return rows


def _resolve_gt(rs: RecordSet, gt_masks: Optional[dict[str, EditMask]]) -> dict[str, EditMask]:
    gt = gt_masks if gt_masks is not None else rs.gt_masks
    for s in STREAMS:
        if s not in gt:
            raise ValidationError("gt", f"no ground-truth mask for stream {s!r}")
    return gt


def sweep_timesteps(rs: RecordSet, cfg: LocalizeConfig, sample_id: str = "sample0",
                    gt_masks: Optional[dict[str, EditMask]] = None) -> list[AnalysisRow]:
    """One row per (timestep, stream, stage) at the configured tau."""
    gt = _resolve_gt(rs, gt_masks)
    rows: list[AnalysisRow] = []
    for t in range(rs.layout.n_timesteps):
        rows += _stream_rows(rs, gt, cfg, sample_id, t, taus=(cfg.tau,),
                             with_combined=True)
    return sort_rows(rows)


def sweep_tau(rs: RecordSet, cfg: LocalizeConfig,
              taus: Sequence[float] = DEFAULT_TAUS, sample_id: str = "sample0",
              gt_masks: Optional[dict[str, EditMask]] = None) -> list[AnalysisRow]:
    gt = _resolve_gt(rs, gt_masks)
    rows: list[AnalysisRow] = []
    for t in range(rs.layout.n_timesteps):
        rows += _stream_rows(rs, gt, cfg, sample_id, t, taus=taus,
                             with_combined=False)
    return sort_rows(rows)


def sweep_layers(rs: RecordSet, cfg: LocalizeConfig,
                 layers: Optional[Sequence[int]] = None, sample_id: str = "sample0",
                 gt_masks: Optional[dict[str, EditMask]] = None) -> list[AnalysisRow]:
    """Feature-stage rows per candidate feature layer."""
    gt = _resolve_gt(rs, gt_masks)
    layers = tuple(layers) if layers is not None else tuple(range(rs.layout.n_layers))
    rows: list[AnalysisRow] = []
    for layer in layers:
        layer_cfg = LocalizeConfig(
            tau=cfg.tau, attention_layers=cfg.attention_layers,
            feature_layer=layer, epsilon=cfg.epsilon, morphology=cfg.morphology)
        for t in range(rs.layout.n_timesteps):
            for stream in STREAMS:
                sm = localize_stream(rs, t, stream, layer_cfg)
                gt_bits = gt_for_stream(gt, stream)
                rows.append(AnalysisRow(
                    sample_id=sample_id, task=rs.instruction.task, stream=stream,
                    stage="feature", layer=layer, timestep=t, tau=cfg.tau,
                    dilation_radius=None,
                    iou=iou(sm.feature.bits, gt_bits)).validate())
    return sort_rows(rows)


def run_suite(params_list: Sequence[SceneParams], cfg: LocalizeConfig,
              taus: Sequence[float] = (), id_prefix: str = "scene") -> list[AnalysisRow]:
    """Generate each scene, score it, free it; rows for cfg.tau plus any extra
    taus requested."""
    all_taus = tuple(dict.fromkeys((cfg.tau, *taus)))
    rows: list[AnalysisRow] = []
    for i, params in enumerate(params_list):
        scene, rs = generate_scene(params)
        sid = f"{id_prefix}{i:04d}"
        for t in range(rs.layout.n_timesteps):
            rows += _stream_rows(rs, scene.gt, cfg, sid, t, taus=all_taus,
                                 with_combined=True)
    return sort_rows(rows)


def _fmt(value, float_digits: int = 12) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.{float_digits}f}"
    return str(value)


def emit_csv(rows: Sequence[AnalysisRow], out: Union[str, Path]) -> Path:
    """Fixed column order, fixed float formatting, sorted rows."""
    out = Path(out)
    lines = [",".join(CSV_HEADER)]
    for r in sort_rows(rows):
        lines.append(",".join((
            r.sample_id, r.task, r.stream, r.stage, _fmt(r.layer), _fmt(r.timestep),
            repr(float(r.tau)), _fmt(r.dilation_radius), _fmt(r.iou),
        )))
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return out


def parse_csv(path: Union[str, Path]) -> list[AnalysisRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = _csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_HEADER:
            raise ValidationError("csv", f"unexpected header {reader.fieldnames}")
        rows = []
        for rec in reader:
            rows.append(AnalysisRow(
                sample_id=rec["sample_id"], task=rec["task"], stream=rec["stream"],
                stage=rec["stage"],
                layer=int(rec["layer"]) if rec["layer"] else None,
                timestep=int(rec["timestep"]) if rec["timestep"] else None,
                tau=float(rec["tau"]),
                dilation_radius=int(rec["dilation_radius"]) if rec["dilation_radius"] else None,
                iou=float(rec["iou"])).validate())
    return rows


def emit_plotdata(rows: Sequence[AnalysisRow], out_dir: Union[str, Path],
                  x_field: str) -> list[Path]:
    """One x<TAB>mean_iou series file per (task, stream, stage) curve."""
    if x_field not in ("timestep", "tau", "layer"):
        raise ValidationError("x_field", f"unknown sweep axis {x_field!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    curves: dict[tuple[str, str, str], dict] = {}
    for r in sort_rows(rows):
        x = getattr(r, x_field)
        if x is None:
            continue
        series = curves.setdefault((r.task, r.stream, r.stage), {})
        series.setdefault(x, []).append(r.iou)
    written = []
    for (task, stream, stage), series in sorted(curves.items()):
        path = out_dir / f"{x_field}_{task}_{stream}_{stage}.tsv"
        lines = []
        for x in sorted(series):
            vals = series[x]
            total = 0.0
            for v in vals:
                total += v
            lines.append(f"{x}\t{total / len(vals):.12f}")
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        written.append(path)
    return written
