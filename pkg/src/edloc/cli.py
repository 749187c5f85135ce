"""Command-line entry point.

Subcommands: synth, localize, blend, eval, validate. Flags mirror the run
config; a flat `key = value` config file may supply any flag's value, with
command-line values taking precedence. Every run writes its fully resolved
config beside its outputs, and identical configs over identical records
produce byte-identical output trees.

Exit codes: 0 ok, 2 missing records, 3 validation failure, 4 config error.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .blending import PreservationPlan, apply_plan, default_apply_at
from .core import (
    COMBINED,
    EditMask,
    LatentRecord,
    STREAMS,
    TASKS,
    ValidationError,
)
from .evaluate import (
    DEFAULT_TAUS,
    emit_csv,
    emit_plotdata,
    run_suite,
    sweep_layers,
    sweep_tau,
    sweep_timesteps,
)
from .oracles import iou
from .pipeline import LocalizeConfig, localize_all, mask_records
from .records import (
    MissingRecordError,
    RecordFormatError,
    canonical_name,
    parse_kv_text,
    read_store,
    validate_store,
    write_bundle,
    write_store,
)
from .synth import SceneParams, generate_scene, noiseless_params, suite_params
from .taskmask import MorphologyConfig, component_sizes, provenance_report
from .viz import write_pgm

ENV_RECORD_DIR = "EDLOC_RECORD_DIR"

EXIT_OK = 0
EXIT_MISSING = 2
EXIT_VALIDATION = 3
EXIT_CONFIG = 4


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on CLI errors, which collides with the
    # missing-records code; surface them as config errors instead.
    def error(self, message):
        raise ConfigError(message)


def _csv_ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip() != "")
    except ValueError as e:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from e


def _resolve(args: argparse.Namespace, key: str, default, cast=None):
    """Precedence: command line > config file > default."""
    value = getattr(args, key, None)
    if value is None and getattr(args, "_config", None) and key in args._config:
        raw = args._config[key]
        value = cast(raw) if cast else raw
    return default if value is None else value


def _load_config(args: argparse.Namespace) -> None:
    args._config = {}
    path = getattr(args, "config", None)
    if path:
        try:
            args._config = parse_kv_text(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError as e:
            raise ConfigError(f"config file not found: {path}") from e
        except ValidationError as e:
            raise ConfigError(str(e)) from e


def _record_dir(args: argparse.Namespace) -> Path:
    value = _resolve(args, "record_dir", os.environ.get(ENV_RECORD_DIR))
    if not value:
        raise ConfigError("no record directory given (flag, config, or "
                          f"{ENV_RECORD_DIR})")
    return Path(value)


def _echo_config(out_dir: Path, entries: dict) -> None:
    lines = [f"{k} = {entries[k]}" for k in sorted(entries)]
    (out_dir / "config_echo.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _localize_config(args: argparse.Namespace) -> LocalizeConfig:
    morphology = MorphologyConfig(
        connectivity=int(_resolve(args, "connectivity", 8, int)),
        dilation_radius=int(_resolve(args, "dilation_radius", 2, int)),
        fill_holes=not bool(_resolve(args, "no_fill_holes", False,
                                     lambda s: s.lower() == "true")),
    )
    layers = _resolve(args, "attention_layers", None, _csv_ints)
    feature_layer = _resolve(args, "feature_layer", None, int)
    return LocalizeConfig(
        tau=float(_resolve(args, "tau", 0.5, float)),
        attention_layers=layers,
        feature_layer=int(feature_layer) if feature_layer is not None else None,
        morphology=morphology,
    )


# ---------------------------------------------------------------------------
# Subcommands


def cmd_synth(args: argparse.Namespace) -> int:
    out = Path(_resolve(args, "out", None) or "")
    if str(out) == "":
        raise ConfigError("synth requires --out")
    overrides = {}
    for key in ("grid_h", "grid_w", "n_txt", "d", "n_layers", "n_timesteps",
                "n_selected", "ring_width"):
        v = _resolve(args, key, None, int)
        if v is not None:
            overrides[key] = int(v)
    for key in ("noise_level", "separation", "distractor_mass", "hole_fraction",
                "attn_jitter", "sa_jitter", "ring_fraction"):
        v = _resolve(args, key, None, float)
        if v is not None:
            overrides[key] = float(v)
    task = _resolve(args, "task", "addition")
    seed = int(_resolve(args, "seed", 0, int))
    if bool(getattr(args, "noiseless", False)):
        params = noiseless_params(task, seed, **overrides)
    elif bool(getattr(args, "suite_scale", False)):
        params = suite_params(task, seed, **overrides)
    else:
        params = SceneParams(task=task, rng_seed=seed, **overrides)
    scene, rs = generate_scene(params)
    write_store(rs, out)
    _echo_config(out, {
        "command": "synth", "task": task, "seed": seed,
        **{k: getattr(params, k) for k in sorted(params.__dataclass_fields__)
           if k not in ("task", "rng_seed")},
    })
    print(f"wrote {len(rs.records())} records to {out}")
    return EXIT_OK


def cmd_localize(args: argparse.Namespace) -> int:
    record_dir = _record_dir(args)
    out = Path(_resolve(args, "out", record_dir / "localize"))
    out.mkdir(parents=True, exist_ok=True)
    rs = read_store(record_dir)
    cfg = _localize_config(args)
    pgm = not bool(getattr(args, "no_pgm", False))
    results = localize_all(rs, cfg)

    sizes: dict[str, list[int]] = {}
    notes: list[str] = []
    ious = []
    for t, res in sorted(results.items()):
        for mask in mask_records(res):
            write_bundle(mask, rs.layout, out / canonical_name(mask))
            if pgm:
                write_pgm(mask.bits, rs.layout.grid,
                          out / (canonical_name(mask)[:-len(".edloc")] + ".pgm"))
            if mask.degenerate:
                notes.append(f"degenerate seed at T{t} stream {mask.stream}")
        if pgm:
            for stream in STREAMS:
                sm = res.streams[stream]
                write_pgm(sm.map_raw.values, rs.layout.grid,
                          out / f"map_attnraw_T{t}_{stream}.pgm")
                write_pgm(sm.map_propagated.values, rs.layout.grid,
                          out / f"map_attnprop_T{t}_{stream}.pgm")
        sizes[f"combined_T{t}"] = component_sizes(
            res.combined, rs.layout.grid, cfg.morphology.connectivity)
        if rs.gt_masks:
            gt_union = np.zeros(rs.layout.n_img, dtype=np.uint8)
            for s in STREAMS:
                if s in rs.gt_masks:
                    gt_union |= rs.gt_masks[s].bits
            ious.append(iou(res.postprocessed.bits, gt_union))

    (out / "provenance.txt").write_text(
        provenance_report(rs.instruction.task, cfg.morphology, sizes, tuple(notes)),
        encoding="utf-8")
    _echo_config(out, {
        "command": "localize", "record_dir": record_dir, "tau": cfg.tau,
        "attention_layers": ",".join(map(str, cfg.resolve_layers(rs.layout.n_layers))),
        "feature_layer": cfg.resolve_feature_layer(rs.layout.n_layers),
        "connectivity": cfg.morphology.connectivity,
        "dilation_radius": cfg.morphology.dilation_radius,
        "fill_holes": cfg.morphology.fill_holes,
    })
    if ious:
        print(f"IoU {sum(ious) / len(ious):.3f}")
    print(f"wrote masks for {len(results)} timesteps to {out}")
    return EXIT_OK


def cmd_blend(args: argparse.Namespace) -> int:
    record_dir = _record_dir(args)
    rs = read_store(record_dir)
    masks_dir = _resolve(args, "masks_dir", record_dir / "localize")
    out = Path(_resolve(args, "out", record_dir / "blend"))
    out.mkdir(parents=True, exist_ok=True)

    apply_at_flag = _resolve(args, "apply_at", None, _csv_ints)
    if apply_at_flag is not None:
        apply_at = frozenset(int(s) for s in apply_at_flag)
        filtered = False
    else:
        apply_at = default_apply_at(rs.layout.n_timesteps)
        filtered = len(apply_at) < 3

    masks_store = read_store(Path(masks_dir)) if Path(masks_dir, "manifest.txt").exists() else None
    feature_layer = _localize_config(args).resolve_feature_layer(rs.layout.n_layers)

    def mask_for(step: int) -> Optional[EditMask]:
        name = f"mask_post_L{feature_layer}_T{step}_comb.edloc"
        if masks_store is not None and name in masks_store.masks:
            return masks_store.masks[name]
        path = Path(masks_dir) / name
        if path.exists():
            from .records import read_bundle
            return read_bundle(path, rs.layout)
        return None

    plan = PreservationPlan(apply_at=apply_at, schedule=rs.schedule,
                            mask_for=mask_for).validate()
    z_init = rs.need_latent("initial_noise")
    z_src = rs.need_latent("source")
    applied = []
    for t in range(rs.layout.n_timesteps):
        z_cur = rs.need_latent(f"current_{t}")
        blended = apply_plan(plan, t, z_cur, z_init, z_src)
        rec = LatentRecord(role="current", timestep=t, z=blended.astype(np.float32))
        write_bundle(rec, rs.layout, out / f"blended_T{t}.edloc")
        if t in apply_at:
            applied.append(t)

    notes = ["replay blends the dumped (unmodified) trajectory; masks at later "
             "steps were not recomputed from blended features"]
    if filtered:
        notes.append("default apply_at {5,10,15} restricted to the dumped step range")
    (out / "provenance.txt").write_text(
        "\n".join([f"apply_at = {','.join(map(str, sorted(apply_at)))}",
                   f"applied_steps = {','.join(map(str, applied))}"]
                  + [f"note = {n}" for n in notes]) + "\n",
        encoding="utf-8")
    _echo_config(out, {
        "command": "blend", "record_dir": record_dir, "masks_dir": masks_dir,
        "apply_at": ",".join(map(str, sorted(apply_at))),
    })
    print(f"blended {len(applied)} of {rs.layout.n_timesteps} steps into {out}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    out_csv = Path(_resolve(args, "out_csv", None) or "")
    if str(out_csv) == "":
        raise ConfigError("eval requires --out-csv")
    cfg = _localize_config(args)
    sweep = _resolve(args, "sweep", "timesteps")
    taus = _resolve(args, "taus", DEFAULT_TAUS,
                    lambda s: tuple(float(x) for x in s.split(",")))
    suite_n = _resolve(args, "suite", None, int)

    if suite_n is not None:
        if sweep == "layers":
            raise ConfigError("layer sweep requires a record store, not --suite")
        tasks = _resolve(args, "tasks", "addition,removal,replacement",
                         lambda s: s).split(",")
        seed0 = int(_resolve(args, "seed0", 0, int))
        params = [suite_params(task, seed0 + i)
                  for task in tasks for i in range(int(suite_n))]
        rows = run_suite(params, cfg, taus=taus if sweep == "tau" else ())
    else:
        record_dir = _record_dir(args)
        rs = read_store(record_dir)
        if sweep == "timesteps":
            rows = sweep_timesteps(rs, cfg)
        elif sweep == "tau":
            rows = sweep_tau(rs, cfg, taus=taus)
        elif sweep == "layers":
            layers = _resolve(args, "layers", None, _csv_ints)
            rows = sweep_layers(rs, cfg, layers=layers)
        else:
            raise ConfigError(f"unknown sweep {sweep!r}")

    out_csv.parent.mkdir(parents=True, exist_ok=True)
    emit_csv(rows, out_csv)
    plotdata = _resolve(args, "plotdata", None)
    if plotdata:
        x_field = {"timesteps": "timestep", "tau": "tau", "layers": "layer"}[sweep]
        emit_plotdata(rows, Path(plotdata), x_field)
    _echo_config(out_csv.parent, {
        "command": "eval", "sweep": sweep, "tau": cfg.tau,
        "taus": ",".join(repr(t) for t in taus),
        "suite": suite_n if suite_n is not None else "",
    })
    print(f"wrote {len(rows)} rows to {out_csv}")
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    record_dir = _record_dir(args)
    report = validate_store(record_dir)
    failures = 0
    for name, error in report:
        if error is None:
            print(f"OK   {name}")
        else:
            failures += 1
            print(f"FAIL {name}: {error}")
    print(f"{len(report) - failures}/{len(report)} files valid")
    return EXIT_VALIDATION if failures else EXIT_OK


# ---------------------------------------------------------------------------
# Argument wiring


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value file supplying any flag")
    p.add_argument("--record-dir", dest="record_dir",
                   help=f"record store directory (default: ${ENV_RECORD_DIR})")


def _add_localize_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tau", type=float, help="attention threshold in (0,1); "
                   "default 0.5 (reference setting)")
    p.add_argument("--attention-layers", dest="attention_layers", type=_csv_ints,
                   help="layers aggregated for attention maps; default all dumped")
    p.add_argument("--feature-layer", dest="feature_layer", type=int,
                   help="layer for feature refinement; default deepest dumped")
    p.add_argument("--connectivity", type=int, choices=(4, 8),
                   help="component connectivity; default 8")
    p.add_argument("--dilation-radius", dest="dilation_radius", type=int,
                   help="post-processing expansion in grid cells; default 2")
    p.add_argument("--no-fill-holes", dest="no_fill_holes", action="store_true",
                   help="skip hole filling in post-processing")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="edloc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene record store")
    _add_common(p)
    p.add_argument("--out", required=False)
    p.add_argument("--task", choices=TASKS)
    p.add_argument("--seed", type=int)
    p.add_argument("--noiseless", action="store_true",
                   help="exact-recovery regime (no jitter, distractors, or boundary mixing)")
    p.add_argument("--suite-scale", dest="suite_scale", action="store_true",
                   help="small per-scene footprint (fewer layers/steps)")
    for flag in ("--grid-h", "--grid-w", "--n-txt", "--d", "--n-layers",
                 "--n-timesteps", "--n-selected", "--ring-width"):
        p.add_argument(flag, dest=flag[2:].replace("-", "_"), type=int)
    for flag in ("--noise-level", "--separation", "--distractor-mass",
                 "--hole-fraction", "--attn-jitter", "--sa-jitter", "--ring-fraction"):
        p.add_argument(flag, dest=flag[2:].replace("-", "_"), type=float)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("localize", help="compute masks at every stage")
    _add_common(p)
    p.add_argument("--out")
    p.add_argument("--no-pgm", dest="no_pgm", action="store_true")
    _add_localize_flags(p)
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("blend", help="replay a dumped trajectory with mask-guided blending")
    _add_common(p)
    p.add_argument("--out")
    p.add_argument("--masks-dir", dest="masks_dir")
    p.add_argument("--apply-at", dest="apply_at", type=_csv_ints,
                   help="blended step indices; default 5,10,15 restricted to range")
    p.add_argument("--feature-layer", dest="feature_layer", type=int)
    p.set_defaults(func=cmd_blend)

    p = sub.add_parser("eval", help="IoU analysis rows to CSV")
    _add_common(p)
    p.add_argument("--out-csv", dest="out_csv")
    p.add_argument("--sweep", choices=("timesteps", "tau", "layers"))
    p.add_argument("--taus", type=lambda s: tuple(float(x) for x in s.split(",")),
                   help="tau grid; default 0.1,0.3,0.5,0.7,0.9 (reference ablation grid)")
    p.add_argument("--layers", type=_csv_ints)
    p.add_argument("--suite", type=int, help="run an in-memory suite of N scenes per task")
    p.add_argument("--tasks")
    p.add_argument("--seed0", type=int)
    p.add_argument("--plotdata", help="also emit per-curve series files here")
    _add_localize_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("validate", help="check every record in a store")
    _add_common(p)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _load_config(args)
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingRecordError as e:
        print(f"missing record: {e}", file=sys.stderr)
        return EXIT_MISSING
    except (ValidationError, RecordFormatError) as e:
        print(f"validation failure: {e}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
