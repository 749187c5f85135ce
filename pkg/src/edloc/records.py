"""Bit-exact on-disk record format and directory store.

Every record file is a fixed 22-byte header followed by a row-major payload
of 32-bit little-endian IEEE-754 floats:

    bytes 0..7   magic  "EDLOC1\\0\\0"
    byte  8      format version (1)
    byte  9      record kind
    bytes 10..13 layer     (uint32 LE; 0xFFFFFFFF = absent)
    bytes 14..17 timestep  (uint32 LE; 0xFFFFFFFF = absent)
    bytes 18..21 stream    (uint32 LE; role code for latents)

Kinds: 1 attention (payload = ca rows then sa rows), 2 feature, 3 latent,
4..9 mask (one kind per stage, payload = n_img floats of 0.0/1.0). Payload
shapes come from the manifest, so reading always happens against a layout.
When a file carries one of the canonical record names, the header metadata is
cross-checked against the name; any single corrupted header byte is then
either rejected or provably harmless.
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .core import (
    COMBINED,
    LATENT_ROLES,
    MASK_STREAMS,
    SOURCE,
    STAGE_GROUND_TRUTH,
    STREAMS,
    TARGET,
    AttentionBundle,
    EditMask,
    FeatureBundle,
    InstructionSpec,
    LatentRecord,
    NoiseSchedule,
    TokenLayout,
    ValidationError,
)

MAGIC = b"EDLOC1\x00\x00"
VERSION = 1
HEADER = struct.Struct("<8sBBIII")
NONE_U32 = 0xFFFFFFFF

KIND_ATTENTION = 1
KIND_FEATURE = 2
KIND_LATENT = 3

MASK_STAGE_KINDS = {
    "attention_raw": 4,
    "attention_propagated": 5,
    "feature": 6,
    "task_combined": 7,
    "postprocessed": 8,
    "ground_truth": 9,
}
KIND_MASK_STAGES = {v: k for k, v in MASK_STAGE_KINDS.items()}

STREAM_CODES = {TARGET: 0, SOURCE: 1, COMBINED: 2}
CODE_STREAMS = {v: k for k, v in STREAM_CODES.items()}
ROLE_CODES = {"initial_noise": 0, "source": 1, "current": 2}
CODE_ROLES = {v: k for k, v in ROLE_CODES.items()}

STREAM_TOKENS = {TARGET: "tgt", SOURCE: "src", COMBINED: "comb"}
TOKEN_STREAMS = {v: k for k, v in STREAM_TOKENS.items()}
STAGE_TOKENS = {
    "attention_raw": "attnraw",
    "attention_propagated": "attnprop",
    "feature": "feat",
    "task_combined": "comb",
    "postprocessed": "post",
}
TOKEN_STAGES = {v: k for k, v in STAGE_TOKENS.items()}

MANIFEST_NAME = "manifest.txt"

Record = Union[AttentionBundle, FeatureBundle, LatentRecord, EditMask]


class RecordFormatError(ValueError):
    """Structural problem in a record file (magic, version, size, naming)."""


class MissingRecordError(FileNotFoundError):
    """A record required by the requested computation is absent."""


def canonical_name(record: Record) -> str:
    """Canonical file name for a record; encodes the header metadata."""
    if isinstance(record, AttentionBundle):
        return f"attn_L{record.layer}_T{record.timestep}_{STREAM_TOKENS[record.stream]}.edloc"
    if isinstance(record, FeatureBundle):
        return f"feat_L{record.layer}_T{record.timestep}_{STREAM_TOKENS[record.stream]}.edloc"
    if isinstance(record, LatentRecord):
        if record.role == "initial_noise":
            return "latent_init.edloc"
        if record.role == "source":
            return "latent_src.edloc"
        return f"latent_cur_T{record.timestep}.edloc"
    if isinstance(record, EditMask):
        if record.stage == STAGE_GROUND_TRUTH:
            return f"gt_{STREAM_TOKENS[record.stream]}.edloc"
        stage = STAGE_TOKENS[record.stage]
        layer = f"_L{record.layer}" if record.layer is not None else ""
        return f"mask_{stage}{layer}_T{record.timestep}_{STREAM_TOKENS[record.stream]}.edloc"
    raise TypeError(f"not a record: {type(record)}")


_NAME_PATTERNS = (
    (re.compile(r"^attn_L(\d+)_T(\d+)_(tgt|src)$"),
     lambda m: (KIND_ATTENTION, int(m[1]), int(m[2]), STREAM_CODES[TOKEN_STREAMS[m[3]]])),
    (re.compile(r"^feat_L(\d+)_T(\d+)_(tgt|src)$"),
     lambda m: (KIND_FEATURE, int(m[1]), int(m[2]), STREAM_CODES[TOKEN_STREAMS[m[3]]])),
    (re.compile(r"^latent_init$"),
     lambda m: (KIND_LATENT, NONE_U32, NONE_U32, ROLE_CODES["initial_noise"])),
    (re.compile(r"^latent_src$"),
     lambda m: (KIND_LATENT, NONE_U32, NONE_U32, ROLE_CODES["source"])),
    (re.compile(r"^latent_cur_T(\d+)$"),
     lambda m: (KIND_LATENT, NONE_U32, int(m[1]), ROLE_CODES["current"])),
    (re.compile(r"^blended_T(\d+)$"),
     lambda m: (KIND_LATENT, NONE_U32, int(m[1]), ROLE_CODES["current"])),
    (re.compile(r"^gt_(tgt|src|comb)$"),
     lambda m: (MASK_STAGE_KINDS[STAGE_GROUND_TRUTH], NONE_U32, NONE_U32,
                STREAM_CODES[TOKEN_STREAMS[m[1]]])),
    (re.compile(r"^mask_(attnraw|attnprop|feat|comb|post)(?:_L(\d+))?_T(\d+)_(tgt|src|comb)$"),
     lambda m: (MASK_STAGE_KINDS[TOKEN_STAGES[m[1]]],
                int(m[2]) if m[2] is not None else NONE_U32,
                int(m[3]),
                STREAM_CODES[TOKEN_STREAMS[m[4]]])),
)


def parse_record_name(name: str) -> Optional[tuple[int, int, int, int]]:
    """(kind, layer, timestep, stream/role) encoded by a canonical name, else None."""
    stem = name[:-len(".edloc")] if name.endswith(".edloc") else name
    for pattern, extract in _NAME_PATTERNS:
        m = pattern.match(stem)
        if m:
            return extract(m)
    return None


def _header_fields(record: Record) -> tuple[int, int, int, int]:
    if isinstance(record, AttentionBundle):
        return KIND_ATTENTION, record.layer, record.timestep, STREAM_CODES[record.stream]
    if isinstance(record, FeatureBundle):
        return KIND_FEATURE, record.layer, record.timestep, STREAM_CODES[record.stream]
    if isinstance(record, LatentRecord):
        t = record.timestep if record.timestep is not None else NONE_U32
        return KIND_LATENT, NONE_U32, t, ROLE_CODES[record.role]
    if isinstance(record, EditMask):
        kind = MASK_STAGE_KINDS[record.stage]
        layer = record.layer if record.layer is not None else NONE_U32
        t = record.timestep if record.timestep is not None else NONE_U32
        return kind, layer, t, STREAM_CODES[record.stream]
    raise TypeError(f"not a record: {type(record)}")


def _payload(record: Record) -> bytes:
    if isinstance(record, AttentionBundle):
        return record.ca.astype("<f4", copy=False).tobytes() + record.sa.astype("<f4", copy=False).tobytes()
    if isinstance(record, FeatureBundle):
        return record.f.astype("<f4", copy=False).tobytes()
    if isinstance(record, LatentRecord):
        return record.z.astype("<f4", copy=False).tobytes()
    return record.bits.astype("<f4").tobytes()


def _payload_count(kind: int, layout: TokenLayout) -> int:
    if kind == KIND_ATTENTION:
        return layout.n_img * layout.n_txt + layout.n_img * layout.n_img
    if kind == KIND_FEATURE or kind == KIND_LATENT:
        return layout.n_img * layout.d
    return layout.n_img


def write_bundle(record: Record, layout: TokenLayout, out: Union[str, Path]) -> Path:
    """Validate and serialize one record; round-trips bit-exactly."""
    if isinstance(record, EditMask):
        record.validate(layout)
    else:
        record.validate(layout)
    kind, layer, t, stream = _header_fields(record)
    out = Path(out)
    out.write_bytes(HEADER.pack(MAGIC, VERSION, kind, layer, t, stream) + _payload(record))
    return out


def read_bundle(path: Union[str, Path], layout: TokenLayout) -> Record:
    """Parse and re-validate one record file.

    If the file name is one of the canonical record names, header metadata
    must match it exactly.
    """
    path = Path(path)
    if not path.exists():
        raise MissingRecordError(str(path))
    data = path.read_bytes()
    if len(data) < HEADER.size:
        raise RecordFormatError(f"{path.name}: truncated header, {len(data)} < {HEADER.size} bytes")
    magic, version, kind, layer, t, stream = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise RecordFormatError(f"{path.name}: unrecognized format (bad magic {magic!r})")
    if version != VERSION:
        raise RecordFormatError(f"{path.name}: unsupported version {version}")
    if kind not in (KIND_ATTENTION, KIND_FEATURE, KIND_LATENT) and kind not in KIND_MASK_STAGES:
        raise RecordFormatError(f"{path.name}: unknown record kind {kind}")

    expected = parse_record_name(path.name)
    if expected is not None and expected != (kind, layer, t, stream):
        raise RecordFormatError(
            f"{path.name}: header {(kind, layer, t, stream)} does not match file name {expected}"
        )

    count = _payload_count(kind, layout)
    nbytes = 4 * count
    got = len(data) - HEADER.size
    if got < nbytes:
        raise RecordFormatError(f"{path.name}: truncated payload, expected {nbytes} bytes, got {got}")
    if got > nbytes:
        raise RecordFormatError(f"{path.name}: trailing bytes, expected {nbytes} bytes, got {got}")
    flat = np.frombuffer(data, dtype="<f4", offset=HEADER.size).copy()

    if kind == KIND_ATTENTION:
        if stream not in CODE_STREAMS or CODE_STREAMS[stream] == COMBINED:
            raise RecordFormatError(f"{path.name}: invalid stream code {stream}")
        n_ca = layout.n_img * layout.n_txt
        rec: Record = AttentionBundle(
            layer=layer, timestep=t, stream=CODE_STREAMS[stream],
            ca=flat[:n_ca].reshape(layout.n_img, layout.n_txt),
            sa=flat[n_ca:].reshape(layout.n_img, layout.n_img),
        )
    elif kind == KIND_FEATURE:
        if stream not in CODE_STREAMS or CODE_STREAMS[stream] == COMBINED:
            raise RecordFormatError(f"{path.name}: invalid stream code {stream}")
        rec = FeatureBundle(layer=layer, timestep=t, stream=CODE_STREAMS[stream],
                            f=flat.reshape(layout.n_img, layout.d))
    elif kind == KIND_LATENT:
        if stream not in CODE_ROLES:
            raise RecordFormatError(f"{path.name}: invalid role code {stream}")
        role = CODE_ROLES[stream]
        if layer != NONE_U32:
            raise RecordFormatError(f"{path.name}: latent records carry no layer, got {layer}")
        rec = LatentRecord(role=role, timestep=None if t == NONE_U32 else t,
                           z=flat.reshape(layout.n_img, layout.d))
    else:
        if stream not in CODE_STREAMS:
            raise RecordFormatError(f"{path.name}: invalid stream code {stream}")
        bad = ~np.isin(flat, (0.0, 1.0))
        if bad.any():
            raise RecordFormatError(
                f"{path.name}: mask payload entry {int(np.argmax(bad))} is not 0.0/1.0")
        rec = EditMask(stream=CODE_STREAMS[stream], stage=KIND_MASK_STAGES[kind],
                       bits=flat.astype(np.uint8),
                       timestep=None if t == NONE_U32 else t,
                       layer=None if layer == NONE_U32 else layer)
    rec.validate(layout)
    return rec


# ---------------------------------------------------------------------------
# Manifest


_MANIFEST_PATTERNS = (
    ("record_attention", "attn_L{layer}_T{timestep}_{tgt|src}.edloc"),
    ("record_feature", "feat_L{layer}_T{timestep}_{tgt|src}.edloc"),
    ("record_latent", "latent_{init|src}.edloc latent_cur_T{t}.edloc"),
    ("record_mask", "mask_{stage}[_L{layer}]_T{t}_{tgt|src|comb}.edloc gt_{tgt|src|comb}.edloc"),
)


def write_manifest(layout: TokenLayout, schedule: NoiseSchedule,
                   instruction: InstructionSpec, out: Union[str, Path]) -> Path:
    """Emit the key/value manifest; byte-for-byte deterministic."""
    layout.validate()
    schedule.validate(layout)
    instruction.validate(layout)
    lines = [
        "format = edloc-manifest",
        f"version = {VERSION}",
        f"n_txt = {layout.n_txt}",
        f"n_img = {layout.n_img}",
        f"grid_h = {layout.grid_h}",
        f"grid_w = {layout.grid_w}",
        f"d = {layout.d}",
        f"n_layers = {layout.n_layers}",
        f"n_timesteps = {layout.n_timesteps}",
        f"n_heads = {layout.n_heads}",
        "sigma = " + ",".join(repr(float(s)) for s in schedule.sigma),
        f"task = {instruction.task}",
        "selected_text_indices = " + ",".join(str(i) for i in instruction.selected_text_indices),
        f"label = {instruction.label}",
    ]
    lines += [f"{k} = {v}" for k, v in _MANIFEST_PATTERNS]
    out = Path(out)
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return out


def parse_kv_text(text: str) -> dict[str, str]:
    """Parse the flat `key = value` format used by manifests and run configs."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValidationError("config", f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def read_manifest(path: Union[str, Path]) -> tuple[TokenLayout, NoiseSchedule, InstructionSpec]:
    path = Path(path)
    if not path.exists():
        raise MissingRecordError(str(path))
    kv = parse_kv_text(path.read_text(encoding="utf-8"))
    if kv.get("format") != "edloc-manifest":
        raise RecordFormatError(f"{path.name}: unrecognized manifest format")

    def geti(key: str) -> int:
        if key not in kv:
            raise ValidationError(key, "missing from manifest")
        try:
            return int(kv[key])
        except ValueError as e:
            raise ValidationError(key, f"not an integer: {kv[key]!r}") from e

    layout = TokenLayout(
        n_txt=geti("n_txt"), n_img=geti("n_img"), grid_h=geti("grid_h"),
        grid_w=geti("grid_w"), d=geti("d"), n_layers=geti("n_layers"),
        n_timesteps=geti("n_timesteps"), n_heads=geti("n_heads"),
    ).validate()
    try:
        sigma = tuple(float(s) for s in kv.get("sigma", "").split(",") if s != "")
    except ValueError as e:
        raise ValidationError("sigma", f"unparseable: {kv.get('sigma')!r}") from e
    schedule = NoiseSchedule(sigma=sigma).validate(layout)
    idx = tuple(int(s) for s in kv.get("selected_text_indices", "").split(",") if s != "")
    instruction = InstructionSpec(
        task=kv.get("task", ""), selected_text_indices=idx, label=kv.get("label", ""),
    ).validate(layout)
    return layout, schedule, instruction


# ---------------------------------------------------------------------------
# Directory store


@dataclass
class RecordSet:
    """All records of one run, in memory, keyed the way files are named."""

    layout: TokenLayout
    schedule: NoiseSchedule
    instruction: InstructionSpec
    attention: dict[tuple[int, int, str], AttentionBundle] = dc_field(default_factory=dict)
    features: dict[tuple[int, int, str], FeatureBundle] = dc_field(default_factory=dict)
    latents: dict[str, LatentRecord] = dc_field(default_factory=dict)
    gt_masks: dict[str, EditMask] = dc_field(default_factory=dict)
    masks: dict[str, EditMask] = dc_field(default_factory=dict)

    def put(self, record: Record) -> None:
        if isinstance(record, AttentionBundle):
            self.attention[(record.layer, record.timestep, record.stream)] = record
        elif isinstance(record, FeatureBundle):
            self.features[(record.layer, record.timestep, record.stream)] = record
        elif isinstance(record, LatentRecord):
            key = record.role if record.role != "current" else f"current_{record.timestep}"
            self.latents[key] = record
        elif record.stage == STAGE_GROUND_TRUTH:
            self.gt_masks[record.stream] = record
        else:
            self.masks[canonical_name(record)] = record

    def need_attention(self, layer: int, timestep: int, stream: str) -> AttentionBundle:
        key = (layer, timestep, stream)
        if key not in self.attention:
            raise MissingRecordError(
                f"attn_L{layer}_T{timestep}_{STREAM_TOKENS[stream]}.edloc")
        return self.attention[key]

    def need_features(self, layer: int, timestep: int, stream: str) -> FeatureBundle:
        key = (layer, timestep, stream)
        if key not in self.features:
            raise MissingRecordError(
                f"feat_L{layer}_T{timestep}_{STREAM_TOKENS[stream]}.edloc")
        return self.features[key]

    def need_latent(self, key: str) -> LatentRecord:
        if key not in self.latents:
            name = {"initial_noise": "latent_init.edloc", "source": "latent_src.edloc"}.get(
                key, f"latent_cur_T{key.split('_')[-1]}.edloc")
            raise MissingRecordError(name)
        return self.latents[key]

    def records(self) -> list[Record]:
        out: list[Record] = []
        out += [self.attention[k] for k in sorted(self.attention)]
        out += [self.features[k] for k in sorted(self.features)]
        out += [self.latents[k] for k in sorted(self.latents)]
        out += [self.gt_masks[k] for k in sorted(self.gt_masks)]
        out += [self.masks[k] for k in sorted(self.masks)]
        return out


def write_store(rs: RecordSet, out_dir: Union[str, Path]) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_manifest(rs.layout, rs.schedule, rs.instruction, out_dir / MANIFEST_NAME)
    for record in rs.records():
        write_bundle(record, rs.layout, out_dir / canonical_name(record))
    return out_dir


def read_store(in_dir: Union[str, Path]) -> RecordSet:
    in_dir = Path(in_dir)
    layout, schedule, instruction = read_manifest(in_dir / MANIFEST_NAME)
    rs = RecordSet(layout=layout, schedule=schedule, instruction=instruction)
    for path in sorted(in_dir.glob("*.edloc")):
        if path.name.startswith("blended_"):
            # blend outputs share the latent layout but are products of a
            # run, not part of the dumped trajectory
            continue
        rs.put(read_bundle(path, layout))
    return rs


def validate_store(in_dir: Union[str, Path]) -> list[tuple[str, Optional[str]]]:
    """Check every file against the format; (name, None) per clean file,
    (name, message) per violation. The manifest is checked first; without a
    readable manifest no record can be checked."""
    in_dir = Path(in_dir)
    report: list[tuple[str, Optional[str]]] = []
    try:
        layout, _, _ = read_manifest(in_dir / MANIFEST_NAME)
        report.append((MANIFEST_NAME, None))
    except Exception as e:
        return [(MANIFEST_NAME, str(e))]
    for path in sorted(in_dir.glob("*.edloc")):
        try:
            read_bundle(path, layout)
            report.append((path.name, None))
        except Exception as e:
            report.append((path.name, str(e)))
    return report
