import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from edloc.core import (
    AttentionBundle,
    EditMask,
    FeatureBundle,
    InstructionSpec,
    LatentRecord,
    NoiseSchedule,
    TokenLayout,
    ValidationError,
)
from edloc.records import (
    HEADER,
    MissingRecordError,
    RecordFormatError,
    canonical_name,
    parse_record_name,
    read_bundle,
    read_manifest,
    read_store,
    validate_store,
    write_bundle,
    write_manifest,
    write_store,
    RecordSet,
)

from conftest import make_attention, make_features, make_latent, make_mask


# ---------------------------------------------------------------------------
# Manifest


def test_manifest_roundtrip(tmp_path, tiny_layout, tiny_schedule, tiny_instruction):
    path = write_manifest(tiny_layout, tiny_schedule, tiny_instruction, tmp_path / "manifest.txt")
    layout, schedule, instruction = read_manifest(path)
    assert layout == tiny_layout
    assert schedule == tiny_schedule
    assert instruction == tiny_instruction


def test_manifest_lists_geometry_keys(tmp_path, tiny_schedule, tiny_instruction):
    layout = TokenLayout(n_txt=10, n_img=16, grid_h=4, grid_w=4, d=8,
                         n_layers=1, n_timesteps=3, n_heads=1)
    text = write_manifest(layout, tiny_schedule, tiny_instruction,
                          tmp_path / "manifest.txt").read_text()
    for key, value in (("n_txt", 10), ("n_img", 16), ("grid_h", 4),
                       ("grid_w", 4), ("d", 8)):
        assert f"{key} = {value}" in text


def test_manifest_byte_deterministic(tmp_path, tiny_layout, tiny_schedule, tiny_instruction):
    a = write_manifest(tiny_layout, tiny_schedule, tiny_instruction, tmp_path / "a.txt")
    b = write_manifest(tiny_layout, tiny_schedule, tiny_instruction, tmp_path / "b.txt")
    assert a.read_bytes() == b.read_bytes()


def test_manifest_grid_mismatch(tmp_path, tiny_schedule, tiny_instruction):
    layout = TokenLayout(n_txt=10, n_img=16, grid_h=3, grid_w=5, d=8,
                         n_layers=1, n_timesteps=3)
    with pytest.raises(ValidationError, match="grid mismatch") as exc:
        write_manifest(layout, tiny_schedule, tiny_instruction, tmp_path / "manifest.txt")
    assert exc.value.field == "grid"


def test_manifest_sigma_order_preserved(tmp_path, tiny_layout, tiny_instruction):
    sched = NoiseSchedule(sigma=(1.0, 0.5, 0.0))
    path = write_manifest(tiny_layout, sched, tiny_instruction, tmp_path / "manifest.txt")
    assert "sigma = 1.0,0.5,0.0" in path.read_text()
    _, parsed, _ = read_manifest(path)
    assert parsed.sigma == (1.0, 0.5, 0.0)


@pytest.mark.parametrize("sigma,message", [
    ((0.5, 1.0, 0.0), "monotone"),
    ((1.5, 0.5, 0.0), "outside"),
    ((1.0, 0.5), "n_timesteps"),
])
def test_schedule_rejections(tmp_path, tiny_layout, tiny_instruction, sigma, message):
    with pytest.raises(ValidationError, match=message):
        write_manifest(tiny_layout, NoiseSchedule(sigma=sigma), tiny_instruction,
                       tmp_path / "manifest.txt")


def test_instruction_rejections(tiny_layout):
    with pytest.raises(ValidationError, match="non-empty"):
        InstructionSpec(task="addition", selected_text_indices=()).validate(tiny_layout)
    with pytest.raises(ValidationError, match="strictly increasing"):
        InstructionSpec(task="addition", selected_text_indices=(1, 1)).validate(tiny_layout)
    with pytest.raises(ValidationError, match="n_txt"):
        InstructionSpec(task="addition", selected_text_indices=(0, 5)).validate(tiny_layout)
    with pytest.raises(ValidationError, match="unknown task"):
        InstructionSpec(task="mystery", selected_text_indices=(0,)).validate(tiny_layout)


# ---------------------------------------------------------------------------
# Binary records


def test_latent_roundtrip_bit_exact(tmp_path, tiny_layout):
    z = np.array([[0.0, 1.0], [0.5, 0.5], [-3.25, 7.5], [1e-30, -1e30]], dtype=np.float32)
    rec = LatentRecord(role="source", z=z)
    path = write_bundle(rec, tiny_layout, tmp_path / canonical_name(rec))
    assert path.stat().st_size == HEADER.size + 4 * tiny_layout.n_img * tiny_layout.d
    back = read_bundle(path, tiny_layout)
    assert back == rec
    assert back.z.tobytes() == z.tobytes()


def test_roundtrip_all_kinds(tmp_path, tiny_layout):
    records = [
        make_attention(tiny_layout, layer=1, timestep=2, stream="source"),
        make_features(tiny_layout, layer=0, timestep=1, stream="target"),
        make_latent(tiny_layout, role="initial_noise"),
        make_latent(tiny_layout, role="current", timestep=2),
        make_mask([0, 1, 1, 0], stage="postprocessed", timestep=1, layer=1),
        make_mask([1, 0, 0, 0], stream="target", stage="ground_truth"),
    ]
    for rec in records:
        path = write_bundle(rec, tiny_layout, tmp_path / canonical_name(rec))
        assert read_bundle(path, tiny_layout) == rec


def test_write_rejects_nan(tmp_path, tiny_layout):
    z = np.zeros((4, 2), dtype=np.float32)
    z[2, 1] = np.nan
    with pytest.raises(ValidationError, match=r"non-finite value at \(2, 1\)"):
        write_bundle(LatentRecord(role="source", z=z), tiny_layout, tmp_path / "x.edloc")


def test_write_rejects_row_sum_violation(tmp_path, tiny_layout):
    bundle = make_attention(tiny_layout)
    bundle.ca[0] = [0.6, 0.6, 0.0]
    with pytest.raises(ValidationError, match="row 0 sums to 1.2"):
        write_bundle(bundle, tiny_layout, tmp_path / "x.edloc")


def test_write_rejects_shape_mismatch(tmp_path, tiny_layout):
    z = np.zeros((5, 2), dtype=np.float32)
    with pytest.raises(ValidationError, match="shape"):
        write_bundle(LatentRecord(role="source", z=z), tiny_layout, tmp_path / "x.edloc")


def test_read_bad_magic(tmp_path, tiny_layout):
    rec = make_latent(tiny_layout)
    path = write_bundle(rec, tiny_layout, tmp_path / canonical_name(rec))
    data = bytearray(path.read_bytes())
    data[:4] = b"XXXX"
    path.write_bytes(bytes(data))
    with pytest.raises(RecordFormatError, match="unrecognized format"):
        read_bundle(path, tiny_layout)


def test_read_version_mismatch(tmp_path, tiny_layout):
    rec = make_latent(tiny_layout)
    path = write_bundle(rec, tiny_layout, tmp_path / canonical_name(rec))
    data = bytearray(path.read_bytes())
    data[8] = 9
    path.write_bytes(bytes(data))
    with pytest.raises(RecordFormatError, match="unsupported version"):
        read_bundle(path, tiny_layout)


def test_read_truncated_payload(tmp_path, tiny_layout):
    rec = make_latent(tiny_layout)
    path = write_bundle(rec, tiny_layout, tmp_path / canonical_name(rec))
    data = path.read_bytes()
    path.write_bytes(data[:-4])
    with pytest.raises(RecordFormatError, match="truncated payload, expected 32 bytes, got 28"):
        read_bundle(path, tiny_layout)


def test_read_missing_file(tmp_path, tiny_layout):
    with pytest.raises(MissingRecordError):
        read_bundle(tmp_path / "latent_src.edloc", tiny_layout)


def test_read_revalidates_invariants(tmp_path, tiny_layout):
    rec = make_attention(tiny_layout, fill=0.2)
    path = write_bundle(rec, tiny_layout, tmp_path / canonical_name(rec))
    data = bytearray(path.read_bytes())
    # First payload float -> 1.5: outside [0, 1].
    data[HEADER.size:HEADER.size + 4] = np.float32(1.5).tobytes()
    path.write_bytes(bytes(data))
    with pytest.raises(ValidationError):
        read_bundle(path, tiny_layout)


def test_header_fuzz_detected_or_identical(tmp_path, tiny_layout):
    """Any single corrupted header byte is rejected or parses to the same record."""
    rec = make_attention(tiny_layout, layer=1, timestep=0, stream="target", fill=0.2)
    path = write_bundle(rec, tiny_layout, tmp_path / canonical_name(rec))
    original = path.read_bytes()
    for byte_idx in range(HEADER.size):
        for delta in (0x01, 0x10, 0x80, 0xFF):
            data = bytearray(original)
            data[byte_idx] ^= delta
            path.write_bytes(bytes(data))
            try:
                parsed = read_bundle(path, tiny_layout)
            except (RecordFormatError, ValidationError):
                continue
            assert parsed == rec, f"byte {byte_idx} ^ {delta:#x} silently changed the record"


def test_canonical_names_parse_back(tiny_layout):
    records = [
        make_attention(tiny_layout, layer=1, timestep=2, stream="source"),
        make_features(tiny_layout),
        make_latent(tiny_layout, role="initial_noise"),
        make_latent(tiny_layout, role="current", timestep=1),
        make_mask([0, 1, 1, 0], stage="feature", timestep=0, layer=1),
        make_mask([0, 1, 1, 0], stream="source", stage="ground_truth"),
    ]
    for rec in records:
        assert parse_record_name(canonical_name(rec)) is not None
    assert parse_record_name("notes.txt") is None


def test_name_header_cross_check(tmp_path, tiny_layout):
    rec = make_attention(tiny_layout, layer=1, timestep=2, stream="source")
    path = write_bundle(rec, tiny_layout, tmp_path / "attn_L0_T2_src.edloc")
    with pytest.raises(RecordFormatError, match="does not match file name"):
        read_bundle(path, tiny_layout)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_roundtrip_random_latents(seed, tmp_path_factory):
    layout = TokenLayout(n_txt=2, n_img=6, grid_h=2, grid_w=3, d=3,
                         n_layers=1, n_timesteps=1)
    rng = np.random.default_rng(seed)
    rec = LatentRecord(role="source", z=rng.normal(size=(6, 3)).astype(np.float32))
    out = tmp_path_factory.mktemp("rt") / canonical_name(rec)
    write_bundle(rec, layout, out)
    assert read_bundle(out, layout) == rec


# ---------------------------------------------------------------------------
# Directory store


def _tiny_store(tiny_layout, tiny_schedule, tiny_instruction):
    rs = RecordSet(layout=tiny_layout, schedule=tiny_schedule, instruction=tiny_instruction)
    for stream in ("target", "source"):
        for layer in range(tiny_layout.n_layers):
            for t in range(tiny_layout.n_timesteps):
                rs.put(make_attention(tiny_layout, layer, t, stream))
                rs.put(make_features(tiny_layout, layer, t, stream, seed=layer + t))
    rs.put(make_latent(tiny_layout, role="initial_noise"))
    rs.put(make_latent(tiny_layout, role="source", seed=1))
    for t in range(tiny_layout.n_timesteps):
        rs.put(make_latent(tiny_layout, role="current", timestep=t, seed=t + 2))
    return rs


def test_store_roundtrip(tmp_path, tiny_layout, tiny_schedule, tiny_instruction):
    rs = _tiny_store(tiny_layout, tiny_schedule, tiny_instruction)
    write_store(rs, tmp_path / "store")
    back = read_store(tmp_path / "store")
    assert back.layout == rs.layout
    assert back.attention == rs.attention
    assert back.features == rs.features
    assert back.latents == rs.latents


def test_validate_store_clean_and_corrupt(tmp_path, tiny_layout, tiny_schedule, tiny_instruction):
    rs = _tiny_store(tiny_layout, tiny_schedule, tiny_instruction)
    store = write_store(rs, tmp_path / "store")
    report = validate_store(store)
    assert all(err is None for _, err in report)
    victim = store / "latent_cur_T1.edloc"
    data = bytearray(victim.read_bytes())
    data[14] ^= 0xFF  # timestep field no longer matches the file name
    victim.write_bytes(bytes(data))
    report = dict(validate_store(store))
    assert report["latent_cur_T1.edloc"] is not None


def test_missing_record_named(tiny_layout, tiny_schedule, tiny_instruction):
    rs = RecordSet(layout=tiny_layout, schedule=tiny_schedule, instruction=tiny_instruction)
    with pytest.raises(MissingRecordError, match="attn_L0_T1_tgt.edloc"):
        rs.need_attention(0, 1, "target")
