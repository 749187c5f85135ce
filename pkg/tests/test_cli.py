import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from edloc.cli import main
from edloc.records import read_bundle, read_manifest


SCENE_FLAGS = ["--grid-h", "8", "--grid-w", "8", "--d", "8", "--n-txt", "6",
               "--n-layers", "2", "--n-timesteps", "4"]


def run_cli(*argv):
    return main(list(argv))


@pytest.fixture()
def store(tmp_path):
    out = tmp_path / "scene"
    assert run_cli("synth", "--out", str(out), "--task", "replacement",
                   "--seed", "3", *SCENE_FLAGS) == 0
    return out


def test_synth_writes_valid_store(store, capsys):
    assert run_cli("validate", "--record-dir", str(store)) == 0
    out = capsys.readouterr().out
    assert "manifest.txt" in out
    assert "FAIL" not in out


def test_synth_noiseless_localize_reports_perfect_iou(tmp_path, capsys):
    out = tmp_path / "scene"
    assert run_cli("synth", "--out", str(out), "--task", "removal", "--seed", "1",
                   "--noiseless", *SCENE_FLAGS) == 0
    assert run_cli("localize", "--record-dir", str(out),
                   "--out", str(tmp_path / "loc"), "--dilation-radius", "0") == 0
    stdout = capsys.readouterr().out
    assert "IoU 1.000" in stdout
    assert (tmp_path / "loc" / "provenance.txt").exists()
    assert (tmp_path / "loc" / "config_echo.txt").exists()
    assert list((tmp_path / "loc").glob("mask_post_*_comb.edloc"))
    assert list((tmp_path / "loc").glob("*.pgm"))


def test_localize_then_blend(store, tmp_path):
    loc = store / "localize"
    assert run_cli("localize", "--record-dir", str(store), "--out", str(loc)) == 0
    blend_dir = store / "blend"
    assert run_cli("blend", "--record-dir", str(store), "--masks-dir", str(loc),
                   "--out", str(blend_dir), "--apply-at", "1,3") == 0
    layout, schedule, _ = read_manifest(store / "manifest.txt")
    for t in range(4):
        rec = read_bundle(blend_dir / f"blended_T{t}.edloc", layout)
        cur = read_bundle(store / f"latent_cur_T{t}.edloc", layout)
        if t in (1, 3):
            mask = read_bundle(loc / f"mask_post_L1_T{t}_comb.edloc", layout)
            keep = mask.bits.astype(bool)
            assert np.array_equal(rec.z[keep], cur.z[keep])
        else:
            assert rec.z.tobytes() == cur.z.tobytes()
    assert "unmodified" in (blend_dir / "provenance.txt").read_text()


def test_blend_missing_mask_exits_3(store, capsys):
    # no localize output: masks for applied steps are absent
    assert run_cli("blend", "--record-dir", str(store), "--apply-at", "1") == 3
    assert "no mask available" in capsys.readouterr().err


def test_eval_timesteps_csv(store, tmp_path):
    csv_path = tmp_path / "rows.csv"
    assert run_cli("eval", "--record-dir", str(store), "--out-csv", str(csv_path)) == 0
    lines = csv_path.read_text().splitlines()
    assert lines[0].startswith("sample_id,task,stream,stage")
    assert len(lines) > 1


def test_eval_tau_sweep_with_plotdata(store, tmp_path):
    csv_path = tmp_path / "rows.csv"
    assert run_cli("eval", "--record-dir", str(store), "--out-csv", str(csv_path),
                   "--sweep", "tau", "--plotdata", str(tmp_path / "plots")) == 0
    assert list((tmp_path / "plots").glob("tau_*.tsv"))


def test_eval_suite_mode(tmp_path):
    csv_path = tmp_path / "rows.csv"
    assert run_cli("eval", "--suite", "2", "--seed0", "5",
                   "--out-csv", str(csv_path)) == 0
    text = csv_path.read_text()
    assert "scene0000" in text and "addition" in text and "replacement" in text


def test_eval_suite_stage_ordering(tmp_path):
    """Suite CSV means over semantics-carrying streams keep the stage order."""
    from edloc.evaluate import mean_iou, parse_csv
    from edloc.synth import SIGNAL_STREAMS

    csv_path = tmp_path / "rows.csv"
    assert run_cli("eval", "--suite", "8", "--out-csv", str(csv_path)) == 0
    rows = [r for r in parse_csv(csv_path) if r.stream in SIGNAL_STREAMS[r.task]]
    feat = mean_iou(rows, stage="feature")
    prop = mean_iou(rows, stage="attention_propagated")
    raw = mean_iou(rows, stage="attention_raw")
    assert feat >= prop >= raw


def test_eval_suite_layer_sweep_rejected(tmp_path):
    assert run_cli("eval", "--suite", "2", "--sweep", "layers",
                   "--out-csv", str(tmp_path / "rows.csv")) == 4


def test_validate_corrupted_record_exits_3(store, capsys):
    victim = store / "attn_L0_T0_tgt.edloc"
    data = bytearray(victim.read_bytes())
    data[9] ^= 0xFF  # kind byte no longer matches the file name
    victim.write_bytes(bytes(data))
    assert run_cli("validate", "--record-dir", str(store)) == 3
    out = capsys.readouterr().out
    assert "FAIL attn_L0_T0_tgt.edloc" in out


def test_missing_store_exits_2(tmp_path):
    assert run_cli("localize", "--record-dir", str(tmp_path / "absent")) == 2


def test_bad_flag_exits_4():
    assert run_cli("synth", "--task", "not-a-task", "--out", "x") == 4


def test_bad_config_file_exits_4(tmp_path):
    bad = tmp_path / "conf.txt"
    bad.write_text("tau 0.5\n")  # missing '='
    assert run_cli("eval", "--config", str(bad), "--out-csv", str(tmp_path / "o.csv")) == 4


def test_config_file_supplies_flags(tmp_path, capsys):
    out = tmp_path / "scene"
    conf = tmp_path / "conf.txt"
    conf.write_text(
        "out = {}\ntask = removal\nseed = 2\ngrid_h = 8\ngrid_w = 8\nd = 8\n"
        "n_txt = 6\nn_layers = 2\nn_timesteps = 2\n".format(out))
    assert run_cli("synth", "--config", str(conf)) == 0
    _, _, instruction = read_manifest(out / "manifest.txt")
    assert instruction.task == "removal"


def test_cli_flag_overrides_config(tmp_path):
    out = tmp_path / "scene"
    conf = tmp_path / "conf.txt"
    conf.write_text("task = removal\n")
    assert run_cli("synth", "--config", str(conf), "--task", "color",
                   "--out", str(out), *SCENE_FLAGS, "--seed", "1") == 0
    _, _, instruction = read_manifest(out / "manifest.txt")
    assert instruction.task == "color"


def test_env_var_supplies_record_dir(store, monkeypatch, tmp_path):
    monkeypatch.setenv("EDLOC_RECORD_DIR", str(store))
    assert run_cli("validate") == 0


def test_no_record_dir_exits_4(monkeypatch):
    monkeypatch.delenv("EDLOC_RECORD_DIR", raising=False)
    assert run_cli("validate") == 4


def test_determinism_across_working_directories(tmp_path):
    """Same seeds and configs: byte-identical output trees."""
    def run_tree(root: Path):
        root.mkdir()
        env = dict(os.environ)
        for argv in (
            ["synth", "--out", "scene", "--task", "addition", "--seed", "9", *SCENE_FLAGS],
            ["localize", "--record-dir", "scene", "--out", "loc"],
            ["eval", "--record-dir", "scene", "--out-csv", "eval/rows.csv",
             "--plotdata", "plots"],
        ):
            subprocess.run([sys.executable, "-m", "edloc", *argv], cwd=root,
                           env=env, check=True, capture_output=True)

    run_tree(tmp_path / "r1")
    run_tree(tmp_path / "r2")
    files1 = sorted(p.relative_to(tmp_path / "r1") for p in (tmp_path / "r1").rglob("*") if p.is_file())
    files2 = sorted(p.relative_to(tmp_path / "r2") for p in (tmp_path / "r2").rglob("*") if p.is_file())
    assert files1 == files2
    for rel in files1:
        assert (tmp_path / "r1" / rel).read_bytes() == (tmp_path / "r2" / rel).read_bytes(), rel
