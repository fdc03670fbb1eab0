"""Config document and end-to-end CLI pipeline."""

import json
import subprocess
import sys

import numpy as np
import pytest

from meshdistill import meshing, ssan
from meshdistill.cli import main
from meshdistill.config import (
    PipelineConfig,
    apply_overrides,
    format_config,
    parse_config,
    save_config,
)

TINY = """
version = 1
seed = 3
n_views = 6
image_size = 24
gt_samples = 96
nerf_steps = 25
nerf_batch_rays = 64
nerf_samples = 32
nerf_table_size = 4096
nerf_n_max = 64
nerf_hidden = 16
ssan_table_size = 4096
ssan_n_max = 64
ssan_hidden = 16
distill_steps = 40
distill_batch_rays = 64
distill_samples = 64
carve_res = 16
carve_points = 64
grid_res = 20
mask_res = 32
eval_points = 2000
"""


# ---------------------------------------------------------------------------
# config document

def test_config_round_trips_through_text():
    cfg = PipelineConfig(seed=7, percentile_lo=5.0, percentile_hi=95.0,
                         share_encoder=True, atlas_mode="vertex")
    assert parse_config(format_config(cfg)) == cfg


def test_config_rejects_unknown_key():
    with pytest.raises(ValueError, match="unknown config key"):
        parse_config("version = 1\nwarp_drive = 9\n")


def test_config_rejects_wrong_version():
    with pytest.raises(ValueError, match="version"):
        parse_config("version = 99\n")


def test_config_rejects_duplicate_and_malformed_lines():
    with pytest.raises(ValueError, match="duplicate"):
        parse_config("seed = 1\nseed = 2\n")
    with pytest.raises(ValueError, match="key = value"):
        parse_config("just some words\n")


def test_config_parses_comments_blanks_and_bools():
    cfg = parse_config("# hello\n\nshare_encoder = yes  # inline\nseed=4\n")
    assert cfg.share_encoder is True
    assert cfg.seed == 4
    assert parse_config("use_projection = off\n").use_projection is False
    with pytest.raises(ValueError, match="boolean"):
        parse_config("use_projection = maybe\n")


def test_config_rejects_bad_atlas_mode():
    with pytest.raises(ValueError, match="atlas_mode"):
        parse_config("atlas_mode = fancy\n")


def test_overrides_apply_and_reject_unknown():
    cfg = apply_overrides(PipelineConfig(), ["seed=9", "distill_lr=0.01"])
    assert cfg.seed == 9 and cfg.distill_lr == 0.01
    with pytest.raises(ValueError, match="unknown config key"):
        apply_overrides(PipelineConfig(), ["nope=1"])
    with pytest.raises(ValueError, match="key=value"):
        apply_overrides(PipelineConfig(), ["seed"])


def test_config_views_map_onto_module_configs():
    cfg = parse_config(TINY)
    d = cfg.distill_config()
    assert d.steps == 40 and d.seed == 3
    assert d.ssan.table_size == 4096 and d.ssan.hidden == 16
    assert d.weights.w_i == 1.0
    n = cfg.nerf_train_config()
    assert n.steps == 25 and n.batch_rays == 64


# ---------------------------------------------------------------------------
# pipeline chain (shared artifacts, tiny sizes)

@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """make-scene -> distill --analytic -> extract -> render -> eval."""
    root = tmp_path_factory.mktemp("pipeline")
    cfg_path = root / "tiny.cfg"
    cfg_path.write_text(TINY)
    base = ["--workdir", str(root), "--config", str(cfg_path)]
    assert main(["make-scene", "data", "--shape", "sphere"] + base) == 0
    assert main(["distill", "data", "ssan.ckpt", "--analytic"] + base) == 0
    assert main(["extract", "ssan.ckpt", "bundle"] + base) == 0
    assert main(["render", "bundle", "views", "--cameras",
                 "data/cameras.json"] + base) == 0
    assert main(["eval", "bundle", "data", "report.json"] + base) == 0
    return root, base


def test_pipeline_emits_all_artifacts(workspace):
    root, _ = workspace
    assert (root / "data" / "cameras.json").exists()
    assert (root / "data" / "scene.json").exists()
    assert (root / "data" / "images" / "0005.png").exists()
    assert (root / "ssan.ckpt").exists()
    assert (root / "ssan.ckpt.csv").read_text().startswith("step,")
    assert (root / "bundle" / "mesh.obj").exists()
    assert (root / "bundle" / "mesh.feat").exists()
    assert (root / "bundle" / "appearance.ckpt").exists()
    for i in range(6):
        assert (root / "views" / f"{i:04d}.png").exists()
    timing = json.loads((root / "views" / "timing.json").read_text())
    assert timing["fps"] > 0
    assert len(timing["seconds_per_view"]) == 6


def test_eval_report_shape(workspace):
    root, _ = workspace
    rep = json.loads((root / "report.json").read_text())
    assert set(rep) == {"chamfer", "normal_consistency", "psnr_per_view",
                        "means"}
    assert rep["chamfer"] > 0
    assert -1.0 <= rep["normal_consistency"] <= 1.0
    assert len(rep["psnr_per_view"]) == 6


def test_render_single_view(workspace):
    root, base = workspace
    assert main(["render", "bundle", "one_view", "--cameras",
                 "data/cameras.json", "--view", "2"] + base) == 0
    assert (root / "one_view" / "0002.png").exists()
    assert not (root / "one_view" / "0000.png").exists()


def test_extract_is_idempotent(workspace):
    root, base = workspace
    before = (root / "bundle" / "mesh.obj").read_bytes()
    assert main(["extract", "ssan.ckpt", "bundle"] + base) == 0
    assert (root / "bundle" / "mesh.obj").read_bytes() == before


def test_rerun_reproduces_metrics_bit_identically(workspace):
    root, base = workspace
    first = (root / "report.json").read_bytes()
    assert main(["distill", "data", "ssan_b.ckpt", "--analytic"] + base) == 0
    assert main(["extract", "ssan_b.ckpt", "bundle_b"] + base) == 0
    assert main(["eval", "bundle_b", "data", "report_b.json"] + base) == 0
    assert (root / "report_b.json").read_bytes() == first


def test_distill_from_trained_field(workspace):
    root, base = workspace
    assert main(["train-nerf", "data", "nerf.ckpt"] + base) == 0
    assert (root / "nerf.ckpt.csv").exists()
    code = main(["distill", "data", "ssan_n.ckpt", "--nerf", "nerf.ckpt",
                 "--set", "distill_steps=5"] + base)
    assert code == 0
    assert (root / "ssan_n.ckpt").exists()


# ---------------------------------------------------------------------------
# failure modes and exit codes

def test_distill_requires_exactly_one_source(workspace, capsys):
    root, base = workspace
    assert main(["distill", "data", "x.ckpt"] + base) == 1
    assert "field source" in capsys.readouterr().err
    assert main(["distill", "data", "x.ckpt", "--nerf", "nerf.ckpt",
                 "--analytic"] + base) == 1
    assert not (root / "x.ckpt").exists()


def test_unknown_subcommand_is_usage_error(capsys):
    assert main(["transmogrify"]) == 1
    assert main([]) == 1


def test_missing_inputs_are_validation_errors(tmp_path, capsys):
    base = ["--workdir", str(tmp_path)]
    assert main(["eval", "nowhere", "data", "r.json"] + base) == 2
    assert "invalid input" in capsys.readouterr().err
    assert main(["extract", "missing.ckpt", "out"] + base) == 2
    assert main(["render", "nowhere", "out", "--cameras", "c.json"] + base) == 2


def test_bad_config_is_validation_error(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("version = 1\nbogus_key = 3\n")
    assert main(["make-scene", "d", "--workdir", str(tmp_path),
                 "--config", str(bad)]) == 2
    assert "unknown config key" in capsys.readouterr().err


def test_bad_shape_param_is_validation_error(tmp_path, capsys):
    base = ["--workdir", str(tmp_path)]
    assert main(["make-scene", "d", "--shape", "sphere",
                 "--param", "radius=0.95"] + base) == 2
    assert "margin" in capsys.readouterr().err


def test_render_view_out_of_range(workspace, capsys):
    _, base = workspace
    assert main(["render", "bundle", "out_bad", "--cameras",
                 "data/cameras.json", "--view", "99"] + base) == 2
    assert "out of range" in capsys.readouterr().err


def test_eval_mesh_outside_box_warns_and_proceeds(workspace, capsys):
    root, base = workspace
    fmesh, _ = meshing.load_bundle(root / "bundle")
    model = ssan.load_model(root / "ssan.ckpt")
    scale = 1.05 / np.abs(fmesh.mesh.verts).max()  # nudge bounds past the box
    big = meshing.TriMesh(fmesh.mesh.verts * scale, fmesh.mesh.faces,
                          normals=fmesh.mesh.normals)
    meshing.save_bundle(root / "bundle_big",
                        meshing.bake_features(big, model, mode="vertex"),
                        model)
    assert main(["eval", "bundle_big", "data", "report_big.json"] + base) == 0
    err = capsys.readouterr().err
    assert "intersection" in err
    assert (root / "report_big.json").exists()


def test_console_help_exits_zero():
    out = subprocess.run([sys.executable, "-m", "meshdistill.cli", "--help"],
                         capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ["make-scene", "train-nerf", "distill", "extract", "render",
                "eval"]:
        assert cmd in out.stdout


def test_cli_determinism_markers(workspace):
    # configs written by save_config parse back to the same object
    root, _ = workspace
    cfg = parse_config(TINY)
    save_config(root / "echo.cfg", cfg)
    assert parse_config((root / "echo.cfg").read_text()) == cfg
