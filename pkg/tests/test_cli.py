import json
import os

import numpy as np
import pytest
from click.testing import CliRunner

from floorscene.cli import main
from floorscene.fusion import load_mesh
from floorscene.pipeline import PipelineConfig, PipelineRun, evaluate_artifacts


def run_cli(*args):
    return CliRunner().invoke(main, list(args))


def pipeline_args(fixture_path, out_dir, **extra):
    args = ["pipeline", "--floorplan", str(fixture_path),
            "--output-dir", str(out_dir), "--seed", "7",
            "--resolution", "48", "--voxel-size", "0.08"]
    for k, v in extra.items():
        args += [f"--{k.replace('_', '-')}", str(v)]
    return args


def test_pipeline_produces_artifact_tree(tmp_path, fixture_path):
    out = tmp_path / "run"
    result = run_cli(*pipeline_args(fixture_path, out))
    assert result.exit_code == 0, result.output
    for name in ("poses.json", "batches.json", "manifest.json", "scene.ply",
                 "volume.npz", "report.json", "report.csv"):
        assert (out / name).exists(), name
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "complete"
    assert manifest["views"]
    mesh = load_mesh(out / "scene.ply")
    assert len(mesh.faces) > 0
    assert "mAP@25" in result.output


def test_pipeline_oracle_report_quality(tmp_path, fixture_path):
    out = tmp_path / "run"
    cfg = tmp_path / "cfg.toml"
    # a denser pose grid sees the bed from several sides, not just one face
    cfg.write_text(f'floorplan = "{fixture_path}"\noutput_dir = "{out}"\n'
                   'seed = 7\nresolution = 48\nvoxel_size = 0.08\n'
                   'spacing = 0.8\n')
    result = run_cli("pipeline", "--config", str(cfg))
    assert result.exit_code == 0, result.output
    report = json.loads((out / "report.json").read_text())
    for kind, agg in report["aggregate"].items():
        assert agg["absrel"] < 0.01, (kind, agg)
    assert report["map_at_25"] == 1.0


def test_pipeline_rerun_is_byte_identical(tmp_path, fixture_path):
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert run_cli(*pipeline_args(fixture_path, out_a)).exit_code == 0
    assert run_cli(*pipeline_args(fixture_path, out_b)).exit_code == 0
    for name in ("poses.json", "batches.json"):
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes()


def test_pipeline_resume_skips_completed_batches(tmp_path, fixture_path):
    out = tmp_path / "run"
    assert run_cli(*pipeline_args(fixture_path, out)).exit_code == 0
    first = json.loads((out / "manifest.json").read_text())
    # rerunning the same config resumes past all batches and re-finishes
    assert run_cli(*pipeline_args(fixture_path, out)).exit_code == 0
    second = json.loads((out / "manifest.json").read_text())
    assert second["completed_batches"] == first["completed_batches"]
    assert second["status"] == "complete"


def test_pipeline_missing_floorplan_usage_error(tmp_path):
    result = run_cli("pipeline", "--floorplan", str(tmp_path / "nope.json"),
                     "--output-dir", str(tmp_path / "o"), "--seed", "1")
    assert result.exit_code == 2
    assert "not found" in result.output


def test_pipeline_requires_seed(tmp_path, fixture_path):
    result = run_cli("pipeline", "--floorplan", str(fixture_path),
                     "--output-dir", str(tmp_path / "o"))
    assert result.exit_code == 2


def test_pipeline_rejects_unknown_config_key(tmp_path, fixture_path):
    cfg = tmp_path / "cfg.toml"
    cfg.write_text(f'floorplan = "{fixture_path}"\n'
                   f'output_dir = "{tmp_path / "o"}"\n'
                   'seed = 1\nnot_a_knob = 3\n')
    result = run_cli("pipeline", "--config", str(cfg))
    assert result.exit_code == 2
    assert "not_a_knob" in result.output


def test_pipeline_config_file_with_flag_override(tmp_path, fixture_path):
    cfg = tmp_path / "cfg.toml"
    cfg.write_text(f'floorplan = "{fixture_path}"\n'
                   f'output_dir = "{tmp_path / "from_file"}"\n'
                   'seed = 7\nresolution = 48\nvoxel_size = 0.08\n')
    out = tmp_path / "from_flag"
    result = run_cli("pipeline", "--config", str(cfg),
                     "--output-dir", str(out))
    assert result.exit_code == 0, result.output
    assert (out / "scene.ply").exists()
    assert not (tmp_path / "from_file").exists()


def test_eval_recomputes_report(tmp_path, fixture_path):
    out = tmp_path / "run"
    run_cli(*pipeline_args(fixture_path, out))
    original = json.loads((out / "report.json").read_text())
    (out / "report.json").unlink()
    result = run_cli("eval", str(out), str(fixture_path))
    assert result.exit_code == 0, result.output
    recomputed = json.loads((out / "report.json").read_text())
    assert recomputed["aggregate"] == original["aggregate"]
    assert recomputed["map_at_25"] == original["map_at_25"]


def test_eval_missing_artifacts(tmp_path, fixture_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    result = run_cli("eval", str(empty), str(fixture_path))
    assert result.exit_code == 1
    assert "missing" in result.output


def test_render_floorplan_svg(tmp_path, fixture_path):
    out = tmp_path / "plan.svg"
    result = run_cli("render-floorplan", str(fixture_path), str(out))
    assert result.exit_code == 0
    svg = out.read_text()
    assert svg.startswith("<svg")
    # one primitive per component: 4 wall lines + 1 furniture rect
    assert svg.count("<line") == 4
    assert svg.count("<rect") >= 1
    # deterministic output
    run_cli("render-floorplan", str(fixture_path), str(tmp_path / "b.svg"))
    assert (tmp_path / "b.svg").read_text() == svg


def test_fuse_standalone(tmp_path, fixture_path):
    out = tmp_path / "run"
    run_cli(*pipeline_args(fixture_path, out))
    ply = tmp_path / "fused.ply"
    result = run_cli("fuse", str(out), str(ply), "--floorplan",
                     str(fixture_path), "--voxel-size", "0.08")
    assert result.exit_code == 0, result.output
    assert len(load_mesh(ply).faces) > 0


def test_gen_batch(tmp_path, fixture_path):
    out = tmp_path / "gen"
    result = run_cli("gen-batch", str(fixture_path), str(out),
                     "--pose", "2,2,1.5,0", "--pose", "2,2,1.5,90",
                     "--seed", "3", "--resolution", "32")
    assert result.exit_code == 0, result.output
    assert sorted(p.name for p in out.iterdir() if p.suffix == ".png") == [
        "gen_0000_color.png", "gen_0000_depth.png",
        "gen_0001_color.png", "gen_0001_depth.png"]
    bad = run_cli("gen-batch", str(fixture_path), str(out),
                  "--pose", "2,2", "--seed", "3")
    assert bad.exit_code == 2


def test_refinement_increases_observed_voxels(tmp_path, fixture_path):
    base_out = tmp_path / "base"
    ref_out = tmp_path / "ref"
    cfg = dict(floorplan=str(fixture_path), seed=7, resolution=48,
               voxel_size=0.08)
    PipelineRun(PipelineConfig(output_dir=str(base_out), **cfg)).run()
    PipelineRun(PipelineConfig(output_dir=str(ref_out), refinement=True,
                               **cfg)).run()
    base = json.loads((base_out / "manifest.json").read_text())
    ref = json.loads((ref_out / "manifest.json").read_text())
    assert ref["observed_voxels"] > ref["observed_voxels_before_refinement"]
    assert ref["observed_voxels_before_refinement"] == base["observed_voxels"]
    assert (ref_out / "refined.ply").exists()


def test_pipeline_failure_preserves_manifest(tmp_path, fixture_path):
    out = tmp_path / "run"
    result = run_cli("pipeline", "--floorplan", str(fixture_path),
                     "--output-dir", str(out), "--seed", "7",
                     "--resolution", "48",
                     "--backend", "command:false")
    assert result.exit_code != 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"].startswith("failed at batch")
