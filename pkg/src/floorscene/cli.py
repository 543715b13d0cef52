"""Command-line interface.

Exit codes: 0 ok, 1 runtime failure, 2 usage error. Config is a TOML file
whose keys mirror PipelineConfig; command-line flags override file values.
"""

from __future__ import annotations

import json
import sys
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import click

from . import evaluation, fusion, pipeline, pose_graph
from .camera import CameraIntrinsics
from .floorplan import FloorplanError, load_floorplan
from .generator import GenerationRequest
from .render2d import render_floorplan_svg


@click.group()
def main():
    """Floorplan-to-3D-scene pipeline."""


def _load_config(config_path, overrides):
    data = {}
    if config_path:
        with open(config_path, "rb") as f:
            data = tomllib.load(f)
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return pipeline.PipelineConfig.from_dict(data)
    except (TypeError, ValueError) as e:
        raise click.UsageError(str(e))


@main.command("pipeline")
@click.option("--config", "config_path", type=click.Path(exists=True),
              help="TOML config file.")
@click.option("--floorplan", type=str, help="fp/1 floorplan file.")
@click.option("--output-dir", type=str)
@click.option("--seed", type=int)
@click.option("--backend", type=str)
@click.option("--resolution", type=int)
@click.option("--voxel-size", type=float)
@click.option("--refinement/--no-refinement", default=None)
@click.option("--delta-r", type=int)
@click.option("--delta-n", type=int)
def cmd_pipeline(config_path, **overrides):
    """Run the full pipeline and write the artifact tree."""
    cfg = _load_config(config_path, overrides)
    if not cfg.floorplan:
        raise click.UsageError("a floorplan path is required "
                               "(--floorplan or config file)")
    import os
    if not os.path.exists(cfg.floorplan):
        raise click.UsageError(f"floorplan file not found: {cfg.floorplan}")
    try:
        report = pipeline.PipelineRun(cfg).run()
    except (FloorplanError, FileNotFoundError, pose_graph.PoseGraphError) as e:
        raise click.ClickException(str(e))
    agg = report.get("aggregate", {})
    for kind, entry in agg.items():
        click.echo(f"{kind}: psnr={entry['psnr']} absrel={entry['absrel']} "
                   f"overlap={entry['overlap']:.3f}")
    click.echo(f"mAP@25: {report['map_at_25']}")


@main.command("eval")
@click.argument("artifact_dir", type=click.Path(exists=True, file_okay=False))
@click.argument("floorplan", type=click.Path(exists=True, dir_okay=False))
@click.option("--tolerance", type=float, default=None,
              help="Depth correspondence tolerance in meters.")
@click.option("--delta-exponent", "exps", type=float, multiple=True,
              default=(0.5,), show_default=True)
def cmd_eval(artifact_dir, floorplan, tolerance, exps):
    """Recompute consistency and layout metrics for an artifact tree."""
    try:
        report = pipeline.evaluate_artifacts(artifact_dir, floorplan,
                                             tolerance=tolerance,
                                             delta_exponents=tuple(exps))
    except (FileNotFoundError, FloorplanError, KeyError) as e:
        raise click.ClickException(f"artifact layout mismatch: {e}")
    click.echo(json.dumps(report["aggregate"], indent=2))
    click.echo(f"mAP@25: {report['map_at_25']}")


@main.command("render-floorplan")
@click.argument("floorplan", type=click.Path(exists=True, dir_okay=False))
@click.argument("out", type=click.Path(dir_okay=False))
def cmd_render_floorplan(floorplan, out):
    """Write a top-down SVG diagnostic image of a floorplan."""
    try:
        plan = load_floorplan(floorplan)
    except FloorplanError as e:
        raise click.ClickException(str(e))
    with open(out, "w") as f:
        f.write(render_floorplan_svg(plan))
    click.echo(f"wrote {out}")


@main.command("fuse")
@click.argument("artifact_dir", type=click.Path(exists=True, file_okay=False))
@click.argument("out_ply", type=click.Path(dir_okay=False))
@click.option("--voxel-size", type=float, default=fusion.DEFAULT_VOXEL_SIZE,
              show_default=True)
@click.option("--wall-height", type=float, default=2.8, show_default=True)
@click.option("--floorplan", type=click.Path(exists=True), required=True)
def cmd_fuse(artifact_dir, out_ply, voxel_size, wall_height, floorplan):
    """Standalone TSDF fusion of an artifact tree's views into a PLY mesh."""
    import os

    plan = load_floorplan(floorplan)
    with open(os.path.join(artifact_dir, "manifest.json")) as f:
        manifest = json.load(f)
    with open(os.path.join(artifact_dir, "poses.json")) as f:
        poses = pose_graph.poses_from_json(f.read())
    vol = fusion.TSDFVolume.from_floorplan(plan, wall_height, voxel_size)
    intr = None
    for vid_s, paths in sorted(manifest["views"].items(), key=lambda kv: int(kv[0])):
        from .generator import load_color_png
        color = load_color_png(paths["color"])
        if intr is None:
            intr = CameraIntrinsics.from_fov(color.shape[1], color.shape[0])
        view = pipeline._load_view(paths, poses[int(vid_s)], intr)
        vol.integrate(view)
    mesh = fusion.extract_mesh(vol)
    fusion.save_mesh(mesh, out_ply)
    click.echo(f"wrote {out_ply}: {len(mesh.vertices)} vertices, "
               f"{len(mesh.faces)} faces")


@main.command("gen-batch")
@click.argument("floorplan", type=click.Path(exists=True, dir_okay=False))
@click.argument("out_dir", type=click.Path(file_okay=False))
@click.option("--pose", "poses", type=str, multiple=True, required=True,
              help="Novel pose as 'x,y,z,yaw_deg'; repeatable.")
@click.option("--resolution", type=int, default=96, show_default=True)
@click.option("--backend", type=str, default="oracle", show_default=True)
@click.option("--seed", type=int, required=True)
def cmd_gen_batch(floorplan, out_dir, poses, resolution, backend, seed):
    """Generate a single batch of views for debugging."""
    import os

    from .camera import pose_from_yaw
    from .generator import save_color_png, save_depth_png

    plan = load_floorplan(floorplan)
    novel = []
    for spec in poses:
        try:
            x, y, z, yaw = (float(v) for v in spec.split(","))
        except ValueError:
            raise click.UsageError(f"bad pose spec {spec!r}, want x,y,z,yaw_deg")
        import numpy as np
        novel.append(pose_from_yaw(x, y, z, np.radians(yaw)))
    intr = CameraIntrinsics.from_fov(resolution, resolution)
    cfg = pipeline.PipelineConfig(floorplan=floorplan, output_dir=out_dir,
                                  seed=seed, backend=backend,
                                  resolution=resolution)
    bk = pipeline.make_backend(cfg, os.path.join(out_dir, "scratch"))
    req = GenerationRequest(floorplan=plan, reference_views=(),
                            novel_poses=tuple(novel), intrinsics=intr, seed=seed)
    os.makedirs(out_dir, exist_ok=True)
    for i, view in enumerate(bk.generate(req)):
        save_color_png(view.color, os.path.join(out_dir, f"gen_{i:04d}_color.png"))
        save_depth_png(view.depth, os.path.join(out_dir, f"gen_{i:04d}_depth.png"))
    click.echo(f"wrote {len(novel)} views to {out_dir}")


if __name__ == "__main__":
    sys.exit(main())
