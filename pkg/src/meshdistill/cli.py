"""Command-line pipeline: scene -> radiance field -> SSAN -> mesh -> report.

Subcommands compose the library end to end with a single plain-text config
as the source of truth; individual keys can be overridden on the command
line with ``--set key=value``.  Every output is written atomically.  Exit
codes: 0 success, 1 usage, 2 input validation, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import meshing, metrics, nerf, raster, rendering, scenes, ssan
from .cameras import load_cameras
from .config import PipelineConfig, apply_overrides, load_config
from .fields import RadianceField
from .ioutil import atomic_write_text, write_png

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems instead of calling sys.exit."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _resolve(args, path):
    return path if os.path.isabs(path) else os.path.join(args.workdir, path)


def _effective_config(args) -> PipelineConfig:
    cfg = load_config(_resolve(args, args.config)) if args.config \
        else PipelineConfig()
    return apply_overrides(cfg, args.set or [])


def _flat_rays(cams, images):
    """All training rays and their pixel colors, flattened across views."""
    origins, dirs, colors = [], [], []
    for cam, img in zip(cams, images):
        o, d = cam.all_rays()
        origins.append(o)
        dirs.append(d)
        colors.append(img.reshape(-1, 3))
    return (np.concatenate(origins), np.concatenate(dirs),
            np.concatenate(colors))


def _scene_spec(meta, what) -> scenes.SceneSpec:
    if "spec" not in meta:
        raise ValueError(f"{what} carries no scene description")
    return scenes.SceneSpec.from_dict(meta["spec"])


# ---------------------------------------------------------------------------
# subcommands

def cmd_make_scene(args, cfg: PipelineConfig) -> int:
    params = {}
    for item in args.param or []:
        if "=" not in item:
            raise UsageError(f"--param {item!r}: expected key=value")
        key, _, raw = item.partition("=")
        try:
            params[key.strip()] = json.loads(raw)
        except json.JSONDecodeError:
            raise ValueError(f"--param {key}: {raw!r} is not valid JSON")
    albedo = {"type": "constant", "rgb": [0.8, 0.3, 0.3]}
    if args.albedo == "gradient":
        albedo = {"type": "gradient", "axis": 2,
                  "rgb0": [0.9, 0.4, 0.2], "rgb1": [0.2, 0.4, 0.9]}
    spec = scenes.SceneSpec(kind=args.shape, params=params, albedo=albedo)
    out = _resolve(args, args.out)
    scenes.make_dataset(out, spec, n_views=cfg.n_views,
                        width=cfg.image_size, height=cfg.image_size,
                        rig_radius=cfg.rig_radius, fov_deg=cfg.fov_deg,
                        n_samples=cfg.gt_samples, seed=cfg.seed)
    print(f"wrote {cfg.n_views}-view {args.shape} dataset to {out}")
    return EXIT_OK


def cmd_train_nerf(args, cfg: PipelineConfig) -> int:
    dataset = _resolve(args, args.dataset)
    out = _resolve(args, args.out)
    cams, images, _ = scenes.load_dataset(dataset)
    origins, dirs, colors = _flat_rays(cams, images)
    field = RadianceField(np.random.default_rng(cfg.seed),
                          **cfg.field_kwargs())
    log_path = _resolve(args, args.log) if args.log else out + ".csv"
    log = nerf.train_nerf(field, origins, dirs, colors,
                          cfg.nerf_train_config(), log_path=log_path)
    nerf.save_field(out, field)
    last = log[-1]["loss"] if log else float("nan")
    print(f"trained radiance field ({cfg.nerf_steps} steps, "
          f"final loss {last:.6f}) -> {out}")
    return EXIT_OK


def cmd_distill(args, cfg: PipelineConfig) -> int:
    if (args.nerf is None) == (not args.analytic):
        raise UsageError(
            "distill needs exactly one field source: --nerf CKPT or "
            "--analytic")
    dataset = _resolve(args, args.dataset)
    out = _resolve(args, args.out)
    cams, images, meta = scenes.load_dataset(dataset)
    origins, dirs, colors = _flat_rays(cams, images)
    if args.analytic:
        sigma_fn = _scene_spec(meta, "dataset").to_field().sigma_np
    else:
        sigma_fn = nerf.load_field(_resolve(args, args.nerf)).sigma_np
    model = ssan.SsanModel(np.random.default_rng(cfg.seed), cfg.ssan_config())
    log_path = _resolve(args, args.log) if args.log else out + ".csv"
    log = ssan.distill(model, sigma_fn, origins, dirs, colors,
                       cfg.distill_config(), log_path=log_path)
    ssan.save_model(out, model)
    last = log[-1]["total"] if log else float("nan")
    print(f"distilled surface model ({len(log)}/{cfg.distill_steps} "
          f"effective steps, final loss {last:.6f}) -> {out}")
    return EXIT_OK


def cmd_extract(args, cfg: PipelineConfig) -> int:
    ckpt = _resolve(args, args.checkpoint)
    out = _resolve(args, args.out)
    res = args.res if args.res is not None else cfg.grid_res
    model = ssan.load_model(ckpt)
    grid = meshing.sample_tsdf_grid(model, res=res)
    mesh = meshing.marching_cubes(grid)
    if len(mesh.faces) == 0:
        raise ValueError("no zero level set found: the model has no surface "
                         "inside the scene box")
    mode = None if cfg.atlas_mode == "auto" else cfg.atlas_mode
    fmesh = meshing.bake_features(mesh, model, mode=mode,
                                  tri_side=cfg.tri_side)
    meshing.save_bundle(out, fmesh, model)
    print(f"extracted mesh at res {res}: {len(mesh.verts)} vertices, "
          f"{len(mesh.faces)} faces, {fmesh.mode} features -> {out}")
    return EXIT_OK


def cmd_render(args, cfg: PipelineConfig) -> int:
    bundle = _resolve(args, args.bundle)
    out = _resolve(args, args.out)
    cams = load_cameras(_resolve(args, args.cameras))
    if args.view is not None:
        if not 0 <= args.view < len(cams):
            raise ValueError(f"--view {args.view} out of range "
                             f"(0..{len(cams) - 1})")
        picks = [args.view]
    else:
        picks = list(range(len(cams)))
    fmesh, eta = meshing.load_bundle(bundle)
    os.makedirs(out, exist_ok=True)
    timings = []
    for i in picks:
        t0 = time.perf_counter()
        img = raster.render_mesh(fmesh, eta, cams[i],
                                 background=cfg.background)
        timings.append(time.perf_counter() - t0)
        write_png(os.path.join(out, f"{i:04d}.png"), img)
    report = {"views": picks, "seconds_per_view": timings,
              "mean_seconds": float(np.mean(timings)),
              "fps": float(1.0 / np.mean(timings))}
    atomic_write_text(os.path.join(out, "timing.json"),
                      json.dumps(report, indent=1))
    print(f"rendered {len(picks)} view(s) at {report['fps']:.1f} fps -> {out}")
    return EXIT_OK


def cmd_eval(args, cfg: PipelineConfig) -> int:
    bundle = _resolve(args, args.bundle)
    dataset = _resolve(args, args.dataset)
    out = _resolve(args, args.out)
    fmesh, eta = meshing.load_bundle(bundle)
    cams, images, meta = scenes.load_dataset(dataset)
    if args.scene:
        with open(_resolve(args, args.scene)) as fh:
            meta = json.load(fh)
    spec = _scene_spec(meta, "scene description")

    # evaluation volume: scene box, shrunk to the intersection with the
    # mesh bounds when the mesh spills outside it
    lo = np.full(3, rendering.SCENE_LO)
    hi = np.full(3, rendering.SCENE_HI)
    mesh = fmesh.mesh
    if len(mesh.verts) == 0:
        raise ValueError("mesh bundle contains an empty mesh")
    mlo, mhi = mesh.verts.min(axis=0), mesh.verts.max(axis=0)
    if (mlo < lo - 1e-9).any() or (mhi > hi + 1e-9).any():
        ilo, ihi = np.maximum(lo, mlo), np.minimum(hi, mhi)
        if (ihi <= ilo).any():
            raise ValueError("mesh lies entirely outside the scene box")
        print("warning: mesh bounds exceed the scene box; evaluating on "
              "the intersection", file=sys.stderr)
        lo, hi = ilo, ihi

    grid = metrics.build_observability_grid(cams, lo=lo, hi=hi,
                                            res=cfg.mask_res)
    pred = metrics.sample_surface(mesh, cfg.eval_points,
                                  np.random.default_rng(cfg.seed))
    gt_pts, gt_nrm = scenes.sample_shape_surface(
        spec, cfg.eval_points, np.random.default_rng(cfg.seed + 1))
    gt = metrics.SampledSurface(points=gt_pts, normals=gt_nrm)

    chamfer = metrics.chamfer_masked(pred, gt, grid)
    keep = grid.lookup(gt.points)
    gt_vis = metrics.SampledSurface(points=gt.points[keep],
                                    normals=gt.normals[keep])
    ncons = metrics.normal_consistency(mesh, gt_vis)
    psnrs = []
    for cam, ref in zip(cams, images):
        img = raster.render_mesh(fmesh, eta, cam,
                                 background=np.asarray(spec.background))
        psnrs.append(raster.psnr(img, ref))
    report = metrics.evaluation_report(chamfer, ncons, psnrs)
    atomic_write_text(out, json.dumps(report, indent=1))
    print(f"chamfer {report['chamfer']:.5f}  "
          f"normal consistency {report['normal_consistency']:.4f}  "
          f"mean psnr {report['means']['psnr']:.2f} dB -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--workdir", default=".",
                        help="base directory for relative paths")
    common.add_argument("--config", default=None,
                        help="pipeline config file (key = value lines)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a single config key")

    parser = _Parser(prog="meshdistill",
                     description="radiance-field to mesh distillation")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("make-scene", parents=[common],
                       help="render a synthetic multi-view dataset")
    p.add_argument("out", help="dataset output directory")
    p.add_argument("--shape", default="sphere",
                   choices=["sphere", "torus", "box", "two-spheres"])
    p.add_argument("--albedo", default="constant",
                   choices=["constant", "gradient"])
    p.add_argument("--param", action="append", metavar="KEY=JSON",
                   help="shape parameter override, e.g. radius=0.4")
    p.set_defaults(func=cmd_make_scene)

    p = sub.add_parser("train-nerf", parents=[common],
                       help="fit a radiance field to a dataset")
    p.add_argument("dataset", help="dataset directory")
    p.add_argument("out", help="output checkpoint path")
    p.add_argument("--log", default=None, help="loss CSV (default OUT.csv)")
    p.set_defaults(func=cmd_train_nerf)

    p = sub.add_parser("distill", parents=[common],
                       help="train the surface/appearance model from a field")
    p.add_argument("dataset", help="dataset directory")
    p.add_argument("out", help="output checkpoint path")
    p.add_argument("--nerf", default=None, help="radiance field checkpoint")
    p.add_argument("--analytic", action="store_true",
                   help="distill from the dataset's analytic field instead")
    p.add_argument("--log", default=None, help="loss CSV (default OUT.csv)")
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("extract", parents=[common],
                       help="extract a featured mesh bundle from a model")
    p.add_argument("checkpoint", help="surface model checkpoint")
    p.add_argument("out", help="mesh bundle output directory")
    p.add_argument("--res", type=int, default=None,
                   help="marching cubes grid resolution")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("render", parents=[common],
                       help="rasterize and shade novel views of a bundle")
    p.add_argument("bundle", help="mesh bundle directory")
    p.add_argument("out", help="output image directory")
    p.add_argument("--cameras", required=True,
                   help="camera file (JSON list of poses)")
    p.add_argument("--view", type=int, default=None,
                   help="render a single camera index")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", parents=[common],
                       help="evaluate a bundle against a dataset")
    p.add_argument("bundle", help="mesh bundle directory")
    p.add_argument("dataset", help="dataset directory")
    p.add_argument("out", help="metrics report JSON path")
    p.add_argument("--scene", default=None,
                   help="scene description JSON (default: the dataset's)")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    if getattr(args, "func", None) is None:
        parser.print_help()
        return EXIT_USAGE
    try:
        cfg = _effective_config(args)
        return args.func(args, cfg)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError, OSError, json.JSONDecodeError) as e:
        print(f"invalid input: {e}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
