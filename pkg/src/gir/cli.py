"""Command-line entry points.

Subcommands: train, render, relight, edit-material, export-buffers,
build-lut, serve. Rendering subcommands funnel through the same code path
as the HTTP service, so their outputs are interchangeable.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import torch

from .datasets import load_dataset
from .envlight import EnvironmentMap, build_dfg_lut
from .imageio import save_pfm, save_png
from .plyio import load_scene
from .rasterizer import RENDER_MODES, Camera
from .synthetic import make_sphere_scene, perturb_scene
from .train import TrainConfig, load_checkpoint, save_checkpoint, train
from .viewing import (
    MaterialOverrides,
    buffers_to_display,
    buffers_to_raw,
    load_bundle,
    pose_to_camera,
    render_view,
)


def _vec3(text: str) -> tuple[float, float, float]:
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected x,y,z, got {text!r}")
    return tuple(parts)


def _add_camera_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", type=Path, help="dataset root for --view poses")
    p.add_argument("--split", default="train", help="dataset split for --view")
    p.add_argument("--view", type=int, default=None, help="dataset pose index")
    p.add_argument("--eye", type=_vec3, default=None, help="camera origin x,y,z")
    p.add_argument("--target", type=_vec3, default=(0.0, 0.0, 0.0))
    p.add_argument("--up", type=_vec3, default=(0.0, 0.0, 1.0))
    p.add_argument("--fov-x", type=float, default=0.7, help="horizontal FOV (radians)")
    p.add_argument("--width", type=int, default=512)
    p.add_argument("--height", type=int, default=512)


def _camera_from_args(args: argparse.Namespace) -> Camera:
    if args.view is not None:
        if args.data is None:
            raise SystemExit("--view requires --data")
        manifest = load_dataset(args.data, args.split)
        if not (0 <= args.view < len(manifest)):
            raise SystemExit(
                f"view {args.view} out of range for split with {len(manifest)} frames"
            )
        return manifest.views[args.view].camera
    if args.eye is None:
        raise SystemExit("provide either --view (with --data) or --eye")
    return Camera.look_at(
        eye=args.eye,
        target=args.target,
        up=args.up,
        camera_angle_x=args.fov_x,
        width=args.width,
        height=args.height,
    )


def _overrides_from_args(args: argparse.Namespace) -> MaterialOverrides:
    return MaterialOverrides(
        delta_roughness=args.delta_roughness,
        delta_metallic=args.delta_metallic,
        albedo_tint=args.tint,
    )


def _write_outputs(buffers, mode: str, out: Path) -> None:
    out.parent.mkdir(parents=True, exist_ok=True)
    save_png(out.with_suffix(".png"), buffers_to_display(buffers, mode).numpy())
    save_pfm(out.with_suffix(".pfm"), buffers_to_raw(buffers, mode).numpy())
    print(f"wrote {out.with_suffix('.png')} and {out.with_suffix('.pfm')}")


def _cmd_train(args: argparse.Namespace) -> int:
    # One replace so co-dependent fields (iterations, mask_activation) are
    # validated together rather than in flag order.
    overrides = {
        name: getattr(args, name)
        for name in (
            "iterations",
            "mask_activation",
            "grid_rebuild_period",
            "densify_interval",
            "lambda_smooth",
            "lambda_light",
        )
        if getattr(args, name) is not None
    }
    config = dataclasses.replace(TrainConfig(seed=args.seed), **overrides)
    dataset = load_dataset(args.data, args.split)
    if args.init_scene is not None:
        initial = load_scene(args.init_scene, seed=config.seed)
    else:
        initial = perturb_scene(
            make_sphere_scene(count=args.init_count, seed=config.seed),
            seed=config.seed,
        )
    scene, generator, logs = train(
        dataset,
        config,
        initial_scene=initial,
        out_dir=args.out,
        log_path=Path(args.out) / "train_log.jsonl",
    )
    print(f"trained {len(scene)} Gaussians over {config.iterations} iterations")
    if logs:
        print(f"final loss {logs[-1].total:.6f}")
    return 0


def _cmd_render(args: argparse.Namespace) -> int:
    bundle = load_bundle(args.checkpoint)
    camera = _camera_from_args(args)
    if args.env is not None:
        bundle.add_env("cli-env", EnvironmentMap.from_file(args.env))
        env_id = "cli-env"
    else:
        env_id = "default"
    buffers = render_view(bundle, camera, mode=args.mode, env_id=env_id)
    _write_outputs(buffers, args.mode, args.out)
    return 0


def _cmd_relight(args: argparse.Namespace) -> int:
    bundle = load_bundle(args.checkpoint)
    bundle.add_env("relight", EnvironmentMap.from_file(args.env))
    camera = _camera_from_args(args)
    buffers = render_view(bundle, camera, mode=args.mode, env_id="relight")
    _write_outputs(buffers, args.mode, args.out)
    return 0


def _cmd_edit_material(args: argparse.Namespace) -> int:
    scene, generator, config = load_checkpoint(args.checkpoint)
    overrides = _overrides_from_args(args)
    edited = overrides.apply(scene)
    if args.indices is not None:
        idx = torch.tensor(
            [int(i) for i in args.indices.split(",")], dtype=torch.long
        )
        mask = torch.zeros(len(scene), dtype=torch.bool)
        mask[idx] = True
        edited = dataclasses.replace(
            scene,
            roughness=torch.where(mask, edited.roughness, scene.roughness),
            metallic=torch.where(mask, edited.metallic, scene.metallic),
            albedo=torch.where(mask.unsqueeze(-1), edited.albedo, scene.albedo),
        )
    edited = dataclasses.replace(
        edited,
        roughness=edited.roughness.clamp(0.0, 1.0),
        metallic=edited.metallic.clamp(0.0, 1.0),
        albedo=edited.albedo.clamp(0.0, 1.0),
    )
    save_checkpoint(args.out, edited, generator, config)
    print(f"wrote edited checkpoint to {args.out}")
    return 0


def _cmd_export_buffers(args: argparse.Namespace) -> int:
    bundle = load_bundle(args.checkpoint)
    camera = _camera_from_args(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for mode in RENDER_MODES:
        buffers = render_view(bundle, camera, mode=mode)
        _write_outputs(buffers, mode, out_dir / mode)
    return 0


def _cmd_build_lut(args: argparse.Namespace) -> int:
    lut = build_dfg_lut(res=args.resolution, samples=args.samples, seed=args.seed)
    padded = torch.cat([lut, torch.zeros(lut.shape[0], lut.shape[1], 1)], dim=-1)
    save_pfm(args.out, padded.numpy())
    print(f"wrote {args.out} ({args.resolution}x{args.resolution}, scale/bias/0)")
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    from .service import serve

    serve(
        args.checkpoint,
        host=args.host,
        port=args.port,
        static_dir=args.static,
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gir", description="Gaussian inverse rendering toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a scene to a posed dataset")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--init-scene", type=Path, default=None, help="initial PLY")
    p.add_argument("--init-count", type=int, default=2000)
    p.add_argument("--mask-activation", type=int, default=None)
    p.add_argument("--grid-rebuild-period", type=int, default=None)
    p.add_argument("--densify-interval", type=int, default=None)
    p.add_argument("--lambda-smooth", type=float, default=None)
    p.add_argument("--lambda-light", type=float, default=None)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("render", help="render a checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--mode", choices=RENDER_MODES, default="shaded")
    p.add_argument("--env", type=Path, default=None, help="override .hdr environment")
    _add_camera_args(p)
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("relight", help="render under a new environment map")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--env", type=Path, required=True, help="new .hdr environment")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--mode", choices=RENDER_MODES, default="shaded")
    _add_camera_args(p)
    p.set_defaults(func=_cmd_relight)

    p = sub.add_parser("edit-material", help="apply material overrides, save checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--delta-roughness", type=float, default=0.0)
    p.add_argument("--delta-metallic", type=float, default=0.0)
    p.add_argument("--tint", type=_vec3, default=(1.0, 1.0, 1.0))
    p.add_argument("--indices", default=None, help="comma-separated Gaussian subset")
    p.set_defaults(func=_cmd_edit_material)

    p = sub.add_parser("export-buffers", help="write every buffer as PNG + PFM")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    _add_camera_args(p)
    p.set_defaults(func=_cmd_export_buffers)

    p = sub.add_parser("build-lut", help="precompute the DFG table to a PFM")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--samples", type=int, default=1024)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_build_lut)

    p = sub.add_parser("serve", help="run the HTTP render service")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--static", type=Path, default=None, help="viewer build directory")
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
