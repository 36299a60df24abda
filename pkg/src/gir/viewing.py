"""Checkpoint loading and the single render path shared by CLI and service.

Both front ends funnel through ``render_view`` with the same defaults, so a
CLI render and an HTTP render of the same request produce bit-identical
images.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .envlight import EnvironmentMap, MipChain, build_dfg_lut, build_mip_chain
from .imageio import png_bytes
from .math3d import ToneMapParams
from .occlusion import OccupancyGrid, voxelize
from .rasterizer import RENDER_MODES, Camera, FrameBuffers, render
from .scene import GaussianScene
from .shading import ShadingContext, occlusion_state
from .train import TrainConfig, load_checkpoint


@dataclass
class MaterialOverrides:
    """Global material edits applied as a pure transform before rendering."""

    delta_roughness: float = 0.0
    delta_metallic: float = 0.0
    albedo_tint: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def apply(self, scene: GaussianScene) -> GaussianScene:
        tint = torch.tensor(self.albedo_tint, dtype=scene.dtype)
        return dataclasses.replace(
            scene,
            roughness=scene.roughness + self.delta_roughness,
            metallic=scene.metallic + self.delta_metallic,
            albedo=scene.albedo * tint,
        )

    def is_identity(self) -> bool:
        return (
            self.delta_roughness == 0.0
            and self.delta_metallic == 0.0
            and tuple(self.albedo_tint) == (1.0, 1.0, 1.0)
        )


@dataclass
class SceneBundle:
    """Immutable snapshot of everything needed to answer render requests."""

    scene: GaussianScene
    config: TrainConfig
    tone: ToneMapParams
    dfg: torch.Tensor
    grid: OccupancyGrid | None
    diffuse_vis: torch.Tensor | None
    envs: dict[str, tuple[EnvironmentMap, MipChain]] = field(default_factory=dict)

    def context(self, env_id: str = "default") -> ShadingContext:
        env, mip = self.envs[env_id]
        return ShadingContext(
            mip=mip,
            dfg=self.dfg,
            tone=self.tone,
            grid=self.grid,
            occlusion_samples=self.config.occlusion_samples,
            visibility_rays=self.config.visibility_rays,
            seed=self.config.seed,
        )

    def add_env(self, env_id: str, env: EnvironmentMap) -> None:
        self.envs[env_id] = (env, self.build_mip(env))

    def build_mip(self, env: EnvironmentMap) -> MipChain:
        return build_mip_chain(
            env,
            num_levels=self.config.prefilter_levels,
            samples=max(self.config.prefilter_samples, 64),
            irradiance_hw=(
                self.config.irradiance_height,
                2 * self.config.irradiance_height,
            ),
            irradiance_samples=max(self.config.irradiance_samples, 256),
            seed=self.config.seed,
        )


def load_bundle(checkpoint_dir: str | Path, build_grid: bool = True) -> SceneBundle:
    """Load a checkpoint into an immutable render snapshot.

    The default environment is the generator's output; the occupancy grid
    and per-Gaussian diffuse visibility are precomputed once since the
    geometry never changes during viewing.
    """
    scene, generator, config = load_checkpoint(checkpoint_dir)
    tone = ToneMapParams(gamma=config.gamma)
    dfg = build_dfg_lut(
        res=config.dfg_resolution, samples=config.dfg_samples, seed=config.seed
    )
    with torch.no_grad():
        env = EnvironmentMap(data=generator())
    bundle = SceneBundle(
        scene=scene, config=config, tone=tone, dfg=dfg, grid=None, diffuse_vis=None
    )
    bundle.add_env("default", env)
    if build_grid:
        bundle.grid = voxelize(scene, res=config.grid_resolution)
        ctx = bundle.context("default")
        ctx.enable_indirect = False
        _, bundle.diffuse_vis = occlusion_state(scene, torch.zeros(3), ctx)
    return bundle


def render_view(
    bundle: SceneBundle,
    camera: Camera,
    mode: str = "shaded",
    env_id: str = "default",
    overrides: MaterialOverrides | None = None,
) -> FrameBuffers:
    """The one render entry point: material overrides, then a plain render.

    Occlusion flags are recomputed for the requested viewpoint against the
    frozen geometry; diffuse visibility reuses the cached per-Gaussian
    values (it is view-independent).
    """
    if mode not in RENDER_MODES:
        raise ValueError(f"unknown render mode {mode!r}")
    if env_id not in bundle.envs:
        raise KeyError(f"unknown environment id {env_id!r}")
    scene = bundle.scene
    if overrides is not None and not overrides.is_identity():
        scene = overrides.apply(scene)
    ctx = bundle.context(env_id)
    with torch.no_grad():
        occluded = None
        if ctx.grid is not None:
            spec_ctx = dataclasses.replace(ctx, enable_diffuse_occlusion=False)
            occluded, _ = occlusion_state(scene, camera.origin(scene.dtype), spec_ctx)
        return render(
            scene,
            camera,
            ctx=ctx,
            mode=mode,
            tile_size=bundle.config.tile_size,
            occluded_override=occluded,
            visibility_override=bundle.diffuse_vis,
        )


def buffers_to_display(buffers: FrameBuffers, mode: str) -> torch.Tensor:
    """Map render buffers to a displayable RGBA image in [0, 1].

    Normals map as 0.5 n + 0.5; depth is normalized by its maximum over
    covered pixels (display only; the PFM export keeps raw values).
    """
    alpha = buffers.alpha.unsqueeze(-1)
    if mode == "shaded":
        rgb = buffers.color
    elif mode == "albedo":
        rgb = buffers.albedo
    elif mode == "normal":
        rgb = 0.5 * buffers.normal + 0.5
    elif mode == "roughness":
        rgb = buffers.roughness.unsqueeze(-1).expand(-1, -1, 3)
    elif mode == "metallic":
        rgb = buffers.metallic.unsqueeze(-1).expand(-1, -1, 3)
    elif mode == "depth":
        peak = buffers.depth.max().clamp_min(1e-8)
        rgb = (buffers.depth / peak).unsqueeze(-1).expand(-1, -1, 3)
    else:
        raise ValueError(f"unknown render mode {mode!r}")
    return torch.cat([rgb.clamp(0.0, 1.0), alpha], dim=-1)


def buffers_to_raw(buffers: FrameBuffers, mode: str) -> torch.Tensor:
    """Raw float buffer for lossless export (PFM)."""
    if mode == "shaded":
        return buffers.color
    if mode == "albedo":
        return buffers.albedo
    if mode == "normal":
        return buffers.normal
    if mode == "roughness":
        return buffers.roughness
    if mode == "metallic":
        return buffers.metallic
    if mode == "depth":
        return buffers.depth
    raise ValueError(f"unknown render mode {mode!r}")


def render_png_bytes(
    bundle: SceneBundle,
    camera: Camera,
    mode: str = "shaded",
    env_id: str = "default",
    overrides: MaterialOverrides | None = None,
) -> bytes:
    buffers = render_view(bundle, camera, mode=mode, env_id=env_id, overrides=overrides)
    return png_bytes(buffers_to_display(buffers, mode).numpy())


def pose_to_camera(pose: dict, default_size: int = 512) -> Camera:
    """Build a camera from a request pose document.

    Two forms are accepted: ``{"eye": [...], "target": [...], "up"?,
    "camera_angle_x"?, "width"?, "height"?}`` or ``{"c2w": 4x4,
    "convention": "blender"|"internal", ...}``. Raises ValueError on
    malformed or degenerate poses.
    """
    if not isinstance(pose, dict):
        raise ValueError("pose must be an object")
    width = int(pose.get("width", default_size))
    height = int(pose.get("height", default_size))
    if not (1 <= width <= 4096 and 1 <= height <= 4096):
        raise ValueError("pose width/height out of range")
    angle_x = float(pose.get("camera_angle_x", 0.7))
    if not (0.0 < angle_x < math.pi):
        raise ValueError("camera_angle_x out of range")

    def vec3(key: str, default: tuple[float, float, float] | None = None) -> torch.Tensor:
        val = pose.get(key, default)
        if val is None or len(val) != 3:
            raise ValueError(f"pose field {key!r} must be a 3-vector")
        t = torch.tensor([float(x) for x in val], dtype=torch.float64)
        if not torch.isfinite(t).all():
            raise ValueError(f"pose field {key!r} must be finite")
        return t

    if "c2w" in pose:
        m = torch.tensor(pose["c2w"], dtype=torch.float64)
        if m.shape != (4, 4) or not torch.isfinite(m).all():
            raise ValueError("pose c2w must be a finite 4x4 matrix")
        convention = pose.get("convention", "blender")
        if convention == "blender":
            return Camera.from_blender(m, angle_x, width, height)
        if convention == "internal":
            fx = 0.5 * width / math.tan(0.5 * angle_x)
            return Camera(
                width=width,
                height=height,
                fx=fx,
                fy=fx,
                cx=0.5 * width,
                cy=0.5 * height,
                c2w_rot=m[:3, :3],
                c2w_pos=m[:3, 3],
            )
        raise ValueError(f"unknown pose convention {convention!r}")
    eye = vec3("eye")
    target = vec3("target")
    if float((eye - target).norm()) < 1e-9:
        raise ValueError("pose eye and target coincide")
    up = vec3("up", (0.0, 0.0, 1.0))
    return Camera.look_at(
        eye=eye, target=target, up=up, camera_angle_x=angle_x, width=width, height=height
    )
