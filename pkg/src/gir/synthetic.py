"""Procedural scenes, environment maps, and rendered datasets for tests.

Everything here is deterministic given a seed so fitted results are
reproducible run to run.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import torch

from .envlight import EnvironmentMap, direction_grid
from .imageio import save_png
from .math3d import (
    GOLDEN_RATIO,
    normalize,
    orthonormal_basis,
    quat_from_axis_angle,
    quat_from_rotmat,
    quat_multiply,
)
from .rasterizer import Camera, render
from .scene import GaussianScene
from .shading import ShadingContext


def _fibonacci_sphere(count: int, dtype: torch.dtype) -> torch.Tensor:
    k = torch.arange(count, dtype=dtype)
    z = 1 - 2 * (k + 0.5) / count
    phi = 2 * math.pi * k / GOLDEN_RATIO
    r = torch.sqrt((1 - z * z).clamp_min(0))
    return torch.stack([r * torch.cos(phi), r * torch.sin(phi), z], dim=-1)


def make_sphere_scene(
    count: int = 2000,
    radius: float = 1.0,
    seed: int = 0,
    dtype: torch.dtype = torch.float32,
) -> GaussianScene:
    """Build a surfel sphere with smooth spatially varying materials.

    Gaussians sit on a Fibonacci lattice, flattened along the outward
    radial direction (which is therefore each one's shading normal).
    """
    dirs = _fibonacci_sphere(count, dtype)
    positions = radius * dirs
    # Tangential footprint sized so neighbors overlap; radial axis thin.
    area = 4 * math.pi * radius * radius / count
    s_tan = 1.3 * math.sqrt(area / math.pi)
    s_rad = s_tan / 10
    log_scales = torch.log(
        torch.tensor([s_tan, s_tan, s_rad], dtype=dtype)
    ).expand(count, 3).contiguous()
    t, b = orthonormal_basis(dirs)
    rot = torch.stack([t, b, dirs], dim=-1)
    rotations = quat_from_rotmat(rot).to(dtype)
    x, y, z = positions.unbind(-1)
    albedo = torch.stack(
        [
            0.45 + 0.25 * torch.sin(3.0 * x) * torch.cos(2.0 * y),
            0.40 + 0.25 * torch.sin(2.0 * y + 1.3),
            0.50 + 0.20 * torch.cos(3.0 * z + 0.7),
        ],
        dim=-1,
    ).clamp(0.05, 0.95)
    roughness = (0.55 + 0.25 * torch.sin(2.0 * z + 0.5)).clamp(0.25, 0.9)
    metallic = (0.8 * torch.sigmoid(6.0 * (z - 0.55))).clamp(0.0, 0.85)
    return GaussianScene.create(
        positions=positions,
        log_scales=log_scales,
        rotations=rotations,
        opacity_logits=torch.full((count,), 4.0, dtype=dtype),
        albedo=albedo,
        roughness=roughness,
        metallic=metallic,
        seed=seed,
    )


def make_env_map(kind: str = "studio", height: int = 64, dtype: torch.dtype = torch.float32) -> EnvironmentMap:
    """Smooth analytic environment maps: 'studio', 'sunset', or 'furnace'."""
    dirs = direction_grid(height, 2 * height, dtype=dtype)
    x, y, z = dirs.unbind(-1)
    if kind == "studio":
        base = 0.45 + 0.4 * z.clamp_min(0) + 0.15 * torch.sin(2.0 * x + 0.4) * torch.cos(y)
        data = torch.stack([base * 1.0, base * 0.97, base * 0.92], dim=-1)
    elif kind == "sunset":
        lobe = torch.exp(-3.0 * ((x - 0.8) ** 2 + (z - 0.3) ** 2))
        base = 0.18 + 0.1 * z.clamp_min(0)
        data = torch.stack(
            [base + 1.6 * lobe, base + 0.9 * lobe, base + 0.45 * lobe + 0.08 * y.abs()],
            dim=-1,
        )
    elif kind == "furnace":
        data = torch.full((height, 2 * height, 3), 0.5, dtype=dtype)
    else:
        raise ValueError(f"unknown environment kind {kind!r}")
    return EnvironmentMap(data=data.clamp_min(1e-3))


def make_orbit_cameras(
    count: int,
    radius: float = 3.2,
    width: int = 128,
    height: int = 128,
    camera_angle_x: float = 0.7,
    seed: int = 0,
    elevation_range: tuple[float, float] = (-0.35, 1.0),
) -> list[Camera]:
    """Cameras on a view sphere looking at the origin, golden-angle spaced."""
    gen = torch.Generator().manual_seed(seed)
    jitter = (torch.rand(count, 2, generator=gen) - 0.5) * 0.1
    cams = []
    for i in range(count):
        frac = (i + 0.5) / count
        elev = elevation_range[0] + frac * (elevation_range[1] - elevation_range[0])
        elev = elev + float(jitter[i, 0])
        azim = 2 * math.pi * i / GOLDEN_RATIO + float(jitter[i, 1])
        eye = torch.tensor(
            [
                radius * math.cos(elev) * math.cos(azim),
                radius * math.cos(elev) * math.sin(azim),
                radius * math.sin(elev),
            ]
        )
        cams.append(
            Camera.look_at(
                eye=eye,
                target=torch.zeros(3),
                camera_angle_x=camera_angle_x,
                width=width,
                height=height,
            )
        )
    return cams


def _camera_to_blender(cam: Camera) -> list[list[float]]:
    rot = cam.c2w_rot.clone().to(torch.float64)
    rot[:, 1] *= -1
    rot[:, 2] *= -1
    m = torch.eye(4, dtype=torch.float64)
    m[:3, :3] = rot
    m[:3, 3] = cam.c2w_pos.to(torch.float64)
    return [[float(v) for v in row] for row in m]


def render_dataset(
    scene: GaussianScene,
    ctx: ShadingContext,
    out_dir: str | Path,
    cameras: dict[str, list[Camera]],
    force_masks_on: bool = False,
) -> None:
    """Render splits to PNGs plus Blender-style transforms manifests.

    Images are RGBA with color over black, so a consumer can composite any
    background with ``rgb + (1 - alpha) * bg``.
    """
    out_dir = Path(out_dir)
    for split, cams in cameras.items():
        split_dir = out_dir / split
        split_dir.mkdir(parents=True, exist_ok=True)
        frames = []
        for i, cam in enumerate(cams):
            buffers = render(scene, cam, ctx=ctx, mode="shaded", force_masks_on=force_masks_on)
            rgba = torch.cat([buffers.color, buffers.alpha.unsqueeze(-1)], dim=-1)
            name = f"{split}/r_{i}"
            save_png(out_dir / f"{name}.png", rgba.detach().cpu().numpy())
            frames.append(
                {"file_path": name, "transform_matrix": _camera_to_blender(cam)}
            )
        angle_x = 2 * math.atan(0.5 * cams[0].width / cams[0].fx)
        manifest = {"camera_angle_x": angle_x, "frames": frames}
        (out_dir / f"transforms_{split}.json").write_text(json.dumps(manifest, indent=1))


def perturb_scene(
    scene: GaussianScene,
    seed: int = 0,
    position_noise: float = 0.01,
    scale_noise: float = 0.1,
    rotation_noise: float = 0.05,
    opacity_noise: float = 0.25,
    albedo_noise: float = 0.15,
    roughness_noise: float = 0.15,
    metallic_noise: float = 0.15,
    sh_noise: float = 0.0,
    flip_fraction: float = 0.0,
) -> GaussianScene:
    """Return a noisy copy of the scene, optionally flipping some normals.

    A flip rotates the Gaussian 180 degrees about a tangential axis, which
    leaves the footprint in place but points the shading normal inward.
    """
    gen = torch.Generator().manual_seed(seed)
    d = scene.dtype

    def noise(shape: tuple[int, ...], scale: float) -> torch.Tensor:
        return scale * torch.randn(shape, generator=gen, dtype=d)

    n = len(scene)
    positions = scene.positions + noise((n, 3), position_noise)
    log_scales = scene.log_scales + noise((n, 3), scale_noise)
    axis_noise = noise((n, 3), 1.0)
    angle = noise((n,), rotation_noise).abs()
    q_noise = quat_from_axis_angle(normalize(axis_noise), angle)
    rotations = quat_multiply(q_noise.to(d), scene.rotations)
    if flip_fraction > 0:
        normals = scene.normals()
        t, _ = orthonormal_basis(normals)
        q_flip = quat_from_axis_angle(t, math.pi).to(d)
        flip = torch.rand(n, generator=gen) < flip_fraction
        rotations = torch.where(
            flip.unsqueeze(-1), quat_multiply(q_flip, rotations), rotations
        )
    return GaussianScene(
        positions=positions,
        log_scales=log_scales,
        rotations=rotations,
        opacity_logits=scene.opacity_logits + noise((n,), opacity_noise),
        albedo=(scene.albedo + noise((n, 3), albedo_noise)).clamp(0.02, 0.98),
        roughness=(scene.roughness + noise((n,), roughness_noise)).clamp(0.05, 0.98),
        metallic=(scene.metallic + noise((n,), metallic_noise)).clamp(0.02, 0.98),
        indirect_sh=scene.indirect_sh + noise((n, 3, 16), sh_noise),
        backface_colors=scene.backface_colors.clone(),
        seed=scene.seed,
    )
