"""Tile-based differentiable Gaussian splatting.

Gaussians are projected to screen-space ellipses, depth-sorted once
globally, binned into 16x16 pixel tiles, and alpha-blended front to back.
The blend is written with scan primitives (cumprod for transmittance,
cumsum for accumulation) whose serial accumulation order makes the tiled
output bit-identical to a per-pixel full-list evaluation: splats excluded
from a pixel contribute an exact 0 to sums and an exact 1 to products.

Directional masking happens inside the blend: front-facing Gaussians
contribute their tone-mapped shaded color, back-facing ones their fixed
back-face color, and attribute buffers zero out masked contributions while
keeping the blend weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .math3d import ToneMapParams, normalize, tonemap
from .scene import GaussianScene, directional_mask
from .shading import ShadingContext, occlusion_state, shade

ALPHA_SKIP = 1.0 / 255.0
ALPHA_CLAMP = 0.99
EARLY_EXIT_T = 1e-4
LOWPASS_BIAS = 0.3
_PIXEL_CHUNK = 1 << 21  # pixel x splat budget for the full-list path

RENDER_MODES = ("shaded", "albedo", "normal", "roughness", "metallic", "depth")


@dataclass
class Camera:
    """Pinhole camera; the stored transform maps camera to world coordinates.

    Internal axes: +x right, +y down, +z forward (camera looks along +z).
    """

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    c2w_rot: torch.Tensor  # (3, 3)
    c2w_pos: torch.Tensor  # (3,)
    near: float = 0.01

    def __post_init__(self) -> None:
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        r = self.c2w_rot.to(torch.float64)
        if not torch.allclose(r @ r.T, torch.eye(3, dtype=torch.float64), atol=1e-5):
            raise ValueError("camera rotation must be orthonormal")

    @staticmethod
    def from_blender(
        c2w, camera_angle_x: float, width: int, height: int, near: float = 0.01
    ) -> "Camera":
        """Build from an OpenGL-style camera-to-world matrix (as stored in
        transforms.json): +x right, +y up, -z forward. The y and z basis
        vectors are negated to reach the internal convention."""
        m = torch.as_tensor(c2w, dtype=torch.float64)
        if m.shape not in ((4, 4), (3, 4)):
            raise ValueError(f"camera matrix must be 3x4 or 4x4, got {tuple(m.shape)}")
        rot = m[:3, :3] * torch.tensor([1.0, -1.0, -1.0], dtype=torch.float64)
        focal = 0.5 * width / math.tan(0.5 * camera_angle_x)
        return Camera(
            width=width,
            height=height,
            fx=focal,
            fy=focal,
            cx=width / 2.0,
            cy=height / 2.0,
            c2w_rot=rot,
            c2w_pos=m[:3, 3].clone(),
            near=near,
        )

    @staticmethod
    def look_at(
        eye,
        target,
        up=(0.0, 0.0, 1.0),
        camera_angle_x: float = 0.7,
        width: int = 256,
        height: int = 256,
        near: float = 0.01,
    ) -> "Camera":
        eye = torch.as_tensor(eye, dtype=torch.float64)
        target = torch.as_tensor(target, dtype=torch.float64)
        up = torch.as_tensor(up, dtype=torch.float64)
        forward = normalize(target - eye, dim=-1)
        right_raw = torch.linalg.cross(forward, up)
        if float(right_raw.norm()) < 1e-8:
            raise ValueError("up direction is parallel to the view direction")
        right = normalize(right_raw, dim=-1)
        down = torch.linalg.cross(forward, right)
        rot = torch.stack([right, down, forward], dim=-1)
        focal = 0.5 * width / math.tan(0.5 * camera_angle_x)
        return Camera(
            width=width,
            height=height,
            fx=focal,
            fy=focal,
            cx=width / 2.0,
            cy=height / 2.0,
            c2w_rot=rot,
            c2w_pos=eye,
            near=near,
        )

    def origin(self, dtype: torch.dtype = torch.float32) -> torch.Tensor:
        return self.c2w_pos.to(dtype)

    def world_to_cam_rotation(self, dtype: torch.dtype = torch.float32) -> torch.Tensor:
        return self.c2w_rot.T.to(dtype)


@dataclass
class SplatBatch:
    """Projected splats in ascending depth order (after sorting)."""

    means2d: torch.Tensor  # (M, 2) continuous pixel coordinates
    conics: torch.Tensor  # (M, 3) inverse 2D covariance (xx, xy, yy)
    depths: torch.Tensor  # (M,)
    opacities: torch.Tensor  # (M,)
    rects: torch.Tensor  # (M, 4) long: x0, x1, y0, y1 inclusive pixel bounds
    source: torch.Tensor  # (M,) long index into the scene

    def __len__(self) -> int:
        return self.means2d.shape[0]


@dataclass
class FrameBuffers:
    """Per-pixel render outputs; attribute maps are alpha-blends of the
    per-Gaussian attributes with masked contributions zeroed."""

    color: torch.Tensor  # (H, W, 3)
    alpha: torch.Tensor  # (H, W)
    depth: torch.Tensor  # (H, W) alpha-weighted expected depth
    normal: torch.Tensor  # (H, W, 3)
    albedo: torch.Tensor  # (H, W, 3)
    roughness: torch.Tensor  # (H, W)
    metallic: torch.Tensor  # (H, W)


def project_gaussians(scene: GaussianScene, cam: Camera) -> SplatBatch:
    """EWA projection of every Gaussian to a screen-space splat.

    The 2D covariance is J W Sigma W^T J^T plus a 0.3-pixel isotropic
    low-pass bias. Gaussians behind the near plane or with a 3-sigma
    footprint off the image are culled (a normal outcome, not an error).
    """
    dtype = scene.dtype
    w2c = cam.world_to_cam_rotation(dtype)
    origin = cam.origin(dtype)
    p_cam = (scene.positions - origin) @ w2c.T
    x, y, z = p_cam.unbind(-1)

    sigma = scene.covariances()
    sigma_cam = w2c @ sigma @ w2c.T

    zs = z.clamp_min(1e-8)
    fx, fy = dtype_f(cam.fx, dtype), dtype_f(cam.fy, dtype)
    j00 = fx / zs
    j02 = -fx * x / (zs * zs)
    j11 = fy / zs
    j12 = -fy * y / (zs * zs)
    zero = torch.zeros_like(zs)
    jrow0 = torch.stack([j00, zero, j02], dim=-1)
    jrow1 = torch.stack([zero, j11, j12], dim=-1)
    jac = torch.stack([jrow0, jrow1], dim=-2)  # (N, 2, 3)
    cov2d = jac @ sigma_cam @ jac.transpose(-1, -2)
    a = cov2d[..., 0, 0] + LOWPASS_BIAS
    b = cov2d[..., 0, 1]
    c = cov2d[..., 1, 1] + LOWPASS_BIAS

    mean_x = fx * x / zs + dtype_f(cam.cx, dtype)
    mean_y = fy * y / zs + dtype_f(cam.cy, dtype)

    det = a * c - b * b
    lam_max = 0.5 * (a + c) + torch.sqrt((0.5 * (a - c)) ** 2 + b * b)
    radius = 3.0 * torch.sqrt(lam_max.clamp_min(0.0))

    x0 = torch.ceil(mean_x - radius - 0.5).long().clamp_min(0)
    x1 = torch.floor(mean_x + radius - 0.5).long().clamp_max(cam.width - 1)
    y0 = torch.ceil(mean_y - radius - 0.5).long().clamp_min(0)
    y1 = torch.floor(mean_y + radius - 0.5).long().clamp_max(cam.height - 1)

    finite = (
        torch.isfinite(mean_x)
        & torch.isfinite(mean_y)
        & torch.isfinite(a)
        & torch.isfinite(b)
        & torch.isfinite(c)
    )
    keep = (z > cam.near) & (det > 0) & (x0 <= x1) & (y0 <= y1) & finite
    idx = torch.nonzero(keep).squeeze(-1)

    inv_det = 1.0 / det[idx]
    conics = torch.stack(
        [c[idx] * inv_det, -b[idx] * inv_det, a[idx] * inv_det], dim=-1
    )
    return SplatBatch(
        means2d=torch.stack([mean_x[idx], mean_y[idx]], dim=-1),
        conics=conics,
        depths=z[idx],
        opacities=scene.opacities()[idx],
        rects=torch.stack([x0[idx], x1[idx], y0[idx], y1[idx]], dim=-1),
        source=idx,
    )


def dtype_f(v: float, dtype: torch.dtype) -> torch.Tensor:
    return torch.tensor(v, dtype=dtype)


def sort_splats(batch: SplatBatch) -> SplatBatch:
    """Global ascending depth sort, stable so equal depths keep index order."""
    order = torch.argsort(batch.depths.detach(), stable=True)
    return SplatBatch(
        means2d=batch.means2d[order],
        conics=batch.conics[order],
        depths=batch.depths[order],
        opacities=batch.opacities[order],
        rects=batch.rects[order],
        source=batch.source[order],
    )


def tile_splat_lists(
    batch: SplatBatch, width: int, height: int, tile_size: int = 16
) -> list[tuple[int, int, int, int, torch.Tensor]]:
    """Per-tile index lists (into the sorted batch), depth order preserved.

    Returns tuples (x_lo, x_hi, y_lo, y_hi, indices) with inclusive pixel
    bounds for each tile that has any overlapping splat.
    """
    out = []
    rx0, rx1, ry0, ry1 = batch.rects.unbind(-1)
    for ty in range(0, height, tile_size):
        ty1 = min(ty + tile_size, height) - 1
        row_mask = (ry0 <= ty1) & (ry1 >= ty)
        for tx in range(0, width, tile_size):
            tx1 = min(tx + tile_size, width) - 1
            mask = row_mask & (rx0 <= tx1) & (rx1 >= tx)
            idx = torch.nonzero(mask).squeeze(-1)
            out.append((tx, tx1, ty, ty1, idx))
    return out


def blend_pixels(
    px: torch.Tensor,
    py: torch.Tensor,
    means2d: torch.Tensor,
    conics: torch.Tensor,
    opacities: torch.Tensor,
    rects: torch.Tensor,
    payload: torch.Tensor,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Front-to-back alpha blend of an ordered splat list over pixels.

    Pixel centers sit at integer index + 0.5. Per pixel and splat,
    alpha = opacity * exp(-0.5 d^T Conic d), clamped to 0.99; splats with
    alpha < 1/255 or whose footprint rectangle misses the pixel are skipped
    exactly (zero weight), and blending stops once transmittance falls
    below 1e-4. The scan formulation keeps the accumulation order serial,
    so any superset list with the skipped entries zeroed blends to exactly
    the same bits.

    Args:
        px, py: (P,) integer pixel coordinates.
        payload: (S, C) per-splat blend payload.

    Returns:
        (P, C) blended payload and (P,) accumulated alpha.
    """
    dtype = means2d.dtype
    dx = px.to(dtype).unsqueeze(1) + 0.5 - means2d[:, 0]
    dy = py.to(dtype).unsqueeze(1) + 0.5 - means2d[:, 1]
    power = -0.5 * (conics[:, 0] * dx * dx + conics[:, 2] * dy * dy) - conics[:, 1] * dx * dy
    alpha = (opacities * torch.exp(power)).clamp_max(ALPHA_CLAMP)
    in_rect = (
        (px.unsqueeze(1) >= rects[:, 0])
        & (px.unsqueeze(1) <= rects[:, 1])
        & (py.unsqueeze(1) >= rects[:, 2])
        & (py.unsqueeze(1) <= rects[:, 3])
    )
    valid = in_rect & (alpha >= ALPHA_SKIP)
    av = torch.where(valid, alpha, torch.zeros_like(alpha))
    one_minus = 1.0 - av
    t_run = torch.cumprod(one_minus, dim=1)
    t_excl = torch.cat([torch.ones_like(t_run[:, :1]), t_run[:, :-1]], dim=1)
    active = t_excl >= EARLY_EXIT_T
    w = av * t_excl * active.to(dtype)
    blended = torch.cumsum(w.unsqueeze(-1) * payload.unsqueeze(0), dim=1)[:, -1]
    alpha_px = torch.cumsum(w, dim=1)[:, -1].clamp(0.0, 1.0)
    return blended, alpha_px


def _blend_image(
    batch: SplatBatch,
    payload: torch.Tensor,
    width: int,
    height: int,
    tile_size: int,
    full_lists: bool,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Blend all pixels, either tile by tile or against the full splat list."""
    c = payload.shape[1]
    dtype = payload.dtype
    out = torch.zeros(height, width, c, dtype=dtype)
    alpha = torch.zeros(height, width, dtype=dtype)
    if len(batch) == 0:
        return out, alpha
    if full_lists:
        yy, xx = torch.meshgrid(
            torch.arange(height), torch.arange(width), indexing="ij"
        )
        xs, ys = xx.reshape(-1), yy.reshape(-1)
        # Pixels are independent, so chunking only bounds memory: the
        # (pixels, splats, channels) scan tensor stays near _PIXEL_CHUNK.
        step = max(1, _PIXEL_CHUNK // max(1, len(batch)))
        parts = []
        for start in range(0, xs.shape[0], step):
            parts.append(
                blend_pixels(
                    xs[start : start + step],
                    ys[start : start + step],
                    batch.means2d,
                    batch.conics,
                    batch.opacities,
                    batch.rects,
                    payload,
                )
            )
        blended = torch.cat([p[0] for p in parts], dim=0)
        a = torch.cat([p[1] for p in parts], dim=0)
        return blended.reshape(height, width, c), a.reshape(height, width)
    rows = []
    for tx0, tx1, ty0, ty1, idx in tile_splat_lists(batch, width, height, tile_size):
        if idx.numel() == 0:
            continue
        yy, xx = torch.meshgrid(
            torch.arange(ty0, ty1 + 1), torch.arange(tx0, tx1 + 1), indexing="ij"
        )
        blended, a = blend_pixels(
            xx.reshape(-1),
            yy.reshape(-1),
            batch.means2d[idx],
            batch.conics[idx],
            batch.opacities[idx],
            batch.rects[idx],
            payload[idx],
        )
        th, tw = ty1 - ty0 + 1, tx1 - tx0 + 1
        rows.append((ty0, tx0, th, tw, blended.reshape(th, tw, c), a.reshape(th, tw)))
    # Scatter tile results; tiles are disjoint so plain assignment is enough,
    # but building via index_put keeps autograd happy with one graph node each.
    for ty0, tx0, th, tw, blended, a in rows:
        out = out.index_put(
            (
                torch.arange(ty0, ty0 + th).reshape(-1, 1).expand(th, tw),
                torch.arange(tx0, tx0 + tw).reshape(1, -1).expand(th, tw),
            ),
            blended,
        )
        alpha = alpha.index_put(
            (
                torch.arange(ty0, ty0 + th).reshape(-1, 1).expand(th, tw),
                torch.arange(tx0, tx0 + tw).reshape(1, -1).expand(th, tw),
            ),
            a,
        )
    return out, alpha


def render(
    scene: GaussianScene,
    cam: Camera,
    ctx: ShadingContext | None = None,
    mode: str = "shaded",
    background: torch.Tensor | None = None,
    tile_size: int = 16,
    force_masks_on: bool = False,
    mask_override: torch.Tensor | None = None,
    occluded_override: torch.Tensor | None = None,
    visibility_override: torch.Tensor | None = None,
    full_lists: bool = False,
) -> FrameBuffers:
    """Render the scene into per-pixel buffers.

    In shaded mode each Gaussian's linear color comes from the shading
    module (tone-mapped before blending); the blend substitutes the fixed
    back-face color for Gaussians whose normal points away from the camera.
    Attribute modes reuse the same blend weights with the requested
    attribute as the color payload.

    The override arguments freeze the discrete switches (masks, occlusion
    flags, diffuse visibility) at given values so gradients can be checked
    against finite differences; ``full_lists`` selects the brute-force
    per-pixel full-list path, which is bit-identical to the tiled one.

    Args:
        background: (3,) color composited as (1 - alpha) * background.
        mode: one of shaded, albedo, normal, roughness, metallic, depth.
    """
    if mode not in RENDER_MODES:
        raise ValueError(f"unknown render mode {mode!r}")
    if len(scene) == 0:
        raise ValueError("cannot render an empty scene")
    if mode == "shaded" and ctx is None:
        raise ValueError("shaded mode needs a ShadingContext")
    dtype = scene.dtype
    if background is None:
        background = torch.zeros(3, dtype=dtype)
    background = background.to(dtype)

    origin = cam.origin(dtype)
    normals = scene.normals()
    if mask_override is not None:
        maskf = mask_override.to(dtype)
    elif force_masks_on:
        maskf = torch.ones(len(scene), dtype=dtype)
    else:
        maskf, _ = directional_mask(normals, scene.positions, origin)
    mf = maskf.unsqueeze(-1)

    if mode == "shaded":
        occluded, vis = occluded_override, visibility_override
        if occluded is None and vis is None:
            occluded, vis = occlusion_state(scene, origin, ctx)
        shaded = shade(scene, origin, ctx, occluded=occluded, diffuse_vis=vis)
        display = tonemap(shaded, ctx.tone)
        color_payload = mf * display + (1.0 - mf) * scene.backface_colors
    elif mode == "albedo":
        color_payload = mf * scene.albedo
    elif mode == "normal":
        color_payload = mf * normals
    elif mode == "roughness":
        color_payload = (maskf * scene.roughness).unsqueeze(-1).expand(-1, 3)
    elif mode == "metallic":
        color_payload = (maskf * scene.metallic).unsqueeze(-1).expand(-1, 3)
    else:  # depth mode: color is filled from the blended depth channel below
        color_payload = torch.zeros(len(scene), 3, dtype=dtype)

    batch = sort_splats(project_gaussians(scene, cam))
    depth_payload = torch.zeros(len(scene), dtype=dtype)
    depth_payload = depth_payload.index_put((batch.source,), batch.depths)
    payload = torch.cat(
        [
            color_payload,
            mf * normals,
            mf * scene.albedo,
            (maskf * scene.roughness).unsqueeze(-1),
            (maskf * scene.metallic).unsqueeze(-1),
            depth_payload.unsqueeze(-1),
        ],
        dim=-1,
    )[batch.source]

    blended, alpha = _blend_image(batch, payload, cam.width, cam.height, tile_size, full_lists)
    color = blended[..., 0:3] + (1.0 - alpha).unsqueeze(-1) * background
    depth = blended[..., 11]
    if mode == "depth":
        color = depth.unsqueeze(-1).expand(-1, -1, 3) + (1.0 - alpha).unsqueeze(-1) * background
    return FrameBuffers(
        color=color,
        alpha=alpha,
        depth=depth,
        normal=blended[..., 3:6],
        albedo=blended[..., 6:9],
        roughness=blended[..., 9],
        metallic=blended[..., 10],
    )


def render_reference(*args, **kwargs) -> FrameBuffers:
    """Per-pixel full-list renderer used as the tiling oracle."""
    kwargs["full_lists"] = True
    return render(*args, **kwargs)
