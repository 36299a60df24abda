"""Voxel occupancy grid and one-step occlusion queries.

The Gaussian cloud is rasterized into a binary grid sized to the scene
bounding sphere. Occlusion tests march fixed sample points along a ray and
report whether any lands in an occupied voxel; the diffuse variant averages
that over a hemisphere of rays. Queries carry no gradient by design: during
fitting the grid is rebuilt periodically and treated as a constant switch.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .math3d import ray_sphere_exit, sample_hemisphere
from .scene import GaussianScene, scene_bounding_sphere

_QUERY_CHUNK = 1 << 21


@dataclass
class OccupancyGrid:
    """Axis-aligned cubic voxelization covering the scene bounding sphere."""

    origin: torch.Tensor  # (3,) min corner, world units
    voxel_size: float
    occupancy: torch.Tensor  # (res, res, res) bool, indexed [ix, iy, iz]
    center: torch.Tensor  # bounding sphere center
    radius: float  # bounding sphere radius

    @property
    def res(self) -> int:
        return self.occupancy.shape[0]

    def contains(self, points: torch.Tensor) -> torch.Tensor:
        """True where a point lies in an occupied voxel (outside grid: False)."""
        res = self.res
        idx = torch.floor((points - self.origin) / self.voxel_size).long()
        inside = ((idx >= 0) & (idx < res)).all(-1)
        idx = idx.clamp(0, res - 1)
        flat = (idx[..., 0] * res + idx[..., 1]) * res + idx[..., 2]
        return self.occupancy.reshape(-1)[flat] & inside


def voxelize(
    scene: GaussianScene, res: int = 128, opacity_threshold: float = 0.5
) -> OccupancyGrid:
    """Rasterize high-opacity Gaussians into a binary grid.

    Each Gaussian with opacity at or above the threshold occupies every
    voxel touched by its axis-aligned 3-sigma box, with per-axis half-size
    3 * sqrt(Sigma_kk) from the full covariance diagonal.

    Raises if res < 8 or if no Gaussian passes the opacity filter.
    """
    if res < 8:
        raise ValueError("grid resolution must be at least 8")
    center, radius = scene_bounding_sphere(scene)
    keep = scene.opacities() >= opacity_threshold
    if not bool(keep.any()):
        raise ValueError("no occupiers: every Gaussian is below the opacity threshold")
    origin = (center - radius).to(torch.float64)
    voxel = 2.0 * radius / res
    mu = scene.positions[keep].detach().to(torch.float64)
    cov = scene.covariances()[keep].detach().to(torch.float64)
    half = 3.0 * torch.sqrt(torch.diagonal(cov, dim1=-2, dim2=-1).clamp_min(0.0))
    lo = torch.floor((mu - half - origin) / voxel).long().clamp(0, res - 1)
    hi = torch.floor((mu + half - origin) / voxel).long().clamp(0, res - 1)
    occ = torch.zeros(res, res, res, dtype=torch.bool)
    for (x0, y0, z0), (x1, y1, z1) in zip(lo.tolist(), hi.tolist()):
        occ[x0 : x1 + 1, y0 : y1 + 1, z0 : z1 + 1] = True
    return OccupancyGrid(
        origin=origin.to(scene.dtype),
        voxel_size=float(voxel),
        occupancy=occ,
        center=center.to(scene.dtype),
        radius=radius,
    )


def trace_occlusion(
    grid: OccupancyGrid,
    x: torch.Tensor,
    dirs: torch.Tensor,
    t_max: torch.Tensor | float,
    n_samples: int = 64,
    self_radius: torch.Tensor | float = 0.0,
) -> torch.Tensor:
    """March equally spaced samples along rays and test voxel occupancy.

    Sample distances t_k lie in (self_radius, t_max]: the half-open start
    skips the querying Gaussian's own extent. Rays whose span is empty
    (t_max <= self_radius) report unoccluded.

    Args:
        x: (..., 3) ray origins.
        dirs: (..., 3) unit ray directions.
        t_max: scalar or (...,) far limits.
        n_samples: fixed sample count per ray.
        self_radius: scalar or (...,) near exclusion distance.

    Returns:
        (...,) bool, True where any sample is occupied.
    """
    t_max = torch.as_tensor(t_max, dtype=x.dtype).expand(x.shape[:-1])
    self_radius = torch.as_tensor(self_radius, dtype=x.dtype).expand(x.shape[:-1])
    span = t_max - self_radius
    frac = (
        torch.arange(1, n_samples + 1, dtype=x.dtype) / n_samples
    )  # (0, 1] so t_max itself is sampled
    ts = self_radius.unsqueeze(-1) + span.clamp_min(0.0).unsqueeze(-1) * frac
    pts = x.unsqueeze(-2) + dirs.unsqueeze(-2) * ts.unsqueeze(-1)
    flat = pts.reshape(-1, 3)
    hits = torch.empty(flat.shape[0], dtype=torch.bool)
    for start in range(0, flat.shape[0], _QUERY_CHUNK):
        hits[start : start + _QUERY_CHUNK] = grid.contains(flat[start : start + _QUERY_CHUNK])
    occluded = hits.reshape(pts.shape[:-1]).any(-1)
    return occluded & (span > 0)


def diffuse_visibility(
    grid: OccupancyGrid,
    x: torch.Tensor,
    n: torch.Tensor,
    n_rays: int = 128,
    n_samples: int = 64,
    seed: int = 0,
    self_radius: torch.Tensor | float = 0.0,
) -> torch.Tensor:
    """Fraction of hemisphere rays around each normal that escape the scene.

    Rays extend to the bounding sphere exit; deterministic for a fixed seed.

    Args:
        x: (..., 3) query points.
        n: (..., 3) unit normals.

    Returns:
        (...,) visibility in [0, 1].
    """
    rays = sample_hemisphere(n, n_rays, seed=seed)  # (..., R, 3)
    origins = x.unsqueeze(-2).expand_as(rays)
    t_exit = ray_sphere_exit(origins, rays, grid.center, grid.radius)
    self_r = torch.as_tensor(self_radius, dtype=x.dtype).expand(x.shape[:-1])
    occ = trace_occlusion(
        grid, origins, rays, t_exit, n_samples=n_samples, self_radius=self_r.unsqueeze(-1)
    )
    return 1.0 - occ.to(x.dtype).mean(-1)


def direct_visibility(
    grid: OccupancyGrid,
    x: torch.Tensor,
    wi: torch.Tensor,
    n_samples: int = 64,
    self_radius: torch.Tensor | float = 0.0,
) -> torch.Tensor:
    """Binary light visibility: 1 - trace_occlusion out to the sphere exit."""
    t_exit = ray_sphere_exit(x, wi, grid.center, grid.radius)
    occ = trace_occlusion(grid, x, wi, t_exit, n_samples=n_samples, self_radius=self_radius)
    return 1.0 - occ.to(x.dtype)


def dump_grid(grid: OccupancyGrid, path: str | Path) -> None:
    """Debug dump: 20-byte header (res u32, origin 3xf32, voxel f32 LE),
    then the bit array packed in x-major order."""
    header = struct.pack(
        "<Iffff",
        grid.res,
        float(grid.origin[0]),
        float(grid.origin[1]),
        float(grid.origin[2]),
        grid.voxel_size,
    )
    bits = np.packbits(grid.occupancy.numpy().astype(np.uint8).reshape(-1))
    Path(path).write_bytes(header + bits.tobytes())
