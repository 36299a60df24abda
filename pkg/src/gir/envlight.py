"""Environment lighting: equirectangular maps, split-sum precomputation,
and the learnable map generator.

The environment is a lat-long radiance image with +z mapped to the top row
and azimuth wrapping horizontally. Specular shading uses the split-sum
factorization: a chain of GGX-prefiltered copies of the map indexed by
roughness, and a 2D lookup table of Fresnel scale/bias factors. Diffuse
shading uses a small cosine-convolved irradiance map.

Everything here is built from differentiable torch ops so gradients reach
the environment texels (and through them the generator) during fitting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from . import imageio
from .math3d import orthonormal_basis, normalize

_CHUNK = 1 << 21  # max sample points handled in one tensor op


@dataclass
class EnvironmentMap:
    """Equirectangular radiance map with the 2:1 aspect invariant."""

    data: torch.Tensor  # (H, 2H, 3), non-negative

    def __post_init__(self) -> None:
        if self.data.dim() != 3 or self.data.shape[2] != 3:
            raise ValueError(f"environment map must be (H, W, 3), got {tuple(self.data.shape)}")
        h, w = self.data.shape[:2]
        if w != 2 * h:
            raise ValueError(f"environment map must have W = 2H, got {h}x{w}")
        if not bool(torch.isfinite(self.data).all()) or bool((self.data < 0).any()):
            raise ValueError("environment radiance must be finite and non-negative")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @staticmethod
    def from_file(path: str | Path, dtype: torch.dtype = torch.float32) -> "EnvironmentMap":
        return EnvironmentMap(torch.from_numpy(imageio.load_hdr(path)).to(dtype))

    def to_file(self, path: str | Path) -> None:
        imageio.save_hdr(path, self.data.detach().cpu().numpy())


def direction_grid(h: int, w: int, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Unit directions at texel centers of an (h, w) lat-long map."""
    v = (torch.arange(h, dtype=torch.float64) + 0.5) / h
    u = (torch.arange(w, dtype=torch.float64) + 0.5) / w
    theta = v * math.pi  # 0 at +z (top row)
    phi = u * 2.0 * math.pi - math.pi
    st, ct = torch.sin(theta), torch.cos(theta)
    dirs = torch.stack(
        [
            st[:, None] * torch.cos(phi)[None, :],
            st[:, None] * torch.sin(phi)[None, :],
            ct[:, None].expand(h, w),
        ],
        dim=-1,
    )
    return dirs.to(dtype)


def dirs_to_uv(dirs: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Continuous lat-long coordinates in [0, 1] for unit directions."""
    x, y, z = dirs.unbind(-1)
    # atan2 has a NaN gradient at (0, 0) and acos an infinite one at |z| = 1;
    # directions that reach here can carry gradients (reflection vectors,
    # normals), so pin the azimuth at the poles and flatten acos just inside
    # the domain. atan2(0, 1) == atan2(0, 0), so pole values are unchanged.
    polar = (x * x + y * y) < 1e-16
    xs = torch.where(polar, torch.ones_like(x), x)
    ys = torch.where(polar, torch.zeros_like(y), y)
    u = (torch.atan2(ys, xs) + math.pi) / (2.0 * math.pi)
    v = torch.acos(z.clamp(-1.0 + 1e-7, 1.0 - 1e-7)) / math.pi
    return u, v


def _env_data(env: "torch.Tensor | EnvironmentMap") -> torch.Tensor:
    return env.data if isinstance(env, EnvironmentMap) else env


def sample_env(env: "torch.Tensor | EnvironmentMap", dirs: torch.Tensor) -> torch.Tensor:
    """Bilinear lat-long lookup, wrapping in azimuth and clamping at poles.

    Args:
        env: (H, W, 3) radiance texels (or an EnvironmentMap).
        dirs: (..., 3) unit directions.

    Returns:
        (..., 3) interpolated radiance; differentiable in both arguments.
    """
    env = _env_data(env)
    h, w = env.shape[:2]
    u, v = dirs_to_uv(dirs)
    x = u * w - 0.5
    y = (v * h - 0.5).clamp(0.0, h - 1.0)
    x0 = torch.floor(x)
    y0 = torch.floor(y)
    fx = (x - x0).unsqueeze(-1)
    fy = (y - y0).unsqueeze(-1)
    j0 = x0.long() % w
    j1 = (x0.long() + 1) % w
    i0 = y0.long().clamp(0, h - 1)
    i1 = (y0.long() + 1).clamp(0, h - 1)
    flat = env.reshape(-1, 3)
    v00 = flat[(i0 * w + j0).reshape(-1)].reshape(*i0.shape, 3)
    v01 = flat[(i0 * w + j1).reshape(-1)].reshape(*i0.shape, 3)
    v10 = flat[(i1 * w + j0).reshape(-1)].reshape(*i0.shape, 3)
    v11 = flat[(i1 * w + j1).reshape(-1)].reshape(*i0.shape, 3)
    top = v00 * (1 - fx) + v01 * fx
    bot = v10 * (1 - fx) + v11 * fx
    return top * (1 - fy) + bot * fy


def hammersley(n: int, seed: int = 0, dtype: torch.dtype = torch.float64) -> torch.Tensor:
    """(n, 2) low-discrepancy points with a seeded toroidal shift."""
    i = torch.arange(n, dtype=torch.int64)
    u1 = (i.to(torch.float64) + 0.5) / n
    bits = i.numpy().astype(np.uint32)
    bits = (bits << np.uint32(16)) | (bits >> np.uint32(16))
    bits = ((bits & np.uint32(0x55555555)) << np.uint32(1)) | ((bits & np.uint32(0xAAAAAAAA)) >> np.uint32(1))
    bits = ((bits & np.uint32(0x33333333)) << np.uint32(2)) | ((bits & np.uint32(0xCCCCCCCC)) >> np.uint32(2))
    bits = ((bits & np.uint32(0x0F0F0F0F)) << np.uint32(4)) | ((bits & np.uint32(0xF0F0F0F0)) >> np.uint32(4))
    bits = ((bits & np.uint32(0x00FF00FF)) << np.uint32(8)) | ((bits & np.uint32(0xFF00FF00)) >> np.uint32(8))
    u2 = torch.from_numpy(bits.astype(np.float64) * 2.3283064365386963e-10)
    gen = torch.Generator().manual_seed(seed)
    shift = torch.rand(2, generator=gen, dtype=torch.float64)
    pts = torch.stack([(u1 + shift[0]) % 1.0, (u2 + shift[1]) % 1.0], dim=-1)
    return pts.to(dtype)


def _ggx_half_vectors(samples: torch.Tensor, alpha: float) -> torch.Tensor:
    """Map 2D points to GGX-distributed half vectors around local +z."""
    u1, u2 = samples.unbind(-1)
    cos_t = torch.sqrt((1.0 - u2) / (1.0 + u2 * (alpha * alpha - 1.0)))
    sin_t = torch.sqrt((1.0 - cos_t * cos_t).clamp_min(0.0))
    phi = 2.0 * math.pi * u1
    return torch.stack([sin_t * torch.cos(phi), sin_t * torch.sin(phi), cos_t], dim=-1)


def _to_world(local: torch.Tensor, dirs: torch.Tensor) -> torch.Tensor:
    """Rotate local (+z up) sample sets into the frame of each direction.

    local is (S, 3); dirs is (T, 3); result is (T, S, 3).
    """
    t, bt = orthonormal_basis(dirs)
    return (
        t[:, None, :] * local[None, :, 0:1]
        + bt[:, None, :] * local[None, :, 1:2]
        + dirs[:, None, :] * local[None, :, 2:3]
    )


@dataclass
class MipChain:
    """Split-sum lighting tables for one environment map."""

    levels: list[torch.Tensor]  # level k: (H >> k, W >> k, 3)
    roughnesses: list[float]  # k / (num_levels - 1)
    irradiance: torch.Tensor  # (h, w, 3) cosine-convolved map


def prefilter_specular(
    env: "torch.Tensor | EnvironmentMap", num_levels: int = 6, samples: int = 128, seed: int = 0
) -> list[torch.Tensor]:
    """GGX-prefiltered copies of the map, resolution halved down to a floor.

    Level k targets roughness k / (num_levels - 1): each output texel is a
    weighted average of environment radiance around its direction, with half
    vectors importance-sampled from the GGX distribution (normal, view, and
    reflection directions all taken as the texel direction). Level height
    never drops below 16 rows (or the source height if smaller): coarser
    maps smear bright regions across the sphere, which biases rough lookups
    far more than the storage saves.

    Deterministic given (env, seed); differentiable with respect to env.
    """
    if num_levels < 2:
        raise ValueError("need at least 2 prefilter levels")
    env = _env_data(env)
    h, w = env.shape[:2]
    floor = min(h, 16)
    out: list[torch.Tensor] = []
    for k in range(num_levels):
        roughness = k / (num_levels - 1)
        alpha = roughness * roughness
        hk = max(2, floor, h >> k)
        wk = max(4, 2 * floor, w >> k)
        dirs = direction_grid(hk, wk, dtype=env.dtype).reshape(-1, 3)
        pts = hammersley(samples, seed=seed * 1000 + k, dtype=env.dtype)
        h_local = _ggx_half_vectors(pts, alpha)
        level = torch.empty(hk * wk, 3, dtype=env.dtype)
        chunk = max(1, _CHUNK // samples)
        pieces = []
        for start in range(0, dirs.shape[0], chunk):
            d = dirs[start : start + chunk]
            h_world = _to_world(h_local, d)
            l_dir = 2.0 * (d[:, None, :] * h_world).sum(-1, keepdim=True) * h_world - d[:, None, :]
            weight = (d[:, None, :] * l_dir).sum(-1).clamp_min(0.0)
            vals = sample_env(env, l_dir)
            num = (weight.unsqueeze(-1) * vals).sum(1)
            pieces.append(num / weight.sum(1).clamp_min(1e-9).unsqueeze(-1))
        level = torch.cat(pieces, dim=0)
        out.append(level.reshape(hk, wk, 3))
    return out


def compute_irradiance(
    env: "torch.Tensor | EnvironmentMap", out_hw: tuple[int, int] = (16, 32), samples: int = 256, seed: int = 0
) -> torch.Tensor:
    """Cosine-convolved irradiance map, stored as outgoing diffuse radiance.

    Each texel holds (1/pi) * integral of L(w) (n . w) dw for the texel's
    normal direction, estimated with cosine-weighted low-discrepancy samples
    (so a constant map reproduces itself exactly in expectation). Multiplying
    by albedo gives the diffuse shading term directly.
    """
    env = _env_data(env)
    hk, wk = out_hw
    if hk > env.shape[0] or wk > env.shape[1]:
        raise ValueError("irradiance resolution cannot exceed the environment's")
    dirs = direction_grid(hk, wk, dtype=env.dtype).reshape(-1, 3)
    pts = hammersley(samples, seed=seed * 1000 + 77, dtype=env.dtype)
    u1, u2 = pts.unbind(-1)
    cos_t = torch.sqrt((1.0 - u2).clamp_min(0.0))
    sin_t = torch.sqrt(u2.clamp_min(0.0))
    phi = 2.0 * math.pi * u1
    local = torch.stack([sin_t * torch.cos(phi), sin_t * torch.sin(phi), cos_t], dim=-1)
    chunk = max(1, _CHUNK // samples)
    pieces = []
    for start in range(0, dirs.shape[0], chunk):
        world = _to_world(local, dirs[start : start + chunk])
        pieces.append(sample_env(env, world).mean(1))
    return torch.cat(pieces, dim=0).reshape(hk, wk, 3)


def build_mip_chain(
    env: "torch.Tensor | EnvironmentMap",
    num_levels: int = 6,
    samples: int = 128,
    irradiance_hw: tuple[int, int] = (16, 32),
    irradiance_samples: int = 256,
    seed: int = 0,
) -> MipChain:
    levels = prefilter_specular(env, num_levels=num_levels, samples=samples, seed=seed)
    irr = compute_irradiance(env, out_hw=irradiance_hw, samples=irradiance_samples, seed=seed)
    rough = [k / (num_levels - 1) for k in range(num_levels)]
    return MipChain(levels=levels, roughnesses=rough, irradiance=irr)


def specular_lookup(mip: MipChain, dirs: torch.Tensor, roughness: torch.Tensor) -> torch.Tensor:
    """Trilinear radiance lookup: bilinear in each level, linear in roughness."""
    k = len(mip.levels)
    level_coord = roughness.clamp(0.0, 1.0) * (k - 1)
    l0 = torch.floor(level_coord).long().clamp(0, k - 1)
    l1 = (l0 + 1).clamp(0, k - 1)
    t = (level_coord - l0.to(roughness.dtype)).unsqueeze(-1)
    out = torch.zeros(dirs.shape[:-1] + (3,), dtype=dirs.dtype)
    for lv in range(k):
        in_lo = l0 == lv
        in_hi = l1 == lv
        if not bool(in_lo.any()) and not bool(in_hi.any()):
            continue
        vals = sample_env(mip.levels[lv], dirs)
        out = out + torch.where(in_lo.unsqueeze(-1), vals * (1 - t), torch.zeros_like(vals))
        out = out + torch.where(in_hi.unsqueeze(-1), vals * t, torch.zeros_like(vals))
    return out


def irradiance_lookup(mip: MipChain, normals: torch.Tensor) -> torch.Tensor:
    return sample_env(mip.irradiance, normals)


def _smith_g2(no_v: torch.Tensor, no_l: torch.Tensor, alpha: float) -> torch.Tensor:
    a2 = alpha * alpha
    lv = no_l * torch.sqrt(a2 + (1.0 - a2) * no_v * no_v)
    ll = no_v * torch.sqrt(a2 + (1.0 - a2) * no_l * no_l)
    return 2.0 * no_l * no_v / (lv + ll).clamp_min(1e-18)


def build_dfg_lut(res: int = 64, samples: int = 8192, seed: int = 0) -> torch.Tensor:
    """Split-sum BRDF integration table over (view cosine, roughness).

    Entry (i, j) integrates the GGX specular lobe (Smith height-correlated
    shadowing, Schlick Fresnel split out) for cos_v = (i + 0.5) / res and
    roughness = (j + 0.5) / res, giving the Fresnel (scale, bias) pair so
    that specular response = F0 * scale + bias. The default sample count
    keeps grazing-angle entries within ~0.005 of converged values; the
    table is built once per run so the cost does not matter.

    Returns:
        (res, res, 2) float32 tensor with entries in [0, 1].
    """
    pts = hammersley(samples, seed=seed)
    lut = torch.empty(res, res, 2, dtype=torch.float64)
    centers = (torch.arange(res, dtype=torch.float64) + 0.5) / res
    for j, roughness in enumerate(centers):
        alpha = float(roughness * roughness)
        h = _ggx_half_vectors(pts, alpha)  # (S, 3) around +z
        no_v = centers.clone()  # (res,)
        sin_v = torch.sqrt((1.0 - no_v * no_v).clamp_min(0.0))
        v = torch.stack([sin_v, torch.zeros_like(no_v), no_v], dim=-1)  # (res, 3)
        vo_h = (v[:, None, :] * h[None, :, :]).sum(-1)  # (res, S)
        l = 2.0 * vo_h.unsqueeze(-1) * h[None, :, :] - v[:, None, :]
        no_l = l[..., 2]
        front = no_l > 0
        no_h = h[:, 2].clamp_min(1e-12)
        g = _smith_g2(no_v.unsqueeze(-1).clamp_min(1e-6), no_l.clamp_min(1e-12), alpha)
        g_vis = g * vo_h.clamp_min(0.0) / (no_h[None, :] * no_v.unsqueeze(-1).clamp_min(1e-6))
        g_vis = torch.where(front, g_vis, torch.zeros_like(g_vis))
        fc = (1.0 - vo_h.clamp(0.0, 1.0)) ** 5
        lut[:, j, 0] = ((1.0 - fc) * g_vis).mean(-1)
        lut[:, j, 1] = (fc * g_vis).mean(-1)
    return lut.to(torch.float32)


def dfg_lookup(lut: torch.Tensor, cos_v: torch.Tensor, roughness: torch.Tensor) -> torch.Tensor:
    """Bilinear (scale, bias) lookup at (cos_v, roughness), clamped at edges."""
    res = lut.shape[0]
    x = (cos_v.clamp(0.0, 1.0) * res - 0.5).clamp(0.0, res - 1.0)
    y = (roughness.clamp(0.0, 1.0) * res - 0.5).clamp(0.0, res - 1.0)
    x0 = torch.floor(x).long()
    y0 = torch.floor(y).long()
    x1 = (x0 + 1).clamp(0, res - 1)
    y1 = (y0 + 1).clamp(0, res - 1)
    fx = (x - x0.to(cos_v.dtype)).unsqueeze(-1)
    fy = (y - y0.to(cos_v.dtype)).unsqueeze(-1)
    lut = lut.to(cos_v.dtype)
    v00 = lut[x0, y0]
    v01 = lut[x0, y1]
    v10 = lut[x1, y0]
    v11 = lut[x1, y1]
    return (v00 * (1 - fx) + v10 * fx) * (1 - fy) + (v01 * (1 - fx) + v11 * fx) * fy


def light_regularizer(env: "torch.Tensor | EnvironmentMap") -> torch.Tensor:
    """Mean per-texel deviation from gray: pushes lighting toward neutral
    color so reflectance, not light, explains image tint.

    Exactly zero for any map whose channels are equal texel-wise.
    """
    env = _env_data(env)
    # |c - mean| as |3c - sum| / 3: both 3*c and (c+c)+c round the same real
    # value once, so gray texels cancel bitwise and the result is exactly 0.
    dev = 3.0 * env - env.sum(dim=-1, keepdim=True)
    return (dev.abs() / 3.0).sum(dim=-1).mean()


class EnvGenerator(torch.nn.Module):
    """Fully convolutional generator that decodes a learnable lat-long embedding
    into a positive environment map.

    Each stage applies two 3x3 convolutions with LeakyReLU(0.01) and then a
    nearest-neighbor 2x upsample; a final 3x3 convolution with softplus maps
    to radiance. Horizontal padding is circular to respect azimuth wrap.
    """

    def __init__(
        self,
        embed_height: int = 16,
        embed_width: int = 32,
        embed_channels: int = 32,
        upsamples: int = 2,
        stage_channels: tuple[int, ...] | None = None,
        seed: int = 0,
    ) -> None:
        super().__init__()
        if embed_width != 2 * embed_height:
            raise ValueError("embedding grid must keep the 2:1 lat-long aspect")
        if stage_channels is None:
            base = [64, 32] + [16] * max(0, upsamples - 2)
            stage_channels = tuple(base[:upsamples])
        if len(stage_channels) != upsamples:
            raise ValueError("need one channel width per upsampling stage")
        self.out_height = embed_height << upsamples
        self.out_width = embed_width << upsamples
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            self.embedding = torch.nn.Parameter(
                0.1 * torch.randn(1, embed_channels, embed_height, embed_width)
            )
            convs = []
            c_in = embed_channels
            for c_out in stage_channels:
                convs.append(torch.nn.Conv2d(c_in, c_out, 3))
                convs.append(torch.nn.Conv2d(c_out, c_out, 3))
                c_in = c_out
            self.convs = torch.nn.ModuleList(convs)
            self.head = torch.nn.Conv2d(c_in, 3, 3)

    @staticmethod
    def _pad(x: torch.Tensor) -> torch.Tensor:
        x = F.pad(x, (1, 1, 0, 0), mode="circular")
        return F.pad(x, (0, 0, 1, 1), mode="replicate")

    def forward(self) -> torch.Tensor:
        x = self.embedding
        for i in range(0, len(self.convs), 2):
            x = F.leaky_relu(self.convs[i](self._pad(x)), 0.01)
            x = F.leaky_relu(self.convs[i + 1](self._pad(x)), 0.01)
            x = F.interpolate(x, scale_factor=2, mode="nearest")
        x = F.softplus(self.head(self._pad(x)))
        return x[0].permute(1, 2, 0)  # (H, W, 3)
