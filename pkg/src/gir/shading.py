"""Physically based per-Gaussian shading.

Colors combine a Lambertian diffuse term driven by the irradiance map and a
GGX specular term evaluated with the split-sum factorization: prefiltered
environment radiance looked up along the reflection direction, multiplied
by the pre-integrated Fresnel response from the DFG table. When a
reflection ray is blocked by scene geometry, the radiance lookup is
replaced by the Gaussian's trainable spherical-harmonic indirect term
evaluated at the view direction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .envlight import MipChain, dfg_lookup, irradiance_lookup, specular_lookup
from .math3d import ToneMapParams, normalize, ray_sphere_exit, reflect_clamped, sh_eval
from .occlusion import OccupancyGrid, diffuse_visibility, trace_occlusion
from .scene import GaussianScene

DIELECTRIC_F0 = 0.04


@dataclass
class ShadingContext:
    """Immutable lookup state shared by every Gaussian in a render pass."""

    mip: MipChain
    dfg: torch.Tensor  # (res, res, 2)
    tone: ToneMapParams
    grid: OccupancyGrid | None = None
    enable_indirect: bool = True
    enable_diffuse_occlusion: bool = True
    occlusion_samples: int = 64
    visibility_rays: int = 128
    seed: int = 0


def fresnel_base(albedo: torch.Tensor, metallic: torch.Tensor) -> torch.Tensor:
    """F0 = mix(0.04, albedo, metallic), the metallic-workflow base reflectance."""
    m = metallic.unsqueeze(-1)
    return DIELECTRIC_F0 * (1.0 - m) + albedo * m


def brdf_eval(
    albedo: torch.Tensor,
    roughness: torch.Tensor,
    metallic: torch.Tensor,
    n: torch.Tensor,
    wi: torch.Tensor,
    wo: torch.Tensor,
) -> torch.Tensor:
    """Reference BRDF: Lambertian diffuse plus GGX microfacet specular.

    f = (1-m) a/pi + D F G / (4 (n.wi)(n.wo)) with alpha = roughness^2,
    Schlick Fresnel around F0 = mix(0.04, a, m), and height-correlated
    Smith shadowing. Used as the ground truth the split-sum pipeline is
    tested against; rendering itself goes through the prefiltered path.

    Raises if any direction pair is back-facing. Grazing denominators are
    clamped at 1e-7.
    """
    no_l = (n * wi).sum(-1)
    no_v = (n * wo).sum(-1)
    if not bool((no_l > 0).all()) or not bool((no_v > 0).all()):
        raise ValueError("brdf_eval requires front-facing wi and wo")
    h = normalize(wi + wo)
    no_h = (n * h).sum(-1).clamp(0.0, 1.0)
    vo_h = (wo * h).sum(-1).clamp_min(0.0)
    alpha = (roughness * roughness).clamp_min(1e-6)
    a2 = alpha * alpha
    d = a2 / (math.pi * ((a2 - 1.0) * no_h * no_h + 1.0) ** 2)
    f0 = fresnel_base(albedo, metallic)
    fresnel = f0 + (1.0 - f0) * (1.0 - vo_h).unsqueeze(-1) ** 5
    lam_v = no_l * torch.sqrt(a2 + (1.0 - a2) * no_v * no_v)
    lam_l = no_v * torch.sqrt(a2 + (1.0 - a2) * no_l * no_l)
    g = 2.0 * no_l * no_v / (lam_v + lam_l).clamp_min(1e-18)
    spec = (d * g / (4.0 * no_l * no_v).clamp_min(1e-7)).unsqueeze(-1) * fresnel
    diff = (1.0 - metallic).unsqueeze(-1) * albedo / math.pi
    return diff + spec


def shade_diffuse(
    albedo: torch.Tensor,
    metallic: torch.Tensor,
    normals: torch.Tensor,
    ctx: ShadingContext,
    visibility: torch.Tensor | None = None,
) -> torch.Tensor:
    """Diffuse component: albedo * (1 - metallic) * visibility * irradiance(n)."""
    irr = irradiance_lookup(ctx.mip, normals)
    out = albedo * (1.0 - metallic).unsqueeze(-1) * irr
    if visibility is not None:
        out = out * visibility.unsqueeze(-1)
    return out


def shade_specular(
    albedo: torch.Tensor,
    roughness: torch.Tensor,
    metallic: torch.Tensor,
    normals: torch.Tensor,
    wo: torch.Tensor,
    ctx: ShadingContext,
    occluded: torch.Tensor | None = None,
    indirect_sh: torch.Tensor | None = None,
) -> torch.Tensor:
    """Split-sum specular component.

    The radiance factor is the prefiltered environment looked up along the
    mirror direction, or the indirect SH evaluated at the view direction
    where ``occluded`` is set; the BRDF factor is F0 * scale + bias from
    the DFG table at (n . wo, roughness).

    Raises on back-facing inputs (n . wo <= 0).
    """
    cos_v = (normals * wo).sum(-1)
    if not bool((cos_v > 0).all()):
        raise ValueError("shade_specular requires front-facing views (n . wo > 0)")
    refl = reflect_clamped(normals, wo)
    radiance = specular_lookup(ctx.mip, refl, roughness)
    if occluded is not None:
        if indirect_sh is None:
            indirect_sh = torch.zeros(normals.shape[:-1] + (3, 16), dtype=normals.dtype)
        indirect = sh_eval(indirect_sh, wo)
        radiance = torch.where(occluded.unsqueeze(-1), indirect, radiance)
    scale_bias = dfg_lookup(ctx.dfg, cos_v, roughness)
    f0 = fresnel_base(albedo, metallic)
    return radiance * (f0 * scale_bias[..., 0:1] + scale_bias[..., 1:2])


def occlusion_state(
    scene: GaussianScene, cam_origin: torch.Tensor, ctx: ShadingContext
) -> tuple[torch.Tensor | None, torch.Tensor | None]:
    """Per-Gaussian occlusion flags and diffuse visibility for one viewpoint.

    Returns (occluded (N,) bool or None, visibility (N,) or None). Both are
    computed without gradient: occlusion is a piecewise-constant switch.
    """
    if ctx.grid is None:
        return None, None
    occluded = None
    vis = None
    with torch.no_grad():
        mu = scene.positions
        self_radius = 3.0 * scene.scales().max(-1).values
        if ctx.enable_indirect:
            n = scene.normals()
            wo = normalize(cam_origin - mu)
            refl = reflect_clamped(n, wo)
            t_exit = ray_sphere_exit(mu, refl, ctx.grid.center, ctx.grid.radius)
            occluded = trace_occlusion(
                ctx.grid, mu, refl, t_exit, ctx.occlusion_samples, self_radius
            )
        if ctx.enable_diffuse_occlusion:
            vis = diffuse_visibility(
                ctx.grid,
                mu,
                scene.normals(),
                n_rays=ctx.visibility_rays,
                n_samples=ctx.occlusion_samples,
                seed=ctx.seed,
                self_radius=self_radius,
            )
    return occluded, vis


def shade(
    scene: GaussianScene,
    cam_origin: torch.Tensor,
    ctx: ShadingContext,
    occluded: torch.Tensor | None = None,
    diffuse_vis: torch.Tensor | None = None,
) -> torch.Tensor:
    """Linear HDR color of every Gaussian as seen from ``cam_origin``.

    Back-facing Gaussians are shaded with a clamped view cosine instead of
    raising: the rasterizer's directional mask decides whether that color is
    ever seen. Occlusion inputs can be precomputed (training caches them
    between grid rebuilds); otherwise they are queried from the context.

    Tone mapping is not applied here; the rasterizer maps per-Gaussian
    colors to display space inside the blend.
    """
    if occluded is None and diffuse_vis is None:
        occluded, diffuse_vis = occlusion_state(scene, cam_origin, ctx)
    n = scene.normals()
    wo = normalize(cam_origin - scene.positions)
    cos_v = (n * wo).sum(-1).clamp_min(1e-4)
    refl = reflect_clamped(n, wo)
    radiance = specular_lookup(ctx.mip, refl, scene.roughness)
    if occluded is not None:
        indirect = sh_eval(scene.indirect_sh, wo)
        radiance = torch.where(occluded.unsqueeze(-1), indirect, radiance)
    scale_bias = dfg_lookup(ctx.dfg, cos_v, scene.roughness)
    f0 = fresnel_base(scene.albedo, scene.metallic)
    specular = radiance * (f0 * scale_bias[..., 0:1] + scale_bias[..., 1:2])
    diffuse = shade_diffuse(scene.albedo, scene.metallic, n, ctx, diffuse_vis)
    return diffuse + specular
