"""Losses, optimizer state, density control, and the training loop.

Training fits per-Gaussian PBR parameters and the environment generator to
posed images. The loop is deterministic for a fixed config seed: view
order, background colors, and densification draws all come from seeded
generators, and every reduction runs on a fixed tensor layout.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .datasets import DatasetManifest
from .envlight import (
    EnvGenerator,
    EnvironmentMap,
    build_dfg_lut,
    build_mip_chain,
    light_regularizer,
)
from .losses import loss_reconstruction, loss_smooth
from .math3d import ToneMapParams, quat_normalize, quat_to_rotmat
from .occlusion import OccupancyGrid, diffuse_visibility, voxelize
from .plyio import load_scene, save_scene
from .rasterizer import render
from .scene import TRAINABLE_FIELDS, GaussianScene
from .shading import ShadingContext, occlusion_state

# Parameter groups whose values are projected back to a valid set after
# every optimizer step.
_CLAMP01_GROUPS = ("albedo", "roughness", "metallic")


@dataclass
class TrainConfig:
    """Hyperparameters for one fitting run."""

    iterations: int = 3000
    seed: int = 0
    lr_positions: float = 1.6e-4
    lr_positions_final: float = 1.6e-6
    lr_log_scales: float = 5e-3
    lr_rotations: float = 1e-3
    lr_opacity_logits: float = 5e-2
    lr_albedo: float = 5e-3
    lr_roughness: float = 5e-3
    lr_metallic: float = 5e-3
    lr_indirect_sh: float = 2.5e-3
    lr_env: float = 3e-3
    lambda_ssim: float = 0.2
    lambda_smooth: float = 0.01
    lambda_light: float = 0.005
    mask_activation: int = 500
    grid_rebuild_period: int = 500
    grid_resolution: int = 128
    densify_interval: int = 300
    densify_start: int = 600
    densify_stop: int = 2000
    densify_grad_threshold: float = 2e-4
    densify_scale_fraction: float = 0.01
    prune_opacity: float = 0.005
    tile_size: int = 16
    prefilter_levels: int = 5
    prefilter_samples: int = 16
    irradiance_samples: int = 64
    irradiance_height: int = 16
    dfg_resolution: int = 64
    dfg_samples: int = 8192
    occlusion_samples: int = 64
    visibility_rays: int = 64
    env_embed_height: int = 16
    env_embed_channels: int = 32
    env_upsamples: int = 2
    gamma: float = 2.4

    def __post_init__(self) -> None:
        for name in ("lambda_ssim", "lambda_smooth", "lambda_light"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.mask_activation > self.iterations and self.iterations > 0:
            raise ValueError("mask activation iteration exceeds total iterations")


@dataclass
class LossReport:
    """Per-iteration loss parts; total is their weighted sum."""

    iteration: int
    total: float
    mae: float
    dssim: float
    smooth_normal: float
    smooth_albedo: float
    smooth_roughness: float
    smooth_metallic: float
    light_reg: float
    num_gaussians: int

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class AdamState:
    """First/second moments and step counts, keyed by parameter group."""

    exp_avg: dict[str, torch.Tensor] = field(default_factory=dict)
    exp_avg_sq: dict[str, torch.Tensor] = field(default_factory=dict)
    steps: dict[str, int] = field(default_factory=dict)


def compute_gradients(
    loss: torch.Tensor, params: dict[str, torch.Tensor]
) -> dict[str, torch.Tensor]:
    """Backprop the loss into the named parameters; NaN gradients abort."""
    names = list(params)
    grads = torch.autograd.grad(
        loss, [params[n] for n in names], allow_unused=True
    )
    out = {}
    for name, grad in zip(names, grads):
        if grad is None:
            grad = torch.zeros_like(params[name])
        elif not torch.isfinite(grad).all():
            raise FloatingPointError(f"non-finite gradient in parameter group {name!r}")
        out[name] = grad
    return out


def adam_step(
    params: dict[str, torch.Tensor],
    grads: dict[str, torch.Tensor],
    state: AdamState,
    lrs: dict[str, float],
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-15,
) -> dict[str, torch.Tensor]:
    """One Adam update per group, then per-group range projections.

    Returns new parameter tensors (inputs are not mutated). Albedo,
    roughness, and metallic are clamped to [0, 1]; rotations renormalized.
    """
    new_params = {}
    with torch.no_grad():
        for name, p in params.items():
            g = grads[name]
            if name not in state.exp_avg:
                state.exp_avg[name] = torch.zeros_like(p)
                state.exp_avg_sq[name] = torch.zeros_like(p)
                state.steps[name] = 0
            state.steps[name] += 1
            t = state.steps[name]
            m = state.exp_avg[name].mul_(beta1).add_(g, alpha=1 - beta1)
            v = state.exp_avg_sq[name].mul_(beta2).addcmul_(g, g, value=1 - beta2)
            m_hat = m / (1 - beta1**t)
            v_hat = v / (1 - beta2**t)
            new_p = p - lrs[name] * m_hat / (v_hat.sqrt() + eps)
            if name in _CLAMP01_GROUPS:
                new_p = new_p.clamp(0.0, 1.0)
            elif name == "rotations":
                new_p = quat_normalize(new_p)
            new_params[name] = new_p
    return new_params


def _position_lr(cfg: TrainConfig, iteration: int) -> float:
    if cfg.iterations <= 1:
        return cfg.lr_positions
    frac = (iteration - 1) / max(cfg.iterations - 1, 1)
    return cfg.lr_positions * (cfg.lr_positions_final / cfg.lr_positions) ** frac


def _scene_extent(scene: GaussianScene) -> float:
    center = scene.positions.mean(dim=0, keepdim=True)
    return float((scene.positions - center).norm(dim=-1).max().clamp_min(1e-6))


def densify_and_prune(
    scene: GaussianScene,
    grad_norms: torch.Tensor,
    state: AdamState,
    iteration: int,
    grad_threshold: float,
    scale_fraction: float,
    prune_opacity: float,
) -> tuple[GaussianScene, torch.Tensor]:
    """Clone small / split large high-gradient Gaussians and prune faint ones.

    Returns the new scene plus the index of each row's parent in the old
    scene, so per-Gaussian caches can be remapped. Optimizer moments of new
    rows are reset to zero; surviving rows keep theirs.
    """
    n = len(scene)
    device_scales = scene.scales()
    extent = _scene_extent(scene)
    hot = grad_norms > grad_threshold
    big = device_scales.max(dim=-1).values > scale_fraction * extent
    split = hot & big
    clone = hot & ~big
    keep = scene.opacities() >= prune_opacity
    # Split sources are replaced (two children), so drop the originals.
    keep = keep & ~split

    idx_keep = torch.nonzero(keep, as_tuple=False).squeeze(-1)
    idx_clone = torch.nonzero(clone & keep, as_tuple=False).squeeze(-1)
    idx_split = torch.nonzero(split, as_tuple=False).squeeze(-1)

    gen = torch.Generator().manual_seed(scene.seed * 1000003 + iteration)
    pieces = [scene.select(idx_keep)]
    parents = [idx_keep]
    if idx_clone.numel():
        pieces.append(scene.select(idx_clone))
        parents.append(idx_clone)
    if idx_split.numel():
        src = scene.select(idx_split)
        rot = torch.cat([src.rotations, src.rotations], dim=0)
        scales = torch.cat([src.scales(), src.scales()], dim=0)
        z = torch.randn(2 * len(src), 3, generator=gen, dtype=scene.dtype)
        offsets = (quat_to_rotmat(rot) @ (scales * z).unsqueeze(-1)).squeeze(-1)
        new_backface = 0.2 + 0.6 * torch.rand(
            2 * len(src), 3, generator=gen, dtype=scene.dtype
        )
        child = GaussianScene(
            positions=torch.cat([src.positions, src.positions], dim=0) + offsets,
            log_scales=torch.cat([src.log_scales, src.log_scales], dim=0)
            - math.log(1.6),
            rotations=rot,
            opacity_logits=torch.cat([src.opacity_logits, src.opacity_logits], dim=0),
            albedo=torch.cat([src.albedo, src.albedo], dim=0),
            roughness=torch.cat([src.roughness, src.roughness], dim=0),
            metallic=torch.cat([src.metallic, src.metallic], dim=0),
            indirect_sh=torch.cat([src.indirect_sh, src.indirect_sh], dim=0),
            backface_colors=new_backface,
            seed=scene.seed,
        )
        pieces.append(child)
        parents.append(torch.cat([idx_split, idx_split], dim=0))
    merged = {}
    for fname in TRAINABLE_FIELDS + ("backface_colors",):
        merged[fname] = torch.cat([getattr(p, fname) for p in pieces], dim=0)
    new_scene = GaussianScene(seed=scene.seed, **merged)
    parent_idx = torch.cat(parents, dim=0)

    n_kept = idx_keep.numel()
    for name in list(state.exp_avg):
        if name not in TRAINABLE_FIELDS:
            continue
        old_m, old_v = state.exp_avg[name], state.exp_avg_sq[name]
        if old_m.shape[0] != n:
            continue
        fresh = parent_idx.shape[0] - n_kept
        zeros_m = torch.zeros(fresh, *old_m.shape[1:], dtype=old_m.dtype)
        zeros_v = torch.zeros(fresh, *old_v.shape[1:], dtype=old_v.dtype)
        state.exp_avg[name] = torch.cat([old_m[idx_keep], zeros_m], dim=0)
        state.exp_avg_sq[name] = torch.cat([old_v[idx_keep], zeros_v], dim=0)
    return new_scene, parent_idx


def save_checkpoint(
    out_dir: str | Path,
    scene: GaussianScene,
    generator: EnvGenerator,
    config: TrainConfig,
) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_scene(scene, out_dir / "scene.ply")
    torch.save(generator.state_dict(), out_dir / "generator.pt")
    (out_dir / "config.json").write_text(json.dumps(dataclasses.asdict(config), indent=1))


def load_checkpoint(out_dir: str | Path) -> tuple[GaussianScene, EnvGenerator, TrainConfig]:
    out_dir = Path(out_dir)
    config = TrainConfig(**json.loads((out_dir / "config.json").read_text()))
    scene = load_scene(out_dir / "scene.ply", seed=config.seed)
    generator = EnvGenerator(
        embed_height=config.env_embed_height,
        embed_width=2 * config.env_embed_height,
        embed_channels=config.env_embed_channels,
        upsamples=config.env_upsamples,
        seed=config.seed,
    )
    generator.load_state_dict(torch.load(out_dir / "generator.pt", weights_only=True))
    return scene, generator, config


class _OcclusionCache:
    """Holds the voxel grid plus frozen occlusion results between rebuilds."""

    def __init__(self) -> None:
        self.grid: OccupancyGrid | None = None
        self.diffuse_vis: torch.Tensor | None = None
        self.specular: dict[int, torch.Tensor] = {}

    def rebuild(self, scene: GaussianScene, ctx: ShadingContext, resolution: int) -> None:
        self.grid = voxelize(scene, res=resolution)
        ctx.grid = self.grid
        self.specular.clear()
        with torch.no_grad():
            self.diffuse_vis = diffuse_visibility(
                self.grid,
                scene.positions,
                scene.normals(),
                n_rays=ctx.visibility_rays,
                n_samples=ctx.occlusion_samples,
                seed=ctx.seed,
                self_radius=3.0 * scene.scales().max(dim=-1).values,
            )

    def remap(self, parent_idx: torch.Tensor) -> None:
        if self.diffuse_vis is not None:
            self.diffuse_vis = self.diffuse_vis[parent_idx]
        self.specular = {
            view: flags[parent_idx] for view, flags in self.specular.items()
        }

    def specular_for_view(
        self, view: int, scene: GaussianScene, cam_origin: torch.Tensor, ctx: ShadingContext
    ) -> torch.Tensor | None:
        if self.grid is None:
            return None
        if view not in self.specular:
            occluded, _ = occlusion_state(scene, cam_origin, ctx)
            self.specular[view] = occluded
        return self.specular[view]


def train(
    dataset: DatasetManifest,
    config: TrainConfig,
    initial_scene: GaussianScene,
    generator: EnvGenerator | None = None,
    out_dir: str | Path | None = None,
    log_path: str | Path | None = None,
) -> tuple[GaussianScene, EnvGenerator, list[LossReport]]:
    """Fit the scene and environment to the dataset per the config schedule.

    The schedule: directional masking is forced off before the activation
    iteration; the occupancy grid is first built at the rebuild period (so
    indirect and visibility terms switch on there) and refreshed at that
    cadence; targets and renders share a random background each iteration;
    densification runs on its own interval. Returns the fitted scene, the
    generator, and per-iteration loss reports.
    """
    if len(dataset) < 2:
        raise ValueError("training requires at least 2 posed images")
    if generator is None:
        generator = EnvGenerator(
            embed_height=config.env_embed_height,
            embed_width=2 * config.env_embed_height,
            embed_channels=config.env_embed_channels,
            upsamples=config.env_upsamples,
            seed=config.seed,
        )
    logs: list[LossReport] = []
    if config.iterations == 0:
        return initial_scene, generator, logs

    dtype = initial_scene.dtype
    targets = []
    for view in dataset.views:
        rgb, alpha = view.load_image(dtype)
        targets.append((rgb, alpha, view.camera))

    tone = ToneMapParams(gamma=config.gamma)
    dfg = build_dfg_lut(
        res=config.dfg_resolution, samples=config.dfg_samples, seed=config.seed
    )
    ctx = ShadingContext(
        mip=None,
        dfg=dfg,
        tone=tone,
        grid=None,
        occlusion_samples=config.occlusion_samples,
        visibility_rays=config.visibility_rays,
        seed=config.seed,
    )
    cache = _OcclusionCache()

    params = {
        name: getattr(initial_scene, name).detach().clone().requires_grad_(True)
        for name in TRAINABLE_FIELDS
    }
    backface = initial_scene.backface_colors.clone()
    gen_params = dict(generator.named_parameters())
    state = AdamState()
    loop_gen = torch.Generator().manual_seed(config.seed)
    grad_accum = torch.zeros(len(initial_scene), dtype=dtype)
    grad_count = torch.zeros(len(initial_scene), dtype=dtype)
    order: list[int] = []
    if log_path is not None:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        log_file = open(log_path, "w")
    else:
        log_file = None

    try:
        for iteration in range(1, config.iterations + 1):
            if not order:
                order = torch.randperm(len(targets), generator=loop_gen).tolist()
            view_idx = order.pop()
            target_rgb, target_alpha, camera = targets[view_idx]

            scene = GaussianScene(
                **params, backface_colors=backface, seed=initial_scene.seed
            )
            env = EnvironmentMap(data=generator())
            ctx.mip = build_mip_chain(
                env,
                num_levels=config.prefilter_levels,
                samples=config.prefilter_samples,
                irradiance_hw=(config.irradiance_height, 2 * config.irradiance_height),
                irradiance_samples=config.irradiance_samples,
                seed=config.seed,
            )
            if iteration % config.grid_rebuild_period == 0:
                with torch.no_grad():
                    frozen = scene.detach_clone()
                cache.rebuild(frozen, ctx, config.grid_resolution)

            bg = torch.rand(3, generator=loop_gen, dtype=dtype)
            if target_alpha is None:
                target = target_rgb
            else:
                target = target_rgb + (1 - target_alpha.unsqueeze(-1)) * bg

            occluded = cache.specular_for_view(
                view_idx, scene, camera.origin(dtype), ctx
            )
            buffers = render(
                scene,
                camera,
                ctx=ctx,
                mode="shaded",
                background=bg,
                tile_size=config.tile_size,
                force_masks_on=iteration < config.mask_activation,
                occluded_override=occluded,
                visibility_override=cache.diffuse_vis,
            )
            recon, mae, dssim = loss_reconstruction(
                buffers.color, target, lambda_ssim=config.lambda_ssim
            )
            sm_n = loss_smooth(buffers.normal, target)
            sm_a = loss_smooth(buffers.albedo, target)
            sm_r = loss_smooth(buffers.roughness, target)
            sm_m = loss_smooth(buffers.metallic, target)
            light = light_regularizer(env.data)
            total = (
                recon
                + config.lambda_smooth * (sm_n + sm_a + sm_r + sm_m)
                + config.lambda_light * light
            )
            if not torch.isfinite(total):
                raise FloatingPointError(
                    f"non-finite loss at iteration {iteration}"
                )

            all_params = dict(params)
            all_params.update({f"env.{k}": v for k, v in gen_params.items()})
            grads = compute_gradients(total, all_params)

            with torch.no_grad():
                grad_accum += grads["positions"].norm(dim=-1)
                grad_count += 1

            lrs = {
                "positions": _position_lr(config, iteration),
                "log_scales": config.lr_log_scales,
                "rotations": config.lr_rotations,
                "opacity_logits": config.lr_opacity_logits,
                "albedo": config.lr_albedo,
                "roughness": config.lr_roughness,
                "metallic": config.lr_metallic,
                "indirect_sh": config.lr_indirect_sh,
            }
            lrs.update({f"env.{k}": config.lr_env for k in gen_params})
            new_values = adam_step(all_params, grads, state, lrs)
            for name in params:
                params[name] = new_values[name].detach().requires_grad_(True)
            with torch.no_grad():
                for k, p in gen_params.items():
                    p.copy_(new_values[f"env.{k}"])

            report = LossReport(
                iteration=iteration,
                total=float(total.detach()),
                mae=float(mae.detach()),
                dssim=float(dssim.detach()),
                smooth_normal=float(sm_n.detach()),
                smooth_albedo=float(sm_a.detach()),
                smooth_roughness=float(sm_r.detach()),
                smooth_metallic=float(sm_m.detach()),
                light_reg=float(light.detach()),
                num_gaussians=len(scene),
            )
            logs.append(report)
            if log_file is not None:
                log_file.write(json.dumps(report.to_dict()) + "\n")

            if (
                config.densify_start <= iteration <= config.densify_stop
                and iteration % config.densify_interval == 0
            ):
                with torch.no_grad():
                    snapshot = GaussianScene(
                        **{k: v.detach() for k, v in params.items()},
                        backface_colors=backface,
                        seed=initial_scene.seed,
                    )
                    avg = grad_accum / grad_count.clamp_min(1)
                    new_scene, parent_idx = densify_and_prune(
                        snapshot,
                        avg,
                        state,
                        iteration,
                        grad_threshold=config.densify_grad_threshold,
                        scale_fraction=config.densify_scale_fraction,
                        prune_opacity=config.prune_opacity,
                    )
                params = {
                    name: getattr(new_scene, name).detach().clone().requires_grad_(True)
                    for name in TRAINABLE_FIELDS
                }
                backface = new_scene.backface_colors
                cache.remap(parent_idx)
                grad_accum = torch.zeros(len(new_scene), dtype=dtype)
                grad_count = torch.zeros(len(new_scene), dtype=dtype)
    finally:
        if log_file is not None:
            log_file.close()

    final_scene = GaussianScene(
        **{k: v.detach() for k, v in params.items()},
        backface_colors=backface,
        seed=initial_scene.seed,
    )
    if out_dir is not None:
        save_checkpoint(out_dir, final_scene, generator, config)
    return final_scene, generator, logs
