"""Training loop tests: optimizer math against a float64 reference,
density control on a hand-built scene, determinism of short fits, and
checkpoint round trips.
"""

import json
import math

import numpy as np
import torch

from gir.envlight import build_dfg_lut, build_mip_chain
from gir.math3d import ToneMapParams
from gir.scene import GaussianScene
from gir.shading import ShadingContext
from gir.synthetic import make_env_map, make_orbit_cameras, make_sphere_scene, perturb_scene
from gir.train import (
    AdamState,
    TrainConfig,
    adam_step,
    compute_gradients,
    densify_and_prune,
    load_checkpoint,
    save_checkpoint,
    train,
    _position_lr,
)
from gir.datasets import load_dataset
from gir.synthetic import render_dataset


def reference_adam(p, grads, lr, beta1=0.9, beta2=0.999, eps=1e-15):
    """Plain float64 Adam with bias correction, one tensor."""
    p = p.astype(np.float64).copy()
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    for t, g in enumerate(grads, start=1):
        g = g.astype(np.float64)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        p = p - lr * m_hat / (np.sqrt(v_hat) + eps)
    return p


def test_adam_matches_float64_reference():
    gen = torch.Generator().manual_seed(0)
    p0 = torch.randn(7, 3, generator=gen)
    grads = [torch.randn(7, 3, generator=gen) for _ in range(10)]
    params = {"positions": p0.clone()}
    state = AdamState()
    for g in grads:
        params = adam_step(params, {"positions": g}, state, {"positions": 1e-2})
    want = reference_adam(p0.numpy(), [g.numpy() for g in grads], 1e-2)
    assert np.abs(params["positions"].numpy() - want).max() < 1e-6
    assert state.steps["positions"] == 10


def test_adam_projections_and_no_mutation():
    gen = torch.Generator().manual_seed(1)
    albedo = torch.rand(5, 3, generator=gen)
    rot = torch.nn.functional.normalize(torch.randn(5, 4, generator=gen), dim=-1)
    albedo_before = albedo.clone()
    params = {"albedo": albedo, "rotations": rot}
    grads = {
        "albedo": torch.full((5, 3), -100.0),
        "rotations": torch.randn(5, 4, generator=gen),
    }
    out = adam_step(params, grads, AdamState(), {"albedo": 1.0, "rotations": 0.5})
    assert out["albedo"].min() >= 0.0 and out["albedo"].max() <= 1.0
    assert (out["rotations"].norm(dim=-1) - 1).abs().max() < 1e-6
    assert torch.equal(albedo, albedo_before), "adam_step must not mutate inputs"


def test_position_lr_schedule():
    cfg = TrainConfig(iterations=100, mask_activation=50, lr_positions=1e-2, lr_positions_final=1e-4)
    assert _position_lr(cfg, 1) == 1e-2
    assert abs(_position_lr(cfg, 100) - 1e-4) < 1e-12
    lrs = [_position_lr(cfg, i) for i in range(1, 101)]
    assert all(a > b for a, b in zip(lrs, lrs[1:]))
    # Exponential decay: constant ratio between consecutive iterations.
    ratios = [b / a for a, b in zip(lrs, lrs[1:])]
    assert max(ratios) - min(ratios) < 1e-9


def test_compute_gradients_zeros_unused_and_aborts_on_nan():
    a = torch.randn(4, requires_grad=True)
    b = torch.randn(4, requires_grad=True)
    grads = compute_gradients((a**2).sum(), {"used": a, "unused": b})
    assert torch.equal(grads["used"], 2 * a.detach())
    assert torch.equal(grads["unused"], torch.zeros(4))

    c = torch.randn(3, requires_grad=True)
    bad = (c * torch.tensor(float("inf"))).sum()
    try:
        compute_gradients(bad, {"positions": c})
        assert False, "expected FloatingPointError"
    except FloatingPointError as err:
        assert "positions" in str(err)


def four_row_scene():
    """Row 0 big, row 1 tiny, rows 2-3 cold; row 3 nearly transparent."""
    positions = torch.tensor(
        [[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, -1.0, 0.0]]
    )
    log_scales = torch.log(
        torch.tensor([[1.0, 1.0, 1.0], [1e-3, 1e-3, 1e-3], [0.1, 0.1, 0.1], [0.1, 0.1, 0.1]])
    )
    rotations = torch.tensor([[1.0, 0.0, 0.0, 0.0]]).expand(4, 4).clone()
    opacity = torch.tensor([4.0, 4.0, 4.0, -6.0])
    gen = torch.Generator().manual_seed(0)
    return GaussianScene.create(
        positions, log_scales, rotations, opacity,
        albedo=torch.rand(4, 3, generator=gen),
        roughness=torch.rand(4, generator=gen),
        metallic=torch.rand(4, generator=gen),
        indirect_sh=torch.randn(4, 3, 16, generator=gen),
        seed=11,
    )


def test_densify_split_clone_prune_and_remap():
    scene = four_row_scene()
    grad_norms = torch.tensor([2.0, 2.0, 0.0, 0.0])
    state = AdamState()
    state.exp_avg["positions"] = torch.arange(12.0).reshape(4, 3)
    state.exp_avg_sq["positions"] = torch.arange(12.0).reshape(4, 3) + 100
    state.steps["positions"] = 7
    new_scene, parent_idx = densify_and_prune(
        scene, grad_norms, state, iteration=5,
        grad_threshold=1.0, scale_fraction=0.1, prune_opacity=0.005,
    )
    # Kept: rows 1,2 (row 0 replaced by split children, row 3 pruned);
    # row 1 also cloned; row 0 split into two offset children.
    assert parent_idx.tolist() == [1, 2, 1, 0, 0]
    assert len(new_scene) == 5
    assert torch.equal(new_scene.positions[0], scene.positions[1])
    assert torch.equal(new_scene.positions[1], scene.positions[2])
    assert torch.equal(new_scene.positions[2], scene.positions[1])
    assert torch.equal(new_scene.albedo[3], scene.albedo[0])
    assert torch.equal(new_scene.albedo[4], scene.albedo[0])
    # Children shrink by 1.6x and move by a draw from the parent footprint.
    want_scale = scene.log_scales[0] - math.log(1.6)
    assert (new_scene.log_scales[3] - want_scale).abs().max() < 1e-6
    for child in (3, 4):
        offset = (new_scene.positions[child] - scene.positions[0]).norm()
        assert 0 < float(offset) < 6.0
    # Moments: survivors keep theirs, fresh rows restart from zero.
    assert torch.equal(state.exp_avg["positions"][0], torch.tensor([3.0, 4.0, 5.0]))
    assert torch.equal(state.exp_avg["positions"][1], torch.tensor([6.0, 7.0, 8.0]))
    assert torch.equal(state.exp_avg["positions"][2:], torch.zeros(3, 3))
    assert state.exp_avg["positions"].shape == (5, 3)

    again, parent_again = densify_and_prune(
        four_row_scene(), grad_norms, AdamState(), iteration=5,
        grad_threshold=1.0, scale_fraction=0.1, prune_opacity=0.005,
    )
    assert torch.equal(again.positions, new_scene.positions)
    assert torch.equal(parent_again, parent_idx)


def test_densify_noop_when_cold():
    scene = four_row_scene()
    new_scene, parent_idx = densify_and_prune(
        scene, torch.zeros(4), AdamState(), iteration=1,
        grad_threshold=1.0, scale_fraction=0.1, prune_opacity=1e-5,
    )
    assert parent_idx.tolist() == [0, 1, 2, 3]
    assert torch.equal(new_scene.positions, scene.positions)


def small_dataset(tmp_path, n_views=3, size=24):
    scene = make_sphere_scene(60)
    env = make_env_map("studio", 8)
    mip = build_mip_chain(env, num_levels=2, samples=16, irradiance_hw=(4, 8), irradiance_samples=32, seed=0)
    dfg = build_dfg_lut(8, 64, seed=0)
    ctx = ShadingContext(mip=mip, dfg=dfg, tone=ToneMapParams(), grid=None, seed=0)
    cams = {"train": make_orbit_cameras(n_views, width=size, height=size, seed=0)}
    render_dataset(scene, ctx, tmp_path, cams)
    return load_dataset(tmp_path, "train"), scene


def fast_config(**overrides):
    base = dict(
        iterations=8, seed=0, mask_activation=4, grid_rebuild_period=4,
        densify_start=6, densify_stop=6, densify_interval=3,
        grid_resolution=16, prefilter_levels=2, prefilter_samples=8,
        irradiance_samples=16, irradiance_height=4, dfg_resolution=8,
        dfg_samples=32, occlusion_samples=8, visibility_rays=8,
        env_embed_height=4, env_embed_channels=8, env_upsamples=2,
    )
    base.update(overrides)
    return TrainConfig(**base)


def test_train_is_deterministic(tmp_path):
    ds, gt = small_dataset(tmp_path)
    init = perturb_scene(gt, seed=1)
    runs = []
    for _ in range(2):
        scene, gen, logs = train(ds, fast_config(), init)
        runs.append((scene, gen, logs))
    a, b = runs
    for field in ("positions", "log_scales", "rotations", "opacity_logits",
                  "albedo", "roughness", "metallic", "indirect_sh"):
        assert torch.equal(getattr(a[0], field), getattr(b[0], field)), field
    assert [r.total for r in a[2]] == [r.total for r in b[2]]
    for ka, kb in zip(a[1].state_dict().values(), b[1].state_dict().values()):
        assert torch.equal(ka, kb)
    assert len(a[2]) == 8
    assert a[2][0].num_gaussians == 60


def test_train_loss_report_recomposes(tmp_path):
    ds, gt = small_dataset(tmp_path)
    cfg = fast_config(iterations=3, mask_activation=2, densify_start=100, densify_stop=100)
    _, _, logs = train(ds, cfg, perturb_scene(gt, seed=1))
    for r in logs:
        recon = (1 - cfg.lambda_ssim) * r.mae + cfg.lambda_ssim * r.dssim
        smooth = r.smooth_normal + r.smooth_albedo + r.smooth_roughness + r.smooth_metallic
        want = recon + cfg.lambda_smooth * smooth + cfg.lambda_light * r.light_reg
        assert abs(r.total - want) < 1e-6


def test_train_writes_logs_and_checkpoint(tmp_path):
    ds, gt = small_dataset(tmp_path / "data")
    cfg = fast_config(iterations=2, mask_activation=2, grid_rebuild_period=2)
    out = tmp_path / "ckpt"
    log = tmp_path / "log.jsonl"
    scene, gen, logs = train(ds, cfg, perturb_scene(gt, seed=1), out_dir=out, log_path=log)
    lines = [json.loads(l) for l in log.read_text().splitlines()]
    assert [l["iteration"] for l in lines] == [1, 2]
    assert lines[-1]["total"] == logs[-1].total
    assert set(lines[0]) == set(logs[0].to_dict())

    back_scene, back_gen, back_cfg = load_checkpoint(out)
    assert torch.equal(back_scene.positions, scene.positions)
    assert torch.equal(back_scene.indirect_sh, scene.indirect_sh)
    assert back_cfg == cfg
    with torch.no_grad():
        assert torch.equal(back_gen(), gen())


def test_train_zero_iterations_and_small_dataset(tmp_path):
    ds, gt = small_dataset(tmp_path)
    init = perturb_scene(gt, seed=1)
    scene, gen, logs = train(ds, fast_config(iterations=0, mask_activation=0), init)
    assert logs == [] and torch.equal(scene.positions, init.positions)

    ds.views = ds.views[:1]
    try:
        train(ds, fast_config(), init)
        assert False, "expected ValueError"
    except ValueError:
        pass


def test_config_validation():
    try:
        TrainConfig(iterations=5, mask_activation=10)
        assert False, "expected ValueError"
    except ValueError:
        pass
    try:
        TrainConfig(lambda_smooth=-0.1)
        assert False, "expected ValueError"
    except ValueError:
        pass
    cfg = TrainConfig()
    assert cfg.mask_activation <= cfg.iterations


def test_checkpoint_round_trip_standalone(tmp_path):
    scene = make_sphere_scene(20)
    from gir.envlight import EnvGenerator

    cfg = fast_config()
    gen = EnvGenerator(
        embed_height=cfg.env_embed_height,
        embed_width=2 * cfg.env_embed_height,
        embed_channels=cfg.env_embed_channels,
        upsamples=cfg.env_upsamples,
        seed=3,
    )
    save_checkpoint(tmp_path, scene, gen, cfg)
    assert (tmp_path / "scene.ply").exists()
    assert (tmp_path / "generator.pt").exists()
    assert (tmp_path / "config.json").exists()
    back_scene, back_gen, back_cfg = load_checkpoint(tmp_path)
    assert torch.equal(back_scene.albedo, scene.albedo)
    assert back_cfg == cfg
    with torch.no_grad():
        assert torch.equal(back_gen(), gen())
