"""Viewing layer tests: material overrides, checkpoint bundles, the shared
render path, display/raw buffer mapping, and request-pose parsing.
"""

import math

import torch

from gir.envlight import EnvGenerator
from gir.rasterizer import Camera
from gir.synthetic import make_env_map, make_sphere_scene
from gir.train import save_checkpoint
from gir.viewing import (
    MaterialOverrides,
    buffers_to_display,
    buffers_to_raw,
    load_bundle,
    pose_to_camera,
    render_png_bytes,
    render_view,
)
from test_train import fast_config


def make_bundle(tmp_path, n=40, build_grid=True):
    scene = make_sphere_scene(n)
    cfg = fast_config()
    gen = EnvGenerator(
        embed_height=cfg.env_embed_height,
        embed_width=2 * cfg.env_embed_height,
        embed_channels=cfg.env_embed_channels,
        upsamples=cfg.env_upsamples,
        seed=cfg.seed,
    )
    save_checkpoint(tmp_path, scene, gen, cfg)
    return load_bundle(tmp_path, build_grid=build_grid), scene


def orbit_camera(width=32, height=32):
    return Camera.look_at(
        eye=torch.tensor([2.5, 1.0, 1.2]),
        target=torch.zeros(3),
        camera_angle_x=1.1,
        width=width,
        height=height,
    )


def test_overrides_identity_and_apply():
    assert MaterialOverrides().is_identity()
    assert not MaterialOverrides(delta_roughness=0.1).is_identity()
    assert not MaterialOverrides(albedo_tint=(1.0, 0.5, 1.0)).is_identity()
    scene = make_sphere_scene(16)
    ov = MaterialOverrides(delta_roughness=0.1, delta_metallic=-0.2, albedo_tint=(0.5, 1.0, 2.0))
    edited = ov.apply(scene)
    assert torch.equal(edited.roughness, scene.roughness + 0.1)
    assert torch.equal(edited.metallic, scene.metallic - 0.2)
    assert torch.equal(edited.albedo, scene.albedo * torch.tensor([0.5, 1.0, 2.0]))
    assert torch.equal(edited.positions, scene.positions)
    assert not torch.equal(scene.roughness, edited.roughness), "apply copies"


def test_load_bundle(tmp_path):
    bundle, scene = make_bundle(tmp_path)
    assert torch.equal(bundle.scene.positions, scene.positions)
    assert "default" in bundle.envs
    env, mip = bundle.envs["default"]
    assert env.data.shape[0] * 2 == env.data.shape[1]
    assert bundle.grid is not None
    assert bundle.diffuse_vis.shape == (len(scene),)
    assert bundle.diffuse_vis.min() >= 0 and bundle.diffuse_vis.max() <= 1

    flat, _ = make_bundle(tmp_path / "nogrid", build_grid=False)
    assert flat.grid is None and flat.diffuse_vis is None


def test_render_view_modes_and_errors(tmp_path):
    bundle, _ = make_bundle(tmp_path)
    cam = orbit_camera()
    for mode in ("shaded", "albedo", "normal", "roughness", "metallic", "depth"):
        buffers = render_view(bundle, cam, mode=mode)
        assert buffers.color.shape == (32, 32, 3)
        assert torch.isfinite(buffers.color).all()
    try:
        render_view(bundle, cam, mode="wireframe")
        assert False, "expected ValueError"
    except ValueError:
        pass
    try:
        render_view(bundle, cam, env_id="missing")
        assert False, "expected KeyError"
    except KeyError:
        pass


def test_render_view_override_paths(tmp_path):
    bundle, _ = make_bundle(tmp_path)
    cam = orbit_camera()
    plain = render_view(bundle, cam)
    identity = render_view(bundle, cam, overrides=MaterialOverrides())
    assert torch.equal(plain.color, identity.color)
    dark = render_view(bundle, cam, overrides=MaterialOverrides(albedo_tint=(0.0, 0.0, 0.0)))
    assert torch.equal(dark.albedo, torch.zeros_like(dark.albedo))
    assert not torch.equal(dark.color, plain.color)


def test_render_view_alternate_env(tmp_path):
    bundle, _ = make_bundle(tmp_path)
    bundle.add_env("sunset", make_env_map("sunset", 16))
    cam = orbit_camera()
    default = render_view(bundle, cam)
    relit = render_view(bundle, cam, env_id="sunset")
    assert not torch.equal(default.color, relit.color)
    assert torch.equal(default.alpha, relit.alpha), "lighting leaves coverage alone"
    assert torch.equal(default.albedo, relit.albedo)


def test_buffers_display_and_raw(tmp_path):
    bundle, _ = make_bundle(tmp_path)
    cam = orbit_camera()
    buffers = render_view(bundle, cam)
    for mode in ("shaded", "albedo", "normal", "roughness", "metallic", "depth"):
        rgba = buffers_to_display(buffers, mode)
        assert rgba.shape == (32, 32, 4)
        assert float(rgba.min()) >= 0.0 and float(rgba.max()) <= 1.0
    shown = buffers_to_display(buffers, "normal")
    assert torch.equal(shown[..., :3], (0.5 * buffers.normal + 0.5).clamp(0.0, 1.0))
    depth_shown = buffers_to_display(buffers, "depth")
    assert abs(float(depth_shown[..., 0].max()) - 1.0) < 1e-6

    assert torch.equal(buffers_to_raw(buffers, "shaded"), buffers.color)
    assert torch.equal(buffers_to_raw(buffers, "normal"), buffers.normal)
    assert torch.equal(buffers_to_raw(buffers, "depth"), buffers.depth)
    assert buffers_to_raw(buffers, "roughness").dim() == 2
    try:
        buffers_to_raw(buffers, "uv")
        assert False, "expected ValueError"
    except ValueError:
        pass


def test_render_png_bytes_deterministic(tmp_path):
    bundle, _ = make_bundle(tmp_path)
    cam = orbit_camera()
    first = render_png_bytes(bundle, cam, mode="shaded")
    second = render_png_bytes(bundle, cam, mode="shaded")
    assert first == second
    assert first[:8] == b"\x89PNG\r\n\x1a\n"


def test_pose_to_camera_look_at_form():
    pose = {"eye": [2.0, 0.5, 1.0], "target": [0.0, 0.0, 0.0],
            "camera_angle_x": 0.9, "width": 64, "height": 48}
    cam = pose_to_camera(pose)
    want = Camera.look_at(
        eye=torch.tensor([2.0, 0.5, 1.0], dtype=torch.float64),
        target=torch.zeros(3, dtype=torch.float64),
        camera_angle_x=0.9, width=64, height=48,
    )
    assert torch.equal(cam.c2w_pos, want.c2w_pos)
    assert torch.equal(cam.c2w_rot, want.c2w_rot)
    defaults = pose_to_camera({"eye": [3.0, 0.0, 0.0], "target": [0.0, 0.0, 0.0]})
    assert (defaults.width, defaults.height) == (512, 512)
    assert abs(defaults.fx - 0.5 * 512 / math.tan(0.35)) < 1e-9


def test_pose_to_camera_c2w_forms():
    m = torch.eye(4, dtype=torch.float64)
    m[:3, 3] = torch.tensor([0.0, 0.0, 3.0], dtype=torch.float64)
    blender = pose_to_camera({"c2w": m.tolist(), "width": 32, "height": 32})
    want = Camera.from_blender(m, 0.7, 32, 32)
    assert torch.equal(blender.c2w_rot, want.c2w_rot)

    rot = want.c2w_rot
    internal = pose_to_camera({
        "c2w": [[float(rot[i, j]) for j in range(3)] + [float(m[i, 3])] for i in range(3)]
        + [[0.0, 0.0, 0.0, 1.0]],
        "convention": "internal", "width": 32, "height": 32,
    })
    assert (internal.c2w_rot - rot).abs().max() < 1e-12
    assert abs(internal.fx - 0.5 * 32 / math.tan(0.35)) < 1e-9


def test_pose_to_camera_errors():
    bad_poses = [
        "not a dict",
        {"eye": [1, 0, 0], "target": [0, 0, 0], "width": 0},
        {"eye": [1, 0, 0], "target": [0, 0, 0], "width": 5000},
        {"eye": [1, 0, 0], "target": [0, 0, 0], "camera_angle_x": 0.0},
        {"eye": [1, 0, 0], "target": [0, 0, 0], "camera_angle_x": 4.0},
        {"eye": [1, 0, 0], "target": [1, 0, 0]},
        {"eye": [1, 0], "target": [0, 0, 0]},
        {"target": [0, 0, 0]},
        {"eye": [1, 0, float("nan")], "target": [0, 0, 0]},
        {"c2w": [[1, 0], [0, 1]]},
        {"c2w": torch.eye(4).tolist(), "convention": "opengl"},
        {"eye": [1, 0, 0], "target": [0, 0, 0], "up": [1, 0, 0]},
    ]
    for pose in bad_poses:
        try:
            pose_to_camera(pose)
            assert False, f"expected ValueError for {pose!r}"
        except ValueError:
            pass
