"""Dataset loading tests against hand-written transforms manifests.

Cameras parsed from a manifest are checked against Camera.from_blender on
the same matrix, and every structural error path (missing files, bad
manifest keys, mixed resolutions, non-PNG payloads) is exercised.
"""

import json
import math

import numpy as np
import torch

from gir.datasets import load_dataset
from gir.imageio import save_png
from gir.rasterizer import Camera


def blender_pose(azim, elev, radius=3.0):
    """Blender-convention c2w for a camera orbiting the origin."""
    eye = np.array(
        [
            radius * math.cos(elev) * math.cos(azim),
            radius * math.cos(elev) * math.sin(azim),
            radius * math.sin(elev),
        ]
    )
    back = eye / np.linalg.norm(eye)
    right = np.cross(np.array([0.0, 0.0, 1.0]), back)
    right /= np.linalg.norm(right)
    up = np.cross(back, right)
    m = np.eye(4)
    m[:3, 0], m[:3, 1], m[:3, 2], m[:3, 3] = right, up, back, eye
    return m


def write_dataset(root, poses, angle_x=0.8, size=(12, 10), alpha=True, suffix=""):
    gen = np.random.default_rng(0)
    w, h = size
    frames = []
    (root / "train").mkdir(parents=True, exist_ok=True)
    for i, pose in enumerate(poses):
        img = gen.integers(0, 256, (h, w, 4 if alpha else 3)) / 255.0
        save_png(root / f"train/r_{i}.png", img.astype(np.float32))
        frames.append(
            {"file_path": f"train/r_{i}{suffix}", "transform_matrix": pose.tolist()}
        )
    manifest = {"camera_angle_x": angle_x, "frames": frames}
    (root / "transforms_train.json").write_text(json.dumps(manifest))
    return manifest


def test_load_matches_from_blender(tmp_path):
    poses = [blender_pose(0.3, 0.2), blender_pose(2.1, -0.1), blender_pose(4.0, 0.9)]
    write_dataset(tmp_path, poses, angle_x=0.8, size=(12, 10))
    ds = load_dataset(tmp_path, "train")
    assert len(ds) == 3
    assert (ds.width, ds.height) == (12, 10)
    assert ds.split == "train"
    for view, pose in zip(ds.views, poses):
        want = Camera.from_blender(
            c2w=torch.from_numpy(pose), camera_angle_x=0.8, width=12, height=10
        )
        assert torch.equal(view.camera.c2w_rot, want.c2w_rot)
        assert torch.equal(view.camera.c2w_pos, want.c2w_pos)
        assert view.camera.fx == want.fx
        assert abs(view.camera.fx - 0.5 * 12 / math.tan(0.4)) < 1e-9


def test_png_suffix_implied(tmp_path):
    write_dataset(tmp_path, [blender_pose(0.5, 0.4)], suffix="")
    ds = load_dataset(tmp_path)
    assert ds.views[0].image_path.name == "r_0.png"


def test_load_image_rgba_and_rgb(tmp_path):
    write_dataset(tmp_path, [blender_pose(1.0, 0.3)], alpha=True)
    ds = load_dataset(tmp_path)
    rgb, alpha = ds.views[0].load_image()
    assert rgb.shape == (10, 12, 3) and alpha.shape == (10, 12)
    assert rgb.dtype == torch.float32
    # 8-bit PNGs hold exact multiples of 1/255.
    assert torch.equal(rgb, (rgb * 255).round() / 255)

    write_dataset(tmp_path, [blender_pose(1.0, 0.3)], alpha=False)
    rgb, alpha = load_dataset(tmp_path).views[0].load_image()
    assert alpha is None and rgb.shape == (10, 12, 3)


def test_missing_manifest(tmp_path):
    try:
        load_dataset(tmp_path, "test")
        assert False, "expected FileNotFoundError"
    except FileNotFoundError:
        pass


def test_missing_image(tmp_path):
    write_dataset(tmp_path, [blender_pose(0.2, 0.2)])
    (tmp_path / "train/r_0.png").unlink()
    try:
        load_dataset(tmp_path)
        assert False, "expected FileNotFoundError"
    except FileNotFoundError:
        pass


def test_manifest_key_errors(tmp_path):
    write_dataset(tmp_path, [blender_pose(0.2, 0.2)])
    good = json.loads((tmp_path / "transforms_train.json").read_text())
    for key in ("camera_angle_x", "frames"):
        bad = {k: v for k, v in good.items() if k != key}
        (tmp_path / "transforms_train.json").write_text(json.dumps(bad))
        try:
            load_dataset(tmp_path)
            assert False, f"expected ValueError without {key}"
        except ValueError:
            pass


def test_empty_frames_rejected(tmp_path):
    (tmp_path / "transforms_train.json").write_text(
        json.dumps({"camera_angle_x": 0.8, "frames": []})
    )
    try:
        load_dataset(tmp_path)
        assert False, "expected ValueError"
    except ValueError:
        pass


def test_inconsistent_sizes_rejected(tmp_path):
    write_dataset(tmp_path, [blender_pose(0.2, 0.2), blender_pose(1.2, 0.2)])
    img = np.zeros((6, 6, 3), dtype=np.float32)
    save_png(tmp_path / "train/r_1.png", img)
    try:
        load_dataset(tmp_path)
        assert False, "expected ValueError"
    except ValueError as err:
        assert "inconsistent" in str(err)


def test_non_png_rejected(tmp_path):
    write_dataset(tmp_path, [blender_pose(0.2, 0.2)])
    (tmp_path / "train/r_0.png").write_bytes(b"not a png at all, just text....")
    try:
        load_dataset(tmp_path)
        assert False, "expected ValueError"
    except ValueError:
        pass


def test_bad_transform_shape_rejected(tmp_path):
    manifest = write_dataset(tmp_path, [blender_pose(0.2, 0.2)])
    manifest["frames"][0]["transform_matrix"] = [[1.0, 0.0], [0.0, 1.0]]
    (tmp_path / "transforms_train.json").write_text(json.dumps(manifest))
    try:
        load_dataset(tmp_path)
        assert False, "expected ValueError"
    except ValueError:
        pass
