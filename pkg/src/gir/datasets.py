"""Posed multi-view datasets in the Blender transforms-JSON layout.

A dataset directory holds ``transforms_<split>.json`` files whose frames
name image files (relative paths, ``.png`` implied when absent) and give
camera-to-world matrices in the Blender/OpenGL convention. Loading converts
each pose to the internal camera convention and checks that every image
exists and that all images in a split share one resolution.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .imageio import load_png
from .rasterizer import Camera


@dataclass
class DatasetView:
    """One posed image: camera plus the path of its (lazily loaded) image."""

    camera: Camera
    image_path: Path

    def load_image(self, dtype: torch.dtype = torch.float32) -> tuple[torch.Tensor, torch.Tensor | None]:
        """Return (rgb (H,W,3), alpha (H,W) or None) in [0, 1]."""
        img = torch.from_numpy(load_png(self.image_path)).to(dtype)
        if img.shape[-1] == 4:
            return img[..., :3].contiguous(), img[..., 3].contiguous()
        return img, None


@dataclass
class DatasetManifest:
    """All views of one split, plus the shared image resolution."""

    root: Path
    split: str
    views: list[DatasetView] = field(default_factory=list)
    width: int = 0
    height: int = 0

    def __len__(self) -> int:
        return len(self.views)


def _image_path(root: Path, file_path: str) -> Path:
    p = root / file_path
    if p.suffix.lower() not in (".png",):
        p = p.with_suffix(".png")
    return p


def load_dataset(root: str | Path, split: str = "train") -> DatasetManifest:
    """Parse ``transforms_<split>.json`` under ``root`` into cameras and paths."""
    root = Path(root)
    manifest_path = root / f"transforms_{split}.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no manifest {manifest_path}")
    meta = json.loads(manifest_path.read_text())
    if "camera_angle_x" not in meta or "frames" not in meta:
        raise ValueError(f"{manifest_path} lacks camera_angle_x or frames")
    angle_x = float(meta["camera_angle_x"])
    manifest = DatasetManifest(root=root, split=split)
    for frame in meta["frames"]:
        path = _image_path(root, frame["file_path"])
        if not path.exists():
            raise FileNotFoundError(f"dataset image missing: {path}")
        with open(path, "rb") as f:
            # PNG stores width/height big-endian at bytes 16..24 of the
            # signature+IHDR block; enough to validate without decoding.
            head = f.read(24)
        if len(head) < 24 or head[12:16] != b"IHDR":
            raise ValueError(f"not a PNG: {path}")
        w = int.from_bytes(head[16:20], "big")
        h = int.from_bytes(head[20:24], "big")
        if manifest.width == 0:
            manifest.width, manifest.height = w, h
        elif (w, h) != (manifest.width, manifest.height):
            raise ValueError(
                f"inconsistent image sizes in split {split!r}: "
                f"{path} is {w}x{h}, expected {manifest.width}x{manifest.height}"
            )
        c2w = np.asarray(frame["transform_matrix"], dtype=np.float64)
        if c2w.shape != (4, 4):
            raise ValueError(f"transform_matrix of {path} is not 4x4")
        camera = Camera.from_blender(
            c2w=torch.from_numpy(c2w),
            camera_angle_x=angle_x,
            width=w,
            height=h,
        )
        manifest.views.append(DatasetView(camera=camera, image_path=path))
    if not manifest.views:
        raise ValueError(f"split {split!r} holds no frames")
    return manifest
