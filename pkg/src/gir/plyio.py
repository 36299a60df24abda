"""Scene persistence as binary little-endian PLY.

The archive stores one vertex element per Gaussian with a fixed property
order: position (3), log-scales (3), rotation quaternion wxyz (4), opacity
logit, albedo (3), roughness, metallic, indirect SH (48, channel-major:
coefficient k of channel c at index c*16+k), and the fixed back-face color
(3). All properties are float32, so save/load round trips are bit-exact.

Plain 3DGS archives (geometry and opacity only) load with defaulted
material fields and a warning; their extra properties ride along in
``scene.extras`` and are dropped, with a warning, on the next save.
"""

from __future__ import annotations

import warnings
from pathlib import Path

import numpy as np
import torch

from .scene import GaussianScene

GEOMETRY_PROPS = (
    ["x", "y", "z"]
    + [f"scale_{i}" for i in range(3)]
    + [f"rot_{i}" for i in range(4)]
    + ["opacity"]
)
CANONICAL_PROPS = (
    GEOMETRY_PROPS
    + [f"albedo_{i}" for i in range(3)]
    + ["roughness", "metallic"]
    + [f"f_ind_{i}" for i in range(48)]
    + [f"ceps_{i}" for i in range(3)]
)

_PLY_TYPES = {"float": "<f4", "float32": "<f4", "double": "<f8", "uchar": "u1", "int": "<i4"}


def save_scene(scene: GaussianScene, path: str | Path) -> None:
    """Write the scene as an extended-PLY archive (all properties float32)."""
    if scene.extras:
        warnings.warn(
            f"dropping unknown PLY properties on save: {sorted(scene.extras)}",
            stacklevel=2,
        )
    n = len(scene)
    arr = np.empty(n, dtype=[(p, "<f4") for p in CANONICAL_PROPS])
    cols = np.concatenate(
        [
            scene.positions.detach().cpu().numpy().astype(np.float32, copy=False),
            scene.log_scales.detach().cpu().numpy().astype(np.float32, copy=False),
            scene.rotations.detach().cpu().numpy().astype(np.float32, copy=False),
            scene.opacity_logits.detach().cpu().numpy().astype(np.float32, copy=False)[:, None],
            scene.albedo.detach().cpu().numpy().astype(np.float32, copy=False),
            scene.roughness.detach().cpu().numpy().astype(np.float32, copy=False)[:, None],
            scene.metallic.detach().cpu().numpy().astype(np.float32, copy=False)[:, None],
            scene.indirect_sh.detach().cpu().numpy().astype(np.float32, copy=False).reshape(n, 48),
            scene.backface_colors.detach().cpu().numpy().astype(np.float32, copy=False),
        ],
        axis=1,
    )
    for i, name in enumerate(CANONICAL_PROPS):
        arr[name] = cols[:, i]
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {n}\n"
        + "".join(f"property float {p}\n" for p in CANONICAL_PROPS)
        + "end_header\n"
    )
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(arr.tobytes())


def _parse_header(raw: bytes) -> tuple[int, list[tuple[str, str]], int]:
    end = raw.find(b"end_header\n")
    if not raw.startswith(b"ply\n") or end < 0:
        raise ValueError("malformed PLY header")
    lines = raw[:end].decode("ascii", errors="replace").splitlines()
    if "format binary_little_endian 1.0" not in lines[1]:
        raise ValueError(f"unsupported PLY format: {lines[1]!r}")
    count = None
    props: list[tuple[str, str]] = []
    in_vertex = False
    for line in lines[2:]:
        parts = line.split()
        if not parts or parts[0] == "comment":
            continue
        if parts[0] == "element":
            if parts[1] == "vertex":
                count = int(parts[2])
                in_vertex = True
            else:
                raise ValueError(f"unsupported PLY element {parts[1]!r}")
        elif parts[0] == "property" and in_vertex:
            if parts[1] not in _PLY_TYPES:
                raise ValueError(f"unsupported PLY property type {parts[1]!r}")
            props.append((parts[2], _PLY_TYPES[parts[1]]))
    if count is None or not props:
        raise ValueError("PLY header missing vertex element")
    return count, props, end + len(b"end_header\n")


def load_scene(path: str | Path, seed: int = 0) -> GaussianScene:
    """Read a scene archive; plain-3DGS files get defaulted material fields.

    Unrecognized properties are kept in ``scene.extras`` (name -> array).
    """
    raw = Path(path).read_bytes()
    count, props, offset = _parse_header(raw)
    if count == 0:
        raise ValueError("scene archive holds zero Gaussians")
    data = np.frombuffer(raw, dtype=props, count=count, offset=offset)
    names = {name for name, _ in props}
    missing_geo = [p for p in GEOMETRY_PROPS if p not in names]
    if missing_geo:
        raise ValueError(f"PLY is missing required properties: {missing_geo}")

    def col(name: str) -> torch.Tensor:
        return torch.from_numpy(np.ascontiguousarray(data[name]).astype(np.float32, copy=False))

    def stack(cols: list[str]) -> torch.Tensor:
        return torch.stack([col(c) for c in cols], dim=-1)

    positions = stack(["x", "y", "z"])
    log_scales = stack([f"scale_{i}" for i in range(3)])
    rotations = stack([f"rot_{i}" for i in range(4)])
    opacity = col("opacity")
    has_pbr = all(p in names for p in CANONICAL_PROPS)
    if has_pbr:
        scene = GaussianScene(
            positions=positions,
            log_scales=log_scales,
            rotations=rotations,
            opacity_logits=opacity,
            albedo=stack([f"albedo_{i}" for i in range(3)]),
            roughness=col("roughness"),
            metallic=col("metallic"),
            indirect_sh=stack([f"f_ind_{i}" for i in range(48)]).reshape(count, 3, 16),
            backface_colors=stack([f"ceps_{i}" for i in range(3)]),
            seed=seed,
        )
        known = set(CANONICAL_PROPS)
    else:
        warnings.warn(
            "PLY lacks material properties; defaulting albedo=0.5, roughness=0.8, "
            "metallic=0.0 and zero indirect SH",
            stacklevel=2,
        )
        scene = GaussianScene.create(
            positions=positions,
            log_scales=log_scales,
            rotations=rotations,
            opacity_logits=opacity,
            albedo=torch.full((count, 3), 0.5),
            roughness=torch.full((count,), 0.8),
            metallic=torch.zeros(count),
            seed=seed,
        )
        known = set(GEOMETRY_PROPS)
    for name, _ in props:
        if name not in known:
            scene.extras[name] = np.ascontiguousarray(data[name])
    return scene
