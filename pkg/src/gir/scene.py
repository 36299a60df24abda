"""Scene representation: oriented 3D Gaussians with PBR material parameters.

Each Gaussian carries geometry (position, per-axis log-scale, rotation
quaternion, opacity logit), materials (albedo, roughness, metallic), a
spherical-harmonic expansion of incoming indirect radiance, and a fixed
random back-face color used when a camera sees its reverse side.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import torch

from .math3d import quat_normalize, quat_to_rotmat

TRAINABLE_FIELDS = (
    "positions",
    "log_scales",
    "rotations",
    "opacity_logits",
    "albedo",
    "roughness",
    "metallic",
    "indirect_sh",
)


@dataclass
class GaussianScene:
    """A batch of Gaussians; every field is an (N, ...) torch tensor.

    ``backface_colors`` is drawn once at creation and never optimized: it
    only exists so that back-facing Gaussians show an arbitrary stable color
    instead of leaking shaded radiance through surfaces.
    """

    positions: torch.Tensor  # (N, 3)
    log_scales: torch.Tensor  # (N, 3)
    rotations: torch.Tensor  # (N, 4) quaternion (w, x, y, z)
    opacity_logits: torch.Tensor  # (N,)
    albedo: torch.Tensor  # (N, 3) in [0, 1]
    roughness: torch.Tensor  # (N,) in [0, 1]
    metallic: torch.Tensor  # (N,) in [0, 1]
    indirect_sh: torch.Tensor  # (N, 3, 16) radiance SH, degree 3
    backface_colors: torch.Tensor  # (N, 3) fixed, in [0.2, 0.8]
    seed: int = 0
    extras: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        n = self.positions.shape[0]
        shapes = {
            "positions": (n, 3),
            "log_scales": (n, 3),
            "rotations": (n, 4),
            "opacity_logits": (n,),
            "albedo": (n, 3),
            "roughness": (n,),
            "metallic": (n,),
            "indirect_sh": (n, 3, 16),
            "backface_colors": (n, 3),
        }
        for name, want in shapes.items():
            got = tuple(getattr(self, name).shape)
            if got != want:
                raise ValueError(f"{name} has shape {got}, expected {want}")

    @staticmethod
    def create(
        positions: torch.Tensor,
        log_scales: torch.Tensor,
        rotations: torch.Tensor,
        opacity_logits: torch.Tensor,
        albedo: torch.Tensor,
        roughness: torch.Tensor,
        metallic: torch.Tensor,
        indirect_sh: torch.Tensor | None = None,
        seed: int = 0,
    ) -> "GaussianScene":
        """Build a scene, drawing fixed back-face colors from ``seed``."""
        n = positions.shape[0]
        dtype = positions.dtype
        if indirect_sh is None:
            indirect_sh = torch.zeros(n, 3, 16, dtype=dtype)
        gen = torch.Generator().manual_seed(seed)
        backface = 0.2 + 0.6 * torch.rand(n, 3, generator=gen, dtype=torch.float32)
        return GaussianScene(
            positions=positions,
            log_scales=log_scales,
            rotations=rotations,
            opacity_logits=opacity_logits,
            albedo=albedo,
            roughness=roughness,
            metallic=metallic,
            indirect_sh=indirect_sh,
            backface_colors=backface.to(dtype),
            seed=seed,
        )

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def dtype(self) -> torch.dtype:
        return self.positions.dtype

    def scales(self) -> torch.Tensor:
        return torch.exp(self.log_scales)

    def opacities(self) -> torch.Tensor:
        return torch.sigmoid(self.opacity_logits)

    def covariances(self) -> torch.Tensor:
        return build_covariance(self.log_scales, self.rotations)

    def normals(self) -> torch.Tensor:
        return unravel_normal(self.log_scales, self.rotations)

    def trainable_tensors(self) -> dict[str, torch.Tensor]:
        return {name: getattr(self, name) for name in TRAINABLE_FIELDS}

    def detach_clone(self) -> "GaussianScene":
        kwargs = {
            name: getattr(self, name).detach().clone()
            for name in TRAINABLE_FIELDS + ("backface_colors",)
        }
        return replace(self, extras=dict(self.extras), **kwargs)

    def to(self, dtype: torch.dtype) -> "GaussianScene":
        kwargs = {
            name: getattr(self, name).to(dtype)
            for name in TRAINABLE_FIELDS + ("backface_colors",)
        }
        return replace(self, extras=dict(self.extras), **kwargs)

    def select(self, idx: torch.Tensor) -> "GaussianScene":
        kwargs = {
            name: getattr(self, name)[idx].clone()
            for name in TRAINABLE_FIELDS + ("backface_colors",)
        }
        return replace(self, extras={}, **kwargs)


def build_covariance(log_scales: torch.Tensor, rotations: torch.Tensor) -> torch.Tensor:
    """Covariance R diag(exp(s)^2) R^T from log-scales and quaternions.

    Always symmetric positive definite since scales are exponentiated.

    Args:
        log_scales: (..., 3) per-axis log standard deviations.
        rotations: (..., 4) quaternions, normalized internally.

    Returns:
        (..., 3, 3) covariance matrices.
    """
    r = quat_to_rotmat(rotations)
    s = torch.exp(log_scales)
    rs = r * s.unsqueeze(-2)  # columns scaled: R diag(s)
    return rs @ rs.transpose(-1, -2)


def unravel_normal(log_scales: torch.Tensor, rotations: torch.Tensor) -> torch.Tensor:
    """Geometric normal of a Gaussian: the rotation column of its thinnest axis.

    The column matching the smallest exp(s) is taken as-is (no sign fixup);
    ties pick the lowest axis index so the result is deterministic.

    Args:
        log_scales: (..., 3).
        rotations: (..., 4).

    Returns:
        (..., 3) unit normals.
    """
    r = quat_to_rotmat(rotations)
    s0, s1, s2 = log_scales.unbind(-1)
    # <= keeps the lowest index on exact ties.
    first_min = (s0 <= s1) & (s0 <= s2)
    second_min = (~first_min) & (s1 <= s2)
    idx = torch.where(
        first_min,
        torch.zeros_like(s0, dtype=torch.long),
        torch.where(
            second_min,
            torch.ones_like(s0, dtype=torch.long),
            torch.full_like(s0, 2, dtype=torch.long),
        ),
    )
    cols = r.transpose(-1, -2)  # (..., 3 columns, 3)
    return torch.take_along_dim(cols, idx[..., None, None].expand(*idx.shape, 1, 3), dim=-2).squeeze(-2)


def directional_mask(
    normals: torch.Tensor, positions: torch.Tensor, cam_origin: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor]:
    """Front-face indicator per Gaussian for a camera at ``cam_origin``.

    Returns (mask, normals): mask is 1.0 where the normal faces the camera
    (n . omega_o > 0) and 0.0 otherwise (grazing counts as back-facing),
    with omega_o the unit direction from the Gaussian toward the camera.
    The normals come back unchanged: masking never flips orientation. The
    step gives no gradient; callers treat the mask as a constant switch.
    """
    wo = cam_origin - positions
    wo = wo / wo.norm(dim=-1, keepdim=True).clamp_min(1e-12)
    cos = (normals * wo).sum(-1)
    return (cos > 0).to(normals.dtype), normals


def scene_bounding_sphere(scene: GaussianScene) -> tuple[torch.Tensor, float]:
    """Sphere containing every Gaussian center plus a 3-sigma extent margin.

    Returns:
        (center (3,), radius) with radius covering max_i(|mu_i - c| + 3 max_axis sigma_i).
    """
    mu = scene.positions.detach()
    center = 0.5 * (mu.min(0).values + mu.max(0).values)
    margin = 3.0 * scene.scales().detach().max(-1).values
    radius = ((mu - center).norm(dim=-1) + margin).max()
    return center, float(radius)


def normalize_rotations_(scene: GaussianScene) -> None:
    """In-place renormalization of the quaternion field (no autograd)."""
    with torch.no_grad():
        scene.rotations.copy_(quat_normalize(scene.rotations))
