"""Small geometric and shading math helpers shared across the package.

Conventions: quaternions are (w, x, y, z) tensors, directions are unit rows
in the last dimension, and spherical harmonics use the real basis in the
usual graphics ordering (band l, then m from -l to l).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

# Real SH basis constants for bands 0..3.
SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)

GOLDEN_RATIO = (1.0 + math.sqrt(5.0)) / 2.0


def num_sh_coeffs(degree: int) -> int:
    if degree < 0 or degree > 3:
        raise ValueError(f"SH degree must be in [0, 3], got {degree}")
    return (degree + 1) ** 2


def normalize(v: torch.Tensor, dim: int = -1, eps: float = 1e-12) -> torch.Tensor:
    return v / v.norm(dim=dim, keepdim=True).clamp_min(eps)


def quat_normalize(q: torch.Tensor) -> torch.Tensor:
    """Return unit quaternions, raising if any input has near-zero norm."""
    norms = q.norm(dim=-1, keepdim=True)
    if not bool((norms > 1e-8).all()):
        raise ValueError("cannot normalize zero quaternion")
    return q / norms


def quat_to_rotmat(q: torch.Tensor) -> torch.Tensor:
    """Convert unit quaternions to rotation matrices.

    Args:
        q: (..., 4) tensor in (w, x, y, z) order. Normalized internally.

    Returns:
        (..., 3, 3) rotation matrices.
    """
    q = quat_normalize(q)
    w, x, y, z = q.unbind(-1)
    row0 = torch.stack(
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], dim=-1
    )
    row1 = torch.stack(
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], dim=-1
    )
    row2 = torch.stack(
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], dim=-1
    )
    return torch.stack([row0, row1, row2], dim=-2)


def quat_multiply(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    aw, ax, ay, az = a.unbind(-1)
    bw, bx, by, bz = b.unbind(-1)
    return torch.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        dim=-1,
    )


def quat_from_axis_angle(axis: torch.Tensor, angle: float | torch.Tensor) -> torch.Tensor:
    axis = torch.as_tensor(axis)
    if not axis.is_floating_point():
        axis = axis.to(torch.get_default_dtype())
    axis = normalize(axis)
    half = 0.5 * torch.as_tensor(angle, dtype=axis.dtype)
    half = half.expand(axis.shape[:-1])
    return torch.cat(
        [torch.cos(half).unsqueeze(-1), axis * torch.sin(half).unsqueeze(-1)], dim=-1
    )


def quat_from_rotmat(rot: torch.Tensor) -> torch.Tensor:
    """Convert (..., 3, 3) rotation matrices to unit quaternions (w, x, y, z).

    Picks the numerically largest of the four standard extraction branches
    per element, so it is stable for rotations near 180 degrees.
    """
    m = rot
    m00, m01, m02 = m[..., 0, 0], m[..., 0, 1], m[..., 0, 2]
    m10, m11, m12 = m[..., 1, 0], m[..., 1, 1], m[..., 1, 2]
    m20, m21, m22 = m[..., 2, 0], m[..., 2, 1], m[..., 2, 2]
    tr = m00 + m11 + m22
    # Four candidate 4x|q_i| vectors, one per dominant component.
    qw = torch.stack([1 + tr, m21 - m12, m02 - m20, m10 - m01], dim=-1)
    qx = torch.stack([m21 - m12, 1 + m00 - m11 - m22, m01 + m10, m02 + m20], dim=-1)
    qy = torch.stack([m02 - m20, m01 + m10, 1 - m00 + m11 - m22, m12 + m21], dim=-1)
    qz = torch.stack([m10 - m01, m02 + m20, m12 + m21, 1 - m00 - m11 + m22], dim=-1)
    mags = torch.stack([1 + tr, 1 + m00 - m11 - m22, 1 - m00 + m11 - m22, 1 - m00 - m11 + m22], dim=-1)
    choice = mags.argmax(dim=-1)
    cands = torch.stack([qw, qx, qy, qz], dim=-2)
    q = torch.take_along_dim(cands, choice[..., None, None].expand(*choice.shape, 1, 4), dim=-2).squeeze(-2)
    q = quat_normalize(q)
    # Canonical sign: non-negative w.
    return torch.where(q[..., 0:1] < 0, -q, q)


def sh_eval(coeffs: torch.Tensor, dirs: torch.Tensor) -> torch.Tensor:
    """Evaluate real SH expansions at unit directions.

    Args:
        coeffs: (..., C, K) coefficients where K is 1, 4, 9, or 16.
        dirs: (..., 3) unit directions, broadcastable against the coeff batch.

    Returns:
        (..., C) evaluated values. Linear in ``coeffs``.
    """
    k = coeffs.shape[-1]
    degree = int(math.isqrt(k)) - 1
    if (degree + 1) ** 2 != k or degree > 3:
        raise ValueError(f"coefficient count {k} is not a supported SH band size")
    x, y, z = dirs.unbind(-1)
    basis = [torch.full_like(x, SH_C0)]
    if degree >= 1:
        basis += [-SH_C1 * y, SH_C1 * z, -SH_C1 * x]
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        basis += [
            SH_C2[0] * x * y,
            SH_C2[1] * y * z,
            SH_C2[2] * (2 * zz - xx - yy),
            SH_C2[3] * x * z,
            SH_C2[4] * (xx - yy),
        ]
    if degree >= 3:
        xx, yy, zz = x * x, y * y, z * z
        basis += [
            SH_C3[0] * y * (3 * xx - yy),
            SH_C3[1] * x * y * z,
            SH_C3[2] * y * (4 * zz - xx - yy),
            SH_C3[3] * z * (2 * zz - 3 * xx - 3 * yy),
            SH_C3[4] * x * (4 * zz - xx - yy),
            SH_C3[5] * z * (xx - yy),
            SH_C3[6] * x * (xx - 3 * yy),
        ]
    b = torch.stack(basis, dim=-1)  # (..., K)
    return (coeffs * b.unsqueeze(-2)).sum(-1)


@dataclass
class ToneMapParams:
    """Display transform parameters: exposure in stops, then gamma."""

    gamma: float = 2.4
    exposure: float = 0.0

    def __post_init__(self) -> None:
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")


def tonemap(rgb: torch.Tensor, params: ToneMapParams | None = None) -> torch.Tensor:
    """Map linear radiance to display space: clamp01(rgb * 2^exposure)^(1/gamma).

    Monotone in every channel; values outside [0, 1] after exposure receive
    zero gradient from the clamp. Exact zero maps to exact zero with zero
    gradient (the power's derivative diverges at 0, so the pow input is
    kept away from 0 and the zero branch selected explicitly).
    """
    if params is None:
        params = ToneMapParams()
    scaled = (rgb * (2.0 ** params.exposure)).clamp(0.0, 1.0)
    safe = scaled.clamp_min(1e-12) ** (1.0 / params.gamma)
    return torch.where(scaled > 0, safe, torch.zeros_like(scaled))


def reflect(n: torch.Tensor, wo: torch.Tensor) -> torch.Tensor:
    """Mirror the outgoing direction wo about the normal n.

    Both inputs are unit vectors with n and wo in the same hemisphere.
    Raises if any pair is back-facing (n . wo <= 0).
    """
    cos = (n * wo).sum(-1)
    if not bool((cos > 0).all()):
        raise ValueError("reflect requires front-facing directions (n . wo > 0)")
    return 2.0 * cos.unsqueeze(-1) * n - wo


def reflect_clamped(n: torch.Tensor, wo: torch.Tensor) -> torch.Tensor:
    # Same mirror formula without the hemisphere check; back-facing inputs
    # produce some direction that downstream masking discards.
    cos = (n * wo).sum(-1, keepdim=True)
    return normalize(2.0 * cos * n - wo)


def orthonormal_basis(n: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Build tangent/bitangent rows orthogonal to unit normals n (..., 3)."""
    x, y, z = n.unbind(-1)
    sign = torch.where(z >= 0, torch.ones_like(z), -torch.ones_like(z))
    a = -1.0 / (sign + z)
    b = x * y * a
    t = torch.stack([1.0 + sign * x * x * a, sign * b, -sign * x], dim=-1)
    bt = torch.stack([b, sign + y * y * a, -y], dim=-1)
    return t, bt


def fibonacci_hemisphere(count: int, seed: int = 0, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Deterministic low-discrepancy directions on the +z unit hemisphere.

    Uses a Fibonacci spiral: elevations uniform in cos(theta) so the set
    covers the hemisphere uniformly by solid angle; the seed rotates the
    spiral azimuthally so different callers decorrelate.

    Args:
        count: number of directions, must be positive.
        seed: deterministic azimuthal offset selector.

    Returns:
        (count, 3) unit vectors with z > 0.
    """
    if count <= 0:
        raise ValueError("count must be positive")
    k = torch.arange(count, dtype=torch.float64)
    z = (k + 0.5) / count  # uniform in z => uniform by solid angle
    r = torch.sqrt((1.0 - z * z).clamp_min(0.0))
    offset = 2.0 * math.pi * ((seed * GOLDEN_RATIO) % 1.0)
    phi = 2.0 * math.pi * ((k / GOLDEN_RATIO) % 1.0) + offset
    dirs = torch.stack([r * torch.cos(phi), r * torch.sin(phi), z], dim=-1)
    return dirs.to(dtype)


def sample_hemisphere(n: torch.Tensor, count: int, seed: int = 0) -> torch.Tensor:
    """Rotate a Fibonacci hemisphere point set into the frame of each normal.

    Args:
        n: (..., 3) unit normals.
        count: rays per normal.
        seed: forwarded to the spiral so repeated calls are reproducible.

    Returns:
        (..., count, 3) unit directions, all on the front side of n.
    """
    local = fibonacci_hemisphere(count, seed=seed, dtype=n.dtype)
    t, bt = orthonormal_basis(n)
    # d = lx * t + ly * bt + lz * n, batched over the leading dims of n.
    lx, ly, lz = local.unbind(-1)
    d = (
        t.unsqueeze(-2) * lx.reshape((1,) * (n.dim() - 1) + (count, 1))
        + bt.unsqueeze(-2) * ly.reshape((1,) * (n.dim() - 1) + (count, 1))
        + n.unsqueeze(-2) * lz.reshape((1,) * (n.dim() - 1) + (count, 1))
    )
    return normalize(d)


def ray_sphere_exit(
    origin: torch.Tensor, dirs: torch.Tensor, center: torch.Tensor, radius: float
) -> torch.Tensor:
    """Distance along each ray to the far intersection with a sphere.

    Origins are expected inside the sphere (only the positive root is kept);
    rays starting outside return 0.
    """
    oc = origin - center
    b = (dirs * oc).sum(-1)
    c = (oc * oc).sum(-1) - radius * radius
    disc = (b * b - c).clamp_min(0.0)
    t = -b + torch.sqrt(disc)
    return t.clamp_min(0.0)
