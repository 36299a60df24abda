"""Image-space losses for scene fitting.

Reconstruction mixes mean absolute error with structural dissimilarity;
attribute buffers get an edge-aware first-difference smoothness penalty;
the environment light regularizer lives with the lighting code.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F

SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def gaussian_window(size: int = 11, sigma: float = 1.5, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    coords = torch.arange(size, dtype=torch.float64) - (size - 1) / 2.0
    g = torch.exp(-(coords ** 2) / (2.0 * sigma * sigma))
    kernel = torch.outer(g, g)
    return (kernel / kernel.sum()).to(dtype)


def ssim(
    img1: torch.Tensor, img2: torch.Tensor, window_size: int = 11, sigma: float = 1.5
) -> torch.Tensor:
    """Mean SSIM over (H, W, C) images with a Gaussian window.

    Symmetric in its arguments and exactly 1 for identical inputs.
    """
    if img1.shape != img2.shape:
        raise ValueError(f"image shapes differ: {tuple(img1.shape)} vs {tuple(img2.shape)}")
    if img1.dim() == 2:
        img1 = img1.unsqueeze(-1)
        img2 = img2.unsqueeze(-1)
    c = img1.shape[-1]
    kernel = gaussian_window(window_size, sigma, img1.dtype)
    weight = kernel.expand(c, 1, window_size, window_size)
    pad = window_size // 2
    a = img1.permute(2, 0, 1).unsqueeze(0)
    b = img2.permute(2, 0, 1).unsqueeze(0)
    mu1 = F.conv2d(a, weight, padding=pad, groups=c)
    mu2 = F.conv2d(b, weight, padding=pad, groups=c)
    mu1_sq, mu2_sq, mu12 = mu1 * mu1, mu2 * mu2, mu1 * mu2
    sigma1 = F.conv2d(a * a, weight, padding=pad, groups=c) - mu1_sq
    sigma2 = F.conv2d(b * b, weight, padding=pad, groups=c) - mu2_sq
    sigma12 = F.conv2d(a * b, weight, padding=pad, groups=c) - mu12
    num = (2 * mu12 + SSIM_C1) * (2 * sigma12 + SSIM_C2)
    den = (mu1_sq + mu2_sq + SSIM_C1) * (sigma1 + sigma2 + SSIM_C2)
    return (num / den).mean()


def loss_reconstruction(
    rendered: torch.Tensor, target: torch.Tensor, lambda_ssim: float = 0.2
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """(1 - lambda) * MAE + lambda * (1 - SSIM) / 2.

    Returns (total, mae, dssim) so the parts can be logged unweighted.
    """
    if rendered.shape != target.shape:
        raise ValueError(
            f"rendered/target shapes differ: {tuple(rendered.shape)} vs {tuple(target.shape)}"
        )
    mae = (rendered - target).abs().mean()
    dssim = (1.0 - ssim(rendered, target)) / 2.0
    return (1.0 - lambda_ssim) * mae + lambda_ssim * dssim, mae, dssim


def loss_smooth(attr: torch.Tensor, image: torch.Tensor) -> torch.Tensor:
    """Edge-aware smoothness: mean over pixels of |d attr| * exp(-|d image|).

    Forward differences along x and y with the last column/row contributing
    zero; attribute channel magnitudes are summed, image edge strength is
    the mean absolute difference over its channels. Exactly zero for a
    constant attribute map.
    """
    if attr.shape[:2] != image.shape[:2]:
        raise ValueError("attribute map and image must share spatial dimensions")
    if attr.dim() == 2:
        attr = attr.unsqueeze(-1)
    h, w = attr.shape[:2]
    dx_a = (attr[:, 1:] - attr[:, :-1]).abs().sum(-1)
    dy_a = (attr[1:, :] - attr[:-1, :]).abs().sum(-1)
    dx_i = (image[:, 1:] - image[:, :-1]).abs().mean(-1)
    dy_i = (image[1:, :] - image[:-1, :]).abs().mean(-1)
    total = (dx_a * torch.exp(-dx_i)).sum() + (dy_a * torch.exp(-dy_i)).sum()
    return total / (h * w)


def psnr(img1: torch.Tensor, img2: torch.Tensor, peak: float = 1.0) -> float:
    mse = float(((img1 - img2) ** 2).mean())
    if mse <= 0:
        return float("inf")
    return 10.0 * math.log10(peak * peak / mse)
