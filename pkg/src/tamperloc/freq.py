"""Adaptive dual-band frequency decomposition.

An image is taken to the DCT domain with a global orthonormal 2D DCT-II per
channel, split into high- and low-frequency reconstructions through sigmoid
soft masks over a normalized radial frequency coordinate, and concatenated
with the original RGB into a 9-channel stack for the downstream backbone.

The band cutoffs are stored as unconstrained scalars and mapped through a
logistic to (0, 1), so they stay valid under plain gradient steps. Everything
on the path from the cutoff parameters to the reconstructions is smooth; no
hard thresholding is used anywhere.

All functions are pure and safe to call concurrently; trainable parameters
live in :class:`AdaptiveDualBand` and are owned by the enclosing model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import Tensor, nn

from .errors import ValidationError

_DCT_CACHE: dict[int, Tensor] = {}


def _dct_matrix(n: int) -> Tensor:
    """Orthonormal DCT-II matrix of size n x n, built in float64.

    Row k, column j holds sqrt(2/n) * cos(pi * (2j + 1) * k / (2n)), with the
    k = 0 row scaled to 1/sqrt(n). Building in float64 keeps the float32 path
    well inside its round-trip tolerance.
    """
    mat = _DCT_CACHE.get(n)
    if mat is None:
        j = torch.arange(n, dtype=torch.float64)[None, :]
        k = torch.arange(n, dtype=torch.float64)[:, None]
        mat = math.sqrt(2.0 / n) * torch.cos(math.pi * (2 * j + 1) * k / (2 * n))
        mat[0, :] = 1.0 / math.sqrt(n)
        _DCT_CACHE[n] = mat
    return mat


def _check_finite(x: Tensor, name: str) -> None:
    if not torch.isfinite(x).all():
        raise ValidationError(f"{name} contains non-finite values")


def dct2(image: Tensor) -> Tensor:
    """Orthonormal 2D DCT-II over the last two dimensions.

    Accepts any leading shape (channels, batches). The transform is computed
    in float64 and cast back to the input dtype.
    """
    _check_finite(image, "dct2 input")
    h, w = image.shape[-2], image.shape[-1]
    ch = _dct_matrix(h).to(image.device)
    cw = _dct_matrix(w).to(image.device)
    coeffs = ch @ image.double() @ cw.T
    return coeffs.to(image.dtype)


def idct2(coeffs: Tensor) -> Tensor:
    """Inverse of :func:`dct2` (the orthonormal DCT-II is its own adjoint)."""
    _check_finite(coeffs, "idct2 input")
    h, w = coeffs.shape[-2], coeffs.shape[-1]
    ch = _dct_matrix(h).to(coeffs.device)
    cw = _dct_matrix(w).to(coeffs.device)
    image = ch.T @ coeffs.double() @ cw
    return image.to(coeffs.dtype)


@dataclass
class BandMaskParams:
    """Learnable band parameters.

    alpha_h / alpha_l are unconstrained scalars; the effective cutoffs are
    sigmoid(alpha) in (0, 1). sharpness is a fixed positive hyperparameter
    controlling how closely the soft masks approximate hard truncation.
    """

    alpha_h: Tensor
    alpha_l: Tensor
    sharpness: float = 50.0


def radial_frequency(shape: tuple[int, int], device=None) -> Tensor:
    """Normalized radial coordinate over DCT index space.

    r(u, v) = sqrt(u^2 + v^2) / sqrt((H-1)^2 + (W-1)^2), so r is 0 at the DC
    coefficient and 1 at the highest corner frequency.
    """
    h, w = shape
    u = torch.arange(h, dtype=torch.float64, device=device)[:, None]
    v = torch.arange(w, dtype=torch.float64, device=device)[None, :]
    denom = math.sqrt((h - 1) ** 2 + (w - 1) ** 2)
    if denom == 0.0:  # 1x1 spectrum is pure DC
        denom = 1.0
    return torch.sqrt(u * u + v * v) / denom


def band_mask(params: BandMaskParams, shape: tuple[int, int], kind: str) -> Tensor:
    """Soft radial band mask in [0, 1]^(H x W), differentiable in the cutoff.

    kind "high": sigmoid(sharpness * (r - cutoff_h)) passes high frequencies;
    kind "low": sigmoid(sharpness * (cutoff_l - r)) passes low frequencies.
    """
    if params.sharpness <= 0:
        raise ValidationError(f"sharpness must be positive, got {params.sharpness}")
    if kind not in ("high", "low"):
        raise ValidationError(f"unknown band kind {kind!r}, expected 'high' or 'low'")
    alpha = params.alpha_h if kind == "high" else params.alpha_l
    r = radial_frequency(shape, device=alpha.device).to(alpha.dtype)
    cutoff = torch.sigmoid(alpha)
    if kind == "high":
        return torch.sigmoid(params.sharpness * (r - cutoff))
    return torch.sigmoid(params.sharpness * (cutoff - r))


def decompose(image: Tensor, params: BandMaskParams) -> tuple[Tensor, Tensor]:
    """Split an image into high- and low-band reconstructions.

    image has shape (..., C, H, W); both outputs match it. Gradients flow to
    alpha_h and alpha_l through the soft masks.
    """
    coeffs = dct2(image)
    shape = (image.shape[-2], image.shape[-1])
    mask_h = band_mask(params, shape, "high").to(coeffs.dtype)
    mask_l = band_mask(params, shape, "low").to(coeffs.dtype)
    assert mask_h.shape == coeffs.shape[-2:], "mask/coefficient shape drift"
    high = idct2(coeffs * mask_h)
    low = idct2(coeffs * mask_l)
    return high, low


def build_input(image: Tensor, high: Tensor, low: Tensor) -> Tensor:
    """Concatenate [RGB | high band | low band] into the 9-channel stack.

    The first three channels are the input tensor itself, bit for bit.
    """
    if image.shape != high.shape or image.shape != low.shape:
        raise ValidationError(
            f"shape mismatch in build_input: image {tuple(image.shape)}, "
            f"high {tuple(high.shape)}, low {tuple(low.shape)}"
        )
    return torch.cat([image, high, low], dim=-3)


class AdaptiveDualBand(nn.Module):
    """Trainable dual-band decomposition with logistic-mapped cutoffs.

    Both cutoffs start at 0.5 (alpha = 0); sharpness defaults to 50 and stays
    fixed. The two bands are independently parameterized and are not forced
    to be complementary.
    """

    def __init__(self, sharpness: float = 50.0, init_alpha: float = 0.0) -> None:
        super().__init__()
        if sharpness <= 0:
            raise ValidationError(f"sharpness must be positive, got {sharpness}")
        self.alpha_h = nn.Parameter(torch.tensor(float(init_alpha)))
        self.alpha_l = nn.Parameter(torch.tensor(float(init_alpha)))
        self.sharpness = float(sharpness)

    @property
    def params(self) -> BandMaskParams:
        return BandMaskParams(self.alpha_h, self.alpha_l, self.sharpness)

    @property
    def cutoffs(self) -> tuple[float, float]:
        return (torch.sigmoid(self.alpha_h).item(), torch.sigmoid(self.alpha_l).item())

    def forward(self, image: Tensor) -> tuple[Tensor, Tensor]:
        return decompose(image, self.params)

    def enhance(self, image: Tensor) -> Tensor:
        """Return the 9-channel frequency-enhanced stack for ``image``."""
        high, low = self(image)
        return build_input(image, high, low)
