"""Hierarchical frequency backbone with semantic side injection.

A 4-stage convolutional pathway over the frequency-enhanced input, producing
feature maps at strides 4/8/16/32. A per-stage side adapter upsamples the
semantic feature map to each stage's resolution and adds it in; the final
adapter convolution is zero-initialized, so injection starts as the identity
and the model at step 0 behaves exactly as if the adapters were absent.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .errors import ValidationError

STRIDES = (4, 8, 16, 32)


class LayerNorm2d(nn.Module):
    """LayerNorm over the channel dimension of (B, C, H, W) maps."""

    def __init__(self, channels: int, eps: float = 1e-6) -> None:
        super().__init__()
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        mean = x.mean(1, keepdim=True)
        var = (x - mean).pow(2).mean(1, keepdim=True)
        x = (x - mean) / torch.sqrt(var + self.eps)
        return x * self.weight[:, None, None] + self.bias[:, None, None]


class ConvBlock(nn.Module):
    """Depthwise 7x7 + pointwise MLP residual block (modern conv style)."""

    def __init__(self, channels: int, mlp_ratio: int = 4) -> None:
        super().__init__()
        self.dwconv = nn.Conv2d(channels, channels, 7, padding=3, groups=channels)
        self.norm = nn.LayerNorm(channels)
        self.pw1 = nn.Linear(channels, mlp_ratio * channels)
        self.pw2 = nn.Linear(mlp_ratio * channels, channels)

    def forward(self, x: Tensor) -> Tensor:
        y = self.dwconv(x).permute(0, 2, 3, 1)
        y = self.pw2(F.gelu(self.pw1(self.norm(y))))
        return x + y.permute(0, 3, 1, 2)


def stem_inflate(weight: Tensor) -> Tensor:
    """Expand a 3-input-channel stem kernel to 9 input channels.

    The first three input slices copy the originals; each of the six new
    slices is the per-position mean of the RGB slices scaled by 1/3, which
    keeps initial activation statistics comparable when the extra channels
    carry band reconstructions of the same image.
    """
    if weight.ndim != 4 or weight.shape[1] != 3:
        raise ValidationError(
            f"expected a (out, 3, kh, kw) stem kernel, got {tuple(weight.shape)}"
        )
    extra = weight.mean(dim=1, keepdim=True) / 3.0
    return torch.cat([weight, extra.expand(-1, 6, -1, -1)], dim=1).contiguous()


class FrequencyBackbone(nn.Module):
    """4-stage conv hierarchy at strides 4/8/16/32.

    The stem is always created for 3 channels and inflated when the input
    carries the two band reconstructions, mirroring how pretrained RGB stems
    would be expanded.
    """

    def __init__(
        self,
        in_channels: int = 9,
        channels: tuple[int, int, int, int] = (96, 192, 384, 768),
        depths: tuple[int, int, int, int] = (3, 3, 9, 3),
    ) -> None:
        super().__init__()
        if in_channels not in (3, 9):
            raise ValidationError(f"in_channels must be 3 or 9, got {in_channels}")
        if len(channels) != 4 or len(depths) != 4:
            raise ValidationError("backbone requires exactly 4 stages")
        self.in_channels = in_channels
        self.channels = tuple(channels)
        self.stem = nn.Conv2d(in_channels, channels[0], 4, stride=4)
        if in_channels == 9:
            with torch.no_grad():
                rgb_stem = nn.Conv2d(3, channels[0], 4, stride=4)
                self.stem.weight.copy_(stem_inflate(rgb_stem.weight))
                self.stem.bias.copy_(rgb_stem.bias)
        self.stem_norm = LayerNorm2d(channels[0])
        self.stages = nn.ModuleList(
            nn.Sequential(*[ConvBlock(c) for _ in range(d)])
            for c, d in zip(channels, depths)
        )
        self.downsamples = nn.ModuleList(
            nn.Sequential(LayerNorm2d(c_in), nn.Conv2d(c_in, c_out, 2, stride=2))
            for c_in, c_out in zip(channels[:-1], channels[1:])
        )

    def forward(self, x: Tensor) -> list[Tensor]:
        h, w = x.shape[-2], x.shape[-1]
        if h % 32 or w % 32:
            pad_h, pad_w = (32 - h % 32) % 32, (32 - w % 32) % 32
            raise ValidationError(
                f"input {h}x{w} not divisible by 32; pad to {h + pad_h}x{w + pad_w}"
            )
        if x.shape[-3] != self.in_channels:
            raise ValidationError(
                f"expected {self.in_channels}-channel input, got {x.shape[-3]}"
            )
        feats = []
        x = self.stem_norm(self.stem(x))
        for k, stage in enumerate(self.stages):
            if k > 0:
                x = self.downsamples[k - 1](x)
            x = stage(x)
            feats.append(x)
        return feats


class SideAdapter(nn.Module):
    """Adapts the g x g semantic map to one backbone stage.

    Transposed-convolution x2 steps until the stage resolution is reached (a
    bilinear snap covers non power-of-two ratios and stages below the grid
    size), then a 1x1 and a 3x3 convolution with layer normalization between
    operations. The final convolution is zero-initialized.
    """

    def __init__(self, in_dim: int, out_channels: int, grid: int, target_hw: tuple[int, int]) -> None:
        super().__init__()
        self.target_hw = tuple(target_hw)
        longest = max(self.target_hw)
        n_up = math.ceil(math.log2(longest / grid)) if longest > grid else 0
        ups = []
        for _ in range(n_up):
            ups.append(nn.ConvTranspose2d(in_dim, in_dim, 2, stride=2))
            ups.append(LayerNorm2d(in_dim))
        self.upsample = nn.Sequential(*ups)
        self.project = nn.Conv2d(in_dim, out_channels, 1)
        self.norm = LayerNorm2d(out_channels)
        self.smooth = nn.Conv2d(out_channels, out_channels, 3, padding=1)
        nn.init.zeros_(self.smooth.weight)
        nn.init.zeros_(self.smooth.bias)

    def forward(self, fmap: Tensor) -> Tensor:
        x = self.upsample(fmap)
        if x.shape[-2:] != self.target_hw:
            x = F.interpolate(x, size=self.target_hw, mode="bilinear", align_corners=False)
        return self.smooth(self.norm(self.project(x)))


class SideAdapterBank(nn.Module):
    """One independent adapter per backbone stage (no weight sharing)."""

    def __init__(
        self,
        in_dim: int,
        channels: tuple[int, int, int, int],
        grid: int,
        input_hw: tuple[int, int],
    ) -> None:
        super().__init__()
        self.adapters = nn.ModuleList(
            SideAdapter(in_dim, c, grid, (input_hw[0] // s, input_hw[1] // s))
            for c, s in zip(channels, STRIDES)
        )

    def inject(self, stages: list[Tensor], fmap: Tensor) -> list[Tensor]:
        """Additive injection: stage_k + adapter_k(semantic map)."""
        if len(stages) != len(self.adapters):
            raise ValidationError(
                f"got {len(stages)} stage maps for {len(self.adapters)} adapters"
            )
        return [s + a(fmap) for s, a in zip(stages, self.adapters)]

    def forward(self, stages: list[Tensor], fmap: Tensor) -> list[Tensor]:
        return self.inject(stages, fmap)
