"""Prototype-guided, frequency-gated mask decoding.

For each backbone scale, the trained fake prototype is projected into a
semantic query that cross-attends over the aligned feature map; a per-pixel
dot product between the updated query and a pixel embedding of the same map
yields a basis mask. A small gating network over the frequency-enhanced
input predicts per-pixel, per-scale weights in [0, 1], and the fused logit
map combines the gated sum with a residual 1x1 convolution over the raw
basis stack. The probability mask is the sigmoid of the upsampled logits;
the image-level score is its spatial maximum.

A plain multi-scale convolutional head (:class:`SimpleDecoder`) is provided
for ablations that drop the prototype-guided pathway.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .errors import ValidationError


@dataclass
class DecoderOutput:
    logits: Tensor  # (B, 1, H/4, W/4) pre-activation map
    basis: Tensor | None = None  # (B, 4, H/4, W/4)
    gates: Tensor | None = None  # (B, 4, H/4, W/4) in [0, 1]
    attn: list[Tensor] = field(default_factory=list)  # per-scale (B, heads, 1, hw)


def fuse(basis: Tensor, gates: Tensor, phi: nn.Conv2d) -> Tensor:
    """Gated sum plus residual semantic pathway.

    logits = sum_k gates_k * basis_k + phi(basis), with phi a 1x1 convolution
    over the 4-channel basis concatenation.
    """
    if basis.shape != gates.shape:
        raise ValidationError(
            f"basis {tuple(basis.shape)} and gates {tuple(gates.shape)} must match"
        )
    return (gates * basis).sum(dim=1, keepdim=True) + phi(basis)


def predict(logits: Tensor, target_hw: tuple[int, int]) -> Tensor:
    """Bilinearly upsample the logit map to ``target_hw``, then sigmoid."""
    if target_hw[0] < logits.shape[-2] or target_hw[1] < logits.shape[-1]:
        raise ValidationError(
            f"target {target_hw} below decoder resolution {tuple(logits.shape[-2:])}"
        )
    up = F.interpolate(logits, size=target_hw, mode="bilinear", align_corners=False)
    return torch.sigmoid(up)


def image_score(mask_prob: Tensor) -> Tensor:
    """Maximum predicted probability over all spatial locations."""
    if mask_prob.numel() == 0:
        raise ValidationError("image_score of an empty mask is undefined")
    return mask_prob.amax(dim=(-2, -1))


def classify(score: float | Tensor, threshold: float = 0.5) -> str:
    """Image-level decision: manipulated iff the score strictly exceeds the
    threshold (default 0.5)."""
    value = float(score)
    return "manipulated" if value > threshold else "authentic"


class _PrototypeQuery(nn.Module):
    """Single-query multi-head cross-attention for one scale."""

    def __init__(self, proto_dim: int, feat_channels: int, query_dim: int, heads: int) -> None:
        super().__init__()
        if query_dim % heads:
            raise ValidationError(f"query_dim {query_dim} not divisible by {heads} heads")
        self.heads = heads
        self.q_proj = nn.Linear(proto_dim, query_dim)
        self.k_proj = nn.Linear(feat_channels, query_dim)
        self.v_proj = nn.Linear(feat_channels, query_dim)
        self.out_proj = nn.Linear(query_dim, query_dim)
        # The basis mask is a product of two learned factors (updated query and
        # pixel embedding); with default inits both start near zero and their
        # product's gradient is quadratically small. A unit-scale random bias on
        # the output projection gives the query a fixed direction from the
        # start, so the basis acts as a random linear readout of the pixel
        # embeddings and mask gradients reach the feature stack immediately.
        nn.init.normal_(self.out_proj.bias, std=1.0)
        self.pixel_head = nn.Conv2d(feat_channels, query_dim, 1)

    def forward(self, proto: Tensor, feat: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        """Returns (updated query (B, d_q), pixel embeddings (B, d_q, h, w),
        attention weights (B, heads, 1, hw))."""
        b, c, h, w = feat.shape
        tokens = feat.flatten(2).transpose(1, 2)  # (B, hw, C)
        d = self.q_proj.out_features
        dh = d // self.heads
        q = self.q_proj(proto).expand(b, -1).reshape(b, 1, self.heads, dh).transpose(1, 2)
        k = self.k_proj(tokens).reshape(b, -1, self.heads, dh).transpose(1, 2)
        v = self.v_proj(tokens).reshape(b, -1, self.heads, dh).transpose(1, 2)
        attn = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(dh), dim=-1)
        upd = (attn @ v).transpose(1, 2).reshape(b, d)
        upd = self.out_proj(upd)
        pixels = self.pixel_head(feat)
        return upd, pixels, attn


class PrototypeGatedDecoder(nn.Module):
    """Four-scale prototype-queried basis masks fused under spatial gating."""

    def __init__(
        self,
        proto_dim: int,
        stage_channels: tuple[int, int, int, int],
        freq_channels: int = 9,
        query_dim: int = 64,
        heads: int = 4,
        gate_hidden: int = 32,
        basis_mode: str = "query_dot",
    ) -> None:
        super().__init__()
        if basis_mode not in ("query_dot", "attn_map"):
            raise ValidationError(f"unknown basis_mode {basis_mode!r}")
        self.basis_mode = basis_mode
        self.query_dim = query_dim
        self.queries = nn.ModuleList(
            _PrototypeQuery(proto_dim, c, query_dim, heads) for c in stage_channels
        )
        self.gate_net = nn.Sequential(
            nn.Conv2d(freq_channels, gate_hidden, 3, stride=2, padding=1),
            nn.GELU(),
            nn.Conv2d(gate_hidden, gate_hidden, 3, stride=2, padding=1),
            nn.GELU(),
        )
        self.gate_out = nn.Conv2d(gate_hidden, 4, 1)
        self.phi = nn.Conv2d(4, 1, 1)

    def basis_mask(self, k: int, proto: Tensor, feat: Tensor, out_hw: tuple[int, int]):
        """Basis mask for scale ``k`` at the common decoder resolution."""
        upd, pixels, attn = self.queries[k](proto, feat)
        if self.basis_mode == "attn_map":
            b = feat.shape[0]
            raw = attn.mean(dim=1).reshape(b, 1, *feat.shape[-2:])
        else:
            raw = torch.einsum("bd,bdhw->bhw", upd, pixels)[:, None] / math.sqrt(self.query_dim)
        if raw.shape[-2:] != tuple(out_hw):
            raw = F.interpolate(raw, size=out_hw, mode="bilinear", align_corners=False)
        return raw, attn

    def gates(self, freq_input: Tensor) -> Tensor:
        """Scale-wise gate maps in [0, 1] at 1/4 of the input resolution."""
        return torch.sigmoid(self.gate_out(self.gate_net(freq_input)))

    def forward(self, stages: list[Tensor], proto: Tensor, freq_input: Tensor) -> DecoderOutput:
        out_hw = stages[0].shape[-2:]
        basis_list, attn_list = [], []
        for k, feat in enumerate(stages):
            b_k, attn = self.basis_mask(k, proto, feat, out_hw)
            basis_list.append(b_k)
            attn_list.append(attn)
        basis = torch.cat(basis_list, dim=1)
        gate = self.gates(freq_input)
        if gate.shape[-2:] != basis.shape[-2:]:
            gate = F.interpolate(gate, size=basis.shape[-2:], mode="bilinear", align_corners=False)
        logits = fuse(basis, gate, self.phi)
        return DecoderOutput(logits=logits, basis=basis, gates=gate, attn=attn_list)


class SimpleDecoder(nn.Module):
    """Lateral 1x1 projections summed at the finest scale, then a conv head."""

    def __init__(self, stage_channels: tuple[int, int, int, int], width: int = 64) -> None:
        super().__init__()
        self.laterals = nn.ModuleList(nn.Conv2d(c, width, 1) for c in stage_channels)
        self.head = nn.Sequential(
            nn.Conv2d(width, width, 3, padding=1), nn.GELU(), nn.Conv2d(width, 1, 1)
        )

    def forward(self, stages: list[Tensor]) -> DecoderOutput:
        out_hw = stages[0].shape[-2:]
        acc = None
        for lat, feat in zip(self.laterals, stages):
            y = lat(feat)
            if y.shape[-2:] != out_hw:
                y = F.interpolate(y, size=out_hw, mode="bilinear", align_corners=False)
            acc = y if acc is None else acc + y
        return DecoderOutput(logits=self.head(acc))
