"""Finite-difference verification of analytic gradients.

Checks sampled coordinates of every trainable tensor against central
differences of the full training objective, in float64:

    numeric  = (f(theta + h e_i) - f(theta - h e_i)) / (2 h)
    rel_err  = |analytic - numeric| / max(|analytic|, |numeric|, 1e-4)

The denominator floor of 1e-4 turns the relative test into an absolute
one (|diff| < threshold * 1e-4 = 1e-8) for near-zero gradients, where a
pure ratio would amplify central-difference truncation noise (~1e-10 for
these objectives) into spurious failures. The default tolerance is 1e-4
at h = 1e-5, which float64 central differences meet comfortably for
smooth objectives. Parameters are jittered before checking so
zero-initialized layers (side-adapter output convolutions) do not sit at
measure-zero points that would mask wiring bugs downstream of them.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import torch
from torch import Tensor, nn

from .config import RunConfig
from .errors import ValidationError
from .losses import LossWeights, edge_band, edge_loss, mask_loss, total_loss
from .model import ManipulationLocalizer, build_model


@dataclass
class GradCheckRow:
    name: str
    index: int
    analytic: float
    numeric: float
    rel_err: float


@dataclass
class GradCheckReport:
    rows: list[GradCheckRow]
    threshold: float
    h: float
    seconds: float

    @property
    def max_rel(self) -> float:
        return max((r.rel_err for r in self.rows), default=0.0)

    @property
    def worst(self) -> GradCheckRow | None:
        return max(self.rows, key=lambda r: r.rel_err, default=None)

    @property
    def passed(self) -> bool:
        return bool(self.rows) and self.max_rel < self.threshold

    def summary(self) -> str:
        lines = [
            f"checked {len(self.rows)} coordinates across "
            f"{len({r.name for r in self.rows})} tensors in {self.seconds:.1f}s",
            f"max relative error {self.max_rel:.3e} (threshold {self.threshold:.0e})",
        ]
        if self.worst is not None:
            w = self.worst
            lines.append(
                f"worst: {w.name}[{w.index}] analytic={w.analytic:.6e} "
                f"numeric={w.numeric:.6e}"
            )
        lines.append("PASS" if self.passed else "FAIL")
        return "\n".join(lines)


def relative_error(analytic: float, numeric: float, floor: float = 1e-4) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def check_scalar_fn(
    fn,
    named_params: list[tuple[str, Tensor]],
    h: float = 1e-5,
    per_tensor: int = 3,
    seed: int = 0,
    threshold: float = 1e-4,
) -> list[GradCheckRow]:
    """Compare autograd gradients of ``fn()`` against central differences.

    ``fn`` must be a deterministic closure over ``named_params`` returning a
    scalar tensor. Up to ``per_tensor`` coordinates are sampled per tensor.
    """
    if not named_params:
        raise ValidationError("no parameters to check")
    for _, p in named_params:
        if p.dtype != torch.float64:
            raise ValidationError("gradient checks require float64 parameters")
        p.grad = None
    loss = fn()
    loss.backward()
    grads = {name: (p.grad.detach().clone() if p.grad is not None else None)
             for name, p in named_params}
    rng = torch.Generator().manual_seed(seed)
    rows: list[GradCheckRow] = []
    with torch.no_grad():
        for name, p in named_params:
            g = grads[name]
            if g is None:
                g = torch.zeros_like(p)
            flat = p.data.view(-1)
            n = flat.numel()
            k = min(per_tensor, n)
            idx = torch.randperm(n, generator=rng)[:k]
            for i in idx.tolist():
                orig = flat[i].item()
                flat[i] = orig + h
                f_plus = float(fn())
                flat[i] = orig - h
                f_minus = float(fn())
                flat[i] = orig
                numeric = (f_plus - f_minus) / (2.0 * h)
                analytic = float(g.view(-1)[i])
                rows.append(
                    GradCheckRow(name, i, analytic, numeric,
                                 relative_error(analytic, numeric))
                )
    return rows


def _tiny_config() -> RunConfig:
    """Smallest geometry that still exercises every component."""
    return RunConfig.desk(
        encoder_size=32,
        encoder_patch=8,
        encoder_dim=16,
        encoder_layers=4,
        encoder_heads=2,
        embed_dim=16,
        align_heads=2,
        backbone_size=64,
        backbone_channels=(8, 12, 16, 24),
        backbone_depths=(1, 1, 1, 1),
        query_dim=16,
        decoder_heads=2,
        gate_hidden=8,
        batch_size=2,
    )


def _fixed_batch(config: RunConfig, seed: int) -> tuple[Tensor, Tensor]:
    gen = torch.Generator().manual_seed(seed)
    images = torch.rand((2, 3, config.image_size, config.image_size),
                        generator=gen, dtype=torch.float64)
    masks = torch.zeros((2, config.image_size, config.image_size), dtype=torch.float64)
    q = config.image_size // 4
    masks[0, q : 3 * q, q : 2 * q] = 1.0
    masks[1, 2 * q :, : 2 * q] = 1.0
    return images, masks


def _jitter(model: nn.Module, scale: float, seed: int) -> None:
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in model.parameters():
            if p.requires_grad:
                p.add_(torch.randn(p.shape, generator=gen, dtype=p.dtype) * scale)


def objective_closure(model: ManipulationLocalizer, images: Tensor, masks: Tensor,
                      weights: LossWeights, rho: int):
    """Full training objective as a closure suitable for FD probing."""

    def fn() -> Tensor:
        out = model(images)
        l_m = mask_loss(out.mask_prob[:, 0], masks)
        band = edge_band(masks, rho)
        l_e = edge_loss(out.mask_prob[:, 0], masks, band)
        if out.z is not None:
            labels = model.patch_targets(masks)
            l_pc = model.aligner.loss(out.z, labels)
        else:
            l_pc = out.mask_prob.sum() * 0.0
        return total_loss(l_m, l_e, l_pc, weights).total

    return fn


def run_gradcheck(
    config: RunConfig | None = None,
    h: float = 1e-5,
    per_tensor: int = 2,
    threshold: float = 1e-4,
    seed: int = 0,
    jitter: float = 0.02,
) -> GradCheckReport:
    """Build a tiny float64 model and FD-check every trainable tensor."""
    start = time.monotonic()
    cfg = config or _tiny_config()
    model = build_model(cfg).double()
    _jitter(model, jitter, seed + 1)
    images, masks = _fixed_batch(cfg, seed)
    weights = LossWeights(cfg.lambda_mask, cfg.lambda_edge, cfg.lambda_pc)
    fn = objective_closure(model, images, masks, weights, cfg.edge_rho)
    named = [(n, p) for n, p in model.named_parameters() if p.requires_grad]
    rows = check_scalar_fn(fn, named, h=h, per_tensor=per_tensor,
                           seed=seed, threshold=threshold)
    return GradCheckReport(rows=rows, threshold=threshold, h=h,
                           seconds=time.monotonic() - start)
