"""Semantic feature extraction and prototype alignment.

A frozen patch encoder provides per-layer token grids; tokens from a selected
layer set are concatenated, projected into a shared embedding space, refined
with one residual self-attention block, and rearranged into a dense semantic
feature map. Two trainable prototype vectors anchor the "authentic" and
"manipulated" classes, supervised by a patch-to-prototype InfoNCE loss.

The encoder is a plug-in. Any object satisfying :class:`EncoderAdapter` can
back the pipeline; :class:`StandinEncoder` is a small fixed-seed transformer
that keeps the whole system runnable without downloads. Inference through an
adapter must be safe for concurrent read-only calls.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .errors import ConfigError, ValidationError

PROMPT_AUTHENTIC = "an authentic image region"
PROMPT_MANIPULATED = "a manipulated image region"


class EncoderAdapter(nn.Module):
    """Contract for pluggable frozen patch encoders.

    Required surface:

    * ``patch_grid``: (g, g) spatial token grid.
    * ``token_dim``: per-token embedding width.
    * ``layer_count``: number of layers exposed by :meth:`encode`.
    * ``encode(images)``: (B, 3, H, W) -> (B, layer_count, g*g, token_dim)
      patch tokens after every layer, deterministic for fixed weights/input.
    * ``has_text_embed`` / ``text_embed(prompt)``: optional prompt embedding
      capability returning a (token_dim,) vector.
    * ``manifest()``: dict identifying the backing weights, embedded in eval
      reports for provenance.

    The adapter is frozen: none of its parameters may receive gradients, and
    training must leave every parameter bit-identical.
    """

    patch_grid: tuple[int, int]
    token_dim: int
    layer_count: int

    @property
    def has_text_embed(self) -> bool:
        return False

    def encode(self, images: Tensor) -> Tensor:
        raise NotImplementedError

    def text_embed(self, prompt: str) -> Tensor:
        raise NotImplementedError(f"{type(self).__name__} has no text capability")

    def manifest(self) -> dict:
        raise NotImplementedError


class _Block(nn.Module):
    """Pre-norm transformer block used by the stand-in encoder."""

    def __init__(self, dim: int, heads: int) -> None:
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(
            nn.Linear(dim, 4 * dim), nn.GELU(), nn.Linear(4 * dim, dim)
        )

    def forward(self, x: Tensor) -> Tensor:
        y = self.norm1(x)
        x = x + self.attn(y, y, y, need_weights=False)[0]
        return x + self.mlp(self.norm2(x))


class StandinEncoder(EncoderAdapter):
    """Small fixed-seed patchifying transformer standing in for a pretrained
    encoder.

    Weights are drawn once from the given seed and frozen. ``text_embed`` is
    a deterministic hash of the prompt, so prototype initialization works
    without any external checkpoint.
    """

    def __init__(
        self,
        input_size: int = 64,
        patch_size: int = 8,
        token_dim: int = 64,
        layers: int = 6,
        heads: int = 4,
        seed: int = 0,
    ) -> None:
        super().__init__()
        if input_size % patch_size != 0:
            raise ValidationError(
                f"input_size {input_size} not divisible by patch_size {patch_size}"
            )
        g = input_size // patch_size
        self.input_size = input_size
        self.patch_size = patch_size
        self.patch_grid = (g, g)
        self.token_dim = token_dim
        self.layer_count = layers
        self.seed = seed
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            self.patch_embed = nn.Conv2d(3, token_dim, patch_size, stride=patch_size)
            self.pos_embed = nn.Parameter(torch.randn(1, g * g, token_dim) * 0.02)
            self.blocks = nn.ModuleList(_Block(token_dim, heads) for _ in range(layers))
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    @property
    def has_text_embed(self) -> bool:
        return True

    def encode(self, images: Tensor) -> Tensor:
        if images.ndim != 4 or images.shape[1] != 3:
            raise ValidationError(f"expected (B, 3, H, W) images, got {tuple(images.shape)}")
        if images.shape[-2:] != (self.input_size, self.input_size):
            raise ValidationError(
                f"stand-in encoder expects {self.input_size}x{self.input_size} input, "
                f"got {images.shape[-2]}x{images.shape[-1]}"
            )
        with torch.no_grad():
            x = self.patch_embed(images).flatten(2).transpose(1, 2) + self.pos_embed
            outs = []
            for block in self.blocks:
                x = block(x)
                outs.append(x)
        return torch.stack(outs, dim=1)

    def text_embed(self, prompt: str) -> Tensor:
        digest = hashlib.sha256(prompt.encode("utf-8")).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "big"))
        vec = rng.standard_normal(self.token_dim) / math.sqrt(self.token_dim)
        return torch.from_numpy(vec).float()

    def manifest(self) -> dict:
        return {
            "name": "standin",
            "input_size": self.input_size,
            "patch_size": self.patch_size,
            "token_dim": self.token_dim,
            "layers": self.layer_count,
            "seed": self.seed,
        }


def default_layer_set(layer_count: int) -> tuple[int, ...]:
    """Intermediate-and-deep selection {ceil(L/2), ceil(3L/4), L}, 1-based."""
    picks = sorted({math.ceil(layer_count / 2), math.ceil(3 * layer_count / 4), layer_count})
    return tuple(picks)


def patch_labels(mask: Tensor, grid: int, rule: str = "majority") -> Tensor:
    """Derive per-patch {0: real, 1: fake} labels from a binary pixel mask.

    "majority" labels a patch fake iff the mask mean over its receptive cell
    is >= 0.5 (half-covered cells count as fake); "any" labels fake on any
    overlap. Pure function of its inputs.
    """
    if rule not in ("majority", "any"):
        raise ValidationError(f"unknown patch label rule {rule!r}")
    squeeze = mask.ndim == 2
    m = mask[None] if squeeze else mask
    mf = m.float()
    if not torch.logical_or(mf == 0, mf == 1).all():
        raise ValidationError("patch_labels requires a binary mask")
    frac = F.adaptive_avg_pool2d(mf[:, None], (grid, grid))[:, 0]
    labels = (frac >= 0.5) if rule == "majority" else (frac > 0)
    labels = labels.long().flatten(1)
    return labels[0] if squeeze else labels


def contrastive_loss(
    z: Tensor,
    labels: Tensor,
    proto_real: Tensor,
    proto_fake: Tensor,
    tau: Tensor | float,
) -> Tensor:
    """Patch-to-prototype InfoNCE over the two-class prototype pair.

    Mean over patches of -log softmax(cos(z_i, e_c) / tau) at the true class.
    Cosines are epsilon-guarded (1e-8), so zero-norm inputs never produce NaN.
    Differentiable w.r.t. z, both prototypes, and tau.
    """
    if z.shape[-1] != proto_real.shape[-1]:
        raise ValidationError(
            f"embedding dim {z.shape[-1]} != prototype dim {proto_real.shape[-1]}"
        )
    flat = z.reshape(-1, z.shape[-1])
    sim_r = F.cosine_similarity(flat, proto_real[None, :], dim=-1, eps=1e-8)
    sim_f = F.cosine_similarity(flat, proto_fake[None, :], dim=-1, eps=1e-8)
    logits = torch.stack([sim_r, sim_f], dim=-1) / tau
    return F.cross_entropy(logits, labels.reshape(-1).long())


def init_prototypes(
    dim: int,
    source: str = "random",
    encoder: EncoderAdapter | None = None,
    projection: nn.Module | None = None,
    seed: int = 0,
) -> tuple[Tensor, Tensor]:
    """Initial (real, fake) prototype vectors of width ``dim``.

    "text" embeds the two class prompts through the encoder and, when the
    widths differ, through the shared projection. "random" draws seeded
    Gaussians. The returned tensors are detached; the caller wraps them as
    trainable parameters.
    """
    if source == "random":
        rng = np.random.default_rng(seed)
        protos = rng.standard_normal((2, dim)) / math.sqrt(dim)
        pair = torch.from_numpy(protos).float()
        return pair[0], pair[1]
    if source == "text":
        if encoder is None or not encoder.has_text_embed:
            raise ConfigError(
                "prototype source 'text' requires an encoder with text_embed; "
                "use source='random' otherwise"
            )
        vec_r = encoder.text_embed(PROMPT_AUTHENTIC)
        vec_f = encoder.text_embed(PROMPT_MANIPULATED)
        if vec_r.shape[-1] != dim:
            if projection is None:
                raise ConfigError(
                    f"text embedding dim {vec_r.shape[-1]} != prototype dim {dim} "
                    "and no projection was provided"
                )
            with torch.no_grad():
                vec_r = projection(vec_r)
                vec_f = projection(vec_f)
        return vec_r.detach().clone(), vec_f.detach().clone()
    raise ConfigError(f"unknown prototype source {source!r}")


class PatchAligner(nn.Module):
    """Aggregates frozen-encoder tokens into a semantic map and learns the
    real/fake prototype pair.

    Trainable pieces: the shared projection W_m, the residual self-attention
    refiner, the linear patch projector, the prototypes, and the log
    temperature. The encoder itself stays outside this module and frozen.
    """

    def __init__(
        self,
        token_dim: int,
        layer_count: int,
        embed_dim: int = 256,
        layer_set: tuple[int, ...] | None = None,
        heads: int = 8,
        tau_init: float = 0.07,
        use_projector: bool = True,
        proto_source: str = "text",
        proto_seed: int = 0,
        encoder: EncoderAdapter | None = None,
    ) -> None:
        super().__init__()
        layer_set = tuple(layer_set) if layer_set else default_layer_set(layer_count)
        if any(l < 1 or l > layer_count for l in layer_set):
            raise ConfigError(
                f"layer set {layer_set} out of range for a {layer_count}-layer encoder"
            )
        self.layer_set = layer_set
        self.token_dim = token_dim
        self.embed_dim = embed_dim
        self.merge = nn.Linear(len(layer_set) * token_dim, embed_dim)
        nn.init.zeros_(self.merge.bias)
        self.attn = nn.MultiheadAttention(embed_dim, heads, batch_first=True)
        self.projector: nn.Module = (
            nn.Linear(embed_dim, embed_dim) if use_projector else nn.Identity()
        )
        self.text_proj = (
            nn.Linear(token_dim, embed_dim)
            if proto_source == "text" and token_dim != embed_dim
            else None
        )
        e_r, e_f = init_prototypes(
            embed_dim, proto_source, encoder, self.text_proj, proto_seed
        )
        self.proto_real = nn.Parameter(e_r.clone())
        self.proto_fake = nn.Parameter(e_f.clone())
        self.log_tau = nn.Parameter(torch.tensor(math.log(tau_init)))

    @property
    def tau(self) -> Tensor:
        return torch.exp(self.log_tau).clamp(1e-3, 1.0)

    def aggregate_tokens(self, stack: Tensor) -> Tensor:
        """Concatenate the selected layers channel-wise and project to the
        shared space: (B, |S|, N, d_t) -> (B, N, d)."""
        if stack.shape[-3] != len(self.layer_set):
            raise ValidationError(
                f"token stack has {stack.shape[-3]} layers, expected {len(self.layer_set)}"
            )
        if stack.shape[-1] != self.token_dim:
            raise ValidationError(
                f"token dim {stack.shape[-1]} != configured {self.token_dim}"
            )
        flat = stack.transpose(-3, -2).flatten(-2)  # (B, N, |S|*d_t)
        return self.merge(flat)

    def select_layers(self, all_layers: Tensor) -> Tensor:
        """Pick the configured layer set from a full (B, L, N, d_t) stack."""
        idx = torch.tensor([l - 1 for l in self.layer_set], device=all_layers.device)
        return all_layers.index_select(-3, idx)

    def refine(self, tokens: Tensor, return_weights: bool = False):
        """One residual self-attention pass over the projected tokens."""
        out, weights = self.attn(
            tokens, tokens, tokens, need_weights=return_weights, average_attn_weights=False
        )
        refined = out + tokens
        return (refined, weights) if return_weights else refined

    @staticmethod
    def to_feature_map(tokens: Tensor, grid: int) -> Tensor:
        """Row-major raster reshape (B, g*g, d) -> (B, g, g, d)."""
        if tokens.shape[-2] != grid * grid:
            raise ValidationError(
                f"expected {grid * grid} tokens for a {grid}x{grid} grid, got {tokens.shape[-2]}"
            )
        return tokens.reshape(*tokens.shape[:-2], grid, grid, tokens.shape[-1])

    def forward(self, all_layers: Tensor, grid: int) -> tuple[Tensor, Tensor]:
        """Full pass: layer selection -> aggregation -> refinement.

        Returns the (B, g, g, d) semantic feature map and the (B, g*g, d)
        patch embeddings used by the contrastive objective.
        """
        tokens = self.aggregate_tokens(self.select_layers(all_layers))
        refined = self.refine(tokens)
        fmap = self.to_feature_map(refined, grid)
        z = self.projector(refined)
        return fmap, z

    def loss(self, z: Tensor, labels: Tensor) -> Tensor:
        return contrastive_loss(z, labels, self.proto_real, self.proto_fake, self.tau)
