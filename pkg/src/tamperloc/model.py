"""Full localization model: frequency branch + frozen-encoder semantic
branch + conv backbone + (gated) decoder, assembled from a ``RunConfig``.

Data flow for one batch of float images in [0, 1], shape (B, 3, S, S):

1. Resize to the backbone side and (optionally) split into high/low band
   reconstructions; stack [RGB | high | low] as the 9-channel input.
2. Resize to the encoder side, run the frozen encoder, and align patch
   tokens into a g x g semantic map plus contrastive embeddings.
3. Run the 4-stage backbone; optionally add the adapted semantic map into
   every stage.
4. Decode: prototype-queried basis masks gated by frequency content (or a
   plain lateral-sum head), upsample to the input resolution, sigmoid.

Components that a toggle disables are simply absent from the module tree,
so ``named_parameters()`` reflects exactly what each variant trains.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .backbone import FrequencyBackbone, SideAdapterBank
from .config import RunConfig
from .decoder import (
    DecoderOutput,
    PrototypeGatedDecoder,
    SimpleDecoder,
    image_score,
    predict,
)
from .errors import ValidationError
from .freq import AdaptiveDualBand, build_input
from .semantic import EncoderAdapter, PatchAligner, StandinEncoder, patch_labels


@dataclass
class ModelOutput:
    mask_prob: Tensor  # (B, 1, S, S) probabilities at input resolution
    scores: Tensor  # (B,) image-level manipulation scores
    logits: Tensor  # (B, 1, h, w) decoder-resolution pre-activations
    z: Tensor | None = None  # (B, N, d) contrastive patch embeddings
    fmap: Tensor | None = None  # (B, d, g, g) semantic map
    decoder_out: DecoderOutput | None = None
    bands: tuple[Tensor, Tensor] | None = None  # (high, low) at backbone res
    enhanced: Tensor | None = None  # backbone input stack


def _resize(x: Tensor, side: int, mode: str = "bilinear") -> Tensor:
    if x.shape[-2:] == (side, side):
        return x
    kwargs = {} if mode == "nearest" else {"align_corners": False}
    return F.interpolate(x, size=(side, side), mode=mode, **kwargs)


def param_hash(module: nn.Module) -> str:
    """SHA-256 over all parameters and buffers, in state-dict order.

    Used to audit that frozen components never move during training.
    """
    h = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        h.update(name.encode("utf-8"))
        h.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


class ManipulationLocalizer(nn.Module):
    """End-to-end manipulation localization network."""

    def __init__(self, config: RunConfig, encoder: EncoderAdapter | None = None) -> None:
        super().__init__()
        self.config = config
        if config.use_semantic:
            self.encoder = encoder or StandinEncoder(
                input_size=config.encoder_size,
                patch_size=config.encoder_patch,
                token_dim=config.encoder_dim,
                layers=config.encoder_layers,
                heads=config.encoder_heads,
                seed=config.encoder_seed,
            )
            if self.encoder.input_size != config.encoder_size:
                raise ValidationError(
                    f"encoder expects side {self.encoder.input_size}, config says "
                    f"{config.encoder_size}"
                )
            gh, gw = self.encoder.patch_grid
            if gh != gw:
                raise ValidationError(
                    f"only square patch grids are supported, got {self.encoder.patch_grid}"
                )
            self.grid = gh
            self.aligner = PatchAligner(
                token_dim=self.encoder.token_dim,
                layer_count=self.encoder.layer_count,
                embed_dim=config.embed_dim,
                layer_set=config.layer_set,
                heads=config.align_heads,
                tau_init=config.tau_init,
                use_projector=config.use_projector,
                proto_source=config.proto_source,
                proto_seed=config.seed,
                encoder=self.encoder,
            )
        else:
            self.encoder = None
            self.aligner = None

        self.band = (
            AdaptiveDualBand(sharpness=config.band_sharpness)
            if config.use_freq_bands
            else None
        )
        in_channels = 9 if config.use_freq_bands else 3
        self.backbone = FrequencyBackbone(
            in_channels=in_channels,
            channels=config.backbone_channels,
            depths=config.backbone_depths,
        )
        if config.use_injection:
            self.adapters = SideAdapterBank(
                in_dim=config.embed_dim,
                channels=config.backbone_channels,
                grid=self.grid,
                input_hw=(config.backbone_size, config.backbone_size),
            )
        else:
            self.adapters = None
        if config.use_gated_decoder:
            self.decoder = PrototypeGatedDecoder(
                proto_dim=config.embed_dim,
                stage_channels=config.backbone_channels,
                freq_channels=in_channels,
                query_dim=config.query_dim,
                heads=config.decoder_heads,
                gate_hidden=config.gate_hidden,
                basis_mode=config.basis_mode,
            )
        else:
            self.decoder = SimpleDecoder(config.backbone_channels)

    # -- pieces -------------------------------------------------------------

    def backbone_input(self, images: Tensor) -> tuple[Tensor, tuple[Tensor, Tensor] | None]:
        """Backbone-side stack: 9 channels with bands, 3 without."""
        x = _resize(images, self.config.backbone_size)
        if self.band is None:
            return x, None
        high, low = self.band(x)
        return build_input(x, high, low), (high, low)

    def semantic_forward(self, images: Tensor) -> tuple[Tensor, Tensor]:
        """Frozen-encoder pass + alignment: returns ((B, d, g, g), (B, N, d))."""
        x = _resize(images, self.config.encoder_size)
        stack = self.encoder.encode(x)
        fmap, z = self.aligner(stack, self.grid)
        return fmap.permute(0, 3, 1, 2), z

    def patch_targets(self, masks: Tensor) -> Tensor:
        """Per-patch labels for the contrastive term, from pixel masks."""
        m = masks.float()
        if m.ndim == 3:
            m = m[:, None]
        m = _resize(m, self.config.encoder_size, mode="nearest")
        return patch_labels(m[:, 0], self.grid, self.config.patch_rule)

    # -- full pass ----------------------------------------------------------

    def forward(self, images: Tensor) -> ModelOutput:
        if images.ndim != 4 or images.shape[1] != 3:
            raise ValidationError(
                f"expected (B, 3, H, W) images, got {tuple(images.shape)}"
            )
        stack, bands = self.backbone_input(images)
        fmap = z = None
        if self.aligner is not None:
            fmap, z = self.semantic_forward(images)
        stages = self.backbone(stack)
        if self.adapters is not None:
            stages = self.adapters.inject(stages, fmap)
        if isinstance(self.decoder, PrototypeGatedDecoder):
            dec = self.decoder(stages, self.aligner.proto_fake, stack)
        else:
            dec = self.decoder(stages)
        mask_prob = predict(dec.logits, images.shape[-2:])
        scores = image_score(mask_prob)[:, 0]
        return ModelOutput(
            mask_prob=mask_prob,
            scores=scores,
            logits=dec.logits,
            z=z,
            fmap=fmap,
            decoder_out=dec,
            bands=bands,
            enhanced=stack,
        )

    # -- bookkeeping --------------------------------------------------------

    def trainable_parameters(self):
        return (p for p in self.parameters() if p.requires_grad)

    def trainable_parameter_names(self) -> list[str]:
        return sorted(n for n, p in self.named_parameters() if p.requires_grad)

    def encoder_hash(self) -> str | None:
        return None if self.encoder is None else param_hash(self.encoder)


def build_model(config: RunConfig, encoder: EncoderAdapter | None = None) -> ManipulationLocalizer:
    """Seeded model construction; weights depend only on config and seed."""
    with torch.random.fork_rng():
        torch.manual_seed(config.seed)
        model = ManipulationLocalizer(config, encoder)
    return model
