"""Run configuration: one dataclass drives datagen, model assembly, training
and evaluation.

Defaults follow the reference training protocol (AdamW, lr 1e-4, weight
decay 0.05, batch 32, 20 epochs with cosine decay, loss weights 1/20/1,
decision thresholds 0.5, encoder side 224, backbone side 512).
``RunConfig.desk()`` shrinks every size knob for CPU-scale experiments
while keeping the architecture shape identical.

Component toggles use positive, functional names:

* ``use_freq_bands``    — dual-band frequency decomposition of the input,
* ``use_semantic``      — frozen-encoder patch alignment branch,
* ``use_injection``     — multi-scale side injection of the semantic map,
* ``use_gated_decoder`` — prototype-guided gated decoder (else a plain
  lateral-sum decoder).

Dependent toggles are validated: injection and the gated decoder both
require the semantic branch, since they consume its outputs.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, replace

from .errors import ConfigError

ABLATION_LADDER = (
    "baseline",
    "+dual_band",
    "+proto_align",
    "+side_inject",
    "+gated_decoder",
)


@dataclass(frozen=True)
class RunConfig:
    # reproducibility
    seed: int = 0
    deterministic: bool = True

    # corpus geometry
    image_size: int = 64

    # frozen encoder (stand-in transformer)
    encoder_size: int = 224
    encoder_patch: int = 16
    encoder_dim: int = 64
    encoder_layers: int = 6
    encoder_heads: int = 4
    encoder_seed: int = 0

    # semantic alignment
    embed_dim: int = 256
    layer_set: tuple[int, ...] | None = None
    align_heads: int = 8
    tau_init: float = 0.07
    use_projector: bool = True
    proto_source: str = "text"
    patch_rule: str = "majority"

    # frequency branch
    band_sharpness: float = 50.0

    # backbone
    backbone_size: int = 512
    backbone_channels: tuple[int, int, int, int] = (96, 192, 384, 768)
    backbone_depths: tuple[int, int, int, int] = (3, 3, 9, 3)

    # decoder
    query_dim: int = 64
    decoder_heads: int = 4
    gate_hidden: int = 32
    basis_mode: str = "query_dot"

    # component toggles
    use_freq_bands: bool = True
    use_semantic: bool = True
    use_injection: bool = True
    use_gated_decoder: bool = True

    # objective
    lambda_mask: float = 1.0
    lambda_edge: float = 20.0
    lambda_pc: float = 1.0
    edge_rho: int = 3

    # optimization
    lr: float = 1e-4
    weight_decay: float = 0.05
    batch_size: int = 32
    epochs: int = 20
    augment: bool = True
    augment_photometric: bool = True

    # decisions / metrics
    pixel_threshold: float = 0.5
    image_threshold: float = 0.5
    average: str = "macro"

    def __post_init__(self):
        self.validate()

    # -- validation ---------------------------------------------------------

    def validate(self) -> None:
        problems = []
        if self.image_size < 8:
            problems.append(f"image_size must be >= 8, got {self.image_size}")
        if self.encoder_size % self.encoder_patch:
            problems.append(
                f"encoder_size {self.encoder_size} not divisible by patch "
                f"{self.encoder_patch}"
            )
        if self.backbone_size % 32:
            problems.append(
                f"backbone_size {self.backbone_size} must be divisible by 32"
            )
        if len(self.backbone_channels) != 4 or len(self.backbone_depths) != 4:
            problems.append("backbone_channels and backbone_depths must have 4 entries")
        if min(self.backbone_channels, default=0) < 1 or min(self.backbone_depths, default=0) < 1:
            problems.append("backbone channels and depths must be positive")
        for name in ("encoder_dim", "encoder_layers", "encoder_heads", "embed_dim",
                     "query_dim", "decoder_heads", "gate_hidden", "batch_size", "epochs"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be positive")
        if self.lr <= 0:
            problems.append(f"lr must be positive, got {self.lr}")
        if self.weight_decay < 0:
            problems.append("weight_decay must be non-negative")
        for name in ("lambda_mask", "lambda_edge", "lambda_pc"):
            if getattr(self, name) < 0:
                problems.append(f"{name} must be non-negative")
        if self.edge_rho < 1:
            problems.append(f"edge_rho must be >= 1, got {self.edge_rho}")
        if self.band_sharpness <= 0:
            problems.append("band_sharpness must be positive")
        for name in ("pixel_threshold", "image_threshold"):
            if not (0.0 <= getattr(self, name) <= 1.0):
                problems.append(f"{name} must lie in [0, 1]")
        if self.proto_source not in ("text", "random"):
            problems.append(f"proto_source must be 'text' or 'random', got {self.proto_source!r}")
        if self.patch_rule not in ("majority", "any"):
            problems.append(f"patch_rule must be 'majority' or 'any', got {self.patch_rule!r}")
        if self.basis_mode not in ("query_dot", "attn_map"):
            problems.append(f"basis_mode must be 'query_dot' or 'attn_map', got {self.basis_mode!r}")
        if self.average not in ("macro", "micro"):
            problems.append(f"average must be 'macro' or 'micro', got {self.average!r}")
        if self.layer_set is not None:
            bad = [l for l in self.layer_set if not (1 <= l <= self.encoder_layers)]
            if bad or not self.layer_set:
                problems.append(
                    f"layer_set {self.layer_set} must be non-empty 1-based indices "
                    f"<= {self.encoder_layers}"
                )
        if self.use_injection and not self.use_semantic:
            problems.append("use_injection requires use_semantic (it injects the semantic map)")
        if self.use_gated_decoder and not self.use_semantic:
            problems.append(
                "use_gated_decoder requires use_semantic (queries are prototype-driven)"
            )
        if problems:
            raise ConfigError("; ".join(problems))

    # -- presets ------------------------------------------------------------

    @classmethod
    def desk(cls, **overrides) -> "RunConfig":
        """CPU-scale preset: same architecture, every size knob shrunk."""
        base = dict(
            image_size=64,
            encoder_size=64,
            encoder_patch=8,
            encoder_dim=64,
            encoder_layers=6,
            encoder_heads=4,
            embed_dim=64,
            backbone_size=128,
            backbone_channels=(32, 64, 128, 256),
            backbone_depths=(1, 1, 1, 1),
            query_dim=64,
            lr=3e-3,
            weight_decay=0.01,
            batch_size=2,
            epochs=10,
            lambda_edge=2.0,
            augment=True,
            augment_photometric=False,
        )
        base.update(overrides)
        return cls(**base)

    def with_toggles(
        self,
        use_freq_bands: bool,
        use_semantic: bool,
        use_injection: bool,
        use_gated_decoder: bool,
    ) -> "RunConfig":
        return replace(
            self,
            use_freq_bands=use_freq_bands,
            use_semantic=use_semantic,
            use_injection=use_injection,
            use_gated_decoder=use_gated_decoder,
        )

    def ladder_variant(self, name: str) -> "RunConfig":
        """Cumulative component ladder, from bare backbone to the full model."""
        toggles = {
            "baseline": (False, False, False, False),
            "+dual_band": (True, False, False, False),
            "+proto_align": (True, True, False, False),
            "+side_inject": (True, True, True, False),
            "+gated_decoder": (True, True, True, True),
        }
        if name not in toggles:
            raise ConfigError(f"unknown ladder variant {name!r}; choose from {ABLATION_LADDER}")
        return self.with_toggles(*toggles[name])

    # -- derived geometry ---------------------------------------------------

    @property
    def patch_grid(self) -> int:
        return self.encoder_size // self.encoder_patch

    @property
    def decoder_hw(self) -> tuple[int, int]:
        side = self.backbone_size // 4
        return (side, side)

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for key, val in d.items():
            if isinstance(val, tuple):
                d[key] = list(val)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        kwargs = dict(data)
        for key in ("backbone_channels", "backbone_depths", "layer_set"):
            if key in kwargs and kwargs[key] is not None:
                kwargs[key] = tuple(kwargs[key])
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config JSON must be an object")
        return cls.from_dict(data)

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()
