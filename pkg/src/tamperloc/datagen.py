"""Synthetic manipulation corpus generator.

Produces small RGB images with pixel-accurate ground-truth masks for three
manipulation families:

* ``splice``    — a region imported from a *different* synthetic image,
* ``copy_move`` — a region duplicated elsewhere in the same image,
* ``erase_fill``— a region erased and refilled by harmonic (Laplacian)
  interpolation from its boundary.

Manipulations are composited with a feathered blend weight; the ground-truth
mask is defined as ``blend weight > 0.5``, so mask and pixels always agree.

Detectability rests on the classic forensic inconsistency cues, calibrated
so the corpus behaves like the output of *one* camera: every base image is
rendered neutrally (gray-world white balance, achromatic content up to
sensor noise) and carries a spatially uniform quasi-periodic sensor pattern
and noise field. Manipulated content breaks that consistency — spliced
content is low-pass filtered (resampling stand-in) and carries the color
balance of a different source; copy-moved patches shift the pattern phase
and are re-toned during blending; harmonic fills are pattern- and
noise-free and synthesized outside the camera's color pipeline. The
per-channel casts make every manipulated region locally off-neutral, a cue
readable without reference to the rest of the image.

Degradations (Gaussian blur, then JPEG round-trip) model post-processing.
``sigma = 0`` with ``quality = None`` is a bit-exact identity. JPEG uses
4:4:4 subsampling so mild compression stays mild.

Determinism: every sample is generated from an independent
``SeedSequence([seed, index])`` stream, so corpora are reproducible
per-sample and independent of generation order.
"""

from __future__ import annotations

import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from .errors import ValidationError
from .metrics import sha256_bytes

MANIPULATION_KINDS = ("splice", "copy_move", "erase_fill")
CATEGORIES = ("authentic",) + MANIPULATION_KINDS

# Corpus-wide imaging constants (one simulated "camera"): amplitude/period of
# the quasi-periodic sensor pattern and the noise level. Fixed across images
# so local texture energy is an absolute forensic cue.
PATTERN_PERIOD = 8.0
PATTERN_AMPLITUDE = 12.0
NOISE_SIGMA = 6.0


# ---------------------------------------------------------------------------
# regions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Region:
    """Axis-aligned bounding box with a fill shape ("rect" or "ellipse")."""

    top: int
    left: int
    height: int
    width: int
    shape: str = "rect"

    def __post_init__(self):
        if self.height <= 0 or self.width <= 0:
            raise ValidationError(f"region must have positive extent, got {self}")
        if self.top < 0 or self.left < 0:
            raise ValidationError(f"region origin must be non-negative, got {self}")
        if self.shape not in ("rect", "ellipse"):
            raise ValidationError(f"unknown region shape {self.shape!r}")

    @property
    def slices(self) -> tuple[slice, slice]:
        return (
            slice(self.top, self.top + self.height),
            slice(self.left, self.left + self.width),
        )

    def as_mask(self, image_hw: tuple[int, int]) -> np.ndarray:
        """Binary float mask of this region on an ``image_hw`` canvas."""
        h, w = image_hw
        if self.top + self.height > h or self.left + self.width > w:
            raise ValidationError(f"region {self} exceeds image {image_hw}")
        mask = np.zeros((h, w), dtype=np.float64)
        if self.shape == "rect":
            mask[self.slices] = 1.0
        else:
            yy, xx = np.mgrid[0 : self.height, 0 : self.width]
            cy, cx = (self.height - 1) / 2, (self.width - 1) / 2
            ry, rx = max(cy, 0.5), max(cx, 0.5)
            inside = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
            mask[self.slices][inside] = 1.0
        return mask


def sample_region(
    rng: np.random.Generator,
    image_hw: tuple[int, int],
    min_frac: float = 0.35,
    max_frac: float = 0.65,
    margin: int = 2,
) -> Region:
    """Draw a random region whose sides span the given fraction of the image.

    ``margin`` keeps the region away from the border so boundary-based fills
    always have a ring of authentic pixels to work with.
    """
    h, w = image_hw
    if not (0 < min_frac <= max_frac <= 1):
        raise ValidationError("need 0 < min_frac <= max_frac <= 1")
    rh = int(round(rng.uniform(min_frac, max_frac) * h))
    rw = int(round(rng.uniform(min_frac, max_frac) * w))
    rh = int(np.clip(rh, 2, h - 2 * margin))
    rw = int(np.clip(rw, 2, w - 2 * margin))
    top = int(rng.integers(margin, h - rh - margin + 1))
    left = int(rng.integers(margin, w - rw - margin + 1))
    shape = "rect" if rng.random() < 0.5 else "ellipse"
    return Region(top, left, rh, rw, shape)


# ---------------------------------------------------------------------------
# base imagery
# ---------------------------------------------------------------------------


def synth_base(seed_key: Sequence[int], size: int = 64) -> np.ndarray:
    """Deterministic synthetic RGB photo stand-in, uint8 (size, size, 3).

    A neutrally balanced (gray-world) rendering: a bilinear luminance
    gradient between four random corner levels, a few soft-edged luminance
    blobs, a quasi-periodic achromatic pattern (a sensor / demosaicing
    stand-in with random orientation and phase but corpus-fixed period and
    amplitude), and per-channel sensor noise at a corpus-fixed level.

    Pattern and noise are applied *after* blob compositing, so every
    authentic image is internally consistent: one pattern, one noise level,
    one neutral color balance, only soft edges. Because those properties are
    fixed corpus-wide (same "camera"), they are absolute cues —
    manipulations that attenuate the pattern/noise or tint the color balance
    are locally detectable without per-image normalization.
    """
    if size < 8:
        raise ValidationError("base images must be at least 8 pixels")
    rng = np.random.default_rng(np.random.SeedSequence(list(seed_key)))
    # moderate content contrast: the sensor pattern and noise must stay the
    # dominant fine structure, as in flat real-world scenes at high ISO
    corners = rng.uniform(90, 166, size=(2, 2))
    t = np.linspace(0.0, 1.0, size)
    ty, tx = t[:, None], t[None, :]
    lum = (
        corners[0, 0] * (1 - ty) * (1 - tx)
        + corners[0, 1] * (1 - ty) * tx
        + corners[1, 0] * ty * (1 - tx)
        + corners[1, 1] * ty * tx
    )
    mid = corners.mean()
    for _ in range(int(rng.integers(2, 5))):
        reg = sample_region(rng, (size, size), 0.1, 0.4, margin=0)
        level = float(np.clip(mid + rng.uniform(-45, 45), 0, 255))
        alpha = gaussian_filter(reg.as_mask((size, size)), rng.uniform(1.5, 3.0))
        alpha = alpha * rng.uniform(0.5, 0.9)
        lum = alpha * level + (1 - alpha) * lum
    theta = rng.uniform(0.0, np.pi)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    yy, xx = np.mgrid[0:size, 0:size]
    carrier = 2.0 * np.pi * (np.cos(theta) * xx + np.sin(theta) * yy) / PATTERN_PERIOD
    lum = lum + PATTERN_AMPLITUDE * np.sin(carrier + phase)
    img = np.repeat(lum[..., None], 3, axis=2)
    img = img + rng.normal(0.0, NOISE_SIGMA, size=img.shape)
    return np.clip(np.round(img), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# manipulations
# ---------------------------------------------------------------------------


def _blend(base: np.ndarray, content: np.ndarray, weight: np.ndarray,
           feather_sigma: float) -> tuple[np.ndarray, np.ndarray]:
    """Composite ``content`` over ``base`` with a feathered weight.

    Returns (uint8 image, uint8 mask) where mask = feathered weight > 0.5.
    """
    if feather_sigma > 0:
        weight = gaussian_filter(weight, feather_sigma, mode="nearest")
    out = weight[..., None] * content.astype(np.float64) + (
        1 - weight[..., None]
    ) * base.astype(np.float64)
    mask = (weight > 0.5).astype(np.uint8)
    return np.clip(np.round(out), 0, 255).astype(np.uint8), mask


def splice(
    base: np.ndarray,
    source: np.ndarray,
    region: Region,
    feather_sigma: float = 1.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Paste the co-located region of ``source`` into ``base``."""
    if base.shape != source.shape:
        raise ValidationError(
            f"shape mismatch: base {base.shape}, source {source.shape}"
        )
    weight = region.as_mask(base.shape[:2])
    content = base.copy()
    content[region.slices] = source[region.slices]
    return _blend(base, content, weight, feather_sigma)


def content_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    """Spatial Gaussian blur of manipulated content (resampling stand-in).

    Pasted content in real forgeries is rescaled/rotated and thereby
    low-pass filtered relative to the host image's sensor noise; this models
    that with an explicit blur.
    """
    if sigma <= 0:
        return image
    out = gaussian_filter(image.astype(np.float64), (sigma, sigma, 0.0), mode="nearest")
    return np.clip(np.round(out), 0, 255).astype(np.uint8)


def content_gain(image: np.ndarray, gain: float | Sequence[float]) -> np.ndarray:
    """Scale pixel intensities by ``gain`` (exposure / white-balance
    mismatch stand-in).

    Pasted content rarely matches the host image's exposure or color
    balance exactly. A scalar gain models an exposure error; a length-3
    gain models a per-channel white-balance error.
    """
    g = np.asarray(gain, dtype=np.float64)
    if g.ndim not in (0, 1) or (g.ndim == 1 and g.shape[0] != image.shape[-1]):
        raise ValidationError(f"gain must be scalar or per-channel, got shape {g.shape}")
    if (g <= 0).any():
        raise ValidationError("content gain must be positive")
    out = image.astype(np.float64) * g
    return np.clip(np.round(out), 0, 255).astype(np.uint8)


def copy_move(
    base: np.ndarray,
    region: Region,
    offset: tuple[int, int],
    feather_sigma: float = 1.0,
    resample_sigma: float = 0.8,
    gain: float | Sequence[float] = 1.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Duplicate ``region`` at ``region + offset``; mask covers the copy.

    The copy is softened by ``resample_sigma`` and rescaled by ``gain`` to
    model the resampling and exposure adjustment a moved patch undergoes in
    practice.
    """
    h, w = base.shape[:2]
    dest = Region(
        region.top + offset[0], region.left + offset[1],
        region.height, region.width, region.shape,
    )
    if dest.top + dest.height > h or dest.left + dest.width > w:
        raise ValidationError(f"destination {dest} exceeds image {(h, w)}")
    src_mask = region.as_mask((h, w)).astype(bool)
    dst_mask = dest.as_mask((h, w)).astype(bool)
    if (src_mask & dst_mask).any():
        raise ValidationError("copy_move source and destination must be disjoint")
    content = base.copy()
    patch = content_blur(base, resample_sigma)[region.slices]
    content[dest.slices] = content_gain(patch, gain)
    return _blend(base, content, dst_mask.astype(np.float64), feather_sigma)


def disjoint_offset(
    rng: np.random.Generator, region: Region, image_hw: tuple[int, int],
    margin: int = 2, max_tries: int = 200,
) -> tuple[int, int]:
    """Draw an offset that keeps the copy in bounds and disjoint from source."""
    h, w = image_hw
    for _ in range(max_tries):
        top = int(rng.integers(margin, h - region.height - margin + 1))
        left = int(rng.integers(margin, w - region.width - margin + 1))
        dy, dx = top - region.top, left - region.left
        if abs(dy) >= region.height or abs(dx) >= region.width:
            return dy, dx
    raise ValidationError(
        f"could not place a disjoint copy of {region} in {image_hw}"
    )


def erase_fill(
    base: np.ndarray,
    region: Region,
    iterations: int = 200,
    feather_sigma: float = 1.0,
    gain: float | Sequence[float] = 1.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Erase ``region`` and refill it by Jacobi relaxation of Laplace's
    equation (4-neighbour averaging) with the surrounding ring held fixed.

    The fill starts from the boundary-ring mean, so even one iteration yields
    a plausible smooth patch; 200 iterations are close to the harmonic limit
    for desk-scale regions. ``gain`` rescales the filled patch per channel —
    retouched content is synthesized outside the camera pipeline and misses
    its color balance.
    """
    h, w = base.shape[:2]
    if iterations < 1:
        raise ValidationError("erase_fill needs at least one iteration")
    if (
        region.top < 1 or region.left < 1
        or region.top + region.height > h - 1
        or region.left + region.width > w - 1
    ):
        raise ValidationError(
            f"region {region} must leave a 1-pixel border inside {(h, w)}"
        )
    sub = base[
        region.top - 1 : region.top + region.height + 1,
        region.left - 1 : region.left + region.width + 1,
    ].astype(np.float64)
    ring = np.ones(sub.shape[:2], dtype=bool)
    ring[1:-1, 1:-1] = False
    sub[1:-1, 1:-1] = sub[ring].mean(axis=0)
    for _ in range(iterations):
        sub[1:-1, 1:-1] = 0.25 * (
            sub[:-2, 1:-1] + sub[2:, 1:-1] + sub[1:-1, :-2] + sub[1:-1, 2:]
        )
    filled = np.clip(np.round(sub[1:-1, 1:-1]), 0, 255).astype(np.uint8)
    content = base.copy()
    content[region.slices] = content_gain(filled, gain)
    weight = region.as_mask((h, w))
    if region.shape == "ellipse":
        # harmonic fill is computed on the bbox; restrict the mask to it anyway
        weight = Region(
            region.top, region.left, region.height, region.width, "rect"
        ).as_mask((h, w))
    return _blend(base, content, weight, feather_sigma)


# ---------------------------------------------------------------------------
# degradation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DegradationSpec:
    """Post-processing: Gaussian blur (sigma, pixels) then JPEG (quality)."""

    blur_sigma: float = 0.0
    jpeg_quality: int | None = None

    def __post_init__(self):
        if self.blur_sigma < 0:
            raise ValidationError("blur_sigma must be >= 0")
        if self.jpeg_quality is not None and not (1 <= self.jpeg_quality <= 100):
            raise ValidationError("jpeg_quality must lie in [1, 100]")

    @property
    def is_identity(self) -> bool:
        return self.blur_sigma == 0.0 and self.jpeg_quality is None


def jpeg_roundtrip(image: np.ndarray, quality: int) -> np.ndarray:
    """Encode/decode through JPEG at the given quality (4:4:4 sampling)."""
    buf = io.BytesIO()
    Image.fromarray(image, mode="RGB").save(
        buf, format="JPEG", quality=int(quality), subsampling=0
    )
    buf.seek(0)
    return np.asarray(Image.open(buf).convert("RGB"))


def degrade(image: np.ndarray, spec: DegradationSpec) -> np.ndarray:
    """Apply blur then JPEG. The identity spec returns the input bit-exactly."""
    if image.dtype != np.uint8 or image.ndim != 3 or image.shape[2] != 3:
        raise ValidationError("degrade expects an (H, W, 3) uint8 image")
    if spec.is_identity:
        return image.copy()
    out = image
    if spec.blur_sigma > 0:
        blurred = gaussian_filter(
            image.astype(np.float64), (spec.blur_sigma, spec.blur_sigma, 0.0),
            mode="nearest",
        )
        out = np.clip(np.round(blurred), 0, 255).astype(np.uint8)
    if spec.jpeg_quality is not None:
        out = jpeg_roundtrip(out, spec.jpeg_quality)
    return out


def psnr(reference: np.ndarray, test: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for uint8 images; inf if identical."""
    if reference.shape != test.shape:
        raise ValidationError(
            f"shape mismatch: {reference.shape} vs {test.shape}"
        )
    diff = reference.astype(np.float64) - test.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(255.0 ** 2 / mse))


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AugmentConfig:
    """Stateless training-time augmentation.

    Geometric transforms (flips, rescale with reflect-pad/crop) are applied
    identically to image and mask; photometric transforms (blur, JPEG) touch
    the image only.
    """

    p_hflip: float = 0.5
    p_vflip: float = 0.2
    p_scale: float = 0.3
    scale_range: tuple[float, float] = (0.85, 1.15)
    p_blur: float = 0.15
    blur_sigma_range: tuple[float, float] = (0.3, 1.0)
    p_jpeg: float = 0.15
    jpeg_quality_range: tuple[int, int] = (60, 95)


def _resize_pair(image, mask, new_hw):
    img = Image.fromarray(image, mode="RGB").resize(
        (new_hw[1], new_hw[0]), Image.BILINEAR
    )
    msk = Image.fromarray((mask * 255).astype(np.uint8), mode="L").resize(
        (new_hw[1], new_hw[0]), Image.NEAREST
    )
    return np.asarray(img), (np.asarray(msk) > 127).astype(np.uint8)


def augment(
    image: np.ndarray,
    mask: np.ndarray,
    rng: np.random.Generator,
    config: AugmentConfig | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Apply a random augmentation drawn entirely from ``rng``."""
    cfg = config or AugmentConfig()
    h, w = image.shape[:2]
    if mask.shape != (h, w):
        raise ValidationError(f"mask {mask.shape} does not match image {(h, w)}")
    img, msk = image.copy(), mask.copy()
    if rng.random() < cfg.p_hflip:
        img, msk = img[:, ::-1].copy(), msk[:, ::-1].copy()
    if rng.random() < cfg.p_vflip:
        img, msk = img[::-1].copy(), msk[::-1].copy()
    if rng.random() < cfg.p_scale:
        s = rng.uniform(*cfg.scale_range)
        nh, nw = max(8, int(round(h * s))), max(8, int(round(w * s)))
        img, msk = _resize_pair(img, msk, (nh, nw))
        if nh >= h and nw >= w:
            top = int(rng.integers(0, nh - h + 1))
            left = int(rng.integers(0, nw - w + 1))
            img = img[top : top + h, left : left + w]
            msk = msk[top : top + h, left : left + w]
        else:
            pad_h, pad_w = max(0, h - nh), max(0, w - nw)
            pads = ((0, pad_h), (0, pad_w))
            img = np.pad(img, pads + ((0, 0),), mode="reflect")[:h, :w]
            msk = np.pad(msk, pads, mode="reflect")[:h, :w]
    if rng.random() < cfg.p_blur:
        sigma = rng.uniform(*cfg.blur_sigma_range)
        img = degrade(img, DegradationSpec(blur_sigma=float(sigma)))
    if rng.random() < cfg.p_jpeg:
        q = int(rng.integers(cfg.jpeg_quality_range[0], cfg.jpeg_quality_range[1] + 1))
        img = degrade(img, DegradationSpec(jpeg_quality=q))
    return img, msk


# ---------------------------------------------------------------------------
# corpus assembly
# ---------------------------------------------------------------------------


@dataclass
class SamplePair:
    """One corpus entry: image, mask, image-level label, provenance."""

    image: np.ndarray  # (H, W, 3) uint8
    mask: np.ndarray  # (H, W) uint8 in {0, 1}
    label: int  # 1 iff manipulated
    meta: dict = field(default_factory=dict)


def _channel_gains(rng: np.random.Generator, lo: float, hi: float) -> list[float]:
    """Per-channel color-cast gains, each 1 ± U(lo, hi).

    Signs are resampled until the three channels disagree, so the cast is
    always chromatic (a tint) rather than a pure exposure shift.
    """
    signs = np.where(rng.random(3) < 0.5, -1.0, 1.0)
    while abs(signs.sum()) == 3.0:
        signs = np.where(rng.random(3) < 0.5, -1.0, 1.0)
    return [float(1.0 + s * rng.uniform(lo, hi)) for s in signs]


def generate_sample(
    seed: int, index: int, kind: str, size: int = 64,
    degradation: DegradationSpec | None = None,
) -> SamplePair:
    """Generate one sample from its own ``SeedSequence([seed, index])``."""
    if kind not in CATEGORIES:
        raise ValidationError(f"unknown sample kind {kind!r}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, index]))
    base_key = [seed, index, 0]
    base = synth_base(base_key, size)
    meta = {"index": index, "kind": kind, "size": size}
    if kind == "authentic":
        image, mask = base, np.zeros((size, size), dtype=np.uint8)
    elif kind == "splice":
        source = synth_base([seed, index, 1], size)
        sigma = float(rng.uniform(1.0, 1.8))
        gain = _channel_gains(rng, 0.20, 0.40)
        source = content_gain(content_blur(source, sigma), gain)
        region = sample_region(rng, (size, size))
        image, mask = splice(base, source, region)
        meta["region"] = asdict(region)
        meta["resample_sigma"] = sigma
        meta["gain"] = gain
    elif kind == "copy_move":
        # large regions can make a disjoint copy geometrically impossible;
        # resample the region until placement succeeds
        offset = None
        for _ in range(20):
            region = sample_region(rng, (size, size), 0.25, 0.45)
            try:
                offset = disjoint_offset(rng, region, (size, size))
                break
            except ValidationError:
                continue
        if offset is None:
            raise ValidationError(
                f"could not place a copy_move region in a {size}x{size} image"
            )
        sigma = float(rng.uniform(1.0, 1.6))
        gain = _channel_gains(rng, 0.15, 0.35)
        image, mask = copy_move(
            base, region, offset, resample_sigma=sigma, gain=gain
        )
        meta["region"] = asdict(region)
        meta["offset"] = list(offset)
        meta["resample_sigma"] = sigma
        meta["gain"] = gain
    else:  # erase_fill
        region = sample_region(rng, (size, size))
        gain = _channel_gains(rng, 0.15, 0.35)
        image, mask = erase_fill(base, region, gain=gain)
        meta["region"] = asdict(region)
        meta["gain"] = gain
    if degradation is not None and not degradation.is_identity:
        image = degrade(image, degradation)
        meta["degradation"] = asdict(degradation)
    label = int(kind != "authentic")
    return SamplePair(image=image, mask=mask, label=label, meta=meta)


def allocate_counts(n: int, fractions: dict[str, float]) -> dict[str, int]:
    """Largest-remainder apportionment of ``n`` items over categories.

    Ties in remainder are broken by category name for determinism.
    """
    if n < 0:
        raise ValidationError("cannot allocate a negative count")
    total = sum(fractions.values())
    if total <= 0 or any(v < 0 for v in fractions.values()):
        raise ValidationError("fractions must be non-negative with positive sum")
    shares = {k: n * v / total for k, v in fractions.items()}
    counts = {k: int(np.floor(s)) for k, s in shares.items()}
    leftover = n - sum(counts.values())
    order = sorted(shares, key=lambda k: (-(shares[k] - counts[k]), k))
    for k in order[:leftover]:
        counts[k] += 1
    return counts


DEFAULT_MIX = {
    "authentic": 0.5,
    "splice": 1 / 6,
    "copy_move": 1 / 6,
    "erase_fill": 1 / 6,
}


def make_dataset(
    out_dir,
    n: int,
    seed: int,
    size: int = 64,
    mix: dict[str, float] | None = None,
    degradation: DegradationSpec | None = None,
) -> Path:
    """Write ``n`` samples plus ``manifest.jsonl`` to ``out_dir``.

    Layout: ``{index:05d}.png`` (RGB image) and ``{index:05d}_mask.png``
    (L-mode, 0/255). Each manifest line is a sorted-key JSON object carrying
    the label, generation metadata, and the SHA-256 of both files, so a hash
    of the manifest fingerprints the whole corpus.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    mix = dict(mix or DEFAULT_MIX)
    unknown = set(mix) - set(CATEGORIES)
    if unknown:
        raise ValidationError(f"unknown categories in mix: {sorted(unknown)}")
    counts = allocate_counts(n, mix)
    kinds: list[str] = []
    for cat in CATEGORIES:
        kinds.extend([cat] * counts.get(cat, 0))
    # spread categories across indices deterministically
    order_rng = np.random.default_rng(np.random.SeedSequence([seed]))
    order_rng.shuffle(kinds)
    lines = []
    for index, kind in enumerate(kinds):
        sample = generate_sample(seed, index, kind, size, degradation)
        img_name = f"{index:05d}.png"
        mask_name = f"{index:05d}_mask.png"
        img_bytes = _png_bytes(sample.image, "RGB")
        mask_bytes = _png_bytes(sample.mask * 255, "L")
        (out / img_name).write_bytes(img_bytes)
        (out / mask_name).write_bytes(mask_bytes)
        record = {
            "image": img_name,
            "mask": mask_name,
            "label": sample.label,
            "image_sha256": sha256_bytes(img_bytes),
            "mask_sha256": sha256_bytes(mask_bytes),
            "seed": seed,
            **sample.meta,
        }
        lines.append(json.dumps(record, sort_keys=True))
    manifest = out / "manifest.jsonl"
    manifest.write_text("\n".join(lines) + ("\n" if lines else ""))
    return manifest


def _png_bytes(array: np.ndarray, mode: str) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(array.astype(np.uint8), mode=mode).save(buf, format="PNG")
    return buf.getvalue()


def corpus_manifest_hash(corpus_dir) -> str:
    """SHA-256 of the manifest file — the corpus fingerprint."""
    manifest = Path(corpus_dir) / "manifest.jsonl"
    if not manifest.is_file():
        raise ValidationError(f"no manifest.jsonl under {corpus_dir}")
    return sha256_bytes(manifest.read_bytes())


def load_corpus(corpus_dir) -> list[SamplePair]:
    """Load every sample listed in the corpus manifest, in manifest order."""
    root = Path(corpus_dir)
    manifest = root / "manifest.jsonl"
    if not manifest.is_file():
        raise ValidationError(f"no manifest.jsonl under {corpus_dir}")
    samples = []
    for line in manifest.read_text().splitlines():
        if not line.strip():
            continue
        record = json.loads(line)
        image = np.asarray(Image.open(root / record["image"]).convert("RGB"))
        mask_arr = np.asarray(Image.open(root / record["mask"]).convert("L"))
        mask = (mask_arr > 127).astype(np.uint8)
        samples.append(
            SamplePair(image=image, mask=mask, label=int(record["label"]), meta=record)
        )
    if not samples:
        raise ValidationError(f"corpus at {corpus_dir} is empty")
    return samples
