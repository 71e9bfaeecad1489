"""Training, evaluation, ablation and robustness-sweep harness.

Determinism contract: in deterministic mode, (config, seed, corpus) fully
determines every logged number. Epoch-level randomness (shuffling,
augmentation) is derived from stateless keys ``(seed, epoch[, index])``, so
resuming from a checkpoint replays the exact continuation, and data loading
order never depends on wall-clock or thread scheduling.

The frozen encoder is audited every epoch by hashing its parameters; any
drift aborts the run. A non-finite loss aborts with the offending batch id.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor

from .config import ABLATION_LADDER, RunConfig
from .datagen import (
    AugmentConfig,
    DegradationSpec,
    SamplePair,
    augment,
    corpus_manifest_hash,
    degrade,
    load_corpus,
    psnr,
)
from .errors import ValidationError
from .losses import (
    LossBreakdown,
    LossWeights,
    edge_band,
    edge_loss_logits,
    mask_loss_logits,
    total_loss,
)
from .metrics import EvalReport, auc, binarize, image_metrics, iou, pixel_f1
from .model import ManipulationLocalizer, build_model

DETERMINISTIC_ENV = "TAMPERLOC_DETERMINISTIC"


def deterministic_enabled(config: RunConfig) -> bool:
    """Config value, overridable by the TAMPERLOC_DETERMINISTIC env var."""
    env = os.environ.get(DETERMINISTIC_ENV)
    if env is None:
        return config.deterministic
    return env.strip() not in ("", "0", "false", "False")


def set_determinism(enabled: bool, seed: int) -> None:
    torch.manual_seed(seed)
    if enabled:
        torch.use_deterministic_algorithms(True)
    else:
        torch.use_deterministic_algorithms(False)


# ---------------------------------------------------------------------------
# data plumbing
# ---------------------------------------------------------------------------


def _check_corpus(samples: list[SamplePair], config: RunConfig, where: str) -> None:
    side = samples[0].image.shape[0]
    if side != config.image_size or samples[0].image.shape[1] != config.image_size:
        raise ValidationError(
            f"{where}: corpus images are {samples[0].image.shape[:2]}, "
            f"config expects {config.image_size}x{config.image_size}"
        )


def _to_tensors(batch: list[SamplePair]) -> tuple[Tensor, Tensor, Tensor]:
    images = torch.stack(
        [torch.from_numpy(s.image.astype(np.float32) / 255.0).permute(2, 0, 1) for s in batch]
    )
    masks = torch.stack([torch.from_numpy(s.mask.astype(np.float32)) for s in batch])
    labels = torch.tensor([s.label for s in batch], dtype=torch.long)
    return images, masks, labels


def epoch_batches(
    samples: list[SamplePair],
    config: RunConfig,
    epoch: int,
    train: bool,
):
    """Yield (batch_id, images, masks, labels) with stateless epoch keys."""
    order = np.arange(len(samples))
    if train:
        shuffle_rng = np.random.default_rng(np.random.SeedSequence([config.seed, epoch]))
        shuffle_rng.shuffle(order)
    bs = config.batch_size
    for b, start in enumerate(range(0, len(order), bs)):
        chosen = order[start : start + bs]
        batch = []
        for idx in chosen:
            s = samples[idx]
            if train and config.augment:
                rng = np.random.default_rng(
                    np.random.SeedSequence([config.seed, epoch, int(idx)])
                )
                aug_cfg = (
                    AugmentConfig()
                    if config.augment_photometric
                    else AugmentConfig(p_blur=0.0, p_jpeg=0.0)
                )
                img, msk = augment(s.image, s.mask, rng, aug_cfg)
                batch.append(SamplePair(img, msk, s.label, s.meta))
            else:
                batch.append(s)
        images, masks, labels = _to_tensors(batch)
        yield b, images, masks, labels


# ---------------------------------------------------------------------------
# objective
# ---------------------------------------------------------------------------


def batch_loss(model: ManipulationLocalizer, images: Tensor, masks: Tensor) -> LossBreakdown:
    out = model(images)
    weights = LossWeights(
        model.config.lambda_mask, model.config.lambda_edge, model.config.lambda_pc
    )
    # Same objective as the probability-space losses (mask_prob is the sigmoid
    # of these upsampled logits), evaluated in logit space so gradients
    # survive saturation.
    up_logits = F.interpolate(
        out.logits, size=masks.shape[-2:], mode="bilinear", align_corners=False
    )[:, 0]
    l_m = mask_loss_logits(up_logits, masks)
    band = edge_band(masks, model.config.edge_rho)
    l_e = edge_loss_logits(up_logits, masks, band)
    if out.z is not None:
        labels = model.patch_targets(masks)
        l_pc = model.aligner.loss(out.z, labels)
    else:
        l_pc = out.mask_prob.new_zeros(())
    return total_loss(l_m, l_e, l_pc, weights)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(
    path,
    model: ManipulationLocalizer,
    optimizer,
    scheduler,
    epoch: int,
    best_f1: float,
) -> None:
    payload = {
        "config": model.config.to_dict(),
        "config_sha256": model.config.config_hash(),
        "model_state": model.state_dict(),
        "optimizer_state": optimizer.state_dict(),
        "scheduler_state": scheduler.state_dict(),
        "epoch": epoch,
        "best_f1": best_f1,
        "encoder_manifest": model.encoder.manifest() if model.encoder else {},
        "torch_rng_state": torch.get_rng_state(),
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"checkpoint {path} does not exist")
    return torch.load(path, map_location="cpu", weights_only=False)


def model_from_checkpoint(path) -> tuple[ManipulationLocalizer, dict]:
    payload = load_checkpoint(path)
    config = RunConfig.from_dict(payload["config"])
    model = build_model(config)
    model.load_state_dict(payload["model_state"])
    if model.encoder is not None:
        stored = payload.get("encoder_manifest") or {}
        if stored and stored != model.encoder.manifest():
            raise RuntimeError(
                f"encoder manifest mismatch: checkpoint has {stored}, "
                f"rebuilt encoder is {model.encoder.manifest()}"
            )
    return model, payload


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


@dataclass
class CorpusEval:
    pixel_f1: float
    pixel_iou: float
    pixel_auc: float | None
    image_f1: float | None
    image_acc: float
    n_images: int


def eval_on_samples(
    model: ManipulationLocalizer, samples: list[SamplePair], config: RunConfig
) -> CorpusEval:
    model.eval()
    f1s, ious, aucs, scores, labels = [], [], [], [], []
    with torch.no_grad():
        for _, images, masks, labs in epoch_batches(samples, config, epoch=0, train=False):
            out = model(images)
            probs = out.mask_prob[:, 0].cpu().numpy()
            for i in range(images.shape[0]):
                gt = masks[i].cpu().numpy().astype(np.uint8)
                pred = binarize(probs[i], config.pixel_threshold)
                f1s.append(pixel_f1(pred, gt))
                ious.append(iou(pred, gt))
                a = auc(probs[i].ravel(), gt.ravel())
                if a is not None:
                    aucs.append(a)
            scores.extend(out.scores.cpu().numpy().tolist())
            labels.extend(labs.numpy().tolist())
    img_f1, img_acc = image_metrics(
        np.array(scores), np.array(labels), config.image_threshold
    )
    return CorpusEval(
        pixel_f1=float(np.mean(f1s)),
        pixel_iou=float(np.mean(ious)),
        pixel_auc=float(np.mean(aucs)) if aucs else None,
        image_f1=img_f1,
        image_acc=img_acc,
        n_images=len(samples),
    )


def evaluate(model: ManipulationLocalizer, corpus_dir, config: RunConfig | None = None) -> EvalReport:
    """Full evaluation producing a provenance-stamped report."""
    cfg = config or model.config
    samples = load_corpus(corpus_dir)
    _check_corpus(samples, cfg, f"evaluate({corpus_dir})")
    ev = eval_on_samples(model, samples, cfg)
    return EvalReport(
        corpus=str(corpus_dir),
        n_images=ev.n_images,
        pixel_f1=ev.pixel_f1,
        pixel_iou=ev.pixel_iou,
        pixel_auc=ev.pixel_auc,
        image_f1=ev.image_f1,
        image_acc=ev.image_acc,
        pixel_threshold=cfg.pixel_threshold,
        image_threshold=cfg.image_threshold,
        average=cfg.average,
        corpus_manifest_sha256=corpus_manifest_hash(corpus_dir),
        config_sha256=cfg.config_hash(),
        encoder_manifest=model.encoder.manifest() if model.encoder else {},
    )


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    best_f1: float
    best_epoch: int
    epochs_run: int
    log_path: Path
    best_checkpoint: Path
    last_checkpoint: Path
    history: list[dict]


def train(
    config: RunConfig,
    train_dir,
    val_dir,
    out_dir,
    resume_from=None,
    quiet: bool = True,
) -> TrainResult:
    """Train per the configured protocol; returns paths to artifacts.

    Writes ``log.jsonl`` (one sorted-key JSON object per epoch) and keeps
    the best-validation-F1 and last checkpoints under ``out_dir``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    set_determinism(deterministic_enabled(config), config.seed)

    train_samples = load_corpus(train_dir)
    val_samples = load_corpus(val_dir)
    _check_corpus(train_samples, config, f"train({train_dir})")
    _check_corpus(val_samples, config, f"train({val_dir})")

    model = build_model(config)
    optimizer = torch.optim.AdamW(
        model.trainable_parameters(), lr=config.lr, weight_decay=config.weight_decay
    )
    scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(optimizer, T_max=config.epochs)

    start_epoch = 0
    best_f1, best_epoch = -1.0, -1
    log_path = out / "log.jsonl"
    if resume_from is not None:
        payload = load_checkpoint(resume_from)
        if payload["config_sha256"] != config.config_hash():
            raise ValidationError(
                "checkpoint was produced by a different config "
                f"({payload['config_sha256'][:12]} != {config.config_hash()[:12]})"
            )
        model.load_state_dict(payload["model_state"])
        optimizer.load_state_dict(payload["optimizer_state"])
        scheduler.load_state_dict(payload["scheduler_state"])
        start_epoch = payload["epoch"] + 1
        best_f1 = payload.get("best_f1", -1.0)
    elif log_path.exists():
        log_path.unlink()

    encoder_hash0 = model.encoder_hash()
    best_path = out / "checkpoints" / "best.pt"
    last_path = out / "checkpoints" / "last.pt"
    history: list[dict] = []

    for epoch in range(start_epoch, config.epochs):
        model.train()
        sums = {"loss_mask": 0.0, "loss_edge": 0.0, "loss_pc": 0.0, "loss_total": 0.0}
        n_batches = 0
        for batch_id, images, masks, _ in epoch_batches(
            train_samples, config, epoch, train=True
        ):
            optimizer.zero_grad(set_to_none=True)
            breakdown = batch_loss(model, images, masks)
            if not torch.isfinite(breakdown.total):
                raise RuntimeError(
                    f"non-finite loss at epoch {epoch}, batch {batch_id}: "
                    f"mask={float(breakdown.l_mask.detach())}, "
                    f"edge={float(breakdown.l_edge.detach())}, "
                    f"pc={float(breakdown.l_pc.detach())}"
                )
            breakdown.total.backward()
            optimizer.step()
            for key, val in breakdown.detach_floats().items():
                sums[key] += val
            n_batches += 1
        scheduler.step()

        if encoder_hash0 is not None and model.encoder_hash() != encoder_hash0:
            raise RuntimeError(
                f"frozen encoder parameters changed during epoch {epoch}"
            )

        ev = eval_on_samples(model, val_samples, config)
        row = {
            "epoch": epoch,
            "lr": scheduler.get_last_lr()[0],
            "train_loss_mask": sums["loss_mask"] / max(n_batches, 1),
            "train_loss_edge": sums["loss_edge"] / max(n_batches, 1),
            "train_loss_pc": sums["loss_pc"] / max(n_batches, 1),
            "train_loss_total": sums["loss_total"] / max(n_batches, 1),
            "val_pixel_f1": ev.pixel_f1,
            "val_pixel_iou": ev.pixel_iou,
            "val_pixel_auc": ev.pixel_auc,
            "val_image_f1": ev.image_f1,
            "val_image_acc": ev.image_acc,
        }
        history.append(row)
        with open(log_path, "a") as fh:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
        if not quiet:
            print(json.dumps(row, sort_keys=True))

        if ev.pixel_f1 > best_f1:
            best_f1, best_epoch = ev.pixel_f1, epoch
            save_checkpoint(best_path, model, optimizer, scheduler, epoch, best_f1)
        save_checkpoint(last_path, model, optimizer, scheduler, epoch, best_f1)

    return TrainResult(
        best_f1=best_f1,
        best_epoch=best_epoch,
        epochs_run=config.epochs - start_epoch,
        log_path=log_path,
        best_checkpoint=best_path,
        last_checkpoint=last_path,
        history=history,
    )


# ---------------------------------------------------------------------------
# ablation ladder
# ---------------------------------------------------------------------------


def ablate(
    base_config: RunConfig,
    train_dir,
    val_dir,
    out_dir,
    variants: tuple[str, ...] = ABLATION_LADDER,
    quiet: bool = True,
) -> list[dict]:
    """Train and evaluate every ladder variant on the same corpus and seed.

    Per-variant failures are recorded in the table and the ladder continues.
    Emits ``ablation.tsv`` under ``out_dir``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for name in variants:
        variant_dir = out / name.replace("+", "plus_")
        try:
            cfg = base_config.ladder_variant(name)
            result = train(cfg, train_dir, val_dir, variant_dir, quiet=quiet)
            model, _ = model_from_checkpoint(result.best_checkpoint)
            ev = eval_on_samples(model, load_corpus(val_dir), cfg)
            rows.append(
                {
                    "variant": name,
                    "pixel_f1": ev.pixel_f1,
                    "pixel_iou": ev.pixel_iou,
                    "error": None,
                }
            )
        except Exception as exc:  # record and continue the ladder
            rows.append(
                {"variant": name, "pixel_f1": None, "pixel_iou": None, "error": str(exc)}
            )
    table = ["variant\tpixel_f1\tpixel_iou\terror"]
    for row in rows:
        f1 = "" if row["pixel_f1"] is None else f"{row['pixel_f1']:.6f}"
        ji = "" if row["pixel_iou"] is None else f"{row['pixel_iou']:.6f}"
        table.append(f"{row['variant']}\t{f1}\t{ji}\t{row['error'] or ''}")
    (out / "ablation.tsv").write_text("\n".join(table) + "\n")
    return rows


# ---------------------------------------------------------------------------
# robustness sweep
# ---------------------------------------------------------------------------

BLUR_GRID = (0.0, 1.0, 2.0, 3.0)
JPEG_GRID = (100, 80, 60, 40)


def _degraded(samples: list[SamplePair], spec: DegradationSpec) -> list[SamplePair]:
    return [
        SamplePair(degrade(s.image, spec), s.mask, s.label, s.meta) for s in samples
    ]


def sweep(
    model: ManipulationLocalizer,
    corpus_dir,
    out_dir,
    blur_sigmas: tuple[float, ...] = BLUR_GRID,
    jpeg_qualities: tuple[int, ...] = JPEG_GRID,
    config: RunConfig | None = None,
) -> dict:
    """Robustness sweep over blur and JPEG severities.

    Emits ``blur.tsv`` / ``jpeg.tsv`` (pixel F1 per severity), line plots
    of both curves, and per-image PSNR statistics for the JPEG axis. Plot
    failures are reported but never discard the tables.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = config or model.config
    samples = load_corpus(corpus_dir)
    _check_corpus(samples, cfg, f"sweep({corpus_dir})")

    blur_rows = []
    for sigma in blur_sigmas:
        spec = DegradationSpec(blur_sigma=float(sigma))
        ev = eval_on_samples(model, _degraded(samples, spec), cfg)
        blur_rows.append({"blur_sigma": float(sigma), "pixel_f1": ev.pixel_f1,
                          "pixel_iou": ev.pixel_iou})

    jpeg_rows = []
    psnr_per_image: list[list[float]] = []
    for quality in jpeg_qualities:
        spec = DegradationSpec(jpeg_quality=int(quality))
        degraded = _degraded(samples, spec)
        psnr_per_image.append(
            [psnr(c.image, d.image) for c, d in zip(samples, degraded)]
        )
        ev = eval_on_samples(model, degraded, cfg)
        jpeg_rows.append({"jpeg_quality": int(quality), "pixel_f1": ev.pixel_f1,
                          "pixel_iou": ev.pixel_iou})

    def _tsv(path, key, rows):
        lines = [f"{key}\tpixel_f1\tpixel_iou"]
        lines += [f"{r[key]}\t{r['pixel_f1']:.6f}\t{r['pixel_iou']:.6f}" for r in rows]
        path.write_text("\n".join(lines) + "\n")

    _tsv(out / "blur.tsv", "blur_sigma", blur_rows)
    _tsv(out / "jpeg.tsv", "jpeg_quality", jpeg_rows)

    plot_error = None
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
        axes[0].plot([r["blur_sigma"] for r in blur_rows],
                     [r["pixel_f1"] for r in blur_rows], marker="o")
        axes[0].set_xlabel("blur sigma (px)")
        axes[0].set_ylabel("pixel F1")
        axes[0].set_title("Gaussian blur")
        axes[1].plot([r["jpeg_quality"] for r in jpeg_rows],
                     [r["pixel_f1"] for r in jpeg_rows], marker="o")
        axes[1].invert_xaxis()
        axes[1].set_xlabel("JPEG quality")
        axes[1].set_title("JPEG compression")
        fig.tight_layout()
        fig.savefig(out / "robustness.png", dpi=120)
        plt.close(fig)
    except Exception as exc:  # tables were already written
        plot_error = str(exc)

    psnr_matrix = np.array(psnr_per_image)  # (n_qualities, n_images)
    return {
        "blur": blur_rows,
        "jpeg": jpeg_rows,
        "psnr_per_image": psnr_matrix.tolist(),
        "plot_error": plot_error,
        "out_dir": str(out),
    }


def sweep_identity_report(model: ManipulationLocalizer, corpus_dir,
                          config: RunConfig | None = None) -> EvalReport:
    """Clean (undegraded) evaluation — the reference for the identity point."""
    return evaluate(model, corpus_dir, config)


def elapsed_since(t0: float) -> float:
    return time.monotonic() - t0
