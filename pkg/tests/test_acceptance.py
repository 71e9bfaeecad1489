"""Acceptance checklist for the whole package.

Ten end-to-end checks, one test each, covering: transform correctness,
gradient fidelity, closed-form losses, structural identities, metric
oracles, the frozen-encoder guarantee, learnability on the synthetic
corpus, the ablation ordering, bit-level determinism, and the robustness
sweep. Each test prints a single ``acceptance N [label]: PASS|FAIL`` line
(visible with ``pytest -s``) and asserts the same condition, so the suite
is green exactly when every box is ticked.

The learnability, ablation, and sweep checks train real models on a
200/50-image synthetic corpus; the file takes a few minutes end to end.
"""

import math
import time

import numpy as np
import pytest
import torch

from tamperloc.backbone import SideAdapterBank
from tamperloc.config import RunConfig
from tamperloc.datagen import make_dataset
from tamperloc.decoder import fuse, image_score
from tamperloc.freq import dct2, idct2
from tamperloc.gradcheck import run_gradcheck
from tamperloc.losses import mask_loss
from tamperloc.metrics import auc, iou, pixel_f1
from tamperloc.model import build_model
from tamperloc.semantic import contrastive_loss
from tamperloc.train import evaluate, model_from_checkpoint, sweep, train


def _verdict(num: int, label: str, ok: bool) -> bool:
    print(f"acceptance {num:2d} [{label}]: {'PASS' if ok else 'FAIL'}")
    return ok


# ---------------------------------------------------------------------------
# shared corpora and the one expensive training run
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def smoke_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("smoke")
    t0 = time.monotonic()
    make_dataset(root / "train", n=200, seed=7, size=64)
    make_dataset(root / "val", n=50, seed=8, size=64)
    return root, time.monotonic() - t0


@pytest.fixture(scope="module")
def smoke_run(smoke_corpus, tmp_path_factory):
    root, _ = smoke_corpus
    out = tmp_path_factory.mktemp("smoke_run")
    t0 = time.monotonic()
    result = train(RunConfig.desk(seed=0), root / "train", root / "val", out)
    return result, time.monotonic() - t0


@pytest.fixture(scope="module")
def micro_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("micro")
    make_dataset(root / "train", n=8, seed=101, size=64)
    make_dataset(root / "val", n=4, seed=102, size=64)
    return root


# ---------------------------------------------------------------------------
# 1. transform correctness
# ---------------------------------------------------------------------------


def test_criterion_1_dct_round_trip():
    t0 = time.monotonic()
    gen = torch.Generator().manual_seed(0)
    worst = 0.0
    for _ in range(100):
        img = torch.rand((64, 64), generator=gen, dtype=torch.float32)
        worst = max(worst, float((idct2(dct2(img)) - img).abs().max()))
    coeffs = dct2(torch.full((64, 64), 0.5))
    dc_exact = float(coeffs[0, 0]) == 32.0  # 0.5 * sqrt(64*64)
    elapsed = time.monotonic() - t0
    ok = worst < 1e-6 and dc_exact and elapsed < 10.0
    assert _verdict(1, "dct round trip", ok), (
        f"max abs err {worst:.3e} (< 1e-6), DC exact: {dc_exact}, {elapsed:.1f}s (< 10s)"
    )


# ---------------------------------------------------------------------------
# 2. gradient fidelity
# ---------------------------------------------------------------------------


def test_criterion_2_finite_difference_gradients():
    report = run_gradcheck(h=1e-5, threshold=1e-4)
    checked = {row.name for row in report.rows}

    def covered(*prefixes):
        return any(name.startswith(p) for p in prefixes for name in checked)

    groups_ok = all(
        [
            covered("band.alpha_h") and covered("band.alpha_l"),
            covered("aligner.merge"),
            covered("aligner.projector"),
            covered("aligner.proto_real") and covered("aligner.proto_fake"),
            covered("aligner.log_tau"),
            covered("adapters."),
            covered("decoder.queries."),
            covered("decoder.gate") and covered("decoder.phi"),
        ]
    )
    ok = report.passed and groups_ok and report.seconds < 120.0
    assert _verdict(2, "finite-difference gradients", ok), report.summary()


# ---------------------------------------------------------------------------
# 3. closed-form losses
# ---------------------------------------------------------------------------


def test_criterion_3_closed_form_losses():
    e_r = torch.tensor([1.0, 0.0])
    e_f = torch.tensor([0.0, 1.0])

    # embedding equidistant from both prototypes -> ln 2 at any temperature
    z_sym = torch.tensor([[1.0, 1.0]]) / math.sqrt(2.0)
    sym = float(contrastive_loss(z_sym, torch.tensor([0]), e_r, e_f, 0.31))

    # embedding equal to its prototype, orthonormal pair, tau = 1
    ortho = float(contrastive_loss(e_r[None], torch.tensor([0]), e_r, e_f, 1.0))

    # uniform 0.5 prediction -> ln 2 regardless of the target mask
    gt = torch.zeros((1, 6, 6))
    gt[0, 1:4, 2:5] = 1.0
    bce = float(mask_loss(torch.full((1, 6, 6), 0.5), gt))

    ok = (
        abs(sym - math.log(2.0)) < 1e-6
        and abs(ortho - (-math.log(math.e / (math.e + 1.0)))) < 1e-6
        and abs(bce - math.log(2.0)) < 1e-6
    )
    assert _verdict(3, "closed-form losses", ok), (
        f"symmetric {sym!r} vs ln2, prototype {ortho!r} vs "
        f"{-math.log(math.e / (math.e + 1.0))!r}, uniform BCE {bce!r} vs ln2"
    )


# ---------------------------------------------------------------------------
# 4. structural identities
# ---------------------------------------------------------------------------


@torch.no_grad()
def test_criterion_4_structural_identities():
    torch.manual_seed(0)

    # freshly built side adapters must be an exact identity injection
    bank = SideAdapterBank(in_dim=32, channels=(8, 16, 32, 64), grid=8, input_hw=(64, 64))
    stages = [
        torch.rand(2, c, 64 // s, 64 // s) for c, s in zip((8, 16, 32, 64), (4, 8, 16, 32))
    ]
    injected = bank.inject(stages, torch.rand(2, 32, 8, 8))
    adapter_identity = all(torch.equal(a, b) for a, b in zip(stages, injected))

    # zero gates reduce the fusion to the residual pathway exactly
    phi = torch.nn.Conv2d(4, 1, 1)
    basis = torch.randn(2, 4, 5, 7)
    gates_zero = torch.zeros_like(basis)
    residual_only = torch.equal(fuse(basis, gates_zero, phi), phi(basis))

    # fusion matches a per-pixel scalar oracle
    gates = torch.rand(2, 4, 5, 7)
    fused = fuse(basis, gates, phi)
    resid = phi(basis)
    worst = 0.0
    for b in range(2):
        for i in range(5):
            for j in range(7):
                acc = sum(
                    float(gates[b, k, i, j]) * float(basis[b, k, i, j]) for k in range(4)
                )
                worst = max(worst, abs(acc + float(resid[b, 0, i, j]) - float(fused[b, 0, i, j])))
    fusion_close = worst < 1e-6

    # image score is exactly the exhaustive spatial maximum
    probs = torch.rand(3, 1, 9, 11)
    scores = image_score(probs)
    exhaustive = torch.tensor(
        [[max(float(probs[b, 0, i, j]) for i in range(9) for j in range(11))] for b in range(3)]
    )
    score_exact = torch.equal(scores, exhaustive)

    ok = adapter_identity and residual_only and fusion_close and score_exact
    assert _verdict(4, "structural identities", ok), (
        f"adapter identity {adapter_identity}, zero-gate residual {residual_only}, "
        f"fusion worst {worst:.3e}, score exact {score_exact}"
    )


# ---------------------------------------------------------------------------
# 5. metric oracles
# ---------------------------------------------------------------------------


def test_criterion_5_metric_oracles():
    # every 3x3 binary mask pair, against integer confusion counting
    masks = [
        np.array([(m >> k) & 1 for k in range(9)], dtype=np.uint8).reshape(3, 3)
        for m in range(512)
    ]
    bits = [sum(int(v) << k for k, v in enumerate(m.ravel())) for m in masks]
    overlap_exact = True
    identity_exact = True
    for a in range(512):
        pa = masks[a]
        for b in range(512):
            tp = bin(bits[a] & bits[b]).count("1")
            fp = bin(bits[a] & ~bits[b] & 0x1FF).count("1")
            fn = bin(~bits[a] & bits[b] & 0x1FF).count("1")
            if tp + fp + fn == 0:
                want_f1 = want_iou = 1.0
            else:
                want_f1 = 2 * tp / (2 * tp + fp + fn)
                want_iou = tp / (tp + fp + fn)
            got_f1 = pixel_f1(pa, masks[b])
            got_iou = iou(pa, masks[b])
            if got_f1 != want_f1 or got_iou != want_iou:
                overlap_exact = False
            if abs(got_f1 - 2 * got_iou / (1 + got_iou)) > 1e-12:
                identity_exact = False
        if not overlap_exact:
            break

    # rank-based area under the curve vs the quadratic pairwise count
    rng = np.random.default_rng(0)
    auc_worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(8, 40))
        scores = rng.choice(np.linspace(0.0, 1.0, 9), size=n)  # duplicates force ties
        labels = rng.integers(0, 2, n)
        if labels.sum() in (0, n):
            labels[0] = 1 - labels[0]
        pos, neg = scores[labels == 1], scores[labels == 0]
        wins = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
        oracle = wins / (len(pos) * len(neg))
        auc_worst = max(auc_worst, abs(auc(scores, labels) - oracle))

    ok = overlap_exact and identity_exact and auc_worst < 1e-12
    assert _verdict(5, "metric oracles", ok), (
        f"overlap exact {overlap_exact}, F1/IoU identity {identity_exact}, "
        f"AUC worst {auc_worst:.3e}"
    )


# ---------------------------------------------------------------------------
# 6. frozen-encoder audit
# ---------------------------------------------------------------------------


def test_criterion_6_frozen_encoder(micro_corpus, tmp_path):
    cfg = RunConfig.desk(seed=3, epochs=5)
    before = build_model(cfg).encoder_hash()
    result = train(cfg, micro_corpus / "train", micro_corpus / "val", tmp_path)
    model, _ = model_from_checkpoint(result.last_checkpoint)
    after = model.encoder_hash()
    ok = before is not None and before == after and len(result.history) == 5
    assert _verdict(6, "frozen-encoder hash", ok), f"{before} -> {after}"


# ---------------------------------------------------------------------------
# 7. learnability
# ---------------------------------------------------------------------------


def test_criterion_7_learnability(smoke_corpus, smoke_run):
    _, gen_seconds = smoke_corpus
    result, train_seconds = smoke_run
    best = max(result.history, key=lambda row: row["val_pixel_f1"])
    total = gen_seconds + train_seconds
    ok = (
        best["val_pixel_f1"] >= 0.60
        and best["val_image_acc"] >= 0.80
        and len(result.history) <= 10
        and total <= 600.0
    )
    assert _verdict(7, "learnability", ok), (
        f"val pixel F1 {best['val_pixel_f1']:.4f} (>= 0.60), "
        f"image acc {best['val_image_acc']:.2f} (>= 0.80), "
        f"{len(result.history)} epochs (<= 10), {total:.0f}s (<= 600s)"
    )


# ---------------------------------------------------------------------------
# 8. ablation ordering
# ---------------------------------------------------------------------------


def test_criterion_8_full_model_beats_baseline(smoke_corpus, smoke_run, tmp_path):
    root, _ = smoke_corpus
    seed0_full, _ = smoke_run
    full = [seed0_full.best_f1]
    for seed in (1, 2):
        cfg = RunConfig.desk(seed=seed)
        full.append(train(cfg, root / "train", root / "val", tmp_path / f"full{seed}").best_f1)
    base = []
    for seed in (0, 1, 2):
        cfg = RunConfig.desk(seed=seed).ladder_variant("baseline")
        base.append(train(cfg, root / "train", root / "val", tmp_path / f"base{seed}").best_f1)
    ok = float(np.mean(full)) >= float(np.mean(base))
    assert _verdict(8, "full model vs baseline", ok), (
        f"full mean {np.mean(full):.4f} {[round(f, 4) for f in full]} vs "
        f"baseline mean {np.mean(base):.4f} {[round(f, 4) for f in base]}"
    )


# ---------------------------------------------------------------------------
# 9. determinism
# ---------------------------------------------------------------------------


def test_criterion_9_byte_identical_runs(micro_corpus, tmp_path):
    cfg = RunConfig.desk(seed=3, epochs=2, deterministic=True)
    res_a = train(cfg, micro_corpus / "train", micro_corpus / "val", tmp_path / "a")
    res_b = train(cfg, micro_corpus / "train", micro_corpus / "val", tmp_path / "b")
    logs_equal = res_a.log_path.read_bytes() == res_b.log_path.read_bytes()
    model_a, _ = model_from_checkpoint(res_a.best_checkpoint)
    model_b, _ = model_from_checkpoint(res_b.best_checkpoint)
    report_a = evaluate(model_a, micro_corpus / "val", cfg).to_json()
    report_b = evaluate(model_b, micro_corpus / "val", cfg).to_json()
    ok = logs_equal and report_a == report_b
    assert _verdict(9, "byte-identical determinism", ok), (
        f"logs equal {logs_equal}, reports equal {report_a == report_b}"
    )


# ---------------------------------------------------------------------------
# 10. robustness sweep
# ---------------------------------------------------------------------------


def test_criterion_10_robustness_sweep(smoke_corpus, smoke_run, tmp_path):
    root, _ = smoke_corpus
    result, _ = smoke_run
    model, _ = model_from_checkpoint(result.best_checkpoint)
    clean = evaluate(model, root / "val")
    out = sweep(
        model,
        root / "val",
        tmp_path,
        blur_sigmas=(0.0, 1.0, 2.0, 3.0),
        jpeg_qualities=(100, 80, 60, 40),
    )
    completes = len(out["blur"]) == 4 and len(out["jpeg"]) == 4
    identity = out["blur"][0]["blur_sigma"] == 0.0 and (
        out["blur"][0]["pixel_f1"] == clean.pixel_f1
        and out["blur"][0]["pixel_iou"] == clean.pixel_iou
    )
    psnr = np.array(out["psnr_per_image"])  # (4 qualities, 50 images)
    monotone = psnr.shape == (4, 50) and bool(np.all(np.diff(psnr, axis=0) <= 1e-9))
    ok = completes and identity and monotone
    assert _verdict(10, "robustness sweep", ok), (
        f"completes {completes}, identity bit-exact {identity}, "
        f"PSNR monotone {monotone}"
    )
