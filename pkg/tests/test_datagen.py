"""Synthetic corpus generator: region geometry, manipulation/mask agreement,
neutral-balance and texture invariants, degradations, and corpus assembly."""

import json

import numpy as np
import pytest

from tamperloc.datagen import (
    AugmentConfig,
    DegradationSpec,
    Region,
    allocate_counts,
    augment,
    content_blur,
    content_gain,
    copy_move,
    corpus_manifest_hash,
    degrade,
    disjoint_offset,
    erase_fill,
    generate_sample,
    load_corpus,
    make_dataset,
    psnr,
    sample_region,
    splice,
    synth_base,
)
from tamperloc.errors import ValidationError


class TestRegion:
    def test_mask_covers_rectangle(self):
        mask = Region(2, 3, 4, 5).as_mask((16, 16))
        assert mask.sum() == 20
        assert mask[2:6, 3:8].all()

    def test_ellipse_inside_bounding_box(self):
        rect = Region(2, 2, 8, 12, "rect").as_mask((16, 16))
        ell = Region(2, 2, 8, 12, "ellipse").as_mask((16, 16))
        assert (ell <= rect).all()
        assert 0 < ell.sum() < rect.sum()

    def test_out_of_bounds_rejected(self):
        with pytest.raises(ValidationError):
            Region(10, 10, 8, 8).as_mask((16, 16))

    def test_degenerate_extent_rejected(self):
        with pytest.raises(ValidationError):
            Region(0, 0, 0, 4)
        with pytest.raises(ValidationError):
            Region(-1, 0, 4, 4)
        with pytest.raises(ValidationError):
            Region(0, 0, 4, 4, "hexagon")

    def test_sample_region_respects_bounds(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            reg = sample_region(rng, (64, 64), 0.2, 0.5, margin=2)
            assert reg.top >= 2 and reg.left >= 2
            assert reg.top + reg.height <= 62
            assert reg.left + reg.width <= 62


class TestBaseImagery:
    def test_deterministic_for_fixed_key(self):
        a = synth_base([7, 0, 0])
        b = synth_base([7, 0, 0])
        assert np.array_equal(a, b)
        assert a.shape == (64, 64, 3) and a.dtype == np.uint8

    def test_distinct_keys_differ(self):
        assert not np.array_equal(synth_base([7, 0, 0]), synth_base([7, 1, 0]))

    def test_neutral_color_balance(self):
        # authentic content is achromatic: channels differ only by sensor
        # noise, so the mean absolute chroma stays far below any cast
        img = synth_base([3, 1, 0]).astype(np.float64)
        chroma = np.abs(img - img.mean(axis=2, keepdims=True)).mean()
        assert chroma < 8.0

    def test_texture_energy_present(self):
        # the pattern/noise field leaves per-image high-pass energy well
        # above a smooth gradient's
        from scipy.ndimage import gaussian_filter

        img = synth_base([3, 2, 0]).astype(np.float64).mean(axis=2)
        residual = img - gaussian_filter(img, 2.0)
        assert residual.std() > 4.0

    def test_undersized_rejected(self):
        with pytest.raises(ValidationError):
            synth_base([0], size=4)


class TestManipulations:
    def base(self, key=(1, 0, 0)):
        return synth_base(list(key))

    def test_splice_mask_matches_changed_pixels(self):
        base = self.base()
        source = synth_base([1, 0, 1])
        region = Region(16, 16, 24, 24)
        image, mask = splice(base, source, region, feather_sigma=0.0)
        changed = (image != base).any(axis=2)
        assert mask.dtype == np.uint8 and set(np.unique(mask)) <= {0, 1}
        assert (changed <= mask.astype(bool)).all()
        assert mask.sum() == 24 * 24

    def test_splice_shape_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            splice(self.base(), synth_base([1, 0, 1], size=32), Region(0, 0, 8, 8))

    def test_copy_move_duplicates_patch(self):
        base = self.base()
        region = Region(8, 8, 12, 12)
        image, mask = copy_move(
            base, region, (30, 30), feather_sigma=0.0, resample_sigma=0.0, gain=1.0
        )
        assert np.array_equal(image[38:50, 38:50], base[8:20, 8:20])
        assert mask[38:50, 38:50].all()
        assert mask.sum() == 144

    def test_copy_move_overlap_rejected(self):
        with pytest.raises(ValidationError):
            copy_move(self.base(), Region(8, 8, 12, 12), (4, 4))

    def test_disjoint_offset_always_disjoint(self):
        rng = np.random.default_rng(0)
        region = Region(10, 10, 16, 16)
        for _ in range(30):
            dy, dx = disjoint_offset(rng, region, (64, 64))
            assert abs(dy) >= 16 or abs(dx) >= 16

    def test_erase_fill_is_harmonic(self):
        # after enough Jacobi iterations each interior pixel approximates the
        # mean of its 4 neighbours (discrete Laplace equation)
        base = self.base()
        region = Region(20, 20, 16, 16)
        image, mask = erase_fill(base, region, iterations=4000, feather_sigma=0.0)
        inner = image[21:35, 21:35].astype(np.float64)
        neigh = (
            image[20:34, 21:35].astype(np.float64)
            + image[22:36, 21:35]
            + image[21:35, 20:34]
            + image[21:35, 22:36]
        ) / 4.0
        assert np.abs(inner - neigh).max() <= 1.0  # uint8 rounding slack
        assert mask[region.slices].all()

    def test_erase_fill_needs_border(self):
        with pytest.raises(ValidationError):
            erase_fill(self.base(), Region(0, 0, 8, 8))

    def test_content_gain_scales_channels(self):
        img = np.full((4, 4, 3), 100, dtype=np.uint8)
        out = content_gain(img, [1.2, 1.0, 0.8])
        assert (out[..., 0] == 120).all()
        assert (out[..., 1] == 100).all()
        assert (out[..., 2] == 80).all()

    def test_content_gain_validates(self):
        img = np.zeros((4, 4, 3), dtype=np.uint8)
        with pytest.raises(ValidationError):
            content_gain(img, [1.0, 1.0])
        with pytest.raises(ValidationError):
            content_gain(img, -0.5)

    def test_content_blur_zero_sigma_is_identity(self):
        img = self.base()
        assert content_blur(img, 0.0) is img


class TestDegradation:
    def test_identity_spec_is_bit_exact(self):
        img = synth_base([2, 0, 0])
        out = degrade(img, DegradationSpec())
        assert np.array_equal(out, img)
        assert out is not img  # defensive copy

    def test_blur_reduces_psnr(self):
        img = synth_base([2, 0, 0])
        out = degrade(img, DegradationSpec(blur_sigma=2.0))
        assert psnr(img, out) < 35.0

    def test_jpeg_severity_monotone_psnr(self):
        img = synth_base([2, 1, 0])
        values = [psnr(img, degrade(img, DegradationSpec(jpeg_quality=q)))
                  for q in (90, 60, 30)]
        assert values[0] >= values[1] >= values[2]

    def test_psnr_infinite_on_identical(self):
        img = synth_base([2, 0, 0])
        assert psnr(img, img.copy()) == float("inf")

    def test_invalid_spec_rejected(self):
        with pytest.raises(ValidationError):
            DegradationSpec(blur_sigma=-1.0)
        with pytest.raises(ValidationError):
            DegradationSpec(jpeg_quality=0)


class TestAugment:
    def test_geometry_applies_to_image_and_mask(self):
        rng = np.random.default_rng(0)
        img = synth_base([5, 0, 0])
        mask = Region(10, 10, 20, 20).as_mask((64, 64)).astype(np.uint8)
        cfg = AugmentConfig(p_hflip=1.0, p_vflip=0.0, p_scale=0.0, p_blur=0.0, p_jpeg=0.0)
        out_img, out_mask = augment(img, mask, rng, cfg)
        assert np.array_equal(out_img, img[:, ::-1])
        assert np.array_equal(out_mask, mask[:, ::-1])

    def test_photometric_leaves_mask_alone(self):
        rng = np.random.default_rng(0)
        img = synth_base([5, 0, 0])
        mask = Region(10, 10, 20, 20).as_mask((64, 64)).astype(np.uint8)
        cfg = AugmentConfig(p_hflip=0.0, p_vflip=0.0, p_scale=0.0, p_blur=1.0, p_jpeg=1.0)
        out_img, out_mask = augment(img, mask, rng, cfg)
        assert np.array_equal(out_mask, mask)
        assert not np.array_equal(out_img, img)

    def test_shapes_preserved(self):
        rng = np.random.default_rng(3)
        img = synth_base([5, 1, 0])
        mask = Region(5, 5, 30, 30).as_mask((64, 64)).astype(np.uint8)
        for _ in range(20):
            out_img, out_mask = augment(img, mask, rng)
            assert out_img.shape == img.shape and out_mask.shape == mask.shape

    def test_mask_shape_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            augment(synth_base([5, 0, 0]), np.zeros((32, 32), np.uint8),
                    np.random.default_rng(0))


class TestSamples:
    def test_every_kind_generates(self):
        for kind in ("authentic", "splice", "copy_move", "erase_fill"):
            sample = generate_sample(11, 0, kind)
            assert sample.image.shape == (64, 64, 3)
            assert sample.mask.shape == (64, 64)
            assert sample.label == int(kind != "authentic")
            if kind == "authentic":
                assert sample.mask.sum() == 0
            else:
                assert sample.mask.sum() > 0

    def test_deterministic_per_seed_index(self):
        a = generate_sample(11, 3, "splice")
        b = generate_sample(11, 3, "splice")
        assert np.array_equal(a.image, b.image)
        assert np.array_equal(a.mask, b.mask)

    def test_manipulated_regions_carry_color_cast(self):
        # the casts guarantee chromatic content inside, neutrality outside
        for kind in ("splice", "copy_move", "erase_fill"):
            sample = generate_sample(11, 1, kind)
            img = sample.image.astype(np.float64)
            chroma = np.abs(img - img.mean(axis=2, keepdims=True)).mean(axis=2)
            inside = chroma[sample.mask.astype(bool)].mean()
            outside = chroma[~sample.mask.astype(bool)].mean()
            assert inside > outside + 2.0, kind

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValidationError):
            generate_sample(11, 0, "blend")


class TestCorpusAssembly:
    def test_allocate_counts_largest_remainder(self):
        counts = allocate_counts(10, {"a": 0.5, "b": 1 / 3, "c": 1 / 6})
        assert counts == {"a": 5, "b": 3, "c": 2}
        assert sum(allocate_counts(7, {"x": 1, "y": 1, "z": 1}).values()) == 7

    def test_allocate_counts_validates(self):
        with pytest.raises(ValidationError):
            allocate_counts(-1, {"a": 1.0})
        with pytest.raises(ValidationError):
            allocate_counts(4, {"a": -0.5, "b": 1.5})

    def test_dataset_round_trip(self, tmp_path):
        manifest = make_dataset(tmp_path / "c", 12, seed=5)
        samples = load_corpus(tmp_path / "c")
        assert len(samples) == 12
        records = [json.loads(l) for l in manifest.read_text().splitlines()]
        assert [r["label"] for r in records] == [s.label for s in samples]
        labels = sum(s.label for s in samples)
        assert labels == 6  # default mix is half authentic

    def test_dataset_reproducible_across_directories(self, tmp_path):
        make_dataset(tmp_path / "a", 8, seed=5)
        make_dataset(tmp_path / "b", 8, seed=5)
        assert corpus_manifest_hash(tmp_path / "a") == corpus_manifest_hash(tmp_path / "b")

    def test_different_seed_changes_hash(self, tmp_path):
        make_dataset(tmp_path / "a", 8, seed=5)
        make_dataset(tmp_path / "b", 8, seed=6)
        assert corpus_manifest_hash(tmp_path / "a") != corpus_manifest_hash(tmp_path / "b")

    def test_unknown_mix_category_rejected(self, tmp_path):
        with pytest.raises(ValidationError):
            make_dataset(tmp_path / "c", 4, seed=0, mix={"authentic": 0.5, "warp": 0.5})

    def test_missing_manifest_rejected(self, tmp_path):
        with pytest.raises(ValidationError):
            load_corpus(tmp_path)
