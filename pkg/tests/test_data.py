"""Dataset synthesis, PNG round trips, and manifest integrity."""

import json

import numpy as np
import pytest

from wxdiff.data import (
    CaseId,
    case_recipe,
    clean_image,
    load_image,
    load_manifest,
    load_sample,
    sample_seed,
    save_image,
    synth_dataset,
    verify_manifest,
)
from wxdiff.degrade import HAZE_TIERS


class TestCaseRecipes:
    def test_all_cases_have_streaks(self):
        for case in CaseId:
            assert case_recipe(case, seed=1).streaks is not None

    def test_case_composition_table(self):
        # which degradations each case mixes in
        want = {
            1: (False, False, False),
            2: (True, False, False),
            3: (False, True, False),
            4: (False, True, False),
            5: (False, True, True),
            6: (True, True, True),
        }
        for case, (has_snow, has_haze, has_drops) in want.items():
            r = case_recipe(case, seed=1)
            assert (r.snow is not None) == has_snow, case
            assert (r.haze is not None) == has_haze, case
            assert (r.raindrops is not None) == has_drops, case

    def test_haze_tiers_per_case(self):
        assert case_recipe(3, 1).haze.beta == HAZE_TIERS["light"]
        assert case_recipe(4, 1).haze.beta == HAZE_TIERS["heavy"]
        assert case_recipe(5, 1).haze.beta == HAZE_TIERS["moderate"]
        assert case_recipe(6, 1).haze.beta == HAZE_TIERS["moderate"]

    def test_size_scaling(self):
        small = case_recipe(6, 1, size=32)
        big = case_recipe(6, 1, size=64)
        assert big.streaks.count == pytest.approx(4 * small.streaks.count, rel=0.1)
        assert big.streaks.length_px == 2 * small.streaks.length_px

    def test_invalid_case(self):
        with pytest.raises(ValueError):
            case_recipe(7, seed=1)


class TestCleanImages:
    def test_range_and_shape(self):
        for seed in range(10):
            img = clean_image(np.random.default_rng(seed), 32, 32)
            assert img.shape == (32, 32, 3)
            assert img.min() >= 0.0 and img.max() <= 1.0

    def test_not_constant(self):
        img = clean_image(np.random.default_rng(0), 32, 32)
        assert img.std() > 0.01

    def test_deterministic(self):
        a = clean_image(np.random.default_rng(5), 16, 16)
        b = clean_image(np.random.default_rng(5), 16, 16)
        assert np.array_equal(a, b)


class TestPngIo:
    def test_rgb_round_trip_exact_on_quantized(self, tmp_path, rng):
        img = np.round(rng.uniform(0, 1, (8, 8, 3)) * 255) / 255.0
        p = tmp_path / "img.png"
        save_image(img, p)
        assert np.allclose(load_image(p), img, atol=1e-9)

    def test_grayscale_round_trip(self, tmp_path):
        mask = (np.indices((8, 8)).sum(axis=0) % 2).astype(np.float64)
        p = tmp_path / "mask.png"
        save_image(mask, p)
        back = load_image(p)
        assert back.ndim == 2
        assert np.array_equal(back, mask)

    def test_quantization_error_bounded(self, tmp_path, rng):
        img = rng.uniform(0, 1, (8, 8, 3))
        p = tmp_path / "img.png"
        save_image(img, p)
        assert np.abs(load_image(p) - img).max() <= 0.5 / 255 + 1e-12


class TestSynthDataset:
    def test_cardinality_and_files(self, tmp_path):
        man = synth_dataset(tmp_path, [1, 6], 3, seed=11, size=32)
        assert len(man["samples"]) == 6
        case6 = [r for r in man["samples"] if r["case_id"] == 6]
        assert len(case6) == 3
        # case 6 carries all three mask layers
        assert {"mask_streak", "mask_snow", "mask_raindrop"} <= set(case6[0]["files"])
        loaded = load_manifest(tmp_path)
        verify_manifest(loaded)

    def test_deterministic_resynthesis(self, tmp_path):
        man1 = synth_dataset(tmp_path / "a", [1], 4, seed=3)
        man2 = synth_dataset(tmp_path / "b", [1], 4, seed=3)
        d1 = [r["digests"] for r in man1["samples"]]
        d2 = [r["digests"] for r in man2["samples"]]
        assert d1 == d2

    def test_seed_changes_content(self, tmp_path):
        man1 = synth_dataset(tmp_path / "a", [1], 2, seed=3)
        man2 = synth_dataset(tmp_path / "b", [1], 2, seed=4)
        assert man1["samples"][0]["digests"] != man2["samples"][0]["digests"]

    def test_sample_seed_order_independent(self):
        assert sample_seed(7, 3) == sample_seed(7, 3)
        assert sample_seed(7, 3) != sample_seed(7, 4)
        assert sample_seed(8, 3) != sample_seed(7, 3)

    def test_verify_detects_tamper(self, tmp_path):
        synth_dataset(tmp_path, [1], 1, seed=2)
        man = load_manifest(tmp_path)
        target = tmp_path / man["samples"][0]["files"]["degraded"]
        save_image(np.zeros((32, 32, 3)), target)
        with pytest.raises(ValueError):
            verify_manifest(man)

    def test_verify_detects_missing(self, tmp_path):
        synth_dataset(tmp_path, [1], 1, seed=2)
        man = load_manifest(tmp_path)
        (tmp_path / man["samples"][0]["files"]["clean"]).unlink()
        with pytest.raises(FileNotFoundError):
            verify_manifest(man)

    def test_load_sample_shapes(self, tmp_path):
        synth_dataset(tmp_path, [2], 1, seed=9, size=32)
        man = load_manifest(tmp_path)
        clean, degraded, mask = load_sample(man, man["samples"][0])
        assert clean.shape == (32, 32, 3)
        assert degraded.shape == (32, 32, 3)
        assert mask.shape == (32, 32)
        assert set(np.unique(mask)) <= {0.0, 1.0}

    def test_degraded_differs_from_clean(self, tmp_path):
        synth_dataset(tmp_path, [4], 1, seed=5)
        man = load_manifest(tmp_path)
        clean, degraded, _ = load_sample(man, man["samples"][0])
        assert np.abs(clean - degraded).mean() > 0.01

    def test_clean_dir_source(self, tmp_path, rng):
        src = tmp_path / "src"
        src.mkdir()
        for i in range(2):
            save_image(rng.uniform(0, 1, (32, 32, 3)), src / f"c{i}.png")
        man = synth_dataset(tmp_path / "out", [1], 4, seed=1, clean_dir=src)
        # pool of 2 cycled over 4 samples -> samples 0 and 2 share a clean image
        recs = man["samples"]
        assert recs[0]["digests"]["clean"] == recs[2]["digests"]["clean"]
        assert recs[0]["digests"]["clean"] != recs[1]["digests"]["clean"]

    def test_empty_clean_dir_rejected(self, tmp_path):
        (tmp_path / "src").mkdir()
        with pytest.raises(ValueError):
            synth_dataset(tmp_path / "out", [1], 1, seed=1, clean_dir=tmp_path / "src")

    def test_manifest_json_is_self_contained(self, tmp_path):
        synth_dataset(tmp_path, [5], 1, seed=6)
        doc = json.loads((tmp_path / "manifest.json").read_text())
        rec = doc["samples"][0]
        assert rec["recipe"]["haze"]["beta"] == HAZE_TIERS["moderate"]
        assert 0.0 <= rec["atmospheric_light"] <= 1.0
