import math

import numpy as np
import pytest

from cfalearn import data as dp
from cfalearn import evaluate as ev
from cfalearn import reconnet, sensor
from cfalearn.evaluate import EvalError, EvalReport
from cfalearn.patterns import bayer_pattern, bilinear_demosaick, cfz_pattern

from oracles import psnr_direct


class TestPsnr:
    def test_mse_hundredth_is_twenty_db(self):
        ref = np.zeros((4, 4, 3))
        recon = np.full((4, 4, 3), 0.1)
        assert ev.psnr(ref, recon) == pytest.approx(20.0, abs=1e-12)

    def test_identical_is_inf(self):
        img = np.random.default_rng(0).uniform(size=(8, 8, 3))
        assert ev.psnr(img, img) == math.inf

    def test_matches_direct_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            ref = rng.uniform(size=(6, 6, 3))
            recon = np.clip(ref + rng.normal(0, 0.1, size=ref.shape), 0, 1)
            assert ev.psnr(ref, recon) == pytest.approx(
                psnr_direct(ref, recon), rel=1e-12)

    def test_clips_before_comparing(self):
        ref = np.ones((2, 2, 3))
        over = np.full((2, 2, 3), 1.5)
        assert ev.psnr(ref, over) == math.inf

    def test_shape_mismatch(self):
        with pytest.raises(EvalError):
            ev.psnr(np.zeros((2, 2, 3)), np.zeros((3, 2, 3)))


class TestQuantiles:
    def test_nearest_rank_three_values(self):
        report = EvalReport()
        report.add("p", 0.0, [30.0, 40.0, 50.0])
        q25, q50, q75 = report.quantiles("p", 0.0)
        assert (q25, q50, q75) == (30.0, 40.0, 50.0)
        assert report.median("p", 0.0) == 40.0

    def test_order_invariance(self):
        rng = np.random.default_rng(2)
        vals = list(rng.uniform(20, 50, size=17))
        a = EvalReport()
        a.add("p", 0.01, vals)
        b = EvalReport()
        b.add("p", 0.01, list(reversed(vals)))
        assert a.quantiles("p", 0.01) == b.quantiles("p", 0.01)

    def test_single_value(self):
        report = EvalReport()
        report.add("p", 0.0, [33.0])
        assert report.quantiles("p", 0.0) == (33.0, 33.0, 33.0)

    def test_table_and_csv(self, tmp_path):
        report = EvalReport()
        report.add("bayer", 0.0, [30.0, 40.0, 50.0])
        table = report.table()
        assert "bayer" in table and "40.00" in table
        path = tmp_path / "report.csv"
        report.write_csv(path)
        lines = path.read_text().strip().splitlines()
        assert lines[0].startswith("pattern,")
        assert lines[1].split(",")[0] == "bayer"
        assert float(lines[1].split(",")[3]) == pytest.approx(40.0)


class TestReconstructImage:
    def test_matches_per_tile_forward(self):
        # oracle: run each 3P x 3P context through the net individually
        p, k, f = 4, 2, 4
        params = reconnet.init_params(p, k, f, seed=0)
        rng = np.random.default_rng(3)
        s = rng.uniform(0.1, 1.0, size=(3 * p, 4 * p))
        out = ev.reconstruct_image(s, params)
        padded = np.maximum(np.pad(s, p, mode="reflect"), dp.LOG_FLOOR)
        for i in range(3):
            for j in range(4):
                ctx = padded[i * p:(i + 3) * p, j * p:(j + 3) * p]
                tile = reconnet.forward(ctx, params).y_hat.data
                np.testing.assert_allclose(
                    out[i * p:(i + 1) * p, j * p:(j + 1) * p], tile, atol=1e-12)

    def test_tile_batch_invariance(self):
        p = 4
        params = reconnet.init_params(p, 2, 4, seed=1)
        s = np.random.default_rng(4).uniform(0.1, 1.0, size=(4 * p, 4 * p))
        a = ev.reconstruct_image(s, params, tile_batch=1)
        b = ev.reconstruct_image(s, params, tile_batch=256)
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_rejects_unaligned_size(self):
        params = reconnet.init_params(4, 2, 4, seed=0)
        with pytest.raises(EvalError):
            ev.reconstruct_image(np.zeros((10, 12)), params)


class TestEvaluateProtocols:
    def test_classical_matches_manual_pipeline(self):
        # oracle: replicate measure -> bilinear -> patch psnr by hand
        imgs = dp.make_synthetic_images(2, 64, seed=5)
        pattern = bayer_pattern(8)
        sigma, seed = 0.01, 7
        report = ev.evaluate_classical(pattern, imgs, [sigma], seed=seed,
                                       patch_size=32)
        expect = []
        for idx, img in enumerate(imgs):
            x = dp.add_noise(dp.build_channels(img), sigma, seed=[seed, idx])
            sel = sensor.one_hot(pattern.tiled(64, 64), 4)
            s = (sel * x).sum(axis=-1)
            recon = bilinear_demosaick(s, pattern)
            for i in range(0, 64, 32):
                for j in range(0, 32 + 1, 32):
                    expect.append(psnr_direct(img[i:i + 32, j:j + 32],
                                              recon[i:i + 32, j:j + 32]))
        got = report.psnrs[("bilinear", sigma)]
        assert len(got) == 8
        np.testing.assert_allclose(sorted(got), sorted(expect), rtol=1e-12)

    def test_network_evaluate_deterministic(self):
        imgs = dp.make_synthetic_images(2, 32, seed=6)
        pattern = bayer_pattern(8)
        params = reconnet.init_params(8, 2, 8, seed=0)
        a = ev.evaluate(pattern, params, imgs, [0.0, 0.01], seed=3, patch_size=32)
        b = ev.evaluate(pattern, params, imgs, [0.0, 0.01], seed=3, patch_size=32)
        for key in a.psnrs:
            np.testing.assert_array_equal(a.psnrs[key], b.psnrs[key])

    def test_params_by_sigma_dict(self):
        imgs = dp.make_synthetic_images(1, 32, seed=8)
        pattern = bayer_pattern(8)
        pa = reconnet.init_params(8, 2, 8, seed=0)
        pb = reconnet.init_params(8, 2, 8, seed=1)
        report = ev.evaluate(pattern, {0.0: pa, 0.01: pb}, imgs, [0.0, 0.01],
                             seed=0, patch_size=32)
        solo = ev.evaluate(pattern, pb, imgs, [0.01], seed=0, patch_size=32)
        np.testing.assert_array_equal(report.psnrs[("pattern", 0.01)],
                                      solo.psnrs[("pattern", 0.01)])

    def test_empty_image_set(self):
        with pytest.raises(EvalError):
            ev.evaluate_classical(bayer_pattern(8), [], [0.0], seed=0)


class TestPatternRendering:
    def test_render_classify_round_trip(self):
        for pattern in (bayer_pattern(8), cfz_pattern(8, 4)):
            img = ev.render_pattern(pattern)
            np.testing.assert_array_equal(ev.classify_rendered(img),
                                          pattern.channels)

    def test_upscale_shape(self):
        img = ev.render_pattern(bayer_pattern(2), upscale=5)
        assert img.shape == (10, 10, 3)
        assert (img[:5, :5] == img[0, 0]).all()

    def test_export_file_round_trip(self, tmp_path):
        pattern = cfz_pattern(8, 4)
        path = tmp_path / "pattern.ppm"
        ev.export_pattern_image(pattern, path)
        loaded = np.rint(dp.load_image(path) * 255).astype(np.uint8)
        np.testing.assert_array_equal(ev.classify_rendered(loaded),
                                      pattern.channels)

    def test_bad_upscale(self):
        with pytest.raises(EvalError):
            ev.render_pattern(bayer_pattern(2), upscale=0)
