import numpy as np
import pytest

from cfalearn import data as dp
from cfalearn.data import DataError


def _ramp(h=16, w=16):
    img = np.zeros((h, w, 3))
    img[:, :, 0] = np.linspace(0, 1, h)[:, None]
    img[:, :, 1] = np.linspace(0, 1, w)[None, :]
    img[:, :, 2] = 0.5
    return img


class TestImageIO:
    @pytest.mark.parametrize("maxval,tol", [(255, 1 / 510), (65535, 1 / 131070)])
    def test_ramp_round_trip(self, tmp_path, maxval, tol):
        path = tmp_path / "ramp.ppm"
        img = _ramp()
        dp.write_ppm(path, img, maxval=maxval)
        loaded = dp.load_image(path)
        assert np.abs(loaded - img).max() <= tol + 1e-12

    def test_8bit_extremes(self, tmp_path):
        path = tmp_path / "x.ppm"
        img = np.zeros((2, 2, 3))
        img[0, 0] = 1.0
        dp.write_ppm(path, img, maxval=255)
        loaded = dp.load_image(path)
        assert loaded[0, 0, 0] == 1.0
        assert loaded[1, 1, 2] == 0.0

    def test_truncated_file(self, tmp_path):
        path = tmp_path / "t.ppm"
        dp.write_ppm(path, _ramp())
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(DataError):
            dp.load_image(path)

    def test_unsupported_format(self, tmp_path):
        path = tmp_path / "x.gif"
        path.write_bytes(b"GIF89a")
        with pytest.raises(DataError):
            dp.load_image(path)

    def test_png_round_trip(self, tmp_path):
        from PIL import Image

        img8 = (np.clip(_ramp(), 0, 1) * 255).round().astype(np.uint8)
        path = tmp_path / "x.png"
        Image.fromarray(img8).save(path)
        loaded = dp.load_image(path)
        np.testing.assert_allclose(loaded, img8 / 255.0, atol=1e-12)


class TestBuildChannels:
    def test_white_is_sum(self):
        img = np.array([[[0.2, 0.3, 0.1]]])
        x = dp.build_channels(img)
        assert x[0, 0, 3] == pytest.approx(0.6)

    def test_black(self):
        x = dp.build_channels(np.zeros((2, 2, 3)))
        np.testing.assert_array_equal(x, 0.0)

    def test_mean_linearity(self):
        rng = np.random.default_rng(0)
        img = rng.uniform(size=(9, 9, 3))
        x = dp.build_channels(img)
        assert x[:, :, 3].mean() == pytest.approx(
            img[:, :, 0].mean() + img[:, :, 1].mean() + img[:, :, 2].mean(), abs=1e-12)


class TestAddNoise:
    def test_zero_std_identity(self):
        rng = np.random.default_rng(1)
        x = rng.uniform(size=(4, 4, 4))
        np.testing.assert_array_equal(dp.add_noise(x, 0.0, seed=0), x)

    def test_noise_statistics(self):
        x = np.full((100, 100, 100), 0.5)
        sigma = 0.01
        noisy = dp.add_noise(x, sigma, seed=2)
        delta = noisy - x
        assert abs(delta.mean()) < 3 * sigma / 1000
        assert abs(delta.std() - sigma) < 0.01 * sigma

    def test_deterministic(self):
        x = np.random.default_rng(3).uniform(size=(8, 8, 4))
        a = dp.add_noise(x, 0.02, seed=5)
        b = dp.add_noise(x, 0.02, seed=5)
        np.testing.assert_array_equal(a, b)

    def test_floor_clamp(self):
        x = np.zeros((50, 50, 4))
        noisy = dp.add_noise(x, 0.05, seed=6)
        assert noisy.min() >= dp.LOG_FLOOR

    def test_negative_std_rejected(self):
        with pytest.raises(DataError):
            dp.add_noise(np.zeros((2, 2, 4)), -0.1, seed=0)


class TestSplitDataset:
    def test_reference_sizes(self):
        ids = [f"img{i:04d}" for i in range(568)]
        split = dp.split_dataset(ids, n_test=56, n_val=51, seed=0)
        assert len(split.test) == 56
        assert len(split.val) == 51
        assert len(split.train) == 461

    def test_partition(self):
        ids = list(range(100))
        split = dp.split_dataset(ids, n_test=10, n_val=5, seed=1)
        parts = split.train + split.val + split.test
        assert sorted(parts) == ids
        assert len(set(split.train) & set(split.val)) == 0
        assert len(set(split.train) & set(split.test)) == 0

    def test_deterministic(self):
        ids = list(range(50))
        a = dp.split_dataset(ids, 5, 5, seed=9)
        b = dp.split_dataset(ids, 5, 5, seed=9)
        assert a.train == b.train and a.val == b.val and a.test == b.test

    def test_insufficient_images(self):
        with pytest.raises(DataError):
            dp.split_dataset(list(range(10)), 6, 4, seed=0)

    def test_manifest_round_trip(self, tmp_path):
        split = dp.split_dataset([f"i{i}" for i in range(20)], 4, 3, seed=2)
        path = tmp_path / "split.txt"
        dp.write_split(split, path)
        loaded = dp.read_split(path)
        assert loaded.train == split.train
        assert loaded.test == split.test


class TestSamplePatchPairs:
    def _chans(self, n=3, size=64, seed=0):
        return [dp.build_channels(im) for im in dp.make_synthetic_images(n, size, seed)]

    def test_shapes(self):
        batch = dp.sample_patch_pairs(self._chans(), 8, 5, seed=0, noise_std=0.01)
        assert batch.x.shape == (5, 24, 24, 4)
        assert batch.y.shape == (5, 8, 8, 3)

    def test_clean_alignment(self):
        chans = self._chans()
        batch = dp.sample_patch_pairs(chans, 8, 16, seed=1, noise_std=0.0)
        center = batch.x[:, 8:16, 8:16, :3]
        np.testing.assert_array_equal(center, batch.y)

    def test_offsets_are_pattern_aligned(self):
        # offsets congruent to 0 mod P: with sigma 0 the x windows' RGB part
        # must be recoverable from the source images at P-aligned positions
        chans = self._chans(n=1, size=64)
        img = chans[0]
        found = 0
        for b_idx in range(100):
            batch = dp.sample_patch_pairs(chans, 8, 4, seed=2, noise_std=0.0, batch_index=b_idx)
            for b in range(4):
                matches = [
                    (i0, j0)
                    for i0 in range(0, 64 - 23)
                    for j0 in range(0, 64 - 23)
                    if np.array_equal(np.maximum(img[i0:i0 + 24, j0:j0 + 24], dp.LOG_FLOOR),
                                      batch.x[b])
                ]
                assert any(i0 % 8 == 0 and j0 % 8 == 0 for i0, j0 in matches)
                found += 1
        assert found == 400

    def test_deterministic_per_batch_index(self):
        chans = self._chans()
        a = dp.sample_patch_pairs(chans, 8, 8, seed=3, noise_std=0.01, batch_index=17)
        b = dp.sample_patch_pairs(chans, 8, 8, seed=3, noise_std=0.01, batch_index=17)
        np.testing.assert_array_equal(a.x, b.x)
        np.testing.assert_array_equal(a.y, b.y)
        c = dp.sample_patch_pairs(chans, 8, 8, seed=3, noise_std=0.01, batch_index=18)
        assert not np.array_equal(a.x, c.x)

    def test_floor_applied(self):
        chans = [dp.build_channels(np.zeros((32, 32, 3)))]
        batch = dp.sample_patch_pairs(chans, 8, 4, seed=4, noise_std=0.05)
        assert batch.x.min() >= dp.LOG_FLOOR

    def test_image_too_small(self):
        chans = [dp.build_channels(np.zeros((16, 16, 3)))]
        with pytest.raises(DataError):
            dp.sample_patch_pairs(chans, 8, 1, seed=0, noise_std=0.0)


def test_synthetic_images_deterministic_and_bounded():
    a = dp.make_synthetic_images(4, 32, seed=0)
    b = dp.make_synthetic_images(4, 32, seed=0)
    for ia, ib in zip(a, b):
        np.testing.assert_array_equal(ia, ib)
        assert ia.min() >= 0.0 and ia.max() <= 1.0
