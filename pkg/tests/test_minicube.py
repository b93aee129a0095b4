import numpy as np
import pytest

from greencast.configio import ConfigError
from greencast.fileio import FormatError
from greencast.minicube import (ForecastConfig, broadcast_drivers,
                                compute_ndvi, gapfill_frames, gapfill_linear,
                                load_minicube, save_minicube)


class TestComputeNdvi:
    def test_basic_value(self):
        ndvi, valid = compute_ndvi(np.array([0.1]), np.array([0.3]))
        assert ndvi[0] == pytest.approx(0.5)
        assert valid[0]

    def test_equal_bands_zero(self):
        ndvi, valid = compute_ndvi(np.array([0.2]), np.array([0.2]))
        assert ndvi[0] == 0.0
        assert valid[0]

    def test_degenerate_denominator(self):
        ndvi, valid = compute_ndvi(np.array([0.0]), np.array([0.0]))
        assert ndvi[0] == 0.0
        assert not valid[0]

    def test_negative_reflectance_rejected(self):
        with pytest.raises(ValueError):
            compute_ndvi(np.array([-0.1]), np.array([0.3]))

    def test_range(self):
        rng = np.random.default_rng(0)
        red = rng.uniform(0, 1, 100)
        nir = rng.uniform(0, 1, 100)
        ndvi, _ = compute_ndvi(red, nir)
        assert np.all(ndvi >= -1) and np.all(ndvi <= 1)


class TestBroadcastDrivers:
    def test_constant_planes(self):
        d = np.array([[1.5, -2.0], [0.0, 3.0]], dtype=np.float32)
        planes = broadcast_drivers(d, 4, 5)
        assert planes.shape == (2, 2, 4, 5)
        assert np.all(planes[0, 1] == -2.0)
        assert planes[1, 1].sum() == pytest.approx(3.0 * 20)

    def test_spatial_mean_roundtrip(self):
        rng = np.random.default_rng(1)
        d = rng.normal(size=(5, 3)).astype(np.float32)
        planes = broadcast_drivers(d, 8, 8)
        np.testing.assert_allclose(planes.mean(axis=(2, 3), dtype=np.float64),
                                   d, rtol=1e-7)


class TestGapfill:
    def test_midpoint(self):
        out = gapfill_linear(np.array([1.0, 0.0, 3.0]),
                             np.array([True, False, True]))
        np.testing.assert_allclose(out, [1.0, 2.0, 3.0])

    def test_leading_fill(self):
        out = gapfill_linear(np.array([0.0, 5.0, 5.0]),
                             np.array([False, True, True]))
        np.testing.assert_allclose(out, [5.0, 5.0, 5.0])

    def test_all_valid_unchanged(self):
        s = np.array([2.0, -1.0, 0.5], dtype=np.float32)
        np.testing.assert_array_equal(gapfill_linear(s, np.ones(3, bool)), s)

    def test_all_invalid_rejected(self):
        with pytest.raises(ValueError):
            gapfill_linear(np.zeros(3), np.zeros(3, bool))

    def test_frames_never_valid_pixel_stays_fill(self):
        frames = np.ones((3, 2, 2), dtype=np.float32)
        mask = np.ones((3, 2, 2), dtype=bool)
        frames[:, 0, 0] = 0.0
        mask[:, 0, 0] = False
        out = gapfill_frames(frames, mask)
        assert np.all(out[:, 0, 0] == 0.0)
        assert np.all(out[:, 1, 1] == 1.0)


class TestPersistence:
    def test_roundtrip_bit_exact(self, small_cube, tmp_path):
        path = tmp_path / "cube.mcb"
        save_minicube(small_cube, path)
        loaded = load_minicube(path)
        for name in ("ndvi", "drivers", "topography", "landcover", "mask"):
            a, b = getattr(small_cube, name), getattr(loaded, name)
            assert a.tobytes() == b.tobytes(), name
        assert (loaded.n, loaded.k) == (small_cube.n, small_cube.k)

    def test_sample_id_independent_of_directory(self, small_cube, tmp_path):
        # the train/val split hashes sample_id, so relocating a dataset
        # must not change the id a cube loads with
        for sub in ("here", "there"):
            d = tmp_path / sub
            d.mkdir()
            save_minicube(small_cube, d / "cube_00000.mcb")
        a = load_minicube(tmp_path / "here" / "cube_00000.mcb")
        b = load_minicube(tmp_path / "there" / "cube_00000.mcb")
        assert a.sample_id == b.sample_id == "cube_00000.mcb"

    def test_bad_magic(self, small_cube, tmp_path):
        path = tmp_path / "cube.mcb"
        save_minicube(small_cube, path)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"XXXX"
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="magic"):
            load_minicube(path)

    def test_truncated(self, small_cube, tmp_path):
        path = tmp_path / "cube.mcb"
        save_minicube(small_cube, path)
        raw = path.read_bytes()
        path.write_bytes(raw[:-17])
        with pytest.raises(FormatError, match="truncated"):
            load_minicube(path)

    def test_single_byte_corruption_detected(self, small_cube, tmp_path):
        path = tmp_path / "cube.mcb"
        save_minicube(small_cube, path)
        raw = bytearray(path.read_bytes())
        raw[100] ^= 0x40
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="checksum"):
            load_minicube(path)


class TestForecastConfig:
    def test_defaults_valid(self):
        cfg = ForecastConfig().validate()
        assert cfg.n == 12 and cfg.k == 4

    def test_full_profile(self):
        cfg = ForecastConfig.profile("full")
        assert (cfg.n, cfg.k, cfg.H) == (36, 9, 128)
        assert cfg.lr == pytest.approx(1e-6)
        assert cfg.batch_size == 32 and cfg.epochs == 150

    def test_even_kernel_rejected(self):
        with pytest.raises(ConfigError):
            ForecastConfig(kernel_size=4).validate()

    def test_from_file_rejects_unknown_keys(self, tmp_path):
        path = tmp_path / "cfg.txt"
        path.write_text("n=8\nbogus_key=1\n")
        with pytest.raises(ConfigError, match="bogus_key"):
            ForecastConfig.from_file(path)

    def test_from_file(self, tmp_path):
        path = tmp_path / "cfg.txt"
        path.write_text("# comment\nn=8\nk=2\nH=16\nW=16\nhidden_channels=4\n"
                        "ablate_weather=true\n")
        cfg = ForecastConfig.from_file(path)
        assert cfg.n == 8 and cfg.k == 2 and cfg.ablate_weather
