import numpy as np
import pytest

from greencast.configio import ConfigError
from greencast.fileio import read_manifest
from greencast.minicube import NONVEG_CLASSES
from greencast.synthgen import (GeneratorConfig, generate_dataset,
                                generate_minicube, splitmix64)


def test_deterministic_per_sample():
    cfg = GeneratorConfig(seed=9, H=16, W=16, n=6, k=3, p_cloud=0.3, p_miss=0.4)
    a = generate_minicube(cfg, 5)
    b = generate_minicube(cfg, 5)
    assert a.ndvi.tobytes() == b.ndvi.tobytes()
    assert a.mask.tobytes() == b.mask.tobytes()
    assert a.drivers.tobytes() == b.drivers.tobytes()


def test_different_samples_differ():
    cfg = GeneratorConfig(seed=9, H=16, W=16, n=6, k=3)
    a = generate_minicube(cfg, 0)
    b = generate_minicube(cfg, 1)
    assert a.ndvi.tobytes() != b.ndvi.tobytes()


def test_zero_precip_dry_start_flat_zero():
    cfg = GeneratorConfig(seed=2, H=16, W=16, n=6, k=3, precip_amp=0.0,
                          soil_init=0.0, obs_noise=0.0, p_cloud=0.0)
    cube = generate_minicube(cfg, 0)
    assert np.all(cube.ndvi == 0.0)
    assert np.all(cube.drivers[:, 2] == 0.0)  # soil driver stays empty


def test_no_clouds_mask_is_vegetation_map():
    cfg = GeneratorConfig(seed=4, H=16, W=16, n=6, k=3, p_cloud=0.0,
                          nonveg_fraction=0.5)
    cube = generate_minicube(cfg, 0)
    veg = ~np.isin(cube.landcover, list(NONVEG_CLASSES))
    for t in range(cube.ttot):
        np.testing.assert_array_equal(cube.mask[t], veg)


def test_value_ranges():
    cfg = GeneratorConfig(seed=6, H=16, W=16, n=12, k=4, p_cloud=0.4,
                          p_miss=0.5)
    for i in range(5):
        cube = generate_minicube(cfg, i)
        assert np.all(np.isfinite(cube.ndvi))
        assert np.all(cube.ndvi >= -1) and np.all(cube.ndvi <= 1)
        assert np.all(cube.drivers[:, 2] >= 0) and np.all(cube.drivers[:, 2] <= 1)


def test_weather_informative_correlation():
    # pooled correlation between target-window NDVI and the soil driver
    cfg = GeneratorConfig(seed=1, H=16, W=16, n=12, k=4, season_length=12)
    xs, ys = [], []
    for i in range(50):
        cube = generate_minicube(cfg, i)
        soil = cube.drivers[cube.n:, 2]
        for t in range(cube.k):
            valid = cube.mask[cube.n + t]
            vals = cube.ndvi[cube.n + t][valid]
            xs.append(vals)
            ys.append(np.full(vals.size, soil[t]))
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    r = np.corrcoef(x, y)[0, 1]
    assert r > 0.5, f"weather barely informative: pooled r={r:.3f}"


def test_undetected_clouds_depress_observed_mean():
    base = dict(seed=3, H=16, W=16, n=12, k=4, p_cloud=0.5)
    dirty = GeneratorConfig(p_miss=0.9, **base)
    clean = GeneratorConfig(p_miss=0.0, **base)
    dirty_means, clean_means = [], []
    for i in range(20):
        c_dirty = generate_minicube(dirty, i)
        c_clean = generate_minicube(clean, i)
        dirty_means.append(c_dirty.ndvi[c_dirty.mask].mean())
        clean_means.append(c_clean.ndvi[c_clean.mask].mean())
    assert np.mean(dirty_means) < np.mean(clean_means)


def test_masked_fraction_tracks_cloud_rate():
    # clouds cover on average 1/4 of the frame; detected fraction is
    # p_cloud * (1 - p_miss) / 4 of the vegetation pixels
    cfg = GeneratorConfig(seed=8, H=32, W=32, n=12, k=4, p_cloud=0.8,
                          p_miss=0.0, nonveg_fraction=0.0)
    fracs = []
    for i in range(50):
        cube = generate_minicube(cfg, i)
        veg_total = cube.ttot * cube.grid[0] * cube.grid[1]
        fracs.append(1.0 - cube.mask.sum() / veg_total)
    expected = 0.8 / 4
    assert abs(np.mean(fracs) - expected) < 0.02


def test_invalid_configs_rejected():
    with pytest.raises(ConfigError):
        GeneratorConfig(p_cloud=1.5).validate()
    with pytest.raises(ConfigError):
        GeneratorConfig(ndvi_lag=0.0).validate()
    with pytest.raises(ConfigError):
        GeneratorConfig(c_max=-1.0).validate()


def test_config_file_rejects_unknown_keys(tmp_path):
    path = tmp_path / "gen.txt"
    path.write_text("seed=3\nwhatever=1\n")
    with pytest.raises(ConfigError, match="whatever"):
        GeneratorConfig.from_file(path)


class TestGenerateDataset:
    def test_manifest_lists_all(self, tmp_path):
        cfg = GeneratorConfig(seed=1, H=16, W=16, n=6, k=3)
        man = generate_dataset(cfg, 10, tmp_path / "ds")
        assert len(read_manifest(man)) == 10

    def test_subset_regeneration_identical(self, tmp_path):
        cfg = GeneratorConfig(seed=1, H=16, W=16, n=6, k=3)
        man = generate_dataset(cfg, 9, tmp_path / "full")
        batch7 = (tmp_path / "full" / "cube_00007.mcb").read_bytes()
        solo = generate_minicube(cfg, 7)
        from greencast.minicube import save_minicube
        save_minicube(solo, tmp_path / "solo.mcb")
        assert (tmp_path / "solo.mcb").read_bytes() == batch7

    def test_seed_changes_output(self, tmp_path):
        a = GeneratorConfig(seed=1, H=16, W=16, n=6, k=3)
        b = GeneratorConfig(seed=2, H=16, W=16, n=6, k=3)
        generate_dataset(a, 1, tmp_path / "a")
        generate_dataset(b, 1, tmp_path / "b")
        assert (tmp_path / "a" / "cube_00000.mcb").read_bytes() != \
            (tmp_path / "b" / "cube_00000.mcb").read_bytes()

    def test_zero_count_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            generate_dataset(GeneratorConfig(), 0, tmp_path / "x")


def test_splitmix64_stable():
    assert splitmix64(0) == splitmix64(0)
    assert splitmix64(1) != splitmix64(2)
