import numpy as np
import pytest
from scipy.stats import ks_2samp

from latebind.core import ConfigError, ResourceGrid
from latebind.workloads import FunctionFamily, generate_samples, parse_family, sample_ratio

GRID = ResourceGrid(1000, 3000, 500)


def test_zero_sigma_reproduces_base_curve():
    fam = FunctionFamily("flat", 50, 450, sigma=0.0, p99_p50=None)
    s = generate_samples(fam, GRID, 100)
    for k in GRID.sizes:
        assert set(s.by_size[k]) == {np.ceil(fam.base(k) - 1e-9)}
    assert sample_ratio(s, 1000) == 1.0


def test_icl_like_ratio_in_band():
    fam = FunctionFamily("icl", 60, 540, p99_p50=1.56)
    for seed in range(5):
        r = sample_ratio(generate_samples(fam, GRID, 200, seed), GRID.k_min)
        assert 1.40 <= r <= 1.72


def test_deterministic_per_seed():
    fam = FunctionFamily("a", 10, 90)
    assert generate_samples(fam, GRID, 100, 3).by_size == generate_samples(fam, GRID, 100, 3).by_size


def test_two_seeds_differ_but_share_distribution():
    fam = FunctionFamily("a", 60, 540, p99_p50=1.46)
    a = generate_samples(fam, GRID, 2000, seed=1)
    b = generate_samples(fam, GRID, 2000, seed=2)
    assert a.by_size[1000] != b.by_size[1000]
    for k in GRID.sizes:
        assert ks_2samp(a.by_size[k], b.by_size[k]).statistic < 0.06


def test_mean_latency_non_increasing_in_size():
    fam = FunctionFamily("a", 100, 900, p99_p50=1.37)
    s = generate_samples(fam, GRID, 500, seed=0)
    means = [np.mean(s.by_size[k]) for k in GRID.sizes]
    assert all(b <= a * 1.02 for a, b in zip(means, means[1:]))
    base = [fam.base(k) for k in GRID.sizes]
    assert all(b <= a for a, b in zip(base, base[1:]))


def test_errors():
    with pytest.raises(ValueError, match="at least 100"):
        generate_samples(FunctionFamily("a", 1, 1), GRID, 99)
    with pytest.raises(ConfigError, match="unreachable"):
        FunctionFamily("a", 1, 1, p99_p50=2.5, cap=4.0)
    with pytest.raises(ConfigError):
        FunctionFamily("a", 0, 0)
    with pytest.raises(ValueError, match="batch"):
        generate_samples(FunctionFamily("a", 1, 1), GRID, 100, batch=2)


def test_batch_scale():
    fam = FunctionFamily("a", 10, 90, sigma=0.0, p99_p50=None, batch_scale={1: 1.0, 2: 1.6})
    one = generate_samples(fam, GRID, 100, batch=1)
    two = generate_samples(fam, GRID, 100, batch=2)
    assert two.by_size[1000][0] == np.ceil(100 * 1.6)
    assert one.by_size[1000][0] == 100


def test_parse_family():
    fam = parse_family({"name": "a", "serial_ms": 5, "parallel_ms": 45, "batch_scale": {"1": 1, "2": 1.5}})
    assert fam.batch_scale == {1: 1.0, 2: 1.5}
    with pytest.raises(ConfigError, match="unknown"):
        parse_family({"name": "a", "serial_ms": 5, "parallel_ms": 45, "shape": 1})
    with pytest.raises(ConfigError, match="parallel_ms"):
        parse_family({"name": "a", "serial_ms": 5})
