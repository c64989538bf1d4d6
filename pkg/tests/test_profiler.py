import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.isotonic import IsotonicRegression

from latebind.core import PercentileGrid, ResourceGrid
from latebind.profiler import (
    LatencyProfile,
    LatencySamples,
    ProfileError,
    chain_profiles,
    extract_profile,
    pava_decreasing,
    read_profiles,
    read_samples,
    resilience,
    resilience_surface,
    timeout,
    timeout_surface,
    write_profiles,
    write_samples,
)

from oracles import nearest_rank_percentile

SMALL = ResourceGrid(1000, 2000, 500)
PG = PercentileGrid((1, 50, 99), 99)


def _samples(fn, by_size):
    s = LatencySamples(fn, 1)
    for k, vals in by_size.items():
        for v in vals:
            s.add(k, v)
    return s


def test_nearest_rank_example():
    vals = list(range(100, 10_001, 100))
    s = _samples("f", {k: vals for k in SMALL.sizes})
    prof = extract_profile(s, SMALL, PG)
    assert prof.latency(50, 1000) == 5000
    assert prof.latency(99, 1000) == 9900
    assert prof.latency(1, 1000) == 100


def test_constant_samples():
    s = _samples("f", {k: [7] * 100 for k in SMALL.sizes})
    prof = extract_profile(s, SMALL, PG)
    assert (prof.surface == 7).all()
    assert (timeout_surface(prof) == 0).all()
    assert (resilience_surface(prof) == 0).all()


def test_isotonic_correction_example():
    # raw P50 at 1500 exceeds P50 at 1000
    by = {1000: [400] * 100, 1500: [500] * 100, 2000: [300] * 100}
    prof = extract_profile(_samples("f", by), SMALL, PG)
    assert prof.latency(50, 1500) <= prof.latency(50, 1000)
    assert prof.surface[1].tolist() == [450, 450, 300]


@given(st.lists(st.floats(1, 1e5, allow_nan=False), min_size=1, max_size=40))
def test_pava_matches_sklearn(y):
    ours = pava_decreasing(y)
    ref = IsotonicRegression(increasing=False).fit_transform(np.arange(len(y)), y)
    np.testing.assert_allclose(ours, ref, rtol=1e-9, atol=1e-6)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_extract_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    by = {k: rng.integers(1, 1000, size=100).tolist() for k in SMALL.sizes}
    prof = extract_profile(_samples("f", by), SMALL, PG)
    for i, p in enumerate(PG.values):
        raw = [nearest_rank_percentile(by[k], p) for k in SMALL.sizes]
        fit = IsotonicRegression(increasing=False).fit_transform(np.arange(len(raw)), raw)
        assert prof.surface[i].tolist() == np.floor(fit + 0.5).astype(int).tolist()


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_surface_monotone(seed):
    rng = np.random.default_rng(seed)
    grid = ResourceGrid(1000, 1400, 100)
    pg = PercentileGrid.stepped(1, 99, 7)
    by = {k: (rng.lognormal(5, 0.5, size=120) * (2000 / k) ** rng.uniform(-0.3, 1)).tolist() for k in grid.sizes}
    prof = extract_profile(_samples("f", by), grid, pg)
    s = prof.surface
    assert (np.diff(s, axis=0) >= 0).all()  # percentile
    assert (np.diff(s, axis=1) <= 0).all()  # size


def test_metric_examples():
    surface = np.array([[400, 350, 300], [900, 700, 500]])
    prof = LatencyProfile("f", 1, PercentileGrid((50, 99)), SMALL, surface)
    assert timeout(prof, 50, 1000) == 500
    assert timeout(prof, 99, 1500) == 0
    assert resilience(prof, 99, 1000) == 400
    assert resilience(prof, 50, 2000) == 0


def test_constant_in_k_has_no_resilience():
    prof = LatencyProfile("f", 1, PG, SMALL, np.array([[1] * 3, [5] * 3, [9] * 3]))
    assert (resilience_surface(prof) == 0).all()


def test_missing_size_and_too_few_samples():
    with pytest.raises(ProfileError, match="no samples at 2000"):
        extract_profile(_samples("f", {1000: [1] * 100, 1500: [1] * 100}), SMALL, PG)
    with pytest.raises(ProfileError, match="99 samples at 1000"):
        extract_profile(_samples("f", {k: [1] * (99 if k == 1000 else 100) for k in SMALL.sizes}), SMALL, PG)


def test_sample_csv_round_trip(tmp_path):
    s = _samples("f", {k: [1.5, 2, 3] for k in SMALL.sizes})
    path = tmp_path / "s.csv"
    write_samples(path, [s])
    back = read_samples(path)
    assert back[("f", 1)].by_size == s.by_size


def test_profile_csv_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    by = {k: rng.integers(1, 500, 100).tolist() for k in SMALL.sizes}
    prof = extract_profile(_samples("g", by), SMALL, PG)
    path = tmp_path / "p.csv"
    write_profiles(path, [prof])
    assert read_profiles(path)[("g", 1)] == prof


@pytest.mark.parametrize("text, needle", [
    ("", "no samples"),
    ("function,batch,millicores,latency_ms\n", "no samples"),
    ("function,batch,batch,latency_ms\nf,1,1,1\n", "line 1: duplicate column"),
    ("function,batch,millicores,latency_ms\nf,1,1000\n", "line 2"),
    ("function,batch,millicores,latency_ms\nf,1,1000,1\nf,x,1000,1\n", "line 3"),
    ("function,batch,millicores,latency_ms\nf,1,1000,-4\n", "line 2"),
])
def test_read_samples_errors(tmp_path, text, needle):
    path = tmp_path / "s.csv"
    path.write_text(text)
    with pytest.raises(ProfileError, match=needle):
        read_samples(path)


def test_chain_profiles_missing():
    prof = LatencyProfile("a", 1, PG, SMALL, np.ones((3, 3)))
    assert chain_profiles({("a", 1): prof}, ["a"], 1) == [prof]
    with pytest.raises(ProfileError, match="'b'"):
        chain_profiles({("a", 1): prof}, ["a", "b"], 1)


def test_scaled_rounds_up():
    prof = LatencyProfile("a", 1, PG, SMALL, np.full((3, 3), 3))
    assert (prof.scaled(1.5).surface == 5).all()
