import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seldiv.datasets import (
    POINTS2D,
    ConditionedDataset,
    condition_key,
    group_by_condition,
    make_synthetic_2d,
)
from seldiv.diversity import (
    DiversityTable,
    build_table,
    load_table,
    lookup,
    raw_diversity,
    save_table,
)
from seldiv.errors import InvalidArgumentError, MissingConditionError, StateError


def brute_force_diversity(samples):
    """Loop-by-loop evaluation: sum over coordinates of population std."""
    n = len(samples)
    flat = [np.asarray(s, dtype=float).ravel().tolist() for s in samples]
    total = 0.0
    for j in range(len(flat[0])):
        mu = sum(f[j] for f in flat) / n
        total += math.sqrt(sum((f[j] - mu) ** 2 for f in flat) / n)
    return total


def test_identical_group_is_zero():
    assert raw_diversity([np.full((3, 3), 7.0)] * 4) == 0.0


def test_two_pixel_example():
    assert raw_diversity([np.array([[0.0]]), np.array([[2.0]])]) == pytest.approx(1.0)


def test_matches_brute_force_on_random_groups():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = rng.integers(1, 8)
        shape = tuple(rng.integers(1, 5, size=rng.integers(1, 3)))
        group = rng.normal(size=(n,) + shape) * rng.uniform(0.1, 10)
        assert abs(raw_diversity(group) - brute_force_diversity(group)) <= 1e-9
        assert abs(raw_diversity(list(group)) - brute_force_diversity(group)) <= 1e-9


def test_rejects_empty_and_mixed_shapes():
    with pytest.raises(InvalidArgumentError):
        raw_diversity([])
    with pytest.raises(InvalidArgumentError):
        raw_diversity([np.zeros(2), np.zeros(3)])


groups = st.integers(2, 6).flatmap(
    lambda n: st.lists(
        st.lists(st.integers(-50, 50), min_size=4, max_size=4), min_size=n, max_size=n
    )
)


@settings(max_examples=60, deadline=None)
@given(groups, st.integers(0, 8))
def test_scale_equivariance(group, alpha):
    # integer data and power-of-two scales keep the arithmetic exact
    g = np.array(group, dtype=float)
    a = float(2 ** alpha)
    assert raw_diversity(a * g) == a * raw_diversity(g)


@settings(max_examples=60, deadline=None)
@given(groups, st.integers(-1000, 1000))
def test_translation_invariance(group, shift):
    g = np.array(group, dtype=float) / 4
    assert raw_diversity(g + shift) == pytest.approx(raw_diversity(g), rel=1e-12, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(groups, st.floats(1.0, 20.0))
def test_dispersion_monotone(group, beta):
    g = np.array(group, dtype=float)
    mu = g.mean(axis=0)
    assert raw_diversity(mu + beta * (g - mu)) == pytest.approx(beta * raw_diversity(g), rel=1e-9, abs=1e-9)


def _dataset(values_by_condition):
    conds, samples = [], []
    for c, vals in values_by_condition.items():
        for v in vals:
            conds.append([c, 0.0])
            samples.append([v, 0.0])
    ds = ConditionedDataset(POINTS2D, np.array(conds, float), np.array(samples, np.float32))
    return group_by_condition(ds)


def test_build_table_min_max():
    # raw = std of first coordinate: {1, 3} -> 1 ; {0, 6} -> 3 ... scaled by 2 below
    ds = _dataset({1: [0, 4], 2: [0, 12]})
    table = build_table(ds)
    raws = sorted(table.raw.values())
    assert raws == [2.0, 6.0]
    assert table.normalized[condition_key([1, 0])] == 0.0
    assert table.normalized[condition_key([2, 0])] == 1.0
    assert table.stats == (2.0, 6.0)


def test_single_condition_normalizes_to_one():
    table = build_table(_dataset({3: [1, 2, 5]}))
    assert list(table.normalized.values()) == [1.0]


def test_singleton_group_has_zero_raw():
    table = build_table(_dataset({1: [5], 2: [0, 2]}))
    assert table.raw[condition_key([1, 0])] == 0.0
    assert table.normalized[condition_key([1, 0])] == 0.0


def test_ungrouped_dataset_rejected():
    ds = ConditionedDataset(POINTS2D, np.zeros((2, 2)), np.zeros((2, 2), np.float32))
    with pytest.raises(StateError):
        build_table(ds)


def test_synthetic_table_separates_spread():
    ds = make_synthetic_2d(500, seed=0)
    table = build_table(ds)
    for cls in range(1, 10):
        assert lookup(table, [cls, 1.0]) > 0.9
        assert lookup(table, [cls, 0.0]) < 0.1
    values = list(table.normalized.values())
    assert min(values) == 0.0 and max(values) == 1.0
    assert table.stats[0] <= table.stats[1]
    assert set(table.raw) == set(table.normalized)


def test_lookup_contract():
    table = build_table(make_synthetic_2d(20, seed=0))
    v = lookup(table, [4, 1.0])
    assert 0.0 <= v <= 1.0
    assert lookup(table, [4, 1.0]) == v
    with pytest.raises(MissingConditionError):
        lookup(table, [4, 0.5])


def test_table_file_roundtrip(tmp_path):
    table = build_table(make_synthetic_2d(20, seed=0))
    save_table(table, tmp_path / "t.json")
    back = load_table(tmp_path / "t.json")
    assert back == table
    assert isinstance(back, DiversityTable)
