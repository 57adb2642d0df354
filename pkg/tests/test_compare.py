from fractions import Fraction

import numpy as np
import pytest

from imsbinary.binning import BinGrid
from imsbinary.compare import jaccard_distance, pairwise_jaccard
from imsbinary.dipps import FeatureSet
from imsbinary.errors import ContractError

GRID = BinGrid(1000, 4500, 0.25)


def fs(indices, name="", grid=GRID):
    return FeatureSet.from_indices(indices, grid, name)


def oracle(a, b):
    a, b = set(a), set(b)
    if not a | b:
        return 0.0
    return float(1 - Fraction(len(a & b), len(a | b)))


def test_examples():
    s = fs([4001, 4002, 4010])
    assert jaccard_distance(s, s) == 0.0
    assert jaccard_distance(fs([1, 2]), fs([3, 4])) == 1.0
    assert jaccard_distance(fs([1, 2]), fs([2, 3])) == 2 / 3
    assert jaccard_distance(fs([]), fs([])) == 0.0
    assert jaccard_distance(fs([]), fs([7])) == 1.0
    assert jaccard_distance({1, 2}, {2, 3}) == 2 / 3


def test_grid_mismatch():
    with pytest.raises(ContractError):
        jaccard_distance(fs([1]), fs([1], grid=BinGrid(1000, 4500, 0.5)))
    with pytest.raises(ContractError):
        jaccard_distance(fs([1]), fs([1], grid=BinGrid(1000, 4500, 0.25, 0.125)))


def test_pairwise_against_oracle(rng):
    sets = [set(rng.choice(40, int(rng.integers(0, 20)), replace=False).tolist()) for _ in range(9)]
    m = pairwise_jaccard([fs(s, f"d{i}") for i, s in enumerate(sets)])
    assert m.labels == [f"d{i}" for i in range(9)]
    for i in range(9):
        for j in range(9):
            assert m.values[i, j] == oracle(sets[i], sets[j])


def test_metric_laws(rng):
    for _ in range(300):
        a, b, c = (set(rng.choice(12, int(rng.integers(0, 8)), replace=False).tolist()) for _ in range(3))
        dab = jaccard_distance(a, b)
        assert 0 <= dab <= 1
        assert dab == jaccard_distance(b, a)
        assert (dab == 0) == (a == b)
        assert dab <= jaccard_distance(a, c) + jaccard_distance(c, b) + 1e-12


def test_pairwise_needs_two():
    with pytest.raises(ContractError):
        pairwise_jaccard([fs([1])])


def test_rows_format():
    m = pairwise_jaccard([fs([1, 2], "A"), fs([2, 3], "B")])
    assert m.rows() == [["A", "0.0000", "0.6667"], ["B", "0.6667", "0.0000"]]
    assert np.array_equal(m.values, m.values.T)
