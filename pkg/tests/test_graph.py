import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from forecastgrapher.data import DataError
from forecastgrapher.graph import (
    AdjacencyFactors,
    adjacency,
    leading_block,
    load_static_adjacency,
    normalize_rows,
    write_matrix,
)
from forecastgrapher.tensor import Parameter


def _factors(e1, e2):
    return AdjacencyFactors(Parameter(np.asarray(e1, float)), Parameter(np.asarray(e2, float)))


def test_zero_factors_give_uniform():
    a = adjacency(_factors(np.zeros((4, 2)), np.ones((4, 2)))).data
    np.testing.assert_array_equal(a, np.full((4, 4), 0.25))


def test_hand_example():
    a = adjacency(_factors([[1.0], [0.0]], [[1.0], [0.0]])).data
    np.testing.assert_allclose(a[0], [0.7311, 0.2689], atol=1e-4)
    np.testing.assert_array_equal(a[1], [0.5, 0.5])


def test_large_scale_sharpens_to_row_max(rng):
    e1, e2 = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
    pre = np.maximum(e1 @ e2.T, 0)
    sharp = adjacency(_factors(e1 * 1e4, e2)).data
    for i in range(5):
        if pre[i].max() > 0:
            assert sharp[i, np.argmax(pre[i])] > 0.999


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(1, 4), st.floats(0.1, 30), st.integers(0, 2**31 - 1))
def test_rows_are_distributions(n, c, scale, seed):
    rng = np.random.default_rng(seed)
    a = adjacency(_factors(rng.normal(scale=scale, size=(n, c)), rng.normal(size=(n, c)))).data
    assert np.all((a >= 0) & (a <= 1))
    np.testing.assert_allclose(a.sum(axis=1), 1.0, atol=1e-9)


def test_layers_own_independent_factors(rng):
    f1 = AdjacencyFactors.init(4, 2, rng, "l0.")
    f2 = AdjacencyFactors.init(4, 2, rng, "l1.")
    before = adjacency(f2).data.copy()
    f1.e1.data += 5
    np.testing.assert_array_equal(adjacency(f2).data, before)


def test_normalize_rows():
    out = normalize_rows(np.array([[2.0, 2.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 3.0]]))
    np.testing.assert_array_equal(out, [[0.5, 0.5, 0.0], [1 / 3] * 3, [0.0, 0.0, 1.0]])


def test_static_identity(tmp_path):
    path = tmp_path / "a.csv"
    write_matrix(np.eye(3), path)
    np.testing.assert_array_equal(load_static_adjacency(path, 3), np.eye(3))


@pytest.mark.parametrize("text,n", [
    ("1,0\n0,1\n", 3),
    ("1,-1\n0,1\n", 2),
    ("1,0,0\n0,1,0\n", 2),
    ("1,x\n0,1\n", 2),
])
def test_static_load_errors(tmp_path, text, n):
    path = tmp_path / "a.csv"
    path.write_text(text)
    with pytest.raises(DataError):
        load_static_adjacency(path, n)


def test_static_missing_file(tmp_path):
    with pytest.raises(DataError):
        load_static_adjacency(tmp_path / "nope.csv", 2)


def test_export_roundtrip(tmp_path, rng):
    a = adjacency(AdjacencyFactors.init(7, 3, rng)).data
    write_matrix(a, tmp_path / "a.csv")
    np.testing.assert_allclose(load_static_adjacency(tmp_path / "a.csv", 7), a, atol=1e-12, rtol=0)


def test_leading_block():
    a = np.arange(60.0 * 60).reshape(60, 60)
    block = leading_block(a, 50)
    assert block.shape == (50, 50)
    np.testing.assert_array_equal(block, a[:50, :50])
    assert leading_block(a[:5, :5], 50).shape == (5, 5)
