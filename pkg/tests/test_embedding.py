import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from forecastgrapher import tensor as T
from forecastgrapher.embedding import (
    EmbeddingParams,
    embed,
    expand_scalers,
    init_scalers,
    instance_normalize,
)
from forecastgrapher.gradcheck import check_gradients
from forecastgrapher.tensor import Parameter, Tensor


def _params(n, h, d, seed=0, **kw):
    rng = np.random.default_rng(seed)
    p = EmbeddingParams.init(n, h, d, rng, **kw)
    for t in (p.linear_b, p.variate_table, p.hid_table, p.diw_table):
        t.data = rng.normal(size=t.shape)
    return p


def test_instance_normalize_hand_values():
    xn, stats = instance_normalize(np.array([[1.0, 2.0, 3.0]]))
    np.testing.assert_allclose(stats.mean, [[2.0]])
    np.testing.assert_allclose(stats.std, [[0.8165]], atol=1e-4)
    np.testing.assert_allclose(xn, [[-1.2247, 0.0, 1.2247]], atol=1e-4)


def test_instance_normalize_disabled_and_constant():
    x = np.array([[1.0, 5.0, 2.0]])
    xn, stats = instance_normalize(x, enabled=False)
    np.testing.assert_array_equal(xn, x)
    assert stats.mean.item() == 0.0 and stats.std.item() == 1.0
    np.testing.assert_array_equal(instance_normalize(np.full((2, 4), 7.0))[0], np.zeros((2, 4)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_instance_normalize_roundtrip(seed):
    x = np.random.default_rng(seed).normal(3, 4, size=(2, 3, 10))
    xn, stats = instance_normalize(x)
    np.testing.assert_allclose(stats.denormalize(Tensor(xn)).data, x, atol=1e-10)


def test_embed_zero_params():
    p = EmbeddingParams.init(3, 4, 5, np.random.default_rng(0))
    p.linear_w.data[:] = 0
    out = embed(np.ones((3, 4)), 2, 3, p)
    np.testing.assert_array_equal(out.data, np.zeros((3, 5)))


def test_embed_hand_value():
    p = EmbeddingParams.init(1, 2, 1, np.random.default_rng(0))
    p.linear_w.data = np.array([[3.0], [4.0]])
    p.linear_b.data = np.array([0.5])
    np.testing.assert_array_equal(embed(np.array([[1.0, 2.0]]), 0, 0, p).data, [[11.5]])


def test_embed_variate_isolation():
    p = _params(3, 4, 3, use_hid=False, use_diw=False)
    p.linear_w.data[:] = 0
    p.linear_b.data[:] = 0
    p.variate_table.data = np.eye(3)
    np.testing.assert_array_equal(embed(np.zeros((3, 4)), 5, 5, p).data, np.eye(3))


def test_embed_loop_oracle_batched():
    n, h, d = 3, 5, 4
    p = _params(n, h, d, seed=3)
    rng = np.random.default_rng(9)
    x = rng.normal(size=(2, n, h))
    hid, diw = np.array([4, 23]), np.array([0, 6])
    out = embed(x, hid, diw, p).data
    for b in range(2):
        for i in range(n):
            ref = x[b, i] @ p.linear_w.data + p.linear_b.data + p.variate_table.data[i]
            ref = ref + p.hid_table.data[hid[b]] + p.diw_table.data[diw[b]]
            np.testing.assert_allclose(out[b, i], ref, atol=1e-12)


@pytest.mark.parametrize("term", ["variate", "hid", "diw"])
def test_embed_additive_terms(term):
    p = _params(3, 4, 5, seed=1)
    x = np.random.default_rng(2).normal(size=(3, 4))
    full = embed(x, 7, 2, p).data
    table = {"variate": p.variate_table, "hid": p.hid_table, "diw": p.diw_table}[term]
    index = {"variate": slice(None), "hid": 7, "diw": 2}[term]
    contribution = table.data[index]
    table.data = np.zeros_like(table.data)
    np.testing.assert_allclose(full - embed(x, 7, 2, p).data, np.broadcast_to(contribution, full.shape), atol=1e-12)


def test_disabled_table_equals_term_removed():
    x = np.random.default_rng(2).normal(size=(3, 4))
    on = _params(3, 4, 5, seed=1)
    off = _params(3, 4, 5, seed=1, use_hid=False)
    assert not off.hid_table.trainable
    on.hid_table.data[:] = 0
    np.testing.assert_allclose(embed(x, 7, 2, off).data, embed(x, 7, 2, on).data, atol=1e-12)


def test_embed_calendar_index_errors():
    p = _params(2, 3, 2)
    with pytest.raises(IndexError):
        embed(np.zeros((2, 3)), 24, 0, p)
    with pytest.raises(IndexError):
        embed(np.zeros((2, 3)), 0, 7, p)


def test_embed_gradients(rng):
    p = _params(3, 4, 5, seed=4)
    x = rng.normal(size=(2, 3, 4))
    target = rng.normal(size=(2, 3, 5))
    loss = lambda: T.tsum(T.square(embed(x, [1, 1], [3, 0], p) - target))
    records = check_gradients(loss, p.parameters(), 20, rng)
    assert all(r.ok(1e-4) for r in records), records


def test_init_scalers_even_spacing():
    np.testing.assert_allclose(init_scalers(5).data, [0.2, 0.4, 0.6, 0.8, 1.0])
    np.testing.assert_array_equal(init_scalers(1).data, [1.0])


def test_expand_scalers_examples():
    h0 = Tensor(np.arange(6.0).reshape(2, 3))
    np.testing.assert_array_equal(expand_scalers(h0, Tensor([1.0])).data[0], h0.data)
    out = expand_scalers(h0, Tensor([0.0, 2.0])).data
    np.testing.assert_array_equal(out[0], 0)
    np.testing.assert_array_equal(out[1], 2 * h0.data)


def test_expand_scalers_gradient_is_sum_h0(rng):
    h0 = rng.normal(size=(3, 4))
    s = Parameter(rng.normal(size=5))
    expand_scalers(Tensor(h0), s).sum().backward()
    np.testing.assert_allclose(s.grad, np.full(5, h0.sum()), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_expand_then_contract_is_linear(z, seed):
    rng = np.random.default_rng(seed)
    h0, s, w = rng.normal(size=(2, 3, 4)), rng.normal(size=z), rng.normal(size=z)
    out = (expand_scalers(Tensor(h0), Tensor(s)) * Tensor(w.reshape(z, 1, 1))).sum(axis=-3).data
    np.testing.assert_allclose(out, (s @ w) * h0, atol=1e-10)
