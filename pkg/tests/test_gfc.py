import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from forecastgrapher import tensor as T
from forecastgrapher.gfc import (
    ConvParams,
    GFCLayerParams,
    aggregate,
    gcn_variant_forward,
    gfc_forward,
    group_conv,
    group_sizes,
    init_layer,
    mlp,
    partition_groups,
    plain_gcn_forward,
)
from forecastgrapher.gradcheck import check_gradients
from forecastgrapher.tensor import ConfigError, Parameter, ShapeError, Tensor


def _identity_kernel(c):
    k = np.zeros((1, c, c))
    k[0] = np.eye(c)
    return ConvParams(Parameter(k), Parameter(np.zeros(c)))


def _layer(n, d, z, g, ks, seed=0):
    return init_layer("gfc", n, d, z, g, list(ks), 2, np.random.default_rng(seed), "t.")


@pytest.mark.parametrize("z,g,sizes", [(8, 4, [2, 2, 2, 2]), (9, 4, [3, 2, 2, 2]), (32, 4, [8, 8, 8, 8]),
                                       (5, 1, [5]), (5, 5, [1] * 5)])
def test_group_sizes(z, g, sizes):
    assert group_sizes(z, g) == sizes


def test_group_sizes_errors():
    with pytest.raises(ConfigError):
        group_sizes(3, 4)
    with pytest.raises(ConfigError):
        group_sizes(3, 0)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 2**31 - 1))
def test_partition_roundtrip(z, g, seed):
    if g > z:
        return
    h = Tensor(np.random.default_rng(seed).normal(size=(2, z, 3, 4)))
    parts = partition_groups(h, g)
    sizes = [p.shape[-3] for p in parts]
    assert sum(sizes) == z
    base, rem = divmod(z, g)
    assert sizes == [base + rem] + [base] * (g - 1)
    np.testing.assert_array_equal(T.concat(parts, axis=-3).data, h.data)


def test_group_conv_unit_kernel_is_relu(rng):
    x = rng.normal(size=(3, 4, 6))
    conv = _identity_kernel(3)
    np.testing.assert_array_equal(group_conv(Tensor(x), conv.kernel, conv.bias).data, np.maximum(x, 0))


def test_group_conv_shift():
    x = np.array([[[1.0, -2.0, 3.0, 4.0]]])  # one channel, one node
    k = np.zeros((2, 1, 1))
    k[1, 0, 0] = 1.0
    out = group_conv(Tensor(x), Tensor(k), Tensor(np.zeros(1))).data
    np.testing.assert_array_equal(out, [[[0.0, 3.0, 4.0, 1.0]]])


def test_group_conv_per_node_oracle(rng):
    c, n, d, k = 2, 3, 5, 3
    x = rng.normal(size=(c, n, d))
    w, b = rng.normal(size=(k, c, c)), rng.normal(size=c)
    out = group_conv(Tensor(x), Tensor(w), Tensor(b)).data
    ref = np.zeros_like(x)
    for node in range(n):
        for i in range(c):
            for a in range(d):
                acc = b[i]
                for j in range(c):
                    for beta in range(k):
                        acc += x[j, node, (a + beta) % d] * w[beta, i, j]
                ref[i, node, a] = max(acc, 0.0)
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_group_conv_channel_mismatch():
    with pytest.raises(ShapeError):
        group_conv(Tensor(np.zeros((2, 3, 4))), Tensor(np.zeros((1, 3, 3))), Tensor(np.zeros(3)))


def test_aggregate_examples(rng):
    t = rng.normal(size=(2, 3, 4))
    np.testing.assert_array_equal(aggregate(Tensor(np.eye(3)), Tensor(t)).data, t)
    mean = aggregate(Tensor(np.full((3, 3), 1 / 3)), Tensor(t)).data
    np.testing.assert_allclose(mean, np.broadcast_to(t.mean(axis=1, keepdims=True), t.shape), atol=1e-12)
    swap = aggregate(Tensor([[0.0, 1.0], [1.0, 0.0]]), Tensor(t[:, :2])).data
    np.testing.assert_array_equal(swap, t[:, [1, 0]])


def test_g1_is_mlp_only(rng):
    p = _layer(3, 4, 2, 1, [])
    h = Tensor(rng.normal(size=(2, 3, 4)))
    a = Tensor(rng.dirichlet(np.ones(3), size=3))
    np.testing.assert_allclose(gfc_forward(h, p, a).data, mlp(h, p).data, atol=1e-12)


def test_identity_composition(rng):
    z, n, d = 6, 3, 5
    p = GFCLayerParams(None, [_identity_kernel(2), _identity_kernel(2)])  # no MLP: linear bypass mode
    h = rng.normal(size=(z, n, d))
    out = gfc_forward(Tensor(h), p, Tensor(np.eye(n))).data
    np.testing.assert_array_equal(out[:2], h[:2])
    np.testing.assert_array_equal(out[2:], np.maximum(h[2:], 0))


def test_gcn_variant_matches_under_identity(rng):
    p = _layer(4, 6, 6, 3, [3, 5], seed=2)
    h = Tensor(rng.normal(size=(2, 6, 4, 6)))
    a = Tensor(np.eye(4))
    np.testing.assert_allclose(gcn_variant_forward(h, p, a).data, gfc_forward(h, p, a).data, atol=1e-12)


def test_gcn_variant_collapses_group1_under_uniform(rng):
    n = 4
    p = GFCLayerParams(None, [_identity_kernel(2)])
    h = Tensor(rng.normal(size=(4, n, 5)))
    a = Tensor(np.full((n, n), 1 / n))
    collapsed = gcn_variant_forward(h, p, a).data[:2]
    np.testing.assert_allclose(collapsed, np.broadcast_to(collapsed[:, :1], collapsed.shape), atol=1e-12)
    kept = gfc_forward(h, p, a).data[:2]
    np.testing.assert_array_equal(kept, h.data[:2])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_permutation_equivariance(seed):
    rng = np.random.default_rng(seed)
    n, d = 5, 6
    p = _layer(n, d, 7, 3, [2, 3], seed=seed % 1000)
    h = rng.normal(size=(7, n, d))
    a = rng.dirichlet(np.ones(n), size=n)
    perm = rng.permutation(n)
    pm = np.eye(n)[perm]
    out = gfc_forward(Tensor(h), p, Tensor(a)).data
    out_p = gfc_forward(Tensor(h[:, perm]), p, Tensor(pm @ a @ pm.T)).data
    np.testing.assert_allclose(out_p, out[:, perm], atol=1e-10)


def test_group1_locality(rng):
    n, d = 4, 5
    p = GFCLayerParams(None, [_identity_kernel(2)])
    h = rng.normal(size=(4, n, d))
    a = Tensor(rng.dirichlet(np.ones(n), size=n))
    base = gfc_forward(Tensor(h), p, a).data
    h2 = h.copy()
    h2[:2, 1] += 1.0
    diff = gfc_forward(Tensor(h2), p, a).data - base
    changed = np.abs(diff[:2]).sum(axis=(0, 2)) > 0
    assert changed.tolist() == [False, True, False, False]
    np.testing.assert_array_equal(diff[2:], 0)


def test_plain_gcn_examples(rng):
    h = rng.normal(size=(2, 3, 4))
    np.testing.assert_array_equal(plain_gcn_forward(Tensor(h), Tensor(np.eye(3)), Tensor(np.eye(4))).data,
                                  np.maximum(h, 0))
    np.testing.assert_array_equal(plain_gcn_forward(Tensor(h), Tensor(np.eye(3)), Tensor(np.zeros((4, 4)))).data, 0)
    a, w = rng.normal(size=(3, 3)), rng.normal(size=(4, 4))
    ref = np.stack([np.maximum(a @ h[c] @ w, 0) for c in range(2)])
    np.testing.assert_allclose(plain_gcn_forward(Tensor(h), Tensor(a), Tensor(w)).data, ref, atol=1e-12)


@pytest.mark.parametrize("z,g,ks", [(8, 4, [3, 5, 7]), (9, 4, [3, 5, 7]), (4, 2, [3])])
def test_shape_preserved(rng, z, g, ks):
    p = _layer(3, 8, z, g, ks)
    h = Tensor(rng.normal(size=(2, z, 3, 8)))
    assert gfc_forward(h, p, Tensor(np.eye(3))).shape == h.shape
    assert gcn_variant_forward(h, p, Tensor(np.eye(3))).shape == h.shape


def test_init_layer_errors():
    with pytest.raises(ConfigError):
        _layer(3, 8, 8, 4, [3, 5])
    with pytest.raises(ConfigError):
        _layer(3, 4, 4, 2, [5])


def test_layer_gradients(rng):
    p = _layer(3, 6, 6, 3, [3, 5], seed=7)
    h = Parameter(rng.normal(size=(2, 6, 3, 6)), "h")
    a = Tensor(rng.dirichlet(np.ones(3), size=3))
    target = rng.normal(size=h.shape)
    loss = lambda: T.tsum(T.square(gfc_forward(h, p, a) - target))
    records = check_gradients(loss, p.parameters() + [h], 25, rng)
    assert all(r.ok(1e-4) for r in records), records
