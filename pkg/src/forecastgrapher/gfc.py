"""Group Feature Convolution (GFC) graph layers and the GCN comparison layers.

Hidden states are laid out ``(..., z, N, D)``: scaler channels, nodes,
features. Groups are contiguous runs of scaler channels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .graph import AdjacencyFactors
from .tensor import ConfigError, Parameter, ShapeError, Tensor


def group_sizes(z: int, groups: int) -> list[int]:
    """Channel count per group; the remainder of z / G goes to the first group."""
    if groups < 1 or groups > z:
        raise ConfigError(f"need 1 <= groups <= z, got groups={groups}, z={z}")
    base, rem = divmod(z, groups)
    return [base + rem] + [base] * (groups - 1)


def partition_groups(h: Tensor, groups: int) -> list[Tensor]:
    return T.split(h, group_sizes(h.shape[-3], groups), axis=-3)


@dataclass
class ConvParams:
    kernel: Parameter  # (k, C, C)
    bias: Parameter  # (C,)


@dataclass
class GFCLayerParams:
    factors: AdjacencyFactors | None
    convs: list[ConvParams] = field(default_factory=list)  # groups 2..G
    mlp_w1: Parameter | None = None
    mlp_b1: Parameter | None = None
    mlp_w2: Parameter | None = None
    mlp_b2: Parameter | None = None
    gcn_w: Parameter | None = None  # plain GCN layers only

    def parameters(self) -> list[Parameter]:
        out = [] if self.factors is None else self.factors.parameters()
        for conv in self.convs:
            out += [conv.kernel, conv.bias]
        for p in (self.mlp_w1, self.mlp_b1, self.mlp_w2, self.mlp_b2, self.gcn_w):
            if p is not None:
                out.append(p)
        return out


def init_layer(variant: str, n_nodes: int, embed_dim: int, z: int, groups: int,
               kernel_lengths, factor_dim: int, rng: np.random.Generator, prefix: str,
               adaptive: bool = True, dtype=np.float64) -> GFCLayerParams:
    factors = AdjacencyFactors.init(n_nodes, factor_dim, rng, f"{prefix}adj.", dtype) if adaptive else None
    d = embed_dim
    bound = 1.0 / np.sqrt(d)
    if variant == "plain_gcn":
        w = Parameter(rng.uniform(-bound, bound, (d, d)), f"{prefix}gcn_w", dtype=dtype)
        return GFCLayerParams(factors, gcn_w=w)
    sizes = group_sizes(z, groups)
    if len(kernel_lengths) != groups - 1:
        raise ConfigError(f"kernel_lengths needs {groups - 1} entries, got {len(kernel_lengths)}")
    convs = []
    for g, (k, c) in enumerate(zip(kernel_lengths, sizes[1:]), start=2):
        if k > d:
            raise ConfigError(f"kernel length {k} exceeds embed_dim {d}")
        kb = 1.0 / np.sqrt(k * c)
        convs.append(ConvParams(
            Parameter(rng.uniform(-kb, kb, (k, c, c)), f"{prefix}conv{g}.kernel", dtype=dtype),
            Parameter(np.zeros(c), f"{prefix}conv{g}.bias", dtype=dtype),
        ))
    return GFCLayerParams(
        factors, convs,
        mlp_w1=Parameter(rng.uniform(-bound, bound, (d, d)), f"{prefix}mlp.w1", dtype=dtype),
        mlp_b1=Parameter(np.zeros(d), f"{prefix}mlp.b1", dtype=dtype),
        mlp_w2=Parameter(rng.uniform(-bound, bound, (d, d)), f"{prefix}mlp.w2", dtype=dtype),
        mlp_b2=Parameter(np.zeros(d), f"{prefix}mlp.b2", dtype=dtype),
    )


def group_conv(group: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """Per-node circular convolution over features, channels = the group's scalers, then ReLU."""
    if group.shape[-3] != kernel.shape[-1]:
        raise ShapeError(f"group has {group.shape[-3]} channels, kernel expects {kernel.shape[-1]}")
    per_node = group.swapaxes(-3, -2)  # (..., N, C, D)
    out = T.conv1d_circular(per_node, kernel, bias)
    return T.relu(out).swapaxes(-3, -2)


def aggregate(a: Tensor, t: Tensor) -> Tensor:
    """Mix nodes: V[c] = A @ t[c] for every channel."""
    return T.matmul(a, t)


def mlp(h: Tensor, p: GFCLayerParams) -> Tensor:
    # a layer built without MLP weights passes features through unchanged
    if p.mlp_w1 is None:
        return h
    return T.relu(h @ p.mlp_w1 + p.mlp_b1) @ p.mlp_w2 + p.mlp_b2


def gfc_forward(h: Tensor, p: GFCLayerParams, a: Tensor) -> Tensor:
    """GFC layer: group 1 bypasses; groups 2..G are convolved then aggregated; a shared MLP fuses."""
    groups = partition_groups(h, len(p.convs) + 1)
    parts = [groups[0]]
    for grp, conv in zip(groups[1:], p.convs):
        parts.append(aggregate(a, group_conv(grp, conv.kernel, conv.bias)))
    return mlp(T.concat(parts, axis=-3) if len(parts) > 1 else parts[0], p)


def gcn_variant_forward(h: Tensor, p: GFCLayerParams, a: Tensor) -> Tensor:
    """As :func:`gfc_forward` but group 1 is aggregated too (no bypass)."""
    groups = partition_groups(h, len(p.convs) + 1)
    parts = [aggregate(a, groups[0])]
    for grp, conv in zip(groups[1:], p.convs):
        parts.append(aggregate(a, group_conv(grp, conv.kernel, conv.bias)))
    return mlp(T.concat(parts, axis=-3) if len(parts) > 1 else parts[0], p)


def plain_gcn_forward(h: Tensor, a: Tensor, w: Tensor) -> Tensor:
    """Ungrouped GCN layer relu(A h[c] W)."""
    return T.relu(T.matmul(aggregate(a, h), w))


def layer_forward(variant: str, h: Tensor, p: GFCLayerParams, a: Tensor) -> Tensor:
    if variant == "gfc":
        return gfc_forward(h, p, a)
    if variant == "gcn_gfc":
        return gcn_variant_forward(h, p, a)
    if variant == "plain_gcn":
        return plain_gcn_forward(h, a, p.gcn_w)
    raise ConfigError(f"unknown variant {variant!r}")
