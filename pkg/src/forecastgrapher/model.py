"""The full forecaster: embedding, scaler expansion, stacked graph layers, residual head."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import tensor as T
from .embedding import EmbeddingParams, expand_scalers, embed, init_scalers, instance_normalize
from .gfc import GFCLayerParams, group_sizes, init_layer, layer_forward
from .graph import adjacency
from .tensor import ConfigError, Parameter, ShapeError, Tensor

VARIANTS = ("gfc", "gcn_gfc", "plain_gcn")


@dataclass
class ModelConfig:
    n_nodes: int
    input_len: int = 96
    output_len: int = 96
    embed_dim: int = 128
    layers: int = 2
    scalers: int = 32
    groups: int = 4
    kernel_lengths: list[int] = field(default_factory=lambda: [3, 5, 7])
    factor_dim: int = 10
    variant: str = "gfc"
    use_variate: bool = True
    use_hid: bool = True
    use_diw: bool = True
    instance_norm: bool = True
    global_standardize: bool = True
    adjacency: str = "adaptive"  # or "static"
    dtype: str = "float64"
    seed: int = 0

    def __post_init__(self):
        self.kernel_lengths = [int(k) for k in self.kernel_lengths]
        self.validate()

    def validate(self) -> None:
        for name in ("n_nodes", "input_len", "output_len", "embed_dim", "scalers", "groups", "factor_dim"):
            if int(getattr(self, name)) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.layers < 0:
            raise ConfigError(f"layers must be non-negative, got {self.layers}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.adjacency not in ("adaptive", "static"):
            raise ConfigError(f"adjacency must be 'adaptive' or 'static', got {self.adjacency!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.variant != "plain_gcn":
            group_sizes(self.scalers, self.groups)
            if len(self.kernel_lengths) != self.groups - 1:
                raise ConfigError(
                    f"kernel_lengths needs groups-1={self.groups - 1} entries, got {len(self.kernel_lengths)}")
        for k in self.kernel_lengths:
            if k <= 0 or k > self.embed_dim:
                raise ConfigError(f"kernel_lengths entry {k} must lie in [1, embed_dim={self.embed_dim}]")

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config key(s): {', '.join(sorted(unknown))}")
        return cls(**d)

    def fingerprint(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass
class ModelParams:
    embedding: EmbeddingParams
    scalers: Parameter
    layers: list[GFCLayerParams]
    w_concat: Parameter
    w_reg: Parameter
    b_reg: Parameter
    static_adjacency: np.ndarray | None = None

    def parameters(self) -> list[Parameter]:
        out = self.embedding.parameters() + [self.scalers]
        for layer in self.layers:
            out += layer.parameters()
        out += [self.w_concat, self.w_reg, self.b_reg]
        return out

    def trainable(self) -> list[Parameter]:
        return [p for p in self.parameters() if p.trainable]

    def named(self) -> dict[str, Parameter]:
        named = {}
        for p in self.parameters():
            if p.name in named:
                raise ConfigError(f"parameter {p.name!r} registered twice")
            named[p.name] = p
        return named

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()


def init_params(cfg: ModelConfig, static_adjacency: np.ndarray | None = None) -> ModelParams:
    """Deterministic initialization from ``cfg.seed``."""
    cfg.validate()
    if cfg.adjacency == "static":
        if static_adjacency is None:
            raise ConfigError("adjacency='static' requires a static adjacency matrix")
        static_adjacency = np.asarray(static_adjacency, dtype=np.float64)
        if static_adjacency.shape != (cfg.n_nodes, cfg.n_nodes):
            raise ConfigError(f"static adjacency must be {cfg.n_nodes}x{cfg.n_nodes}")
    rng = np.random.default_rng(cfg.seed)
    dt = cfg.np_dtype
    emb = EmbeddingParams.init(cfg.n_nodes, cfg.input_len, cfg.embed_dim, rng, cfg.use_variate,
                               cfg.use_hid, cfg.use_diw, dtype=dt)
    layers = [
        init_layer(cfg.variant, cfg.n_nodes, cfg.embed_dim, cfg.scalers, cfg.groups, cfg.kernel_lengths,
                   cfg.factor_dim, rng, f"layer{i}.", adaptive=cfg.adjacency == "adaptive", dtype=dt)
        for i in range(cfg.layers)
    ]
    bound = 1.0 / np.sqrt(cfg.embed_dim)
    return ModelParams(
        embedding=emb,
        scalers=init_scalers(cfg.scalers, dtype=dt),
        layers=layers,
        w_concat=Parameter(np.full(cfg.scalers, 1.0 / cfg.scalers), "w_concat", dtype=dt),
        w_reg=Parameter(rng.uniform(-bound, bound, (cfg.embed_dim, cfg.output_len)), "w_reg", dtype=dt),
        b_reg=Parameter(np.zeros(cfg.output_len), "b_reg", dtype=dt),
        static_adjacency=static_adjacency if cfg.adjacency == "static" else None,
    )


def layer_adjacency(params: ModelParams, layer: int) -> Tensor:
    p = params.layers[layer]
    if p.factors is None:
        return Tensor(params.static_adjacency.astype(params.w_reg.dtype))
    return adjacency(p.factors)


def forward(x, hid, diw, params: ModelParams, cfg: ModelConfig) -> Tensor:
    """Forecast ``(N, S)`` from ``x`` of shape ``(N, h)``, or ``(B, N, S)`` from ``(B, N, h)``."""
    x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=cfg.np_dtype)
    if x.ndim not in (2, 3) or x.shape[-2:] != (cfg.n_nodes, cfg.input_len):
        raise ShapeError(f"embedding stage: input shape {x.shape} does not end with "
                         f"(N={cfg.n_nodes}, h={cfg.input_len})")
    x_in, stats = instance_normalize(x, cfg.instance_norm)
    h0 = embed(Tensor(x_in), hid, diw, params.embedding)
    hidden = expand_scalers(h0, params.scalers)
    for i, layer in enumerate(params.layers):
        hidden = layer_forward(cfg.variant, hidden, layer, layer_adjacency(params, i))
    z = cfg.scalers
    contracted = (hidden * params.w_concat.reshape((z, 1, 1))).sum(axis=-3)
    h_last = h0 + contracted
    y = h_last @ params.w_reg + params.b_reg
    if cfg.instance_norm:
        y = stats.denormalize(y)
    return y


def param_count(cfg: ModelConfig) -> int:
    """Closed-form count of trainable scalars."""
    n, h, s, d, z, c = cfg.n_nodes, cfg.input_len, cfg.output_len, cfg.embed_dim, cfg.scalers, cfg.factor_dim
    total = h * d + d
    total += n * d if cfg.use_variate else 0
    total += 24 * d if cfg.use_hid else 0
    total += 7 * d if cfg.use_diw else 0
    total += z  # scalers
    total += z + d * s + s  # w_concat, head
    per_layer = 2 * n * c if cfg.adjacency == "adaptive" else 0
    if cfg.variant == "plain_gcn":
        per_layer += d * d
    else:
        sizes = group_sizes(z, cfg.groups)
        per_layer += sum(k * cg * cg + cg for k, cg in zip(cfg.kernel_lengths, sizes[1:]))
        per_layer += 2 * (d * d + d)
    return total + cfg.layers * per_layer


def trainable_count(params: ModelParams) -> int:
    return int(sum(p.data.size for p in params.trainable()))


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, params: ModelParams, cfg: ModelConfig, extra: dict | None = None) -> None:
    arrays = {f"param/{name}": p.data for name, p in params.named().items()}
    if params.static_adjacency is not None:
        arrays["static_adjacency"] = params.static_adjacency
    meta = {"config": cfg.to_dict(), "extra": extra or {}}
    arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> tuple[ModelParams, ModelConfig, dict]:
    path = Path(path)
    with np.load(path, allow_pickle=False) as npz:
        meta = json.loads(npz["meta"].tobytes().decode())
        cfg = ModelConfig.from_dict(meta["config"])
        static = npz["static_adjacency"] if "static_adjacency" in npz.files else None
        params = init_params(cfg, static_adjacency=static)
        named = params.named()
        stored = {k[len("param/"):] for k in npz.files if k.startswith("param/")}
        if stored != set(named):
            raise ConfigError(f"{path}: checkpoint parameters do not match config")
        for name, p in named.items():
            arr = npz[f"param/{name}"]
            if arr.shape != p.shape:
                raise ConfigError(f"{path}: {name} has shape {arr.shape}, expected {p.shape}")
            p.data = arr.copy()
    return params, cfg, meta.get("extra", {})
