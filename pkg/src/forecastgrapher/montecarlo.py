"""Monte Carlo experiments on aggregator collapse and GFC distribution shift.

Two questions are simulated:

* whether a weighted-mean aggregator can tell apart node classes whose
  features share a mean but not a variance (it cannot), and
* how a scaled, circularly padded 1-D convolution followed by ReLU moves
  the output distribution as the input variance, kernel length and
  scalers change.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .gfc import gfc_forward, init_layer, plain_gcn_forward
from .tensor import ConfigError, Tensor

CHUNK = 20_000
HIST_BINS = 60


@dataclass
class McConfig:
    mu: float = 1.0
    sigma: float = 1.0
    kernel_len: int = 2
    channels: int = 2
    spatial_extent: int = 32
    scalers: list[float] = field(default_factory=lambda: [-0.25, 0.25])
    weight_mu: float = 0.0
    weight_sigma: float = 1.0
    n_samples: int = 100_000
    seed: int = 0

    def __post_init__(self):
        self.scalers = [float(s) for s in self.scalers]
        if self.sigma <= 0 or self.weight_sigma <= 0:
            raise ConfigError("sigma and weight_sigma must be positive")
        if self.n_samples < 1000:
            raise ConfigError(f"n_samples must be >= 1000, got {self.n_samples}")
        if len(self.scalers) != self.channels:
            raise ConfigError(f"need one scaler per channel ({self.channels}), got {len(self.scalers)}")
        if not 1 <= self.kernel_len <= self.spatial_extent:
            raise ConfigError("kernel_len must lie in [1, spatial_extent]")


# Two reference parameterizations for the shift experiment; in N(mu, v) the second argument is a variance.
SHIFT_CONFIG_A = dict(mu=1.0, sigma=1.0, kernel_len=2, channels=2, scalers=[-0.25, 0.25])
SHIFT_CONFIG_B = dict(mu=1.0, sigma=1.0, kernel_len=3, channels=2, scalers=[2.0, 2.5])


@dataclass
class McSummary:
    empirical_mean: float
    empirical_std: float
    standard_error: float
    n_samples: int
    bin_edges: np.ndarray
    counts: np.ndarray
    metadata: dict = field(default_factory=dict)

    @classmethod
    def from_samples(cls, samples: np.ndarray, bins: int = HIST_BINS, **metadata) -> "McSummary":
        samples = np.asarray(samples, dtype=np.float64)
        n = samples.size
        std = float(samples.std(ddof=1))
        lo, hi = float(samples.min()), float(samples.max())
        if hi <= lo:
            hi = lo + 1.0
        counts, edges = np.histogram(samples, bins=bins, range=(lo, hi))
        return cls(float(samples.mean()), std, std / math.sqrt(n), n, edges, counts, metadata)


def separation(a: McSummary, b: McSummary) -> float:
    """Difference of means in units of the combined standard error."""
    se = np.hypot(a.standard_error, b.standard_error)
    return abs(a.empirical_mean - b.empirical_mean) / se


# ---------------------------------------------------------------------------
# mean-aggregator collapse


def simulate_collapse(mu: float, sigma_i: float, sigma_j: float, n_nodes_per_class: int = 100,
                      n_samples: int = 100_000, seed: int = 0, mu_j: float | None = None):
    """Class-mean difference of mean-aggregated outputs and its standard error.

    Every draw builds a graph whose nodes link, with unit edge weight, to all
    nodes of their own class (self-loops included) and applies
    ``h'_k = (1 / d_k) sum_n a_nk h_n``. The statistic is the aggregated
    feature averaged over each class; the standard error combines both
    classes' across-draw variances.
    """
    mu_j = mu if mu_j is None else mu_j
    n = n_nodes_per_class
    rng = np.random.default_rng(seed)
    # block adjacency, rows normalized by degree
    a = np.kron(np.eye(2), np.ones((n, n)))
    a = a / a.sum(axis=1, keepdims=True)
    out_i, out_j = [], []
    for lo in range(0, n_samples, CHUNK):
        m = min(CHUNK, n_samples - lo)
        feats = np.concatenate([rng.normal(mu, sigma_i, (m, n)), rng.normal(mu_j, sigma_j, (m, n))], axis=1)
        agg = feats @ a.T
        out_i.append(agg[:, :n].mean(axis=1))
        out_j.append(agg[:, n:].mean(axis=1))
    out_i, out_j = np.concatenate(out_i), np.concatenate(out_j)
    diff = abs(out_i.mean() - out_j.mean())
    se = np.sqrt(out_i.var(ddof=1) / n_samples + out_j.var(ddof=1) / n_samples)
    return float(diff), float(se)


# ---------------------------------------------------------------------------
# convolution distribution shift


def simulate_gfc_shift(cfg: McConfig) -> McSummary:
    """Distribution of one output coordinate of ReLU(scaled circular conv).

    Per draw: a base feature row ``h(alpha) ~ N(mu, sigma^2)`` over the spatial
    extent, channel j set to ``s_j * h``, a fresh kernel with entries
    ``N(weight_mu, weight_sigma^2)``, and the output at channel 0, position 0.
    """
    rng = np.random.default_rng(cfg.seed)
    s = np.asarray(cfg.scalers)[:, None]
    k, c, d = cfg.kernel_len, cfg.channels, cfg.spatial_extent
    samples = []
    for lo in range(0, cfg.n_samples, CHUNK):
        m = min(CHUNK, cfg.n_samples - lo)
        base = rng.normal(cfg.mu, cfg.sigma, (m, 1, d))
        x = base * s  # (m, C, D)
        w = rng.normal(cfg.weight_mu, cfg.weight_sigma, (m, k, c, c))
        out = np.maximum(T.circular_conv(x, w), 0.0)
        samples.append(out[:, 0, 0])
    return McSummary.from_samples(np.concatenate(samples), **asdict(cfg))


def emit_histogram(summary: McSummary, path) -> None:
    """CSV with ``bin_left,bin_right,count`` rows and the summary as trailing comments."""
    edges, counts = summary.bin_edges, summary.counts
    with open(path, "w") as fh:
        fh.write("bin_left,bin_right,count\n")
        for left, right, count in zip(edges[:-1], edges[1:], counts):
            fh.write(f"{float(left)!r},{float(right)!r},{int(count)}\n")
        fh.write(f"# empirical_mean={float(summary.empirical_mean)!r}\n")
        fh.write(f"# empirical_std={float(summary.empirical_std)!r}\n")
        fh.write(f"# standard_error={float(summary.standard_error)!r}\n")
        fh.write(f"# n_samples={summary.n_samples}\n")
        fh.write(f"# metadata={json.dumps(summary.metadata, sort_keys=True)}\n")


def read_histogram(path) -> tuple[np.ndarray, np.ndarray, dict]:
    edges, counts, meta = [], [], {}
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "bin_left,bin_right,count":
            raise ValueError(f"{path}: unexpected header {header!r}")
        for line in fh:
            line = line.strip()
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                meta[key] = json.loads(value) if key == "metadata" else float(value)
                continue
            left, right, count = line.split(",")
            if not edges:
                edges.append(float(left))
            edges.append(float(right))
            counts.append(int(count))
    return np.array(edges), np.array(counts), meta


# ---------------------------------------------------------------------------
# layer-level separation


@dataclass
class LayerSeparation:
    mean_a: float
    mean_b: float
    standard_error: float

    @property
    def z(self) -> float:
        return abs(self.mean_a - self.mean_b) / self.standard_error if self.standard_error > 0 else np.inf


def layer_separation(kind: str, mu: float = 1.0, sigma_a: float = 1.0, sigma_b: float = 3.0,
                     nodes_per_class: int = 8, embed_dim: int = 16, z: int = 4, groups: int = 2,
                     kernel_lengths=(3,), n_draws: int = 4000, seed: int = 0) -> LayerSeparation:
    """Push two node populations through one real graph layer with frozen random weights.

    Node features of class a are ``N(mu, sigma_a^2)``, class b ``N(mu, sigma_b^2)``;
    every node is expanded over ``z`` scaler channels (evenly spaced in
    [0.2, 1]) and the layer aggregates with the uniform adjacency ``1/N``.
    ``kind`` is ``"gfc"`` or ``"plain_gcn"``. The statistic per draw is the
    layer output averaged over each class's nodes, channels and features.
    """
    n = 2 * nodes_per_class
    rng = np.random.default_rng(seed)
    layer = init_layer("plain_gcn" if kind == "plain_gcn" else "gfc", n, embed_dim, z, groups,
                       list(kernel_lengths), 1, rng, "mc.", adaptive=False)
    a = Tensor(np.full((n, n), 1.0 / n))
    scalers = np.linspace(0.2, 1.0, z)[:, None, None]
    stats_a, stats_b = [], []
    with T.no_grad():
        for lo in range(0, n_draws, 500):
            m = min(500, n_draws - lo)
            feats = np.concatenate([
                rng.normal(mu, sigma_a, (m, nodes_per_class, embed_dim)),
                rng.normal(mu, sigma_b, (m, nodes_per_class, embed_dim)),
            ], axis=1)
            h = Tensor(feats[:, None, :, :] * scalers)
            if kind == "gfc":
                out = gfc_forward(h, layer, a).data
            elif kind == "plain_gcn":
                out = plain_gcn_forward(h, a, layer.gcn_w).data
            else:
                raise ConfigError(f"unknown layer kind {kind!r}")
            stats_a.append(out[:, :, :nodes_per_class].mean(axis=(1, 2, 3)))
            stats_b.append(out[:, :, nodes_per_class:].mean(axis=(1, 2, 3)))
    sa, sb = np.concatenate(stats_a), np.concatenate(stats_b)
    se = float(np.sqrt(sa.var(ddof=1) / sa.size + sb.var(ddof=1) / sb.size))
    return LayerSeparation(float(sa.mean()), float(sb.mean()), se)
