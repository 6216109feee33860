"""Command-line entry point: ``forecastgrapher <command> ...``.

Exit codes: 0 success, 1 usage/configuration error, 2 data error,
3 training divergence. Failures print one JSON line on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np
import tomli
from threadpoolctl import threadpool_limits

from . import montecarlo as mc
from . import tensor as T
from .data import DataError, SplitSpec, get_preset, load_csv
from .graph import leading_block, load_static_adjacency, write_matrix
from .model import ModelConfig, layer_adjacency, load_checkpoint, save_checkpoint
from .tensor import ConfigError, ShapeError
from .training import (
    ABLATION_SWITCHES,
    DivergenceError,
    ForecastReport,
    TrainConfig,
    ablation_run,
    evaluate,
    naive_report,
    prepare_data,
    run_experiment,
    write_plot_data,
)

OUT_ENV = "FORECASTGRAPHER_OUT"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3

DATA_KEYS = {"preset", "horizons", "static_adjacency", "split", "standardize"}
SECTIONS = {"data", "model", "train"}

log = logging.getLogger("forecastgrapher")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        _fail(EXIT_USAGE, "UsageError", message)


def _fail(code: int, kind: str, message: str):
    sys.stderr.write(json.dumps({"error": kind, "exit_code": code, "message": message}) + "\n")
    raise SystemExit(code)


# ---------------------------------------------------------------------------
# config files


def load_run_config(path) -> dict:
    """Parse a TOML run config with [data], [model] and [train] sections; unknown keys are rejected."""
    with open(path, "rb") as fh:
        doc = tomli.load(fh)
    unknown = set(doc) - SECTIONS
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")
    data = doc.get("data", {})
    bad = set(data) - DATA_KEYS
    if bad:
        raise ConfigError(f"unknown data config key(s): {', '.join(sorted(bad))}")
    model_keys = {f.name for f in fields(ModelConfig)}
    bad = set(doc.get("model", {})) - model_keys
    if bad:
        raise ConfigError(f"unknown model config key(s): {', '.join(sorted(bad))}")
    train_keys = {f.name for f in fields(TrainConfig)}
    bad = set(doc.get("train", {})) - train_keys
    if bad:
        raise ConfigError(f"unknown train config key(s): {', '.join(sorted(bad))}")
    return {s: dict(doc.get(s, {})) for s in SECTIONS}


def resolve_run(doc: dict, n_nodes: int, n_rows: int, seed: int | None = None):
    """Merge preset defaults with the config file into (ModelConfig, TrainConfig, SplitSpec, standardize, horizons)."""
    data = doc["data"]
    model_kw: dict = {}
    train_kw: dict = {}
    preset = get_preset(data["preset"]) if "preset" in data else None
    h = int(doc["model"].get("input_len", 96))
    if preset is not None:
        model_kw.update(preset.model)
        model_kw.update(instance_norm=preset.instance_norm, global_standardize=preset.global_standardize,
                        use_hid=preset.use_hid, use_diw=preset.use_diw)
        train_kw.update(preset.train)
    model_kw.update(doc["model"])
    train_kw.update(doc["train"])
    model_kw["n_nodes"] = n_nodes
    if seed is not None:
        model_kw["seed"] = seed
        train_kw["shuffle_seed"] = seed
    horizons = [int(s) for s in data.get("horizons", preset.horizons if preset else [model_kw.get("output_len", 96)])]
    model_kw.setdefault("output_len", horizons[0])
    cfg = ModelConfig(**model_kw)
    tcfg = TrainConfig(**train_kw)
    if "split" in data:
        split = SplitSpec(*[int(v) for v in data["split"]], context=h)
    elif preset is not None:
        split = preset.split_spec(n_rows, h)
    else:
        raise ConfigError("config needs data.preset or data.split")
    standardize = bool(data.get("standardize", model_kw.get("global_standardize", True)))
    return cfg, tcfg, split, standardize, horizons


def _out_dir(arg) -> Path:
    out = Path(arg or os.environ.get(OUT_ENV, "runs"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parse_horizons(text):
    if text is None:
        return None
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"horizons must be comma-separated integers, got {text!r}") from None


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    doc = load_run_config(args.config)
    raw = load_csv(args.data)
    cfg, tcfg, split, standardize, horizons = resolve_run(doc, raw.n_variates, len(raw), args.seed)
    if args.horizons:
        horizons = _parse_horizons(args.horizons)
    static = None
    if cfg.adjacency == "static":
        path = doc["data"].get("static_adjacency")
        if not path:
            raise ConfigError("adjacency='static' requires data.static_adjacency")
        static = load_static_adjacency(path, cfg.n_nodes)
    data = prepare_data(raw, split, standardize)
    report, models = run_experiment(cfg, tcfg, data, horizons, static_adjacency=static)
    out = _out_dir(args.out)
    extra = {"split": asdict(split), "standardize": standardize}
    for s, (params, cfg_s) in models.items():
        save_checkpoint(out / f"checkpoint_S{s}.npz", params, cfg_s, extra)
    report.save(out / "report.json")
    (out / "history.json").write_text(json.dumps(report.history, indent=2, sort_keys=True) + "\n")
    print(json.dumps(report.metrics_only(), sort_keys=True))
    return EXIT_OK


def cmd_eval(args) -> int:
    raw = load_csv(args.data)
    rows, out = {}, _out_dir(args.out)
    wanted = _parse_horizons(args.horizons)
    for ckpt in args.checkpoint:
        params, cfg, extra = load_checkpoint(ckpt)
        if wanted and cfg.output_len not in wanted:
            continue
        if raw.n_variates != cfg.n_nodes:
            raise DataError(f"{args.data}: {raw.n_variates} variates, checkpoint expects {cfg.n_nodes}")
        split = SplitSpec(**extra["split"])
        data = prepare_data(raw, split, extra.get("standardize", True))
        rows[cfg.output_len] = evaluate(params, cfg, data, args.split)
        write_plot_data(out / f"plot_S{cfg.output_len}.csv", params, cfg,
                        data.windows(args.split, cfg.input_len, cfg.output_len),
                        node=args.node, max_windows=args.plot_windows)
    if not rows:
        raise UsageError("no checkpoint matched the requested horizons")
    report = ForecastReport.build(rows)
    report.save(out / "eval_report.json")
    print(json.dumps(report.metrics_only(), sort_keys=True))
    return EXIT_OK


def cmd_naive(args) -> int:
    raw = load_csv(args.data)
    preset = get_preset(args.preset)
    horizons = _parse_horizons(args.horizons) or list(preset.horizons)
    h = args.input_len
    data = prepare_data(raw, preset.split_spec(len(raw), h), preset.global_standardize)
    report = naive_report(data, horizons, h=h)
    out = _out_dir(args.out)
    report.save(out / "naive_report.json")
    print(json.dumps(report.metrics_only(), sort_keys=True))
    return EXIT_OK


def cmd_ablate(args) -> int:
    doc = load_run_config(args.config)
    raw = load_csv(args.data)
    cfg, tcfg, split, standardize, horizons = resolve_run(doc, raw.n_variates, len(raw), args.seed)
    if args.horizons:
        horizons = _parse_horizons(args.horizons)
    switches = [s for s in (args.switches or "").split(",") if s]
    static = None
    adj_path = args.static_adjacency or doc["data"].get("static_adjacency")
    if "w/o-adp" in switches:
        if not adj_path:
            raise ConfigError("'w/o-adp' requires --static-adjacency")
        static = load_static_adjacency(adj_path, cfg.n_nodes)
    data = prepare_data(raw, split, standardize)
    result = ablation_run(cfg, tcfg, data, switches, horizons, static_adjacency=static)
    out = _out_dir(args.out)
    table = result.table()
    (out / "ablation.csv").write_text(table)
    sys.stdout.write(table)
    return EXIT_OK


def cmd_mc(args) -> int:
    if args.mode == "collapse":
        diff, se = mc.simulate_collapse(args.mu, args.sigma_i, args.sigma_j, args.nodes_per_class,
                                        args.samples, args.seed, mu_j=args.mu_j)
        result = {"mode": "collapse", "diff_of_means": diff, "standard_error": se,
                  "mu": args.mu, "mu_j": args.mu if args.mu_j is None else args.mu_j,
                  "sigma_i": args.sigma_i, "sigma_j": args.sigma_j,
                  "nodes_per_class": args.nodes_per_class, "n_samples": args.samples, "seed": args.seed}
    else:
        try:
            scalers = [float(s) for s in args.scalers.split(",")]
        except ValueError:
            raise UsageError(f"--scalers must be comma-separated numbers, got {args.scalers!r}") from None
        cfg = mc.McConfig(mu=args.mu, sigma=args.sigma, kernel_len=args.kernel_len, channels=len(scalers),
                          spatial_extent=args.spatial_extent, scalers=scalers, weight_mu=args.weight_mu,
                          weight_sigma=args.weight_sigma, n_samples=args.samples, seed=args.seed)
        summary = mc.simulate_gfc_shift(cfg)
        out = _out_dir(args.out)
        mc.emit_histogram(summary, out / "mc_histogram.csv")
        result = {"mode": "shift", "empirical_mean": summary.empirical_mean,
                  "empirical_std": summary.empirical_std, "standard_error": summary.standard_error,
                  **summary.metadata}
    out = _out_dir(args.out)
    (out / f"mc_{args.mode}.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    print(json.dumps(result, sort_keys=True))
    return EXIT_OK


def cmd_export_adj(args) -> int:
    params, cfg, _ = load_checkpoint(args.checkpoint)
    if not 0 <= args.layer < cfg.layers:
        raise UsageError(f"layer {args.layer} out of range [0, {cfg.layers})")
    with T.no_grad():
        a = layer_adjacency(params, args.layer).data.astype(np.float64)
    if args.top_k:
        a = leading_block(a, args.top_k)
    out = Path(args.out) if args.out else _out_dir(None) / f"adjacency_layer{args.layer}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_matrix(a, out)
    print(str(out))
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="forecastgrapher", description="Graph-based multivariate forecasting toolkit.")
    p.add_argument("--threads", type=int, default=1, help="BLAS thread count (fixed for bit-stable runs)")
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train one model per horizon and report test metrics")
    t.add_argument("--config", required=True, help="TOML run config")
    t.add_argument("--data", required=True, help="CSV with a date column and variate columns")
    t.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./runs)")
    t.add_argument("--seed", type=int, help="override model and shuffle seeds")
    t.add_argument("--horizons", help="comma-separated output lengths")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate saved checkpoints")
    e.add_argument("--checkpoint", required=True, action="append", help="checkpoint file (repeatable)")
    e.add_argument("--data", required=True)
    e.add_argument("--horizons", help="only evaluate checkpoints with these output lengths")
    e.add_argument("--split", default="test", choices=["train", "val", "test"])
    e.add_argument("--node", type=int, default=0, help="node index for plot data")
    e.add_argument("--plot-windows", type=int, default=10, help="windows written to plot data")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    n = sub.add_parser("naive", help="evaluate the repeat-last-24 baseline")
    n.add_argument("--data", required=True)
    n.add_argument("--preset", required=True)
    n.add_argument("--horizons")
    n.add_argument("--input-len", type=int, default=96)
    n.add_argument("--out")
    n.set_defaults(func=cmd_naive)

    a = sub.add_parser("ablate", help="compare the base model with an ablated variant")
    a.add_argument("--config", required=True)
    a.add_argument("--data", required=True)
    a.add_argument("--switches", default="", help=f"comma-separated subset of {','.join(ABLATION_SWITCHES)}")
    a.add_argument("--static-adjacency", help="N x N CSV, required by w/o-adp")
    a.add_argument("--horizons")
    a.add_argument("--seed", type=int)
    a.add_argument("--out")
    a.set_defaults(func=cmd_ablate)

    m = sub.add_parser("mc", help="Monte Carlo collapse / distribution-shift experiments")
    m.add_argument("mode", choices=["collapse", "shift"])
    m.add_argument("--mu", type=float, default=1.0)
    m.add_argument("--mu-j", type=float, help="class-j mean for collapse (default: --mu)")
    m.add_argument("--sigma-i", type=float, default=1.0)
    m.add_argument("--sigma-j", type=float, default=3.0)
    m.add_argument("--nodes-per-class", type=int, default=100)
    m.add_argument("--sigma", type=float, default=1.0, help="input std for shift mode")
    m.add_argument("--kernel-len", type=int, default=2)
    m.add_argument("--scalers", default="-0.25,0.25", help="one scaler per channel")
    m.add_argument("--spatial-extent", type=int, default=32)
    m.add_argument("--weight-mu", type=float, default=0.0)
    m.add_argument("--weight-sigma", type=float, default=1.0)
    m.add_argument("--samples", type=int, default=100_000)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out")
    m.set_defaults(func=cmd_mc)

    x = sub.add_parser("export-adj", help="write a layer's learned adjacency as CSV")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--layer", type=int, default=0)
    x.add_argument("--top-k", type=int, help="keep only the leading k x k block")
    x.add_argument("--out", help="output CSV path")
    x.set_defaults(func=cmd_export_adj)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with threadpool_limits(limits=args.threads):
            return args.func(args)
    except (ConfigError, ShapeError, UsageError, tomli.TOMLDecodeError) as exc:
        _fail(EXIT_USAGE, type(exc).__name__, str(exc))
    except (DataError, FileNotFoundError, IndexError) as exc:
        _fail(EXIT_DATA, type(exc).__name__, str(exc))
    except DivergenceError as exc:
        _fail(EXIT_DIVERGED, type(exc).__name__, str(exc))


if __name__ == "__main__":
    sys.exit(main())
