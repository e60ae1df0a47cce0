"""Command-line experiment runner.

Subcommands: ``synth``, ``build-graph``, ``train``, ``sweep-missing``,
``evaluate``. Experiments are described by a JSON config file (see
``ExperimentConfig``); a handful of flags override its fields.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import pipeline as pl
from .data import (
    GENERATOR,
    ParseError,
    generate_synthetic,
    load_csv_dataset,
    write_csv_dataset,
    write_splits,
)
from .experiment import (
    METHODS,
    ExperimentConfig,
    build_graph,
    build_train_graph,
    load_dataset,
    run_trials,
    sweep_missing,
)
from .graph import write_edgelist
from .metrics import MetricsReport, evaluate_probs
from .nn import UsageError

log = logging.getLogger("gkd")


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _dump(obj, path: Path):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _run_info(out: Path):
    _dump({"started": time.strftime("%Y-%m-%dT%H:%M:%S"), "version": __version__,
           "rng": GENERATOR}, out / "run_info.json")


def load_config(args) -> ExperimentConfig:
    raw = json.loads(Path(args.config).read_text()) if args.config else {}
    if getattr(args, "methods", None):
        raw["methods"] = args.methods.split(",")
    if getattr(args, "seeds", None):
        raw["seeds"] = _ints(args.seeds)
    if getattr(args, "workers", None):
        raw["workers"] = args.workers
    if getattr(args, "alphas", None):
        raw["alphas"] = _floats(args.alphas)
    if getattr(args, "epochs", None):
        raw.setdefault("grid", {})["epochs"] = args.epochs
    return ExperimentConfig.from_dict(raw)


# --------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    ds = generate_synthetic(args.n, args.d_node, args.d_graph, args.class_sep, args.p_missing,
                            args.seed, args.n_informative)
    paths = write_csv_dataset(ds, args.out)
    _dump(ds.meta, Path(args.out) / "synth_meta.json")
    for name, p in paths.items():
        print(f"{name}: {p}")
    return 0


def cmd_build_graph(args) -> int:
    cfg = load_config(args)
    ds = load_dataset(cfg)
    g = build_graph(ds, cfg.graph)
    write_edgelist(g, args.out)
    print(f"wrote {g!r} to {args.out}")
    return 0


def _run_method(cfg: ExperimentConfig, method: str, out: Path, ds, graph) -> MetricsReport:
    report, models = run_trials(cfg, method, ds=ds, graph=graph, return_models=True)
    logs = out / "logs"
    logs.mkdir(exist_ok=True)
    for seed, metrics, sel in zip(report.seeds, report.per_seed, report.selected):
        _dump({"method": method, "seed": seed, "metrics": metrics, "selected": sel},
              logs / f"{method}_seed{seed}.json")
    _dump(report.to_dict(), out / f"report_{method}.json")
    if models:
        best_seed = max(report.seeds, key=lambda s: report.selected[report.seeds.index(s)]
                        ["val_accuracy"])
        pl.save_model(models[best_seed], out / f"model_{method}.gkd",
                      {"method": method, "seed": best_seed})
    return report


def _write_csv(rows: list[dict], path: Path):
    if not rows:
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def _print_table(rows):
    for r in rows:
        print("  ".join(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}"
                        for k, v in r.items()))


def cmd_train(args) -> int:
    cfg = load_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _dump(cfg.to_dict(), out / "config.json")
    _run_info(out)
    ds = load_dataset(cfg)
    write_splits(ds.splits, out / "splits.csv")
    graph = None
    if any(m in ("gkd", "gcn") for m in cfg.methods):
        graph = build_train_graph(ds, cfg.graph)
    rows, ok = [], True
    for method in cfg.methods:
        report = _run_method(cfg, method, out, ds, graph)
        ok &= not report.failed
        rows.extend(report.csv_rows())
        agg = report.aggregate()
        print(f"{method}: " + "  ".join(
            f"{k} {v['mean']:.4f} ± {v['std']:.4f}" for k, v in agg.items()))
    _write_csv(rows, out / "reports.csv")
    return 0 if ok else 1


def cmd_sweep(args) -> int:
    cfg = load_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _dump(cfg.to_dict(), out / "config.json")
    _run_info(out)
    result = sweep_missing(cfg, _floats(args.p_list))
    _dump(result, out / "sweep.json")
    _write_csv(result["table"], out / "sweep.csv")
    _print_table(result["table"])
    ok = all(not c["report"]["failed"] for c in result["cells"])
    return 0 if ok else 1


def cmd_evaluate(args) -> int:
    model, meta = pl.load_model(args.model)
    if args.use_graph_features and not args.graph_features:
        raise UsageError("--use-graph-features needs --graph-features")
    gf = args.graph_features if args.use_graph_features else None
    ds = load_csv_dataset(args.features, args.labels, gf, args.splits)
    rows = ds.splits.test if (ds.splits is not None and not args.all_rows) else np.ones(ds.n, bool)
    X = ds.X[rows]
    if isinstance(model, pl.GKDModel):
        probs = pl.predict(model, X)
    elif isinstance(model, pl.JFCModel):
        G = ds.graph_features[rows] if args.use_graph_features else None
        probs = pl.predict_jfc(model, X, G)
    else:
        probs = pl.predict_proba(model, X)
    metrics = evaluate_probs(probs, ds.labels[rows])
    result = {"model": str(args.model), "method": meta.get("method"), "rows": int(rows.sum()),
              "metrics": metrics}
    text = json.dumps(result, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gkd", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic multi-modal dataset as CSV files")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--n", type=int, default=2000)
    s.add_argument("--d-node", type=int, default=128)
    s.add_argument("--d-graph", type=int, default=4)
    s.add_argument("--class-sep", type=float, default=1.0)
    s.add_argument("--p-missing", type=float, default=0.0)
    s.add_argument("--n-informative", type=int, default=8)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    def experiment_flags(q):
        q.add_argument("--config", help="JSON experiment config (defaults if omitted)")
        q.add_argument("--methods", help=f"comma list from {','.join(METHODS)}")
        q.add_argument("--seeds", help="comma list of initialization seeds")
        q.add_argument("--alphas", help="comma list of LPA alpha candidates")
        q.add_argument("--epochs", type=int, help="training epochs per model")
        q.add_argument("--workers", type=int, help="parallel seed workers")

    b = sub.add_parser("build-graph", help="build the population graph and write an edge list")
    experiment_flags(b)
    b.add_argument("--out", required=True, help="edge-list output path")
    b.set_defaults(func=cmd_build_graph)

    t = sub.add_parser("train", help="grid search on validation, multi-seed test evaluation")
    experiment_flags(t)
    t.add_argument("--out", required=True, help="output directory")
    t.set_defaults(func=cmd_train)

    w = sub.add_parser("sweep-missing", help="repeat training over graph-feature missing rates")
    experiment_flags(w)
    w.add_argument("--p-list", default="0.0,0.3,0.6,0.9")
    w.add_argument("--out", required=True, help="output directory")
    w.set_defaults(func=cmd_sweep)

    e = sub.add_parser("evaluate", help="score a saved model on CSV data (no graph needed)")
    e.add_argument("--model", required=True)
    e.add_argument("--features", required=True)
    e.add_argument("--labels", required=True)
    e.add_argument("--graph-features",
                   help="only read with --use-graph-features (DNN-JFC); never needed otherwise")
    e.add_argument("--splits", help="optional splits CSV; test rows are scored")
    e.add_argument("--all-rows", action="store_true", help="score every row even with --splits")
    e.add_argument("--use-graph-features", action="store_true",
                   help="DNN-JFC only: feed observed graph features instead of training means")
    e.add_argument("--out", help="write the result JSON here as well")
    e.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ParseError, json.JSONDecodeError) as exc:
        print(f"gkd {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"gkd {args.command}: I/O error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
