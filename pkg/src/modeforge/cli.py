"""Command-line entry point: ``modeforge <subcommand>``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from dataclasses import asdict
from pathlib import Path


from .adversarial import GANConfig, NumericalError
from .core import InvalidInputError, read_windows, write_windows
from .evaluation import RunReport, aggregate_runs, dump_json, evaluate_model, format_table
from .ingest import DataError, SplitSpec, TabularSchema, _load_structured, get_profile, make_splits, preprocess, read_tabular_trajectories, split_manifest
from .networks import ConfigError, ModelParams
from .weights import WeightTable, compute_weights

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

SETTINGS = ("lstm", "vanilla", "wl2", "wb", "wl2wb", "cgan-ideal", "selfcond-ideal")


def _config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    return _load_structured(p) or {}


def _windows(path):
    p = Path(path)
    if not p.exists():
        raise DataError(f"window file not found: {p}")
    return read_windows(p)


# ----------------------------------------------------------------- commands


def cmd_preprocess(args) -> int:
    profile = get_profile(args.profile)
    schema = TabularSchema.from_dict(_config(args.schema)) if args.schema else None
    trajs = []
    for f in args.input:
        trajs.extend(read_tabular_trajectories(f, schema))
    windows = preprocess(trajs, profile)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    if args.split_spec is None:
        write_windows(out / "windows.jsonl", windows)
        print(f"wrote {len(windows)} windows to {out / 'windows.jsonl'}")
        return EXIT_OK
    spec_dict = _config(args.split_spec)
    if args.seed is not None:
        spec_dict["seed"] = args.seed
    spec = SplitSpec.from_dict(spec_dict)
    train, val, test = make_splits(windows, spec)
    for name, ws in (("train", train), ("val", val), ("test", test)):
        write_windows(out / f"{name}.jsonl", ws)
    manifest = split_manifest(train, val, test, spec, profile)
    dump_json(manifest, out / "split_manifest.json")
    print(json.dumps(manifest["counts"], indent=2))
    return EXIT_OK


def cmd_synth(args) -> int:
    from .synthetic import BenchmarkSpec, generate_benchmark, load_spec

    spec = load_spec(args.spec) if args.spec else BenchmarkSpec()
    if args.seed is not None:
        spec.seed = args.seed
    windows, manifest = generate_benchmark(spec)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    write_windows(out / "windows.jsonl", windows)
    dump_json(manifest, out / "manifest.json")
    print(f"wrote {len(windows)} windows ({manifest['counts']}) to {out}")
    return EXIT_OK


def cmd_train_selfcond(args) -> int:
    from .experiment import write_epoch_csv
    from .selfcond import SelfCondConfig, intra_cluster_metrics, stats_to_json, train_selfcond
    from .synthetic import mode_recovery_score

    cfg = _config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    cfg = SelfCondConfig.from_dict(cfg)
    windows = _windows(args.data)
    res = train_selfcond(windows, cfg)
    out = Path(args.out_dir)
    ModelParams.from_module(res.G).save(out / "G.npz")
    ModelParams.from_module(res.D).save(out / "D.npz")
    res.clustering.save(out / "clustering.json")
    stats = intra_cluster_metrics(res.G, res.clustering, windows)
    dump_json(stats_to_json(stats), out / "cluster_stats.json")
    write_epoch_csv(res.log.epochs, out / "losses.csv")
    summary = {"config": asdict(cfg), "counts": res.clustering.counts().tolist(), "rounds": res.rounds}
    labels = [w.label for w in windows]
    if len(set(labels)) > 1:
        summary["mode_recovery"] = mode_recovery_score(res.clustering.labels, labels)
    dump_json(summary, out / "summary.json")
    print(f"cluster sizes {summary['counts']}" + (f", mode recovery {summary['mode_recovery']:.3f}" if "mode_recovery" in summary else ""))
    return EXIT_OK


def cmd_grid_search_k(args) -> int:
    from .experiment import grid_search_k
    from .selfcond import SelfCondConfig

    cfg = _config(args.config)
    if args.epochs is not None:
        cfg["epochs"] = args.epochs
    result = grid_search_k(_windows(args.data), _windows(args.val), args.k, SelfCondConfig.from_dict(cfg), args.metric_mode)
    print(result.format())
    print(f"best k = {result.best_k}")
    if args.out:
        dump_json({"best_k": result.best_k, "rows": result.rows}, args.out)
    return EXIT_OK


def cmd_inspect_weights(args) -> int:
    from .selfcond import stats_from_json

    if args.weights:
        table = WeightTable.load(args.weights)
    else:
        if not args.stats:
            raise ConfigError("pass --stats (cluster statistics JSON) or --weights (saved table)")
        stats = stats_from_json(json.loads(Path(args.stats).read_text()))
        table = compute_weights(stats, args.lambda_ade, args.lambda_fde, args.lambda_d)
    print(table.format())
    if args.save:
        table.save(args.save)
    return EXIT_OK


def cmd_train_forecaster(args) -> int:
    from .experiment import write_epoch_csv
    from .forecasting import train_baseline, train_ideal_cgan, train_vanilla_gan

    windows = _windows(args.data)
    base = _config(args.config)
    out_root = Path(args.out_dir)
    table = WeightTable.load(args.weights) if args.weights else None
    ids = json.loads(Path(args.assignments).read_text()) if args.assignments else None
    for seed in args.seeds:
        out = out_root / args.setting / str(seed)
        out.mkdir(parents=True, exist_ok=True)
        if args.setting == "selfcond-ideal":
            if not args.selfcond_dir:
                raise ConfigError("selfcond-ideal evaluates a trained self-conditioned run; pass --selfcond-dir")
            for name in ("G.npz", "D.npz", "clustering.json"):
                shutil.copy(Path(args.selfcond_dir) / name, out / name)
            continue
        cfg = GANConfig(**{**base, "seed": seed})
        if args.setting == "lstm":
            model, log = train_baseline(windows, cfg)
            ModelParams.from_module(model).save(out / "model.npz")
        else:
            if args.setting == "cgan-ideal":
                run = train_ideal_cgan(windows, cfg)
                dump_json(list(run.registry.labels), out / "labels.json")
            else:
                setting = "none" if args.setting == "vanilla" else args.setting
                run = train_vanilla_gan(windows, cfg, setting, table, ids, args.cluster_first)
            ModelParams.from_module(run.G).save(out / "model.npz")
            ModelParams.from_module(run.D).save(out / "D.npz")
            log = run.log
        write_epoch_csv(log.epochs, out / "losses.csv")
        print(f"{args.setting} seed {seed}: {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .clustering import ClusteringState
    from .experiment import _load_module, predictor_from_dir
    from .selfcond import extract_features

    windows = _windows(args.data)
    parts = {}
    if "label" in args.partitions:
        parts["label"] = [w.label for w in windows]
    if "cluster" in args.partitions:
        if not args.clustering:
            raise ConfigError("the cluster partition needs --clustering (a self-conditioned run directory)")
        sc = Path(args.clustering)
        state = ClusteringState.load(sc / "clustering.json")
        parts["cluster"] = state.assign(extract_features(_load_module(sc / "D.npz"), windows)).tolist()
    reports = []
    for ckpt in args.checkpoints:
        path = Path(ckpt)
        name = args.name or path.parent.name
        seed = int(path.name) if path.name.isdigit() else 0
        pred = predictor_from_dir(path, name, args.num_samples)
        report = evaluate_model(pred, windows, parts, args.z_seed, args.metric_mode, name, seed, include_label=False)
        reports.append(report.to_dict())
        print(f"{name} seed {seed}: ADE {report.overall.ade:.4f}  FDE {report.overall.fde:.4f}  (n={report.overall.n})")
    if args.out:
        dump_json(reports if len(reports) > 1 else reports[0], args.out)
    return EXIT_OK


def cmd_report(args) -> int:
    runs: dict[str, list[RunReport]] = {}
    for path in args.reports:
        data = json.loads(Path(path).read_text())
        for d in data if isinstance(data, list) else [data]:
            r = RunReport.from_dict(d)
            runs.setdefault(r.model, []).append(r)
    aggregates = [aggregate_runs(rs) for _, rs in sorted(runs.items())]
    parts = sorted({p for a in aggregates for p in a.groups})
    text = "\n\n".join([format_table(aggregates, None, "Overall")] + [format_table(aggregates, p, p) for p in parts])
    print(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        dump_json({a.model: a.to_dict() for a in aggregates}, out / "metrics.json")
        (out / "tables.txt").write_text(text + "\n")
    return EXIT_OK


def cmd_plot(args) -> int:
    from .experiment import Stage, _hash, load_config, run_plots_stage

    root = Path(args.experiment)
    cfg = load_config(root / "manifest.json")
    stage = Stage(root, "plots", _hash({"plot-command": cfg["plots"]}))
    stage.prepare(rerun_stale=True)
    outputs = run_plots_stage(root, cfg)
    stage.finish(outputs)
    print(f"wrote {len(outputs)} figures to {stage.dir}")
    return EXIT_OK


def cmd_run(args) -> int:
    from .experiment import run_experiment

    result = run_experiment(
        args.config, args.out_dir, jobs=args.jobs, rerun_stale=args.rerun_stale, plots=False if args.no_plots else None
    )
    print(f"experiment {result.root}: ran {len(result.executed)} stage(s), {len(result.skipped)} cached")
    tables = result.root / "report" / "tables.txt"
    if tables.exists():
        print(tables.read_text())
    return EXIT_OK


# ----------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="modeforge", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log stage progress")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("preprocess", help="raw tabular tracks -> canonical windows and splits")
    s.add_argument("--input", nargs="+", required=True, help="delimited trajectory file(s)")
    s.add_argument("--schema", help="column mapping file (timestamp, entity_id, label, x, y, delimiter)")
    s.add_argument("--profile", default="thor", help="thor, argoverse or a profile file")
    s.add_argument("--output", required=True, help="output directory")
    s.add_argument("--seed", type=int, help="split seed (overrides the split spec)")
    s.add_argument("--split-spec", help="per-label training counts and val/test sizes")
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("synth", help="generate the synthetic multi-behavior benchmark")
    s.add_argument("--spec", help="benchmark spec file (default: built-in 5-template spec)")
    s.add_argument("--seed", type=int)
    s.add_argument("--output", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train-selfcond", help="train the self-conditioned GAN and cluster its features")
    s.add_argument("--config", help="self-conditioned training options (epochs, k, recluster_every, ...)")
    s.add_argument("--data", required=True, help="training windows (JSONL)")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_train_selfcond)

    s = sub.add_parser("grid-search-k", help="pick the cluster count by validation ADE")
    s.add_argument("--config", help="self-conditioned training options")
    s.add_argument("--data", required=True, help="training windows")
    s.add_argument("--val", required=True, help="validation windows")
    s.add_argument("--k", type=int, nargs="+", required=True, help="candidate cluster counts")
    s.add_argument("--epochs", type=int, help="reduced epoch budget per candidate")
    s.add_argument("--metric-mode", choices=("mean", "rmse"), default="mean")
    s.add_argument("--out", help="write the table as JSON")
    s.set_defaults(func=cmd_grid_search_k)

    s = sub.add_parser("inspect-weights", help="print the cluster weight table with its per-term breakdown")
    s.add_argument("--stats", help="cluster statistics JSON from train-selfcond")
    s.add_argument("--weights", help="saved weight table")
    s.add_argument("--lambda-ade", type=float, default=1.0)
    s.add_argument("--lambda-fde", type=float, default=1.0)
    s.add_argument("--lambda-d", type=float, default=1.0)
    s.add_argument("--save", help="write the computed table")
    s.set_defaults(func=cmd_inspect_weights)

    s = sub.add_parser("train-forecaster", help="train one forecaster variant for several seeds")
    s.add_argument("--setting", choices=SETTINGS, required=True)
    s.add_argument("--data", required=True, help="training windows")
    s.add_argument("--config", help="training options (epochs, batch_size, lr_g, ...)")
    s.add_argument("--weights", help="weight table (wl2, wb, wl2wb)")
    s.add_argument("--assignments", help="JSON list of training cluster ids (wl2, wb, wl2wb)")
    s.add_argument("--cluster-first", action="store_true", help="draw a cluster first, then a member")
    s.add_argument("--selfcond-dir", help="self-conditioned run to evaluate (selfcond-ideal)")
    s.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_train_forecaster)

    s = sub.add_parser("evaluate", help="ADE/FDE overall and per group")
    s.add_argument("--checkpoints", nargs="+", required=True, help="checkpoint directories ({setting}/{seed})")
    s.add_argument("--data", required=True, help="test windows")
    s.add_argument("--clustering", help="self-conditioned run directory for the cluster partition")
    s.add_argument("--partitions", nargs="*", choices=("label", "cluster"), default=["label"])
    s.add_argument("--z-seed", type=int, default=0)
    s.add_argument("--num-samples", type=int, default=1, help="best-of-N against ground truth (default 1)")
    s.add_argument("--metric-mode", choices=("mean", "rmse"), default="mean")
    s.add_argument("--name", help="model name (default: checkpoint parent directory)")
    s.add_argument("--out", help="report JSON path")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("report", help="aggregate run reports into mean ± std tables")
    s.add_argument("--reports", nargs="+", required=True)
    s.add_argument("--out", help="output directory")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("plot", help="qualitative figures for a finished experiment")
    s.add_argument("--experiment", required=True, help="experiment directory (holding manifest.json)")
    s.set_defaults(func=cmd_plot)

    s = sub.add_parser("run", help="full pipeline from an experiment config or manifest")
    s.add_argument("--config", required=True)
    s.add_argument("--out-dir", default="experiments")
    s.add_argument("--jobs", type=int, help="parallel training processes (default $MODEFORGE_JOBS or 1)")
    s.add_argument("--rerun-stale", action="store_true", help="recompute stages whose configuration changed")
    s.add_argument("--no-plots", action="store_true")
    s.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, InvalidInputError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, KeyError, TypeError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    raise SystemExit(main())
