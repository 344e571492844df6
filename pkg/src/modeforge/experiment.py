"""Experiment orchestration: a small stage graph over plain files with
content-hash caching and a manifest that records every seed and setting.

Layout: ``{experiment}/{stage}/{seed}/`` plus ``manifest.json`` at the root.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import shutil
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from . import __version__
from .adversarial import GANConfig
from .clustering import ClusteringState
from .core import LabelRegistry, TrackWindow, read_windows, write_windows
from .evaluation import RunReport, aggregate_runs, dump_json, evaluate_model, format_table
from .forecasting import (
    FORECASTERS,
    baseline_predictor,
    ideal_cgan_predictor,
    ideal_selfcond_predictor,
    train_baseline,
    train_ideal_cgan,
    train_vanilla_gan,
    wrong_mode_probe,
)
from .ingest import DataError, SplitSpec, TabularSchema, get_profile, make_splits, preprocess, read_tabular_trajectories, split_manifest
from .networks import ConfigError, Generator, ModelParams
from .predictors import BaselinePredictor, GANPredictor
from .selfcond import SelfCondConfig, extract_features, intra_cluster_metrics, stats_to_json, train_selfcond
from .synthetic import BenchmarkSpec, generate_benchmark, load_spec, mode_recovery_score
from .weights import WeightTable, compute_weights

log = logging.getLogger(__name__)

DATA_ENV = "MODEFORGE_DATA_DIR"
JOBS_ENV = "MODEFORGE_JOBS"


class StaleCacheError(ConfigError):
    """A stage directory holds outputs produced from a different configuration."""


# ----------------------------------------------------------------- config


def _hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()).hexdigest()[:16]


def _expand(obj):
    if isinstance(obj, str):
        return os.path.expandvars(obj)
    if isinstance(obj, list):
        return [_expand(v) for v in obj]
    if isinstance(obj, dict):
        return {k: _expand(v) for k, v in obj.items()}
    return obj


def _read_structured(path: Path) -> dict:
    text = path.read_text()
    if path.suffix in (".yaml", ".yml"):
        import yaml

        return yaml.safe_load(text) or {}
    return json.loads(text)


def _pick(cls, d: dict, what: str):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"unknown {what} option(s) {unknown}; known: {sorted(known)}")
    return cls(**d)


DEFAULTS = {
    "seeds": [0, 1, 2, 3, 4],
    "settings": ["lstm", "vanilla", "wl2", "wb", "wl2wb", "cgan-ideal", "selfcond-ideal"],
    "selfcond": {},
    "forecaster": {},
    "weights": {"lambda_ade": 1.0, "lambda_fde": 1.0, "lambda_d": 1.0, "cluster_first": False},
    "evaluation": {"metric_mode": "mean", "z_seed": 0, "num_samples": 1, "wrong_mode_seed": 0},
    "plots": {"enabled": True, "windows": 4, "gallery_size": 30},
}


def resolve_config(raw: dict, base_dir: Optional[Path] = None) -> dict:
    """Fill defaults, expand ``$VARS`` and inline referenced files so the result
    is self-contained (it is what the manifest stores)."""
    os.environ.setdefault(DATA_ENV, str(Path.cwd() / "data"))
    cfg = _expand(json.loads(json.dumps(raw)))
    base = Path(base_dir) if base_dir is not None else Path.cwd()
    if "name" not in cfg:
        raise ConfigError("experiment config needs a 'name'")
    if "data" not in cfg or "kind" not in cfg["data"]:
        raise ConfigError("experiment config needs data.kind (synthetic | windows | raw)")
    for key, value in DEFAULTS.items():
        if isinstance(value, dict):
            cfg[key] = {**value, **(cfg.get(key) or {})}
        else:
            cfg.setdefault(key, value)
    data = cfg["data"]

    def path(p):
        p = Path(p)
        return str(p if p.is_absolute() else base / p)

    if data["kind"] == "synthetic":
        for split in ("train", "val", "test"):
            spec = data.get(split)
            if isinstance(spec, str):
                spec = asdict(load_spec(path(spec)))
            if spec is not None:
                data[split] = BenchmarkSpec.from_dict(spec).to_dict()
        if "train" not in data or "test" not in data:
            raise ConfigError("synthetic data needs 'train' and 'test' benchmark specs")
    elif data["kind"] == "windows":
        for split in ("train", "val", "test"):
            if data.get(split):
                data[split] = path(data[split])
    elif data["kind"] == "raw":
        data["files"] = [path(f) for f in data.get("files", [])]
        if not data["files"] or "split" not in data:
            raise ConfigError("raw data needs 'files' and a 'split' spec")
    else:
        raise ConfigError(f"unknown data.kind {data['kind']!r}")

    unknown = [s for s in cfg["settings"] if s not in FORECASTERS]
    if unknown:
        raise ConfigError(f"unknown forecaster setting(s) {unknown}; known: {list(FORECASTERS)}")
    if cfg["evaluation"]["metric_mode"] not in ("mean", "rmse"):
        raise ConfigError("evaluation.metric_mode must be 'mean' or 'rmse'")
    selfcond_config(cfg)
    forecaster_config(cfg, 0)
    return cfg


def load_config(path) -> dict:
    """Read an experiment config, or the ``config`` block of a previous manifest."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    raw = _read_structured(path)
    if "config" in raw and "config_hash" in raw:
        return raw["config"]
    return resolve_config(raw, path.parent)


def selfcond_config(cfg: dict, seed: int = 0) -> SelfCondConfig:
    return _pick(SelfCondConfig, {**cfg["selfcond"], "seed": seed}, "selfcond")


def forecaster_config(cfg: dict, seed: int) -> GANConfig:
    return _pick(GANConfig, {**cfg["forecaster"], "seed": seed}, "forecaster")


# ----------------------------------------------------------------- stages


@dataclass
class StageKeys:
    data: str
    selfcond: dict[int, str] = field(default_factory=dict)
    weights: dict[int, str] = field(default_factory=dict)
    forecast: dict[tuple[str, int], str] = field(default_factory=dict)
    evaluate: dict[tuple[str, int], str] = field(default_factory=dict)
    report: str = ""
    plots: str = ""


def stage_keys(cfg: dict) -> StageKeys:
    """Content hashes of every stage, each covering its upstream stages."""
    keys = StageKeys(_hash({"data": cfg["data"]}))
    lam = cfg["weights"]
    ev = cfg["evaluation"]
    for s in cfg["seeds"]:
        keys.selfcond[s] = _hash({"up": keys.data, "cfg": asdict(selfcond_config(cfg, s))})
        keys.weights[s] = _hash({"up": keys.selfcond[s], "lambda": lam, "metric_mode": ev["metric_mode"]})
        for st in cfg["settings"]:
            fc = asdict(forecaster_config(cfg, s))
            if st in ("lstm", "vanilla", "cgan-ideal"):
                up = keys.data
            elif st == "selfcond-ideal":
                up = keys.selfcond[s]
                fc = None
            else:
                up = keys.weights[s]
            keys.forecast[st, s] = _hash({"up": up, "setting": st, "cfg": fc})
            # cluster partition needs the self-conditioned stage of the same seed
            keys.evaluate[st, s] = _hash({"up": [keys.forecast[st, s], keys.selfcond[s]], "cfg": ev})
    keys.report = _hash(sorted(f"{k}:{v}" for k, v in ((str(k), v) for k, v in keys.evaluate.items())))
    keys.plots = _hash({"up": keys.report, "cfg": cfg["plots"]})
    return keys


class Stage:
    """One cacheable unit: a directory, a content key and a list of outputs."""

    def __init__(self, root: Path, rel: str, key: str):
        self.rel = rel
        self.dir = root / rel
        self.key = key

    @property
    def stamp(self) -> Path:
        return self.dir / "stage.json"

    def outputs(self) -> list[str]:
        return json.loads(self.stamp.read_text())["outputs"]

    def status(self) -> str:
        if not self.stamp.exists():
            return "missing"
        meta = json.loads(self.stamp.read_text())
        if meta["key"] != self.key:
            return "stale"
        if not all((self.dir / o).exists() for o in meta["outputs"]):
            return "missing"
        return "done"

    def prepare(self, rerun_stale: bool) -> bool:
        """True when the stage must run; clears the directory in that case."""
        state = self.status()
        if state == "done":
            return False
        if state == "stale" and not rerun_stale:
            raise StaleCacheError(
                f"stage {self.rel} was produced by a different configuration; "
                "re-run with --rerun-stale to recompute it and everything downstream"
            )
        if self.dir.exists():
            shutil.rmtree(self.dir)
        self.dir.mkdir(parents=True)
        return True

    def finish(self, outputs: Sequence[str]) -> None:
        dump_json({"key": self.key, "outputs": sorted(outputs)}, self.stamp)


# ----------------------------------------------------------------- stage bodies


def _windows_from_spec(spec: dict) -> tuple[list[TrackWindow], dict]:
    return generate_benchmark(BenchmarkSpec.from_dict(spec))


def build_data(cfg: dict, out: Path) -> list[str]:
    data = cfg["data"]
    manifest: dict = {"kind": data["kind"]}
    if data["kind"] == "synthetic":
        splits = {}
        for split in ("train", "val", "test"):
            if data.get(split) is not None:
                splits[split], manifest[split] = _windows_from_spec(data[split])
        splits.setdefault("val", [])
    elif data["kind"] == "windows":
        splits = {}
        for split in ("train", "val", "test"):
            p = data.get(split)
            if p and not Path(p).exists():
                raise DataError(f"window file not found: {p}")
            splits[split] = read_windows(p) if p else []
    else:
        profile = get_profile(data.get("profile", "thor"))
        schema = TabularSchema.from_dict(data["schema"]) if data.get("schema") else None
        trajs = []
        for f in data["files"]:
            if not Path(f).exists():
                raise DataError(f"trajectory file not found: {f}")
            trajs.extend(read_tabular_trajectories(f, schema))
        windows = preprocess(trajs, profile)
        spec = SplitSpec.from_dict(data["split"])
        train, val, test = make_splits(windows, spec)
        splits = {"train": train, "val": val, "test": test}
        manifest.update(split_manifest(train, val, test, spec, profile))
    if not splits.get("train") or not splits.get("test"):
        raise DataError("training and test sets must both be non-empty")
    outputs = []
    for split, ws in splits.items():
        write_windows(out / f"{split}.jsonl", ws)
        outputs.append(f"{split}.jsonl")
        manifest[f"n_{split}"] = len(ws)
    dump_json(manifest, out / "manifest.json")
    return outputs + ["manifest.json"]


def write_epoch_csv(rows: Sequence[dict], path) -> None:
    """Per-epoch mean losses as CSV (columns from the first row)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        if not rows:
            return
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)


def _load_split(root: Path, split: str) -> list[TrackWindow]:
    return read_windows(root / "data" / f"{split}.jsonl")


def _load_module(path: Path):
    module = ModelParams.load(path).to_module()
    module.eval()
    return module


def run_selfcond_stage(root: str, cfg: dict, seed: int) -> list[str]:
    torch.set_num_threads(1)
    root = Path(root)
    out = root / "selfcond" / str(seed)
    train = _load_split(root, "train")
    res = train_selfcond(train, selfcond_config(cfg, seed))
    ModelParams.from_module(res.G).save(out / "G.npz")
    ModelParams.from_module(res.D).save(out / "D.npz")
    res.clustering.save(out / "clustering.json")
    summary = {"seed": seed, "counts": res.clustering.counts().tolist(), "rounds": res.rounds}
    labels = [w.label for w in train]
    if len(set(labels)) > 1:
        summary["mode_recovery"] = mode_recovery_score(res.clustering.labels, labels)
    dump_json(summary, out / "summary.json")
    write_epoch_csv(res.log.epochs, out / "losses.csv")
    return ["G.npz", "D.npz", "clustering.json", "summary.json", "losses.csv"]


def run_weights_stage(root: Path, cfg: dict, seed: int) -> list[str]:
    sc = root / "selfcond" / str(seed)
    out = root / "weights" / str(seed)
    G = _load_module(sc / "G.npz")
    state = ClusteringState.load(sc / "clustering.json")
    train = _load_split(root, "train")
    stats = intra_cluster_metrics(G, state, train, metric_mode=cfg["evaluation"]["metric_mode"])
    lam = cfg["weights"]
    table = compute_weights(stats, lam["lambda_ade"], lam["lambda_fde"], lam["lambda_d"])
    dump_json(stats_to_json(stats), out / "stats.json")
    table.save(out / "weights.json")
    dump_json(state.labels.tolist(), out / "assignments.json")
    return ["stats.json", "weights.json", "assignments.json"]


def run_forecast_stage(root: str, cfg: dict, setting: str, seed: int) -> list[str]:
    torch.set_num_threads(1)
    root = Path(root)
    out = root / "forecast" / setting / str(seed)
    train = _load_split(root, "train")
    fcfg = forecaster_config(cfg, seed)
    if setting == "lstm":
        model, tlog = train_baseline(train, fcfg)
        ModelParams.from_module(model).save(out / "model.npz")
        write_epoch_csv(tlog.epochs, out / "losses.csv")
        return ["model.npz", "losses.csv"]
    if setting == "cgan-ideal":
        run = train_ideal_cgan(train, fcfg)
        dump_json(list(run.registry.labels), out / "labels.json")
        extra = ["labels.json"]
    elif setting == "selfcond-ideal":
        # no training: the self-conditioned generator is evaluated with oracle clusters
        dump_json({"source": f"selfcond/{seed}"}, out / "source.json")
        return ["source.json"]
    elif setting == "vanilla":
        run = train_vanilla_gan(train, fcfg, "none")
        extra = []
    else:
        w = root / "weights" / str(seed)
        table = WeightTable.load(w / "weights.json")
        ids = json.loads((w / "assignments.json").read_text())
        run = train_vanilla_gan(train, fcfg, setting, table, ids, cfg["weights"].get("cluster_first", False))
        extra = []
    ModelParams.from_module(run.G).save(out / "model.npz")
    ModelParams.from_module(run.D).save(out / "D.npz")
    write_epoch_csv(run.log.epochs, out / "losses.csv")
    return ["model.npz", "D.npz", "losses.csv"] + extra


def predictor_from_dir(path, name: Optional[str] = None, num_samples: int = 1):
    """Load a checkpoint directory written by a forecaster or self-conditioned run.

    A directory with ``clustering.json`` is evaluated as the oracle-conditioned
    self-conditioned generator; ``labels.json`` marks a label-conditioned one.
    """
    path = Path(path)
    if (path / "clustering.json").exists():
        pred = ideal_selfcond_predictor(
            _load_module(path / "G.npz"), _load_module(path / "D.npz"), ClusteringState.load(path / "clustering.json")
        )
    elif not (path / "model.npz").exists():
        raise DataError(f"{path}: no model.npz or self-conditioned checkpoint found")
    else:
        model = _load_module(path / "model.npz")
        if not isinstance(model, Generator):
            return baseline_predictor(model) if name is None else BaselinePredictor(model, name)
        if (path / "labels.json").exists():
            registry = LabelRegistry(tuple(json.loads((path / "labels.json").read_text())))
            pred = ideal_cgan_predictor(model, registry)
        else:
            pred = GANPredictor(model, "vanilla")
    if name is not None:
        pred.name = name
    pred.num_samples = num_samples
    return pred


def make_predictor(root: Path, setting: str, seed: int, num_samples: int = 1):
    if setting == "selfcond-ideal":
        return predictor_from_dir(root / "selfcond" / str(seed), setting, num_samples)
    return predictor_from_dir(root / "forecast" / setting / str(seed), setting, num_samples)


def test_clusters(root: Path, seed: int, windows: Sequence[TrackWindow]) -> np.ndarray:
    """Nearest-centroid cluster of each window under the seed's final clustering."""
    sc = root / "selfcond" / str(seed)
    D = _load_module(sc / "D.npz")
    return ClusteringState.load(sc / "clustering.json").assign(extract_features(D, windows))


def run_evaluate_stage(root: str, cfg: dict, setting: str, seed: int) -> list[str]:
    torch.set_num_threads(1)
    root = Path(root)
    out = root / "evaluate" / setting / str(seed)
    test = _load_split(root, "test")
    ev = cfg["evaluation"]
    predictor = make_predictor(root, setting, seed, ev.get("num_samples", 1))
    parts = {"label": [w.label for w in test], "cluster": test_clusters(root, seed, test).tolist()}
    report = evaluate_model(predictor, test, parts, ev["z_seed"], ev["metric_mode"], setting, seed)
    dump_json(report.to_dict(), out / "report.json")
    outputs = ["report.json"]
    if setting == "selfcond-ideal":
        sc = root / "selfcond" / str(seed)
        state = ClusteringState.load(sc / "clustering.json")
        if state.k > 1:
            probe = wrong_mode_probe(
                _load_module(sc / "G.npz"), _load_module(sc / "D.npz"), state, test,
                ev["z_seed"], ev.get("wrong_mode_seed", 0), ev["metric_mode"],
            )
            dump_json({"win_rate": probe["win_rate"], "n": len(test)}, out / "wrong_mode.json")
            outputs.append("wrong_mode.json")
    return outputs


def run_report_stage(root: Path, cfg: dict) -> list[str]:
    out = root / "report"
    test = _load_split(root, "test")
    aggregates = []
    per_run = {}
    for st in cfg["settings"]:
        reports = [
            RunReport.from_dict(json.loads((root / "evaluate" / st / str(s) / "report.json").read_text()))
            for s in cfg["seeds"]
        ]
        per_run[st] = [r.to_dict() for r in reports]
        aggregates.append(aggregate_runs(reports))
    counts: dict[str, int] = {}
    for w in test:
        counts[w.label] = counts.get(w.label, 0) + 1
    selfcond = {}
    for s in cfg["seeds"]:
        selfcond[s] = json.loads((root / "selfcond" / str(s) / "summary.json").read_text())
        selfcond[s]["weights"] = WeightTable.load(root / "weights" / str(s) / "weights.json").to_dict()
        probe = root / "evaluate" / "selfcond-ideal" / str(s) / "wrong_mode.json"
        if probe.exists():
            selfcond[s]["wrong_mode"] = json.loads(probe.read_text())
    metrics = {
        "metric_mode": cfg["evaluation"]["metric_mode"],
        "aggregates": {a.model: a.to_dict() for a in aggregates},
        "runs": per_run,
        "selfcond": {str(s): v for s, v in selfcond.items()},
    }
    dump_json(metrics, out / "metrics.json")
    unconditioned = [a for a in aggregates if a.model not in ("cgan-ideal", "selfcond-ideal")]
    ideal = [a for a in aggregates if a.model in ("cgan-ideal", "selfcond-ideal")]
    mode = cfg["evaluation"]["metric_mode"]
    tables = [
        format_table(unconditioned, "label", f"Per-label ADE/FDE on the test set ({mode} ADE)", counts),
        format_table(unconditioned, "cluster", "Per-cluster ADE/FDE on the test set"),
        format_table(aggregates, None, "Overall ADE/FDE"),
    ]
    if ideal:
        tables.append(format_table(ideal + unconditioned, "label", "Oracle-conditioned models vs unconditioned", counts))
    lines = ["", "Self-conditioned stage per seed:"]
    for s, v in selfcond.items():
        rec = v.get("mode_recovery")
        wm = v.get("wrong_mode", {}).get("win_rate")
        probs = " ".join(f"{p:.3f}" for p in v["weights"]["probs"])
        lines.append(
            f"  seed {s}: counts {v['counts']}  p=[{probs}]"
            + (f"  recovery {rec:.3f}" if rec is not None else "")
            + (f"  true-mode win rate {wm:.3f}" if wm is not None else "")
        )
    (out / "tables.txt").write_text("\n\n".join(tables) + "\n" + "\n".join(lines) + "\n")
    return ["metrics.json", "tables.txt"]


def run_plots_stage(root: Path, cfg: dict) -> list[str]:
    from .plots import qualitative_export

    out = root / "plots"
    seed = cfg["seeds"][0]
    test = _load_split(root, "test")
    pc = cfg["plots"]
    # first window of each label, in label order
    chosen: dict[str, int] = {}
    for i, w in enumerate(test):
        chosen.setdefault(w.label, i)
    ids = [chosen[k] for k in sorted(chosen)][: pc.get("windows", 4)]
    subset = [test[i] for i in ids]
    z_seed = cfg["evaluation"]["z_seed"]
    preds = {}
    for st in cfg["settings"]:
        preds[st] = make_predictor(root, st, seed).predict_windows(subset, z_seed=z_seed)
    written = qualitative_export(out, cfg["name"], subset, predictions=preds)

    train = _load_split(root, "train")
    state = ClusteringState.load(root / "selfcond" / str(seed) / "clustering.json")
    written += qualitative_export(
        out, cfg["name"], train, clusters=state.labels, k=state.k, gallery_size=pc.get("gallery_size", 30)
    )
    G = _load_module(root / "selfcond" / str(seed) / "G.npz")
    gp = GANPredictor(G, "selfcond")
    eye = np.eye(state.k)
    modes = {c: gp.predict_windows(subset, z_seed, np.repeat(eye[c : c + 1], len(subset), axis=0)) for c in range(state.k)}
    written += qualitative_export(out, cfg["name"], subset, mode_predictions=modes)
    return [p.name for p in written]


# ----------------------------------------------------------------- driver


@dataclass
class ExperimentResult:
    root: Path
    executed: list[str]
    skipped: list[str]
    manifest: dict


def _jobs(jobs: Optional[int]) -> int:
    if jobs is None:
        jobs = int(os.environ.get(JOBS_ENV, "1"))
    return max(1, jobs)


def _run_parallel(tasks: list[tuple[Callable, tuple]], jobs: int) -> list[list[str]]:
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(*args) for fn, args in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(fn, *args) for fn, args in tasks]
        return [f.result() for f in futures]


def run_experiment(
    config,
    out_dir,
    jobs: Optional[int] = None,
    rerun_stale: bool = False,
    plots: Optional[bool] = None,
) -> ExperimentResult:
    """Execute every stage in dependency order, skipping up-to-date ones.

    ``config`` is a resolved config dict or a path to a config/manifest file.
    """
    cfg = resolve_config(config) if isinstance(config, dict) else load_config(config)
    root = Path(out_dir) / cfg["name"]
    root.mkdir(parents=True, exist_ok=True)
    keys = stage_keys(cfg)
    jobs = _jobs(jobs)
    executed: list[str] = []
    skipped: list[str] = []
    stages: dict[str, Stage] = {}

    def serial(stage: Stage, body: Callable[[], list[str]]):
        stages[stage.rel] = stage
        if stage.prepare(rerun_stale):
            log.info("running %s", stage.rel)
            stage.finish(body())
            executed.append(stage.rel)
        else:
            skipped.append(stage.rel)

    def parallel(items: list[tuple[Stage, Callable, tuple]]):
        todo = []
        for stage, fn, args in items:
            stages[stage.rel] = stage
            if stage.prepare(rerun_stale):
                todo.append((stage, fn, args))
            else:
                skipped.append(stage.rel)
        for (stage, _, _), outs in zip(todo, _run_parallel([(fn, args) for _, fn, args in todo], jobs)):
            stage.finish(outs)
            executed.append(stage.rel)

    serial(Stage(root, "data", keys.data), lambda: build_data(cfg, root / "data"))
    parallel([(Stage(root, f"selfcond/{s}", keys.selfcond[s]), run_selfcond_stage, (str(root), cfg, s)) for s in cfg["seeds"]])
    for s in cfg["seeds"]:
        serial(Stage(root, f"weights/{s}", keys.weights[s]), lambda s=s: run_weights_stage(root, cfg, s))
    grid = [(st, s) for st in cfg["settings"] for s in cfg["seeds"]]
    parallel(
        [(Stage(root, f"forecast/{st}/{s}", keys.forecast[st, s]), run_forecast_stage, (str(root), cfg, st, s)) for st, s in grid]
    )
    parallel(
        [(Stage(root, f"evaluate/{st}/{s}", keys.evaluate[st, s]), run_evaluate_stage, (str(root), cfg, st, s)) for st, s in grid]
    )
    serial(Stage(root, "report", keys.report), lambda: run_report_stage(root, cfg))
    if plots if plots is not None else cfg["plots"].get("enabled", True):
        serial(Stage(root, "plots", keys.plots), lambda: run_plots_stage(root, cfg))

    manifest = {
        "name": cfg["name"],
        "version": __version__,
        "config": cfg,
        "config_hash": _hash(cfg),
        "seeds": cfg["seeds"],
        "settings": cfg["settings"],
        "lambda": {k: cfg["weights"][k] for k in ("lambda_ade", "lambda_fde", "lambda_d")},
        "cluster_first": cfg["weights"].get("cluster_first", False),
        "wl2_weights_mean_normalized": True,
        "metric_mode": cfg["evaluation"]["metric_mode"],
        "z_seed": cfg["evaluation"]["z_seed"],
        "stages": {
            rel: {"key": st.key, "outputs": [f"{rel}/{o}" for o in st.outputs()]} for rel, st in sorted(stages.items())
        },
    }
    dump_json(manifest, root / "manifest.json")
    return ExperimentResult(root, executed, skipped, manifest)


# ----------------------------------------------------------------- k selection


@dataclass
class GridSearchResult:
    best_k: int
    rows: list[dict]

    def format(self) -> str:
        lines = [f"{'k':>4}{'val ADE':>12}{'val FDE':>12}"]
        for r in self.rows:
            mark = "  *" if r["k"] == self.best_k else ""
            lines.append(f"{r['k']:>4}{r['ade']:>12.4f}{r['fde']:>12.4f}{mark}")
        return "\n".join(lines)


def grid_search_k(
    train: Sequence[TrackWindow],
    val: Sequence[TrackWindow],
    candidates: Sequence[int],
    cfg: SelfCondConfig,
    metric_mode: str = "mean",
    z_seed: int = 0,
    trainer: Optional[Callable] = None,
) -> GridSearchResult:
    """Train one self-conditioned GAN per k and keep the lowest validation ADE.

    Validation windows are conditioned on their nearest-centroid cluster.
    Ties go to the smaller k.
    """
    if not candidates:
        raise ConfigError("grid search needs at least one k candidate")
    ks = sorted(set(int(k) for k in candidates))
    if len(ks) == 1:
        return GridSearchResult(ks[0], [{"k": ks[0], "ade": float("nan"), "fde": float("nan")}])
    trainer = trainer or (lambda k: _grid_score(train, val, cfg, k, metric_mode, z_seed))
    rows = []
    for k in ks:
        ade_v, fde_v = trainer(k)
        rows.append({"k": k, "ade": float(ade_v), "fde": float(fde_v)})
    best = min(rows, key=lambda r: (r["ade"], r["k"]))
    return GridSearchResult(best["k"], rows)


def _grid_score(train, val, cfg: SelfCondConfig, k: int, metric_mode: str, z_seed: int):
    res = train_selfcond(train, SelfCondConfig(**{**asdict(cfg), "k": k}))
    report = evaluate_model(
        ideal_selfcond_predictor(res.G, res.D, res.clustering), val, None, z_seed, metric_mode, include_label=False
    )
    return report.overall.ade, report.overall.fde
