"""Config-driven experiment runner.

Subcommands:
    gen-data  build a synthetic dataset directory from a spec file or profile
    run       train + evaluate one experiment config, write reports
    grid      run the standard ablation grid and aggregate a method table
    plot      render loss curves, confusion heatmaps, per-event bars

Exit codes: 0 success, 1 config/usage error, 2 runtime or numerical failure.
Outputs default to $SCENESED_OUT_ROOT (or ./runs) when --out is omitted.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from .errors import ConfigError, NumericalError, ScenesedError
from .metrics import MetricReport, evaluate_model
from .model import build_network
from .nn.checkpoint import load_params, save_params
from .synthdata import (
    SceneSpec, default_scene_specs, fast_scene_specs, generate_dataset,
    load_dataset, save_dataset,
)
from .training import (
    ExperimentConfig, load_experiment_config, parse_config_lines, run_training,
    split_dataset,
)

# The standard ablation rows: single-task references, the multitask baseline,
# adversarial reversal at each insertion point, and the two fake-label runs.
METHOD_OVERRIDES = {
    "asc": dict(variant="asc", alpha=1.0, beta=0.0),
    "sed": dict(variant="sed", alpha=0.0, beta=1.0),
    "mtl": dict(variant="mtl"),
    "grl_s1": dict(variant="mtl", grl_position="S1"),
    "grl_s2": dict(variant="mtl", grl_position="S2"),
    "grl_e1": dict(variant="mtl", grl_position="E1"),
    "grl_e2": dict(variant="mtl", grl_position="E2"),
    "fake_scene": dict(variant="mtl", fake_labels="scene"),
    "fake_event": dict(variant="mtl", fake_labels="event"),
}
ALL_METHODS = tuple(METHOD_OVERRIDES)

METRIC_COLUMNS = ("scene_micro_f", "scene_macro_f", "event_micro_f", "event_macro_f")


def default_out_root() -> Path:
    return Path(os.environ.get("SCENESED_OUT_ROOT", "runs"))


# -- single-seed job (also the multiprocessing entry point) ------------------

def _seed_job(cfg_dict: dict, seed: int, checkpoint_path: str) -> dict:
    cfg = ExperimentConfig(**{**cfg_dict,
                              "seeds": tuple(cfg_dict["seeds"]),
                              "freq_pools": tuple(cfg_dict["freq_pools"])})
    clips, _, _ = load_dataset(cfg.dataset)
    train_clips, holdout = split_dataset(clips, cfg.eval_fraction)
    run = run_training(cfg, train_clips, seeds=[seed])[0]
    report = evaluate_model(run.net, holdout, threshold=cfg.threshold)
    save_params(checkpoint_path, run.net.state_entries())
    Path(checkpoint_path).with_suffix(".manifest.json").write_text(
        json.dumps(run.net.manifest(), indent=2, sort_keys=True))
    return {
        "seed": seed,
        "metrics": report.to_dict(),
        "curve": [[float(v) for v in row] for row in run.loss_curve],
    }


def _run_jobs(jobs: list[tuple], workers: int) -> list[dict]:
    if workers <= 1 or len(jobs) <= 1:
        return [_seed_job(*job) for job in jobs]
    # Children get single-threaded BLAS; they import numpy fresh under spawn.
    old = os.environ.get("OMP_NUM_THREADS")
    os.environ["OMP_NUM_THREADS"] = "1"
    try:
        with ProcessPoolExecutor(max_workers=workers,
                                 mp_context=get_context("spawn")) as pool:
            return list(pool.map(_seed_job_star, jobs))
    finally:
        if old is None:
            os.environ.pop("OMP_NUM_THREADS", None)
        else:
            os.environ["OMP_NUM_THREADS"] = old


def _seed_job_star(job):
    return _seed_job(*job)


# -- report writing ----------------------------------------------------------

def _fmt(value) -> str:
    return repr(float(value))


def _nanmean(stacked: np.ndarray) -> np.ndarray:
    """nanmean over axis 0; all-NaN cells stay NaN without a warning."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return np.nanmean(stacked, axis=0)


def _aggregate(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    arr = arr[~np.isnan(arr)]
    if arr.size == 0:
        return float("nan"), float("nan")
    return float(arr.mean()), float(arr.std())


def write_run_outputs(out_dir: Path, cfg: ExperimentConfig, results: list[dict],
                      scene_names: list[str]):
    out_dir.mkdir(parents=True, exist_ok=True)
    results = sorted(results, key=lambda r: r["seed"])
    per_seed = {r["seed"]: MetricReport.from_dict(r["metrics"]) for r in results}

    aggregates = {}
    for col in METRIC_COLUMNS:
        mean, std = _aggregate([getattr(m, col) for m in per_seed.values()])
        aggregates[col] = {"mean": mean, "std": std}
    report = {
        "method": cfg.name,
        "seeds": [r["seed"] for r in results],
        "per_seed": {str(r["seed"]): r["metrics"] for r in results},
        "aggregates": aggregates,
    }
    (out_dir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))

    with open(out_dir / "report.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("method", "seed") + METRIC_COLUMNS)
        for r in results:
            m = per_seed[r["seed"]]
            writer.writerow([cfg.name, r["seed"]]
                            + [_fmt(getattr(m, col)) for col in METRIC_COLUMNS])

    with open(out_dir / "loss_curves.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "seed", "epoch", "total_loss",
                         "scene_loss", "event_loss"])
        for r in results:
            for epoch, row in enumerate(r["curve"]):
                writer.writerow([cfg.name, r["seed"], epoch] + [_fmt(v) for v in row])

    confusions = np.stack([m.confusion for m in per_seed.values()])
    mean_conf = _nanmean(confusions)
    write_confusion_csv(out_dir / "confusion.csv", mean_conf, scene_names)

    with open(out_dir / "per_event.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "event", "mean_f", "std_f"])
        stacked = np.stack([m.per_event_f for m in per_seed.values()])
        for event in range(stacked.shape[1]):
            mean, std = _aggregate(stacked[:, event].tolist())
            writer.writerow([cfg.name, event, _fmt(mean), _fmt(std)])

    manifest = {
        "config": cfg.to_dict(),
        "scene_names": scene_names,
        "checkpoints": [f"checkpoints/seed{r['seed']}.mtlw" for r in results],
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return report


def write_confusion_csv(path: Path, confusion: np.ndarray, scene_names: list[str]):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scene"] + list(scene_names))
        for name, row in zip(scene_names, confusion):
            writer.writerow([name] + [_fmt(v) for v in row])


def run_experiment(cfg: ExperimentConfig, out_dir: Path, workers: int = 1) -> dict:
    """Train every seed, evaluate on the held-out split, write the run dir."""
    if cfg.dataset is None or not Path(cfg.dataset).exists():
        raise ConfigError(f"dataset path does not exist: {cfg.dataset!r}")
    _, _, meta = load_dataset(cfg.dataset)
    scene_names = [s["name"] for s in meta["scenes"]]
    ckpt_dir = out_dir / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(cfg.to_dict(), seed, str(ckpt_dir / f"seed{seed}.mtlw"))
            for seed in cfg.seeds]
    results = _run_jobs(jobs, workers)
    return write_run_outputs(out_dir, cfg, results, scene_names)


def reevaluate_run(run_dir) -> list[list[str]]:
    """Recompute the report.csv rows from stored checkpoints alone."""
    run_dir = Path(run_dir)
    manifest = json.loads((run_dir / "manifest.json").read_text())
    cfg = ExperimentConfig(**{**manifest["config"],
                              "seeds": tuple(manifest["config"]["seeds"]),
                              "freq_pools": tuple(manifest["config"]["freq_pools"])})
    clips, _, _ = load_dataset(cfg.dataset)
    _, holdout = split_dataset(clips, cfg.eval_fraction)
    rows = []
    for seed in cfg.seeds:
        net = build_network(cfg.network_config(), seed=seed)
        net.load_state(load_params(run_dir / "checkpoints" / f"seed{seed}.mtlw"))
        m = evaluate_model(net, holdout, threshold=cfg.threshold)
        rows.append([cfg.name, str(seed)]
                    + [_fmt(getattr(m, col)) for col in METRIC_COLUMNS])
    return rows


# -- grid --------------------------------------------------------------------

def load_grid_file(path) -> tuple[ExperimentConfig, list[str]]:
    path = Path(path)
    values = parse_config_lines(path.read_text().splitlines(), str(path),
                                extra_keys=("methods",))
    methods_raw = values.pop("methods", ", ".join(ALL_METHODS))
    methods = [m.strip() for m in methods_raw.split(",") if m.strip()]
    for m in methods:
        if m not in METHOD_OVERRIDES:
            raise ConfigError(f"{path}: unknown method {m!r} "
                              f"(choices: {', '.join(ALL_METHODS)})")
    if len(set(methods)) != len(methods):
        raise ConfigError(f"{path}: duplicate method names")
    if "dataset" not in values:
        raise ConfigError(f"{path}: missing required key 'dataset'")
    dataset = Path(values["dataset"])
    if not dataset.is_absolute():
        values["dataset"] = str((path.parent / dataset).resolve())
    values.pop("name", None)
    try:
        shared = ExperimentConfig(name="grid", **values)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return shared, methods


def method_config(shared: ExperimentConfig, method: str) -> ExperimentConfig:
    return replace(shared, name=method, **METHOD_OVERRIDES[method])


def run_grid(grid_path, out_dir: Path, workers: int = 1) -> dict:
    shared, methods = load_grid_file(grid_path)
    if shared.dataset is None or not Path(shared.dataset).exists():
        raise ConfigError(f"dataset path does not exist: {shared.dataset!r}")
    _, _, meta = load_dataset(shared.dataset)
    scene_names = [s["name"] for s in meta["scenes"]]
    out_dir.mkdir(parents=True, exist_ok=True)

    jobs = []
    for method in methods:
        cfg = method_config(shared, method)
        ckpt_dir = out_dir / method / "checkpoints"
        ckpt_dir.mkdir(parents=True, exist_ok=True)
        for seed in cfg.seeds:
            jobs.append((cfg.to_dict(), seed, str(ckpt_dir / f"seed{seed}.mtlw")))

    failures: dict[str, str] = {}
    results_by_method: dict[str, list[dict]] = {m: [] for m in methods}
    if workers <= 1:
        for job in jobs:
            method = job[0]["name"]
            try:
                results_by_method[method].append(_seed_job(*job))
            except NumericalError as exc:
                failures[method] = str(exc)
    else:
        old = os.environ.get("OMP_NUM_THREADS")
        os.environ["OMP_NUM_THREADS"] = "1"
        try:
            with ProcessPoolExecutor(max_workers=workers,
                                     mp_context=get_context("spawn")) as pool:
                futures = [(job[0]["name"], pool.submit(_seed_job, *job))
                           for job in jobs]
                for method, fut in futures:
                    try:
                        results_by_method[method].append(fut.result())
                    except NumericalError as exc:
                        failures[method] = str(exc)
        finally:
            if old is None:
                os.environ.pop("OMP_NUM_THREADS", None)
            else:
                os.environ["OMP_NUM_THREADS"] = old

    summary_rows = []
    per_event_rows = []
    for method in methods:
        cfg = method_config(shared, method)
        results = results_by_method[method]
        if method in failures or not results:
            summary_rows.append([method] + ["nan"] * 8
                                + [f"failed: {failures.get(method, 'no results')}"])
            continue
        write_run_outputs(out_dir / method, cfg, results, scene_names)
        reports = [MetricReport.from_dict(r["metrics"]) for r in results]
        row = [method]
        for col in METRIC_COLUMNS:
            mean, std = _aggregate([getattr(m, col) for m in reports])
            row += [_fmt(mean), _fmt(std)]
        summary_rows.append(row + ["ok"])
        stacked = np.stack([m.per_event_f for m in reports])
        for event in range(stacked.shape[1]):
            mean, std = _aggregate(stacked[:, event].tolist())
            per_event_rows.append([method, event, _fmt(mean), _fmt(std)])
        mean_conf = _nanmean(np.stack([m.confusion for m in reports]))
        write_confusion_csv(out_dir / f"confusion_{method}.csv", mean_conf, scene_names)

    header = ["method"]
    for col in METRIC_COLUMNS:
        header += [f"{col}_mean", f"{col}_std"]
    header.append("status")
    with open(out_dir / "summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(summary_rows)
    with open(out_dir / "per_event.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "event", "mean_f", "std_f"])
        writer.writerows(per_event_rows)
    (out_dir / "manifest.json").write_text(json.dumps(
        {"grid": str(grid_path), "methods": methods, "shared": shared.to_dict(),
         "scene_names": scene_names, "failures": failures},
        indent=2, sort_keys=True))
    return {"methods": methods, "failures": failures}


# -- gen-data ----------------------------------------------------------------

def load_spec_file(path) -> tuple[list[SceneSpec], int, int]:
    data = json.loads(Path(path).read_text())
    try:
        specs = [SceneSpec.from_dict(d) for d in data["scenes"]]
        return specs, int(data["frames"]), int(data["bins"])
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"{path}: spec file needs 'scenes', 'frames', 'bins': {exc}")


def gen_data(out_dir: Path, seed: int, clips_per_scene: int,
             spec_path=None, profile=None):
    if (spec_path is None) == (profile is None):
        raise ConfigError("give exactly one of --spec and --profile")
    if profile is not None:
        if profile == "fast":
            specs, frames, bins = fast_scene_specs(), 100, 16
        elif profile == "full":
            specs, frames, bins = default_scene_specs(), 500, 64
        else:
            raise ConfigError(f"unknown profile {profile!r}")
    else:
        specs, frames, bins = load_spec_file(spec_path)
    rng = np.random.default_rng(seed)
    clips = generate_dataset(specs, clips_per_scene, frames, bins, rng)
    save_dataset(out_dir, clips, specs, seed=seed)
    return len(clips)


# -- argument parsing ---------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scenesed", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset directory")
    p.add_argument("--spec", help="JSON scene-spec file")
    p.add_argument("--profile", choices=("fast", "full"),
                   help="built-in scene specification")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--clips-per-scene", type=int, default=100)

    p = sub.add_parser("run", help="run one experiment config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("grid", help="run the ablation grid")
    p.add_argument("--grid", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("plot", help="render plots for a run or grid directory")
    p.add_argument("--in", dest="in_dir", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "gen-data":
            n = gen_data(Path(args.out), args.seed, args.clips_per_scene,
                         spec_path=args.spec, profile=args.profile)
            print(f"wrote {n} clips to {args.out}")
        elif args.command == "run":
            cfg = load_experiment_config(args.config)
            out = Path(args.out) if args.out else default_out_root() / cfg.name
            run_experiment(cfg, out, workers=args.workers)
            print(f"run complete: {out}")
        elif args.command == "grid":
            out = Path(args.out) if args.out else default_out_root() / "grid"
            info = run_grid(args.grid, out, workers=args.workers)
            print(f"grid complete: {out} "
                  f"({len(info['methods']) - len(info['failures'])}/"
                  f"{len(info['methods'])} methods ok)")
            if info["failures"]:
                for method, msg in info["failures"].items():
                    print(f"  failed {method}: {msg}", file=sys.stderr)
        elif args.command == "plot":
            from .plots import emit_plots
            written = emit_plots(args.in_dir)
            print(f"wrote {len(written)} plots under {args.in_dir}")
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ScenesedError as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
