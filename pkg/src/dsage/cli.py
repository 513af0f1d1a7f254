"""Command-line front end: experiment execution, summaries, and inspection.

Subcommands: run, summarize, heatmap, eval-surrogate, show-maze.
Exit codes: 0 success, 1 usage/config error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, latent, maze
from .archive import GridArchive, MeasureSpec, _split_csv
from .config import CONDITIONS, ConfigError, ExperimentConfig, load_experiment
from .loop import MEASURE_GRIDS, config_to_dict, run
from .ppm import write_heatmap
from .surrogate import Dataset, SurrogateModel

METRICS_HEADER = "evals,qd_score,coverage,outer_iter,wall_clock_s"


def write_metrics_csv(metrics, path) -> None:
    lines = [METRICS_HEADER]
    for row in metrics:
        lines.append(
            f"{row.evals},{row.qd_score!r},{row.coverage!r},"
            f"{row.outer_iter},{row.wall_clock_s:.3f}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def read_metrics_csv(path):
    rows = []
    with open(path) as f:
        header = f.readline().strip()
        if header != METRICS_HEADER:
            raise ValueError(f"unexpected metrics header in {path}: {header}")
        for line in f:
            evals, qd, cov, outer, wall = line.strip().split(",")
            rows.append({"evals": int(evals), "qd_score": float(qd),
                         "coverage": float(cov), "outer_iter": int(outer),
                         "wall_clock_s": float(wall)})
    return rows


def execute_trial(experiment: ExperimentConfig, index: int, verbose: bool = False) -> dict:
    """Run one trial and write its artifacts; returns the manifest dict."""
    cfg = experiment.trial_config(index)
    out = experiment.trial_dir(index)
    out.mkdir(parents=True, exist_ok=True)
    log = (lambda msg: print(f"[trial {index}] {msg}", flush=True)) if verbose else None
    manifest = {
        "condition": experiment.condition,
        "trial": index,
        "seed": cfg.seed,
        "package_version": __version__,
        "config": config_to_dict(cfg),
        "status": "ok",
        "error": None,
    }
    try:
        result = run(cfg, log_fn=log)
    except Exception as e:  # trial failures must not kill the experiment
        manifest["status"] = "failed"
        manifest["error"] = f"{type(e).__name__}: {e}"
        manifest["traceback"] = traceback.format_exc()
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
        return manifest
    write_metrics_csv(result.metrics, out / "metrics.csv")
    result.archive.to_csv(out / "archive.csv")
    artifacts = ["metrics.csv", "archive.csv"]
    if result.model is not None:
        result.model.save(out / "checkpoint.npz")
        artifacts.append("checkpoint.npz")
    if result.dataset is not None and len(result.dataset) > 0:
        result.dataset.save(out / "dataset.npz")
        artifacts.append("dataset.npz")
    manifest["final"] = {
        "evals": result.evals,
        "qd_score": result.qd_score,
        "coverage": result.coverage,
    }
    manifest["artifacts"] = artifacts
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest


def _trial_task(args):
    experiment, index = args
    return execute_trial(experiment, index)


def cmd_run(args) -> int:
    overrides = {
        "trials": args.trials,
        "budget": args.budget,
        "seed": args.seed,
        "out": args.out,
        "jobs": args.jobs,
    }
    experiment = load_experiment(args.config, overrides)
    trials = list(range(experiment.trials))
    if experiment.jobs > 1:
        with ProcessPoolExecutor(max_workers=experiment.jobs) as pool:
            manifests = list(pool.map(_trial_task, [(experiment, i) for i in trials]))
    else:
        manifests = [execute_trial(experiment, i, verbose=args.verbose) for i in trials]
    failures = [m for m in manifests if m["status"] != "ok"]
    summary = {
        "condition": experiment.condition,
        "trials": len(trials),
        "failed": [m["trial"] for m in failures],
        "out_dir": str(experiment.out_dir),
    }
    (experiment.out_dir / experiment.condition / "experiment.json").write_text(
        json.dumps(summary, indent=2) + "\n")
    for m in manifests:
        if m["status"] == "ok":
            print(f"trial {m['trial']}: qd_score {m['final']['qd_score']:.2f} "
                  f"coverage {m['final']['coverage']:.4f} evals {m['final']['evals']}")
        else:
            print(f"trial {m['trial']}: FAILED ({m['error']})", file=sys.stderr)
    return 2 if failures else 0


def collect_trials(dirs):
    """Find (condition, manifest, metrics rows) triples under the given dirs."""
    found = []
    for d in dirs:
        for metrics_path in sorted(Path(d).glob("**/metrics.csv")):
            manifest_path = metrics_path.parent / "manifest.json"
            if not manifest_path.exists():
                continue
            manifest = json.loads(manifest_path.read_text())
            if manifest.get("status") != "ok":
                continue
            found.append((manifest["condition"], manifest,
                          read_metrics_csv(metrics_path)))
    return found


def cmd_summarize(args) -> int:
    trials = collect_trials(args.dirs)
    if not trials:
        print("no completed trial metrics found", file=sys.stderr)
        return 2
    by_condition = {}
    for condition, manifest, rows in trials:
        by_condition.setdefault(condition, []).append((manifest, rows))

    def mean_se(values):
        arr = np.asarray(values, dtype=float)
        se = arr.std(ddof=1) / np.sqrt(len(arr)) if len(arr) > 1 else float("nan")
        return float(arr.mean()), float(se)

    header = ["condition", "trials", "qd_score_mean", "qd_score_se",
              "coverage_mean", "coverage_se"]
    if args.target is not None:
        header += ["evals_to_target_mean", "evals_to_target_se", "all_reached"]
    out_rows = []
    for condition in sorted(by_condition):
        entries = by_condition[condition]
        qd_mean, qd_se = mean_se([rows[-1]["qd_score"] for _, rows in entries])
        cov_mean, cov_se = mean_se([rows[-1]["coverage"] for _, rows in entries])
        row = [condition, len(entries), f"{qd_mean:.2f}", f"{qd_se:.2f}",
               f"{cov_mean:.4f}", f"{cov_se:.4f}"]
        if args.target is not None:
            evals_to, reached_all = [], True
            for manifest, rows in entries:
                hit = next((r["evals"] for r in rows if r["qd_score"] >= args.target), None)
                if hit is None:
                    hit = manifest["config"]["budget"]
                    reached_all = False
                evals_to.append(hit)
            e_mean, e_se = mean_se(evals_to)
            prefix = "" if reached_all else ">="
            row += [f"{prefix}{e_mean:.1f}", f"{e_se:.1f}", str(reached_all).lower()]
        out_rows.append(row)

    widths = [max(len(str(r[i])) for r in [header] + out_rows) for i in range(len(header))]
    for r in [header] + out_rows:
        print("  ".join(str(v).ljust(w) for v, w in zip(r, widths)))
    if args.out:
        lines = [",".join(header)] + [",".join(str(v) for v in r) for r in out_rows]
        Path(args.out).write_text("\n".join(lines) + "\n")
    return 0


def _spec_for_archive_csv(path, cells, measure_set) -> MeasureSpec:
    manifest_path = Path(path).parent / "manifest.json"
    if cells is None and manifest_path.exists():
        config = json.loads(manifest_path.read_text())["config"]
        lows, highs, _ = MEASURE_GRIDS[config["measure_set"]]
        return MeasureSpec(lows=lows, highs=highs, cells=tuple(config["archive_cells"]))
    lows, highs, default_cells = MEASURE_GRIDS[measure_set]
    return MeasureSpec(lows=lows, highs=highs, cells=tuple(cells or default_cells))


def cmd_heatmap(args) -> int:
    spec = _spec_for_archive_csv(args.archive, args.cells, args.measure_set)
    archive = GridArchive.from_csv(args.archive, spec)
    write_heatmap(archive, args.out)
    print(f"wrote {args.out} ({spec.cells[0]}x{spec.cells[1]}) and sidecar JSON")
    return 0


def cmd_eval_surrogate(args) -> int:
    model = SurrogateModel.load(args.checkpoint)
    datasets = [Dataset.load(p) for p in args.datasets]
    combined = Dataset()
    for ds in datasets:
        combined.extend(ds.records)
    sample = combined.records[0]
    if sample.measures.shape[0] != model.config.n_measures:
        print(f"dataset has {sample.measures.shape[0]} measures but checkpoint "
              f"expects {model.config.n_measures}", file=sys.stderr)
        return 2
    lows, highs = model.config.measure_lows, model.config.measure_highs
    spec = MeasureSpec(lows=lows, highs=highs, cells=tuple(args.cells))
    mae = model.evaluate_mae(combined)
    exact, region, manhattan = model.cell_accuracy(combined, spec, tuple(args.region))
    header = ["n_records", "objective_mae"]
    values = [str(len(combined)), f"{mae['objective']:.6f}"]
    for i, v in enumerate(mae["measures"]):
        header.append(f"measure_{i}_mae")
        values.append(f"{v:.6f}")
    header += ["exact_cell_pct", "region_pct", "mean_manhattan"]
    values += [f"{100 * exact:.4f}", f"{100 * region:.4f}", f"{manhattan:.4f}"]
    print("  ".join(f"{h}={v}" for h, v in zip(header, values)))
    if args.out:
        Path(args.out).write_text(",".join(header) + "\n" + ",".join(values) + "\n")
    return 0


def _genotype_from_archive(path, cell) -> np.ndarray:
    with open(path) as f:
        header = f.readline().strip().split(",")
        nd = sum(1 for h in header if h.startswith("cell_"))
        if nd != len(cell):
            raise ValueError(f"archive has {nd}-D cells, got {len(cell)} indices")
        for line in f:
            fields = _split_csv(line.strip())
            if tuple(int(v) for v in fields[:nd]) == tuple(cell):
                return np.array(json.loads(fields[2 * nd + 1]), dtype=float)
    raise LookupError(f"cell {tuple(cell)} is empty in {path}")


def cmd_show_maze(args) -> int:
    if args.genotype:
        genotype = np.array(json.loads(Path(args.genotype).read_text()), dtype=float)
    else:
        genotype = _genotype_from_archive(args.archive, args.cell)
    if genotype.size == maze.INTERIOR * maze.INTERIOR:
        env = maze.build_maze(np.rint(genotype).astype(np.int8))
    else:
        params = latent.DecoderParams.from_seed(args.decoder_seed, genotype.size)
        env = maze.build_maze(latent.decode(genotype, params))
    print(maze.render_text(env))
    if not env.solvable:
        print("unsolvable")
        return 0
    actions = maze.optimal_agent_policy(env)
    result = maze.simulate(env, maze.AgentSpec(kind="optimal", episodes=1),
                           np.random.default_rng(0))
    print(f"objective: {result.objective}")
    print(f"walls: {env.wall_count}  path_length: {result.path_lengths[0]:.0f}  "
          f"reward: {result.reward:.4f}")
    print("actions: " + "".join("FLR"[a] for a in actions))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dsage",
        description="Surrogate-assisted quality-diversity maze generation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute an experiment (multiple trials)")
    p.add_argument("--config", required=True, help="TOML experiment file")
    p.add_argument("--trials", type=int, help="override trial count")
    p.add_argument("--budget", type=int, help="override evaluation budget")
    p.add_argument("--seed", type=int, help="override master seed")
    p.add_argument("--out", help="override output directory")
    p.add_argument("--jobs", type=int, help="concurrent trials")
    p.add_argument("--verbose", action="store_true", help="per-iteration progress")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("summarize", help="aggregate metrics across trials")
    p.add_argument("dirs", nargs="+", help="experiment directories")
    p.add_argument("--target", type=float, help="QD-score target for evals-to-target")
    p.add_argument("--out", help="write the summary table as CSV")
    p.set_defaults(fn=cmd_summarize)

    p = sub.add_parser("heatmap", help="render an archive CSV as a PPM image")
    p.add_argument("archive", help="archive CSV path")
    p.add_argument("out", help="output .ppm path")
    p.add_argument("--cells", type=int, nargs=2, help="archive grid dims")
    p.add_argument("--measure-set", default="walls+path", choices=sorted(MEASURE_GRIDS))
    p.set_defaults(fn=cmd_heatmap)

    p = sub.add_parser("eval-surrogate", help="MAE / cell-accuracy report")
    p.add_argument("checkpoint", help="model checkpoint (.npz)")
    p.add_argument("datasets", nargs="+", help="dataset .npz files to combine")
    p.add_argument("--cells", type=int, nargs=2, default=(256, 162))
    p.add_argument("--region", type=int, nargs=2, default=(8, 6))
    p.add_argument("--out", help="write the report as CSV")
    p.set_defaults(fn=cmd_eval_surrogate)

    p = sub.add_parser("show-maze", help="print a maze with its optimal trace")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--genotype", help="JSON file with the genotype vector")
    src.add_argument("--archive", help="archive CSV to read a cell from")
    p.add_argument("--cell", type=int, nargs=2, help="cell index (with --archive)")
    p.add_argument("--decoder-seed", type=int, default=42,
                   help="decoder seed for latent genotypes")
    p.set_defaults(fn=cmd_show_maze)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "show-maze" and args.archive and not args.cell:
        parser.error("--archive requires --cell")
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except (LookupError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
