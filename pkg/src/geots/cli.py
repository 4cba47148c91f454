"""``geots`` command line: synth, clean, fill, train, forecast, evaluate, report, run.

Errors go to stderr as one JSON object and the exit code is nonzero
(2 for usage and configuration problems, 1 for everything else).
"""
from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .config import ConfigError, ProjectConfig, load_config, load_synth
from .ktif import ImputationReport, fill_gaps, train_all
from .manifest import directory_outputs, write_manifest
from .metrics import read_metrics_csv
from .outliers import detect_outliers_3iqr, remove_outliers, write_report_csv
from .pipeline import (ExperimentPlan, evaluate_predictions, forecast_checkpoints,
                       plot_comparison, run_experiment, train_models)
from .series import CsvLayout, TimeSeries, read_csv, write_csv


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        _emit_error("usage", message)
        sys.exit(2)


def _emit_error(kind: str, message: str, **fields) -> None:
    print(json.dumps({"error": kind, "message": message, **fields}), file=sys.stderr)


def _build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="geots", description="Geodetic time-series cleaning, gap filling and forecasting.")
    p.add_argument("--version", action="version", version=f"geots {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, seed=True):
        sp.add_argument("--config", type=Path, help="project config (YAML); defaults apply when omitted")
        if seed:
            sp.add_argument("--seed", type=int, help="override the master seed")

    sp = sub.add_parser("synth", help="generate a synthetic fixture series")
    sp.add_argument("--spec", type=Path, required=True, help="fixture recipe (YAML)")
    sp.add_argument("--out", type=Path, required=True)
    sp.add_argument("--seed", type=int)

    sp = sub.add_parser("clean", help="mask 3*IQR outliers")
    common(sp, seed=False)
    sp.add_argument("--in", dest="inp", type=Path, required=True)
    sp.add_argument("--out", type=Path, required=True)
    sp.add_argument("--report", type=Path, help="flagged-value listing (CSV)")

    sp = sub.add_parser("fill", help="impute missing values with KTIF")
    common(sp)
    sp.add_argument("--in", dest="inp", type=Path, required=True)
    sp.add_argument("--out", type=Path, required=True)
    sp.add_argument("--report", type=Path, help="per-imputation listing (CSV)")

    for name, text in (("train", "fit the configured forecasters"),
                       ("forecast", "forecast the test range from saved checkpoints"),
                       ("run", "train, forecast, evaluate and plot in one go")):
        sp = sub.add_parser(name, help=text)
        common(sp)
        sp.add_argument("--in", dest="inp", type=Path, required=True, action="append",
                        help="gap-free series (repeatable)")
        sp.add_argument("--out-dir", type=Path)
        if name != "forecast":
            sp.add_argument("--workers", type=int)

    for name, text in (("evaluate", "score predictions into metrics.csv"),
                       ("report", "write comparison.svg and report.md")):
        sp = sub.add_parser(name, help=text)
        common(sp, seed=False)
        sp.add_argument("--out-dir", type=Path)
    sub.choices["report"].add_argument("--dataset", help="dataset label to plot (default: first)")
    return p


def _config(args) -> ProjectConfig:
    cfg = load_config(getattr(args, "config", None))
    update = {}
    if getattr(args, "seed", None) is not None:
        update["seed"] = args.seed
    if getattr(args, "workers", None) is not None:
        if args.workers < 1:
            raise UsageError("--workers must be >= 1")
        update["workers"] = args.workers
    return cfg.model_copy(update=update) if update else cfg


def _layout(cfg: ProjectConfig) -> CsvLayout:
    return CsvLayout(epoch_column=cfg.data.epoch_column, delimiter=cfg.data.delimiter)


def _require(path: Path) -> Path:
    if not path.is_file():
        raise FileNotFoundError(f"input file not found: {path}")
    return path


def _distinct(inp: Path, *outs: Path | None) -> None:
    for o in outs:
        if o is not None and o.resolve() == inp.resolve():
            raise UsageError(f"output {o} would overwrite input {inp}; inputs are never modified")


def _file_manifest(out: Path, command: str, cfg: dict | None, seeds: dict, inputs, outputs) -> None:
    write_manifest(out.with_name(out.stem + ".manifest.json"), command, cfg, seeds, inputs, outputs)


def _out_dir(args, cfg: ProjectConfig) -> Path:
    return Path(args.out_dir) if args.out_dir is not None else Path(cfg.output_dir)


def _datasets(paths: Sequence[Path], cfg: ProjectConfig) -> dict[str, TimeSeries]:
    out = {}
    for p in paths:
        name = cfg.data.dataset if (cfg.data.dataset and len(paths) == 1) else p.stem
        if name in out:
            raise UsageError(f"two inputs map to dataset name {name!r}")
        out[name] = read_csv(_require(p), _layout(cfg))
    return out


def cmd_synth(args) -> dict:
    spec = load_synth(_require(args.spec))
    series = spec.generate(args.seed)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(series, args.out)
    seed = spec.seed if args.seed is None else args.seed
    _file_manifest(args.out, "synth", spec.model_dump(), {"seed": seed}, [args.spec], [args.out])
    return {"out": str(args.out), "steps": series.n_steps, "channels": list(series.channels)}


def cmd_clean(args) -> dict:
    cfg = _config(args)
    _distinct(args.inp, args.out, args.report)
    series = read_csv(_require(args.inp), _layout(cfg))
    report = detect_outliers_3iqr(series, cfg.outliers.k)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        cleaned = remove_outliers(series, report)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(cleaned, args.out)
    outputs = [args.out]
    if args.report is not None:
        write_report_csv(series, report, args.report)
        outputs.append(args.report)
    _file_manifest(args.out, "clean", cfg.model_dump(mode="json"), {}, [args.inp], outputs)
    return {"out": str(args.out), "flagged": report.n_flagged,
            "per_channel": {f.channel: int(f.flagged.size) for f in report.fences},
            "warnings": [str(w.message) for w in caught]}


def cmd_fill(args) -> dict:
    cfg = _config(args)
    _distinct(args.inp, args.out, args.report)
    series = read_csv(_require(args.inp), _layout(cfg))
    models, logs = train_all(series, cfg.ktif_config())
    filled, report = fill_gaps(models, series) if models else (series, None)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(filled, args.out)
    outputs = [args.out]
    if args.report is not None:
        (report or ImputationReport()).write_csv(args.report)
        outputs.append(args.report)
    _file_manifest(args.out, "fill", cfg.model_dump(mode="json"), {"seed": cfg.seed},
                   [args.inp], outputs)
    n = 0 if report is None else len(report)
    rejected = 0 if report is None else sum(not r["accepted"] for r in report.rows)
    return {"out": str(args.out), "imputed": n, "gate_rejected": rejected,
            "channels": sorted(models)}


def _plan(args, cfg: ProjectConfig) -> ExperimentPlan:
    return ExperimentPlan(_datasets(args.inp, cfg), cfg.models, cfg.split, _out_dir(args, cfg),
                          seed=cfg.seed, weights=cfg.wqe_weights, workers=cfg.workers)


def _dir_manifest(out_dir: Path, command: str, cfg: ProjectConfig, inputs, extra=None) -> None:
    write_manifest(out_dir / f"manifest_{command}.json", command, cfg.model_dump(mode="json"),
                   {"seed": cfg.seed}, inputs, directory_outputs(out_dir), root=out_dir, extra=extra)


def cmd_train(args) -> dict:
    cfg = _config(args)
    plan = _plan(args, cfg)
    plan.out_dir.mkdir(parents=True, exist_ok=True)
    outcomes = train_models(plan)
    failed = [{"model": o.model, "dataset": o.dataset, "error": o.error} for o in outcomes if o.error]
    _dir_manifest(plan.out_dir, "train", cfg, args.inp, {"failed": failed})
    return {"out_dir": str(plan.out_dir), "fits": len(outcomes), "failed": failed}


def cmd_forecast(args) -> dict:
    cfg = _config(args)
    out_dir = _out_dir(args, cfg)
    if not (out_dir / "checkpoints").is_dir():
        raise FileNotFoundError(f"no checkpoints under {out_dir}; run `geots train` first")
    models = forecast_checkpoints(_datasets(args.inp, cfg), out_dir)
    _dir_manifest(out_dir, "forecast", cfg, args.inp)
    return {"out_dir": str(out_dir), "models": models}


def cmd_evaluate(args) -> dict:
    cfg = _config(args)
    out_dir = _out_dir(args, cfg)
    rows = evaluate_predictions(out_dir, cfg.wqe_weights)
    _dir_manifest(out_dir, "evaluate", cfg, [])
    return {"metrics": str(out_dir / "metrics.csv"), "rows": len(rows),
            "failed_rows": sum(r.failed for r in rows)}


def _markdown(rows) -> str:
    lines = ["| model | dataset | horizon | R2 | RMSE | MAE | WQE |",
             "|---|---|---|---|---|---|---|"]

    def f(x):
        return "failed" if not np.isfinite(x) else f"{x:.4g}"

    for r in rows:
        lines.append(f"| {r.model} | {r.dataset} | {r.horizon} | {f(r.r2)} | {f(r.rmse)} "
                     f"| {f(r.mae)} | {f(r.wqe)} |")
    best = {}
    for r in rows:
        if np.isfinite(r.wqe):
            key = (r.dataset, r.horizon)
            if key not in best or r.wqe < best[key].wqe:
                best[key] = r
    lines += ["", "Lowest WQE per dataset and horizon:", ""]
    lines += [f"- {d} / {h}: {r.model} ({r.wqe:.4g})" for (d, h), r in sorted(best.items())]
    return "\n".join(lines) + "\n"


def cmd_report(args) -> dict:
    cfg = _config(args)
    out_dir = _out_dir(args, cfg)
    metrics = out_dir / "metrics.csv"
    if not metrics.is_file():
        raise FileNotFoundError(f"{metrics} not found; run `geots evaluate` first")
    svg = plot_comparison(out_dir, args.dataset)
    md = out_dir / "report.md"
    md.write_text("# Forecast comparison\n\n" + _markdown(read_metrics_csv(metrics)), encoding="utf-8")
    _dir_manifest(out_dir, "report", cfg, [])
    return {"plot": str(svg), "report": str(md)}


def cmd_run(args) -> dict:
    cfg = _config(args)
    plan = _plan(args, cfg)
    rows = run_experiment(plan)
    md = plan.out_dir / "report.md"
    md.write_text("# Forecast comparison\n\n" + _markdown(rows), encoding="utf-8")
    write_manifest(plan.out_dir / "manifest.json", "run", cfg.model_dump(mode="json"),
                   {"seed": cfg.seed}, args.inp, directory_outputs(plan.out_dir), root=plan.out_dir)
    return {"out_dir": str(plan.out_dir), "rows": len(rows), "failed_rows": sum(r.failed for r in rows)}


COMMANDS = {"synth": cmd_synth, "clean": cmd_clean, "fill": cmd_fill, "train": cmd_train,
            "forecast": cmd_forecast, "evaluate": cmd_evaluate, "report": cmd_report, "run": cmd_run}


def main(argv: Sequence[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        summary = COMMANDS[args.command](args)
    except ConfigError as exc:
        _emit_error("config", exc.message, source=exc.source, key=exc.key)
        return 2
    except UsageError as exc:
        _emit_error("usage", str(exc))
        return 2
    except FileNotFoundError as exc:
        _emit_error("missing-input", str(exc))
        return 1
    except Exception as exc:
        _emit_error(type(exc).__name__, str(exc))
        return 1
    print(json.dumps(summary, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
