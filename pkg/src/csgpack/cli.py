"""``pack`` command-line front end: run, refine, inspect and render."""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config
from .errors import ConfigError, CsgError, NumericalError
from .geometry import decode_configuration, packing_density, packing_violation
from .groups import GROUPS, get_group
from .optimizer import Problem, RunRecord, optimize, refine
from .polygon import load_polygon, polygon_area, polygon_from_vertices
from .render import render_svg

RENDER_CELLS = 5


def resolve_workers(cfg_workers: int | None) -> int:
    env = os.environ.get("PACK_WORKERS")
    if env:
        try:
            value = int(env)
        except ValueError as exc:
            raise ConfigError(f"PACK_WORKERS must be an integer, got {env!r}") from exc
        if value < 1:
            raise ConfigError("PACK_WORKERS must be >= 1")
        return value
    return cfg_workers or os.cpu_count() or 1


def _problem(cfg: RunConfig) -> Problem:
    return Problem.create(get_group(cfg.group), cfg.load_polygon(), cfg.length_bound)


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _write_svg(path: Path, problem: Problem, x) -> None:
    if x is None:
        return
    cfg = decode_configuration(problem.group, problem.polygon, x, problem.length_bound, check_bounds=False)
    path.write_text(render_svg(cfg, RENDER_CELLS))


def _emit_run(run_dir: Path, problem: Problem, record: RunRecord) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    record.write_csv(run_dir / "log.csv")
    _write_json(run_dir / "summary.json", record.summary())
    _write_svg(run_dir / "best.svg", problem, record.best_x)


def cmd_run(config_path, iterations: int | None = None, workers: int | None = None) -> int:
    cfg = load_config(config_path)
    problem = _problem(cfg)
    hyper = cfg.hyper() if iterations is None else cfg.hyper(iterations=iterations)
    n_workers = workers or resolve_workers(cfg.workers)
    for seed in cfg.seeds:
        record = optimize(problem, hyper, seed, workers=n_workers)
        run_dir = cfg.out_dir() / str(seed)
        _emit_run(run_dir, problem, record)
        print(f"seed {seed}: best density {record.best_density:.10f} "
              f"({len(record.rows)} iterations, {record.wall_seconds:.1f} s) -> {run_dir}")
    return 0


def _read_summary(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read summary {path}: {exc}") from exc
    for key in ("best_design", "best_density", "problem", "seed"):
        if key not in data:
            raise ConfigError(f"summary {path} lacks {key!r}")
    return data


def cmd_refine(config_path, summary_path, runs: int | None = None, workers: int | None = None) -> int:
    cfg = load_config(config_path)
    summary = _read_summary(summary_path)
    n_runs = cfg.refine.runs if runs is None else runs
    if n_runs == 0 or not cfg.refine.enabled:
        print("refinement disabled or zero runs; nothing to do")
        return 0
    if summary["best_design"] is None:
        raise ConfigError(f"summary {summary_path} has no feasible design to refine")
    problem = _problem(cfg)
    hyper = cfg.hyper()
    out_dir = Path(summary_path).parent
    seed = summary["seed"]
    log_path = out_dir / "refine_log.csv"
    with open(log_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["run", "best_density"])

        def on_run(r, run, record):
            writer.writerow([r, repr(float(record.best_density))])
            fh.flush()

        result = refine(problem, hyper, summary["best_design"], n_runs, seed,
                        best_density=float(summary["best_density"]),
                        best_violation=float(summary.get("violation", float("nan"))),
                        workers=workers or resolve_workers(cfg.workers), iterations=cfg.refine.iterations,
                        callback=on_run)
    refined = dict(summary)
    refined.update(best_design=[float(v) for v in result.best_x], best_density=float(result.best_density),
                   violation=float(result.best_violation), refine_runs=len(result.run_best),
                   wall_seconds=float(summary.get("wall_seconds", 0.0)) + sum(r.wall_seconds for r in result.runs))
    _write_json(out_dir / "refine_summary.json", refined)
    _write_svg(out_dir / "refined.svg", problem, result.best_x)
    print(f"refined best density {result.best_density:.12f} after {len(result.run_best)} runs -> {log_path}")
    return 0


def _fmt(a) -> str:
    return np.array2string(np.asarray(a, dtype=float), precision=4, suppress_small=True)


def cmd_inspect(target: str) -> int:
    if target in GROUPS:
        g = GROUPS[target]
        print(f"plane group {g.name}: {g.order} ops, {g.crystal_system} crystal system, {g.lattice} lattice")
        for k, op in enumerate(g.ops):
            shift = ", ".join(str(v) for v in op.w)
            print(f"  op {k}: W = {op.W}  w = ({shift})")
        print(f"  design variables ({g.n_vars}), bounds for circumdiameter 1:")
        for v in g.design_variables(1.0):
            print(f"    {v.name:8s} [{v.lower:.6g}, {v.upper:.6g}]  {'periodic' if v.periodic else 'aperiodic'}")
        print(f"  extra constraints ({len(g.extra_constraints)}): "
              + (", ".join(name for name, _ in g.extra_constraints) or "none"))
        return 0
    try:
        poly = load_polygon(target)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"{target!r} is neither a plane group ({', '.join(GROUPS)}) "
                          f"nor a readable polygon: {exc}") from exc
    edges = np.linalg.norm(np.roll(poly.vertices, -1, axis=0) - poly.vertices, axis=1)
    print(f"polygon {target}: {poly.n_vertices} vertices")
    print(f"  area {polygon_area(poly):.4f}")
    print(f"  circumdiameter {poly.diameter:.4f}")
    print(f"  edge lengths {_fmt(edges)}")
    return 0


def cmd_render(summary_path, cells: int = RENDER_CELLS, out=None) -> int:
    summary = _read_summary(summary_path)
    if summary["best_design"] is None:
        raise ConfigError(f"summary {summary_path} has no design to render")
    prob = summary["problem"]
    group = get_group(prob["group"])
    poly = polygon_from_vertices(prob["polygon"])
    cfg = decode_configuration(group, poly, summary["best_design"], prob.get("length_bound", "2d"),
                               check_bounds=False)
    svg = render_svg(cfg, cells)
    target = Path(out) if out else Path(summary_path).with_suffix(".svg")
    target.write_text(svg)
    print(f"density {packing_density(cfg):.10f}, violation {packing_violation(cfg):.3e} -> {target}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pack", description="Densest plane-group packings of convex polygons")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="optimize once per configured seed")
    p.add_argument("config", type=Path)
    p.add_argument("--iterations", type=int, default=None, help="override hyperparams.iterations")
    p.add_argument("--workers", type=int, default=None)
    p = sub.add_parser("refine", help="shrinking-box restarts around a previous best")
    p.add_argument("config", type=Path)
    p.add_argument("summary", type=Path)
    p.add_argument("--runs", type=int, default=None, help="override refine.runs")
    p.add_argument("--workers", type=int, default=None)
    p = sub.add_parser("inspect", help="describe a plane group or a polygon file")
    p.add_argument("target")
    p = sub.add_parser("render", help="draw the best design of a summary as SVG")
    p.add_argument("summary", type=Path)
    p.add_argument("--cells", type=int, default=RENDER_CELLS)
    p.add_argument("-o", "--out", type=Path, default=None)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args.config, args.iterations, args.workers)
        if args.command == "refine":
            return cmd_refine(args.config, args.summary, args.runs, args.workers)
        if args.command == "inspect":
            return cmd_inspect(args.target)
        return cmd_render(args.summary, args.cells, args.out)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (CsgError, OSError, KeyError, ValueError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
