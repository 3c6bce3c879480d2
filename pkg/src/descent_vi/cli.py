"""Command line front end: ``descent-vi <command> CONFIG`` or ``descent-vi plot-data DIR``.

Exit codes: 0 success, 2 a requested solution was not found, 3 bad
configuration or missing inputs, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import importlib.metadata
import json
import logging
import math
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from .config import RunConfig, load_config
from .continuation import (
    BRANCHES,
    continue_to_vi,
    default_test_fields,
    random_test_fields,
    sample_vi_tests,
    sigma_hat,
    vi_residuals,
)
from .errors import ConfigurationError, NumericalError
from .flow import classify, flow_to_critical, part_norms
from .grid import Grid, eigenpairs, field_from_json, field_to_csv, field_to_json
from .model import check_h5, check_hypotheses, suggest_r1
from .multisol import probe_threads, solve_triple
from .penalty import PenaltyProblem

log = logging.getLogger("descent_vi")

EXIT_OK, EXIT_NOT_FOUND, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3, 4
COMMANDS = ("check", "solve-penalty", "triple", "continue")


# -- output helpers ----------------------------------------------------------


def _clean(obj):
    """JSON-safe copy: non-finite floats become strings, numpy scalars plain."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")


def write_field(directory: Path, label: str, grid: Grid, u) -> dict:
    (directory / f"field_{label}.csv").write_text(field_to_csv(grid, u))
    (directory / f"field_{label}.json").write_text(field_to_json(grid, u) + "\n")
    return {"csv": f"field_{label}.csv", "json": f"field_{label}.json"}


def versions() -> dict:
    try:
        own = importlib.metadata.version("artifact")
    except importlib.metadata.PackageNotFoundError:
        own = "unknown"
    return {"descent_vi": own, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__}


# -- commands ----------------------------------------------------------------


def cmd_check(cfg: RunConfig, out: Path) -> int:
    nl = cfg.model.nonlinearity
    report = check_hypotheses(nl, cfg.checks, cfg.check_samples)
    data = {"hypotheses": report.to_dict()}
    obstacle = cfg.model.obstacle
    data["obstacle"] = {**obstacle.describe(), "nonnegative": obstacle.nonnegative,
                        "zero_trace": obstacle.zero_trace}
    r1 = cfg.search.r1
    if r1 is None:
        r1 = suggest_r1(cfg.grid, nl)
        data["r1_source"] = "suggested"
    else:
        data["r1_source"] = "configured"
    h5 = check_h5(cfg.grid, nl, obstacle, r1)
    data["h5"] = h5.to_dict()
    write_json(out / "hypotheses.json", data)
    print(f"hypotheses {'passed' if report.passed else 'FAILED'}; "
          f"H5 at r1={r1:.6g} {'passed' if h5.passed else 'FAILED'}")
    return EXIT_OK


def _seed_field(grid: Grid, kind: str, amplitude: float) -> np.ndarray:
    pairs = eigenpairs(grid, 2)
    if kind == "phi1":
        return amplitude * pairs[0].field
    if kind == "-phi1":
        return -amplitude * pairs[0].field
    return amplitude * pairs[1].field


def cmd_solve_penalty(cfg: RunConfig, out: Path) -> int:
    pp = PenaltyProblem(cfg.grid, cfg.model, cfg.eps, cfg.equivariant)
    if cfg.penalty_seed == "search":
        search = BRANCHES[cfg.penalty_branch][0]
        slot = search(pp, cfg.search)
        files = write_field(out, slot.label, cfg.grid, slot.field) if slot.found else None
        write_json(out / "penalty_report.json",
                   {"eps": cfg.eps, "seed": "search", "slot": slot.to_dict(files and files["json"])})
        print(f"{slot.label}: {'found' if slot.found else 'not found (' + slot.reason + ')'}")
        return EXIT_OK if slot.found else EXIT_NOT_FOUND
    u0 = _seed_field(cfg.grid, cfg.penalty_seed, cfg.seed_amplitude)
    rep = flow_to_critical(pp, u0, step_policy=cfg.flow, trace_path=out / "trace.csv")
    cls = classify(cfg.grid, rep.field, cfg.search.part_tol)
    files = write_field(out, "flow", cfg.grid, rep.field)
    plus, minus = part_norms(cfg.grid, rep.field)
    write_json(out / "penalty_report.json", {
        "eps": cfg.eps, "seed": cfg.penalty_seed, "seed_amplitude": cfg.seed_amplitude,
        "termination": rep.reason, "iterations": rep.iterations, "energy": rep.energy,
        "initial_energy": rep.initial_energy, "grad_norm": rep.grad_norm,
        "classification": cls.value, "part_norms": {"plus": plus, "minus": minus},
        "max_energy_increase": rep.max_energy_increase, "field_file": files["json"],
        "trace_file": "trace.csv",
    })
    print(f"flow {rep.reason} after {rep.iterations} steps: {cls.value}, "
          f"grad {rep.grad_norm:.3e}")
    return EXIT_OK if rep.converged else EXIT_NOT_FOUND


def cmd_triple(cfg: RunConfig, out: Path) -> int:
    pp = PenaltyProblem(cfg.grid, cfg.model, cfg.eps, cfg.equivariant)
    report = solve_triple(pp, cfg.search)
    files = {}
    for label, slot in report.slots.items():
        if slot.found:
            files[label] = write_field(out, label, cfg.grid, slot.field)["json"]
        print(f"{label}: {'found' if slot.found else 'not found (' + slot.reason + ')'}")
    data = report.to_dict(files)
    data["eps"] = cfg.eps
    write_json(out / "triple_report.json", data)
    return EXIT_OK if report.all_found and report.distinct else EXIT_NOT_FOUND


def cmd_continue(cfg: RunConfig, out: Path) -> int:
    def progress(rec):
        log.info("stage %d eps=%.3e energy=%.6g feas_l2=%.3e (%s)",
                 rec.n, rec.eps, rec.energy, rec.feas_l2, rec.route)

    cert = continue_to_vi(cfg.grid, cfg.model, cfg.search, cfg.schedule, cfg.branch,
                          progress=progress)
    data = cert.to_dict()
    (out / "stage_table.csv").write_text(cert.table_csv())
    if cert.table:
        files = write_field(out, cfg.branch, cfg.grid, cert.field)
        data["field_file"] = files["json"]
        omega = cert.field
        # test fields are capped at ψ, so they stay admissible even when ω is not
        tests = default_test_fields(cfg.grid, cfg.model, omega)
        tests += random_test_fields(cfg.grid, cfg.model, omega, cfg.random_tests, cfg.seed)
        values = sample_vi_tests(cfg.grid, cfg.model, omega, tests)
        data["vi_tests"] = {"count": len(values), "min": min(values), "seed": cfg.seed}
        data["residuals"] = vi_residuals(cfg.grid, cfg.model, omega, cfg.schedule.tol_feas)
        if cfg.search.r1 is not None:
            data["sigma_hat"] = sigma_hat(cfg.grid, cfg.model.nonlinearity, cfg.search.r1)
    write_json(out / "certificate.json", data)
    print(f"{cfg.branch}: {cert.status} after {len(cert.table)} stages")
    return EXIT_OK if cert.ok else EXIT_NOT_FOUND


RUNNERS = {
    "check": cmd_check,
    "solve-penalty": cmd_solve_penalty,
    "triple": cmd_triple,
    "continue": cmd_continue,
}


def run(command: str, config_path, directory=None) -> int:
    """Execute one command; returns the exit code and writes a manifest."""
    started = datetime.datetime.now(datetime.timezone.utc)
    clock = time.perf_counter()
    try:
        cfg = load_config(config_path, directory)
        out = cfg.directory
        out.mkdir(parents=True, exist_ok=True)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cannot create output directory: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.getLogger("descent_vi").setLevel(cfg.verbosity.upper())
    try:
        write_json(out / "config.json", cfg.raw)
        code = RUNNERS[command](cfg, out)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        code = EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        code = EXIT_NUMERICAL
    except OSError as exc:
        print(f"cannot write output: {exc}", file=sys.stderr)
        code = EXIT_CONFIG
    write_json(out / "manifest.json", {
        "command": command,
        "config": str(config_path),
        "config_sha256": cfg.digest,
        "versions": versions(),
        "threads": probe_threads(),
        "started_utc": started.isoformat(timespec="seconds"),
        "wall_clock_seconds": round(time.perf_counter() - clock, 3),
        "exit_code": code,
    })
    return code


# -- plot data ---------------------------------------------------------------


def emit_plot_data(report_dir) -> list[Path]:
    """Write gnuplot-ready ``.dat`` files into ``report_dir/plot``.

    * ``profile_<label>.dat``: ``x value`` rows sorted by x (1D fields);
    * ``contour_<label>.dat``: ``x y value`` blocks separated by blank lines (2D);
    * ``feasibility_loglog.dat``: ``eps feas_l2`` rows from a stage table;
    * ``energy_iteration.dat``: ``step energy`` rows from a flow trace.
    """
    src = Path(report_dir)
    if not src.is_dir():
        raise ConfigurationError(f"no run directory at {src}")
    fields = sorted(src.glob("field_*.json"))
    table = src / "stage_table.csv"
    trace = src / "trace.csv"
    if not fields and not table.exists() and not trace.exists():
        raise ConfigurationError(f"{src} holds no fields, stage table or trace to plot")
    dest = src / "plot"
    dest.mkdir(exist_ok=True)
    written = []
    for path in fields:
        label = path.stem[len("field_"):]
        grid, u = field_from_json(path.read_text())
        if grid.dimension == 1:
            target = dest / f"profile_{label}.dat"
            order = np.argsort(grid.nodes[:, 0])
            rows = [f"{float(grid.nodes[i, 0])!r} {float(u[i])!r}" for i in order]
            target.write_text("# x value\n" + "\n".join(rows) + "\n")
        else:
            target = dest / f"contour_{label}.dat"
            nx, ny = grid.counts
            vals = u.reshape(grid.shape)
            xs, ys = grid.axes
            blocks = []
            for i in range(nx):
                blocks.append("\n".join(
                    f"{float(xs[i])!r} {float(ys[j])!r} {float(vals[i, j])!r}" for j in range(ny)))
            target.write_text("# x y value\n" + "\n\n".join(blocks) + "\n")
        written.append(target)
    if table.exists():
        with table.open() as fh:
            rows = list(csv.DictReader(fh))
        target = dest / "feasibility_loglog.dat"
        lines = [f"{r['eps']} {r['feas_l2']}" for r in rows]
        target.write_text("# eps feas_l2\n" + "\n".join(lines) + "\n")
        written.append(target)
    if trace.exists():
        with trace.open() as fh:
            rows = list(csv.DictReader(fh))
        target = dest / "energy_iteration.dat"
        lines = [f"{r['step']} {r['energy']}" for r in rows]
        target.write_text("# step energy\n" + "\n".join(lines) + "\n")
        written.append(target)
    return written


# -- entry point -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="descent-vi",
        description="Positive, negative and sign-changing solutions of obstacle problems.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "check": "sample the growth hypotheses and the seed-disk condition",
        "solve-penalty": "one penalty solution at the configured eps",
        "triple": "positive, negative and sign-changing penalty solutions",
        "continue": "follow one branch as eps -> 0 and certify the limit",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("config", help="TOML run configuration")
        p.add_argument("-o", "--output", help="output directory (overrides [output] directory)")
    p = sub.add_parser("plot-data", help="write gnuplot data files for a finished run")
    p.add_argument("run_dir", help="directory written by a previous command")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "plot-data":
        try:
            for path in emit_plot_data(args.run_dir):
                print(path)
        except ConfigurationError as exc:
            print(f"configuration error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        return EXIT_OK
    return run(args.command, args.config, args.output)


if __name__ == "__main__":
    sys.exit(main())
