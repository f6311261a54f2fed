"""Command-line front end: ``nopo analytic | run | sweep | validate``.

Exit codes
----------
0  success
2  configuration or usage error
3  a stochastic trajectory diverged
4  density-matrix trace drift
5  other numerical failure (no convergence, singular system, ...)
6  ``validate`` ran but at least one check failed

The worker count for stochastic ensembles is read from ``NOPO_WORKERS``.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import analytic
from .config import Config, load_config
from .errors import AboveThresholdOnly, ConfigError, Diverged, NopoError, TraceDrift

__all__ = ["main", "EXIT_OK", "EXIT_CONFIG", "EXIT_DIVERGED", "EXIT_TRACE", "EXIT_NUMERIC",
           "EXIT_VALIDATE"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_TRACE = 4
EXIT_NUMERIC = 5
EXIT_VALIDATE = 6

RESULT_COLUMNS = ["sweep_value", "time", "n_mean", "n_err", "g2", "g2_err", "q", "q_err",
                  "hz1n", "hz1n_err", "hz1", "hz1_err", "n_diverged", "n_negative_floor",
                  "trace_drift", "imag_residue", "top_population", "error"]
ANALYTIC_COLUMNS = ["sweep_value", "p", "j", "n_mean", "g2", "q", "q_linearized",
                    "hz1n_linearized"]

ERROR_MODEL = ("standard errors: trajectory-level variance of time-window averages; ratio "
               "statistics (g2, Q, HZ1/n) use the first-order delta method")


def fmt(x) -> str:
    """Locale-independent text for a CSV cell; floats keep 17 significant digits."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return format(x, ".17g")
    return str(x)


def write_csv(path, columns, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(row.get(c)) for c in columns])


def write_matrix(path, mat) -> None:
    mat = np.asarray(mat)
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for line in mat:
            if np.iscomplexobj(mat):
                w.writerow([f"{fmt(v.real)}{'+' if v.imag >= 0 else '-'}{fmt(abs(v.imag))}j"
                            for v in line])
            else:
                w.writerow([fmt(v) for v in line])


def metadata_path(out) -> Path:
    out = Path(out)
    return out.with_name(out.name + ".meta.json")


def write_metadata(out, cfg: Config, command: str, wall: float, extra=None) -> Path:
    import numba

    from . import __version__
    doc = {
        "command": command,
        "config": cfg.to_dict(),
        "seed": cfg.run["seed"],
        "versions": {"nopo": __version__, "numpy": np.__version__, "numba": numba.__version__,
                     "python": platform.python_version()},
        "wall_time_s": wall,
        "error_model": ERROR_MODEL,
    }
    if cfg.run["engine"] == "idler-psde" and cfg.run["gauge"] == "standard":
        doc["flags"] = ["ComplexSqrtBranch: principal-branch sqrt(kappa a_p / 2)"]
    if extra:
        doc.update(extra)
    path = metadata_path(out)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def record_row(rec, value, error=None) -> dict:
    s = rec.stats if rec is not None else {}
    d = rec.diagnostics if rec is not None else {}
    return {
        "sweep_value": value,
        "time": rec.time if rec is not None else "steady",
        "n_mean": s.get("n_mean"), "n_err": s.get("n_mean_err"),
        "g2": s.get("g2"), "g2_err": s.get("g2_err"),
        "q": s.get("mandel_q"), "q_err": s.get("mandel_q_err"),
        "hz1n": s.get("hz1_normalized"), "hz1n_err": s.get("hz1_normalized_err"),
        "hz1": s.get("hz1"), "hz1_err": s.get("hz1_err"),
        "n_diverged": d.get("n_diverged"), "n_negative_floor": d.get("n_negative_floor"),
        "trace_drift": d.get("trace_drift"), "imag_residue": d.get("imag_residue"),
        "top_population": d.get("top_population"),
        "error": error,
    }


# ---------------------------------------------------------------------------
# subcommands


def analytic_rows(cfg: Config) -> list:
    axis, values = cfg.sweep["axis"], cfg.sweep["values"]
    j0 = cfg.network["coupling_j"]
    p0 = cfg.run["p"]
    grid = values if values else [p0 if axis == "p" else j0]
    rows = []
    for v in grid:
        p, j = (v, j0) if axis == "p" else (p0, v)
        par = cfg.params(p)
        st = analytic.analytic_stats(par)
        try:
            q_lin = analytic.linearized_q(p)
        except AboveThresholdOnly:
            q_lin = math.nan
        try:
            hz_lin = analytic.linearized_hz1_closed_form(p, j) if j > 0 else math.nan
        except AboveThresholdOnly:
            hz_lin = math.nan
        rows.append({"sweep_value": v, "p": p, "j": j, "n_mean": st["n_mean"], "g2": st["g2"],
                     "q": st["mandel_q"], "q_linearized": q_lin, "hz1n_linearized": hz_lin})
    return rows


def cmd_analytic(cfg: Config, out) -> int:
    t0 = time.perf_counter()
    rows = analytic_rows(cfg)
    write_csv(out, ANALYTIC_COLUMNS, rows)
    write_metadata(out, cfg, "analytic", time.perf_counter() - t0)
    return EXIT_OK


def _write_slices(out, rec) -> list:
    if rec is None or not rec.slices:
        return []
    out = Path(out)
    paths = []
    for name, mat in rec.slices.items():
        p = out.with_name(f"{out.stem}_{name}_slice.csv")
        write_matrix(p, mat)
        paths.append(str(p))
    return paths


def cmd_run(cfg: Config, out) -> int:
    from .runner import run
    t0 = time.perf_counter()
    plan = cfg.plan()
    value = cfg.run["p"]
    try:
        records = run(plan)
    except (Diverged, TraceDrift) as exc:
        rows = [record_row(r, value) for r in exc.partial]
        rows.append(record_row(None, value, f"{type(exc).__name__}: {exc}"))
        write_csv(out, RESULT_COLUMNS, rows)
        write_metadata(out, cfg, "run", time.perf_counter() - t0, {"error": str(exc)})
        raise
    write_csv(out, RESULT_COLUMNS, [record_row(r, value) for r in records])
    slices = _write_slices(out, records[-1])
    write_metadata(out, cfg, "run", time.perf_counter() - t0, {"slices": slices} if slices else None)
    return EXIT_OK


def cmd_sweep(cfg: Config, out) -> int:
    from .runner import sweep
    t0 = time.perf_counter()
    values = cfg.sweep["values"]
    if not values:
        raise ConfigError("sweep.values is empty")
    rows = sweep(cfg.plan(), cfg.sweep["axis"], values)
    write_csv(out, RESULT_COLUMNS, [record_row(r.record, r.value, r.error) for r in rows])
    write_metadata(out, cfg, "sweep", time.perf_counter() - t0,
                   {"point_seeds": [r.seed for r in rows]})
    return EXIT_OK


def cmd_validate(out=None, seed=0) -> int:
    from .validate import run_checks
    results = run_checks(seed=seed)
    ok = True
    for name, passed, detail in results:
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
    if out is not None:
        write_csv(out, ["check", "passed", "detail"],
                  [{"check": n, "passed": p, "detail": d} for n, p, d in results])
    return EXIT_OK if ok else EXIT_VALIDATE


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nopo", description="Photon statistics of coupled NOPOs.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, helptext in (("analytic", "closed-form curves"), ("run", "one run plan"),
                           ("sweep", "independent runs along p or j")):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("config", help="TOML or JSON configuration (or a metadata document)")
        sp.add_argument("--p", type=float, help="override run.p")
        sp.add_argument("--engine", help="override run.engine")
        sp.add_argument("--seed", type=int, help="override run.seed")
        sp.add_argument("--out", help="override output.path")
    sp = sub.add_parser("validate", help="reduced-scale cross-engine checks")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", help="optional CSV of check results")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "validate":
            return cmd_validate(args.out, args.seed)
        cfg = load_config(args.config)
        cfg = cfg.override(run__p=args.p, run__engine=args.engine, run__seed=args.seed,
                           output__path=args.out)
        out = cfg.output["path"]
        if args.command == "analytic":
            return cmd_analytic(cfg, out)
        if args.command == "run":
            return cmd_run(cfg, out)
        return cmd_sweep(cfg, out)
    except ConfigError as exc:
        print(f"nopo: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Diverged as exc:
        print(f"nopo: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except TraceDrift as exc:
        print(f"nopo: trace drift: {exc}", file=sys.stderr)
        return EXIT_TRACE
    except NopoError as exc:
        print(f"nopo: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
