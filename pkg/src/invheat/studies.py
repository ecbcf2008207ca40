"""Benchmark studies over the closed-form test family.

Three studies, each emitting ``<output_dir>/<study>.csv``, a matching
``<study>.svg``, and a ``run_manifest`` text file:

* ``convergence_study``: errors of the recovered pair under simultaneous
  space and time refinement, with observed orders between consecutive
  grids.
* ``cost_study``: wall time against achieved source error per method,
  plus the cheapest run per method that meets the matching tolerance.
* ``arnoldi_decay_study``: Krylov matrix-function errors against a dense
  oracle as the rank grows, on the final-state data vector.

Rows run in a small thread pool (each row is an independent solve) and
are sorted deterministically before writing, so repeated runs of one
config produce identical CSV numbers except for wall times.  The error
normalization is the ``global-max`` denominator by default: it divides
the largest absolute error by the largest exact magnitude, which keeps
the measure meaningful on the nodal lines where the exact solution
vanishes and a pointwise quotient would stall at order one.
"""

from __future__ import annotations

import csv
import datetime as _dt
import math
import os
import platform
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields, replace

import numpy as np

from .grid import Grid
from .krylov import (apply_expm, apply_geom, choose_rank, dense_expm_oracle,
                     dense_geom_oracle, lanczos)
from .manufactured import (EXCLUDE_BELOW_DEFAULT, ManufacturedCase,
                           manufactured_case, measure_errors)
from .operator import ConvergenceError
from .solvers import METHODS, SolverConfig, solve
from .svgplot import MARKERS, PALETTE, Series, line_plot

__all__ = ["StudyConfig", "StudyResult", "convergence_study", "cost_study",
           "arnoldi_decay_study", "CSV_COLUMNS", "write_rows_csv"]

CSV_COLUMNS = ("method", "d", "N", "M", "k", "E_u", "E_p", "order_u",
               "order_p", "iters", "wall_time_s", "flags")

KRYLOV_METHODS = ("hybrid", "pure-arnoldi")

DECAY_COLUMNS = ("d", "N", "T", "k", "expm_rel_err", "geom_rel_err")

ORACLE_CAP = 4096


def _default_n_list(study: str, dim: int) -> tuple[int, ...]:
    if study == "decay":
        return (40,)
    if study == "cost" and dim >= 2:
        return (8, 16, 32, 40)
    return {1: (8, 16, 32, 64), 2: (8, 16, 32), 3: (8, 16)}[dim]


@dataclass(frozen=True)
class StudyConfig:
    """Resolved study parameters; one instance drives one study run.

    ``M_rule`` is the proportionality constant c of the space-time
    coupling M = round(T N / c), so smaller c means more time steps per
    grid.  The default c = T/2 gives M = 2N, which keeps the observed
    temporal orders inside the second-order band on the coarse end of
    the d = 2 and d = 3 grids; the pure space-matching c = T (M = N)
    overshoots there and c = 1 degenerates to M = 1 on desk-scale grids.
    """

    dimension: int = 1
    N_list: tuple[int, ...] | None = None
    M_rule: float = 0.05
    T: float = 0.1
    method_list: tuple[str, ...] | None = None
    k_rule: str = "N"
    fp_tol: float = 1e-10
    fp_max_iter: int = 500
    seed_mode: str = "per-operand"
    quad_panels: int | None = None
    output_dir: str = "bench_out"
    denominator: str = "global-max"
    exclude_below: float = EXCLUDE_BELOW_DEFAULT
    tolerance: float = 1e-3
    k_list: tuple[int, ...] = tuple(range(2, 61, 2))
    workers: int | None = None

    def __post_init__(self):
        if self.dimension not in (1, 2, 3):
            raise ValueError(f"dimension must be 1, 2 or 3, got {self.dimension}")
        if self.T <= 0 or self.M_rule <= 0:
            raise ValueError("T and M_rule must be positive")
        if self.fp_tol <= 0 or self.fp_max_iter < 1:
            raise ValueError("fp_tol must be positive and fp_max_iter >= 1")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if self.N_list is not None:
            if not self.N_list or any(int(n) < 2 for n in self.N_list):
                raise ValueError("N_list entries must be integers >= 2")
        if self.method_list is not None:
            unknown = set(self.method_list) - set(METHODS)
            if unknown:
                raise ValueError(f"unknown methods {sorted(unknown)}; "
                                 f"expected a subset of {METHODS}")
        if self.k_rule not in ("N", "auto"):
            try:
                if int(self.k_rule) < 1:
                    raise ValueError
            except (TypeError, ValueError):
                raise ValueError("k_rule must be 'N', 'auto', or a positive "
                                 f"integer, got {self.k_rule!r}") from None
        if not self.k_list or any(int(k) < 1 for k in self.k_list):
            raise ValueError("k_list entries must be positive integers")
        if self.workers is not None and self.workers < 1:
            raise ValueError("workers must be at least 1")

    @classmethod
    def from_mapping(cls, mapping: dict) -> "StudyConfig":
        """Build from config-file or CLI values, rejecting unknown keys."""
        known = {f.name for f in fields(cls)}
        unknown = set(mapping) - known
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}; "
                             f"expected a subset of {sorted(known)}")
        clean = {}
        for key, value in mapping.items():
            if value is None:
                continue
            if key in ("N_list", "k_list"):
                value = tuple(int(v) for v in value)
            elif key == "method_list":
                value = tuple(str(v) for v in value)
            elif key in ("dimension", "fp_max_iter", "quad_panels", "workers"):
                value = int(value)
            elif key in ("M_rule", "T", "fp_tol", "tolerance", "exclude_below"):
                value = float(value)
            elif key == "k_rule":
                value = str(value)
            clean[key] = value
        return cls(**clean)

    def resolved(self, study: str) -> "StudyConfig":
        """Fill study-dependent defaults (grid list, method list)."""
        n_list = self.N_list or _default_n_list(study, self.dimension)
        methods = self.method_list
        if methods is None:
            methods = METHODS if self.dimension == 1 else tuple(
                m for m in METHODS if m != "direct")
        return replace(self, N_list=tuple(int(n) for n in n_list),
                       method_list=tuple(methods))

    def steps(self, N: int) -> int:
        return max(1, round(self.T * N / self.M_rule))

    def rank(self, N: int) -> int | None:
        if self.k_rule == "N":
            return None
        if self.k_rule == "auto":
            return -1
        return int(self.k_rule)

    def solver_config(self, method: str, N: int,
                      op=None) -> SolverConfig:
        k = self.rank(N)
        if k == -1:
            k = choose_rank(op, self.T, 1e-6) if op is not None else None
        return SolverConfig(method=method, M=self.steps(N), k=k,
                            fp_tol=self.fp_tol, fp_max_iter=self.fp_max_iter,
                            seed_mode=self.seed_mode,
                            quad_panels=self.quad_panels)


@dataclass(frozen=True)
class StudyResult:
    """Rows as written, output paths, and any study-specific summary."""

    study: str
    rows: list[dict]
    csv_path: str
    svg_path: str | None
    manifest_path: str
    summary: dict

    @property
    def failed_rows(self) -> list[dict]:
        return [r for r in self.rows
                if any(str(f).startswith("error:") for f in _split_flags(r))]


def _split_flags(row: dict) -> list[str]:
    raw = row.get("flags") or ""
    if isinstance(raw, (list, tuple)):
        return list(raw)
    return [f for f in str(raw).split(";") if f]


def _run_row(case: ManufacturedCase, cfg: StudyConfig, method: str,
             N: int) -> dict:
    grid = Grid(cfg.dimension, N)
    prob = case.problem(grid)
    sc = cfg.solver_config(method, N, op=prob.op)
    row = {"method": method, "d": cfg.dimension, "N": N, "M": sc.M,
           "k": sc.rank_for(grid) if method in KRYLOV_METHODS else None,
           "E_u": None, "E_p": None, "order_u": None, "order_p": None,
           "iters": None, "wall_time_s": None, "flags": []}
    try:
        sol = solve(prob, sc)
    except (ConvergenceError, np.linalg.LinAlgError) as exc:
        row["flags"] = [f"error:{type(exc).__name__}"]
        return row
    rep = measure_errors(sol, case, exclude_below=cfg.exclude_below,
                         denominator=cfg.denominator)
    row.update(E_u=rep.E_u, E_p=rep.E_p, iters=rep.iters,
               wall_time_s=rep.wall_time_s, flags=list(rep.flags))
    return row


def _annotate_orders(rows: list[dict]) -> None:
    """Observed order between consecutive grids of the same method."""
    by_method: dict[str, list[dict]] = {}
    for row in rows:
        by_method.setdefault(row["method"], []).append(row)
    for group in by_method.values():
        group.sort(key=lambda r: r["N"])
        for prev, cur in zip(group, group[1:]):
            ratio = math.log(cur["N"] / prev["N"])
            for err_key, ord_key in (("E_u", "order_u"), ("E_p", "order_p")):
                a, b = prev[err_key], cur[err_key]
                if a and b and a > 0 and b > 0:
                    cur[ord_key] = math.log(a / b) / ratio


def _method_index(method: str) -> int:
    return METHODS.index(method) if method in METHODS else len(METHODS)


def _format_cell(key: str, value) -> str:
    if value is None:
        return ""
    if key in ("E_u", "E_p", "expm_rel_err", "geom_rel_err"):
        return format(float(value), ".17g")
    if key in ("order_u", "order_p", "wall_time_s"):
        return format(float(value), ".6g")
    if key == "flags":
        return ";".join(value) if isinstance(value, (list, tuple)) else str(value)
    return str(value)


def write_rows_csv(rows: list[dict], path: str,
                   columns: tuple[str, ...] = CSV_COLUMNS) -> None:
    with open(path, "w", encoding="ascii", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_format_cell(c, row.get(c)) for c in columns])


def _write_manifest(path: str, study: str, cfg: StudyConfig,
                    extra: dict) -> None:
    from . import __version__
    lines = [
        f"study = {study}",
        f"version = {__version__}",
        f"python = {platform.python_version()}",
        f"numpy = {np.__version__}",
        f"platform = {platform.platform()}",
        f"created_utc = {_dt.datetime.now(_dt.timezone.utc).isoformat()}",
    ]
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if isinstance(value, (list, tuple)):
            value = ",".join(str(v) for v in value)
        lines.append(f"{f.name} = {value}")
    for key, value in extra.items():
        lines.append(f"{key} = {value}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def _pool_map(fn, items, workers: int):
    if workers <= 1:
        return [fn(*item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda item: fn(*item), items))


def _run_table(cfg: StudyConfig, study: str, workers: int) -> list[dict]:
    case = manufactured_case(cfg.dimension, cfg.T)
    items = [(case, cfg, method, N)
             for method in cfg.method_list for N in cfg.N_list]
    rows = _pool_map(_run_row, items, workers)
    rows.sort(key=lambda r: (_method_index(r["method"]), r["N"]))
    _annotate_orders(rows)
    return rows


def _ensure_dir(cfg: StudyConfig) -> str:
    os.makedirs(cfg.output_dir, exist_ok=True)
    return cfg.output_dir


def _finalize(study: str, cfg: StudyConfig, rows: list[dict],
              svg: str | None, summary: dict) -> StudyResult:
    out = _ensure_dir(cfg)
    csv_path = os.path.join(out, f"{study}.csv")
    svg_path = os.path.join(out, f"{study}.svg") if svg is not None else None
    manifest_path = os.path.join(out, "run_manifest")
    columns = DECAY_COLUMNS if study == "decay" else CSV_COLUMNS
    write_rows_csv(rows, csv_path, columns)
    if svg_path is not None:
        with open(svg_path, "w", encoding="ascii") as fh:
            fh.write(svg)
    outputs = f"{study}.csv" + (f", {study}.svg" if svg_path else "")
    extra = {"rows": len(rows), "outputs": outputs}
    extra.update({f"summary_{k}": v for k, v in summary.items()})
    _write_manifest(manifest_path, study, cfg, extra)
    return StudyResult(study=study, rows=rows, csv_path=csv_path,
                       svg_path=svg_path, manifest_path=manifest_path,
                       summary=summary)


def _order_note(rows: list[dict], method: str, key: str) -> str:
    vals = [r[key] for r in rows if r["method"] == method and r[key]]
    return f" (order {vals[-1]:.2f})" if vals else ""


def convergence_study(cfg: StudyConfig) -> StudyResult:
    """Errors and observed orders under simultaneous refinement."""
    cfg = cfg.resolved("converge")
    rows = _run_table(cfg, "converge", cfg.workers or min(4, os.cpu_count() or 1))
    series = []
    for i, method in enumerate(cfg.method_list):
        sub = [r for r in rows if r["method"] == method and r["E_u"]]
        if not sub:
            continue
        color = PALETTE[i % len(PALETTE)]
        marker = MARKERS[i % len(MARKERS)]
        series.append(Series(
            label=f"{method} E_u" + _order_note(rows, method, "order_u"),
            xs=[r["N"] for r in sub], ys=[r["E_u"] for r in sub],
            color=color, marker=marker))
        series.append(Series(
            label=f"{method} E_p" + _order_note(rows, method, "order_p"),
            xs=[r["N"] for r in sub], ys=[r["E_p"] for r in sub],
            color=color, marker=marker, dash="6,3"))
    svg = line_plot(
        series, title=f"Convergence, d={cfg.dimension}",
        xlabel="N", ylabel="relative max error",
        note=f"M = round(T N / {cfg.M_rule:g}), k per {cfg.k_rule!r}",
    ) if series else None
    summary = {"orders_within_band": all(
        1.8 <= r[k] <= 2.2 for r in rows for k in ("order_u", "order_p")
        if r[k] is not None)}
    return _finalize("converge", cfg, rows, svg, summary)


def cost_study(cfg: StudyConfig) -> StudyResult:
    """Wall time against achieved error, matched at the tolerance.

    Rows run sequentially by default so timings do not contend for
    cores; the summary reports, per method, the cheapest grid whose
    source error meets the tolerance, and the ordinal ranking of those
    wall times.
    """
    cfg = cfg.resolved("cost")
    rows = _run_table(cfg, "cost", cfg.workers or 1)
    summary: dict = {}
    matched: dict[str, dict] = {}
    for method in cfg.method_list:
        sub = [r for r in rows if r["method"] == method and r["E_p"]]
        hit = next((r for r in sorted(sub, key=lambda r: r["N"])
                    if r["E_p"] <= cfg.tolerance), None)
        if hit is not None:
            matched[method] = hit
            summary[f"matched_{method}"] = (
                f"N={hit['N']} wall={hit['wall_time_s']:.4g}s "
                f"E_p={hit['E_p']:.3g}")
        else:
            summary[f"matched_{method}"] = "tolerance not reached"
    if matched:
        ranking = sorted(matched, key=lambda m: matched[m]["wall_time_s"])
        summary["ranking"] = " < ".join(ranking)
    series = [Series(label=method,
                     xs=[r["E_p"] for r in rows
                         if r["method"] == method and r["E_p"]],
                     ys=[r["wall_time_s"] for r in rows
                         if r["method"] == method and r["E_p"]])
              for method in cfg.method_list]
    series = [s for s in series if s.xs]
    svg = line_plot(
        series, title=f"Cost to reach an error, d={cfg.dimension}",
        xlabel="achieved E_p", ylabel="wall time [s]",
        note=f"matching tolerance {cfg.tolerance:g}",
    ) if series else None
    return _finalize("cost", cfg, rows, svg, summary)


def arnoldi_decay_study(cfg: StudyConfig) -> StudyResult:
    """Krylov matrix-function error against rank on the data vector."""
    cfg = cfg.resolved("decay")
    if len(cfg.N_list) != 1:
        raise ValueError("the rank sweep studies a single operator; pass "
                         f"one grid size, got N_list = {cfg.N_list}")
    N = cfg.N_list[0]
    case = manufactured_case(cfg.dimension, cfg.T)
    grid = Grid(cfg.dimension, N)
    op = case.operator(grid)
    if op.n_dof > ORACLE_CAP:
        raise ValueError(f"dense oracle capped at {ORACLE_CAP} unknowns, "
                         f"grid has {op.n_dof}")
    b = case.phi(grid)
    scale = b.norm()
    exact_expm = dense_expm_oracle(op, cfg.T, b)
    exact_geom = dense_geom_oracle(op, cfg.T, b)
    rows = []
    for k in sorted(set(int(k) for k in cfg.k_list)):
        k_eff = min(k, op.n_dof)
        basis = lanczos(op, b, k_eff)
        err_e = (apply_expm(basis, cfg.T) - exact_expm).norm() / scale
        err_g = (apply_geom(basis, cfg.T) - exact_geom).norm() / scale
        rows.append({"d": cfg.dimension, "N": N, "T": cfg.T, "k": k_eff,
                     "expm_rel_err": err_e, "geom_rel_err": err_g})
    svg = line_plot(
        [Series(label="exp(-TA) b", xs=[r["k"] for r in rows],
                ys=[r["expm_rel_err"] for r in rows]),
         Series(label="(I - exp(-TA))^{-1} b", xs=[r["k"] for r in rows],
                ys=[r["geom_rel_err"] for r in rows], dash="6,3")],
        title=f"Krylov error vs rank, d={cfg.dimension}, N={N}",
        xlabel="rank k", ylabel="relative error", xlog=False,
        note="operand: final-state data")
    at40 = next((r["expm_rel_err"] for r in rows if r["k"] >= 40), None)
    summary = {"expm_err_at_k40": at40}
    return _finalize("decay", cfg, rows, svg, summary)
