"""Command-line harness for solving and benchmarking.

Subcommands: ``solve`` (one problem, one method), ``converge``, ``cost``
and ``decay`` (the three studies), and ``selftest`` (fast invariant
checks).  Every study key can live in a JSON config file and each key is
overridable by the flag of the same name; precedence is flag over file
over default.

Exit codes: 0 on success, 1 when a solver or check failed, 2 for config
or usage errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .grid import Grid, inner_product
from .krylov import (DenseApplier, apply_expm, apply_geom,
                     dense_expm_oracle, dense_geom_oracle, lanczos)
from .manufactured import manufactured_case, measure_errors
from .operator import ConvergenceError, solve_spd
from .quadrature import convolve_richardson
from .solvers import METHODS, SolverConfig, solve
from .studies import (StudyConfig, arnoldi_decay_study, convergence_study,
                      cost_study)
from .timestepping import SourceTerm, cn_solve_ivp

__all__ = ["main"]

_LIST_KEYS = ("N_list", "method_list", "k_list")
_INT_KEYS = ("dimension", "fp_max_iter", "quad_panels", "workers")
_FLOAT_KEYS = ("M_rule", "T", "fp_tol", "tolerance", "exclude_below")
_STR_KEYS = ("k_rule", "seed_mode", "output_dir", "denominator")
CONFIG_KEYS = _LIST_KEYS + _INT_KEYS + _FLOAT_KEYS + _STR_KEYS


def _parse_list(text: str) -> list[str]:
    return [part.strip() for part in str(text).split(",") if part.strip()]


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="FILE",
                        help="JSON file with study keys")
    for key in _LIST_KEYS:
        parser.add_argument(f"--{key}", metavar="A,B,...",
                            help=f"comma-separated {key}")
    for key in _INT_KEYS:
        parser.add_argument(f"--{key}", type=int)
    for key in _FLOAT_KEYS:
        parser.add_argument(f"--{key}", type=float)
    for key in _STR_KEYS:
        parser.add_argument(f"--{key}")


def _resolve_config(args: argparse.Namespace,
                    defaults: dict | None = None) -> StudyConfig:
    mapping: dict = dict(defaults or {})
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            loaded = json.load(fh)
        if not isinstance(loaded, dict):
            raise ValueError("config file must hold one JSON object")
        mapping.update(loaded)
    for key in CONFIG_KEYS:
        value = getattr(args, key, None)
        if value is None:
            continue
        mapping[key] = _parse_list(value) if key in _LIST_KEYS else value
    return StudyConfig.from_mapping(mapping)


def _print_rows(result) -> None:
    for row in result.rows:
        flags = row.get("flags") or []
        flag_txt = ";".join(flags) if isinstance(flags, list) else flags
        cells = [f"{key}={row[key]}" for key in ("method", "N", "M", "k")
                 if row.get(key) is not None]
        for key in ("E_u", "E_p", "expm_rel_err", "geom_rel_err"):
            if row.get(key) is not None:
                cells.append(f"{key}={row[key]:.4e}")
        if row.get("wall_time_s") is not None:
            cells.append(f"wall={row['wall_time_s']:.3f}s")
        if flag_txt:
            cells.append(f"[{flag_txt}]")
        print("  " + "  ".join(str(c) for c in cells))


def _finish_study(result) -> int:
    _print_rows(result)
    for key, value in result.summary.items():
        print(f"{key}: {value}")
    wrote = [p for p in (result.csv_path, result.svg_path,
                         result.manifest_path) if p]
    print("wrote " + ", ".join(wrote))
    failed = result.failed_rows
    if failed:
        print(f"{len(failed)} row(s) failed", file=sys.stderr)
        return 1
    return 0


def _cmd_converge(args) -> int:
    return _finish_study(convergence_study(_resolve_config(args)))


def _cmd_cost(args) -> int:
    return _finish_study(cost_study(_resolve_config(args)))


def _cmd_decay(args) -> int:
    cfg = _resolve_config(args, defaults={"dimension": 2})
    return _finish_study(arnoldi_decay_study(cfg))


def _cmd_solve(args) -> int:
    cfg = _resolve_config(args)
    N = args.N
    case = manufactured_case(cfg.dimension, cfg.T)
    grid = Grid(cfg.dimension, N)
    prob = case.problem(grid)
    sc = cfg.solver_config(args.method, N, op=prob.op)
    if args.M is not None:
        sc = SolverConfig(method=args.method, M=args.M, k=sc.k,
                          fp_tol=sc.fp_tol, fp_max_iter=sc.fp_max_iter,
                          seed_mode=sc.seed_mode, quad_panels=sc.quad_panels)
    try:
        sol = solve(prob, sc)
    except ConvergenceError as exc:
        print(f"solver failed: {exc}", file=sys.stderr)
        return 1
    rep = measure_errors(sol, case, exclude_below=cfg.exclude_below,
                         denominator=cfg.denominator)
    print(f"method={args.method} d={cfg.dimension} N={N} M={sc.M} "
          f"k={sc.rank_for(grid) if args.method in ('hybrid', 'pure-arnoldi') else '-'}")
    print(f"E_u={rep.E_u:.6e}  E_p={rep.E_p:.6e}  "
          f"(denominator={cfg.denominator})")
    for key in ("iterations", "fp_residual", "contraction_measured",
                "self_consistency", "wall_time_s", "flags"):
        if key in sol.diagnostics and sol.diagnostics[key] not in (None, []):
            print(f"{key}: {sol.diagnostics[key]}")
    os.makedirs(cfg.output_dir, exist_ok=True)
    dump = os.path.join(cfg.output_dir, "solution.npz")
    times = np.array([sol.u.time(m) for m in range(sol.u.steps + 1)])
    np.savez(dump, v0=sol.v0.values, p=sol.source.values,
             u_states=sol.u.states, times=times)
    print(f"wrote {dump}")
    return 0


def _check(name: str, ok: bool, detail: str) -> bool:
    print(f"{'PASS' if ok else 'FAIL'}  {name}  ({detail})")
    return ok


def _cmd_selftest(args) -> int:
    rng = np.random.default_rng(20260818)
    ok = True

    for d in (1, 2, 3):
        case = manufactured_case(d, 0.1)
        grid = Grid(d, 8)
        op = case.operator(grid)
        f = grid.field(rng.standard_normal(grid.n_dof))
        g = grid.field(rng.standard_normal(grid.n_dof))
        gap = abs(inner_product(op.apply(f), g) - inner_product(f, op.apply(g)))
        scale = op.apply(f).norm() * g.norm()
        ok &= _check(f"operator symmetry d={d}", gap <= 1e-12 * scale,
                     f"gap {gap:.2e}")
        quad = inner_product(op.apply(f), f)
        ok &= _check(f"operator positivity d={d}", quad > 0,
                     f"<Af,f> {quad:.3e}")

    grid = Grid(1, 8)
    case = manufactured_case(1, 0.1)
    op = case.operator(grid)
    f = grid.field(rng.standard_normal(grid.n_dof))
    x = solve_spd(op, op.apply(f), rtol=1e-12)
    err = (x - f).norm() / f.norm()
    ok &= _check("conjugate-gradient round trip", err <= 1e-8,
                 f"rel err {err:.2e}")

    g12 = Grid(1, 12)
    op12 = case.operator(g12)
    b = g12.field(rng.standard_normal(g12.n_dof))
    basis = lanczos(op12, b, g12.n_dof)
    e1 = (apply_expm(basis, 0.1) - dense_expm_oracle(op12, 0.1, b)).norm()
    e2 = (apply_geom(basis, 0.1) - dense_geom_oracle(op12, 0.1, b)).norm()
    scale = b.norm()
    ok &= _check("full-rank Krylov exactness",
                 e1 <= 1e-9 * scale and e2 <= 1e-9 * scale,
                 f"expm {e1 / scale:.2e}, geom {e2 / scale:.2e}")

    lam = op.dense_eig()[0][0]
    vec = grid.field(op.dense_eig()[1][:, 0])
    M = 16
    tau = 0.1 / M
    traj = cn_solve_ivp(op, vec, SourceTerm.zero(), 0.1, M, rtol=1e-12)
    growth = (1 - tau * lam / 2) / (1 + tau * lam / 2)
    exact = vec.values * growth ** M
    gap = float(np.max(np.abs(traj.final.values - exact)))
    ok &= _check("time-march eigenmode recurrence", gap <= 1e-10,
                 f"gap {gap:.2e}")

    w = grid.field(rng.standard_normal(grid.n_dof))
    const = SourceTerm(fn=lambda t, g: w, smoothness="Cinf")
    conv = convolve_richardson(op, DenseApplier(op), const, 0.1, 64)
    lam_all, vecs = op.dense_eig()
    coeff = vecs.T @ w.values
    target = vecs @ ((1 - np.exp(-0.1 * lam_all)) / lam_all * coeff)
    gap = (conv - grid.field(target)).norm() / w.norm()
    ok &= _check("propagated-source telescoping", gap <= 1e-9,
                 f"rel gap {gap:.2e}")

    prob = case.problem(grid)
    sol_d = solve(prob, SolverConfig(method="direct", M=8))
    sol_s = solve(prob, SolverConfig(method="shooting", M=8, fp_tol=1e-12))
    gap = float(np.max(np.abs(sol_d.v0.values - sol_s.v0.values)))
    ok &= _check("direct vs shooting initial value", gap <= 1e-9,
                 f"max gap {gap:.2e}")

    sol_h = solve(prob, SolverConfig(method="hybrid", M=8, k=grid.n_dof,
                                     fp_tol=1e-12))
    bound = float(np.exp(-0.1 * op.dense_eig()[0][0]))
    measured = sol_h.diagnostics.get("contraction_measured")
    detail = ("no contraction recorded" if measured is None
              else f"measured {measured:.6f} vs bound {bound:.6f}")
    ok &= _check("full-rank hybrid contraction",
                 measured is not None and measured <= bound + 1e-8, detail)

    print("selftest:", "all checks passed" if ok else "FAILURES above")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="invheat",
        description="Recover a stationary heat source from final-time data "
                    "and benchmark the four strategies.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="solve one problem, one method")
    p_solve.add_argument("--N", type=int, default=16,
                         help="grid intervals per axis")
    p_solve.add_argument("--M", type=int, default=None,
                         help="time steps (default from M_rule)")
    p_solve.add_argument("--method", choices=METHODS, default="shooting")
    _add_config_flags(p_solve)
    p_solve.set_defaults(fn=_cmd_solve)

    for name, fn, blurb in (
            ("converge", _cmd_converge, "convergence study"),
            ("cost", _cmd_cost, "cost study"),
            ("decay", _cmd_decay, "Krylov error decay study")):
        p = sub.add_parser(name, help=blurb)
        _add_config_flags(p)
        p.set_defaults(fn=fn)

    p_self = sub.add_parser("selftest", help="fast invariant checks")
    p_self.set_defaults(fn=_cmd_selftest)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
