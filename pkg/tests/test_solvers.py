"""The four reconstruction strategies and their shared scaffolding.

Oracles: the d = 1 direct elimination is the exact solution of the coupled
Crank-Nicolson system, so the shooting iterate must land on it to solver
tolerance; the closed-form test family provides exact (p, u); and the
fixed-point bookkeeping helpers are exercised on synthetic update
sequences with known behavior.
"""

import math

import numpy as np
import pytest

from invheat import (ConvergenceError, Grid, InverseProblem, SolverConfig,
                     SourceTerm, manufactured_case, measure_errors, solve,
                     solve_direct, solve_shooting)
from invheat.solvers import (_check_divergence, _fp_stagnated, _fp_summary,
                             recover_pair)


@pytest.fixture(scope="module")
def case_1d():
    return manufactured_case(1)


@pytest.fixture(scope="module")
def prob_16(case_1d):
    return case_1d.problem(Grid(1, 16))


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(method="bisection")
    with pytest.raises(ValueError):
        SolverConfig(M=0)
    with pytest.raises(ValueError):
        SolverConfig(fp_tol=0.0)
    with pytest.raises(ValueError):
        SolverConfig(fp_max_iter=0)
    with pytest.raises(ValueError):
        SolverConfig(seed_mode="fresh")
    cfg = SolverConfig(M=6)
    assert cfg.panels() == 48
    assert SolverConfig(M=6, quad_panels=100).panels() == 100
    grid = Grid(1, 8)
    assert SolverConfig(k=100).rank_for(grid) == grid.n_dof
    assert SolverConfig().rank_for(grid) == 7  # k = N capped at n_dof


def test_method_config_mismatch_is_rejected(prob_16):
    with pytest.raises(ValueError):
        solve_shooting(prob_16, SolverConfig(method="hybrid"))


def test_direct_elimination_needs_one_dimension():
    case = manufactured_case(2)
    with pytest.raises(ValueError):
        solve_direct(case.problem(Grid(2, 6)), SolverConfig(method="direct"))


def test_problem_validation(case_1d):
    grid = Grid(1, 8)
    op = case_1d.operator(grid)
    phi = case_1d.phi(grid)
    with pytest.raises(ValueError):
        InverseProblem(grid=grid, op=op, source=case_1d.source,
                       final_state=phi, T=0.0)
    with pytest.raises(ValueError):
        InverseProblem(grid=Grid(1, 9), op=op, source=case_1d.source,
                       final_state=phi, T=0.1)


def test_all_methods_recover_the_manufactured_pair(prob_16, case_1d):
    for method in ("direct", "shooting", "hybrid", "pure-arnoldi"):
        sol = solve(prob_16, SolverConfig(method=method, M=32))
        rep = measure_errors(sol, case_1d, denominator="global-max")
        assert rep.E_u <= 0.05, method
        assert rep.E_p <= 0.01, method
        assert sol.diagnostics["self_consistency"] <= 1e-5, method


def test_shooting_lands_on_the_direct_fixed_point(case_1d):
    prob = case_1d.problem(Grid(1, 8))
    ref = solve(prob, SolverConfig(method="direct", M=8))
    got = solve(prob, SolverConfig(method="shooting", M=8, fp_tol=1e-12))
    assert np.abs(got.v0.values - ref.v0.values).max() <= 1e-9


def test_full_rank_hybrid_and_pure_arnoldi_agree(prob_16):
    k = prob_16.grid.n_dof
    hyb = solve(prob_16, SolverConfig(method="hybrid", M=16, k=k,
                                      fp_tol=1e-12))
    pure = solve(prob_16, SolverConfig(method="pure-arnoldi", M=16, k=k))
    assert np.abs(hyb.v0.values - pure.v0.values).max() <= 1e-10


def test_exponential_and_cn_fixed_points_differ_at_second_order(case_1d):
    """The full-rank Krylov fixed point solves the continuous-in-time
    system, the direct elimination the Crank-Nicolson one; their gap is
    the O(tau^2) time discretization error and vanishes under refinement."""
    prob = case_1d.problem(Grid(1, 8))
    gaps = []
    for M in (8, 16, 32):
        ref = solve(prob, SolverConfig(method="direct", M=M))
        hyb = solve(prob, SolverConfig(method="hybrid", M=M,
                                       k=prob.grid.n_dof, fp_tol=1e-13))
        gaps.append(np.abs(hyb.v0.values - ref.v0.values).max())
    assert gaps[0] > 1e-7  # far above solver tolerances at M = 8
    orders = [math.log2(a / b) for a, b in zip(gaps, gaps[1:])]
    assert all(1.7 <= o <= 2.3 for o in orders)


def test_recover_pair_identities(prob_16):
    sol = solve(prob_16, SolverConfig(method="shooting", M=8))
    p, u = recover_pair(prob_16.op, sol.u)
    # u already had v0 subtracted, so recovering again maps p to -A u^0 = 0.
    assert p.norm() <= 1e-12
    assert np.all(sol.u.states[0] == 0.0)
    back = prob_16.op.apply(sol.v0)
    assert np.allclose(sol.source.values, -back.values, rtol=1e-12)


def test_repeated_solves_are_bitwise_deterministic(prob_16):
    for method in ("shooting", "hybrid"):
        cfg = SolverConfig(method=method, M=16)
        a = solve(prob_16, cfg)
        b = solve(prob_16, cfg)
        assert np.array_equal(a.v0.values, b.v0.values), method


def test_shared_basis_mode_matches_per_operand_here(prob_16, case_1d):
    cfg = SolverConfig(method="hybrid", M=32, seed_mode="shared-basis")
    rep = measure_errors(solve(prob_16, cfg), case_1d,
                         denominator="global-max")
    assert rep.E_p <= 0.01


def test_iteration_budget_is_flagged(prob_16):
    sol = solve(prob_16, SolverConfig(method="shooting", M=8, fp_max_iter=2))
    assert "max_iter_reached" in sol.diagnostics["flags"]


def test_history_recording(prob_16):
    cfg = SolverConfig(method="shooting", M=8, record_history=True)
    sol = solve(prob_16, cfg)
    hist = sol.diagnostics["alpha_history"]
    assert len(hist) == sol.diagnostics["iterations"] + 1
    cfg = SolverConfig(method="hybrid", M=8, record_history=True)
    sol = solve(prob_16, cfg)
    assert len(sol.diagnostics["beta_history"]) == (
        sol.diagnostics["iterations"] + 1)


def test_zero_data_yields_the_zero_reconstruction():
    grid = Grid(1, 8)
    case = manufactured_case(1)
    prob = InverseProblem(grid=grid, op=case.operator(grid),
                          source=SourceTerm.zero(),
                          final_state=grid.zeros(), T=0.1)
    sol = solve(prob, SolverConfig(method="pure-arnoldi", M=4))
    assert sol.v0.norm() == 0.0
    assert sol.source.norm() == 0.0


def test_divergence_detector_on_synthetic_updates():
    stop = 1e-10
    growing = [1e-6, 1e-7, 1e-8, 1e-7, 1e-6, 1e-5]
    with pytest.raises(ConvergenceError):
        _check_divergence(growing, stop)
    wobble = [1e-6, 1e-7, 3e-8, 2.2e-8, 2.4e-8, 2.5e-8]
    _check_divergence(wobble, stop)  # small floor wobble must not raise


def test_stagnation_detector_on_synthetic_updates():
    contracting = [10.0 * 0.5 ** i for i in range(12)]
    assert not _fp_stagnated(contracting)
    stalled = [1e-2, 1e-3, 1e-4] + [2e-8, 1.9e-8, 2.1e-8, 2.0e-8, 1.9e-8,
                                    2.0e-8]
    assert _fp_stagnated(stalled)


def test_fp_summary_trusts_only_clean_ratios():
    # Decreasing phase with factor 0.5, then noise-floor wobble; ratios at
    # or below the trust threshold must not contaminate the measurement.
    deltas = [1.0, 0.5, 0.25, 0.125, 1e-9, 9e-10]
    out = _fp_summary(deltas, stop=1e-10, scale=1.0)
    assert out["iterations"] == 6
    assert out["fp_residual"] == 9e-10
    assert out["contraction_measured"] == pytest.approx(0.5, rel=1e-12)
    empty = _fp_summary([], stop=1e-10, scale=1.0)
    assert empty["iterations"] == 0 and empty["contraction_measured"] is None


def test_certified_error_accompanies_a_contracting_shooting_run(prob_16):
    sol = solve(prob_16, SolverConfig(method="shooting", M=16))
    diag = sol.diagnostics
    assert 0.0 < diag["contraction_predicted"] < 1.0
    assert diag["certified_error"] is not None and diag["certified_error"] > 0
    assert diag["contraction_measured"] <= diag["contraction_predicted"] + 1e-8
