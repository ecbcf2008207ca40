"""Lanczos bases, Krylov matrix functions, and the accuracy bound.

Oracles: dense eigendecompositions of small operators for exp(-tA) b and
(I - exp(-TA))^{-1} b, the published two-regime bound formula evaluated by
hand at fixed (rho, k), and exact eigenvectors for breakdown behavior.
"""

import math
import warnings

import numpy as np
import pytest

import invheat.krylov as krylov_mod
from invheat import (BoundParams, DenseApplier, Field, Grid, KrylovApplier,
                     apply_expm, apply_geom, assemble_operator, choose_rank,
                     dense_expm_oracle, dense_geom_oracle, expm_bound,
                     lanczos)


def random_unit_field(op, rng) -> Field:
    b = Field(op.grid, rng.standard_normal(op.n_dof))
    return (1.0 / b.norm()) * b


def test_basis_is_orthonormal_with_tridiagonal_projection():
    rng = np.random.default_rng(11)
    op = assemble_operator(Grid(2, 8), 1.0)
    b = random_unit_field(op, rng)
    basis = lanczos(op, b, 12)
    w = op.grid.weight
    gram = w * (basis.Q.T @ basis.Q)
    assert np.allclose(gram, np.eye(basis.rank), atol=1e-12)
    H = w * (basis.Q.T @ np.column_stack(
        [op.matvec(basis.Q[:, j]) for j in range(basis.rank)]))
    H_expected = (np.diag(basis.alpha) + np.diag(basis.beta, 1)
                  + np.diag(basis.beta, -1))
    assert np.allclose(H, H_expected, atol=1e-10)


@pytest.mark.parametrize("dim,N", [(1, 24), (2, 7)])
def test_full_rank_matrix_functions_match_dense(dim, N):
    rng = np.random.default_rng(20 + dim)
    op = assemble_operator(Grid(dim, N), 1.0)
    T = 0.1
    for _ in range(3):
        b = random_unit_field(op, rng)
        basis = lanczos(op, b, op.n_dof)
        assert (apply_expm(basis, T)
                - dense_expm_oracle(op, T, b)).norm() <= 1e-9
        assert (apply_geom(basis, T)
                - dense_geom_oracle(op, T, b)).norm() <= 1e-9


def test_eigenvector_seed_breaks_down_to_an_exact_rank_one_basis():
    op = assemble_operator(Grid(1, 10), 1.0)
    lam, V = op.dense_eig()
    v1 = Field(op.grid, V[:, 0])
    basis = lanczos(op, v1, 5)
    assert basis.exact and basis.rank == 1
    got = apply_expm(basis, 0.3)
    expected = math.exp(-0.3 * lam[0]) * v1
    assert (got - expected).norm() <= 1e-12 * expected.norm()


def test_error_decays_as_the_rank_grows():
    op = assemble_operator(Grid(2, 12), 1.0)
    b = op.grid.field_from(lambda X: np.prod(np.sin(2 * np.pi * X) ** 2,
                                             axis=-1))
    ref = dense_expm_oracle(op, 0.1, b)
    errs = [(apply_expm(lanczos(op, b, k), 0.1) - ref).norm()
            for k in (4, 16, 24)]
    assert errs[1] < 1e-4 * errs[0] and errs[2] < 1e-6 * errs[0]


def test_bound_formula_and_domain():
    # First regime only: k >= sqrt(rho) but k < rho / 2.
    assert expm_bound(BoundParams(rho=25.0, k=10)) == pytest.approx(
        10.0 * math.exp(-4.0 * 100.0 / 125.0), rel=1e-15)
    # Both regimes: the smaller candidate wins.
    rho, k = 8.0, 7
    first = 10.0 * math.exp(-4.0 * k * k / (5.0 * rho))
    second = (40.0 / rho) * math.exp(-rho / 4.0) * (math.e * rho / (4 * k)) ** k
    assert expm_bound(BoundParams(rho=rho, k=k)) == pytest.approx(
        min(first, second), rel=1e-12)
    with pytest.raises(ValueError):
        expm_bound(BoundParams(rho=25.0, k=2))
    with pytest.raises(ValueError):
        expm_bound(BoundParams(rho=-1.0, k=5))


def test_bound_is_monotone_in_the_rank():
    for rho in (5.0, 25.0, 80.0):
        ks = range(math.ceil(math.sqrt(rho)), 41)
        vals = [expm_bound(BoundParams(rho=rho, k=k)) for k in ks]
        assert all(b <= a + 1e-15 for a, b in zip(vals, vals[1:]))


def test_measured_error_stays_below_the_bound():
    rng = np.random.default_rng(5)
    op = assemble_operator(Grid(1, 16), 1.0)
    lam, _ = op.dense_eig()
    T = 0.1
    rho = T * float(lam[-1])
    kmin = math.ceil(min(math.sqrt(rho), rho / 2.0))
    for _ in range(5):
        k = int(rng.integers(kmin, op.n_dof + 1))
        b = random_unit_field(op, rng)
        err = (apply_expm(lanczos(op, b, k), T)
               - dense_expm_oracle(op, T, b)).norm()
        assert err <= expm_bound(BoundParams(rho=rho, k=k))


def test_choose_rank_meets_the_target_above_the_floor():
    op = assemble_operator(Grid(1, 64), 1.0)
    T, target = 0.01, 1e-6
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        k = choose_rank(op, T, target)
    lam, _ = op.dense_eig()
    rho = T * op.rho()
    lam1 = op.lambda1()
    floor = math.sqrt(
        (5.0 * rho / 4.0) * math.log(10.0 / (1.0 - math.exp(-T * lam1))))
    assert k < op.n_dof
    assert k > floor
    assert expm_bound(BoundParams(rho=rho, k=k)) <= target
    prev = k - 1
    assert prev <= floor or expm_bound(BoundParams(rho=rho, k=prev)) > target


def test_choose_rank_warns_when_the_target_is_unreachable():
    op = assemble_operator(Grid(1, 6), 1.0)
    with pytest.warns(UserWarning, match="unreachable"):
        k = choose_rank(op, 0.1, 1e-9)
    assert k == op.n_dof


def test_per_operand_applier_reuses_the_basis_for_parallel_operands(monkeypatch):
    calls = {"n": 0}
    real = krylov_mod.lanczos

    def counting(op, seed, k):
        calls["n"] += 1
        return real(op, seed, k)

    monkeypatch.setattr(krylov_mod, "lanczos", counting)
    op = assemble_operator(Grid(1, 16), 1.0)
    applier = KrylovApplier(op, 6, mode="per-operand")
    w = op.grid.field_from(lambda X: np.sin(np.pi * X[..., 0]))
    first = applier.expm(0.1, w)
    doubled = applier.expm(0.1, 2.0 * w)
    negated = applier.expm(0.1, -1.0 * w)
    assert calls["n"] == 1
    assert np.allclose(doubled.values, 2.0 * first.values, rtol=1e-14)
    assert np.allclose(negated.values, -first.values, rtol=1e-14)
    other = op.grid.field_from(lambda X: np.sin(2 * np.pi * X[..., 0]))
    applier.expm(0.1, other)
    assert calls["n"] == 2


def test_shared_basis_applier_builds_once(monkeypatch):
    calls = {"n": 0}
    real = krylov_mod.lanczos

    def counting(op, seed, k):
        calls["n"] += 1
        return real(op, seed, k)

    monkeypatch.setattr(krylov_mod, "lanczos", counting)
    op = assemble_operator(Grid(1, 12), 1.0)
    applier = KrylovApplier(op, op.n_dof, mode="shared-basis")
    rng = np.random.default_rng(9)
    seed = random_unit_field(op, rng)
    got = applier.expm(0.2, seed)
    assert calls["n"] == 1
    assert (got - dense_expm_oracle(op, 0.2, seed)).norm() <= 1e-9
    applier.expm(0.2, random_unit_field(op, rng))
    assert calls["n"] == 1


def test_applier_handles_zero_operands_and_multi_times():
    op = assemble_operator(Grid(1, 8), 1.0)
    applier = KrylovApplier(op, 4)
    zero = op.grid.zeros()
    assert applier.expm(0.1, zero).norm() == 0.0
    assert applier.conv_increment(0.0, 0.1, zero).norm() == 0.0
    outs = applier.expm_multi((0.0, 0.05, 0.1), op.grid.ones())
    assert len(outs) == 3
    assert (outs[0] - op.grid.ones()).norm() <= 1e-10


def test_dense_applier_conv_increment_matches_the_scalar_identity():
    op = assemble_operator(Grid(1, 6), 1.0)
    lam, V = op.dense_eig()
    w = Field(op.grid, V @ np.ones(op.n_dof))
    t_new, t_old = 0.02, 0.1
    got = DenseApplier(op).conv_increment(t_new, t_old, w)
    coef = (np.exp(-t_new * lam) - np.exp(-t_old * lam)) / lam
    expected = Field(op.grid, V @ coef)
    assert (got - expected).norm() <= 1e-12 * expected.norm()


def test_validation_guards():
    op = assemble_operator(Grid(1, 8), 1.0)
    b = op.grid.ones()
    with pytest.raises(ValueError):
        lanczos(op, op.grid.zeros(), 3)
    with pytest.raises(ValueError):
        lanczos(op, b, 0)
    with pytest.raises(ValueError):
        lanczos(op, b, op.n_dof + 1)
    basis = lanczos(op, b, 3)
    with pytest.raises(ValueError):
        apply_expm(basis, -0.1)
    with pytest.raises(ValueError):
        apply_geom(basis, 0.0)
    with pytest.raises(ValueError):
        apply_geom(basis, 1e-10)  # T * mu1 under the pole guard
    with pytest.raises(ValueError):
        KrylovApplier(op, 4, mode="whatever")
