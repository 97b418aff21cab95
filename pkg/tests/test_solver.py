import numpy as np
import pytest

from pqlab import boundary
from pqlab.grid import CoefficientField, Disc, ScalarField, Square, build_grid
from pqlab.integrand import CustomIntegrand, GrowthParams, ModelPQ
from pqlab.solver import (DirichletProblem, MaximumPrincipleViolation, MaxIterations,
                          NonConvexDetected, differentiated_el_check, el_residual, energy,
                          frozen_coefficients, minimize, solve_linear)


def maxdiff(u, f):
    g = u.grid
    act = g.node_active
    return float(np.max(np.abs(u.values[act] - f(g.X, g.Y)[act])))


@pytest.fixture(scope="module")
def reference():
    g = build_grid(Disc(), 64)
    F = ModelPQ(2, 4, 1)
    u, rep = minimize(DirichletProblem(g, boundary.quadratic(1.0), integrand=F))
    return g, F, u, rep


def test_quadratic_affine_exact():
    g = build_grid(Disc(), 32)
    u, rep = minimize(DirichletProblem(g, lambda x, y: x, integrand=ModelPQ(2, 2, 0)))
    assert maxdiff(u, lambda x, y: x) <= 1e-12


@pytest.mark.parametrize("initial", ["harmonic", "zero"])
def test_pq_affine_exact(initial):
    g = build_grid(Disc(), 32)
    f = boundary.affine((2.0, 1.0))
    u, rep = minimize(DirichletProblem(g, f, integrand=ModelPQ(2, 4, 1)), initial=initial)
    assert maxdiff(u, f) <= 1e-8
    assert rep.residual <= 1e-8


def test_boundary_values_exact(reference):
    g, _, u, _ = reference
    b = g.boundary
    np.testing.assert_array_equal(u.values[b], (g.X ** 2 - g.Y ** 2)[b])


def test_residual_postcondition(reference):
    g, F, u, rep = reference
    assert rep.residual <= 1e-8
    assert el_residual(u, F) <= 1e-8
    assert rep.as_dict()["iterations"] == rep.iterations


def test_energy_monotone(reference):
    e = reference[3].details["energies"]
    assert all(b <= a + 1e-12 * abs(a) for a, b in zip(e, e[1:]))


def test_uniqueness_from_two_starts():
    g = build_grid(Disc(), 48)
    prob = DirichletProblem(g, boundary.bump(2.0), integrand=ModelPQ(2, 3, 1))
    a, _ = minimize(prob, "harmonic")
    b, rep = minimize(prob, "zero")
    act = g.node_active
    assert np.max(np.abs(a.values[act] - b.values[act])) <= 1e-8
    assert rep.details["initial"] == "zero"


def test_global_minimum_against_perturbations(reference):
    g, F, u, _ = reference
    E = energy(u, F)
    rng = np.random.default_rng(1)
    for _ in range(5):
        pert = np.where(g.interior, rng.standard_normal(g.shape) * 1e-3, 0.0)
        assert energy(ScalarField(g, u.values + pert), F) >= E


def test_el_residual_non_solution_and_affine():
    g = build_grid(Disc(), 32)
    F = ModelPQ(2, 4, 1)
    f = boundary.quadratic(1.0)
    vals = np.where(g.boundary, f(g.X, g.Y), 0.0)
    vals[~g.node_active] = np.nan
    assert el_residual(ScalarField(g, vals), F) > 10 * 1e-8
    aff = ScalarField.from_function(g, lambda x, y: 0.3 * x - 2 * y + 1)
    assert el_residual(aff, F) <= 1e-12
    assert differentiated_el_check(aff, F, 0) <= 1e-12


def test_nonconvex_detected():
    def f(z, order):
        s = np.sum(z * z, axis=1)
        v = (s - 1) ** 2
        g = 4 * (s - 1)[:, None] * z
        H = np.stack([4 * (s - 1) + 8 * z[:, 0] ** 2, 8 * z[:, 0] * z[:, 1],
                      4 * (s - 1) + 8 * z[:, 1] ** 2], axis=1)
        return (v, g, H)[:order + 1]

    F = CustomIntegrand(f, params=GrowthParams(4, 4, 0.0, 1.0, 1.0, 1.0))
    g = build_grid(Disc(), 16)
    with pytest.raises(NonConvexDetected):
        minimize(DirichletProblem(g, lambda x, y: 0.1 * x, integrand=F))


def test_max_iterations():
    g = build_grid(Disc(), 32)
    prob = DirichletProblem(g, boundary.quadratic(4.0), integrand=ModelPQ(2, 4, 1),
                            max_iter=1)
    with pytest.raises(MaxIterations):
        minimize(prob)


def test_rejects_degenerate_integrand():
    g = build_grid(Disc(), 16)
    with pytest.raises(ValueError):
        minimize(DirichletProblem(g, lambda x, y: x, integrand=ModelPQ(2, 4, 1, 1.0, 0.0)))


def test_energy_self_convergence_square():
    F = ModelPQ(2, 4, 1)
    f = boundary.quadratic(1.0)
    E = {}
    for n in (16, 32, 64):
        g = build_grid(Square((-1.0, -1.0), 2.0), n)
        u, _ = minimize(DirichletProblem(g, f, integrand=F))
        E[n] = energy(u, F)
    ratio = (E[16] - E[32]) / (E[32] - E[64])
    assert 3.5 < ratio < 4.5
    # the C in C h^2 agrees between the two refinement pairs
    c_coarse = abs(E[16] - E[32]) / (2 / 32) ** 2
    c_fine = abs(E[32] - E[64]) / (2 / 64) ** 2
    assert abs(c_coarse / c_fine - 1) < 0.15


def test_linear_identity_bilinear_exact():
    g = build_grid(Disc(), 32)
    c = CoefficientField.diagonal(g, 1.0, 1.0, 1.0, 1.0)
    u, rep = solve_linear(DirichletProblem(g, lambda x, y: x * y, coefficients=c))
    assert maxdiff(u, lambda x, y: x * y) <= 1e-12
    assert rep.details["max_principle"]


@pytest.mark.parametrize("lam", [1.0, 100.0, 1e4])
def test_linear_counterexample_exact(lam):
    g = build_grid(Disc(), 64)
    c = CoefficientField.diagonal(g, 1.0, lam, 1.0, lam)
    f = boundary.counterexample(lam)
    u, _ = solve_linear(DirichletProblem(g, f, coefficients=c))
    assert maxdiff(u, f) <= 1e-10 * max(1.0, lam)


def test_linear_full_matrix_affine_and_quadratic():
    g = build_grid(Disc(), 32)
    c = CoefficientField(g, 2.0, 0.5, 1.0, 0.5, 2.5)
    f = lambda x, y: 3 * x - y + 2
    u, rep = solve_linear(DirichletProblem(g, f, coefficients=c))
    assert maxdiff(u, f) <= 1e-12
    assert not rep.details["diagonal"]
    # -div(a grad) of x1^2 - 2 x2^2 with a11=2, a22=1 vanishes; a12 couples nothing
    q = lambda x, y: x * x - 2 * y * y
    u, _ = solve_linear(DirichletProblem(g, q, coefficients=c))
    assert maxdiff(u, q) <= 1e-12


def test_random_diagonal_max_principle():
    from pqlab.estimates import random_diagonal_coefficients
    rng = np.random.default_rng(5)
    g = build_grid(Disc(), 48)
    for trial in range(10):
        c = random_diagonal_coefficients(g, 10.0, rng)
        u, rep = solve_linear(DirichletProblem(g, boundary.band_limited(trial), coefficients=c))
        I, B = g.interior, g.boundary
        assert u.values[I].max() <= u.values[B].max() + 1e-12
        assert u.values[I].min() >= u.values[B].min() - 1e-12


def test_max_principle_violation_raised(monkeypatch):
    import pqlab.solver as S
    g = build_grid(Disc(), 16)
    c = CoefficientField.diagonal(g, 1.0, 1.0, 1.0, 1.0)

    def bad(K, grid, u, I, B):
        u = u.copy()
        u[I] = 10.0
        return u

    monkeypatch.setattr(S, "_solve_dirichlet", bad)
    with pytest.raises(MaximumPrincipleViolation):
        solve_linear(DirichletProblem(g, lambda x, y: x, coefficients=c))


def test_differentiated_el_quadratic_refinement():
    F = ModelPQ(2, 2, 0.5)
    vals = []
    for n in (32, 64):
        g = build_grid(Disc(), n)
        u, _ = minimize(DirichletProblem(g, boundary.quadratic(1.0), integrand=F))
        vals.append(differentiated_el_check(u, F, 0))
    assert vals[1] <= vals[0] + 1e-12
    assert vals[1] <= 2.0 / 64


def test_differentiated_el_pq_finite(reference):
    g, F, u, _ = reference
    assert np.isfinite(differentiated_el_check(u, F, 1))
    with pytest.raises(ValueError):
        differentiated_el_check(u, F, 2)


def test_frozen_coefficients_elliptic(reference):
    g, F, u, _ = reference
    P = F.params
    from pqlab.grid import gradient
    from pqlab.integrand import h_mu
    z = gradient(u).values
    H = h_mu(z, P.mu)
    nu = P.nu * H.min() ** ((P.p - 2) / 2)
    lam = P.lambda_up * (H.max() ** ((P.q - 2) / 2) + H.max() ** ((P.p - 2) / 2))
    frozen_coefficients(u, F, nu, lam).validate()
