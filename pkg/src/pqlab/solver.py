"""Discrete Dirichlet problems on lattice grids.

Nonlinear problems minimize ``sum_T |T| F(grad u_T)`` over piecewise-linear
fields with fixed boundary values by damped Newton descent.  Linear problems
``-div(a grad v) = 0`` use a 5-point stencil with arithmetic-mean edge
coefficients plus a per-cell mixed-derivative term.
"""
from dataclasses import dataclass, field
import time

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .grid import CoefficientField, ScalarField


class NonConvexDetected(RuntimeError):
    pass


class MaxIterations(RuntimeError):
    pass


class SingularSystem(RuntimeError):
    pass


class MaximumPrincipleViolation(RuntimeError):
    pass


ARMIJO = 1e-4
MAX_HALVINGS = 60


@dataclass
class DirichletProblem:
    """Grid, boundary data and either an integrand or a coefficient field.

    ``boundary`` is a ScalarField on the grid or a callable ``f(x1, x2)``;
    only its boundary-node values are used.
    """

    grid: object
    boundary: object
    integrand: object = None
    coefficients: CoefficientField = None
    tol: float = 1e-8
    decrement_tol: float = 1e-10
    max_iter: int = 100

    def __post_init__(self):
        if not isinstance(self.boundary, ScalarField):
            self.boundary = ScalarField.from_function(self.grid, self.boundary)
        if self.boundary.grid is not self.grid:
            raise ValueError("boundary data lives on a different grid")
        if not np.all(np.isfinite(self.boundary.values[self.grid.boundary])):
            raise ValueError("boundary data must be finite")


@dataclass
class SolveReport:
    iterations: int
    energy: float
    residual: float
    decrements: list = field(default_factory=list)
    wall_time: float = 0.0
    halvings: int = 0
    details: dict = field(default_factory=dict)

    def as_dict(self):
        return {"iterations": self.iterations, "energy": self.energy,
                "residual": self.residual, "decrements": list(self.decrements),
                "wall_time": self.wall_time, "halvings": self.halvings, **self.details}


def _index_sets(grid):
    flat = np.arange(grid.X.size)
    interior = flat[grid.interior.ravel()]
    fixed = flat[grid.boundary.ravel()]
    return interior, fixed


def _start_vector(problem):
    g = problem.grid
    u = np.zeros(g.X.size)
    b = problem.boundary.flat
    m = g.boundary.ravel()
    u[m] = b[m]
    return u


def _as_field(grid, u):
    vals = u.reshape(grid.shape).copy()
    vals[~grid.node_active] = np.nan
    return ScalarField(grid, vals)


def _cell_gradients(grid, u):
    return np.stack([grid.Gx @ u, grid.Gy @ u], axis=1)


def energy(u, F):
    """Discrete energy ``sum_T |T| F(grad u_T)`` of a nodal field."""
    g = u.grid
    z = _cell_gradients(g, np.nan_to_num(u.flat))
    return float(g.tri_area * np.sum(F(z)))


def _weak_flux(grid, flux):
    """Assemble ``sum_T |T| flux_T . grad(phi_i)`` for every lattice node."""
    w = grid.tri_area
    return grid.Gx.T @ (w * flux[:, 0]) + grid.Gy.T @ (w * flux[:, 1])


def el_residual(u, F):
    """Max over interior nodes of the weak Euler-Lagrange residual."""
    g = u.grid
    z = _cell_gradients(g, np.nan_to_num(u.flat))
    _, grad = F.evaluate_batch(z, order=1)
    r = _weak_flux(g, grad)
    return float(np.max(np.abs(r[g.interior.ravel()]), initial=0.0))


def _hessian(grid, hess, cols):
    w = grid.tri_area
    Gx = grid.Gx[:, cols]
    Gy = grid.Gy[:, cols]
    D = sp.diags
    H = (Gx.T @ D(w * hess[:, 0]) @ Gx + Gx.T @ D(w * hess[:, 1]) @ Gy
         + Gy.T @ D(w * hess[:, 1]) @ Gx + Gy.T @ D(w * hess[:, 2]) @ Gy)
    return H.tocsc()


def _factor_spd(H):
    """Sparse LU in symmetric mode; a nonpositive pivot means H is not SPD."""
    try:
        lu = splu(H, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                  options={"SymmetricMode": True})
    except RuntimeError as exc:
        raise NonConvexDetected(f"Hessian factorization failed: {exc}") from exc
    piv = lu.U.diagonal()
    if not np.array_equal(lu.perm_r, lu.perm_c) or np.any(piv <= 0) or not np.all(np.isfinite(piv)):
        raise NonConvexDetected(f"nonpositive pivot {piv.min():.3e} in the discrete Hessian")
    return lu


def _check_assumptions(F):
    try:
        P = F.params
    except (AttributeError, NotImplementedError):
        return
    if not P.nu_tilde > 0:
        raise ValueError("the solver needs nu_tilde > 0 (strictly convex q-growth)")
    if P.mu == 0 and P.p < 2:
        raise ValueError("degenerate mu = 0, p < 2 problems must be regularized first")


def minimize(problem, initial="harmonic"):
    """Damped Newton descent for the discrete energy with Dirichlet data.

    ``initial`` is ``"harmonic"`` (discrete harmonic extension of the data)
    or ``"zero"`` (data on the boundary, zero inside).  Returns the
    minimizing ScalarField and a SolveReport.  Converged when the Newton
    decrement satisfies ``lambda^2 / 2 <= decrement_tol * (1 + |E|)`` and the
    max interior weak residual is ``<= tol``.
    """
    F = problem.integrand
    if F is None:
        raise ValueError("minimize needs an integrand")
    _check_assumptions(F)
    t0 = time.perf_counter()
    g = problem.grid
    I, _ = _index_sets(g)
    if initial == "harmonic":
        u = harmonic_extension(problem)
    elif initial == "zero":
        u = _start_vector(problem)
    else:
        raise ValueError(f"unknown initial guess {initial!r}")
    w = g.tri_area

    def evaluate(vec, order):
        return F.evaluate_batch(_cell_gradients(g, vec), order=order)

    decrements, energies, halvings = [], [], 0
    for it in range(problem.max_iter + 1):
        val, grad, hess = evaluate(u, 2)
        E = w * float(np.sum(val))
        energies.append(E)
        r = _weak_flux(g, grad)[I]
        res = float(np.max(np.abs(r), initial=0.0))
        if I.size == 0:
            break
        lu = _factor_spd(_hessian(g, hess, I))
        d = -lu.solve(r)
        lam2 = float(-r @ d)
        decrements.append(lam2)
        if 0.5 * lam2 <= problem.decrement_tol * (1 + abs(E)) and res <= problem.tol:
            break
        if it == problem.max_iter:
            raise MaxIterations(f"no convergence in {problem.max_iter} Newton steps "
                                f"(residual {res:.3e})")
        slope = float(r @ d)
        slack = 64 * np.finfo(float).eps * (1 + abs(E))
        step, accepted = 1.0, False
        trial = u.copy()
        for _ in range(MAX_HALVINGS + 1):
            trial[I] = u[I] + step * d
            Et = w * float(np.sum(evaluate(trial, 0)[0]))
            if Et <= E + ARMIJO * step * slope + slack:
                accepted = True
                break
            step *= 0.5
            halvings += 1
        if not accepted:
            if res <= problem.tol:
                break
            raise MaxIterations(f"line search stalled at residual {res:.3e}")
        u = trial
    report = SolveReport(iterations=it, energy=E, residual=res, decrements=decrements,
                         wall_time=time.perf_counter() - t0, halvings=halvings,
                         details={"energies": energies, "initial": initial})
    return _as_field(g, u), report


def _edge_mean(a, axis):
    return 0.5 * (a[:-1, :] + a[1:, :]) if axis == 0 else 0.5 * (a[:, :-1] + a[:, 1:])


def stiffness(coef):
    """Stiffness matrix of ``-div(a grad)`` on the full lattice index space."""
    g = coef.grid
    n1 = g.n + 1
    ca = g.cell_active.astype(float)
    f = g.flat
    rows, cols, vals = [], [], []

    def add_edges(ka, kb, c):
        keep = c != 0
        ka, kb, c = ka[keep], kb[keep], c[keep]
        rows.extend([ka, kb, ka, kb])
        cols.extend([ka, kb, kb, ka])
        vals.extend([c, c, -c, -c])

    # x-edges (i,j)-(i+1,j): adjacent cells (i,j-1) and (i,j), half weight each
    share = np.zeros((g.n, n1))
    share[:, 1:] += 0.5 * ca
    share[:, :-1] += 0.5 * ca
    I, J = np.meshgrid(np.arange(g.n), np.arange(n1), indexing="ij")
    add_edges(f(I, J).ravel(), f(I + 1, J).ravel(), (share * _edge_mean(coef.a11, 0)).ravel())
    # y-edges (i,j)-(i,j+1): adjacent cells (i-1,j) and (i,j)
    share = np.zeros((n1, g.n))
    share[1:, :] += 0.5 * ca
    share[:-1, :] += 0.5 * ca
    I, J = np.meshgrid(np.arange(n1), np.arange(g.n), indexing="ij")
    add_edges(f(I, J).ravel(), f(I, J + 1).ravel(), (share * _edge_mean(coef.a22, 1)).ravel())
    K = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n1 * n1, n1 * n1))
    if not coef.is_diagonal:
        ci, cj = g.cells[:, 0], g.cells[:, 1]
        a = coef.a12
        a12 = 0.25 * (a[ci, cj] + a[ci + 1, cj] + a[ci, cj + 1] + a[ci + 1, cj + 1])
        k = np.stack([f(ci, cj), f(ci + 1, cj), f(ci, cj + 1), f(ci + 1, cj + 1)], axis=1)
        # h*D1 and h*D2 as weights on (u00, u10, u01, u11)
        d1 = np.array([-0.5, 0.5, -0.5, 0.5])
        d2 = np.array([-0.5, -0.5, 0.5, 0.5])
        block = np.outer(d1, d2) + np.outer(d2, d1)
        r = np.repeat(k, 4, axis=1).ravel()
        c = np.tile(k, (1, 4)).ravel()
        v = (a12[:, None] * block.ravel()[None, :]).ravel()
        K = K + sp.csr_matrix((v, (r, c)), shape=K.shape)
    return K.tocsr()


def _solve_dirichlet(K, grid, u, I, B):
    if I.size == 0:
        return u
    A = K[I][:, I].tocsc()
    rhs = -(K[I][:, B] @ u[B])
    try:
        lu = splu(A)
    except RuntimeError as exc:
        raise SingularSystem(f"linear system is singular: {exc}") from exc
    sol = lu.solve(rhs)
    if not np.all(np.isfinite(sol)):
        raise SingularSystem("non-finite solution")
    u = u.copy()
    u[I] = sol
    return u


def harmonic_extension(problem):
    """Discrete harmonic extension of the boundary data (flat vector)."""
    g = problem.grid
    coef = CoefficientField(g, 1.0, 0.0, 1.0, 1.0, 1.0)
    I, B = _index_sets(g)
    return _solve_dirichlet(stiffness(coef), g, _start_vector(problem), I, B)


def solve_linear(problem):
    """Solve ``-div(a grad v) = 0`` with Dirichlet data.

    For diagonal coefficient fields the discrete maximum principle is
    asserted (MaximumPrincipleViolation); otherwise it is only reported.
    """
    coef = problem.coefficients
    if coef is None:
        raise ValueError("solve_linear needs a coefficient field")
    coef.validate()
    t0 = time.perf_counter()
    g = problem.grid
    I, B = _index_sets(g)
    K = stiffness(coef)
    u = _solve_dirichlet(K, g, _start_vector(problem), I, B)
    res = float(np.max(np.abs((K @ u)[I]), initial=0.0))
    bmax, bmin = float(u[B].max()), float(u[B].min())
    imax = float(u[I].max()) if I.size else bmax
    imin = float(u[I].min()) if I.size else bmin
    scale = 1e-12 * max(1.0, abs(bmax), abs(bmin))
    holds = imax <= bmax + scale and imin >= bmin - scale
    if coef.is_diagonal and not holds:
        raise MaximumPrincipleViolation(
            f"interior range [{imin:.6g}, {imax:.6g}] exceeds boundary range "
            f"[{bmin:.6g}, {bmax:.6g}]")
    report = SolveReport(iterations=1, energy=0.5 * float(u @ (K @ u)), residual=res,
                         wall_time=time.perf_counter() - t0,
                         details={"max_principle": bool(holds), "diagonal": coef.is_diagonal})
    return _as_field(g, u), report


def differentiated_el_check(u, F, s):
    """Weak residual of ``div(A grad d_s u) = 0`` with ``A = D^2 F(grad u)``.

    ``d_s u`` is the nodal average of triangle gradients; the max is taken
    over interior nodes whose neighbors are all interior.
    """
    if s not in (0, 1):
        raise ValueError("direction index must be 0 or 1")
    g = u.grid
    vec = np.nan_to_num(u.flat)
    z = _cell_gradients(g, vec)
    _, _, hess = F.evaluate_batch(z, order=2)
    ds = np.nan_to_num(g.cell_to_node(z[:, s])).ravel()
    gz = _cell_gradients(g, ds)
    flux = np.stack([hess[:, 0] * gz[:, 0] + hess[:, 1] * gz[:, 1],
                     hess[:, 1] * gz[:, 0] + hess[:, 2] * gz[:, 1]], axis=1)
    r = _weak_flux(g, flux).reshape(g.shape)
    deep = g.interior.copy()
    inner = g.interior
    deep[1:-1, 1:-1] &= (inner[:-2, 1:-1] & inner[2:, 1:-1] & inner[1:-1, :-2]
                         & inner[1:-1, 2:] & inner[:-2, :-2] & inner[2:, 2:])
    deep[0, :] = deep[-1, :] = deep[:, 0] = deep[:, -1] = False
    return float(np.max(np.abs(r[deep]), initial=0.0))


def frozen_coefficients(u, F, nu, lambda_up):
    """Nodal coefficient field ``D^2 F(grad u)`` averaged from triangles."""
    g = u.grid
    z = _cell_gradients(g, np.nan_to_num(u.flat))
    _, _, hess = F.evaluate_batch(z, order=2)
    a = g.cell_to_node(hess)
    return CoefficientField(g, a[..., 0], a[..., 1], a[..., 2], nu, lambda_up)


__all__ = ["DirichletProblem", "SolveReport", "minimize", "solve_linear", "el_residual",
           "differentiated_el_check", "energy", "harmonic_extension", "stiffness",
           "frozen_coefficients", "NonConvexDetected", "MaxIterations", "SingularSystem",
           "MaximumPrincipleViolation"]
