"""Measurable forms of the regularity inequalities.

Each check returns an :class:`EstimateReport` holding the two sides of
``lhs <= c * rhs``; the implied constant ``lhs / rhs`` is compared against a
budget.  Budgets default to ten times the largest value observed on the
reference suite (see ``BUDGETS``).
"""
from dataclasses import dataclass, field
import math

import numpy as np
from scipy import integrate as sintegrate
from scipy import stats

from . import boundary
from .grid import (Annulus, Ball, CoefficientField, Disc, ScalarField, build_grid, gradient,
                   integrate, linf_norm, lp_norm, mean_integral, min_circle_sup,
                   mollify_field, sup_value)
from .integrand import e_mu, h_mu, mollify_integrand, regularize, sigma_eps
from .reports import EstimateReport
from .solver import DirichletProblem, minimize, solve_linear


class TooFewSamples(ValueError):
    pass


class InvalidTheta(ValueError):
    pass


class ZeroPositivePart(ValueError):
    pass


class DegenerateAbscissa(ValueError):
    pass


class ExponentOutOfRange(ValueError):
    pass


# ten times the largest implied constant seen on the reference suite
BUDGETS = {
    "interpolation_1d": 1.0,
    "slice_pick": 6.5,
    "prop1_upper": 15.5,
    "caccioppoli": 6.6,
    "theorem1": 1.7,
    "apriori": 2.0,
}

INTERPOLATION_CONSTANT = math.sqrt(2.0)


# ----------------------------------------------------------------------------
# one-dimensional interpolation


def check_interpolation_1d(samples, h, allowance=1e-8):
    """Sup-norm interpolation ``|u - (u)_I|_inf <= sqrt2 |u - (u)_I|_2^(1/2) |u'|_2^(1/2)``.

    Norms are exact integrals of the piecewise-linear interpolant of the
    samples, so the inequality holds up to rounding.  ``rhs`` includes the
    factor sqrt2 and the budget is ``1 + allowance / rhs``.
    """
    u = np.asarray(samples, dtype=float)
    if u.ndim != 1 or u.size < 8:
        raise TooFewSamples(f"need >= 8 samples, got {u.size}")
    if not h > 0:
        raise ValueError("h must be > 0")
    length = h * (u.size - 1)
    mean = h * (0.5 * (u[0] + u[-1]) + u[1:-1].sum()) / length
    w = u - mean
    a, b = w[:-1], w[1:]
    l2 = math.sqrt(max(0.0, h * np.sum(a * a + a * b + b * b) / 3.0))
    d1 = math.sqrt(np.sum(np.diff(u) ** 2) / h)
    lhs = float(np.max(np.abs(w)))
    rhs = INTERPOLATION_CONSTANT * math.sqrt(l2 * d1)
    budget = 1.0 + (allowance / rhs if rhs > 0 else 0.0)
    if rhs == 0.0 and lhs <= allowance:
        lhs = 0.0
    return EstimateReport("interpolation_1d", lhs, rhs, budget,
                          params={"n": u.size, "h": h},
                          details={"l2": l2, "derivative_l2": d1, "mean": mean})


# ----------------------------------------------------------------------------
# slice pick


def check_slice_pick(u, rho, sigma, center=None, samples=64, budget=None):
    """Best circle sup over (rho, sigma) against annulus L2 norms of u and grad u."""
    if not 0.25 <= rho < sigma < 1:
        raise ValueError(f"need 1/4 <= rho < sigma < 1, got {rho}, {sigma}")
    c = u.grid.center if center is None else center
    r_star, lhs = min_circle_sup(u, rho, sigma, samples=samples, center=c)
    ann = Annulus(tuple(c), rho, sigma)
    nu = lp_norm(u, 2, ann)
    ng = lp_norm(gradient(u), 2, ann)
    rhs = (sigma - rho) ** -0.5 * (nu + math.sqrt(nu * ng))
    return EstimateReport("slice_pick", lhs, rhs,
                          BUDGETS["slice_pick"] if budget is None else budget,
                          params={"rho": rho, "sigma": sigma, "n": u.grid.n},
                          details={"r_star": r_star, "u_l2": nu, "grad_l2": ng,
                                   "membership": "sample point"})


# ----------------------------------------------------------------------------
# hole filling


def hole_filling_constant(theta, alpha):
    """``c = (1-lam)^(-alpha) / (1 - theta lam^(-alpha))`` with ``lam = theta^(1/(alpha+1))``."""
    if not 0 <= theta < 1:
        raise InvalidTheta(f"theta must lie in [0, 1), got {theta}")
    if not alpha > 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    if theta == 0:
        return 1.0
    lam = theta ** (1.0 / (alpha + 1.0))
    return (1.0 - lam) ** -alpha / (1.0 - theta * lam ** -alpha)


def hole_filling(theta, alpha, A, B, Z=None, rho=0.0, sigma=1.0, samples=50, rtol=1e-12):
    """Constant of the hole-filling iteration and, for a concrete Z, a sampled check.

    The hypothesis ``Z(s) <= theta Z(t) + (t-s)^(-alpha) A + B`` and the
    conclusion ``Z(s) <= c ((t-s)^(-alpha) A + B)`` are tested on all pairs
    ``s < t`` of a geometric chain from rho toward sigma plus uniform radii.
    Returns ``(c, verified)`` where ``verified`` is None without Z and
    otherwise True iff the conclusion holds on every sampled pair.
    """
    c = hole_filling_constant(theta, alpha)
    if A < 0 or B < 0:
        raise ValueError("A and B must be >= 0")
    if Z is None:
        return c, None
    lam = theta ** (1.0 / (alpha + 1.0)) if theta > 0 else 0.5
    chain = rho + (sigma - rho) * (1.0 - lam ** np.arange(samples))
    ts = np.unique(np.concatenate([chain, np.linspace(rho, sigma, samples)]))
    vals = np.array([Z(t) for t in ts], dtype=float)
    S, T = np.meshgrid(np.arange(ts.size), np.arange(ts.size), indexing="ij")
    m = S < T
    gap = (ts[T[m]] - ts[S[m]]) ** -alpha
    zs = vals[S[m]]
    tol = rtol * (1.0 + np.abs(zs))
    return c, bool(np.all(zs <= c * (gap * A + B) + tol))


def hole_filling_chain_bound(theta, alpha, A, B, rho, sigma, steps=50):
    """Right-hand side obtained by iterating the hypothesis ``steps`` times.

    Uses radii ``t_i = rho + (1 - lam^i)(sigma - rho)``; the tail term
    ``theta^steps Z(t_steps)`` is omitted.
    """
    if theta == 0:
        return (sigma - rho) ** -alpha * A + B
    lam = theta ** (1.0 / (alpha + 1.0))
    i = np.arange(steps)
    # theta^i (t_{i+1} - t_i)^-alpha folded into one ratio theta lam^-alpha < 1
    first = ((1.0 - lam) * (sigma - rho)) ** -alpha
    return float(np.sum(first * A * (theta * lam ** -alpha) ** i + B * theta ** i))


# ----------------------------------------------------------------------------
# contrast estimate for linear subsolutions


def linfty_l2_ratio(v, center=None, radius=1.0, order=1, refine=False, sub_fine=32):
    """``sup_{B_r/2} v / (mean_{B_r} v_+^2)^(1/2)``; ZeroPositivePart if v <= 0."""
    c = v.grid.center if center is None else center
    outer, inner = Ball(tuple(c), radius), Ball(tuple(c), 0.5 * radius)
    num, area = integrate(v, outer, transform=lambda x: np.maximum(x, 0.0) ** 2,
                          order=order, refine_sign_change=refine, sub_fine=sub_fine)
    if num <= 0.0:
        raise ZeroPositivePart("v has no positive part on the ball")
    sup = sup_value(v, inner, order=order)
    return sup / math.sqrt(num / area)


def counterexample_l2(lam):
    """Exact ``int_{B_1} (v_+)^2`` for ``v = 1 + x2^2 - lam x1^2`` by nested quadrature."""
    def inner(x2):
        top = math.sqrt(1.0 - x2 * x2)
        root = math.sqrt((1.0 + x2 * x2) / lam)
        b = min(top, root)
        f = lambda x1: (1.0 + x2 * x2 - lam * x1 * x1) ** 2
        return 2.0 * sintegrate.quad(f, 0.0, b, epsabs=0, epsrel=1e-13, limit=200)[0]

    return sintegrate.quad(inner, -1.0, 1.0, epsabs=0, epsrel=1e-12, limit=200)[0]


def counterexample_ratio(lam):
    """Continuum value of :func:`linfty_l2_ratio` for the counterexample field."""
    # v(0, x2) = 1 + x2^2 dominates on the half ball
    return 1.25 / math.sqrt(counterexample_l2(lam) / math.pi)


def counterexample_bound(lam):
    """Upper bound ``(32/15) 2^(5/2) lam^(-1/2)`` for ``int_{B_1} (v_+)^2``."""
    return 32.0 / 15.0 * 2.0 ** 2.5 * lam ** -0.5


def _margin_disc_grid(resolution, layers=4):
    """Disc grid covering B_1 with spacing 2/resolution plus a few extra layers."""
    h = 2.0 / resolution
    return build_grid(Disc((0.0, 0.0), 1.0 + layers * h), resolution + 2 * layers)


def solve_contrast(lam, data, resolution, a11=1.0, a22=None):
    """Solve div(a grad v) = 0 on a disc covering B_1; default a = diag(1, lam)."""
    g = _margin_disc_grid(resolution)
    coef = CoefficientField.diagonal(g, a11, lam if a22 is None else a22, 1.0, lam)
    return solve_linear(DirichletProblem(g, data, coefficients=coef))


@dataclass
class ExponentFit:
    scales: np.ndarray
    values: np.ndarray
    slope: float
    intercept: float
    residual: float
    half_width: float
    details: dict = field(default_factory=dict)

    def row(self):
        return {"slope": self.slope, "intercept": self.intercept,
                "residual": self.residual, "half_width": self.half_width,
                "pairs": len(self.scales)}


def exponent_fit(pairs, confidence=0.95):
    """Least-squares slope of log(value) against log(scale).

    ``residual`` is the RMS of log residuals and ``half_width`` the
    t-distribution confidence half-width of the slope.
    """
    arr = np.asarray(pairs, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 3:
        raise ValueError("need at least 3 (scale, value) pairs")
    s, v = arr[:, 0], arr[:, 1]
    if np.any(s <= 0) or np.any(v <= 0):
        raise ValueError("scales and values must be > 0")
    x, y = np.log(s), np.log(v)
    if np.unique(x).size < 2 or np.ptp(x) <= 1e-12 * max(1.0, np.abs(x).max()):
        raise DegenerateAbscissa("scales have zero spread")
    fit = stats.linregress(x, y)
    res = y - (fit.intercept + fit.slope * x)
    dof = len(x) - 2
    hw = float(stats.t.ppf(0.5 + 0.5 * confidence, dof) * fit.stderr) if dof > 0 else math.inf
    return ExponentFit(s, v, float(fit.slope), float(fit.intercept),
                       float(np.sqrt(np.mean(res ** 2))), hw)


def prop2_scan(lambdas, resolution=256, order=2, sub_fine=32):
    """Counterexample ratios over ``lambdas`` and their log-log slope."""
    lambdas = [float(x) for x in lambdas]
    if len(lambdas) < 3:
        raise ValueError("need at least 3 contrast values")
    if min(lambdas) < 1:
        raise ValueError("contrast values must be >= 1")
    if len(set(lambdas)) < 2:
        raise DegenerateAbscissa("contrast values have zero spread")
    ratios, rows = [], []
    for lam in lambdas:
        v, rep = solve_contrast(lam, boundary.counterexample(lam), resolution)
        r = linfty_l2_ratio(v, center=(0.0, 0.0), order=order, refine=True, sub_fine=sub_fine)
        ratios.append(r)
        rows.append({"lambda": lam, "ratio": r, "resolution": resolution,
                     "max_principle": rep.details["max_principle"]})
    fit = exponent_fit(list(zip(lambdas, ratios)))
    fit.details["rows"] = rows
    return fit


def check_contrast_upper(v, lam, nu=1.0, budget=None):
    """Implied constant of ``sup v_+ / ||v_+||_2 <= c (lam/nu)^(1/4)``.

    A negative half-ball supremum makes the bound trivial and counts as 0.
    """
    ratio = linfty_l2_ratio(v, center=(0.0, 0.0))
    return EstimateReport("prop1_upper", max(ratio, 0.0), (lam / nu) ** 0.25,
                          BUDGETS["prop1_upper"] if budget is None else budget,
                          params={"lambda": lam, "n": v.grid.n})


def random_diagonal_coefficients(grid, lam, rng, modes=3):
    """Smooth diagonal coefficient field with entries in [1, lam]."""
    out = []
    for _ in range(2):
        f = boundary.band_limited(int(rng.integers(2 ** 31)), modes=modes)
        t = f(grid.X, grid.Y)
        t = 0.5 * (1.0 + np.tanh(t / (np.std(t) + 1e-300)))
        out.append(lam ** t)
    return CoefficientField.diagonal(grid, out[0], out[1], 1.0, lam)


def contrast_sweep(resolution, lambdas=(1.0, 10.0, 100.0, 1000.0), trials=50, seed=0):
    """Random diagonal coefficients and random data; one report per trial.

    Data without a positive part on B_1 are redrawn, so every trial yields
    a ratio.  Returns the list of ``prop1_upper`` reports.
    """
    rng = np.random.default_rng(seed)
    g = _margin_disc_grid(resolution)
    reports = []
    for lam in lambdas:
        for _ in range(trials):
            coef = random_diagonal_coefficients(g, lam, rng)
            while True:
                data = boundary.band_limited(int(rng.integers(2 ** 31)))
                v, _ = solve_linear(DirichletProblem(g, data, coefficients=coef))
                try:
                    reports.append(check_contrast_upper(v, lam))
                    break
                except ZeroPositivePart:
                    continue
    return reports


# ----------------------------------------------------------------------------
# regularized minimizers


def _params_of(F, params):
    if params is not None:
        return params
    return F.params


def nodal_gradient(u):
    """Triangle gradients averaged onto nodes, shape ``grid.shape + (2,)``."""
    return u.grid.cell_to_node(gradient(u).values)


def check_caccioppoli(u, F, ball, params=None, budget=None):
    """Caccioppoli inequality for ``E_mu(grad u)`` on ``ball = (center, radius)``.

    ``lhs = int_{B/2} |grad E_mu(grad u)|^2`` and ``rhs = (1 + |grad u|_inf^(q-p))
    |B|^(-1) int_B E_mu(grad u)^2``.
    """
    P = _params_of(F, params)
    center, radius = ball
    g = u.grid
    zn = nodal_gradient(u)
    E = np.full(g.shape, np.nan)
    m = g.node_active
    E[m] = e_mu(zn[m], P.mu, P.p)
    Ef = ScalarField(g, E)
    B, half = Ball(tuple(center), radius), Ball(tuple(center), 0.5 * radius)
    lhs = lp_norm(gradient(Ef), 2, half) ** 2
    gmax = linf_norm(gradient(u), B)
    e2, area = integrate(Ef, B, transform=lambda x: x * x)
    rhs = (1.0 + gmax ** (P.q - P.p)) * e2 / area
    return EstimateReport("caccioppoli", lhs, rhs,
                          BUDGETS["caccioppoli"] if budget is None else budget,
                          params={"p": P.p, "q": P.q, "mu": P.mu, "n": g.n, "radius": radius},
                          details={"grad_linf": gmax, "e_l2_sq": e2})


def check_theorem1(u, F, params=None, ball=((0.0, 0.0), 1.0), variant="main", budget=None):
    """Lipschitz bound on the half ball.

    ``variant="main"``: ``lhs = |grad u|_inf(B/2)`` against
    ``(mean_B F)^(1/p) + (mean_B F)^(2/(3p-q))``.
    ``variant="apriori"``: ``lhs = |grad u|_inf(B/2)^p`` against
    ``M + M^(2p/(3p-q))`` with ``M = mean_B H_mu^(p/2)``.
    Both right-hand terms are recorded separately.
    """
    P = _params_of(F, params)
    p, q = P.p, P.q
    if not q < 3 * p:
        raise ExponentOutOfRange(f"q={q} must be < 3p={3 * p}")
    center, radius = ball
    B, half = Ball(tuple(center), radius), Ball(tuple(center), 0.5 * radius)
    grad = gradient(u)
    gmax = linf_norm(grad, half)
    if variant == "main":
        M = mean_integral(grad, B, transform=lambda z: F(z))
        t1, t2 = M ** (1.0 / p), M ** (2.0 / (3 * p - q))
        lhs = gmax
    elif variant == "apriori":
        M = mean_integral(grad, B, transform=lambda z: h_mu(z, P.mu) ** (0.5 * p))
        t1, t2 = M, M ** (2.0 * p / (3 * p - q))
        lhs = gmax ** p
    else:
        raise ValueError(f"unknown variant {variant!r}")
    name = "theorem1" if variant == "main" else "apriori"
    return EstimateReport(name, lhs, t1 + t2, BUDGETS[name] if budget is None else budget,
                          params={"p": p, "q": q, "mu": P.mu, "n": u.grid.n, "radius": radius},
                          details={"mean": M, "term_p": t1, "term_3p_q": t2, "grad_sup": gmax})


def default_schedule(steps=4):
    """``eps_k = delta_k = 0.1 * 2^-k`` for ``k < steps``."""
    return [(0.1 * 2.0 ** -k, 0.1 * 2.0 ** -k) for k in range(steps)]


def regularized_minimizer(F, data, eps, delta, resolution, mu=None, q=None, tol=1e-8):
    """Minimizer of the regularized integrand on B_1 with data ``data * phi_eps``.

    ``data`` is a callable ``f(x1, x2)`` defined on a neighborhood of B_1.
    Returns ``(u, report, info)``.
    """
    P = F.params
    mu = P.mu if mu is None else mu
    q = P.q if q is None else q
    g = build_grid(Disc((0.0, 0.0), 1.0), resolution)
    k = math.ceil(eps / g.h + math.sqrt(2.0)) + 1
    src = g.enlarged(k)
    ubar = mollify_field(ScalarField.from_function(src, data), eps, target=g)
    gq = lp_norm(gradient(ubar), q) ** q
    sigma = sigma_eps(eps, gq)
    Fr = regularize(mollify_integrand(F, delta), eps, delta, sigma, mu, q)
    u, rep = minimize(DirichletProblem(g, ubar, integrand=Fr, tol=tol))
    info = {"eps": eps, "delta": delta, "sigma": sigma, "grad_q": gq,
            "mu_delta": Fr.params.mu}
    return u, rep, info


def theorem1_pipeline(F, data, resolution, schedule=None, tol=1e-8):
    """Run the regularization schedule; check the bound on the last minimizer.

    Returns ``(report, history)`` where ``history`` lists the half-ball
    gradient sup and energy per schedule step.
    """
    schedule = default_schedule() if schedule is None else schedule
    history, u = [], None
    for eps, delta in schedule:
        u, rep, info = regularized_minimizer(F, data, eps, delta, resolution, tol=tol)
        gsup = linf_norm(gradient(u), Ball((0.0, 0.0), 0.5))
        history.append({**info, "grad_sup": gsup, "iterations": rep.iterations,
                        "residual": rep.residual})
    report = check_theorem1(u, F, F.params)
    tail = [h["grad_sup"] for h in history[-2:]]
    report.details["schedule_spread"] = float(max(tail) - min(tail))
    return report, history
