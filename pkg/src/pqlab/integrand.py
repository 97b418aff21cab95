"""Convex energy densities with (p,q)-growth, mollification and regularization.

Every integrand evaluates value, gradient and Hessian on batches of gradient
vectors ``z`` of shape ``(N, 2)``.  Hessians are returned packed as columns
``(h11, h12, h22)``; :meth:`Integrand.evaluate` unpacks a single point.
"""
from dataclasses import dataclass, replace
from enum import Enum
from functools import cached_property
import math

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import exp1

from . import kernels
from .reports import EstimateReport


class DegenerateOrigin(ValueError):
    """Hessian requested where the density is singular (mu = 0, p < 2, z = 0)."""


class QuadratureFailure(RuntimeError):
    pass


class GrowthFitFailure(RuntimeError):
    pass


class Family(Enum):
    MODEL_PQ = "model_pq"
    MOLLIFIED = "mollified"
    REGULARIZED = "regularized"
    CUSTOM = "custom"


@dataclass(frozen=True)
class GrowthParams:
    """Exponents and ellipticity constants of a density.

    ``nu_tilde == 0`` selects the plain (p,q)-growth bounds; ``nu_tilde > 0``
    the regularized bounds with an extra lower q-ellipticity term.
    """

    p: float
    q: float
    mu: float
    nu: float
    lambda_up: float
    nu_tilde: float = 0.0

    def __post_init__(self):
        if not 1.0 < self.p <= self.q < math.inf:
            raise ValueError(f"need 1 < p <= q < inf, got p={self.p}, q={self.q}")
        if self.mu < 0:
            raise ValueError(f"mu must be >= 0, got {self.mu}")
        if self.nu <= 0 or self.lambda_up < self.nu:
            raise ValueError(f"need 0 < nu <= lambda_up, got nu={self.nu}, "
                             f"lambda_up={self.lambda_up}")
        if self.nu_tilde < 0:
            raise ValueError(f"nu_tilde must be >= 0, got {self.nu_tilde}")

    @property
    def regularized(self):
        return self.nu_tilde > 0

    def diagnostics(self, theorem=False):
        """Human-readable list of violated mode conditions (empty when valid)."""
        out = []
        if self.regularized and not 0 < self.mu <= 2:
            out.append(f"mu={self.mu} outside (0, 2] for regularized growth")
        if not self.regularized and self.mu > 1:
            out.append(f"mu={self.mu} outside [0, 1]")
        if theorem and not self.q < 3 * self.p:
            out.append(f"q={self.q} must be < 3p={3 * self.p} for theorem-mode runs")
        return out


def h_mu(z, mu):
    """Shifted squared modulus mu^2 + |z|^2 (vectorized over the last axis)."""
    z = np.asarray(z, dtype=float)
    return mu * mu + np.sum(z * z, axis=-1)


def e_mu(z, mu, p):
    """Normalized p-power excess (H^{p/2} - mu^p) / p; zero at z = 0."""
    return (h_mu(z, mu) ** (0.5 * p) - mu ** p) / p


def unpack_hessian(hess):
    hess = np.asarray(hess)
    out = np.empty(hess.shape[:-1] + (2, 2))
    out[..., 0, 0] = hess[..., 0]
    out[..., 0, 1] = out[..., 1, 0] = hess[..., 1]
    out[..., 1, 1] = hess[..., 2]
    return out


def hessian_eigenvalues(hess):
    """Eigenvalues (min, max) of packed symmetric 2x2 matrices."""
    a, b, c = hess[..., 0], hess[..., 1], hess[..., 2]
    mid = 0.5 * (a + c)
    rad = np.hypot(0.5 * (a - c), b)
    return mid - rad, mid + rad


class Integrand:
    family = Family.CUSTOM

    def _eval(self, z, order):
        raise NotImplementedError

    @property
    def params(self):
        raise NotImplementedError

    def evaluate_batch(self, z, order=2):
        """Return ``(value, grad, hess)`` truncated to ``order + 1`` entries."""
        z = np.atleast_2d(np.asarray(z, dtype=float))
        out = self._eval(z, order)
        if order >= 2 and not np.all(np.isfinite(out[2])):
            bad = np.flatnonzero(~np.all(np.isfinite(out[2]), axis=1))
            raise DegenerateOrigin(f"Hessian singular at z={z[bad[0]].tolist()}")
        return out

    def __call__(self, z):
        return self.evaluate_batch(z, order=0)[0]

    def evaluate(self, z):
        val, grad, hess = self.evaluate_batch(np.reshape(z, (1, 2)), order=2)
        return float(val[0]), grad[0], unpack_hessian(hess[0])


class ModelPQ(Integrand):
    """``nu * H_mu^{p/2} + nu_tilde * H_mu^{q/2}``.

    ``params`` holds constants certified from the closed-form Hessian
    spectrum, which differ from the coefficients when the eigenvalue factors
    ``s * min(1, s-1)`` or ``s * max(1, s-1)`` leave [1, 1].
    """

    family = Family.MODEL_PQ

    def __init__(self, p, q, mu, nu=1.0, nu_tilde=1.0):
        if not 1.0 < p <= q:
            raise ValueError(f"need 1 < p <= q, got p={p}, q={q}")
        if mu < 0 or nu <= 0 or nu_tilde < 0:
            raise ValueError("need mu >= 0, nu > 0, nu_tilde >= 0")
        self.p, self.q, self.mu = float(p), float(q), float(mu)
        self.coef_p, self.coef_q = float(nu), float(nu_tilde)

    @cached_property
    def params(self):
        p, q, a, b = self.p, self.q, self.coef_p, self.coef_q
        nu = a * min(1.0, p * min(1.0, p - 1.0))
        nut = b * min(1.0, q * min(1.0, q - 1.0))
        lam = max(a * max(1.0, p * max(1.0, p - 1.0)), b * max(1.0, q * max(1.0, q - 1.0)))
        return GrowthParams(p, q, self.mu, nu, max(lam, nu), nut)

    def _eval(self, z, order):
        if order >= 2 and self.mu == 0 and self.p < 2:
            if np.any(np.all(z == 0.0, axis=1)):
                raise DegenerateOrigin("Hessian singular at z=0 for mu=0, p<2")
        return kernels.pq_eval(z, self.mu, self.p, self.q, self.coef_p,
                               self.coef_q, order)

    def __repr__(self):
        return (f"ModelPQ(p={self.p}, q={self.q}, mu={self.mu}, nu={self.coef_p}, "
                f"nu_tilde={self.coef_q})")


class CustomIntegrand(Integrand):
    """Wrap ``func(z, order) -> tuple`` with the same conventions as kernels."""

    def __init__(self, func, params=None, name="custom"):
        self._func = func
        self._params = params
        self.name = name

    @property
    def params(self):
        if self._params is None:
            raise AttributeError(f"{self.name} carries no growth parameters")
        return self._params

    def _eval(self, z, order):
        return self._func(z, order)


class Mollifier:
    """Normalized bump ``exp(-1/(1-|y|^2))`` on the unit disc with a tensor
    Gauss-Legendre rule on the support square.

    Nodes with zero weight are dropped; weights are renormalized so the
    discrete mass is one.  ``raw_mass_error`` records the unnormalized rule's
    deviation from the exact mass ``pi * (exp(-1) - E1(1))``.
    """

    EXACT_MASS = math.pi * (math.exp(-1.0) - float(exp1(1.0)))

    def __init__(self, order=32, raw_tol=1e-5):
        x, w = leggauss(order)
        X, Y = np.meshgrid(x, x, indexing="ij")
        W = np.outer(w, w)
        f = self.profile(np.stack([X, Y], axis=-1))
        raw = float(np.sum(W * f))
        keep = f > 0
        self.order = order
        self.nodes = np.stack([X[keep], Y[keep]], axis=1)
        self.weights = (W * f)[keep] / raw
        self.raw_mass_error = raw - self.EXACT_MASS
        mass = float(np.sum(self.weights))
        if not abs(mass - 1.0) <= 1e-10 or not abs(self.raw_mass_error) <= raw_tol * self.EXACT_MASS:
            raise QuadratureFailure(f"mollifier rule mass {mass!r}, raw error "
                                    f"{self.raw_mass_error!r}")

    @staticmethod
    def profile(y):
        """Unnormalized radial bump, zero outside the open unit disc."""
        r2 = np.sum(np.asarray(y, dtype=float) ** 2, axis=-1)
        inside = r2 < 1.0
        return np.where(inside, np.exp(-1.0 / np.where(inside, 1.0 - r2, 1.0)), 0.0)

    def density(self, y, delta):
        """Unit-mass mollifier of support radius ``delta``."""
        y = np.asarray(y, dtype=float)
        return self.profile(y / delta) / (self.EXACT_MASS * delta * delta)

    def rule(self, delta):
        return delta * self.nodes, self.weights

    def second_moment(self, delta):
        """Discrete int |y|^2 phi_delta(y) dy."""
        return delta * delta * float(self.weights @ np.sum(self.nodes ** 2, axis=1))


_DEFAULT_MOLLIFIER = None


def default_mollifier():
    global _DEFAULT_MOLLIFIER
    if _DEFAULT_MOLLIFIER is None:
        _DEFAULT_MOLLIFIER = Mollifier()
    return _DEFAULT_MOLLIFIER


def _fit_samples(radius=10.0):
    radii = np.concatenate([[0.0], np.geomspace(1e-3, radius, 48)])
    ang = np.linspace(0.0, 2 * np.pi, 12, endpoint=False) + 0.1
    pts = (radii[:, None, None] * np.stack([np.cos(ang), np.sin(ang)], axis=1)[None])
    return np.unique(pts.reshape(-1, 2), axis=0)


def fit_growth_params(F, reference, mu_floor, samples=None, regularized=None):
    """Smallest ``mu' in (mu_floor, 2]`` for which F obeys the growth bounds.

    ``nu`` is taken from ``reference`` (halved once if needed); ``nu_tilde``
    and ``lambda_up`` are fitted from the samples with 10% safety margins.
    Accepted only while ``lambda_up <= 2 * reference.lambda_up``.
    """
    z = _fit_samples() if samples is None else np.asarray(samples, dtype=float)
    if regularized is None:
        regularized = reference.regularized
    val, _, hess = F.evaluate_batch(z, order=2)
    lo, hi = hessian_eigenvalues(hess)
    hnorm = np.maximum(np.abs(lo), np.abs(hi))
    p, q = reference.p, reference.q
    offsets = np.geomspace(1e-10, 1.0, 400)
    for nu in (reference.nu, 0.5 * reference.nu):
        for off in offsets:
            mu = mu_floor + (2.0 - mu_floor) * off
            H = mu * mu + np.sum(z * z, axis=1)
            Hp, Hq = H ** (0.5 * p), H ** (0.5 * q)
            Hp2, Hq2 = Hp / H, Hq / H
            slack_f = val - nu * Hp
            slack_h = lo - nu * Hp2
            if regularized:
                nut = 0.9 * min(np.min(slack_f / Hq), np.min(slack_h / Hq2))
                if not nut > 0:
                    continue
            else:
                if np.min(slack_f / Hp) < -1e-12 or np.min(slack_h / Hp2) < -1e-12:
                    continue
                nut = 0.0
            lam = 1.1 * max(np.max(val / (Hq + Hp)), np.max(hnorm / (Hq2 + Hp2)))
            lam = max(lam, nu)
            if lam <= 2.0 * reference.lambda_up:
                return GrowthParams(p, q, mu, nu, lam, nut)
    raise GrowthFitFailure(f"no mu in ({mu_floor}, 2] satisfies the growth bounds")


class Mollified(Integrand):
    """Convolution ``F * phi_delta`` in the gradient variable, by quadrature."""

    family = Family.MOLLIFIED

    def __init__(self, base, delta, mollifier=None):
        self.base = base
        self.delta = float(delta)
        self.mollifier = mollifier or default_mollifier()
        self.nodes, self.weights = self.mollifier.rule(self.delta)

    def _eval(self, z, order):
        b = self.base
        if isinstance(b, ModelPQ):
            return kernels.pq_mollified(z, self.nodes, self.weights, b.mu, b.p, b.q,
                                        b.coef_p, b.coef_q, order)
        m = len(self.weights)
        step = max(1, (1 << 18) // m)
        parts = []
        for lo in range(0, len(z), step):
            zz = z[lo:lo + step]
            pts = (zz[:, None, :] - self.nodes[None, :, :]).reshape(-1, 2)
            res = b.evaluate_batch(pts, order)
            parts.append([np.tensordot(r.reshape(len(zz), m, *r.shape[1:]), self.weights,
                                       axes=([1], [0])) for r in res])
        return tuple(np.concatenate([pp[k] for pp in parts]) for k in range(order + 1))

    @cached_property
    def params(self):
        ref = self.base.params
        return fit_growth_params(self, ref, ref.mu)

    @property
    def mu_delta(self):
        return self.params.mu


class Regularized(Integrand):
    """``F_delta(z) + sigma * (mu + delta + |z|^2)^{q/2}``."""

    family = Family.REGULARIZED

    def __init__(self, inner, eps, delta, sigma, mu, q):
        self.inner = inner
        self.eps, self.delta, self.sigma = float(eps), float(delta), float(sigma)
        self.mu, self.q = float(mu), float(q)
        self.kappa = self.mu + self.delta

    def _eval(self, z, order):
        a = self.inner.evaluate_batch(z, order)
        b = kernels.pq_eval(z, math.sqrt(self.kappa), self.q, self.q, 0.0, self.sigma, order)
        return tuple(x + y for x, y in zip(a, b))

    @cached_property
    def params(self):
        ref = self.inner.params
        ref = replace(ref, nu_tilde=max(ref.nu_tilde, self.sigma))
        return fit_growth_params(self, ref, self.mu, regularized=True)


def mollify_integrand(F, delta, mollifier=None):
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    return Mollified(F, delta, mollifier)


def sigma_eps(eps, grad_q_norm):
    """Weight ``1 / (1 + 1/eps + ||grad u||_q^q)`` of the regularizing term."""
    if not 0 < eps < 1:
        raise ValueError(f"eps must lie in (0, 1), got {eps}")
    if grad_q_norm < 0:
        raise ValueError("norm argument must be >= 0")
    return 1.0 / (1.0 + 1.0 / eps + grad_q_norm)


def regularize(F_delta, eps, delta, sigma, mu, q):
    if not (0 < eps < 1 and 0 < delta < 1):
        raise ValueError("eps and delta must lie in (0, 1)")
    if not sigma > 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    return Regularized(F_delta, eps, delta, sigma, mu, q)


def verify_growth_bounds(F, samples, xi_samples, params=None, rtol=1e-9):
    """Check the four growth inequalities at every sample.

    Margins are relative, ``(available - needed) / max(|available|, |needed|)``,
    in the column order lower_value, upper_value, upper_hessian,
    lower_hessian.  The report's implied constant is ``1 - min margin`` and
    passes against the budget ``1 + rtol``.
    """
    z = np.atleast_2d(np.asarray(samples, dtype=float))
    xi = np.atleast_2d(np.asarray(xi_samples, dtype=float))
    if len(z) == 0 or len(xi) == 0:
        raise ValueError("sample lists must be nonempty")
    P = F.params if params is None else params
    val, _, hess = F.evaluate_batch(z, order=2)
    lo, hi = hessian_eigenvalues(hess)
    hnorm = np.maximum(np.abs(lo), np.abs(hi))
    H = P.mu ** 2 + np.sum(z * z, axis=1)
    Hp, Hq = H ** (0.5 * P.p), H ** (0.5 * P.q)
    with np.errstate(divide="ignore", invalid="ignore"):
        Hp2 = H ** (0.5 * P.p - 1.0)
        Hq2 = H ** (0.5 * P.q - 1.0)
    # quadratic forms <hess xi, xi> for every (sample, xi) pair
    quad = (hess[:, None, 0] * xi[None, :, 0] ** 2 + 2 * hess[:, None, 1] * xi[None, :, 0]
            * xi[None, :, 1] + hess[:, None, 2] * xi[None, :, 1] ** 2)
    need_quad = (P.nu * Hp2 + P.nu_tilde * Hq2)[:, None] * np.sum(xi * xi, axis=1)[None]
    pairs = [
        (val, P.nu * Hp + P.nu_tilde * Hq),
        (P.lambda_up * (Hq + Hp), val),
        (P.lambda_up * (Hq2 + Hp2), hnorm),
        (quad, need_quad),
    ]
    margins = []
    for avail, need in pairs:
        scale = np.maximum(np.maximum(np.abs(avail), np.abs(need)), 1e-300)
        m = (avail - need) / scale
        margins.append(m.min(axis=1) if m.ndim == 2 else m)
    margins = np.stack(margins, axis=1)
    names = ("lower_value", "upper_value", "upper_hessian", "lower_hessian")
    bad = np.argwhere(margins < -rtol)
    violations = [{"sample": int(i), "z": z[i].tolist(), "bound": names[k],
                   "margin": float(margins[i, k])} for i, k in bad]
    worst = float(margins.min())
    return EstimateReport(
        name="growth_bounds", lhs=1.0 - worst, rhs=1.0, budget=1.0 + rtol,
        params={"p": P.p, "q": P.q, "mu": P.mu, "nu": P.nu, "lambda_up": P.lambda_up,
                "nu_tilde": P.nu_tilde, "family": F.family.value},
        details={"margins": margins, "violations": violations},
        provenance={"samples": len(z), "xi_samples": len(xi)},
    )


def gradient_bound_constant(F, samples, params=None):
    """Smallest L' with |dF(z)| <= L'(H^{(q-1)/2} + H^{(p-1)/2}) on the samples."""
    z = np.atleast_2d(np.asarray(samples, dtype=float))
    P = F.params if params is None else params
    _, grad = F.evaluate_batch(z, order=1)
    H = P.mu ** 2 + np.sum(z * z, axis=1)
    bound = H ** (0.5 * (P.q - 1)) + H ** (0.5 * (P.p - 1))
    return float(np.max(np.linalg.norm(grad, axis=1) / bound))
