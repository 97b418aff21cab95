"""Named analytic families of boundary data and random smooth fields.

Every factory returns a vectorized callable ``f(x1, x2)``.
"""
import numpy as np


def affine(xi=(1.0, 0.0), offset=0.0):
    a, b = float(xi[0]), float(xi[1])
    return lambda x1, x2: offset + a * x1 + b * x2


def quadratic(amplitude=1.0):
    """Harmonic quadratic ``A (x1^2 - x2^2)``."""
    return lambda x1, x2: amplitude * (x1 * x1 - x2 * x2)


def counterexample(lam):
    """``1 + x2^2 - lam x1^2``, a solution of div(diag(1, lam) grad v) = 0."""
    return lambda x1, x2: 1.0 + x2 * x2 - lam * x1 * x1


def bump(amplitude=1.0, width=0.5, center=(0.3, -0.2)):
    """Gaussian bump ``A exp(-|x - c|^2 / w^2)``."""
    c0, c1 = center
    return lambda x1, x2: amplitude * np.exp(-((x1 - c0) ** 2 + (x2 - c1) ** 2) / width ** 2)


def band_limited(seed, modes=4, amplitude=1.0):
    """Random trigonometric field with wavenumbers ``|k_i| <= modes``.

    Coefficients decay like ``1 / (1 + |k|^2)`` so the field is smooth.
    """
    rng = np.random.default_rng(seed)
    k = np.arange(-modes, modes + 1)
    K1, K2 = np.meshgrid(k, k, indexing="ij")
    K1, K2 = K1.ravel(), K2.ravel()
    coef = rng.standard_normal(K1.size) / (1.0 + K1 ** 2 + K2 ** 2)
    phase = rng.uniform(0.0, 2 * np.pi, K1.size)
    freq = np.pi / 2

    def f(x1, x2):
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        arg = freq * (np.multiply.outer(x1, K1) + np.multiply.outer(x2, K2)) + phase
        return amplitude * np.cos(arg) @ coef

    return f


FAMILIES = {
    "affine": affine,
    "quadratic": quadratic,
    "counterexample": counterexample,
    "bump": bump,
    "random": band_limited,
}


def make(family, **kw):
    try:
        factory = FAMILIES[family]
    except KeyError:
        raise ValueError(f"unknown boundary family {family!r}") from None
    return factory(**kw)
