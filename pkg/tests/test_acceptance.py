"""Acceptance suite: one test per criterion, each at its stated tolerance.

Run with ``pytest tests/test_acceptance.py -v`` or ``python tests/test_acceptance.py``;
a PASS/FAIL line per criterion is printed in the terminal summary.
"""
import csv
import math
import sys
import time

import numpy as np
import pytest

from pqlab import boundary, cli
from pqlab.estimates import (_margin_disc_grid, check_caccioppoli, check_interpolation_1d,
                             contrast_sweep, hole_filling, linfty_l2_ratio, prop2_scan,
                             solve_contrast)
from pqlab.grid import Ball, CoefficientField, Disc, ScalarField, build_grid, integrate, sup_value
from pqlab.integrand import ModelPQ
from pqlab.solver import DirichletProblem, minimize, solve_linear


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


# 1 -------------------------------------------------------------------------------

def test_c1_contrast_exponent_sharpness(record_criterion):
    t0 = time.perf_counter()
    fit = prop2_scan([1e2, 1e3, 1e4, 1e5], resolution=256)
    dt = time.perf_counter() - t0
    ok = 0.23 <= fit.slope <= 0.27 and dt < 120
    record_criterion("C1 contrast exponent sharpness", ok,
                     f"slope {fit.slope:.5f} +/- {fit.half_width:.5f} in [0.23, 0.27], "
                     f"{dt:.1f} s")
    assert 0.23 <= fit.slope <= 0.27
    assert dt < 120


# 2 -------------------------------------------------------------------------------

def test_c2_contrast_upper_bound_stable(record_criterion):
    maxima = {}
    for n in (64, 128):
        reps = contrast_sweep(n, lambdas=(1.0, 10.0, 100.0, 1000.0), trials=50, seed=0)
        assert len(reps) >= 200
        assert all(math.isfinite(r.implied_constant) for r in reps)
        maxima[n] = max(r.implied_constant for r in reps)
    spread = max(maxima.values()) / min(maxima.values())
    ok = spread <= 2.0
    record_criterion("C2 contrast upper bound", ok,
                     f"max ratio/lambda^(1/4) {maxima[64]:.4f} (n=64), {maxima[128]:.4f} "
                     f"(n=128), spread {spread:.4f} <= 2")
    assert ok


# 3 -------------------------------------------------------------------------------

def _counterexample_sides(lam, resolution=256):
    g = _margin_disc_grid(resolution)
    v = ScalarField.from_function(g, boundary.counterexample(lam))
    sq, _ = integrate(v, Ball((0.0, 0.0), 1.0), transform=lambda s: np.maximum(s, 0.0) ** 2,
                      order=2, refine_sign_change=True)
    sup = sup_value(v, Ball((0.0, 0.0), 0.5), order=2)
    return sq, sup


def test_c3_counterexample_reproduction(record_criterion):
    # the literal target: Lambda = 1 against 1.2068 with tolerance 1e-3
    sq, sup = _counterexample_sides(1.0)
    ok = sq <= 1.2068 + 1e-3 and sup >= 1.0
    record_criterion("C3 counterexample (Lambda=1, target 1.2068)", ok,
                     f"int (v+)^2 = {sq:.6f} (exact 7 pi/6 = {7 * math.pi / 6:.6f}), "
                     f"sup_(B1/2) v = {sup:.4f}")
    assert sup >= 1.0
    assert sq <= 1.2068 + 1e-3


@pytest.mark.parametrize("lam", [1.0, 100.0, 1e4])
def test_c3_counterexample_chain(lam):
    # the displayed chain (32/15) 2^(5/2) Lambda^(-1/2) at several contrasts
    sq, sup = _counterexample_sides(lam)
    assert sq <= 32 / 15 * 2 ** 2.5 * lam ** -0.5 + 1e-3
    assert sup >= 1.0


# 4 -------------------------------------------------------------------------------

def test_c4_interpolation_suite(record_criterion):
    rng = np.random.default_rng(2024)
    x = np.linspace(0.0, 1.0, 1025)
    t0 = time.perf_counter()
    worst, violations = 0.0, 0
    for _ in range(1000):
        deg = int(rng.integers(1, 21))
        k = np.arange(1, deg + 1)
        a, b = rng.standard_normal((2, deg))
        u = (rng.standard_normal() + np.cos(2 * np.pi * np.outer(x, k)) @ a
             + np.sin(2 * np.pi * np.outer(x, k)) @ b)
        rep = check_interpolation_1d(u, x[1], allowance=1e-8)
        worst = max(worst, rep.implied_constant)
        violations += not rep.passed
    dt = time.perf_counter() - t0
    ok = violations == 0 and dt < 10
    record_criterion("C4 interpolation inequality", ok,
                     f"{violations} violations in 1000, worst lhs/rhs {worst:.4f}, {dt:.2f} s")
    assert violations == 0
    assert dt < 10


# 5 -------------------------------------------------------------------------------

def test_c5_solver_oracles(record_criterion):
    g = build_grid(Disc(), 64)
    act = g.node_active
    f = boundary.affine((2.0, 1.0), offset=0.5)
    errs = {}
    for q in (2.0, 3.0, 4.0, 5.0):
        u, _ = minimize(DirichletProblem(g, f, integrand=ModelPQ(2.0, q, 1.0)))
        errs[q] = float(np.max(np.abs(u.values[act] - f(g.X, g.Y)[act])))
    lin = {}
    for lam in (1.0, 10.0, 1e3):
        c = CoefficientField.diagonal(g, 1.0, lam, 1.0, lam)
        v = boundary.counterexample(lam)
        u, _ = solve_linear(DirichletProblem(g, v, coefficients=c))
        # absolute error relative to the data scale |v| <= lam
        lin[lam] = float(np.max(np.abs(u.values[act] - v(g.X, g.Y)[act]))) / max(1.0, lam)
    ok = max(errs.values()) <= 1e-8 and max(lin.values()) <= 1e-10
    record_criterion("C5 solver oracles", ok,
                     f"affine max error {max(errs.values()):.2e} (q=2..5), quadratic "
                     f"stencil error {max(lin.values()):.2e}")
    assert max(errs.values()) <= 1e-8
    assert max(lin.values()) <= 1e-10


# 6 -------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def theorem1_sweep(tmp_path_factory):
    cfg = cli.parse_config("theorem1_sweep")
    cfg.resolutions = [64]
    out = tmp_path_factory.mktemp("theorem1_sweep")
    t0 = time.perf_counter()
    manifest = cli.run(cfg, out=out)
    dt = time.perf_counter() - t0
    return manifest, read_csv(out / "theorem1_fit.csv"), read_csv(out / "theorem1_reports.csv"), dt


def test_c6a_theorem1_scaling_exponent(theorem1_sweep, record_criterion):
    manifest, fits, _, dt = theorem1_sweep
    ok_status = all(i["status"] == "ok" for i in manifest["instances"])
    slopes = {float(f["q"]): (float(f["slope"]), float(f["slope_bound"])) for f in fits}
    ok = ok_status and len(slopes) == 3 and all(s <= b for s, b in slopes.values()) and dt < 600
    record_criterion("C6a Lipschitz bound exponent fit", ok,
                     ", ".join(f"q={q:g}: slope {s:.3f} <= {b:.3f}" for q, (s, b) in
                               sorted(slopes.items())) + f", {dt:.0f} s")
    assert ok_status
    assert all(s <= b for s, b in slopes.values())
    assert dt < 600


def test_c6b_theorem1_constant_spread(theorem1_sweep, record_criterion):
    _, fits, _, _ = theorem1_sweep
    spreads = {float(f["q"]): float(f["constant_spread"]) for f in fits}
    ok = len(spreads) == 3 and all(s < 2.0 for s in spreads.values())
    record_criterion("C6b Lipschitz bound constant spread", ok,
                     ", ".join(f"q={q:g}: spread {s:.3g}" for q, s in sorted(spreads.items()))
                     + " (need < 2)")
    assert ok, spreads


# 7 -------------------------------------------------------------------------------

def test_c7_caccioppoli_refinement(record_criterion):
    F = ModelPQ(2.0, 4.0, 1.0)
    consts = {}
    for n in (128, 256):
        g = build_grid(Disc(), n)
        u, _ = minimize(DirichletProblem(g, boundary.quadratic(1.0), integrand=F))
        consts[n] = check_caccioppoli(u, F, ((0.0, 0.0), 0.5)).implied_constant
    spread = max(consts.values()) / min(consts.values())
    ok = all(math.isfinite(c) and c > 0 for c in consts.values()) and spread <= 2.0
    record_criterion("C7 Caccioppoli refinement", ok,
                     f"implied constant {consts[128]:.4f} (n=128), {consts[256]:.4f} (n=256), "
                     f"spread {spread:.4f} <= 2")
    assert ok


# 8 -------------------------------------------------------------------------------

def test_c8_hole_filling(record_criterion):
    rng = np.random.default_rng(8)
    failures = 0
    for _ in range(100):
        theta, alpha = rng.uniform(0.0, 0.95), rng.uniform(0.2, 4.0)
        A, B = rng.uniform(0.0, 5.0, 2)
        rho, sigma = np.sort(rng.uniform(0.0, 2.0, 2))
        sigma = max(sigma, rho + 0.1)
        shift = rng.uniform(0.01, 1.0)
        # Z(s) = A' (s - rho + shift)^-alpha + B/(1-theta) satisfies the hypothesis
        Ap = A * (shift / (sigma - rho)) ** alpha
        Z = lambda s: Ap * (s - rho + shift) ** -alpha + B / (1.0 - theta)
        s, t = np.sort(rng.uniform(rho, sigma, (2, 400)), axis=0)
        keep = t > s
        hyp = Z(s[keep]) <= theta * Z(t[keep]) + (t[keep] - s[keep]) ** -alpha * A + B + 1e-9
        assert hyp.all()
        _, verified = hole_filling(theta, alpha, A, B, Z=Z, rho=rho, sigma=sigma)
        failures += not verified
    record_criterion("C8 hole filling", failures == 0, f"{failures} failures in 100 trials")
    assert failures == 0


# 9 -------------------------------------------------------------------------------

def test_c9_determinism(tmp_path, record_criterion):
    outs = []
    for tag, workers in (("a", 1), ("b", 2)):
        cfg = cli.parse_config("prop2_sharpness")
        cli.run(cfg, out=tmp_path / tag, workers=workers)
        outs.append(tmp_path / tag)
    tables = sorted(p.name for p in outs[0].glob("*.csv"))
    same = all((outs[0] / t).read_bytes() == (outs[1] / t).read_bytes() for t in tables)
    ok = bool(tables) and same
    record_criterion("C9 determinism", ok, f"{len(tables)} tables byte-identical: {same}")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-p", "no:cacheprovider"]))
