"""Acceptance criteria for the toolkit, each implemented as a callable
check returning a structured result.

The criteria combine exact-identity audits with small-parameter
quantitative checks of the limit predictions; tolerances are fixed here,
not calibrated at run time.  ``tests/test_acceptance.py`` asserts each
criterion and ``haldane verify --level full`` appends them to the
invariant table.  Criteria are statistical but fully seeded, so outcomes
are reproducible.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .environment import expansion_check, make_environment
from .numerics import InverseGammaParams, ks_threshold, laplace_ode_residual, rng_stream
from .perpetuity import from_environment, limit_fit_test
from .survival import (
    estimate_survival_gf,
    haldane_prediction,
    haldane_sweep,
    sample_env_path,
    simulate_population,
    survival_identity,
)

__all__ = ["CriterionResult", "run_all", "ALL_CRITERIA"]


@dataclass(frozen=True)
class CriterionResult:
    cid: str
    slug: str
    anchor: str
    passed: bool
    detail: str
    seconds: float


def _result(cid, slug, anchor, passed, detail, start) -> CriterionResult:
    return CriterionResult(
        cid=cid,
        slug=slug,
        anchor=anchor,
        passed=bool(passed),
        detail=detail,
        seconds=time.perf_counter() - start,
    )


# ---------------------------------------------------------------------------
# A1: degenerate-environment survival against the classical fixed point
# ---------------------------------------------------------------------------

def criterion_a1() -> CriterionResult:
    """Poisson family without environment noise: the estimator must hit the
    classical fixed-point root of pi = 1 - exp(-(1+eps) pi), and the ratio
    to 2*eps/sigma^2 must approach 1 from inside [0.85, 1.0].

    With a degenerate environment the estimator has zero Monte Carlo
    variance, so the fixed-point comparison uses a deterministic allowance
    of 1e-5 covering the adaptive-horizon truncation of both sides.
    """
    start = time.perf_counter()
    ratios = []
    details = []
    passed = True
    for eps in (0.1, 0.05, 0.02):
        model = make_environment("poisson", epsilon=eps, nu=0.0)
        res = estimate_survival_gf(model, n_reps=100_000, seed=101)
        oracle = brentq(
            lambda x: 1.0 - math.exp(-(1.0 + eps) * x) - x, 1e-12, 1.0, xtol=1e-15
        )
        gap = abs(res.estimate - oracle)
        if gap > 3.0 * res.std_error + 1e-5:
            passed = False
        ratio = res.estimate / (2.0 * eps / 1.0)
        ratios.append(ratio)
        details.append(f"eps={eps}: gap={gap:.1e}, ratio={ratio:.4f}")
    if not (0.85 <= ratios[-1] <= 1.0):
        passed = False
    if not (ratios[0] < ratios[1] < ratios[2]):
        passed = False
    return _result(
        "A1", "haldane-degenerate-env", "pi ~ 2 eps/sigma^2 (vanishing mean variance)",
        passed, "; ".join(details), start,
    )


# ---------------------------------------------------------------------------
# A2: supercritical random environment, intermediate variance ratio
# ---------------------------------------------------------------------------

def criterion_a2() -> CriterionResult:
    """Linear-fractional family, two-point noise, rho = 1: ratios of the
    closed-form composition estimate to (2-rho) eps/sigma^2 must approach 1
    and lie within 25% at eps = 0.01 (one million replicates per point)."""
    start = time.perf_counter()
    rows = haldane_sweep(
        "linear_fractional", rho=1.0, eps_list=(0.05, 0.02, 0.01), n_reps=1_000_000, seed=202
    )
    ratios = [row.ratio for row in rows]
    gaps = [abs(r - 1.0) for r in ratios]
    passed = 0.75 <= ratios[-1] <= 1.25 and gaps[0] > gaps[1] > gaps[2]
    detail = "; ".join(
        f"eps={row.epsilon}: ratio={row.ratio:.4f} (se {row.result.std_error:.1e})" for row in rows
    )
    return _result(
        "A2", "haldane-intermediate-ratio", "pi ~ (2-rho) eps/sigma^2 for rho in (0,2)",
        passed, detail, start,
    )


# ---------------------------------------------------------------------------
# A3: subcritical regime
# ---------------------------------------------------------------------------

def criterion_a3() -> CriterionResult:
    """rho = 3 at eps = 0.02: the exact mean log growth is negative and the
    estimated survival vanishes (below 1e-3 with 1e5 replicates)."""
    start = time.perf_counter()
    eps, rho = 0.02, 3.0
    model = make_environment("linear_fractional", epsilon=eps, nu=rho * eps)
    log_mean = model.log_moment()
    closed_form = 0.5 * math.log((1.0 + eps) ** 2 - rho * eps)
    res = estimate_survival_gf(model, n_reps=100_000, seed=303)
    passed = (
        log_mean < 0.0
        and abs(log_mean - closed_form) < 1e-14
        and res.estimate < 1e-3
    )
    detail = (
        f"E[log mean]={log_mean:.6f} (closed form {closed_form:.6f}); "
        f"pi_hat={res.estimate:.2e}, flagged={res.n_flagged}"
    )
    return _result(
        "A3", "haldane-subcritical", "pi = 0 beyond the rho = 2 transition",
        passed, detail, start,
    )


# ---------------------------------------------------------------------------
# A4: perpetuity limit laws
# ---------------------------------------------------------------------------

def criterion_a4() -> CriterionResult:
    """Environment-derived coefficients at rho = 1: gamma-rescaled series
    draws match the inverse gamma law with shape 2*rho_hat+1 and scale
    2*alpha built from the exact regime parameters (KS < 0.02 at
    eps = 0.005 with 1e5 draws), with distances nonincreasing along the
    sweep up to one 99% KS null quantile (the distances sit at the Monte
    Carlo noise floor, so strict ordering is not observable).  The
    degenerate regime concentrates: at least 99% of beta-rescaled draws
    within 10% of alpha.
    """
    start = time.perf_counter()
    n = 100_000
    allowance = ks_threshold(n, alpha=0.01)
    distances = []
    details = []
    for i, eps in enumerate((0.05, 0.02, 0.01, 0.005)):
        spec = from_environment(make_environment("poisson", epsilon=eps, nu=eps))
        fit = limit_fit_test(spec, n, rng_stream(404, i), tol=1e-3)
        distances.append(fit.ks_distance)
        details.append(f"eps={eps}: KS={fit.ks_distance:.4f} (a={fit.limit.a:.4f})")
    passed = distances[-1] < 0.02
    for previous, current in zip(distances, distances[1:]):
        if current > previous + allowance:
            passed = False
    if distances[-1] > distances[0] + allowance:
        passed = False

    dirac_spec = from_environment(make_environment("poisson", epsilon=0.005, nu=0.0))
    dirac_fit = limit_fit_test(dirac_spec, 10_000, rng_stream(404, 99))
    if dirac_fit.concentration < 0.99:
        passed = False
    details.append(f"degenerate concentration={dirac_fit.concentration:.4f}")
    return _result(
        "A4", "perpetuity-limit-laws",
        "gamma Y ~ InvGamma(2 rho_hat + 1, 2 alpha); beta Y -> alpha",
        passed, "; ".join(details), start,
    )


# ---------------------------------------------------------------------------
# A5: representation identity at scale
# ---------------------------------------------------------------------------

def criterion_a5() -> CriterionResult:
    """1000 random environment paths per family with horizons up to 500:
    the reciprocal-survival identity holds to a relative 1e-9 and the
    weighted shape series plus mean-inverse tail never drops below
    1 - 1e-12."""
    start = time.perf_counter()
    rng = rng_stream(505, 0)
    worst_residual = 0.0
    worst_floor = math.inf
    counted = 0
    for family in ("poisson", "linear_fractional", "finite"):
        model = make_environment(family, epsilon=0.02, nu=0.02)
        lengths = rng.generator.integers(1, 501, size=1000)
        for n in lengths:
            ident = survival_identity(sample_env_path(model, int(n), rng))
            if ident.extinction_certain:
                continue
            counted += 1
            worst_residual = max(worst_residual, ident.identity_residual)
            worst_floor = min(worst_floor, ident.shape_series + ident.mean_inverse_tail)
    passed = worst_residual < 1e-9 and worst_floor >= 1.0 - 1e-12
    detail = (
        f"{counted} paths: max residual={worst_residual:.2e}, "
        f"min(series + tail)={worst_floor:.15f}"
    )
    return _result(
        "A5", "survival-representation",
        "1/(1-q0) = 1/mu_n + sum psi_k+1(q_k+1)/mu_k",
        passed, detail, start,
    )


# ---------------------------------------------------------------------------
# A6: inverse gamma Laplace transform ODE
# ---------------------------------------------------------------------------

def criterion_a6() -> CriterionResult:
    """The quadrature Laplace transform of every inverse gamma law on the
    grid satisfies lam h'' = (a-1) h' + b h to 1e-5, and the residual
    scales like step^2 (halving ratio in [3, 5] in the regime where the
    differencing error dominates the quadrature error).

    The grid uses spacing 3e-4: shapes below 1 steepen the transform's
    derivatives near the origin, so the 1e-3 spacing adequate in the
    interior overshoots the 1e-5 budget at the (0.5, *, 0.1) corner.
    """
    start = time.perf_counter()
    worst = 0.0
    passed = True
    for a in (0.5, 1.0, 2.0, 5.0):
        for b in (0.5, 2.0):
            params = InverseGammaParams(a, b)
            for lam in (0.1, 0.5, 1.0, 2.0, 5.0):
                res = laplace_ode_residual(params, lam, 3e-4)
                worst = max(worst, res)
                if res >= 1e-5:
                    passed = False
    params = InverseGammaParams(2.0, 1.0)
    coarse = laplace_ode_residual(params, 1.0, 8e-3)
    fine = laplace_ode_residual(params, 1.0, 4e-3)
    ratio = coarse / fine
    if not (3.0 <= ratio <= 5.0):
        passed = False
    detail = f"max grid residual={worst:.2e}; step-halving ratio={ratio:.2f}"
    return _result(
        "A6", "invgamma-laplace-ode", "lam h'' = (a-1) h' + b h, h(0) = 1",
        passed, detail, start,
    )


# ---------------------------------------------------------------------------
# A7: moment expansions
# ---------------------------------------------------------------------------

def criterion_a7() -> CriterionResult:
    """Two-point noise with nu = eps: the inverse-moment expansions for
    r in {1, 2} and the log-mean expansion eps - nu/2 have empirical decay
    exponents of at least 1.4 along eps in {1e-1, 1e-2, 1e-3}."""
    start = time.perf_counter()
    eps_values = np.array([1e-1, 1e-2, 1e-3])
    passed = True
    details = []
    for label, error_fn in (
        ("r=1", lambda m: expansion_check(m, 1.0).abs_error),
        ("r=2", lambda m: expansion_check(m, 2.0).abs_error),
        ("log", lambda m: abs(m.log_moment() - (m.epsilon - m.nu / 2.0))),
    ):
        errors = []
        for eps in eps_values:
            model = make_environment("poisson", epsilon=float(eps), nu=float(eps))
            errors.append(error_fn(model))
        slope = float(np.polyfit(np.log(eps_values), np.log(errors), 1)[0])
        scale = max(e / eps ** 1.5 for e, eps in zip(errors, eps_values))
        details.append(f"{label}: exponent={slope:.2f}, max err/eps^1.5={scale:.2e}")
        if slope < 1.4:
            passed = False
    return _result(
        "A7", "moment-expansions",
        "E[mean^-r] = 1 - r eps + r(r+1)/2 nu + o(eps); E[log mean] = eps - nu/2 + o(eps)",
        passed, "; ".join(details), start,
    )


# ---------------------------------------------------------------------------
# A8: estimator cross-validation
# ---------------------------------------------------------------------------

_A8_MATRIX = (
    ("poisson", 0.1, 0.0),
    ("poisson", 0.05, 0.0),
    ("poisson", 0.05, 0.5),
    ("finite", 0.05, 0.5),
    ("linear_fractional", 0.05, 1.0),
    ("linear_fractional", 0.02, 1.0),
)


def criterion_a8() -> CriterionResult:
    """Population simulation and the generating-function estimator agree
    within a joint five-sigma band on six configurations spanning the
    vanishing and intermediate variance-ratio regimes (1e5 replicates
    each)."""
    start = time.perf_counter()
    passed = True
    details = []
    for i, (family, eps, rho) in enumerate(_A8_MATRIX):
        model = make_environment(family, epsilon=eps, nu=rho * eps)
        gf = estimate_survival_gf(model, n_reps=100_000, seed=808, stream_base=i << 32)
        pop = simulate_population(model, n_reps=100_000, seed=809, stream_base=i << 32)
        joint = math.hypot(gf.std_error, pop.std_error)
        pull = abs(gf.estimate - pop.estimate) / joint
        if pull > 5.0 or pop.n_overrun:
            passed = False
        details.append(f"{family}/eps={eps}/rho={rho}: {pull:.2f} sigma")
    return _result(
        "A8", "estimator-cross-validation",
        "generating-function and population estimators target one pi",
        passed, "; ".join(details), start,
    )


ALL_CRITERIA = (
    criterion_a1,
    criterion_a2,
    criterion_a3,
    criterion_a4,
    criterion_a5,
    criterion_a6,
    criterion_a7,
    criterion_a8,
)


def run_all() -> list[CriterionResult]:
    """Run every acceptance criterion in order."""
    return [fn() for fn in ALL_CRITERIA]
