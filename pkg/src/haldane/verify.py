"""Executable invariant suite behind ``haldane verify``.

Each check is registered with a stable name and a mathematical anchor (the
identity or bound it exercises); ``run_checks`` executes a level ("fast"
runs the invariant checks in about a minute, "full" appends the acceptance
criteria) and returns structured outcomes for the CLI to render.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import acceptance
from .environment import RegimeParams, analytic_moments, expansion_check, make_environment
from .numerics import (
    InverseGammaParams,
    invgamma_cdf,
    invgamma_pdf,
    ks_one_sample,
    ks_threshold,
    ks_two_sample,
    laplace_ode_residual,
    lower_reg_gamma,
    rng_stream,
    upper_reg_gamma,
)
from .offspring import FinitePmf, LinearFractional, Poisson
from .perpetuity import from_environment, regime_of, sample_chain_batch, sample_series_batch
from .survival import (
    backward_extinction,
    estimate_survival_gf,
    gw_fixed_point_survival,
    lf_exact_extinction,
    sample_env_path,
    survival_identity,
)

__all__ = ["CheckOutcome", "run_checks", "FAST_CHECKS"]

_SEED = 20260801
_LAW_MATRIX = (
    Poisson(1.05),
    Poisson(0.9),
    LinearFractional(p0=0.3, p=0.2),
    LinearFractional(p0=0.1, p=0.55),
    FinitePmf((0.25, 0.5, 0.25)),
    FinitePmf((0.4, 0.1, 0.3, 0.2)),
)


@dataclass(frozen=True)
class CheckOutcome:
    name: str
    anchor: str
    passed: bool
    detail: str
    seconds: float


def _grid() -> np.ndarray:
    return np.linspace(0.0, 1.0, 1001)


# ---------------------------------------------------------------------------
# Offspring-law checks
# ---------------------------------------------------------------------------

def _check_pgf_monotone_convex():
    s = _grid()
    worst = 0.0
    for law in _LAW_MATRIX:
        f = law.pgf(s)
        if abs(f[-1] - 1.0) > 1e-12:
            return False, f"{law!r}: f(1) = {f[-1]}"
        if np.any(f[1:-1] <= f[0] - 1e-15) or np.any(f[1:-1] >= 1.0):
            return False, f"{law!r}: values leave (f(0), 1)"
        d1 = np.diff(f)
        d2 = np.diff(f, 2)
        worst = max(worst, -float(d1.min()), -float(d2.min()))
        if np.any(d1 < -1e-12) or np.any(d2 < -1e-12):
            return False, f"{law!r}: monotonicity/convexity violated"
    return True, f"min first/second differences >= -{worst:.1e}"


def _check_shape_bounds():
    s = _grid()
    margin = 0.0
    for law in _LAW_MATRIX:
        psi = law.shape(s)
        lo = 0.5 * law.shape(0.0)
        hi = 2.0 * law.shape_at_one()
        if np.any(psi < lo - 1e-12) or np.any(psi > hi + 1e-12):
            return False, f"{law!r}: shape leaves [psi(0)/2, 2 psi(1)]"
        margin = max(margin, float(np.max(psi / max(hi, 1e-300))))
    return True, f"max shape/(2 psi(1)) = {margin:.3f}"


def _check_shape_lf_constant():
    s = _grid()
    worst = 0.0
    for law in _LAW_MATRIX:
        if not isinstance(law, LinearFractional):
            continue
        psi = law.shape(s)
        worst = max(worst, float(np.max(np.abs(psi - law.shape_at_one()))))
    return worst <= 1e-9, f"max |shape - shape(1)| = {worst:.2e}"


def _check_shape_defining_identity():
    s = np.linspace(0.0, 1.0 - 1e-3, 997)
    worst = 0.0
    for law in _LAW_MATRIX:
        m = law.mean()
        f = law.pgf(s)
        psi = law.shape(s)
        res = psi * (1.0 - f) * m * (1.0 - s) + (1.0 - f) - m * (1.0 - s)
        worst = max(worst, float(np.max(np.abs(res))))
    return worst <= 1e-10, f"max residual = {worst:.2e}"


def _check_offspring_moments_mc():
    n = 1_000_000
    worst = 0.0
    for i, law in enumerate(_LAW_MATRIX):
        rng = rng_stream(_SEED, 100 + i)
        draws = law.sample(rng, size=n)
        mean_se = math.sqrt(law.variance() / n)
        pull = abs(float(np.mean(draws)) - law.mean()) / max(mean_se, 1e-15)
        worst = max(worst, pull)
        var_hat = float(np.var(draws, ddof=1))
        # standard error of the sample variance via the fourth central moment
        c4 = float(np.mean((draws - law.mean()) ** 4))
        var_se = math.sqrt(max(c4 - law.variance() ** 2, 1e-30) / n)
        pull_v = abs(var_hat - law.variance()) / max(var_se, 1e-15)
        worst = max(worst, pull_v)
        if pull > 5.0 or pull_v > 5.0:
            return False, f"{law!r}: moment pull {max(pull, pull_v):.2f} sigma"
    return True, f"worst moment pull = {worst:.2f} sigma"


# ---------------------------------------------------------------------------
# Environment checks
# ---------------------------------------------------------------------------

def _check_env_moments_mc():
    n = 1_000_000
    worst = 0.0
    for j, noise in enumerate(("two_point", "uniform")):
        model = make_environment("poisson", epsilon=0.02, nu=0.01, noise=noise)
        rng = rng_stream(_SEED, 200 + j)
        m = model.sample_means(rng, size=n)
        mom = analytic_moments(model, 1.0)
        checks = (
            (np.mean(m), mom.mean, np.std(m, ddof=1) / math.sqrt(n)),
            (np.mean(1.0 / m), mom.inverse_moment, np.std(1.0 / m, ddof=1) / math.sqrt(n)),
            (np.mean(np.log(m)), mom.log_mean, np.std(np.log(m), ddof=1) / math.sqrt(n)),
        )
        for value, target, se in checks:
            pull = abs(float(value) - target) / max(se, 1e-15)
            worst = max(worst, pull)
            if pull > 5.0:
                return False, f"{noise}: pull {pull:.2f} sigma"
        v = float(np.var(m, ddof=1))
        c4 = float(np.mean((m - mom.mean) ** 4))
        # two-point noise has c4 = variance^2 exactly, leaving only the
        # O(1/n) sample-mean term, hence the floor on the tolerance
        tol_v = 5.0 * math.sqrt(max(c4 - mom.variance**2, 0.0) / n) + 10.0 * mom.variance / n
        gap = abs(v - mom.variance)
        worst = max(worst, gap / max(tol_v / 5.0, 1e-15))
        if gap > tol_v:
            return False, f"{noise}: variance gap {gap:.2e} > {tol_v:.2e}"
    return True, f"worst moment pull = {worst:.2f} sigma"


def _check_expansion_decay():
    eps_values = (1e-1, 1e-2, 1e-3)
    slopes = []
    for r in (1.0, 2.0):
        errors = []
        for eps in eps_values:
            model = make_environment("poisson", epsilon=eps, nu=eps)
            errors.append(expansion_check(model, r).abs_error)
        slope = np.polyfit(np.log(eps_values), np.log(errors), 1)[0]
        slopes.append(slope)
        if slope < 1.5:
            return False, f"r={r}: error decay exponent {slope:.2f} < 1.5"
    return True, f"error decay exponents {[f'{s:.2f}' for s in slopes]}"


def _check_log_mean_sign():
    for eps in (0.005, 0.02, 0.05):
        for rho, expected_positive in ((0.5, True), (1.0, True), (1.9, True), (2.1, False), (3.0, False)):
            nu = rho * eps
            if math.sqrt(nu) >= 1.0 + eps:
                continue
            model = make_environment("poisson", epsilon=eps, nu=nu)
            sign_ok = (model.log_moment() > 0.0) == expected_positive
            if not sign_ok:
                return False, f"eps={eps}, rho={rho}: wrong sign of E[log mean]"
    return True, "E[log mean] positive iff rho < 2 on the grid"


# ---------------------------------------------------------------------------
# Survival checks
# ---------------------------------------------------------------------------

def _identity_models():
    return (
        make_environment("poisson", epsilon=0.02, nu=0.02),
        make_environment("linear_fractional", epsilon=0.02, nu=0.02),
        make_environment("finite", epsilon=0.02, nu=0.02),
    )


def _check_representation_identity():
    rng = rng_stream(_SEED, 300)
    worst = 0.0
    worst_floor = 0.0
    for model in _identity_models():
        lengths = rng.generator.integers(1, 301, size=100)
        for n in lengths:
            path = sample_env_path(model, int(n), rng)
            ident = survival_identity(path)
            if ident.extinction_certain:
                continue
            worst = max(worst, ident.identity_residual)
            slack = ident.shape_series + ident.mean_inverse_tail - 1.0
            worst_floor = min(worst_floor, slack)
    ok = worst < 1e-9 and worst_floor >= -1e-12
    return ok, f"max residual = {worst:.2e}, min (series + tail - 1) = {worst_floor:.2e}"


def _check_extinction_monotone():
    rng = rng_stream(_SEED, 301)
    model = make_environment("poisson", epsilon=0.02, nu=0.02)
    path = sample_env_path(model, 200, rng)
    previous = -1.0
    for n in range(1, path.n + 1):
        prefix = type(path).from_laws(path.laws[:n])
        q0 = backward_extinction(prefix)[0]
        if q0 < previous - 1e-13:
            return False, f"q_0 decreased when appending generation {n}"
        previous = q0
    return True, "q_0 nondecreasing along 200 nested horizons"


def _check_lf_oracle_agreement():
    rng = rng_stream(_SEED, 302)
    model = make_environment("linear_fractional", epsilon=0.02, nu=0.02)
    worst = 0.0
    for _ in range(50):
        path = sample_env_path(model, 1000, rng)
        q_backward = backward_extinction(path)[0]
        q_moebius = lf_exact_extinction(path)
        worst = max(worst, abs(q_backward - q_moebius))
    return worst <= 1e-12, f"max |backward - moebius| = {worst:.2e}"


def _check_gw_oracle():
    worst = 0.0
    for eps in (0.1, 0.05, 0.02):
        model = make_environment("poisson", epsilon=eps, nu=0.0)
        est = estimate_survival_gf(model, n_reps=10, seed=_SEED).estimate
        oracle = gw_fixed_point_survival(Poisson(1.0 + eps))
        worst = max(worst, abs(est - oracle))
    return worst <= 1e-5, f"max |estimate - fixed point| = {worst:.2e}"


# ---------------------------------------------------------------------------
# Perpetuity checks
# ---------------------------------------------------------------------------

def _check_annuity_fixed_point():
    from .perpetuity import annuity_residual

    n = 10_000
    threshold = ks_threshold(n, n, alpha=0.01)
    worst = 0.0
    specs = (
        from_environment(make_environment("poisson", epsilon=0.02, nu=0.02)),
        from_environment(make_environment("linear_fractional", epsilon=0.05, nu=0.025)),
    )
    for i, spec in enumerate(specs):
        ks = annuity_residual(spec, n, rng_stream(_SEED, 400 + i))
        worst = max(worst, ks)
        if ks >= threshold:
            return False, f"spec {i}: KS {ks:.4f} >= {threshold:.4f}"
    return True, f"max annuity KS = {worst:.4f} < {threshold:.4f}"


def _check_sampler_equivalence():
    n = 10_000
    threshold = ks_threshold(n, n, alpha=0.01)
    spec = from_environment(make_environment("poisson", epsilon=0.02, nu=0.02))
    series, _ = sample_series_batch(spec, n, rng_stream(_SEED, 410))
    chain = sample_chain_batch(spec, n, rng_stream(_SEED, 411))
    ks = ks_two_sample(series, chain)
    return ks < threshold, f"series-vs-chain KS = {ks:.4f} (threshold {threshold:.4f})"


def _check_perpetuity_mean_identity():
    spec = from_environment(make_environment("linear_fractional", epsilon=0.05, nu=0.025))
    regime = regime_of(spec)
    n = 20_000
    y, _ = sample_series_batch(spec, n, rng_stream(_SEED, 420))
    target = regime.alpha / regime.beta  # E[A] / (1 - E[B])
    se = float(np.std(y, ddof=1)) / math.sqrt(n)
    pull = abs(float(np.mean(y)) - target) / se
    return pull < 5.0, f"mean pull = {pull:.2f} sigma (target {target:.3f})"


# ---------------------------------------------------------------------------
# Numerics checks
# ---------------------------------------------------------------------------

def _check_gamma_complementarity():
    worst = 0.0
    for a in (0.5, 1.0, 3.0, 10.0):
        for x in (0.0, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 30.0):
            gap = abs(lower_reg_gamma(a, x) + upper_reg_gamma(a, x) - 1.0)
            worst = max(worst, gap)
    return worst <= 1e-12, f"max |P + Q - 1| = {worst:.2e}"


def _check_invgamma_cdf_pdf():
    from scipy import integrate

    for a, b in ((0.5, 2.0), (1.0, 2.0), (3.0, 2.0)):
        params = InverseGammaParams(a, b)
        xs = np.linspace(0.05, 50.0, 200)
        cdf = np.array([invgamma_cdf(params, x) for x in xs])
        if np.any(np.diff(cdf) < -1e-12):
            return False, f"(a={a}, b={b}): CDF not nondecreasing"
        mass, _ = integrate.quad(lambda x: invgamma_pdf(params, x), 1e-12, np.inf, limit=400)
        if abs(mass - 1.0) > 1e-8:
            return False, f"(a={a}, b={b}): pdf mass {mass}"
    check = abs(invgamma_cdf(InverseGammaParams(1.0, 2.0), 2.0) - math.exp(-1.0))
    return check <= 1e-12, f"|cdf(1,2 at 2) - exp(-1)| = {check:.2e}"


def _check_laplace_ode_grid():
    worst = 0.0
    for a in (0.5, 1.0, 2.0, 5.0):
        for b in (0.5, 2.0):
            params = InverseGammaParams(a, b)
            for lam in (0.1, 0.5, 1.0, 2.0, 5.0):
                # spacing 3e-4: small shapes steepen h near the origin
                res = laplace_ode_residual(params, lam, 3e-4)
                worst = max(worst, res)
                if res >= 1e-5:
                    return False, f"(a={a}, b={b}, lam={lam}): residual {res:.2e}"
    return True, f"max ODE residual = {worst:.2e}"


def _check_ks_null():
    n = 10_000
    rng = rng_stream(_SEED, 500)
    u = rng.generator.random(n)
    d = ks_one_sample(u, lambda x: min(max(x, 0.0), 1.0))
    exact = ks_one_sample((np.arange(1, 101) - 0.5) / 100.0, lambda x: x)
    ok = d < ks_threshold(n, alpha=0.01) and abs(exact - 0.005) < 1e-12
    return ok, f"null KS = {d:.4f}; quantile-placed sample distance = {exact:.4f}"


def _check_stream_determinism():
    a = rng_stream(_SEED, 600).uniforms(1000)
    b = rng_stream(_SEED, 600).uniforms(1000)
    c = rng_stream(_SEED, 601).uniforms(1000)
    ok = bool(np.all(a == b)) and not np.all(a == c)
    return ok, "identical ids reproduce; distinct ids differ"


def _check_stream_independence():
    n = 1_000_000
    x = rng_stream(_SEED, 610).uniforms(n)
    y = rng_stream(_SEED, 611).uniforms(n)
    corr = float(np.corrcoef(x, y)[0, 1])
    return abs(corr) < 5.0 / math.sqrt(n), f"cross-correlation = {corr:.2e}"


def _check_haldane_prediction_table():
    cases = (
        (RegimeParams(epsilon=0.05, nu=0.0, rho=0.0, sigma_sq=1.0), 0.10),
        (RegimeParams(epsilon=0.05, nu=0.05, rho=1.0, sigma_sq=1.0), 0.05),
        (RegimeParams(epsilon=0.05, nu=0.125, rho=2.5, sigma_sq=1.0), 0.0),
    )
    from .survival import haldane_prediction

    for params, expected in cases:
        if abs(haldane_prediction(params) - expected) > 1e-15:
            return False, f"rho={params.rho}: wrong prediction"
    try:
        haldane_prediction(RegimeParams(epsilon=0.05, nu=0.1, rho=2.0, sigma_sq=1.0))
        return False, "rho=2 did not raise"
    except ValueError:
        pass
    return True, "2 eps/s^2, (2-rho) eps/s^2, 0, and the rho=2 boundary error"


FAST_CHECKS = (
    ("pgf-monotone-convex", "f nondecreasing and convex on [0,1], f(1)=1", _check_pgf_monotone_convex),
    ("shape-bounds", "psi(0)/2 <= psi(s) <= 2 psi(1)", _check_shape_bounds),
    ("shape-lf-constant", "psi constant for linear-fractional laws", _check_shape_lf_constant),
    ("shape-defining-identity", "1/(1-f(s)) = 1/(m(1-s)) + psi(s)", _check_shape_defining_identity),
    ("offspring-moments-mc", "sample mean/variance match f'(1), f''(1)+m-m^2", _check_offspring_moments_mc),
    ("env-moments-mc", "closed-form env moments match sampling", _check_env_moments_mc),
    ("expansion-decay", "E[mean^-r] = 1 - r eps + r(r+1)/2 nu + o(eps)", _check_expansion_decay),
    ("log-mean-sign", "sign(E[log mean]) flips at rho = 2", _check_log_mean_sign),
    ("representation-identity", "1/(1-q0) = 1/mu_n + sum psi_k+1(q_k+1)/mu_k", _check_representation_identity),
    ("extinction-monotone", "q_0(n) nondecreasing in the horizon", _check_extinction_monotone),
    ("lf-oracle-agreement", "backward composition matches Moebius closed form", _check_lf_oracle_agreement),
    ("gw-fixed-point", "degenerate-environment estimate matches f(q)=q root", _check_gw_oracle),
    ("annuity-fixed-point", "Y =(d) A + B Y", _check_annuity_fixed_point),
    ("sampler-equivalence", "series and chain draws share one law", _check_sampler_equivalence),
    ("perpetuity-mean", "E[Y] = E[A]/(1-E[B]) when E[B] < 1", _check_perpetuity_mean_identity),
    ("gamma-complementarity", "P(a,x) + Q(a,x) = 1", _check_gamma_complementarity),
    ("invgamma-cdf-pdf", "cdf(x) = Q(a, b/x); density integrates to 1", _check_invgamma_cdf_pdf),
    ("laplace-ode", "lam h'' = (a-1) h' + b h", _check_laplace_ode_grid),
    ("ks-statistics", "KS distance against null and exact placements", _check_ks_null),
    ("stream-determinism", "same (seed, id) reproduces the stream", _check_stream_determinism),
    ("stream-independence", "distinct stream ids are uncorrelated", _check_stream_independence),
    ("haldane-prediction", "pi ~ (2-rho) eps/sigma^2 table", _check_haldane_prediction_table),
)


def run_checks(level: str = "fast") -> list[CheckOutcome]:
    """Run the invariant suite; "full" appends the acceptance criteria."""
    if level not in ("fast", "full"):
        raise ValueError(f"level must be 'fast' or 'full', got {level!r}")
    outcomes = []
    for name, anchor, fn in FAST_CHECKS:
        start = time.perf_counter()
        try:
            passed, detail = fn()
        except Exception as exc:  # a crashed check is a failed check
            passed, detail = False, f"raised {type(exc).__name__}: {exc}"
        outcomes.append(
            CheckOutcome(name, anchor, bool(passed), detail, time.perf_counter() - start)
        )
    if level == "full":
        for result in acceptance.run_all():
            outcomes.append(
                CheckOutcome(
                    name=result.cid.lower() + "-" + result.slug,
                    anchor=result.anchor,
                    passed=result.passed,
                    detail=result.detail,
                    seconds=result.seconds,
                )
            )
    return outcomes
