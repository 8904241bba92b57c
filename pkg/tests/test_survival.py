"""Survival-module tests: path composition, the reciprocal-survival
identity, the closed-form composition oracle, estimators, and sweeps."""

import math

import numpy as np
import pytest
from scipy.optimize import brentq

from haldane import (
    EnvPath,
    FinitePmf,
    LinearFractional,
    Poisson,
    RegimeParams,
    ResourceOverrunError,
    backward_extinction,
    estimate_survival_gf,
    gw_fixed_point_survival,
    haldane_prediction,
    haldane_sweep,
    lf_exact_extinction,
    make_environment,
    rng_stream,
    sample_env_path,
    simulate_population,
    simulate_population_run,
    survival_identity,
)


# ---------------------------------------------------------------------------
# Paths
# ---------------------------------------------------------------------------

def test_env_path_basics():
    model = make_environment("poisson", epsilon=0.05, nu=0.0)
    path = sample_env_path(model, 1, rng_stream(1, 0))
    assert path.n == 1
    assert path.cum_log_mean[0] == 0.0
    assert path.cum_log_mean[1] == pytest.approx(math.log(1.05), rel=1e-14)


def test_env_path_degenerate_growth():
    model = make_environment("poisson", epsilon=0.05, nu=0.0)
    path = sample_env_path(model, 100, rng_stream(1, 0))
    assert path.cum_log_mean[100] == pytest.approx(100 * math.log(1.05), rel=1e-12)


def test_env_path_lln():
    model = make_environment("poisson", epsilon=0.01, nu=0.01)
    n = 10_000
    path = sample_env_path(model, n, rng_stream(2, 0))
    log_means = np.diff(path.cum_log_mean)
    target = model.log_moment()
    spread = float(np.std(log_means))
    assert path.cum_log_mean[n] / n == pytest.approx(target, abs=5 * spread / math.sqrt(n))


def test_env_path_validation():
    with pytest.raises(ValueError):
        EnvPath(laws=(), cum_log_mean=np.array([0.0]))
    with pytest.raises(ValueError):
        EnvPath(laws=(Poisson(1.0),), cum_log_mean=np.array([0.1, 0.2]))
    with pytest.raises(ValueError):
        sample_env_path(make_environment("poisson", epsilon=0.01, nu=0.0), 0, rng_stream(0, 0))


# ---------------------------------------------------------------------------
# Backward composition and oracles
# ---------------------------------------------------------------------------

def test_backward_single_step_is_zero_mass():
    path = EnvPath.from_laws([LinearFractional(0.3, 0.2)])
    q = backward_extinction(path)
    assert q[-1] == 0.0
    assert q[0] == pytest.approx(0.3, abs=1e-15)


def test_backward_one_child_laws_fix_zero():
    path = EnvPath.from_laws([FinitePmf((0.0, 1.0))] * 17)
    assert backward_extinction(path)[0] == 0.0


def test_backward_two_lf_matches_direct_composition():
    law = LinearFractional(0.3, 0.2)
    path = EnvPath.from_laws([law, law])
    expected = law.pgf(law.pgf(0.0))
    assert backward_extinction(path)[0] == pytest.approx(expected, abs=1e-14)
    assert lf_exact_extinction(path) == pytest.approx(expected, abs=1e-14)


def test_lf_oracle_agreement_long_paths():
    model = make_environment("linear_fractional", epsilon=0.02, nu=0.02, p0=0.3)
    rng = rng_stream(3, 1)
    for _ in range(20):
        path = sample_env_path(model, 200, rng)
        assert lf_exact_extinction(path) == pytest.approx(
            backward_extinction(path)[0], abs=1e-12
        )


def test_lf_oracle_single_law():
    assert lf_exact_extinction(EnvPath.from_laws([LinearFractional(0.3, 0.2)])) == pytest.approx(
        0.3, abs=1e-14
    )


def test_lf_oracle_type_error():
    with pytest.raises(TypeError):
        lf_exact_extinction(EnvPath.from_laws([Poisson(1.0)]))


def test_extinction_monotone_in_horizon():
    model = make_environment("finite", epsilon=0.03, nu=0.03)
    rng = rng_stream(4, 0)
    path = sample_env_path(model, 80, rng)
    values = [backward_extinction(EnvPath.from_laws(path.laws[:n]))[0] for n in range(1, 81)]
    assert all(b >= a - 1e-14 for a, b in zip(values, values[1:]))


# ---------------------------------------------------------------------------
# Reciprocal-survival identity
# ---------------------------------------------------------------------------

def test_identity_deterministic_poisson():
    path = EnvPath.from_laws([Poisson(1.1)] * 200)
    ident = survival_identity(path)
    assert not ident.extinction_certain
    assert ident.identity_residual < 1e-9


def test_identity_one_child_laws():
    path = EnvPath.from_laws([FinitePmf((0.0, 1.0))] * 10)
    ident = survival_identity(path)
    assert ident.shape_series == 0.0
    assert ident.mean_inverse_tail == pytest.approx(1.0)
    assert ident.identity_residual == 0.0


def test_identity_floor_random_paths():
    model = make_environment("linear_fractional", epsilon=0.02, nu=0.02)
    rng = rng_stream(5, 2)
    for _ in range(50):
        ident = survival_identity(sample_env_path(model, 100, rng))
        assert ident.shape_series + ident.mean_inverse_tail >= 1.0 - 1e-12
        assert ident.identity_residual < 1e-9


def test_identity_detects_corrupted_shape(monkeypatch):
    """Dropping the mean-product term from the shape function must break
    the identity (mutation sensitivity of the central check)."""
    bad = lambda self, r: 1.0 / max(self.survival_map(r), 1e-300)
    monkeypatch.setattr(Poisson, "shape_from_survival", bad)
    path_laws = [Poisson(1.1)] * 50
    ident = survival_identity(EnvPath.from_laws(path_laws))
    assert ident.identity_residual > 1e-3


# ---------------------------------------------------------------------------
# Fixed-point oracle
# ---------------------------------------------------------------------------

def test_gw_fixed_point_against_transcendental_root():
    for eps in (0.1, 0.02):
        lam = 1.0 + eps
        survival = gw_fixed_point_survival(Poisson(lam))
        oracle = brentq(lambda x: 1 - math.exp(-lam * x) - x, 1e-12, 1.0, xtol=1e-15)
        assert survival == pytest.approx(oracle, abs=1e-12)
    assert gw_fixed_point_survival(Poisson(0.95)) == 0.0
    assert gw_fixed_point_survival(FinitePmf((0.0, 0.0, 1.0))) == 1.0


# ---------------------------------------------------------------------------
# Haldane predictions
# ---------------------------------------------------------------------------

def test_haldane_prediction_values():
    assert haldane_prediction(RegimeParams(0.05, 0.0, 0.0, 1.0)) == pytest.approx(0.10)
    assert haldane_prediction(RegimeParams(0.05, 0.05, 1.0, 1.0)) == pytest.approx(0.05)
    assert haldane_prediction(RegimeParams(0.05, 0.125, 2.5, 1.0)) == 0.0
    with pytest.raises(ValueError):
        haldane_prediction(RegimeParams(0.05, 0.1, 2.0, 1.0))


# ---------------------------------------------------------------------------
# Generating-function estimator
# ---------------------------------------------------------------------------

def test_gf_estimator_degenerate_matches_oracle():
    model = make_environment("poisson", epsilon=0.1, nu=0.0)
    res = estimate_survival_gf(model, n_reps=1000, seed=9)
    oracle = brentq(lambda x: 1 - math.exp(-1.1 * x) - x, 1e-12, 1.0, xtol=1e-15)
    assert res.std_error == 0.0
    assert res.estimate == pytest.approx(oracle, abs=3 * res.std_error + 1e-5)
    assert res.n_flagged == 0


def test_gf_estimator_one_child_flags_horizon():
    model = make_environment("finite", epsilon=0.0, nu=0.0, template=(0.0, 1.0))
    res = estimate_survival_gf(model, n_reps=50, seed=9, n_max=200)
    assert res.estimate == 1.0
    assert res.n_flagged == 50


def test_gf_estimator_deterministic_given_seed():
    model = make_environment("linear_fractional", epsilon=0.05, nu=0.05)
    a = estimate_survival_gf(model, n_reps=20_000, seed=33)
    b = estimate_survival_gf(model, n_reps=20_000, seed=33)
    c = estimate_survival_gf(model, n_reps=20_000, seed=34)
    assert a == b
    assert a.estimate != c.estimate


def test_gf_estimator_validation():
    model = make_environment("poisson", epsilon=0.05, nu=0.0)
    with pytest.raises(ValueError):
        estimate_survival_gf(model, n_reps=0, seed=1)
    with pytest.raises(ValueError):
        estimate_survival_gf(model, n_reps=10, seed=1, tol_q=2.0)


def test_gf_engines_agree_across_families():
    """The Moebius, bit-replay, and scalar fallback engines estimate the
    same quantity: compare overlapping configurations statistically."""
    lf = make_environment("linear_fractional", epsilon=0.05, nu=0.025)
    po = make_environment("poisson", epsilon=0.05, nu=0.025)
    r_lf = estimate_survival_gf(lf, n_reps=40_000, seed=41)
    r_po = estimate_survival_gf(po, n_reps=40_000, seed=42)
    # same epsilon/rho, different sigma_sq: compare each to its prediction
    for model, res in ((lf, r_lf), (po, r_po)):
        pred = haldane_prediction(RegimeParams.from_environment(model))
        assert res.estimate == pytest.approx(pred, rel=0.25)


def test_gf_scalar_fallback_uniform_noise():
    model = make_environment("poisson", epsilon=0.1, nu=0.02, noise="uniform")
    res = estimate_survival_gf(model, n_reps=300, seed=8)
    pred = haldane_prediction(RegimeParams.from_environment(model))
    assert res.estimate == pytest.approx(pred, rel=0.4)
    again = estimate_survival_gf(model, n_reps=300, seed=8)
    assert res == again


# ---------------------------------------------------------------------------
# Population simulation
# ---------------------------------------------------------------------------

def test_population_trivia():
    assert simulate_population(FinitePmf((1.0,)), n_reps=500, seed=3).estimate == 0.0
    res = simulate_population(FinitePmf((0.0, 0.0, 1.0)), n_reps=500, seed=3)
    assert res.estimate == 1.0
    run = simulate_population_run(FinitePmf((0.0, 0.0, 1.0)), rng_stream(1, 1), cap=50)
    assert run.final_state == "reached_cap"
    assert run.generations == 6  # 2^6 = 64 >= 50
    run = simulate_population_run(FinitePmf((1.0,)), rng_stream(1, 1), cap=50)
    assert run.final_state == "extinct"
    assert run.generations == 1


def test_population_overrun_guard():
    with pytest.raises(ResourceOverrunError):
        simulate_population_run(
            FinitePmf((0.0, 0.0, 1.0)), rng_stream(1, 1), cap=10**9, max_individuals=100
        )


def test_population_rejects_subcritical_model():
    model = make_environment("poisson", epsilon=0.02, nu=0.06)
    with pytest.raises(ValueError, match="rho"):
        simulate_population(model, n_reps=10, seed=1)


def test_population_agrees_with_gf_small():
    model = make_environment("poisson", epsilon=0.1, nu=0.0)
    gf = estimate_survival_gf(model, n_reps=10_000, seed=21)
    pop = simulate_population(model, n_reps=10_000, seed=22)
    joint = math.hypot(gf.std_error, pop.std_error)
    assert abs(gf.estimate - pop.estimate) <= 5.0 * joint


def test_population_lf_family_small():
    model = make_environment("linear_fractional", epsilon=0.1, nu=0.05)
    gf = estimate_survival_gf(model, n_reps=20_000, seed=23)
    pop = simulate_population(model, n_reps=20_000, seed=24)
    joint = math.hypot(gf.std_error, pop.std_error)
    assert abs(gf.estimate - pop.estimate) <= 5.0 * joint


def test_population_deterministic_given_seed():
    model = make_environment("poisson", epsilon=0.1, nu=0.0)
    a = simulate_population(model, n_reps=5000, seed=77)
    b = simulate_population(model, n_reps=5000, seed=77)
    assert a == b


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

def test_sweep_degenerate_ratios_increase():
    rows = haldane_sweep("poisson", rho=0.0, eps_list=(0.1, 0.05, 0.02), n_reps=100, seed=1)
    ratios = [row.ratio for row in rows]
    assert ratios[0] < ratios[1] < ratios[2] < 1.0
    for row in rows:
        assert row.prediction == pytest.approx(2 * row.epsilon, rel=1e-12)
        oracle = brentq(
            lambda x: 1 - math.exp(-(1 + row.epsilon) * x) - x, 1e-12, 1.0, xtol=1e-15
        )
        assert row.result.estimate == pytest.approx(oracle, abs=1e-5)


def test_sweep_subcritical_row():
    rows = haldane_sweep(
        "linear_fractional", rho=3.0, eps_list=[0.02], n_reps=2000, seed=6, n_max=4000
    )
    assert rows[0].prediction == 0.0
    assert rows[0].result.estimate < 5e-3
    assert rows[0].ratio == rows[0].result.estimate


def test_sweep_validation():
    with pytest.raises(ValueError, match="decreasing"):
        haldane_sweep("poisson", rho=0.0, eps_list=(0.02, 0.05), n_reps=10, seed=1)
    with pytest.raises(ValueError, match="rho"):
        haldane_sweep("poisson", rho=-1.0, eps_list=(0.05,), n_reps=10, seed=1)
