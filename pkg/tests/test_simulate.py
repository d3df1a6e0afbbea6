"""Synthetic generator, scoring metrics, experiment loop, and timing bench."""

import numpy as np
import pytest

from svcsel import errors, simulate
from svcsel.selection import CostKind
from svcsel.simulate import DgpConfig
from svcsel.terms import EffectType


def test_generate_is_seed_deterministic():
    a = simulate.generate(DgpConfig(n=100, p=2, seed=9))
    b = simulate.generate(DgpConfig(n=100, p=2, seed=9))
    np.testing.assert_array_equal(a.y, b.y)
    np.testing.assert_array_equal(a.coords, b.coords)
    np.testing.assert_array_equal(a.beta_svc, b.beta_svc)
    c = simulate.generate(DgpConfig(n=100, p=2, seed=10))
    assert not np.array_equal(a.y, c.y)


def test_generate_covariate_width_is_three_per_p():
    for p in (1, 3):
        data = simulate.generate(DgpConfig(n=80, p=p, seed=0))
        assert data.covariates.shape == (80, 3 * p)
        assert len(data.labels) == 3 * p


def test_generate_config_validation():
    with pytest.raises(errors.ParameterError):
        DgpConfig(n=10)
    with pytest.raises(errors.ParameterError):
        DgpConfig(n=100, tau1=-0.1)


def test_spatial_coefficient_mean_is_centered_at_one():
    """The spatial coefficient surfaces average to their fixed level 1."""
    means = []
    for seed in range(100):
        data = simulate.generate(DgpConfig(n=500, p=1, seed=seed))
        means.append(data.beta_svc.mean())
    means = np.asarray(means)
    se = means.std(ddof=1) / np.sqrt(means.size)
    assert abs(means.mean() - 1.0) <= 3 * se + 1e-12


def test_chunked_moving_average_matches_dense():
    rng = np.random.default_rng(3)
    coords = rng.standard_normal((300, 2))
    u = rng.standard_normal((300, 2))
    dense = simulate._moving_average(coords, u)
    old = simulate._DENSE_DGP_LIMIT
    simulate._DENSE_DGP_LIMIT = 10
    try:
        chunked = simulate._moving_average(coords, u)
    finally:
        simulate._DENSE_DGP_LIMIT = old
    np.testing.assert_allclose(chunked, dense, atol=1e-10)


def test_rmse_and_bias_trivial_values():
    t = np.arange(12.0).reshape(3, 4)
    assert simulate.rmse(t, t) == 0.0
    assert simulate.bias(t, t) == 0.0
    assert simulate.rmse(t + 0.5, t) == pytest.approx(0.5)
    assert simulate.bias(t + 0.5, t) == pytest.approx(0.5)
    anti = t.copy()
    anti[0] += 0.3
    anti[1] -= 0.3
    anti[2, :2] += 0.3
    anti[2, 2:] -= 0.3
    assert abs(simulate.bias(anti, t)) < 1e-12


def test_rmse_and_bias_match_double_loop_oracle():
    rng = np.random.default_rng(4)
    est = rng.standard_normal((7, 13))
    tru = rng.standard_normal((7, 13))
    acc_sq = 0.0
    acc = 0.0
    for i in range(7):
        for j in range(13):
            acc_sq += (est[i, j] - tru[i, j]) ** 2
            acc += est[i, j] - tru[i, j]
    assert abs(simulate.rmse(est, tru) - np.sqrt(acc_sq / 91)) < 1e-12
    assert abs(simulate.bias(est, tru) - acc / 91) < 1e-12


def test_rmse_shape_mismatch_rejected():
    with pytest.raises(errors.InputError):
        simulate.rmse(np.zeros((2, 3)), np.zeros((3, 2)))


def test_true_types_mapping():
    data = simulate.generate(DgpConfig(n=80, p=2, seed=0))
    types = simulate.true_types(data)
    assert types["intercept"] is EffectType.SVC
    assert types["xc2"] is EffectType.CONSTANT
    assert types["xs1"] is EffectType.SVC
    assert types["xn2"] is EffectType.NVC


def test_fit_named_model_rejects_unknown_name():
    data = simulate.generate(DgpConfig(n=80, p=1, seed=0))
    problem = simulate.build_synthetic_problem(data, l_max=10)
    with pytest.raises(errors.ParameterError):
        simulate.fit_named_model(problem, data, "gwr")


def test_run_experiment_minimal_grid_has_all_cells():
    report = simulate.run_experiment(("lm", "select"), DgpConfig(n=150, p=1, seed=0),
                                     iterations=2, l_max=20, maxfev=100)
    rows = report.rows()
    for name in ("lm", "select"):
        for cls in simulate.COEF_CLASSES:
            cells = [r for r in rows if r[0] == name and r[1] == cls]
            metrics = {r[2] for r in cells}
            assert {"rmse", "bias", "se_rmse", "se_bias"} <= metrics
    assert report.failures == {"lm": 0, "select": 0}
    assert all(v > 0 for v in report.wall_time.values())
    # selection models record which type was chosen for every class
    assert sum(report.type_counts["select"]["constant"].values()) == 2


def test_run_experiment_is_seed_deterministic():
    kw = dict(iterations=2, l_max=20, maxfev=100)
    a = simulate.run_experiment(("lm",), DgpConfig(n=120, p=1, seed=3), **kw)
    b = simulate.run_experiment(("lm",), DgpConfig(n=120, p=1, seed=3), **kw)
    assert a.coef_rmse == b.coef_rmse
    assert a.coef_bias == b.coef_bias
    assert a.se_rmse == b.se_rmse


def test_lm_is_worse_than_selection_on_varying_coefficients():
    report = simulate.run_experiment(("lm", "select", "true"),
                                     DgpConfig(n=300, p=1, seed=1),
                                     iterations=3, l_max=30, maxfev=120)
    assert report.coef_rmse["lm"]["svc"] > report.coef_rmse["select"]["svc"]
    assert report.coef_rmse["lm"]["nvc"] > report.coef_rmse["select"]["nvc"]
    # the known-types model is the reference floor for its own SE scores
    assert report.se_rmse["true"]["svc"] == 0.0


def test_bench_timing_reports_separate_phases():
    rows = simulate.bench_timing([100, 200], p=1, l_cap=15, repeats=3,
                                 seed=0, cost_kind=CostKind.BIC, maxfev=60)
    assert [r.n for r in rows] == [100, 200]
    for r in rows:
        assert r.total >= r.precompute
        assert r.sweep > 0
        assert len(r.sweep_times) == 3
    # precompute work grows with the sample size
    assert rows[1].precompute > rows[0].precompute


def test_bench_timing_requires_enough_repeats():
    with pytest.raises(errors.ParameterError):
        simulate.bench_timing([100], repeats=2)
