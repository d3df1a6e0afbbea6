"""Coefficient-type specifications, variance profiles, and term designs."""

import numpy as np
import pytest

from svcsel import errors, terms
from svcsel.terms import EffectType, VarianceParams


def test_effect_type_parts_and_parameter_counts():
    assert not EffectType.CONSTANT.has_spatial
    assert EffectType.SVC.has_spatial and not EffectType.SVC.has_nonspatial
    assert EffectType.NVC.has_nonspatial and not EffectType.NVC.has_spatial
    assert EffectType.SNVC.has_spatial and EffectType.SNVC.has_nonspatial
    counts = {t: t.n_variance_params for t in EffectType}
    assert counts == {EffectType.CONSTANT: 0, EffectType.SVC: 2,
                      EffectType.NVC: 1, EffectType.SNVC: 3}


def test_v_diag_constant_is_empty():
    assert terms.v_diag(EffectType.CONSTANT, None).size == 0


def test_v_diag_svc_alpha_one():
    params = VarianceParams(tau_s_over_sigma=1.0, alpha=1.0)
    out = terms.v_diag(EffectType.SVC, params, np.array([1.0, 0.5]))
    np.testing.assert_allclose(out, [1.0, 0.5])


def test_v_diag_nvc_flat():
    params = VarianceParams(tau_n_over_sigma=0.5)
    np.testing.assert_allclose(
        terms.v_diag(EffectType.NVC, params, l_n=3), [0.5, 0.5, 0.5])


def test_v_diag_snvc_spatial_block_first():
    params = VarianceParams(tau_s_over_sigma=2.0, alpha=2.0, tau_n_over_sigma=0.25)
    ev = np.array([1.0, 0.5])
    out = terms.v_diag(EffectType.SNVC, params, ev, l_n=2)
    np.testing.assert_allclose(out, [2.0, 0.5, 0.25, 0.25])


def test_v_diag_monotone_in_scale():
    ev = np.linspace(1.0, 0.1, 5)
    lo = terms.v_diag(EffectType.SVC, VarianceParams(0.5, 1.5), ev)
    hi = terms.v_diag(EffectType.SVC, VarianceParams(1.5, 1.5), ev)
    assert np.all(hi > lo)


def test_variance_params_validation():
    with pytest.raises(errors.ParameterError):
        VarianceParams(tau_s_over_sigma=-1.0)
    with pytest.raises(errors.ParameterError):
        VarianceParams(alpha=0.1)
    with pytest.raises(errors.ParameterError):
        VarianceParams(alpha=10.0)


def test_term_design_all_ones_returns_basis():
    rng = np.random.default_rng(0)
    e = rng.standard_normal((8, 3))
    out = terms.term_design(np.ones(8), EffectType.SVC, moran_vectors=e)
    np.testing.assert_array_equal(out, e)


def test_term_design_constant_has_zero_width():
    out = terms.term_design(np.arange(5.0), EffectType.CONSTANT)
    assert out.shape == (5, 0)


def test_term_design_elementwise_oracle():
    rng = np.random.default_rng(1)
    x = rng.standard_normal(12)
    e = rng.standard_normal((12, 4))
    out = terms.term_design(x, EffectType.SVC, moran_vectors=e)
    for i in range(12):
        for j in range(4):
            assert out[i, j] == x[i] * e[i, j]


def test_term_design_snvc_concatenates_spatial_first():
    rng = np.random.default_rng(2)
    x = rng.standard_normal(6)
    es = rng.standard_normal((6, 2))
    en = rng.standard_normal((6, 3))
    out = terms.term_design(x, EffectType.SNVC, es, en)
    np.testing.assert_array_equal(out[:, :2], x[:, None] * es)
    np.testing.assert_array_equal(out[:, 2:], x[:, None] * en)


def test_term_spec_validation():
    with pytest.raises(errors.ParameterError):
        terms.TermSpec(0, candidate_types={EffectType.SVC})
    with pytest.raises(errors.ParameterError):
        terms.TermSpec(0, candidate_types={EffectType.CONSTANT, EffectType.NVC},
                       is_intercept=True)


def test_group_indicator_columns_count_members():
    spec = terms.GroupTermSpec("g", np.array(["a", "b", "a", "c", "a"]))
    ind = spec.indicator()
    assert ind.shape == (5, 3)
    np.testing.assert_array_equal(ind.sum(axis=0), [3, 1, 1])
    np.testing.assert_array_equal(ind.sum(axis=1), np.ones(5))
