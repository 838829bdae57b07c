import math

import numpy as np
import pytest

from bifurcmc import (
    CRITICAL_STAY_PROBABILITY,
    FunctionSeq,
    KernelModel,
    RateFunction,
    Regime,
    UnsupportedRegimeError,
    asymptotic_variance,
    beta_mixture_kernel,
    classify_regime,
    constant_function,
    function_from_callable,
    function_from_values,
    generation_variance,
    rate,
    tree_variance,
    two_state_kernel,
)
from bifurcmc.variance import (
    SeriesError,
    crit_series_1,
    crit_series_2,
    projected_pair_function,
    sub_series_1,
    sub_series_2,
    tree_tail_critical_closed_form,
)

SIGMA_G_TARGET = 6.0 / 115.0


def test_classify_regime():
    assert classify_regime(0.2) is Regime.SUBCRITICAL
    assert classify_regime(1.0 / math.sqrt(2.0)) is Regime.CRITICAL
    assert classify_regime(0.9) is Regime.SUPERCRITICAL
    assert classify_regime(2 * CRITICAL_STAY_PROBABILITY - 1) is Regime.CRITICAL
    with pytest.raises(ValueError):
        classify_regime(1.2)


def test_sub_series_1_single_mode_closed_form(beta_model, identity_obs):
    # hand geometric sum: variance term 1/20, splits add (1/20)(1/23)
    fseq = FunctionSeq.single(identity_obs, beta_model)
    s1 = sub_series_1(fseq, beta_model)
    assert abs(s1.value - SIGMA_G_TARGET) < 1e-6
    g = beta_model.centered(identity_obs)
    var_term = float(beta_model.mu @ (g.values**2))
    assert abs(var_term - 0.05) < 1e-6
    assert abs((s1.value - var_term) - 0.05 / 23.0) < 1e-6


def test_sub_series_1_constant_zero(beta_model):
    fseq = FunctionSeq.single(constant_function(beta_model.space, 2.0), beta_model)
    assert sub_series_1(fseq, beta_model).value == 0.0


def test_sub_series_2_single_mode_zero(beta_model, identity_obs):
    fseq = FunctionSeq.single(identity_obs, beta_model)
    s2 = sub_series_2(fseq, beta_model)
    assert s2.value == 0.0


def test_sub_series_2_eigenfunction_geometric_oracle():
    # stay probability 0.6 contracts the odd eigenfunction by 0.2 per step,
    # so every inner product collapses to powers of 0.2:
    #   direct part  = 2 * lam/(1-lam)                  = 1/2
    #   split part   = direct * lam^2/(1 - 2 lam^2)     = 1/46
    # giving 12/23 in total
    lam = 0.2
    model = KernelModel(two_state_kernel(0.6))
    h = function_from_values(model.space, [1.0, -1.0])
    fseq = FunctionSeq.all_generations(h, model)
    s2 = sub_series_2(fseq, model, tol=1e-12)
    expect = 2 * lam / (1 - lam) * (1 + lam**2 / (1 - 2 * lam**2))
    assert abs(expect - 12.0 / 23.0) < 1e-15
    assert abs(s2.value - expect) < 1e-10


def test_sub_series_assembled_eigenfunction():
    model = KernelModel(two_state_kernel(0.6))
    h = function_from_values(model.space, [1.0, -1.0])
    res = asymptotic_variance(FunctionSeq.all_generations(h, model), model, tol=1e-12)
    assert abs(res.sigma - 72.0 / 23.0) < 1e-9
    assert abs(res.sigma1 - 48.0 / 23.0) < 1e-9
    assert abs(res.sigma2 - 12.0 / 23.0) < 1e-10
    assert abs(tree_variance(h, model, tol=1e-12) - 36.0 / 23.0) < 1e-9


def test_sigma_beta_kernel_grid512(beta_model, identity_obs):
    res = asymptotic_variance(FunctionSeq.single(identity_obs, beta_model), beta_model)
    assert res.regime is Regime.SUBCRITICAL
    assert abs(res.sigma - SIGMA_G_TARGET) < 1e-4
    assert res.sigma >= 0
    assert abs(generation_variance(identity_obs, beta_model) - res.sigma) < 1e-12


def test_sigma_grid_refinement_converges(identity_obs, beta_model):
    errs = []
    for size in (256, 512, 1024):
        model = beta_model if size == 512 else KernelModel(beta_mixture_kernel(size))
        f = function_from_callable(model.space, lambda x: x)
        errs.append(abs(generation_variance(f, model) - SIGMA_G_TARGET))
    assert errs[0] < 1e-4
    assert errs[2] <= errs[0]


def test_sigma_all_generations_two_paths(beta_model, identity_obs):
    # general series against the specialized whole-tree closed path; the
    # all-offsets functional carries twice the whole-tree variance
    res = asymptotic_variance(FunctionSeq.all_generations(identity_obs, beta_model), beta_model)
    assert abs(res.sigma - 2.0 * tree_variance(identity_obs, beta_model)) < 1e-8


def test_sigma_constant_sequence_zero(beta_model):
    res = asymptotic_variance(
        FunctionSeq.all_generations(constant_function(beta_model.space, 1.0), beta_model),
        beta_model,
    )
    assert res.sigma == 0.0


def test_sigma_scaling_quadratic(beta_model, identity_obs):
    base = asymptotic_variance(FunctionSeq.single(identity_obs, beta_model), beta_model).sigma
    scaled = asymptotic_variance(
        FunctionSeq.single(identity_obs.scaled(3.0), beta_model), beta_model
    ).sigma
    assert abs(scaled - 9.0 * base) < 1e-10 * max(1.0, scaled)


def test_sigma_explicit_sequence_matches_manual(beta_model, identity_obs):
    # explicit [f, f/2]: check against a direct evaluation of the same series
    f = identity_obs
    half = identity_obs.scaled(0.5)
    fseq = FunctionSeq.explicit([f, half], beta_model)
    res = asymptotic_variance(fseq, beta_model, tol=1e-12)
    g = beta_model.centered(f)
    q = beta_model.operator
    mu = beta_model.mu
    branching = beta_model.branching

    def split_sum(u, v, weight):
        total = 0.0
        uu, vv = u, v
        for _ in range(60):
            total += weight * float(mu @ branching.apply_pair_sym(uu, vv).values)
            weight *= 2.0
            uu, vv = q.apply(uu), q.apply(vv)
        return total

    s1 = 0.0
    for ell, scale in ((0, 1.0), (1, 0.5)):
        gl = g.scaled(scale)
        s1 += 2.0**-ell * float(mu @ (gl.values**2)) + 2.0**-ell * split_sum(gl, gl, 1.0)
    g0, g1 = g, g.scaled(0.5)
    s2 = float(mu @ (g1.values * q.apply(g0).values)) + split_sum(g1, q.apply(g0), 1.0)
    assert abs(res.sigma - (s1 + 2 * s2)) < 1e-9


def test_supercritical_rejected():
    model = KernelModel(two_state_kernel(0.95))  # alpha = 0.9
    f = function_from_values(model.space, [1.0, 0.0])
    with pytest.raises(UnsupportedRegimeError):
        asymptotic_variance(FunctionSeq.single(f, model), model)
    with pytest.raises((UnsupportedRegimeError, SeriesError)):
        sub_series_1(FunctionSeq.single(f, model), model)


# ---------------------------------------------------------------------------
# critical regime
# ---------------------------------------------------------------------------


def test_crit_series_1_indicator(crit_model, crit_indicator):
    # exact eigendecomposition: the projected indicator is (1/2, -1/2),
    # the paired expectation halves its square: sigma = 1/8
    fseq = FunctionSeq.single(crit_indicator, crit_model)
    s1 = crit_series_1(fseq, crit_model)
    assert abs(complex(s1.value) - 0.125) < 1e-12
    assert abs(generation_variance(crit_indicator, crit_model) - 0.125) < 1e-12


def test_crit_series_1_constant_zero(crit_model):
    fseq = FunctionSeq.single(constant_function(crit_model.space, 5.0), crit_model)
    assert abs(complex(crit_series_1(fseq, crit_model).value)) == 0.0


def test_crit_series_2_single_zero(crit_model, crit_indicator):
    fseq = FunctionSeq.single(crit_indicator, crit_model)
    assert complex(crit_series_2(fseq, crit_model).value) == 0.0


def test_crit_series_2_all_generations_closed_form(crit_model, crit_indicator):
    # theta = 1 gives the factor 1/(sqrt(2)-1) = sqrt(2)+1 per offset gap
    fseq = FunctionSeq.all_generations(crit_indicator, crit_model)
    s2 = crit_series_2(fseq, crit_model, tol=1e-13)
    closed = tree_tail_critical_closed_form(crit_indicator, crit_model)
    assert abs(closed - (math.sqrt(2.0) + 1.0) / 8.0) < 1e-12
    assert abs(complex(s2.value) - 2.0 * closed) < 1e-10


def test_crit_assembled_tree_value(crit_model, crit_indicator):
    res = asymptotic_variance(
        FunctionSeq.all_generations(crit_indicator, crit_model), crit_model, tol=1e-12
    )
    target = (3.0 + 2.0 * math.sqrt(2.0)) / 4.0  # twice the whole-tree value
    assert abs(res.sigma - target) < 1e-9
    assert abs(tree_variance(crit_indicator, crit_model) - target / 2.0) < 1e-10


def test_projected_pair_function(crit_model, crit_indicator):
    fseq = FunctionSeq.single(crit_indicator, crit_model)
    pf = projected_pair_function(fseq, crit_model, 0, 0)
    assert np.allclose(pf.values, 0.125, atol=1e-12)
    zseq = FunctionSeq.single(constant_function(crit_model.space, 1.0), crit_model)
    assert np.max(np.abs(projected_pair_function(zseq, crit_model, 0, 0).values)) == 0.0


def test_projected_pair_matches_series_inner(crit_model, crit_indicator):
    fseq = FunctionSeq.all_generations(crit_indicator, crit_model)
    pf = projected_pair_function(fseq, crit_model, 3, 3)
    val = complex(crit_model.mu @ pf.values)
    s1 = crit_series_1(fseq, crit_model)
    # every same-offset term shares the same projected pair mean
    assert abs(complex(s1.value) - 2.0 * val) < 1e-9


# ---------------------------------------------------------------------------
# rate function
# ---------------------------------------------------------------------------


def test_rate_function_values():
    rf = RateFunction(SIGMA_G_TARGET)
    for d in (0.1, 0.5, 1.0):
        assert rf(d) == pytest.approx(115.0 / 12.0 * d * d, rel=0, abs=0)
    assert rf(1.0) == 115.0 / 12.0
    assert rf(0.0) == 0.0


def test_rate_function_degenerate_and_scaling():
    zero = RateFunction(0.0)
    assert zero(0.0) == 0.0
    assert math.isinf(zero(0.1))
    rf = RateFunction(0.3)
    for x in (0.2, 0.7):
        assert abs(rf(2 * x) - 4 * rf(x)) < 1e-15
        assert rf(-x) == rf(x)
    with pytest.raises(ValueError):
        RateFunction(-1.0)
    assert rate(SIGMA_G_TARGET, 1.0) == 115.0 / 12.0
