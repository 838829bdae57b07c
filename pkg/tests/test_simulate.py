import math

import numpy as np
import pytest

from bifurcmc import (
    BetaInit,
    EnsembleConfig,
    FunctionSeq,
    FunctionalEvaluator,
    KernelModel,
    PointMass,
    StationaryInit,
    additive_functional,
    additive_functional_at,
    constant_function,
    function_from_callable,
    generation_sum,
    sample_ensemble,
    sample_tree,
    tree_sum,
    two_state_kernel,
)
from bifurcmc.simulate import replica_rng
from bifurcmc.tree import NodeId, generation_nodes, tree_size


def test_sample_tree_depth_zero(beta_model):
    rng = replica_rng(1, 0)
    s = sample_tree(beta_model.branching, PointMass(0.42), 0, rng, model=beta_model)
    assert s.states.shape == (1,)
    assert s.states[0] == 0.42


def test_sample_tree_shapes_and_range(beta_model):
    rng = replica_rng(2, 0)
    s = sample_tree(beta_model.branching, BetaInit(2, 2), 6, rng, model=beta_model)
    assert s.states.shape == (tree_size(6),)
    assert np.all((s.states >= 0) & (s.states <= 1))


def test_sample_tree_deterministic_kernel():
    branching = two_state_kernel(1.0)  # children copy the parent
    rng = replica_rng(3, 0)
    s = sample_tree(branching, PointMass(1), 5, rng)
    assert np.all(s.states == 1)


def test_reproducibility_same_stream(beta_model):
    a = sample_tree(beta_model.branching, BetaInit(2, 2), 5, replica_rng(7, 3), model=beta_model)
    b = sample_tree(beta_model.branching, BetaInit(2, 2), 5, replica_rng(7, 3), model=beta_model)
    assert np.array_equal(a.states, b.states)
    c = sample_tree(beta_model.branching, BetaInit(2, 2), 5, replica_rng(7, 4), model=beta_model)
    assert not np.array_equal(a.states, c.states)


def test_generation_sum_examples(beta_model):
    rng = replica_rng(4, 0)
    s = sample_tree(beta_model.branching, BetaInit(2, 2), 5, rng, model=beta_model)
    ones = constant_function(beta_model.space)
    for k in (0, 3, 5):
        assert generation_sum(s, ones, k) == 2**k
    f = function_from_callable(beta_model.space, lambda x: x)
    assert abs(generation_sum(s, f, 0) - s.states[0]) < 1e-15
    g = function_from_callable(beta_model.space, lambda x: 1 - 2 * x)
    lin = generation_sum(s, f, 4) * 2.0 + generation_sum(s, g, 4) * -1.0
    combo = function_from_callable(beta_model.space, lambda x: 2 * x - (1 - 2 * x))
    assert abs(lin - generation_sum(s, combo, 4)) < 1e-9


def test_tree_sum_examples(beta_model):
    rng = replica_rng(5, 0)
    s = sample_tree(beta_model.branching, BetaInit(2, 2), 4, rng, model=beta_model)
    ones = constant_function(beta_model.space)
    assert tree_sum(s, ones, 4) == 2**5 - 1
    f = function_from_callable(beta_model.space, lambda x: x)
    assert abs(tree_sum(s, f, 0) - s.states[0]) < 1e-15
    assert abs(tree_sum(s, f, 4) - sum(generation_sum(s, f, k) for k in range(5))) < 1e-9


def test_additive_functional_single_mode(beta_model, identity_obs):
    fseq = FunctionSeq.single(identity_obs, beta_model)
    s = sample_tree(beta_model.branching, BetaInit(2, 2), 8, replica_rng(6, 0), model=beta_model)
    direct = generation_sum(s, fseq.centered[0], 8) / math.sqrt(2.0**8)
    assert abs(additive_functional(s, fseq, 8) - direct) < 1e-12


def test_additive_functional_all_mode_matches_tree_normalization(beta_model, identity_obs):
    # same function at every offset: the functional equals the whole-tree
    # centered sum times sqrt(2 - 2**-n) over sqrt(tree size)
    fseq = FunctionSeq.all_generations(identity_obs, beta_model)
    n = 7
    s = sample_tree(beta_model.branching, BetaInit(2, 2), n, replica_rng(8, 0), model=beta_model)
    whole = tree_sum(s, fseq.centered[0], n)
    expect = math.sqrt(2.0 - 2.0**-n) * whole / math.sqrt(tree_size(n))
    assert abs(additive_functional(s, fseq, n) - expect) < 1e-12


def test_additive_functional_constant_is_zero(beta_model):
    fseq = FunctionSeq.all_generations(constant_function(beta_model.space, 3.0), beta_model)
    s = sample_tree(beta_model.branching, BetaInit(2, 2), 6, replica_rng(9, 0), model=beta_model)
    assert additive_functional(s, fseq, 6) == 0.0


def test_additive_functional_at_root_and_leaves(beta_model, identity_obs):
    fseq = FunctionSeq.all_generations(identity_obs, beta_model)
    n = 6
    s = sample_tree(beta_model.branching, BetaInit(2, 2), n, replica_rng(10, 0), model=beta_model)
    root = NodeId(0, 0)
    assert abs(additive_functional_at(s, fseq, root, n) - additive_functional(s, fseq, n)) < 1e-12
    leaf = NodeId(n, 17)
    g0 = fseq.centered[0]
    expect = float(g0(s.states[tree_size(n) - 2**n + 17 : tree_size(n) - 2**n + 18])[0])
    assert abs(additive_functional_at(s, fseq, leaf, n) - expect / math.sqrt(2.0**n)) < 1e-12


def test_additive_functional_at_generation_identity(beta_model, identity_obs):
    # summing the subtree functionals over one generation telescopes into
    # the shallow offsets of the full functional
    fseq = FunctionSeq.all_generations(identity_obs, beta_model)
    n, k = 6, 2
    s = sample_tree(beta_model.branching, BetaInit(2, 2), n, replica_rng(11, 0), model=beta_model)
    total = sum(additive_functional_at(s, fseq, u, n) for u in generation_nodes(k))
    g = fseq.centered[0]
    expect = sum(generation_sum(s, g, n - ell) for ell in range(n - k + 1)) / math.sqrt(2.0**n)
    assert abs(total - expect) < 1e-12


def test_ensemble_single_replica_reduces_to_sample_tree(beta_model, identity_obs):
    fseq = FunctionSeq.single(identity_obs, beta_model)
    ev = FunctionalEvaluator(fseq, 5)
    vals = sample_ensemble(
        beta_model.branching, BetaInit(2, 2), EnsembleConfig(1, 5, 123, 1), ev,
        model=beta_model,
    )
    s = sample_tree(
        beta_model.branching, BetaInit(2, 2), 5, replica_rng(123, 0),
        model=beta_model, master_seed=123, replica=0,
    )
    assert vals.shape == (1,)
    assert vals[0] == ev(s)


def test_ensemble_parallelism_invariance(beta_model, identity_obs):
    fseq = FunctionSeq.single(identity_obs, beta_model)
    ev = FunctionalEvaluator(fseq, 6)
    serial = sample_ensemble(
        beta_model.branching, BetaInit(2, 2), EnsembleConfig(64, 6, 5, 1), ev,
        model=beta_model,
    )
    parallel = sample_ensemble(
        beta_model.branching, BetaInit(2, 2), EnsembleConfig(64, 6, 5, 8), ev,
        model=beta_model,
    )
    assert np.array_equal(serial, parallel)


def test_node_marginals_stationary_ks(beta_model):
    # lineage marginals stay Beta(2,2): push 1e5 stationary draws through
    # several kernel steps and compare the empirical CDF at each depth
    rng = np.random.default_rng(12)
    n_draws = 100_000
    u = np.sort(rng.random((n_draws, 3)), axis=1)
    x = u[:, 1]  # exact Beta(2,2) draws
    ks99 = 1.628 / math.sqrt(n_draws)
    sampler = beta_model.branching.exact_sampler
    for depth in range(4):
        order = np.sort(x)
        grid_cdf = 3 * order**2 - 2 * order**3
        emp_hi = np.arange(1, n_draws + 1) / n_draws
        emp_lo = np.arange(0, n_draws) / n_draws
        ks = max(np.max(np.abs(emp_hi - grid_cdf)), np.max(np.abs(grid_cdf - emp_lo)))
        assert ks < ks99, (depth, ks)
        x = sampler(x, rng)


def test_tree_generation_mean_near_half(beta_model):
    s = sample_tree(beta_model.branching, BetaInit(2, 2), 12, replica_rng(77, 0), model=beta_model)
    gen = s.states[tree_size(11) :]
    se = math.sqrt(6.0 / 115.0) / math.sqrt(4096)
    assert abs(gen.mean() - 0.5) < 5 * se


def test_stationary_init_two_state():
    model = KernelModel(two_state_kernel(0.9))
    rng = replica_rng(1, 1)
    draws = StationaryInit().sample(model, 20_000, rng)
    assert set(np.unique(draws)) <= {0, 1}
    assert abs(draws.mean() - 0.5) < 0.02


def test_function_seq_invariants(beta_model, identity_obs):
    half = identity_obs.scaled(0.5)
    fseq = FunctionSeq.explicit([identity_obs, half], beta_model)
    assert fseq.sup_bound == identity_obs.sup_norm  # sup over the raw terms
    for g in fseq.centered:
        assert abs(float(beta_model.mu @ g.values)) < 1e-12
    assert fseq.term(2) is None  # zero beyond the explicit list
    assert FunctionSeq.single(identity_obs, beta_model).term(1) is None
    assert FunctionSeq.all_generations(identity_obs, beta_model).term(9) is not None
    with pytest.raises(ValueError):
        FunctionSeq.explicit([], beta_model)


def test_default_workers_env(monkeypatch):
    from bifurcmc.simulate import default_workers

    monkeypatch.setenv("BIFURCMC_WORKERS", "3")
    assert default_workers() == 3
    monkeypatch.setenv("BIFURCMC_WORKERS", "junk")
    assert default_workers() >= 1


def test_vector_valued_evaluator(beta_model, identity_obs):
    fseq = FunctionSeq.single(identity_obs, beta_model)

    class PairEval:
        def __init__(self, fseq):
            self.fseq = fseq

        def __call__(self, sample):
            v = additive_functional(sample, self.fseq, sample.depth)
            return np.array([v, v * v])

    vals = sample_ensemble(
        beta_model.branching, BetaInit(2, 2), EnsembleConfig(8, 4, 2, 1),
        PairEval(fseq), model=beta_model,
    )
    assert vals.shape == (8, 2)
    assert np.allclose(vals[:, 1], vals[:, 0] ** 2)
