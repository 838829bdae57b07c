import time

import numpy as np
import pytest

from bifurcmc import (
    CRITICAL_STAY_PROBABILITY,
    BetaInit,
    EnsembleConfig,
    FunctionSeq,
    FunctionalEvaluator,
    KernelModel,
    asymptotic_variance,
    beta_mixture_kernel,
    function_from_callable,
    function_from_values,
    sample_ensemble,
    two_state_kernel,
)

SEVEN_SEED = 20240
SEVEN_DEPTH = 12
SEVEN_REPLICAS = 50_000


@pytest.fixture(scope="session")
def beta_model():
    return KernelModel(beta_mixture_kernel(512))


@pytest.fixture(scope="session")
def identity_obs(beta_model):
    return function_from_callable(beta_model.space, lambda x: x)


@pytest.fixture(scope="session")
def crit_model():
    return KernelModel(two_state_kernel(CRITICAL_STAY_PROBABILITY))


@pytest.fixture(scope="session")
def crit_indicator(crit_model):
    return function_from_values(crit_model.space, [1.0, 0.0])


@pytest.fixture(scope="session")
def seven_experiment(beta_model, identity_obs):
    """The reference experiment shared by the heavy acceptance checks.

    50k replicas of a depth-12 tree started from the stationary Beta(2,2)
    law, reduced to the normalized top-generation sum of the centered
    identity.  Sampled once per session.
    """
    start = time.monotonic()
    fseq = FunctionSeq.single(identity_obs, beta_model)
    sigma = asymptotic_variance(fseq, beta_model).sigma
    samples = sample_ensemble(
        beta_model.branching,
        BetaInit(2, 2),
        EnsembleConfig(SEVEN_REPLICAS, SEVEN_DEPTH, SEVEN_SEED, workers=1),
        FunctionalEvaluator(fseq, SEVEN_DEPTH),
        model=beta_model,
    )
    elapsed = time.monotonic() - start
    return {
        "samples": samples,
        "sigma": sigma,
        "fseq": fseq,
        "model": beta_model,
        "elapsed": elapsed,
    }


def rng(seed=0):
    return np.random.default_rng(seed)
