"""Monte Carlo and exact analysis of Markov chains indexed by binary trees."""

from .kernels import (
    CRITICAL_STAY_PROBABILITY,
    BranchingKernel,
    FiniteStates,
    GridFunction,
    MarkovOperator,
    PairBranching,
    ProductBranching,
    UnitIntervalGrid,
    beta_mixture_kernel,
    center,
    constant_function,
    function_from_callable,
    function_from_values,
    grid_kernel_from_density,
    inner,
    simpson_grid,
    trapezoid_grid,
    two_state_kernel,
)
from .mdp import (
    DecompositionConfig,
    DecompositionReport,
    RateCurve,
    SpeedSequence,
    TreeDecomposer,
    bracket,
    decompose,
    default_cut,
    default_delta_grid,
    empirical_rate_curve,
    wrong_speed_probe,
)
from .model import KernelModel
from .moments import (
    MomentRequest,
    brute_force_moment,
    cross_moment_fn,
    generation_cross_moment,
    generation_mean,
    generation_second_moment,
    mean_fn,
    second_moment_fn,
)
from .simulate import (
    BetaInit,
    EnsembleConfig,
    FunctionSeq,
    FunctionalEvaluator,
    PointMass,
    StationaryInit,
    TreeSample,
    additive_functional,
    additive_functional_at,
    generation_sum,
    sample_ensemble,
    sample_tree,
    tree_sum,
)
from .spectral import (
    SpectralData,
    center_spectral,
    ergodicity_rate,
    invariant_measure,
    remove_leading_component,
    spectral_projectors,
)
from .variance import (
    RateFunction,
    Regime,
    UnsupportedRegimeError,
    VarianceResult,
    asymptotic_variance,
    classify_regime,
    generation_variance,
    rate,
    tree_variance,
)

__version__ = "0.1.0"
