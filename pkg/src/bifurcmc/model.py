"""Bundle of a branching kernel with its derived spectral objects.

Everything downstream (simulation evaluators, moment oracles, variance
series, decomposition diagnostics) needs the same trio of lineage
operator, stationary mass vector and contraction constants; computing
them once here keeps the pieces consistent.
"""

from __future__ import annotations

import numpy as np

from .kernels import BranchingKernel, GridFunction, MarkovOperator, center
from .spectral import SpectralData, ergodicity_rate, invariant_measure, spectral_projectors


class KernelModel:
    """Branching kernel plus lazily computed stationary and spectral data."""

    def __init__(self, branching: BranchingKernel):
        self.branching = branching
        self.operator: MarkovOperator = branching.mean_operator()
        self._mu: np.ndarray | None = None
        self._rate: tuple[float, float] | None = None
        self._spectral: SpectralData | None = None

    @property
    def name(self) -> str:
        return self.branching.name

    @property
    def space(self):
        return self.branching.space

    @property
    def mu(self) -> np.ndarray:
        if self._mu is None:
            self._mu = invariant_measure(self.operator)
        return self._mu

    @property
    def alpha(self) -> float:
        return self.rate_constants()[0]

    def rate_constants(self) -> tuple[float, float]:
        if self._rate is None:
            self._rate = ergodicity_rate(self.operator, mu=self.mu)
        return self._rate

    @property
    def spectral(self) -> SpectralData:
        if self._spectral is None:
            self._spectral = spectral_projectors(self.operator, mu=self.mu)
        return self._spectral

    def centered(self, f: GridFunction) -> GridFunction:
        return center(f, self.mu)

    def mean_of(self, f: GridFunction) -> float:
        return float(self.mu @ np.real(f.values))
