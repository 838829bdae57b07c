"""Empirical tail-rate estimation and martingale decomposition diagnostics.

The empirical rate at threshold ``delta`` is the negative log tail
frequency of the speed-normalized samples divided by the squared speed;
zero-exceedance thresholds stay missing rather than infinite.  The
decomposition splits the normalized additive functional at a cut
generation into a martingale part plus two explicit remainders, and the
bracket evaluates the conditional variances of the increments exactly
through the moment oracles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tree
from .kernels import GridFunction
from .model import KernelModel
from .moments import cross_moment_fn, second_moment_fn
from .simulate import FunctionSeq, TreeSample, additive_functional
from .variance import RateFunction, Regime


# ---------------------------------------------------------------------------
# speed sequences
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpeedSequence:
    """Power-family speed: grows without bound, slower than the CLT scale.

    ``subcritical`` uses ``2**(beta*n/2)`` (admissible against the
    generation size ``2**n``); ``critical`` uses ``(n * 2**n)**(beta/2)``
    (admissible against ``n * 2**n``).  ``beta`` must sit in (0, 1).
    """

    family: str
    beta: float

    def __post_init__(self) -> None:
        if self.family not in ("subcritical", "critical"):
            raise ValueError(f"unknown speed family {self.family!r}")
        if not 0.0 < self.beta < 1.0:
            raise ValueError(f"speed exponent {self.beta} outside (0, 1)")

    def value(self, n: int) -> float:
        if self.family == "subcritical":
            return 2.0 ** (self.beta * n / 2.0)
        return (n * 2.0**n) ** (self.beta / 2.0)


# ---------------------------------------------------------------------------
# decomposition at a cut generation
# ---------------------------------------------------------------------------


def default_cut(n: int, regime: Regime) -> int:
    """Default cut generation for the decomposition.

    Sub-critical: the largest integer strictly below ``n/2``.  Critical:
    ``n - ceil(sqrt(n))``, which approaches ``n`` proportionally while the
    distance to ``n`` still beats any constant multiple of ``log n``.
    """
    if n < 4:
        raise ValueError(f"depth {n} too small for a valid cut generation")
    if regime is Regime.SUBCRITICAL:
        return math.ceil(n / 2) - 1
    if regime is Regime.CRITICAL:
        return n - math.ceil(math.sqrt(n))
    raise ValueError("no decomposition beyond the critical line")


@dataclass(frozen=True)
class DecompositionConfig:
    n: int
    p: int
    regime: Regime = Regime.SUBCRITICAL

    def __post_init__(self) -> None:
        if not 1 <= self.p < self.n:
            raise ValueError(f"cut {self.p} outside [1, {self.n})")
        if self.regime is Regime.SUBCRITICAL and not self.p < self.n / 2:
            raise ValueError(f"sub-critical cut must satisfy p < n/2, got p={self.p}")


@dataclass(frozen=True)
class DecompositionReport:
    n_value: float  # the additive functional itself
    delta: float  # martingale part
    r0: float  # shallow-generation remainder
    r1: float  # conditional-mean remainder
    r2: float  # sum of squared conditional means
    bracket: float  # sum of conditional variances of the increments
    residual: float  # |n_value - (delta + r0 + r1)|

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.n_value, self.delta, self.r0, self.r1, self.r2, self.bracket, self.residual]
        )


class TreeDecomposer:
    """Per-tree decomposition with the state-dependent kernels precomputed.

    ``cond_mean_fn`` maps a cut-node state to the conditional expectation
    of its subtree functional (up to the global ``2**(-n/2)``);
    ``cond_sq_fn`` maps it to the conditional second moment of the
    unnormalized subtree sum.  Both come from the exact moment oracles,
    so the only randomness left in the diagnostics is the cut-generation
    states themselves.
    """

    def __init__(self, fseq: FunctionSeq, config: DecompositionConfig, model: KernelModel):
        self.fseq = fseq
        self.config = config
        self.model = model
        p = config.p
        q = model.operator
        branching = model.branching

        mean_vals = np.zeros(model.space.size)
        active: list[tuple[int, GridFunction]] = []
        for ell in range(p + 1):
            g = fseq.term(ell)
            if g is None:
                continue
            active.append((ell, g))
            mean_vals = mean_vals + (2.0 ** (p - ell)) * q.apply_power(g, p - ell).values
        self.cond_mean_fn = GridFunction(model.space, mean_vals)

        sq_vals = np.zeros(model.space.size)
        for ell, g in active:
            sq_vals = sq_vals + second_moment_fn(branching, q, g, p - ell).values
        for i, (ell, gl) in enumerate(active):
            for k, gk in active[i + 1 :]:
                cross = cross_moment_fn(branching, q, gl, gk, p - ell, p - k)
                sq_vals = sq_vals + 2.0 * cross.values
        self.cond_sq_fn = GridFunction(model.space, sq_vals)

    def report(self, sample: TreeSample) -> DecompositionReport:
        n, p = self.config.n, self.config.p
        fseq = self.fseq
        norm = math.sqrt(2.0**n)

        n_value = additive_functional(sample, fseq, n)

        r0 = 0.0
        for k in range(n - p):
            g = fseq.term(n - k)
            if g is None:
                continue
            r0 += float(np.sum(g(sample.generation(k))))
        r0 /= norm

        cut_states = sample.generation(n - p)
        cond_means = self.cond_mean_fn(cut_states) / norm
        r1 = float(np.sum(cond_means))
        r2 = float(np.sum(cond_means * cond_means))

        # subtree functionals of every cut node at once: generation n - ell
        # reshapes into one contiguous block of length 2**(p - ell) per node
        node_totals = np.zeros(cut_states.size)
        for ell in range(p + 1):
            g = fseq.term(ell)
            if g is None:
                continue
            vals = g(sample.generation(n - ell))
            node_totals += vals.reshape(cut_states.size, -1).sum(axis=1)
        node_totals /= norm
        delta = float(np.sum(node_totals - cond_means))

        bracket = float(np.sum(self.cond_sq_fn(cut_states))) / (2.0**n) - r2
        residual = abs(n_value - (delta + r0 + r1))
        return DecompositionReport(n_value, delta, r0, r1, r2, bracket, residual)


def decompose(
    sample: TreeSample,
    fseq: FunctionSeq,
    config: DecompositionConfig,
    model: KernelModel,
) -> DecompositionReport:
    """One-shot decomposition of a single tree (builds the oracles afresh)."""
    return TreeDecomposer(fseq, config, model).report(sample)


def bracket(
    sample: TreeSample,
    fseq: FunctionSeq,
    config: DecompositionConfig,
    model: KernelModel,
) -> float:
    """Conditional variance of the martingale part, evaluated exactly."""
    return decompose(sample, fseq, config, model).bracket


@dataclass(frozen=True)
class DecompositionEvaluator:
    """Picklable per-tree reduction emitting the full report row."""

    decomposer: TreeDecomposer

    def __call__(self, sample: TreeSample) -> np.ndarray:
        return self.decomposer.report(sample).as_array()


# ---------------------------------------------------------------------------
# empirical rate curves
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RateCurve:
    """Empirical versus exact tail rates over a threshold grid.

    ``empirical`` is NaN wherever the exceedance count is zero; counts
    are non-increasing in the threshold by construction.
    """

    delta: np.ndarray
    counts: np.ndarray
    empirical: np.ndarray
    exact: np.ndarray
    meta: dict = field(default_factory=dict)


def default_delta_grid(
    sigma: float, b_n: float, replicas: int | None = None, points: int = 40
) -> np.ndarray:
    """Evenly spaced thresholds over the informative window.

    Spans ``(0, 4 * sqrt(sigma) * max(1, b_n) / b_n]``, clipped to
    thresholds where at least one exceedance is plausible given the
    replica count (Gaussian envelope of the sample maximum).
    """
    hi = 4.0 * math.sqrt(sigma) * max(1.0, b_n) / b_n
    if replicas is not None and replicas > 1:
        plausible = 1.05 * math.sqrt(2.0 * sigma * math.log(replicas)) / b_n
        hi = min(hi, plausible)
    return np.linspace(hi / points, hi, points)


def empirical_rate_curve(
    samples: np.ndarray,
    speed: SpeedSequence | float,
    n: int,
    delta_grid: np.ndarray,
    rate_fn: RateFunction,
    meta: dict | None = None,
) -> RateCurve:
    """Tail-rate estimates of speed-normalized samples.

    For each threshold ``delta``: count how many ``|s| / b_n`` exceed it;
    where the count is positive the empirical rate is
    ``-log(count/B) / b_n**2``, otherwise it stays missing.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise ValueError("empty sample array")
    b_n = speed.value(n) if isinstance(speed, SpeedSequence) else float(speed)
    delta_grid = np.asarray(delta_grid, dtype=float)
    scaled = np.abs(samples) / b_n
    counts = (scaled[None, :] > delta_grid[:, None]).sum(axis=1)
    empirical = np.full(delta_grid.shape, np.nan)
    pos = counts > 0
    empirical[pos] = -np.log(counts[pos] / samples.size) / (b_n * b_n)
    exact = np.array([rate_fn(d) for d in delta_grid])
    info = {"n": n, "replicas": int(samples.size), "b_n": b_n}
    if isinstance(speed, SpeedSequence):
        info.update({"speed_family": speed.family, "speed_beta": speed.beta})
    if meta:
        info.update(meta)
    return RateCurve(delta_grid, counts, empirical, exact, info)


def wrong_speed_probe(
    samples: np.ndarray,
    n: int,
    delta_grid: np.ndarray,
    rate_fn: RateFunction,
) -> RateCurve:
    """Re-analyze sub-critical samples under the critical-regime scaling.

    Applies the critical normalization (divide the statistic by
    ``sqrt(n)``) together with the boundary speed ``2**(n/2)``, which is
    admissible only against the critical scale ``n * 2**n``.  On
    sub-critical data the normalized statistic is then far too small to
    cross any threshold at that speed: exceedances vanish and the curve
    collapses to missing/near-zero values instead of tracking the exact
    rate.
    """
    samples = np.asarray(samples, dtype=float) / math.sqrt(n)
    b_n = 2.0 ** (n / 2.0)
    curve = empirical_rate_curve(samples, b_n, n, delta_grid, rate_fn)
    curve.meta.update({"speed_family": "critical-boundary", "normalization": "1/sqrt(n)"})
    return curve
