"""Asymptotic variances of the normalized additive functionals.

Two independent code paths are kept deliberately: the general series
over a whole depth-indexed function sequence, and the closed forms for
the two standard specializations (one function at the top generation;
the same function at every generation).  The general path truncates
every series with a rigorous geometric tail bound built from the
contraction constants, never from term smallness alone: the ``2**k``
branching growth against the ``alpha**(2k)`` decay makes naive early
stopping unsafe near the critical line.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .kernels import BranchingKernel, GridFunction, inner
from .model import KernelModel
from .simulate import FunctionSeq

REGIME_TOL = 1e-9
IMAG_TOL = 1e-8
NEGATIVE_TOL = 1e-8
MAX_TERMS = 20_000


class UnsupportedRegimeError(RuntimeError):
    """The branching rate dominates mixing; no variance formula applies."""


class SeriesError(RuntimeError):
    """A variance series failed to converge or produced an invalid value."""


class Regime(enum.Enum):
    SUBCRITICAL = "subcritical"
    CRITICAL = "critical"
    SUPERCRITICAL = "supercritical"


def classify_regime(alpha: float, tol: float = REGIME_TOL) -> Regime:
    """Trichotomy on ``2 * alpha**2`` against 1, with a criticality tolerance."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha {alpha} outside (0, 1)")
    gap = 2.0 * alpha * alpha - 1.0
    if abs(gap) <= tol:
        return Regime.CRITICAL
    return Regime.SUBCRITICAL if gap < 0 else Regime.SUPERCRITICAL


@dataclass(frozen=True)
class SeriesValue:
    value: float | complex
    terms: int
    tail_bound: float


@dataclass(frozen=True)
class VarianceResult:
    sigma: float
    sigma1: float
    sigma2: float
    regime: Regime
    terms_used: int
    truncation_bound: float


@dataclass(frozen=True)
class RateFunction:
    """Quadratic rate ``x**2 / (2 sigma)``, degenerating to 0/inf at sigma = 0."""

    sigma: float

    def __post_init__(self) -> None:
        if self.sigma < -NEGATIVE_TOL:
            raise ValueError(f"negative variance {self.sigma}")
        object.__setattr__(self, "sigma", max(self.sigma, 0.0))

    def __call__(self, x: float) -> float:
        if x == 0:
            return 0.0
        if self.sigma == 0.0:
            return math.inf
        return x * x / (2.0 * self.sigma)


def rate(sigma: float, x: float) -> float:
    return RateFunction(sigma)(x)


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------


def _sub_constants(model: KernelModel) -> tuple[float, float, float]:
    alpha, m_est = model.rate_constants()
    two_a2 = 2.0 * alpha * alpha
    if two_a2 >= 1.0:
        raise SeriesError(
            f"branch-splitting series diverges: 2*alpha^2 = {two_a2} >= 1"
        )
    return alpha, m_est, two_a2


def _ell_weights(fseq: FunctionSeq, tol: float):
    """Pairs ``(2**-ell, centered term)`` with a bounded iteration range.

    Unbounded sequences are cut where the remaining geometric weight can
    no longer move the sum at relative tolerance ``tol``.
    """
    bound = fseq.support_bound
    if bound is not None:
        for ell in range(bound + 1):
            g = fseq.term(ell)
            if g is not None:
                yield 2.0**-ell, g
        return
    ell_max = max(8, int(math.ceil(-math.log2(max(tol, 1e-300)))) + 4)
    for ell in range(ell_max + 1):
        yield 2.0**-ell, fseq.term(ell)


def _split_series(
    branching: BranchingKernel,
    model: KernelModel,
    f_cent: GridFunction,
    tol: float,
) -> SeriesValue:
    """``sum_k 2**k <mu, pair(Q^k f, Q^k f)>`` with a geometric tail cut."""
    alpha, m_est, two_a2 = _sub_constants(model)
    q = model.operator
    c = f_cent.sup_norm
    if c == 0.0:
        return SeriesValue(0.0, 0, 0.0)
    total = 0.0
    g = f_cent
    k = 0
    while True:
        total += (2.0**k) * inner(model.mu, branching.apply_pair(g, g))
        tail = (m_est * c) ** 2 * two_a2 ** (k + 1) / (1.0 - two_a2)
        if tail <= tol * max(abs(total), tol):
            return SeriesValue(total, k + 1, tail)
        if k >= MAX_TERMS:
            raise SeriesError("branch-splitting series did not reach tolerance")
        g = q.apply(g)
        k += 1


# ---------------------------------------------------------------------------
# sub-critical series over a full sequence
# ---------------------------------------------------------------------------


def sub_series_1(fseq: FunctionSeq, model: KernelModel, tol: float = 1e-10) -> SeriesValue:
    """Same-offset part: diagonal second moments plus branch splits."""
    total = 0.0
    terms = 0
    tail = 0.0
    cache: dict[int, SeriesValue] = {}
    for w, g in _ell_weights(fseq, tol):
        if g is None:
            continue
        key = id(g)
        if key not in cache:
            cache[key] = _split_series(model.branching, model, g, tol)
        split = cache[key]
        g2 = GridFunction(g.space, g.values * g.values)
        total += w * (inner(model.mu, g2) + split.value)
        terms += 1 + split.terms
        tail += w * split.tail_bound
    return SeriesValue(total, terms, tail)


def sub_series_2(fseq: FunctionSeq, model: KernelModel, tol: float = 1e-10) -> SeriesValue:
    """Cross-offset part: pairs of distinct depth offsets.

    For each offset gap ``d >= 1`` the direct term couples the deeper
    function to the ``d``-step forecast of the shallower one; the
    branch-split series then couples their ``r``- and ``(d+r)``-step
    forecasts over the splitting generation.
    """
    alpha, m_est, two_a2 = _sub_constants(model)
    q = model.operator
    branching = model.branching
    mu = model.mu

    if fseq.mode == "single":
        return SeriesValue(0.0, 0, 0.0)

    if fseq.mode == "explicit":
        total = 0.0
        terms = 0
        tail_total = 0.0
        upper = len(fseq.centered) - 1
        for ell in range(upper + 1):
            fl = fseq.term(ell)
            if fl is None:
                continue
            for k in range(ell + 1, upper + 1):
                fk = fseq.term(k)
                if fk is None:
                    continue
                val, cnt, tl = _cross_pair_value(
                    branching, q, mu, fk, fl, k - ell, m_est, alpha, two_a2, tol
                )
                total += 2.0**-ell * val
                terms += cnt
                tail_total += 2.0**-ell * tl
        return SeriesValue(total, terms, tail_total)

    # same function at every offset: the inner value depends only on the
    # gap, so sum gaps once and weight by the offset geometric series
    g = fseq.centered[0]
    c = g.sup_norm
    if c == 0.0:
        return SeriesValue(0.0, 0, 0.0)
    ell_max = max(8, int(math.ceil(-math.log2(max(tol, 1e-300)))) + 4)
    weight = 2.0 - 2.0**-ell_max  # sum of 2**-ell over 0..ell_max
    gap_total = 0.0
    terms = 0
    tail_inner = 0.0
    d = 1
    while True:
        val, cnt, tl = _cross_pair_value(
            branching, q, mu, g, g, d, m_est, alpha, two_a2, tol
        )
        gap_total += val
        terms += cnt
        tail_inner += tl
        gap_bound = (m_est * c) ** 2 * alpha ** (d + 1) * (
            1.0 + 1.0 / (1.0 - two_a2)
        ) / (1.0 - alpha)
        if gap_bound <= tol * max(abs(gap_total), tol):
            break
        if d >= MAX_TERMS:
            raise SeriesError("cross-offset gap series did not converge")
        d += 1
    tail_total = weight * (tail_inner + gap_bound) + 2.0**-ell_max * abs(gap_total)
    return SeriesValue(weight * gap_total, terms, tail_total)


def _cross_pair_value(branching, q, mu, fk, fl, d, m_est, alpha, two_a2, tol):
    """Direct term plus r-series for one (deeper, shallower, gap) triple."""
    fwd = q.apply_power(fl, d)
    direct = inner(mu, GridFunction(fk.space, fk.values * fwd.values))
    ck, cl = fk.sup_norm, fl.sup_norm
    if ck == 0.0 or cl == 0.0:
        return 0.0, 1, 0.0
    total = direct
    u = fk  # Q^r of the deeper term
    v = fwd  # Q^(d+r) of the shallower term
    r = 0
    while True:
        total += (2.0**r) * inner(mu, branching.apply_pair_sym(u, v))
        tail = (m_est**2) * ck * cl * alpha**d * two_a2 ** (r + 1) / (1.0 - two_a2)
        if tail <= tol * max(abs(total), tol):
            return total, r + 2, tail
        if r >= MAX_TERMS:
            raise SeriesError("cross split series did not reach tolerance")
        u = q.apply(u)
        v = q.apply(v)
        r += 1


# ---------------------------------------------------------------------------
# critical series over a full sequence
# ---------------------------------------------------------------------------


def _projected_pair_mean(branching: BranchingKernel, mu, u: GridFunction, v: GridFunction) -> complex:
    """``<mu, pair(u sym v̄)>`` for complex spectral components."""
    vbar = GridFunction(v.space, np.conj(v.values))
    return complex(inner(mu, branching.apply_pair_sym(u, vbar)))


def projected_pair_function(
    fseq: FunctionSeq, model: KernelModel, k: int, ell: int
) -> GridFunction:
    """Bivariate pair expectation kernel of the spectral components.

    Returns the (complex) function
    ``x -> sum_j theta_j**(ell-k) pair(R_j f_k sym conj(R_j f_ell))(x)``.
    """
    spec = model.spectral
    fk = fseq.term(k)
    fl = fseq.term(ell)
    vals = np.zeros(model.space.size, dtype=complex)
    if fk is None or fl is None:
        return GridFunction(model.space, vals)
    for proj, theta in zip(spec.projectors, spec.thetas):
        u = proj.apply(fk)
        v = proj.apply(fl)
        vbar = GridFunction(v.space, np.conj(v.values))
        vals += theta ** (ell - k) * model.branching.apply_pair_sym(u, vbar).values
    return GridFunction(model.space, vals)


def crit_series_1(fseq: FunctionSeq, model: KernelModel, tol: float = 1e-10) -> SeriesValue:
    """Same-offset critical part: geometric sum of projected pair means."""
    spec = model.spectral
    mu = model.mu
    branching = model.branching
    total = 0.0 + 0.0j
    terms = 0
    cache: dict[int, complex] = {}

    def pair_mean(g: GridFunction) -> complex:
        key = id(g)
        if key not in cache:
            val = 0.0 + 0.0j
            for proj in spec.projectors:
                u = proj.apply(g)
                val += _projected_pair_mean(branching, mu, u, u)
            cache[key] = val
        return cache[key]

    bound = fseq.support_bound
    if bound is not None:
        for k in range(bound + 1):
            g = fseq.term(k)
            if g is None:
                continue
            total += 2.0**-k * pair_mean(g)
            terms += 1
        return SeriesValue(total, terms, 0.0)

    g = fseq.centered[0]
    c_bound = abs(pair_mean(g))
    k = 0
    while True:
        total += 2.0**-k * pair_mean(g)
        terms += 1
        tail = c_bound * 2.0**-k
        if tail <= tol * max(abs(total), tol):
            return SeriesValue(total, terms, tail)
        if k >= MAX_TERMS:
            raise SeriesError("critical same-offset series did not converge")
        k += 1


def crit_series_2(fseq: FunctionSeq, model: KernelModel, tol: float = 1e-10) -> SeriesValue:
    """Cross-offset critical part over ordered offset pairs."""
    spec = model.spectral
    mu = model.mu
    branching = model.branching
    total = 0.0 + 0.0j
    terms = 0

    if fseq.mode == "single":
        return SeriesValue(0.0 + 0.0j, 0, 0.0)

    def pair_term(fk: GridFunction, fl: GridFunction, gap: int) -> complex:
        val = 0.0 + 0.0j
        for proj, theta in zip(spec.projectors, spec.thetas):
            val += theta ** (-gap) * _projected_pair_mean(
                branching, mu, proj.apply(fk), proj.apply(fl)
            )
        return val

    bound = fseq.support_bound
    if bound is not None:
        for ell in range(bound + 1):
            fl = fseq.term(ell)
            if fl is None:
                continue
            for k in range(ell + 1, bound + 1):
                fk = fseq.term(k)
                if fk is None:
                    continue
                total += 2.0 ** (-(k + ell) / 2.0) * pair_term(fk, fl, k - ell)
                terms += 1
        return SeriesValue(total, terms, 0.0)

    g = fseq.centered[0]
    c_bound = 0.0
    for proj in spec.projectors:
        u = proj.apply(g)
        c_bound += abs(_projected_pair_mean(branching, mu, u, u))
    if c_bound == 0.0:
        return SeriesValue(0.0 + 0.0j, 0, 0.0)
    k = 1
    while True:
        for ell in range(k):
            total += 2.0 ** (-(k + ell) / 2.0) * pair_term(g, g, k - ell)
            terms += 1
        # remaining mass: sum over k' > k of 2**(-k'/2) * sum_ell 2**(-ell/2)
        tail = c_bound * (2.0 ** (-(k + 1) / 2.0)) / (1.0 - 2.0**-0.5) ** 2
        if tail <= tol * max(abs(total), tol):
            return SeriesValue(total, terms, tail)
        if k >= MAX_TERMS:
            raise SeriesError("critical cross-offset series did not converge")
        k += 1


def tree_tail_critical_closed_form(f: GridFunction, model: KernelModel) -> float:
    """Closed form of the all-generations cross-offset critical sum.

    Equals ``sum_j <mu, pair(R_j f sym conj(R_j f))> / (sqrt(2) theta_j - 1)``;
    used as an independent cross-check of the series path.
    """
    spec = model.spectral
    g = model.centered(f)
    total = 0.0 + 0.0j
    for proj, theta in zip(spec.projectors, spec.thetas):
        u = proj.apply(g)
        c_j = _projected_pair_mean(model.branching, model.mu, u, u)
        total += c_j / (math.sqrt(2.0) * theta - 1.0)
    return _realize(total)


# ---------------------------------------------------------------------------
# closed-path specializations
# ---------------------------------------------------------------------------


def generation_variance(f: GridFunction, model: KernelModel, tol: float = 1e-10) -> float:
    """Limit variance of the normalized top-generation sum of ``f``."""
    regime = classify_regime(model.alpha)
    g = model.centered(f)
    if regime is Regime.SUBCRITICAL:
        g2 = GridFunction(g.space, g.values * g.values)
        split = _split_series(model.branching, model, g, tol)
        return float(inner(model.mu, g2) + split.value)
    if regime is Regime.CRITICAL:
        spec = model.spectral
        total = 0.0 + 0.0j
        for proj in spec.projectors:
            u = proj.apply(g)
            total += _projected_pair_mean(model.branching, model.mu, u, u)
        return _realize(total)
    raise UnsupportedRegimeError("no variance formula beyond the critical line")


def tree_variance(f: GridFunction, model: KernelModel, tol: float = 1e-10) -> float:
    """Limit variance of the normalized whole-tree sum of ``f``.

    This is the variance for the ``|tree|**-1/2`` normalization; the
    additive functional built from the same function at every offset
    carries twice this value (its normalizer is ``|generation|**-1/2``).
    """
    regime = classify_regime(model.alpha)
    g = model.centered(f)
    base = generation_variance(f, model, tol)
    if regime is Regime.SUBCRITICAL:
        alpha, m_est, two_a2 = _sub_constants(model)
        q = model.operator
        c = g.sup_norm
        if c == 0.0:
            return 0.0
        direct = 0.0
        h = q.apply(g)
        k = 1
        while True:
            direct += inner(model.mu, GridFunction(g.space, g.values * h.values))
            tail = (m_est * c) ** 2 * alpha ** (k + 1) / (1.0 - alpha)
            if tail <= tol * max(abs(direct), tol):
                break
            if k >= MAX_TERMS:
                raise SeriesError("tree direct series did not converge")
            h = q.apply(h)
            k += 1
        split = 0.0
        k = 1
        while True:
            u = g
            v = q.apply_power(g, k)
            r = 0
            inner_total = 0.0
            while True:
                inner_total += (2.0**r) * inner(
                    model.mu, model.branching.apply_pair_sym(u, v)
                )
                tail = (m_est * c) ** 2 * alpha**k * two_a2 ** (r + 1) / (1.0 - two_a2)
                if tail <= tol * max(abs(inner_total), tol):
                    break
                u = q.apply(u)
                v = q.apply(v)
                r += 1
            split += inner_total
            gap_tail = (m_est * c) ** 2 * alpha ** (k + 1) * (
                1.0 / (1.0 - two_a2)
            ) / (1.0 - alpha)
            if gap_tail <= tol * max(abs(split), tol):
                break
            if k >= MAX_TERMS:
                raise SeriesError("tree split series did not converge")
            k += 1
        return float(base + 2.0 * (direct + split))
    if regime is Regime.CRITICAL:
        return float(base + 2.0 * tree_tail_critical_closed_form(f, model))
    raise UnsupportedRegimeError("no variance formula beyond the critical line")


# ---------------------------------------------------------------------------
# top-level assembly
# ---------------------------------------------------------------------------


def _realize(value: complex) -> float:
    if abs(value.imag) > IMAG_TOL * max(1.0, abs(value.real)):
        raise SeriesError(f"imaginary residue {value.imag} above tolerance")
    return float(value.real)


def asymptotic_variance(
    fseq: FunctionSeq, model: KernelModel, tol: float = 1e-10
) -> VarianceResult:
    """Variance parameter of the normalized additive functional.

    Dispatches on the regime of the lineage operator and assembles the
    same-offset and cross-offset series into ``sigma1 + 2 * sigma2``.
    """
    regime = classify_regime(model.alpha)
    if regime is Regime.SUPERCRITICAL:
        raise UnsupportedRegimeError(
            "2*alpha^2 > 1: centered limit theory for this regime is not available"
        )
    if regime is Regime.SUBCRITICAL:
        s1 = sub_series_1(fseq, model, tol)
        s2 = sub_series_2(fseq, model, tol)
        sigma1 = float(s1.value)
        sigma2 = float(s2.value)
    else:
        s1 = crit_series_1(fseq, model, tol)
        s2 = crit_series_2(fseq, model, tol)
        sigma1 = _realize(complex(s1.value))
        sigma2 = _realize(complex(s2.value))
    sigma = sigma1 + 2.0 * sigma2
    if sigma < -NEGATIVE_TOL:
        raise SeriesError(f"variance {sigma} is negative beyond tolerance")
    return VarianceResult(
        sigma=max(sigma, 0.0),
        sigma1=sigma1,
        sigma2=sigma2,
        regime=regime,
        terms_used=s1.terms + s2.terms,
        truncation_bound=s1.tail_bound + s2.tail_bound,
    )
