"""Exact first and second moments of generation sums.

The expectations of ``sum_{|u|=n} f(X_u)`` (and products of two such
sums) reduce to powers of the lineage operator applied at the root,
plus a branch-splitting series over the generation where the two
lineages separate.  These closed forms serve both as verification
oracles for the simulator and as the per-node ingredients of the
decomposition diagnostics.

A direct enumeration oracle over all state assignments of a small tree
on a finite space provides the independent cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tree
from .kernels import (
    BranchingKernel,
    FiniteStates,
    GridFunction,
    MarkovOperator,
    ProductBranching,
    PairBranching,
)


class EnumerationBudgetError(ValueError):
    """The requested brute-force enumeration exceeds the node budget."""


@dataclass(frozen=True)
class MomentRequest:
    """What to enumerate: mean / second / cross moment of generation sums."""

    kind: str  # "mean" | "second" | "cross"
    f: GridFunction
    g: GridFunction | None = None
    n: int = 0
    m: int = 0
    x: int | None = None  # starting state index; None integrates against mu

    def __post_init__(self) -> None:
        if self.kind not in ("mean", "second", "cross"):
            raise ValueError(f"unknown moment kind {self.kind!r}")
        if not 0 <= self.m <= self.n:
            raise ValueError("need n >= m >= 0")
        if self.kind == "cross" and self.g is None:
            raise ValueError("cross moment needs a second function")


def _pair_tensor(branching: BranchingKernel) -> np.ndarray:
    if isinstance(branching, PairBranching):
        return branching.joint
    if isinstance(branching, ProductBranching):
        k = branching.q.matrix
        return k[:, :, None] * k[:, None, :]
    raise TypeError(f"unsupported branching kernel {type(branching)!r}")


# ---------------------------------------------------------------------------
# operator-form oracles (functions of the starting state)
# ---------------------------------------------------------------------------


def mean_fn(q: MarkovOperator, f: GridFunction, n: int) -> GridFunction:
    """Expected generation-``n`` sum of ``f`` as a function of the root state."""
    if n == 0:
        return f
    out = q.apply_power(f, n)
    return GridFunction(q.space, (2.0**n) * out.values)


def second_moment_fn(
    branching: BranchingKernel, q: MarkovOperator, f: GridFunction, n: int
) -> GridFunction:
    """Expected squared generation-``n`` sum as a function of the root state.

    Diagonal term: ``2**n Q^n(f^2)``.  Off-diagonal pairs split at some
    generation ``k < n``; each split contributes
    ``2**(n+k) Q^(n-k-1) applied to the pair expectation of the two
    ``(n-k-1)``-step forecasts.
    """
    f2 = f.squared()
    if n == 0:
        return f2
    total = (2.0**n) * q.apply_power(f2, n).values
    powers = q.power_table(f, n)
    for k in range(n):
        pair = branching.apply_pair(powers[k], powers[k])
        total = total + (2.0 ** (n + k)) * q.apply_power(pair, n - k - 1).values
    return GridFunction(q.space, total)


def cross_moment_fn(
    branching: BranchingKernel,
    q: MarkovOperator,
    f: GridFunction,
    g: GridFunction,
    n: int,
    m: int,
) -> GridFunction:
    """Expected product of the generation-``n`` sum of ``f`` and the
    generation-``m`` sum of ``g`` (``n >= m``), as a function of the root."""
    if not 0 <= m <= n:
        raise ValueError("need n >= m >= 0")
    fwd = q.apply_power(f, n - m)
    prod = GridFunction(q.space, g.values * fwd.values)
    total = (2.0**n) * q.apply_power(prod, m).values
    pf = q.power_table(f, n)  # pf[j] = Q^j f
    pg = q.power_table(g, m)
    for k in range(m):
        pair = branching.apply_pair_sym(pg[k], pf[n - m + k])
        total = total + (2.0 ** (n + k)) * q.apply_power(pair, m - k - 1).values
    return GridFunction(q.space, total)


# ---------------------------------------------------------------------------
# point evaluations
# ---------------------------------------------------------------------------


def generation_mean(q: MarkovOperator, f: GridFunction, n: int, x) -> float:
    return float(mean_fn(q, f, n)(np.asarray(x)))


def generation_second_moment(
    branching: BranchingKernel, q: MarkovOperator, f: GridFunction, n: int, x
) -> float:
    return float(second_moment_fn(branching, q, f, n)(np.asarray(x)))


def generation_cross_moment(
    branching: BranchingKernel,
    q: MarkovOperator,
    f: GridFunction,
    g: GridFunction,
    n: int,
    m: int,
    x,
) -> float:
    return float(cross_moment_fn(branching, q, f, g, n, m)(np.asarray(x)))


# ---------------------------------------------------------------------------
# brute-force enumeration oracle
# ---------------------------------------------------------------------------


def _assignment_table(n_states: int, n_nodes: int) -> np.ndarray:
    """Every state assignment of ``n_nodes`` slots, one row each (cached)."""
    key = (n_states, n_nodes)
    table = _ASSIGNMENT_CACHE.get(key)
    if table is None:
        count = n_states**n_nodes
        idx = np.arange(count)
        table = np.empty((count, n_nodes), dtype=np.int64)
        for u in range(n_nodes - 1, -1, -1):
            table[:, u] = idx % n_states
            idx //= n_states
        _ASSIGNMENT_CACHE[key] = table
    return table


_ASSIGNMENT_CACHE: dict = {}
_PROB_CACHE: dict = {}


def _assignment_probs(
    branching: BranchingKernel, n: int, assignments: np.ndarray
) -> np.ndarray:
    """Transition-product weight of every assignment, root factor excluded."""
    joint = _pair_tensor(branching)
    key = (joint.tobytes(), n)  # content key: object ids get recycled
    probs = _PROB_CACHE.get(key)
    if probs is None:
        probs = np.ones(assignments.shape[0])
        n_internal = tree.tree_size(n - 1) if n >= 1 else 0
        for u in range(n_internal):
            probs = probs * joint[
                assignments[:, u], assignments[:, 2 * u + 1], assignments[:, 2 * u + 2]
            ]
        if len(_PROB_CACHE) > 64:
            _PROB_CACHE.clear()
        _PROB_CACHE[key] = probs
    return probs


def brute_force_moment(
    branching: BranchingKernel,
    request: MomentRequest,
    max_assignments: int = 2_000_000,
    mu: np.ndarray | None = None,
) -> float:
    """Exact expectation by summing over every state assignment of the tree.

    Only meaningful on finite spaces; the assignment count is
    ``m ** (2**(n+1) - 1)`` and must fit the budget.
    """
    space = branching.space
    if not isinstance(space, FiniteStates):
        raise TypeError("enumeration requires a finite state space")
    n = request.n
    n_nodes = tree.tree_size(n)
    n_assign = space.size**n_nodes
    if n_assign > max_assignments:
        raise EnumerationBudgetError(
            f"{n_assign} assignments exceed budget {max_assignments}"
        )

    assignments = _assignment_table(space.size, n_nodes)
    probs = _assignment_probs(branching, n, assignments)
    if request.x is not None:
        probs = probs * (assignments[:, 0] == request.x)
    else:
        if mu is None:
            raise ValueError("integrated moments need an explicit root law")
        probs = probs * np.asarray(mu, dtype=float)[assignments[:, 0]]

    def gen_sum(fn: GridFunction, k: int) -> np.ndarray:
        sl = tree.generation_slice(k)
        return fn.values[assignments[:, sl]].sum(axis=1)

    if request.kind == "mean":
        stat = gen_sum(request.f, n)
    elif request.kind == "second":
        s = gen_sum(request.f, n)
        stat = s * s
    else:
        stat = gen_sum(request.f, n) * gen_sum(request.g, request.m)
    return float(probs @ stat)
