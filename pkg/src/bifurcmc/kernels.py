"""Transition operators on finite or grid-discretized state spaces.

The single-step operator acts on functions by matrix application; the
branching kernel produces the pair of children.  Built-ins cover the
two workhorse models used throughout the tests: a Beta-mixture kernel
on [0,1] whose lineage operator contracts at rate 1/5, and a symmetric
two-state kernel whose stay probability tunes the contraction rate
(``(2 + sqrt(2))/4`` puts it exactly on the critical line ``2*alpha**2 = 1``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

ROW_SUM_TOL = 1e-10
WEIGHT_SUM_TOL = 1e-12


class SpaceMismatchError(ValueError):
    """Function and operator live on different state spaces."""


class KernelConfigError(ValueError):
    """Invalid parameters for a kernel constructor."""


# ---------------------------------------------------------------------------
# state spaces
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FiniteStates:
    """Finite state space: states are indices ``0..size-1``."""

    size: int

    def __post_init__(self) -> None:
        if self.size < 2:
            raise KernelConfigError(f"finite space needs >= 2 states, got {self.size}")

    @property
    def is_grid(self) -> bool:
        return False

    @property
    def points(self) -> np.ndarray:
        return np.arange(self.size, dtype=float)

    @property
    def weights(self) -> np.ndarray:
        # counting measure: plain sums over states
        return np.ones(self.size)


@dataclass(frozen=True)
class UnitIntervalGrid:
    """Quadrature grid on [0,1]: nodes plus weights summing to one."""

    nodes: np.ndarray
    quad_weights: np.ndarray

    def __post_init__(self) -> None:
        nodes = np.asarray(self.nodes, dtype=float)
        w = np.asarray(self.quad_weights, dtype=float)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "quad_weights", w)
        if nodes.ndim != 1 or nodes.size < 2:
            raise KernelConfigError("grid needs at least 2 nodes")
        if np.any(np.diff(nodes) <= 0) or nodes[0] < 0 or nodes[-1] > 1:
            raise KernelConfigError("grid nodes must increase strictly inside [0,1]")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > WEIGHT_SUM_TOL:
            raise KernelConfigError("quadrature weights must be positive and sum to 1")

    @property
    def is_grid(self) -> bool:
        return True

    @property
    def size(self) -> int:
        return self.nodes.size

    @property
    def points(self) -> np.ndarray:
        return self.nodes

    @property
    def weights(self) -> np.ndarray:
        return self.quad_weights

    def __eq__(self, other) -> bool:  # frozen dataclass with array fields
        return (
            isinstance(other, UnitIntervalGrid)
            and self.nodes.shape == other.nodes.shape
            and np.array_equal(self.nodes, other.nodes)
            and np.array_equal(self.quad_weights, other.quad_weights)
        )

    def __hash__(self) -> int:
        return hash((self.nodes.tobytes(), self.quad_weights.tobytes()))


StateSpace = FiniteStates | UnitIntervalGrid


def trapezoid_grid(size: int) -> UnitIntervalGrid:
    """Uniform grid on [0,1] with composite-trapezoid weights."""
    if size < 2:
        raise KernelConfigError("grid too small")
    nodes = np.linspace(0.0, 1.0, size)
    h = 1.0 / (size - 1)
    w = np.full(size, h)
    w[0] = w[-1] = h / 2.0
    return UnitIntervalGrid(nodes, w)


def simpson_grid(size: int) -> UnitIntervalGrid:
    """Uniform grid on [0,1] with composite-Simpson weights.

    Even node counts blend a 3/8 panel at the right end.  The O(h^4)
    error keeps the discretized spectral data (contraction rate,
    stationary density) well inside the tolerances the polynomial
    built-in kernels are verified against; trapezoid's O(h^2) does not.
    """
    if size < 4:
        return trapezoid_grid(size)
    nodes = np.linspace(0.0, 1.0, size)
    h = 1.0 / (size - 1)
    w = np.zeros(size)
    if size % 2 == 1:
        w[0] = w[-1] = h / 3.0
        w[1:-1:2] = 4.0 * h / 3.0
        w[2:-1:2] = 2.0 * h / 3.0
    else:
        # Simpson over the first size-4 intervals, 3/8 rule on the last 3
        m = size - 3
        w[0] = w[m - 1] = h / 3.0
        w[1 : m - 1 : 2] = 4.0 * h / 3.0
        w[2 : m - 1 : 2] = 2.0 * h / 3.0
        w[m - 1] += 3.0 * h / 8.0
        w[m] = w[m + 1] = 9.0 * h / 8.0
        w[m + 2] = 3.0 * h / 8.0
    w *= 1.0 / w.sum()  # absorb the last-ulp drift so masses sum to one
    return UnitIntervalGrid(nodes, w)


# ---------------------------------------------------------------------------
# functions on a state space
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridFunction:
    """A function tabulated on the points of a state space.

    ``exact`` optionally holds a closed form used for evaluation at
    off-grid states (Monte Carlo states are continuous for grid
    kernels); without it, evaluation falls back to linear interpolation
    between grid nodes.
    """

    space: StateSpace
    values: np.ndarray
    exact: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self) -> None:
        v = np.asarray(self.values)
        if not np.issubdtype(v.dtype, np.complexfloating):
            v = v.astype(float)
        object.__setattr__(self, "values", v)
        if v.shape != (self.space.size,):
            raise SpaceMismatchError(
                f"{v.shape} values on a {self.space.size}-point space"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite function values")

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def __call__(self, states: np.ndarray) -> np.ndarray:
        """Evaluate at sampled states (indices if finite, reals if grid)."""
        states = np.asarray(states)
        if not self.space.is_grid:
            return self.values[states.astype(np.int64)]
        if self.exact is not None:
            return np.asarray(self.exact(states))
        return np.interp(states, self.space.nodes, self.values)

    def shifted(self, c: float) -> "GridFunction":
        exact = None if self.exact is None else _Shifted(self.exact, c)
        return GridFunction(self.space, self.values - c, exact)

    def scaled(self, c: float) -> "GridFunction":
        exact = None if self.exact is None else _Scaled(self.exact, c)
        return GridFunction(self.space, self.values * c, exact)

    def squared(self) -> "GridFunction":
        exact = None if self.exact is None else _Squared(self.exact)
        return GridFunction(self.space, self.values * self.values, exact)


@dataclass(frozen=True)
class _Shifted:
    fn: Callable
    c: float

    def __call__(self, x):
        return np.asarray(self.fn(x)) - self.c


@dataclass(frozen=True)
class _Scaled:
    fn: Callable
    c: float

    def __call__(self, x):
        return np.asarray(self.fn(x)) * self.c


@dataclass(frozen=True)
class _Squared:
    fn: Callable

    def __call__(self, x):
        v = np.asarray(self.fn(x))
        return v * v


def function_from_callable(space: StateSpace, fn: Callable) -> GridFunction:
    return GridFunction(space, np.asarray(fn(space.points), dtype=float), exact=fn)


def function_from_values(space: StateSpace, values: Sequence[float]) -> GridFunction:
    return GridFunction(space, np.asarray(values, dtype=float))


def constant_function(space: StateSpace, c: float = 1.0) -> GridFunction:
    return GridFunction(space, np.full(space.size, float(c)), exact=_Const(c))


@dataclass(frozen=True)
class _Const:
    c: float

    def __call__(self, x):
        return np.full(np.shape(x), self.c)


def inner(mu: np.ndarray, f: GridFunction) -> float | complex:
    """Integral of ``f`` against a mass vector over the state points."""
    val = np.asarray(mu) @ f.values
    return complex(val) if np.iscomplexobj(f.values) else float(val)


def center(f: GridFunction, mu: np.ndarray) -> GridFunction:
    """Subtract the ``mu``-mean so the centered function integrates to zero.

    Exactly constant functions center to exact zeros (no quadrature dust),
    so functionals of constant sequences vanish identically.
    """
    vals = np.real(f.values)
    if np.all(vals == vals.flat[0]):
        return constant_function(f.space, 0.0)
    return f.shifted(float(np.asarray(mu) @ vals))


# ---------------------------------------------------------------------------
# single-step operator
# ---------------------------------------------------------------------------


class MarkovOperator:
    """Row-stochastic transition operator on a discrete state space.

    ``matrix[i, j]`` is the probability of moving from point ``i`` to
    point ``j``; for grids it is density times quadrature weight,
    renormalized per row to absorb quadrature error.
    """

    def __init__(self, space: StateSpace, matrix: np.ndarray, name: str = "custom"):
        matrix = np.asarray(matrix, dtype=float)
        if matrix.shape != (space.size, space.size):
            raise SpaceMismatchError(f"matrix {matrix.shape} on size-{space.size} space")
        if np.any(matrix < 0):
            raise KernelConfigError("negative kernel entries")
        rows = matrix.sum(axis=1)
        if np.any(np.abs(rows - 1.0) > ROW_SUM_TOL):
            raise KernelConfigError("rows do not sum to 1 within tolerance")
        self.space = space
        self.matrix = matrix
        self.name = name
        self._cdf: np.ndarray | None = None

    def apply(self, f: GridFunction) -> GridFunction:
        """One-step expectation of ``f`` as a function of the start point."""
        if f.space != self.space:
            raise SpaceMismatchError("function lives on a different space")
        return GridFunction(self.space, self.matrix @ f.values)

    def apply_power(self, f: GridFunction, k: int) -> GridFunction:
        """k-step expectation by repeated application; ``k = 0`` is identity."""
        if k < 0:
            raise ValueError("negative power")
        out = f
        for _ in range(k):
            out = self.apply(out)
        return out

    def power_table(self, f: GridFunction, k_max: int) -> list[GridFunction]:
        """``[f, Qf, ..., Q^k_max f]`` computed once for reuse in series."""
        table = [f]
        for _ in range(k_max):
            table.append(self.apply(table[-1]))
        return table

    def sample_next(self, states: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Draw one successor per entry of ``states`` from the discrete rows."""
        if self._cdf is None:
            self._cdf = np.cumsum(self.matrix, axis=1)
        idx = states.astype(np.int64) if not self.space.is_grid else self._nearest(states)
        u = rng.random(idx.shape)
        chosen = (self._cdf[idx] < u[..., None]).sum(axis=-1)
        chosen = np.minimum(chosen, self.space.size - 1)
        if self.space.is_grid:
            return self.space.nodes[chosen]
        return chosen

    def _nearest(self, states: np.ndarray) -> np.ndarray:
        nodes = self.space.nodes
        pos = np.searchsorted(nodes, states)
        pos = np.clip(pos, 1, nodes.size - 1)
        left = nodes[pos - 1]
        right = nodes[pos]
        return np.where(states - left <= right - states, pos - 1, pos)


# ---------------------------------------------------------------------------
# branching kernels
# ---------------------------------------------------------------------------


class BranchingKernel:
    """Joint law of the two children given the parent state."""

    space: StateSpace
    name: str

    def marginals(self) -> tuple[MarkovOperator, MarkovOperator]:
        raise NotImplementedError

    def mean_operator(self) -> MarkovOperator:
        """Average of the two child marginals; drives a random lineage."""
        p0, p1 = self.marginals()
        return MarkovOperator(
            self.space, 0.5 * (p0.matrix + p1.matrix), name=f"{self.name}:mean"
        )

    def apply_pair(self, u: GridFunction, v: GridFunction) -> GridFunction:
        """Expectation of ``u(child0) * v(child1)`` as a function of the parent."""
        raise NotImplementedError

    def apply_pair_sym(self, u: GridFunction, v: GridFunction) -> GridFunction:
        """Symmetrized tensor: average of ``u (x) v`` and ``v (x) u``."""
        a = self.apply_pair(u, v)
        b = self.apply_pair(v, u)
        return GridFunction(self.space, 0.5 * (a.values + b.values))

    def apply_bivariate(self, g: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> GridFunction:
        """Expectation of a general two-argument function of the children."""
        raise NotImplementedError

    def sample_pair(
        self, states: np.ndarray, rng: np.random.Generator
    ) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError


class ProductBranching(BranchingKernel):
    """Children drawn independently from the same one-step law."""

    def __init__(self, q: MarkovOperator, name: str | None = None,
                 exact_sampler: Callable | None = None):
        self.q = q
        self.space = q.space
        self.name = name or f"product({q.name})"
        # exact_sampler(states, rng) -> one child per state, bypassing the grid
        self.exact_sampler = exact_sampler

    def marginals(self) -> tuple[MarkovOperator, MarkovOperator]:
        return self.q, self.q

    def mean_operator(self) -> MarkovOperator:
        return self.q

    def apply_pair(self, u: GridFunction, v: GridFunction) -> GridFunction:
        # conditional independence factorizes the pair expectation
        qu = self.q.matrix @ u.values
        qv = self.q.matrix @ v.values
        return GridFunction(self.space, qu * qv)

    def apply_bivariate(self, g) -> GridFunction:
        pts = self.space.points
        gm = np.asarray(g(pts[:, None], pts[None, :]), dtype=float)
        k = self.q.matrix
        return GridFunction(self.space, np.einsum("ij,jk,ik->i", k, gm, k))

    def sample_pair(self, states, rng):
        if self.exact_sampler is not None:
            return (
                self.exact_sampler(states, rng),
                self.exact_sampler(states, rng),
            )
        return (
            self.q.sample_next(states, rng),
            self.q.sample_next(states, rng),
        )


class PairBranching(BranchingKernel):
    """General joint child law on a finite space, given as a probability tensor.

    ``joint[i, j, k]`` is the probability that the children land in
    states ``(j, k)`` when the parent sits at ``i``.
    """

    def __init__(self, space: FiniteStates, joint: np.ndarray, name: str = "pair"):
        joint = np.asarray(joint, dtype=float)
        m = space.size
        if joint.shape != (m, m, m):
            raise SpaceMismatchError("joint tensor shape mismatch")
        if np.any(joint < 0) or np.any(np.abs(joint.sum(axis=(1, 2)) - 1) > ROW_SUM_TOL):
            raise KernelConfigError("joint rows must be probability tables")
        self.space = space
        self.joint = joint
        self.name = name
        self._flat_cdf = np.cumsum(joint.reshape(m, m * m), axis=1)

    def marginals(self) -> tuple[MarkovOperator, MarkovOperator]:
        return (
            MarkovOperator(self.space, self.joint.sum(axis=2), name=f"{self.name}:m0"),
            MarkovOperator(self.space, self.joint.sum(axis=1), name=f"{self.name}:m1"),
        )

    def apply_pair(self, u: GridFunction, v: GridFunction) -> GridFunction:
        vals = np.einsum("ijk,j,k->i", self.joint, u.values, v.values)
        return GridFunction(self.space, vals)

    def apply_bivariate(self, g) -> GridFunction:
        pts = self.space.points
        gm = np.asarray(g(pts[:, None], pts[None, :]), dtype=float)
        return GridFunction(self.space, np.einsum("ijk,jk->i", self.joint, gm))

    def sample_pair(self, states, rng):
        m = self.space.size
        u = rng.random(states.shape)
        flat = (self._flat_cdf[states.astype(np.int64)] < u[..., None]).sum(axis=-1)
        flat = np.minimum(flat, m * m - 1)
        return flat // m, flat % m


# ---------------------------------------------------------------------------
# built-in kernels
# ---------------------------------------------------------------------------

CRITICAL_STAY_PROBABILITY = (2.0 + math.sqrt(2.0)) / 4.0


def _beta23_density(y: np.ndarray) -> np.ndarray:
    # Beta(2,3) normalizer is 1/12
    return 12.0 * y * (1.0 - y) ** 2


def _beta32_density(y: np.ndarray) -> np.ndarray:
    return 12.0 * y * y * (1.0 - y)


@dataclass(frozen=True)
class _BetaMixtureSampler:
    """Exact child draw: pick Beta(3,2) with probability x, else Beta(2,3).

    Beta with small integer shapes is sampled as an order statistic of
    four uniforms, which keeps the stream layout fixed (five uniforms
    per child) and avoids rejection loops.
    """

    def __call__(self, states: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        pick_32 = rng.random(states.shape) < states
        u = rng.random(states.shape + (4,))
        lo = np.minimum(u[..., 0], u[..., 1])
        hi = np.maximum(u[..., 0], u[..., 1])
        lo2 = np.minimum(u[..., 2], u[..., 3])
        hi2 = np.maximum(u[..., 2], u[..., 3])
        second = np.minimum(np.maximum(lo, lo2), np.minimum(hi, hi2))
        third = np.maximum(np.maximum(lo, lo2), np.minimum(hi, hi2))
        return np.where(pick_32, third, second)


def beta_mixture_kernel(grid_size: int = 512) -> ProductBranching:
    """State-dependent Beta mixture on [0,1] with independent children.

    The transition density is ``(1-x) * Beta(2,3)(y) + x * Beta(3,2)(y)``;
    its invariant density is Beta(2,2) and the one-step mean of the
    identity is ``x/5 + 2/5``.
    """
    grid = simpson_grid(grid_size)
    x = grid.nodes[:, None]
    dens = (1.0 - x) * _beta23_density(grid.nodes[None, :]) + x * _beta32_density(
        grid.nodes[None, :]
    )
    mat = dens * grid.quad_weights[None, :]
    mat /= mat.sum(axis=1, keepdims=True)
    q = MarkovOperator(grid, mat, name="beta_mixture")
    return ProductBranching(q, name="beta_mixture", exact_sampler=_BetaMixtureSampler())


def two_state_kernel(stay_prob: float) -> ProductBranching:
    """Symmetric two-state chain; each child stays put with probability ``stay_prob``."""
    if not 0.0 <= stay_prob <= 1.0:
        raise KernelConfigError(f"stay probability {stay_prob} outside [0,1]")
    space = FiniteStates(2)
    mat = np.array([[stay_prob, 1.0 - stay_prob], [1.0 - stay_prob, stay_prob]])
    q = MarkovOperator(space, mat, name=f"two_state({stay_prob!r})")
    return ProductBranching(q, name=f"two_state({stay_prob!r})")


def grid_kernel_from_density(
    density: Callable[[np.ndarray, np.ndarray], np.ndarray],
    grid_size: int = 512,
    name: str = "grid_custom",
) -> ProductBranching:
    """Discretize a bivariate density ``q(x, y)`` into a row-stochastic operator."""
    grid = simpson_grid(grid_size)
    dens = np.asarray(density(grid.nodes[:, None], grid.nodes[None, :]), dtype=float)
    if np.any(dens < 0) or not np.all(np.isfinite(dens)):
        raise KernelConfigError("density must be finite and nonnegative on the grid")
    mat = dens * grid.quad_weights[None, :]
    sums = mat.sum(axis=1)
    if np.any(sums <= 0):
        raise KernelConfigError("a kernel row integrates to zero")
    mat /= sums[:, None]
    q = MarkovOperator(grid, mat, name=name)
    return ProductBranching(q, name=name)
