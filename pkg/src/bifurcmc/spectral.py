"""Stationary measure, contraction rate and spectral projectors.

The stationary mass vector comes from power iteration on the adjoint
(robust, no eigensolver involved); the contraction rate and the
projectors onto the second-modulus eigenspaces come from a dense
eigendecomposition of the discretized operator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import (
    FiniteStates,
    GridFunction,
    MarkovOperator,
    center,
    function_from_callable,
    function_from_values,
)

STATIONARY_TOL = 1e-12
STATIONARY_BUDGET = 100_000
MODULUS_GROUP_TOL = 1e-9


class ConvergenceError(RuntimeError):
    """Power iteration failed to settle within the iteration budget."""


class SpectralError(RuntimeError):
    """Eigenstructure unusable (defective at the leading modulus, etc.)."""


def _primitivity_ok(matrix: np.ndarray) -> bool:
    """Strict positivity of some power, ignoring states no row can reach.

    Grid kernels may carry structurally unreachable boundary nodes
    (zero columns); those carry no stationary mass and are excluded
    before the positivity check.
    """
    pos = matrix > 0
    reachable = pos.any(axis=0)
    if not reachable.any():
        return False
    sub = pos[np.ix_(reachable, reachable)]
    acc = sub.copy()
    for _ in range(int(np.ceil(np.log2(sub.shape[0]))) + 2):
        if acc.all():
            return True
        acc = acc @ sub
    return bool(acc.all())


def invariant_measure(q: MarkovOperator) -> np.ndarray:
    """Left fixed point of the operator, normalized to total mass one."""
    if not _primitivity_ok(q.matrix):
        raise ConvergenceError(
            f"operator {q.name!r} is not primitive on its reachable states"
        )
    mu = np.full(q.space.size, 1.0 / q.space.size)
    for _ in range(STATIONARY_BUDGET):
        nxt = mu @ q.matrix
        nxt /= nxt.sum()
        if np.abs(nxt - mu).sum() < STATIONARY_TOL:
            return nxt
        mu = nxt
    raise ConvergenceError(
        f"stationary iteration for {q.name!r} did not converge "
        f"within {STATIONARY_BUDGET} steps"
    )


@dataclass(frozen=True)
class SpectralProjector:
    """Rank-one spectral component: ``f -> (left . f) * right``."""

    eigenvalue: complex
    left: np.ndarray
    right: np.ndarray

    def apply(self, f: GridFunction) -> GridFunction:
        return GridFunction(f.space, (self.left @ f.values) * self.right)

    def as_matrix(self) -> np.ndarray:
        return np.outer(self.right, self.left)


@dataclass(frozen=True)
class SpectralData:
    """Eigenstructure of the one-step operator needed by the variance formulas."""

    mu: np.ndarray
    alpha: float
    ergodicity_constant: float
    eigenvalues: np.ndarray  # sorted by decreasing modulus
    projectors: tuple[SpectralProjector, ...]  # one per second-modulus eigenvalue
    degenerate: bool = False  # second modulus not separated from 1

    @property
    def thetas(self) -> np.ndarray:
        if self.alpha == 0:
            return np.array([])
        return np.array([p.eigenvalue / self.alpha for p in self.projectors])


def _default_probes(q: MarkovOperator) -> list[GridFunction]:
    space = q.space
    if isinstance(space, FiniteStates):
        probes = [
            function_from_values(space, row)
            for row in np.eye(space.size)[: min(space.size, 8)]
        ]
        probes.append(function_from_callable(space, lambda s: s / max(space.size - 1, 1)))
        return probes
    return [
        function_from_callable(space, lambda x: x),
        function_from_callable(space, lambda x: x * x),
        function_from_callable(space, lambda x: (x - 0.5) ** 3),
        function_from_callable(space, lambda x: np.abs(x - 0.5)),
        function_from_callable(space, lambda x: (x > 0.5).astype(float)),
    ]


def ergodicity_rate(
    q: MarkovOperator,
    mu: np.ndarray | None = None,
    probes: list[GridFunction] | None = None,
    n_max: int = 30,
) -> tuple[float, float]:
    """Contraction rate and a matching prefactor estimate.

    Returns ``(alpha, m_est)`` where ``alpha`` is the modulus of the
    second-largest eigenvalue and ``m_est`` the smallest constant making
    ``sup |Q^n f - <mu, f>| <= m_est * alpha**n * sup|f|`` hold over the
    probe set for ``n <= n_max``.  A chain whose second modulus is not
    separated from one gets ``alpha = 1`` and ``m_est = inf``.
    """
    eigvals = np.linalg.eigvals(q.matrix)
    order = np.argsort(-np.abs(eigvals))
    eigvals = eigvals[order]
    alpha = float(np.abs(eigvals[1])) if eigvals.size > 1 else 0.0
    if alpha >= 1.0 - MODULUS_GROUP_TOL:
        return 1.0, float("inf")
    if mu is None:
        mu = invariant_measure(q)
    if probes is None:
        probes = _default_probes(q)
    m_est = 0.0
    for f in probes:
        if f.sup_norm == 0.0:
            continue
        g = center(f, mu)
        noise_floor = 1e-13 * f.sup_norm  # below this, matmul roundoff dominates
        scale = alpha ** np.arange(n_max + 1) * f.sup_norm
        for n in range(n_max + 1):
            if scale[n] == 0.0 or (n > 0 and g.sup_norm < noise_floor):
                break
            m_est = max(m_est, g.sup_norm / scale[n])
            g = q.apply(g)
    return alpha, m_est


def spectral_projectors(
    q: MarkovOperator,
    mu: np.ndarray | None = None,
    n_max: int = 30,
) -> SpectralData:
    """Full spectral summary of the discretized operator.

    Eigenvalues whose modulus sits within ``MODULUS_GROUP_TOL`` of the
    second-largest modulus contribute one rank-one projector each, built
    from biorthogonal left/right eigenvectors (rows of the inverse
    eigenvector matrix against its columns, so ``left . right = 1``
    holds by construction).
    """
    if mu is None:
        mu = invariant_measure(q)
    eigvals, vecs = np.linalg.eig(q.matrix)
    order = np.argsort(-np.abs(eigvals))
    eigvals = eigvals[order]
    vecs = vecs[:, order]
    alpha = float(np.abs(eigvals[1])) if eigvals.size > 1 else 0.0
    if alpha >= 1.0 - MODULUS_GROUP_TOL:
        return SpectralData(mu, 1.0, float("inf"), eigvals, (), degenerate=True)

    try:
        inv = np.linalg.inv(vecs)
    except np.linalg.LinAlgError as exc:
        raise SpectralError("eigenvector matrix is singular") from exc
    recon = vecs @ np.diag(eigvals) @ inv
    scale = max(1.0, float(np.abs(q.matrix).max()))
    if np.max(np.abs(recon - q.matrix)) > 1e-8 * scale:
        raise SpectralError(
            "operator is not numerically diagonalizable; projectors at the "
            "second modulus are unavailable"
        )

    group = [
        j
        for j in range(1, eigvals.size)
        if abs(abs(eigvals[j]) - alpha) <= MODULUS_GROUP_TOL
    ]
    projectors = tuple(
        SpectralProjector(complex(eigvals[j]), inv[j].copy(), vecs[:, j].copy())
        for j in group
    )
    _, m_est = ergodicity_rate(q, mu=mu, n_max=n_max)
    return SpectralData(mu, alpha, m_est, eigvals, projectors)


def leading_component(spectral: SpectralData, f: GridFunction) -> GridFunction:
    """Sum of the second-modulus spectral components of ``f``."""
    vals = np.zeros(f.space.size, dtype=complex)
    for proj in spectral.projectors:
        vals += proj.apply(f).values
    return GridFunction(f.space, vals)


def center_spectral(f: GridFunction, spectral: SpectralData, n: int) -> GridFunction:
    """Centered function minus its decayed leading spectral part.

    Subtracts the invariant mean and ``alpha**n * sum_j theta_j**n R_j f``;
    the result is the depth-``n`` correction term whose ``n``-step image
    under the operator falls strictly below the ``alpha**n`` scale.
    """
    if spectral.degenerate:
        raise SpectralError("projectors unavailable for a degenerate spectrum")
    g = center(f, spectral.mu)
    decay = spectral.alpha**n
    vals = g.values.astype(complex)
    for proj, theta in zip(spectral.projectors, spectral.thetas):
        vals -= decay * theta**n * proj.apply(f).values
    return GridFunction(f.space, vals)


def remove_leading_component(f: GridFunction, spectral: SpectralData) -> GridFunction:
    """Centered function with the second-modulus eigenspaces removed entirely.

    On a space whose spectrum is fully resolved by the constants and the
    second-modulus eigenspaces (such as a two-state chain), the result is
    annihilated by every positive operator power.
    """
    if spectral.degenerate:
        raise SpectralError("projectors unavailable for a degenerate spectrum")
    g = center(f, spectral.mu)
    vals = g.values.astype(complex) - leading_component(spectral, f).values
    return GridFunction(f.space, vals)
