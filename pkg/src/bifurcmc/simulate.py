"""Tree sampling and the additive functionals evaluated on sampled trees.

One realized tree stores its states in a flat heap-ordered array, so a
generation sweep is one contiguous slice.  Ensembles draw each replica
from its own random stream derived from ``(master_seed, replica)``,
which makes results independent of how replicas are chunked across
worker processes.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tree
from .kernels import BranchingKernel, GridFunction, center
from .model import KernelModel


# ---------------------------------------------------------------------------
# initial distributions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PointMass:
    """Root pinned at one state (index for finite spaces, real for grids)."""

    x: float

    def sample(self, model: KernelModel, size: int, rng: np.random.Generator) -> np.ndarray:
        if model.space.is_grid:
            return np.full(size, float(self.x))
        return np.full(size, int(self.x), dtype=np.int64)


@dataclass(frozen=True)
class BetaInit:
    """Root drawn from a Beta law with small integer shapes (exact draw)."""

    a: int
    b: int

    def sample(self, model: KernelModel, size: int, rng: np.random.Generator) -> np.ndarray:
        if not model.space.is_grid:
            raise ValueError("Beta initial law needs a [0,1] state space")
        n_unif = self.a + self.b - 1
        u = np.sort(rng.random((size, n_unif)), axis=1)
        return u[:, self.a - 1]


@dataclass(frozen=True)
class StationaryInit:
    """Root drawn from the computed stationary mass vector (discrete inverse CDF)."""

    def sample(self, model: KernelModel, size: int, rng: np.random.Generator) -> np.ndarray:
        cdf = np.cumsum(model.mu)
        idx = np.minimum(np.searchsorted(cdf, rng.random(size)), model.space.size - 1)
        if model.space.is_grid:
            return model.space.nodes[idx]
        return idx.astype(np.int64)


InitialLaw = PointMass | BetaInit | StationaryInit


# ---------------------------------------------------------------------------
# function sequences
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FunctionSeq:
    """Depth-indexed sequence of observables with cached centered versions.

    ``mode`` is one of ``"single"`` (the function sits at depth offset 0
    and every deeper offset is zero), ``"all"`` (the same function at
    every offset) or ``"explicit"`` (a finite list, zero beyond it).
    """

    mode: str
    centered: tuple[GridFunction, ...]
    sup_bound: float  # uniform sup-norm bound over the raw sequence

    @staticmethod
    def single(f: GridFunction, model: KernelModel) -> "FunctionSeq":
        return FunctionSeq("single", (center(f, model.mu),), f.sup_norm)

    @staticmethod
    def all_generations(f: GridFunction, model: KernelModel) -> "FunctionSeq":
        return FunctionSeq("all", (center(f, model.mu),), f.sup_norm)

    @staticmethod
    def explicit(fs: Sequence[GridFunction], model: KernelModel) -> "FunctionSeq":
        if not fs:
            raise ValueError("empty function list")
        cen = tuple(center(f, model.mu) for f in fs)
        return FunctionSeq("explicit", cen, max(f.sup_norm for f in fs))

    def term(self, ell: int) -> GridFunction | None:
        """Centered function at depth offset ``ell`` (None when it is zero)."""
        if self.mode == "all":
            return self.centered[0]
        if self.mode == "single":
            return self.centered[0] if ell == 0 else None
        return self.centered[ell] if ell < len(self.centered) else None

    @property
    def support_bound(self) -> int | None:
        """Largest offset with a nonzero term, or None when unbounded."""
        if self.mode == "single":
            return 0
        if self.mode == "explicit":
            return len(self.centered) - 1
        return None


# ---------------------------------------------------------------------------
# tree samples
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TreeSample:
    """One realized tree up to ``depth``: flat heap-ordered state array."""

    depth: int
    states: np.ndarray
    kernel_id: str
    master_seed: int
    replica: int

    def generation(self, k: int) -> np.ndarray:
        if not 0 <= k <= self.depth:
            raise ValueError(f"generation {k} outside depth {self.depth}")
        return self.states[tree.generation_slice(k)]


def replica_rng(master_seed: int, replica: int) -> np.random.Generator:
    """Independent stream for one replica, stable across chunkings."""
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(entropy=master_seed, spawn_key=(replica,)))
    )


def sample_tree(
    branching: BranchingKernel,
    initial: InitialLaw,
    depth: int,
    rng: np.random.Generator,
    model: KernelModel | None = None,
    kernel_id: str = "",
    master_seed: int = 0,
    replica: int = 0,
) -> TreeSample:
    """Draw one tree generation by generation.

    The root comes from ``initial``; each node of generation ``k < depth``
    receives a child pair drawn from the branching kernel, the draws
    being independent across the generation given its states.
    """
    if depth > tree.MAX_DEPTH:
        raise tree.DepthLimitError(f"depth {depth} exceeds {tree.MAX_DEPTH}")
    if model is None:
        model = KernelModel(branching)
    dtype = float if branching.space.is_grid else np.int64
    states = np.empty(tree.tree_size(depth), dtype=dtype)
    states[0:1] = initial.sample(model, 1, rng)
    for k in range(depth):
        parents = states[tree.generation_slice(k)]
        c0, c1 = branching.sample_pair(parents, rng)
        nxt = states[tree.generation_slice(k + 1)]
        nxt[0::2] = c0
        nxt[1::2] = c1
    return TreeSample(depth, states, kernel_id or branching.name, master_seed, replica)


# ---------------------------------------------------------------------------
# additive functionals
# ---------------------------------------------------------------------------


def generation_sum(sample: TreeSample, f: GridFunction, k: int) -> float:
    """Sum of ``f`` over the states of generation ``k``."""
    return float(np.sum(f(sample.generation(k))))


def tree_sum(sample: TreeSample, f: GridFunction, n: int) -> float:
    """Sum of ``f`` over all generations up to ``n``."""
    if n > sample.depth:
        raise ValueError(f"depth {n} beyond sample depth {sample.depth}")
    return float(sum(generation_sum(sample, f, k) for k in range(n + 1)))


def additive_functional(sample: TreeSample, fseq: FunctionSeq, n: int | None = None) -> float:
    """Normalized centered generation sums rooted at the top of the tree.

    Computes ``2**(-n/2)`` times the sum over depth offsets ``ell`` of the
    generation-(n-ell) sum of the centered term at offset ``ell``.
    """
    if n is None:
        n = sample.depth
    if n > sample.depth:
        raise ValueError(f"depth {n} beyond sample depth {sample.depth}")
    total = 0.0
    for ell in range(n + 1):
        g = fseq.term(ell)
        if g is None:
            continue
        total += generation_sum(sample, g, n - ell)
    return total / math.sqrt(2.0**n)


def additive_functional_at(
    sample: TreeSample, fseq: FunctionSeq, node: tree.NodeId, n: int | None = None
) -> float:
    """Subtree-rooted version of :func:`additive_functional`.

    Same normalization ``2**(-n/2)``; the generation sums run only over
    descendants of ``node`` (offsets reach ``n - |node|``).
    """
    if n is None:
        n = sample.depth
    if node.generation > n or n > sample.depth:
        raise ValueError("node below the requested depth")
    total = 0.0
    for ell in range(n - node.generation + 1):
        g = fseq.term(ell)
        if g is None:
            continue
        block = sample.states[tree.subtree_slice(node, n - ell)]
        total += float(np.sum(g(block)))
    return total / math.sqrt(2.0**n)


# ---------------------------------------------------------------------------
# ensembles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EnsembleConfig:
    replicas: int
    depth: int
    master_seed: int = 20240
    workers: int = 1

    def __post_init__(self) -> None:
        if self.replicas < 1:
            raise ValueError("need at least one replica")
        if self.depth > tree.MAX_DEPTH:
            raise tree.DepthLimitError(f"depth {self.depth} exceeds {tree.MAX_DEPTH}")


# module-level worker state so forked processes reuse one prepared model
_WORK: dict = {}


def _chunk_worker(args: tuple[int, int]) -> tuple[int, np.ndarray]:
    start, stop = args
    branching = _WORK["branching"]
    model = _WORK["model"]
    initial = _WORK["initial"]
    depth = _WORK["depth"]
    seed = _WORK["seed"]
    evaluator = _WORK["evaluator"]
    rows = []
    for r in range(start, stop):
        rng = replica_rng(seed, r)
        sample = sample_tree(
            branching, initial, depth, rng, model=model,
            master_seed=seed, replica=r,
        )
        rows.append(evaluator(sample))
    return start, np.asarray(rows, dtype=float)


def _init_worker(payload: dict) -> None:
    _WORK.update(payload)


def sample_ensemble(
    branching: BranchingKernel,
    initial: InitialLaw,
    config: EnsembleConfig,
    evaluator: Callable[[TreeSample], float],
    model: KernelModel | None = None,
) -> np.ndarray:
    """Per-replica reductions over independent trees, in replica order.

    The reduction may return a scalar or a fixed-width row; the output is
    a ``(replicas,)`` or ``(replicas, width)`` array.  It is identical
    for any worker count because replica ``r`` always consumes the stream
    derived from ``(master_seed, r)`` and results are written back by
    replica index.
    """
    if model is None:
        model = KernelModel(branching)
    model.mu  # materialize before forking so workers share it
    payload = {
        "branching": branching,
        "model": model,
        "initial": initial,
        "depth": config.depth,
        "seed": config.master_seed,
        "evaluator": evaluator,
    }
    b = config.replicas
    workers = max(1, config.workers)
    if workers == 1:
        _init_worker(payload)
        return _chunk_worker((0, b))[1]
    chunk = max(1, math.ceil(b / (workers * 4)))
    ranges = [(s, min(s + chunk, b)) for s in range(0, b, chunk)]
    values: np.ndarray | None = None
    with ProcessPoolExecutor(
        max_workers=workers, initializer=_init_worker, initargs=(payload,)
    ) as pool:
        for start, vals in pool.map(_chunk_worker, ranges):
            if values is None:
                values = np.empty((b,) + vals.shape[1:])
            values[start : start + vals.shape[0]] = vals
    assert values is not None
    return values


def default_workers() -> int:
    env = os.environ.get("BIFURCMC_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return max(1, os.cpu_count() or 1)


# ---------------------------------------------------------------------------
# picklable evaluators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FunctionalEvaluator:
    """Evaluate the normalized additive functional on each sampled tree.

    ``scale`` multiplies the result; the critical-regime statistic uses
    ``scale = 1/sqrt(n)``.
    """

    fseq: FunctionSeq
    n: int
    scale: float = 1.0

    def __call__(self, sample: TreeSample) -> float:
        return self.scale * additive_functional(sample, self.fseq, self.n)


@dataclass(frozen=True)
class GenerationSumEvaluator:
    """Plain generation sum of a fixed function (no normalization)."""

    f: GridFunction
    k: int

    def __call__(self, sample: TreeSample) -> float:
        return generation_sum(sample, self.f, self.k)
