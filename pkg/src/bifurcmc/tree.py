"""Addressing and enumeration of the full regular binary tree.

A vertex is identified by its generation ``g`` and a path integer whose
``g`` low bits record the left/right choices from the root, most
significant bit first.  Vertices are stored in heap order: node
``(g, path)`` lives at flat index ``2**g - 1 + path``, so every
generation occupies one contiguous block and the subtree below any node
stays contiguous inside each deeper generation.
"""

from __future__ import annotations

from dataclasses import dataclass

MAX_DEPTH = 63  # path held in a 64-bit integer; deeper trees are refused


class DepthLimitError(ValueError):
    """Raised when an operation would exceed the supported tree depth."""


@dataclass(frozen=True, order=False)
class NodeId:
    """Address of one vertex: generation plus path bits."""

    generation: int
    path: int = 0

    def __post_init__(self) -> None:
        if self.generation < 0:
            raise ValueError(f"negative generation {self.generation}")
        if self.generation > MAX_DEPTH:
            raise DepthLimitError(
                f"generation {self.generation} exceeds max depth {MAX_DEPTH}"
            )
        if not 0 <= self.path < (1 << self.generation):
            raise ValueError(
                f"path {self.path} out of range for generation {self.generation}"
            )


ROOT = NodeId(0, 0)


def children(u: NodeId) -> tuple[NodeId, NodeId]:
    """Return the two children ``u0`` and ``u1`` of ``u``."""
    if u.generation >= MAX_DEPTH:
        raise DepthLimitError(f"children of {u} exceed max depth {MAX_DEPTH}")
    g = u.generation + 1
    return NodeId(g, u.path << 1), NodeId(g, (u.path << 1) | 1)


def parent(u: NodeId) -> NodeId | None:
    """Return the parent of ``u``, or None for the root."""
    if u.generation == 0:
        return None
    return NodeId(u.generation - 1, u.path >> 1)


def is_ancestor(u: NodeId, v: NodeId) -> bool:
    """True iff ``u`` lies on the path from the root to ``v`` (or equals it)."""
    d = v.generation - u.generation
    return d >= 0 and (v.path >> d) == u.path


def common_ancestor(u: NodeId, v: NodeId) -> NodeId:
    """Deepest node that is an ancestor of both ``u`` and ``v``."""
    pu, pv = u.path, v.path
    gu, gv = u.generation, v.generation
    # bring both to the same generation
    if gu > gv:
        pu >>= gu - gv
        gu = gv
    elif gv > gu:
        pv >>= gv - gu
        gv = gu
    # strip differing low bits
    while pu != pv:
        pu >>= 1
        pv >>= 1
        gu -= 1
    return NodeId(gu, pu)


def lex_leq(u: NodeId, v: NodeId) -> bool:
    """Lexicographic order: ancestors first, then left subtree before right."""
    if is_ancestor(u, v):
        return True
    if is_ancestor(v, u):
        return False
    w = common_ancestor(u, v)
    # first differing bit below w decides
    bit_u = (u.path >> (u.generation - w.generation - 1)) & 1
    return bit_u == 0


def flat_index(u: NodeId) -> int:
    """Heap layout index: ``2**g - 1 + path``."""
    return (1 << u.generation) - 1 + u.path


def node_from_flat(i: int) -> NodeId:
    """Inverse of :func:`flat_index`."""
    if i < 0:
        raise ValueError(f"negative flat index {i}")
    g = (i + 1).bit_length() - 1
    return NodeId(g, i - ((1 << g) - 1))


def generation_size(k: int) -> int:
    """Number of vertices at depth ``k``."""
    return 1 << k


def tree_size(n: int) -> int:
    """Number of vertices up to depth ``n``: ``2**(n+1) - 1``."""
    if n > MAX_DEPTH:
        raise DepthLimitError(f"depth {n} exceeds max depth {MAX_DEPTH}")
    return (1 << (n + 1)) - 1


def generation_slice(k: int) -> slice:
    """Flat-array slice holding generation ``k``."""
    start = (1 << k) - 1
    return slice(start, start + (1 << k))


def subtree_slice(u: NodeId, k: int) -> slice:
    """Flat-array slice of generation ``k`` restricted to the subtree of ``u``.

    Requires ``k >= u.generation``; the block is contiguous because the
    heap layout orders each generation by path.
    """
    d = k - u.generation
    if d < 0:
        raise ValueError(f"generation {k} is above node {u}")
    start = (1 << k) - 1 + (u.path << d)
    return slice(start, start + (1 << d))


def generation_nodes(k: int) -> list[NodeId]:
    """All vertices of generation ``k`` in path order."""
    return [NodeId(k, p) for p in range(1 << k)]
