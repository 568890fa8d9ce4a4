"""Communication topology among the sources."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import connected_components

__all__ = ["CommGraph", "GraphConfigError"]


class GraphConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CommGraph:
    """Undirected communication graph with per-link transport delay.

    ``delay_s`` may be a scalar (same delay on every link) or an ``(n, n)``
    matrix; entry ``[i, j]`` is the age of node ``j``'s data when used by
    node ``i``. ``broadcast_delay_s`` is the age of the bus-voltage
    measurement received by every source.
    """

    adjacency: np.ndarray
    delay_s: float | np.ndarray = 0.0
    broadcast_delay_s: float = 0.0
    n_s: int = field(init=False)

    def __post_init__(self):
        A = np.asarray(self.adjacency)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise GraphConfigError("adjacency must be square")
        A = A.astype(bool)
        if not np.array_equal(A, A.T):
            raise GraphConfigError("adjacency must be symmetric")
        if np.any(np.diag(A)):
            raise GraphConfigError("self-loops are not allowed")
        n = A.shape[0]
        D = np.asarray(self.delay_s, dtype=float)
        if D.ndim == 0:
            D = np.where(A, float(D), 0.0)
        if D.shape != (n, n):
            raise GraphConfigError("delay matrix must be (n, n)")
        if np.any(D < 0) or not np.all(np.isfinite(D)) or self.broadcast_delay_s < 0:
            raise GraphConfigError("delays must be finite and non-negative")
        A.setflags(write=False)
        D = np.where(A, D, 0.0)
        D.setflags(write=False)
        object.__setattr__(self, "adjacency", A)
        object.__setattr__(self, "delay_s", D)
        object.__setattr__(self, "broadcast_delay_s", float(self.broadcast_delay_s))
        object.__setattr__(self, "n_s", n)
        if n > 1:
            ncomp, _ = connected_components(A.astype(np.int8), directed=False)
            if ncomp != 1:
                raise GraphConfigError("communication graph must be connected")

    @property
    def laplacian(self) -> np.ndarray:
        A = self.adjacency.astype(float)
        return np.diag(A.sum(axis=1)) - A

    def neighbors(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.adjacency[i])

    def edges(self) -> list[tuple[int, int]]:
        i, j = np.nonzero(np.triu(self.adjacency))
        return list(zip(i.tolist(), j.tolist()))

    def with_delay(self, link_s: float, broadcast_s: float | None = None) -> "CommGraph":
        return CommGraph(self.adjacency, link_s,
                         self.broadcast_delay_s if broadcast_s is None else broadcast_s)

    @classmethod
    def from_edges(cls, n: int, edges, delay_s=0.0, broadcast_delay_s=0.0) -> "CommGraph":
        A = np.zeros((n, n), dtype=bool)
        for i, j in edges:
            if not (0 <= i < n and 0 <= j < n):
                raise GraphConfigError(f"edge ({i}, {j}) out of range for n={n}")
            A[i, j] = A[j, i] = True
        return cls(A, delay_s, broadcast_delay_s)

    @classmethod
    def path(cls, n: int, **kw) -> "CommGraph":
        return cls.from_edges(n, [(i, i + 1) for i in range(n - 1)], **kw)

    @classmethod
    def ring(cls, n: int, **kw) -> "CommGraph":
        if n < 3:
            return cls.path(n, **kw)
        return cls.from_edges(n, [(i, (i + 1) % n) for i in range(n)], **kw)

    @classmethod
    def complete(cls, n: int, **kw) -> "CommGraph":
        return cls.from_edges(n, [(i, j) for i in range(n) for j in range(i + 1, n)], **kw)

    @classmethod
    def random_connected(cls, n: int, rng: np.random.Generator, p: float = 0.4, **kw) -> "CommGraph":
        """Random spanning tree plus Erdos-Renyi extra edges."""
        order = rng.permutation(n)
        edges = {tuple(sorted((int(order[k]), int(order[rng.integers(0, k)])))) for k in range(1, n)}
        for i in range(n):
            for j in range(i + 1, n):
                if rng.random() < p:
                    edges.add((i, j))
        return cls.from_edges(n, sorted(edges), **kw)
