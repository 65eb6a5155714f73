"""Undirected communication graphs and their Laplacians.

Agents are numbered ``1..m`` in every external format (generator strings,
graph files, JSON) and ``0..m-1`` internally.  Every agent is treated as its
own neighbour, so ``N_i`` always contains ``i``.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "GraphError",
    "DisconnectedGraphError",
    "Graph",
    "LaplacianOperator",
    "SpectralConstants",
    "build_graph",
    "is_connected",
    "laplacian",
    "apply_laplacian",
    "spectral_constants",
    "read_graph_file",
    "write_graph_file",
]

ZERO_EIG_RTOL = 1e-9


class GraphError(ValueError):
    """Malformed graph description."""


class DisconnectedGraphError(GraphError):
    """Raised where a connected graph is required."""


@dataclass(frozen=True)
class Graph:
    """Simple undirected graph on ``m`` agents.

    ``edges`` holds 0-based pairs ``(i, j)`` with ``i < j``.
    """

    m: int
    edges: tuple[tuple[int, int], ...]
    neighbors: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.m < 1:
            raise GraphError(f"agent count must be positive, got {self.m}")
        seen = set()
        for i, j in self.edges:
            if not (0 <= i < self.m and 0 <= j < self.m):
                raise GraphError(f"edge ({i + 1},{j + 1}) out of range 1..{self.m}")
            if i == j:
                raise GraphError(f"self-loop at agent {i + 1}")
            if i > j:
                raise GraphError("edges must be stored with i < j")
            if (i, j) in seen:
                raise GraphError(f"duplicate edge ({i + 1},{j + 1})")
            seen.add((i, j))
        nbrs = [[] for _ in range(self.m)]
        for i, j in self.edges:
            nbrs[i].append(j)
            nbrs[j].append(i)
        object.__setattr__(self, "neighbors", tuple(tuple(sorted(n)) for n in nbrs))

    @classmethod
    def from_edges(cls, m: int, edges: Iterable[Sequence[int]]) -> "Graph":
        """Build from 1-based pairs; duplicates (in either orientation) are errors."""
        out = []
        for e in edges:
            if len(e) != 2:
                raise GraphError(f"malformed edge {e!r}")
            a, b = (int(v) for v in e)
            if a == b:
                raise GraphError(f"self-loop at agent {a}")
            out.append((min(a, b) - 1, max(a, b) - 1))
        return cls(int(m), tuple(out))

    def degree(self, i: int) -> int:
        return len(self.neighbors[i])

    def closed_neighborhood(self, i: int) -> tuple[int, ...]:
        """``N_i`` including ``i`` itself."""
        return tuple(sorted(self.neighbors[i] + (i,)))

    def directed_edges(self):
        for i, j in self.edges:
            yield (i, j)
            yield (j, i)

    def edges_1based(self) -> list[tuple[int, int]]:
        return [(i + 1, j + 1) for i, j in self.edges]


def _parse_int(tok: str, what: str) -> int:
    try:
        return int(tok)
    except ValueError:
        raise GraphError(f"bad {what} {tok!r}") from None


def build_graph(spec, m: int | None = None, require_connected: bool = False) -> Graph:
    """Build a graph from a generator string or an explicit edge list.

    Parameters
    ----------
    spec : str or sequence of pairs
        ``"path:m"``, ``"cycle:m"``, ``"complete:m"``, ``"star:m"`` (hub is
        agent 1), ``"erdos_renyi:m:p:seed"``, or a list of 1-based pairs.
    m : int, optional
        Agent count for an explicit edge list.  Defaults to the largest index.
    require_connected : bool
        Raise :class:`DisconnectedGraphError` instead of returning a
        disconnected graph.
    """
    if isinstance(spec, Graph):
        g = spec
    elif isinstance(spec, str):
        g = _from_generator(spec)
    else:
        try:
            pairs = [tuple(e) for e in spec]
        except TypeError:
            raise GraphError(f"cannot build a graph from {spec!r}") from None
        if m is None:
            if not pairs:
                raise GraphError("empty edge list needs an explicit m")
            m = max(max(int(v) for v in p) for p in pairs if len(p) == 2)
        if m < 2:
            raise GraphError(f"need at least 2 agents, got {m}")
        g = Graph.from_edges(m, pairs)
    if require_connected and not is_connected(g):
        raise DisconnectedGraphError("graph is not connected")
    return g


def _from_generator(spec: str) -> Graph:
    parts = spec.strip().split(":")
    kind = parts[0].lower()
    if kind in ("path", "cycle", "complete", "star"):
        if len(parts) != 2:
            raise GraphError(f"expected '{kind}:m', got {spec!r}")
        m = _parse_int(parts[1], "agent count")
        if m < 2:
            raise GraphError(f"need at least 2 agents, got {m}")
        if kind == "path":
            edges = [(i, i + 1) for i in range(m - 1)]
        elif kind == "cycle":
            edges = [(i, i + 1) for i in range(m - 1)]
            if m > 2:
                edges.append((0, m - 1))
        elif kind == "complete":
            edges = [(i, j) for i in range(m) for j in range(i + 1, m)]
        else:
            edges = [(0, j) for j in range(1, m)]
        return Graph(m, tuple(edges))
    if kind == "erdos_renyi":
        if len(parts) != 4:
            raise GraphError(f"expected 'erdos_renyi:m:p:seed', got {spec!r}")
        m = _parse_int(parts[1], "agent count")
        if m < 2:
            raise GraphError(f"need at least 2 agents, got {m}")
        try:
            p = float(parts[2])
        except ValueError:
            raise GraphError(f"bad edge probability {parts[2]!r}") from None
        if not 0.0 <= p <= 1.0:
            raise GraphError(f"edge probability must lie in [0,1], got {p}")
        rng = np.random.default_rng(_parse_int(parts[3], "seed"))
        iu, ju = np.triu_indices(m, k=1)
        keep = rng.random(iu.size) < p
        return Graph(m, tuple(zip(iu[keep].tolist(), ju[keep].tolist())))
    raise GraphError(f"unknown graph generator {kind!r}")


def read_graph_file(path) -> Graph:
    """Read ``m`` on the first line, then one 1-based ``i j`` edge per line."""
    lines = [ln.split("#", 1)[0].strip() for ln in Path(path).read_text().splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise GraphError(f"{path}: empty graph file")
    m = _parse_int(lines[0], "agent count")
    if m < 2:
        raise GraphError(f"need at least 2 agents, got {m}")
    pairs = []
    for ln in lines[1:]:
        toks = ln.split()
        if len(toks) != 2:
            raise GraphError(f"{path}: malformed edge line {ln!r}")
        pairs.append((_parse_int(toks[0], "agent"), _parse_int(toks[1], "agent")))
    return Graph.from_edges(m, pairs)


def write_graph_file(g: Graph, path) -> None:
    body = [str(g.m)] + [f"{i} {j}" for i, j in g.edges_1based()]
    Path(path).write_text("\n".join(body) + "\n")


def is_connected(g: Graph) -> bool:
    """Breadth-first search from agent 0."""
    seen = {0}
    queue = deque([0])
    while queue:
        i = queue.popleft()
        for j in g.neighbors[i]:
            if j not in seen:
                seen.add(j)
                queue.append(j)
    return len(seen) == g.m


@dataclass(frozen=True)
class LaplacianOperator:
    """Sparse rows of ``L = D - A`` acting block-wise on stacked ``(m, d)`` arrays."""

    graph: Graph
    d: int

    @property
    def m(self) -> int:
        return self.graph.m

    def row(self, i: int) -> dict[int, float]:
        """Nonzero entries ``{j: L_ij}`` of row ``i`` (0-based)."""
        r = {j: -1.0 for j in self.graph.neighbors[i]}
        r[i] = float(self.graph.degree(i))
        return dict(sorted(r.items()))

    @property
    def rows(self) -> list[dict[int, float]]:
        return [self.row(i) for i in range(self.m)]

    def dense(self) -> np.ndarray:
        """The ``m x m`` matrix ``L`` (not the Kronecker product)."""
        L = np.zeros((self.m, self.m))
        for i in range(self.m):
            for j, v in self.row(i).items():
                L[i, j] = v
        return L

    def apply(self, x) -> np.ndarray:
        return apply_laplacian(self, x)


def laplacian(g: Graph, d: int = 1) -> LaplacianOperator:
    if d < 1:
        raise ValueError(f"block dimension must be positive, got {d}")
    return LaplacianOperator(g, int(d))


def apply_laplacian(L: LaplacianOperator, x) -> np.ndarray:
    """Compute ``(L kron I_d) x`` neighbour by neighbour.

    ``x`` may be an ``(m, d)`` array or a flat vector of length ``m*d``; the
    result has the same shape as the input.
    """
    x = np.asarray(x, dtype=float)
    flat = x.ndim == 1
    if x.size != L.m * L.d:
        raise ValueError(f"expected {L.m * L.d} entries, got {x.size}")
    X = x.reshape(L.m, L.d)
    out = np.empty_like(X)
    g = L.graph
    for i in range(L.m):
        acc = g.degree(i) * X[i]
        for j in g.neighbors[i]:
            acc = acc - X[j]
        out[i] = acc
    return out.reshape(-1) if flat else out


@dataclass(frozen=True)
class SpectralConstants:
    op_norm: float
    min_nonzero_singular: float
    eigenvalues: tuple[float, ...]


def spectral_constants(L: LaplacianOperator) -> SpectralConstants:
    """Largest and smallest nonzero eigenvalue of ``L``.

    Eigenvalues below ``1e-9 * lambda_max`` count as zero; a connected graph
    has exactly one of them.
    """
    if L.m < 2:
        raise DisconnectedGraphError("a single agent has no nonzero Laplacian eigenvalue")
    ev = np.linalg.eigvalsh(L.dense())
    lam_max = float(ev[-1])
    if lam_max <= 0.0:
        raise DisconnectedGraphError(f"graph has no edges: zero eigenvalue multiplicity {L.m}")
    zero = ev <= ZERO_EIG_RTOL * lam_max
    mult = int(zero.sum())
    if mult != 1:
        raise DisconnectedGraphError(
            f"graph is disconnected: zero eigenvalue multiplicity {mult}"
        )
    return SpectralConstants(lam_max, float(ev[~zero][0]), tuple(float(v) for v in ev))
