"""Communication graphs and Laplacian mixing matrices."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .context import RunContext
from .rng import bernoulli_threshold, make_bit_generator
from .spectral import (
    AllZeroSpectrum,
    DimensionMismatch,
    SpectralBounds,
    spectral_bounds,
)

ER_MAX_RETRIES = 1000


class GraphError(ValueError):
    pass


class TooSmall(GraphError):
    pass


class Disconnected(GraphError):
    pass


class RetriesExhausted(GraphError):
    pass


def _adjacency(m: int, edges) -> sp.csr_matrix:
    if not edges:
        return sp.csr_matrix((m, m))
    i, j = np.array(edges).T
    data = np.ones(2 * len(edges))
    return sp.csr_matrix((data, (np.r_[i, j], np.r_[j, i])), shape=(m, m))


def is_connected(m: int, edges) -> bool:
    if m <= 1:
        return True
    n_comp, _ = connected_components(_adjacency(m, edges), directed=False)
    return n_comp == 1


@dataclass(frozen=True)
class Graph:
    """Undirected connected graph on nodes ``0..m-1``.

    Edges are stored as sorted pairs ``(i, j)`` with ``i < j``.
    """

    m: int
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if self.m < 1:
            raise GraphError("graph needs at least one node")
        canon = set()
        for e in self.edges:
            i, j = (int(e[0]), int(e[1]))
            if i == j:
                raise GraphError(f"self-loop at node {i}")
            if not (0 <= i < self.m and 0 <= j < self.m):
                raise GraphError(f"edge {e} out of range for m={self.m}")
            pair = (min(i, j), max(i, j))
            if pair in canon:
                raise GraphError(f"duplicate edge {pair}")
            canon.add(pair)
        object.__setattr__(self, "edges", tuple(sorted(canon)))
        if not is_connected(self.m, self.edges):
            raise Disconnected("graph is not connected")

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.m, dtype=int)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def to_json(self) -> dict:
        return {"m": self.m, "edges": [list(e) for e in self.edges]}

    @classmethod
    def from_json(cls, obj: dict) -> "Graph":
        return cls(int(obj["m"]), tuple(tuple(e) for e in obj["edges"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> "Graph":
        return cls.from_json(json.loads(Path(path).read_text()))


def ring(m: int) -> Graph:
    if m < 3:
        raise TooSmall(f"a ring needs at least 3 nodes, got {m}")
    return Graph(m, tuple((i, (i + 1) % m) for i in range(m)))


def path(m: int) -> Graph:
    return Graph(m, tuple((i, i + 1) for i in range(m - 1)))


def complete(m: int) -> Graph:
    return Graph(m, tuple((i, j) for i in range(m) for j in range(i + 1, m)))


def erdos_renyi_connected(m: int, p: float, seed: int) -> Graph:
    """Connected G(m, p) sample by rejection.

    Pairs ``i < j`` are visited in lexicographic order and kept when a raw
    64-bit draw falls below ``floor(p * 2**64)``.  A disconnected sample is
    thrown away and redrawn from seed ``seed + retry``.
    """
    if not 0.0 < p <= 1.0:
        raise ValueError(f"edge probability must lie in (0, 1], got {p}")
    threshold = bernoulli_threshold(p)
    pairs = [(i, j) for i in range(m) for j in range(i + 1, m)]
    for retry in range(ER_MAX_RETRIES + 1):
        bg = make_bit_generator(seed + retry)
        edges = tuple(e for e in pairs if int(bg.random_raw()) < threshold)
        if is_connected(m, edges):
            return Graph(m, edges)
    raise RetriesExhausted(f"no connected sample after {ER_MAX_RETRIES} retries")


@dataclass(frozen=True, eq=False)
class MixingMatrix:
    """Mixing matrix ``W`` of a graph together with its spectral bounds.

    ``bounds`` is ``None`` only for the single-node graph, where ``W = 0``.
    """

    W: np.ndarray
    graph: Graph
    bounds: SpectralBounds | None
    _sparse: sp.csr_matrix = field(repr=False, default=None)

    def __post_init__(self):
        W = np.array(self.W, dtype=float)
        W.setflags(write=False)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "_sparse", sp.csr_matrix(W))

    @property
    def m(self) -> int:
        return self.W.shape[0]

    @property
    def chi(self) -> float:
        return self.bounds.chi if self.bounds is not None else 1.0

    def matvec(self, x: np.ndarray) -> np.ndarray:
        """``(W kron I) x`` for a block vector ``x`` of shape ``(m, k)``; no metering."""
        return self._sparse @ x


def laplacian(g: Graph) -> MixingMatrix:
    """Graph Laplacian: degree on the diagonal, -1 on edges."""
    W = np.zeros((g.m, g.m))
    for i, j in g.edges:
        W[i, j] = W[j, i] = -1.0
    W[np.diag_indices(g.m)] = g.degrees()
    try:
        bounds = spectral_bounds(W)
    except AllZeroSpectrum:
        bounds = None
    mix = MixingMatrix(W, g, bounds)
    report = validate_mixing(W, g)
    if not report.ok:
        raise GraphError(f"Laplacian failed validation: {report.failed}")
    return mix


@dataclass
class ValidationReport:
    checks: dict[str, bool]
    messages: dict[str, str]

    @property
    def ok(self) -> bool:
        return all(self.checks.values())

    @property
    def failed(self) -> list[str]:
        return [k for k, v in self.checks.items() if not v]


def validate_mixing(W: np.ndarray, g: Graph, zero_tol_rel: float = 1e-9) -> ValidationReport:
    """Check the mixing-matrix assumptions clause by clause.

    Clauses: ``symmetric``, ``psd``, ``sparsity`` (zero off the edge set) and
    ``kernel`` (``ker W = span{1}``).
    """
    W = np.asarray(W, dtype=float)
    checks, msgs = {}, {}
    if W.shape != (g.m, g.m):
        raise DimensionMismatch(f"W has shape {W.shape}, graph has {g.m} nodes")
    scale = max(np.abs(W).max(initial=0.0), 1.0)

    asym = np.abs(W - W.T).max(initial=0.0)
    checks["symmetric"] = asym <= 1e-12 * scale
    msgs["symmetric"] = f"max |W - W^T| = {asym:.3e}"

    eig = np.linalg.eigvalsh((W + W.T) / 2)
    checks["psd"] = bool(eig[0] >= -1e-10 * scale)
    msgs["psd"] = f"lambda_min = {eig[0]:.3e}"

    allowed = np.eye(g.m, dtype=bool)
    for i, j in g.edges:
        allowed[i, j] = allowed[j, i] = True
    leak = np.abs(W[~allowed]).max(initial=0.0)
    checks["sparsity"] = leak == 0.0
    msgs["sparsity"] = f"max |W_ij| off the edge set = {leak:.3e}"

    ones = np.ones(g.m)
    resid = np.abs(W @ ones).max()
    top = max(abs(eig[-1]), 1e-300)
    rank = int(np.sum(np.abs(eig) > zero_tol_rel * top)) if eig[-1] > 0 else 0
    checks["kernel"] = bool(resid <= 1e-12 * scale and rank == g.m - 1)
    msgs["kernel"] = f"|W 1|_inf = {resid:.3e}, rank = {rank} (need {g.m - 1})"
    return ValidationReport(checks, msgs)


def apply_gossip(W: MixingMatrix, x: np.ndarray, ctx: RunContext | None = None) -> np.ndarray:
    """One communication round: ``y_i = sum_j W_ij x_j`` over neighbours and self.

    ``x`` is a block vector of shape ``(m, k)``.  Charges one round to ``ctx``.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[0] != W.m:
        raise DimensionMismatch(f"block vector has {x.shape[0]} blocks, W has {W.m} nodes")
    if ctx is not None:
        ctx.comm_rounds += 1
    return W.matvec(x)
