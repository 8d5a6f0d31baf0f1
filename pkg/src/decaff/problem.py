"""Decentralized quadratic problems with a shared affine constraint ``B x = 0``.

Node ``i`` holds ``f_i(x) = 1/2 |C_i x - d_i|^2 + theta/2 |x|^2``.  The stacked
problem over block vectors ``x`` of shape ``(m, d)`` is

    min F(x) = sum_i f_i(x_i)   s.t.   (I kron B) x = 0,  (W kron I) x = 0,

and ``A = [I kron B; gamma (W kron I)]`` collects both constraint families.
Block vectors are plain ``ndarray`` of shape ``(m, k)``; dual vectors of ``A``
are ``(m, p + d)`` arrays holding ``[u_i, v_i]`` on row ``i``.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .context import RunContext
from .network import Graph, MixingMatrix, apply_gossip, laplacian
from .rng import make_generator
from .spectral import (
    AllZeroSpectrum,
    DimensionMismatch,
    SpectralBounds,
    TrivialKernel,
    kronecker_sum_bounds,
    nullspace_basis,
    spectral_bounds,
)

INSTANCE_STREAM = 1


class BadRank(ValueError):
    pass


@dataclass(frozen=True)
class QuadraticLocalObjective:
    """``f(x) = 1/2 |C x - d_vec|^2 + theta/2 |x|^2``."""

    C: np.ndarray
    d_vec: np.ndarray
    theta: float

    def value(self, x):
        r = self.C @ x - self.d_vec
        return 0.5 * r @ r + 0.5 * self.theta * x @ x

    def grad(self, x):
        return self.C.T @ (self.C @ x - self.d_vec) + self.theta * x

    @property
    def hessian(self) -> np.ndarray:
        return self.C.T @ self.C + self.theta * np.eye(self.C.shape[1])


def _check_blocks(x: np.ndarray, m: int, k: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (m, k):
        raise DimensionMismatch(f"expected block vector of shape {(m, k)}, got {x.shape}")
    return x


class ProblemInstance:
    """Problem data, constants and cached per-node factorizations.

    Parameters
    ----------
    C : array_like, shape (m, r, d)
    d_vec : array_like, shape (m, r)
    theta : float
        Ridge weight, must be positive.
    B : array_like, shape (p, d)
        Shared constraint matrix with a nontrivial kernel.
    mixing : MixingMatrix
    gamma : float, optional
        Weight of the consensus block of ``A``.  Defaults to the value that
        minimises the condition number of ``A^T A``.
    seed : int, optional
        Recorded for provenance only.
    """

    def __init__(self, C, d_vec, theta: float, B, mixing: MixingMatrix,
                 gamma: float | None = None, seed: int | None = None):
        C = np.asarray(C, dtype=float)
        if C.ndim == 2:
            C = C[None]
        self.C = C
        self.d_vec = np.asarray(d_vec, dtype=float).reshape(C.shape[0], C.shape[1])
        self.theta = float(theta)
        if self.theta <= 0:
            raise ValueError("theta must be positive")
        self.B = np.atleast_2d(np.asarray(B, dtype=float))
        self.mixing = mixing
        self.seed = seed
        self.m, _, self.d = C.shape
        self.p = self.B.shape[0]
        if self.B.shape[1] != self.d:
            raise DimensionMismatch(f"B has {self.B.shape[1]} columns, objectives have d={self.d}")
        if mixing.m != self.m:
            raise DimensionMismatch(f"{self.m} objectives but {mixing.m} nodes")

        self.H = np.einsum("mri,mrj->mij", C, C) + self.theta * np.eye(self.d)
        self.Ctd = np.einsum("mri,mr->mi", C, self.d_vec)
        self._chol = [cho_factor(h) for h in self.H]
        eig = np.linalg.eigvalsh(self.H)
        self.mu = float(eig[:, 0].min())
        self.L = float(eig[:, -1].max())

        BtB = self.B.T @ self.B
        try:
            self.BtB_bounds: SpectralBounds | None = spectral_bounds(BtB)
        except AllZeroSpectrum:
            self.BtB_bounds = None
        if self.BtB_bounds is not None and self.BtB_bounds.rank == self.d:
            raise TrivialKernel("B has full column rank")
        self.BtB = BtB
        self.gamma = float(gamma) if gamma is not None else optimal_gamma(self)
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")

    @property
    def W_bounds(self) -> SpectralBounds | None:
        return self.mixing.bounds

    @property
    def objectives(self) -> list[QuadraticLocalObjective]:
        return [QuadraticLocalObjective(c, dv, self.theta) for c, dv in zip(self.C, self.d_vec)]

    @cached_property
    def constraint(self) -> "ConstraintOperator":
        return ConstraintOperator(self.B, self.gamma, self.mixing)

    def with_gamma(self, gamma: float) -> "ProblemInstance":
        return ProblemInstance(self.C, self.d_vec, self.theta, self.B, self.mixing, gamma, self.seed)

    # unmetered evaluations used for metrics
    def F(self, x) -> float:
        x = _check_blocks(x, self.m, self.d)
        r = np.einsum("mrd,md->mr", self.C, x) - self.d_vec
        return float(0.5 * np.sum(r * r) + 0.5 * self.theta * np.sum(x * x))

    def violations(self, x) -> tuple[float, float, float]:
        """``(|A x|, |B x|, |W x|)`` for a block vector ``x``."""
        b = float(np.linalg.norm(x @ self.B.T))
        w = float(np.linalg.norm(self.mixing.matvec(x)))
        return math.hypot(b, self.gamma * w), b, w

    @cached_property
    def reduced(self) -> "ReducedInstance":
        return reduce(self)

    @cached_property
    def solution(self) -> tuple[np.ndarray, float]:
        return exact_solution(self)

    # serialization
    def to_json(self) -> dict:
        obj = {
            "m": self.m,
            "d": self.d,
            "p": self.p,
            "theta": self.theta,
            "seed": self.seed,
            "C": [encode_array(c) for c in self.C],
            "d_vec": [encode_array(v) for v in self.d_vec],
            "B": encode_array(self.B),
            "graph": self.mixing.graph.to_json(),
            "gamma": self.gamma,
        }
        if not np.array_equal(self.mixing.W, laplacian(self.mixing.graph).W):
            obj["W"] = encode_array(self.mixing.W)
        return obj

    def save(self, path, extra: dict | None = None) -> None:
        obj = self.to_json()
        if extra:
            obj.update(extra)
        Path(path).write_text(json.dumps(obj, indent=1))

    @classmethod
    def from_json(cls, obj: dict) -> "ProblemInstance":
        graph = Graph.from_json(obj["graph"])
        mixing = laplacian(graph)
        if "W" in obj:
            W = decode_array(obj["W"])
            mixing = MixingMatrix(W, graph, spectral_bounds(W))
        return cls(
            np.stack([decode_array(c) for c in obj["C"]]),
            np.stack([decode_array(v) for v in obj["d_vec"]]),
            obj["theta"],
            decode_array(obj["B"]),
            mixing,
            obj.get("gamma"),
            obj.get("seed"),
        )

    @classmethod
    def load(cls, path) -> "ProblemInstance":
        return cls.from_json(json.loads(Path(path).read_text()))


def encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def decode_array(obj: dict) -> np.ndarray:
    raw = base64.b64decode(obj["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(obj["shape"]).astype(float)


class ConstraintOperator:
    """``A = [I kron B; gamma (W kron I)]`` applied blockwise.

    Every application charges one communication round (the ``W`` block) and one
    local multiplication by ``B`` or ``B^T`` to the run context.
    """

    def __init__(self, B: np.ndarray, gamma: float, mixing: MixingMatrix):
        self.B = B
        self.gamma = gamma
        self.mixing = mixing
        self.p, self.d = B.shape

    @property
    def dual_dim(self) -> int:
        """Width of a dual block ``[u_i, v_i]``."""
        return self.p + self.d

    def apply_A(self, x, ctx: RunContext | None = None) -> np.ndarray:
        if ctx is not None:
            ctx.b_mults += 1
        return np.hstack([x @ self.B.T, self.gamma * apply_gossip(self.mixing, x, ctx)])

    def apply_At(self, y, ctx: RunContext | None = None) -> np.ndarray:
        if ctx is not None:
            ctx.b_mults += 1
        u, v = y[:, : self.p], y[:, self.p:]
        return u @ self.B + self.gamma * apply_gossip(self.mixing, v, ctx)

    def apply_AtA(self, x, ctx: RunContext | None = None) -> np.ndarray:
        """``(I kron B^T B + gamma^2 W^2 kron I) x``: two rounds, one B^T B product."""
        if ctx is not None:
            ctx.b_mults += 1
        Wx = apply_gossip(self.mixing, x, ctx)
        return x @ (self.B.T @ self.B) + self.gamma**2 * apply_gossip(self.mixing, Wx, ctx)

    @cached_property
    def bounds(self) -> SpectralBounds:
        """Bounds of ``A^T A`` from the spectra of ``B^T B`` and ``gamma^2 W^2``."""
        W = self.mixing.W
        return kronecker_sum_bounds(self.gamma**2 * (W @ W), self.B.T @ self.B)

    def dense(self) -> np.ndarray:
        """Explicit ``A`` acting on ``x.ravel()``; rows ordered like ``y.ravel()``.

        For tests and small-size diagnostics only.
        """
        m = self.mixing.m
        blocks = []
        for i in range(m):
            row_b = np.zeros((self.p, m * self.d))
            row_b[:, i * self.d:(i + 1) * self.d] = self.B
            row_w = self.gamma * np.kron(self.mixing.W[i], np.eye(self.d))
            blocks += [row_b, row_w]
        return np.vstack(blocks)


def optimal_gamma(inst: ProblemInstance) -> float:
    """``gamma = sqrt(lambda+_min(B^T B)) / lambda+_min(W)``.

    This balances the two constraint blocks so that
    ``chi(A^T A) = chi(B^T B) + chi(W)^2``.  Falls back to 1 when either block
    is identically zero.
    """
    if inst.BtB_bounds is None or inst.W_bounds is None:
        return 1.0
    return math.sqrt(inst.BtB_bounds.lambda_min_plus) / inst.W_bounds.lambda_min_plus


def grad_F(inst: ProblemInstance, x, ctx: RunContext | None = None) -> np.ndarray:
    """Stacked gradient ``col(grad f_1(x_1), ..., grad f_m(x_m))``."""
    x = _check_blocks(x, inst.m, inst.d)
    if ctx is not None:
        ctx.gradient_calls += 1
    r = np.einsum("mrd,md->mr", inst.C, x) - inst.d_vec
    return np.einsum("mrd,mr->md", inst.C, r) + inst.theta * x


def dual_argmin(inst: ProblemInstance, q, ctx: RunContext | None = None) -> np.ndarray:
    """``argmax_x <q, x> - F(x)``, i.e. the gradient of the conjugate ``F*`` at ``q``.

    Node ``i`` back-substitutes ``(C_i^T C_i + theta I) x_i = C_i^T d_i + q_i``
    against its cached Cholesky factor.
    """
    q = _check_blocks(q, inst.m, inst.d)
    if ctx is not None:
        ctx.dual_calls += 1
    rhs = inst.Ctd + q
    return np.stack([cho_solve(c, r) for c, r in zip(inst._chol, rhs)])


def dual_value(inst: ProblemInstance, y) -> float:
    """``Phi(y) = max_x <y, A x> - F(x) = F*(A^T y)``."""
    p = inst.constraint.apply_At(y)
    x = dual_argmin(inst, p)
    return float(np.sum(p * x) - inst.F(x))


def dual_gradient(inst: ProblemInstance, y) -> np.ndarray:
    """``grad Phi(y) = A x(A^T y)``."""
    op = inst.constraint
    return op.apply_A(dual_argmin(inst, op.apply_At(y)))


def random_instance(m: int, d: int, rank_B: int, theta: float, seed: int,
                    graph: Graph, recipe: str = "uniform",
                    gamma: float | None = None) -> ProblemInstance:
    """Random quadratic instance with ``B`` of prescribed rank.

    All draws come from stream ``INSTANCE_STREAM`` of ``seed``, in this order.

    ``recipe="uniform"`` (default): ``C`` (m, d, d) and ``d_vec`` (m, d) with
    entries uniform on [0, 1), then ``G1`` (d, rank_B) and ``G2`` (rank_B, d)
    uniform on [0, 1); ``B = G1 @ G2``.

    ``recipe="gaussian"``: ``C`` and ``d_vec`` standard normal, then Gaussian
    ``d x d`` matrices for ``U`` and ``V`` (orthogonalised by sign-fixed QR) and
    ``rank_B`` singular values uniform on [1, 2];
    ``B = U diag(s, 0, ..., 0) V^T``.
    """
    if not 1 <= rank_B < d:
        raise BadRank(f"need 1 <= rank_B < d, got rank_B={rank_B}, d={d}")
    if graph.m != m:
        raise DimensionMismatch(f"graph has {graph.m} nodes, expected {m}")
    rng = make_generator(seed, INSTANCE_STREAM)
    if recipe == "uniform":
        C = rng.random((m, d, d))
        d_vec = rng.random((m, d))
        B = rng.random((d, rank_B)) @ rng.random((rank_B, d))
    elif recipe == "gaussian":
        C = rng.standard_normal((m, d, d))
        d_vec = rng.standard_normal((m, d))
        U = _orthogonal(rng.standard_normal((d, d)))
        V = _orthogonal(rng.standard_normal((d, d)))
        s = rng.uniform(1.0, 2.0, size=rank_B)
        B = (U[:, :rank_B] * s) @ V[:, :rank_B].T
    else:
        raise ValueError(f"unknown recipe {recipe!r}")
    return ProblemInstance(C, d_vec, theta, B, laplacian(graph), gamma=gamma, seed=seed)


def _orthogonal(G: np.ndarray) -> np.ndarray:
    Q, R = np.linalg.qr(G)
    return Q * np.where(np.diag(R) < 0, -1.0, 1.0)


class ReducedInstance:
    """The problem in null-space coordinates ``x = E t``.

    Node ``i`` holds ``h_i(t) = f_i(E t)`` with Hessian ``G_i = E^T H_i E``.
    """

    def __init__(self, inst: ProblemInstance, E: np.ndarray):
        self.inst = inst
        self.E = E
        self.d_t = E.shape[1]
        self.G = np.einsum("di,mde,ej->mij", E, inst.H, E)
        self.c_t = inst.Ctd @ E
        self._chol = [cho_factor(g) for g in self.G]
        eig = np.linalg.eigvalsh(self.G)
        self.mu_t = float(eig[:, 0].min())
        self.L_t = float(eig[:, -1].max())

    @property
    def mixing(self) -> MixingMatrix:
        return self.inst.mixing

    def dual_argmin(self, q, ctx: RunContext | None = None) -> np.ndarray:
        """``argmax_t <q, t> - H(t)``, solved per node against ``G_i``."""
        q = _check_blocks(q, self.inst.m, self.d_t)
        if ctx is not None:
            ctx.dual_calls += 1
        rhs = self.c_t + q
        return np.stack([cho_solve(c, r) for c, r in zip(self._chol, rhs)])

    def lift(self, t) -> np.ndarray:
        return t @ self.E.T


def reduce(inst: ProblemInstance) -> ReducedInstance:
    """Eliminate ``B x = 0`` with an orthonormal null-space basis of ``B``."""
    red = ReducedInstance(inst, nullspace_basis(inst.B))
    tol = 1e-9 * max(1.0, inst.L)
    if red.mu_t < inst.mu - tol or red.L_t > inst.L + tol:
        raise AssertionError(
            f"reduced constants out of order: mu={inst.mu}, mu_t={red.mu_t}, "
            f"L_t={red.L_t}, L={inst.L}"
        )
    return red


def exact_solution(inst: ProblemInstance) -> tuple[np.ndarray, float]:
    """Exact minimiser ``x*`` of ``sum_i f_i(x)`` on ``ker B`` and ``F* = sum_i f_i(x*)``.

    The stacked optimum is ``x*`` repeated on every node.
    """
    red = inst.reduced
    t = np.linalg.solve(red.G.sum(axis=0), red.c_t.sum(axis=0))
    x = red.E @ t
    F_star = inst.F(np.tile(x, (inst.m, 1)))
    return x, F_star
