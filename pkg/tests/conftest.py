import numpy as np
import pytest

from decaff.network import Graph, laplacian, ring
from decaff.problem import ProblemInstance, random_instance


def psd_with_kernel(rng, n, rank=None):
    """Random PSD ``n x n`` matrix of rank ``rank`` (default: random in 1..n-1)."""
    if rank is None:
        rank = int(rng.integers(1, n))
    G = rng.standard_normal((n, rank))
    return G @ G.T


def kron_sum(P, Q):
    """Dense ``P kron I + I kron Q``; the independent oracle for the Kronecker-sum bounds."""
    return np.kron(P, np.eye(Q.shape[0])) + np.kron(np.eye(P.shape[0]), Q)


def positive_spectrum(M, rel=1e-9):
    ev = np.linalg.eigvalsh((M + M.T) / 2)
    return ev[ev > rel * ev[-1]]


def dense_AtA(inst):
    """``I kron B^T B + gamma^2 W^2 kron I`` assembled explicitly."""
    W = inst.mixing.W
    return (np.kron(np.eye(inst.m), inst.B.T @ inst.B)
            + inst.gamma**2 * np.kron(W @ W, np.eye(inst.d)))


def zero_data_instance(m=4, d=5, rank_B=2, theta=0.7, seed=3):
    """Random ``C`` and ``B`` but ``d_i = 0``: the optimum is ``x* = 0``."""
    inst = random_instance(m, d, rank_B, theta, seed, ring(m))
    return ProblemInstance(inst.C, np.zeros_like(inst.d_vec), theta, inst.B, inst.mixing)


def single_node(C, d_vec, theta, B):
    return ProblemInstance(np.atleast_2d(C)[None], np.atleast_1d(d_vec)[None], theta,
                           np.atleast_2d(B), laplacian(Graph(1, ())))


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def small_inst():
    return random_instance(4, 6, 2, 0.5, 11, ring(4))
