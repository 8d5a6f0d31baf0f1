"""Iterative solvers for the stacked affinely constrained problem.

* :func:`apdg_run` -- accelerated primal-dual gradient method on the saddle
  problem ``min_x max_y F(x) + <y, A x>``; primal gradient calls only.
* :func:`globally_dual_run` -- accelerated gradient on the dual of both
  constraint families, run in the variable ``p = A^T y``.
* :func:`locally_dual_run` -- ``B x = 0`` eliminated per node through a
  null-space basis, then accelerated gradient on the consensus dual.

With ``cheby=True`` the consensus matrix ``W`` and the Gram matrix ``B^T B``
are replaced by kernel-preserving Chebyshev polynomials of themselves.  The
feasible set is unchanged (same kernels) while the condition number of the
constraint operator drops to O(1), at the price of ``K`` communication rounds
and ``M`` products with ``B^T B`` per use.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from .context import RunContext
from .network import apply_gossip
from .problem import ProblemInstance, dual_argmin, grad_F
from .spectral import ChebyshevOperator, SpectralBounds, chebyshev_build
from .trace import DIVERGED, DIVERGENCE_LIMIT, Monitor, SolverTrace, StopCriterion


class Diverged(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Chebyshev-substituted constraint operators


def _gossip_poly(inst: ProblemInstance, ctx: RunContext, target_chi: float) -> ChebyshevOperator:
    def on_apply():
        ctx.comm_rounds += 1

    return chebyshev_build(inst.mixing.matvec, inst.W_bounds, target_chi, on_apply=on_apply)


def _gram_poly(inst: ProblemInstance, ctx: RunContext, target_chi: float) -> ChebyshevOperator | None:
    if inst.BtB_bounds is None:
        return None

    def on_apply():
        ctx.b_mults += 1

    BtB = inst.BtB
    return chebyshev_build(lambda x: x @ BtB, inst.BtB_bounds, target_chi, on_apply=on_apply)


class _GramOperator:
    """Symmetric operator ``S`` with known range bounds, used by the dual methods."""

    def __init__(self, apply, bounds: SpectralBounds, info: dict):
        self.apply = apply
        self.bounds = bounds
        self.info = info


def _global_gram(inst: ProblemInstance, ctx: RunContext, cheby: bool, target_chi: float) -> _GramOperator:
    op = inst.constraint
    if not cheby:
        return _GramOperator(lambda x: op.apply_AtA(x, ctx), op.bounds, {})
    # I kron P_M(B^T B) + g^2 P_K(W) kron I, where P_K(W) takes the place of W^2
    pk = _gossip_poly(inst, ctx, target_chi)
    pm = _gram_poly(inst, ctx, target_chi)
    kb = pk.bounds
    if pm is None:
        return _GramOperator(pk, kb, {"K": pk.degree})
    mb = pm.bounds
    g2 = mb.lambda_min_plus / kb.lambda_min_plus
    bounds = SpectralBounds(
        mb.lambda_max + g2 * kb.lambda_max,
        min(mb.lambda_min_plus, g2 * kb.lambda_min_plus),
        0,
    )
    return _GramOperator(lambda x: pm(x) + g2 * pk(x), bounds,
                         {"K": pk.degree, "M": pm.degree, "gamma_cheby": math.sqrt(g2)})


class _ChebyConstraint:
    """``A' = [I kron P_M(B^T B); g' P_K(W) kron I]`` with the interface of ``ConstraintOperator``."""

    def __init__(self, inst: ProblemInstance, ctx: RunContext, target_chi: float):
        self.pk = _gossip_poly(inst, ctx, target_chi)
        self.pm = _gram_poly(inst, ctx, target_chi)
        self.d = inst.d
        kb = self.pk.bounds
        if self.pm is None:
            self.g = 1.0
            self.bounds = SpectralBounds(kb.lambda_max**2, kb.lambda_min_plus**2, 0)
            self.info = {"K": self.pk.degree}
            return
        mb = self.pm.bounds
        self.g = mb.lambda_min_plus / kb.lambda_min_plus
        self.bounds = SpectralBounds(
            mb.lambda_max**2 + self.g**2 * kb.lambda_max**2,
            min(mb.lambda_min_plus, self.g * kb.lambda_min_plus) ** 2,
            0,
        )
        self.info = {"K": self.pk.degree, "M": self.pm.degree, "gamma_cheby": self.g}

    @property
    def dual_dim(self) -> int:
        return 2 * self.d

    def _pm(self, x):
        return self.pm(x) if self.pm is not None else np.zeros_like(x)

    def apply_A(self, x, ctx=None):
        return np.hstack([self._pm(x), self.g * self.pk(x)])

    def apply_At(self, y, ctx=None):
        return self._pm(y[:, : self.d]) + self.g * self.pk(y[:, self.d:])

    def apply_AtA(self, x, ctx=None):
        return self.apply_At(self.apply_A(x))


# ---------------------------------------------------------------------------
# accelerated gradient engine


def accelerated_gradient(oracle, eta: float, beta: float, p0, max_iters: int | None = None):
    """Momentum gradient iteration shared by the dual methods.

    ``q = p^k + beta (p^k - p^{k-1})``, ``p^{k+1} = q - eta * oracle(q)``,
    starting from ``p^{-1} = p^0``.  Yields ``p^1, p^2, ...``.

    Raises
    ------
    Diverged
        If an iterate becomes non-finite or exceeds the divergence limit.
    """
    if eta <= 0 or not 0 <= beta < 1:
        raise ValueError(f"need eta > 0 and 0 <= beta < 1, got eta={eta}, beta={beta}")
    p_prev = p = np.asarray(p0, dtype=float)
    k = 0
    while max_iters is None or k < max_iters:
        q = p + beta * (p - p_prev)
        p_prev, p = p, q - eta * oracle(q)
        k += 1
        size = np.max(np.abs(p), initial=0.0)
        if not np.isfinite(size) or size > DIVERGENCE_LIMIT:
            raise Diverged(f"iterate blew up at step {k}")
        yield p


def momentum(kappa: float) -> float:
    """``(sqrt(kappa) - 1) / (sqrt(kappa) + 1)``."""
    r = math.sqrt(max(kappa, 1.0))
    return (r - 1) / (r + 1)


def _run_dual(monitor: Monitor, oracle_x, gram: _GramOperator, eta, beta, p0, lift, ctx):
    state = {}

    def oracle(q):
        z = oracle_x(q)
        state["z"] = z
        return gram.apply(z)

    k = 0
    stop = False
    max_iters = monitor.stop.max_iters
    try:
        for _ in accelerated_gradient(oracle, eta, beta, p0):
            k += 1
            if monitor.record(k, lift(state["z"])):
                stop = True
                break
            if max_iters is not None and k >= max_iters:
                break
    except Diverged:
        if not stop:
            monitor.trace.status = "diverged"
    return monitor.finish(ctx, eta=eta, beta=beta, **gram.info)


def globally_dual_run(inst: ProblemInstance, stop: StopCriterion, cheby: bool = False,
                      eta: float | None = None, beta: float | None = None,
                      ctx: RunContext | None = None, target_chi: float = 4.0) -> SolverTrace:
    """Accelerated gradient on ``Phi(y) = F*(A^T y)`` in the variable ``p = A^T y``.

    ``q = p^k + beta (p^k - p^{k-1})``, ``p^{k+1} = q - eta A^T A x(q)`` with
    ``x(q) = grad F*(q)``.  Defaults: ``eta = mu / lambda_max(A^T A)`` and
    ``beta`` from ``kappa = chi(A^T A) L / mu``.  The recorded primal point is
    ``x(q)``.
    """
    ctx = ctx if ctx is not None else RunContext()
    gram = _global_gram(inst, ctx, cheby, target_chi)
    if eta is None:
        eta = inst.mu / gram.bounds.lambda_max
    if beta is None:
        beta = momentum(gram.bounds.chi * inst.L / inst.mu)
    monitor = Monitor(inst, stop, "gdual")
    return _run_dual(monitor, lambda q: dual_argmin(inst, q, ctx), gram, eta, beta,
                     np.zeros((inst.m, inst.d)), lambda x: x, ctx)


def locally_dual_run(inst: ProblemInstance, stop: StopCriterion, cheby: bool = False,
                     eta: float | None = None, beta: float | None = None,
                     ctx: RunContext | None = None, target_chi: float = 4.0) -> SolverTrace:
    """Accelerated gradient on the consensus dual of the null-space reduced problem.

    ``t(q)`` solves ``G_i t_i = E^T C_i^T d_i + q_i`` on every node and
    ``p^{k+1} = q - eta W_t^2 t(q)``.  Defaults: ``eta = mu_t / lambda_max(W)^2``
    and ``beta`` from ``kappa = chi(W)^2 L_t / mu_t``.  The recorded primal
    point ``x = E t`` is feasible for ``B x = 0`` by construction.
    """
    ctx = ctx if ctx is not None else RunContext()
    red = inst.reduced
    mix = inst.mixing
    if cheby:
        pk = _gossip_poly(inst, ctx, target_chi)
        gram = _GramOperator(pk, pk.bounds, {"K": pk.degree})
    else:
        wb = mix.bounds
        gram = _GramOperator(
            lambda t: apply_gossip(mix, apply_gossip(mix, t, ctx), ctx),
            SpectralBounds(wb.lambda_max**2, wb.lambda_min_plus**2, wb.rank),
            {},
        )
    if eta is None:
        eta = red.mu_t / gram.bounds.lambda_max
    if beta is None:
        beta = momentum(gram.bounds.chi * red.L_t / red.mu_t)
    monitor = Monitor(inst, stop, "ldual")
    return _run_dual(monitor, lambda q: red.dual_argmin(q, ctx), gram, eta, beta,
                     np.zeros((inst.m, red.d_t)), red.lift, ctx)


# ---------------------------------------------------------------------------
# APDG

APDG_RETRIES = 3


@dataclass
class ApdgParams:
    eta_x: float
    eta_y: float
    alpha_x: float
    beta_x: float
    beta_y: float
    tau_x: float
    tau_y: float
    sigma_x: float
    sigma_y: float
    theta_m: float

    def __post_init__(self):
        for name in ("eta_x", "eta_y", "alpha_x", "beta_x", "beta_y"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("tau_x", "tau_y", "sigma_x", "sigma_y"):
            if not 0 < getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in (0, 1]")
        if not 0 <= self.theta_m < 1:
            raise ValueError("theta_m must lie in [0, 1)")

    def as_dict(self) -> dict:
        return asdict(self)


def apdg_params(mu: float, L: float, lam_max: float, lam_min: float,
                damping: float = 4.0) -> ApdgParams:
    """Step-size schedule for :func:`apdg_run`.

    Parameters
    ----------
    mu, L : float
        Strong convexity and smoothness constants of ``F``.
    lam_max, lam_min : float
        Largest and smallest positive eigenvalue of ``A^T A``.
    damping : float
        Safety factor ``c`` dividing every step size.

    Notes
    -----
    The augmentation weights put the primal penalty on the scale of ``F`` and
    the dual regulariser on the scale of ``1/L``::

        beta_x = L / (2 lam_max)        beta_y = 1 / (2 L)
        L_x = L + beta_x lam_max        mu_y = beta_y lam_min,  L_y = beta_y lam_max
        delta = sqrt(mu_y / mu)         L_xy = sqrt(lam_max)
        tau_x = sqrt(mu / L_x)          tau_y = sqrt(mu_y / L_y)
        eta_x = min(1 / (c (mu + L_x tau_x)), delta / (c L_xy))
        eta_y = min(1 / (c (mu_y + L_y tau_y)), 1 / (c L_xy delta), 1 / (c L_y))
        sigma_x = mu eta_x / (2 tau_x)  sigma_y = mu_y eta_y / (2 tau_y)
        theta_m = 1 - max(sigma_x, sigma_y),  alpha_x = mu

    with ``tau`` and ``sigma`` clipped to 1.  The dual gradient step is taken at
    ``y^k`` itself rather than at an averaged point, hence the plain
    ``1 / (c L_y)`` cap on ``eta_y``; without it ``eta_y L_y`` grows like
    ``1 / tau_y`` and the iteration blows up once ``chi(A^T A)`` is large.

    Rescaling ``F -> s F`` and ``A -> sqrt(s) A`` divides ``eta_x`` and
    ``beta_y`` by ``s`` and leaves every other parameter unchanged.  The slowest
    contraction factor is ``sigma_y``, of order ``1 / sqrt(chi(A^T A) L / mu)``.
    """
    if not (0 < mu <= L and 0 < lam_min <= lam_max):
        raise ValueError("need 0 < mu <= L and 0 < lam_min <= lam_max")
    c = damping
    beta_x = 0.5 * L / lam_max
    beta_y = 0.5 / L
    L_x = L + beta_x * lam_max
    mu_y, L_y = beta_y * lam_min, beta_y * lam_max
    L_xy = math.sqrt(lam_max)
    delta = math.sqrt(mu_y / mu)
    tau_x = min(1.0, math.sqrt(mu / L_x))
    tau_y = min(1.0, math.sqrt(mu_y / L_y))
    eta_x = min(1 / (c * (mu + L_x * tau_x)), delta / (c * L_xy))
    eta_y = min(1 / (c * (mu_y + L_y * tau_y)), 1 / (c * L_xy * delta), 1 / (c * L_y))
    sigma_x = min(1.0, mu * eta_x / (2 * tau_x))
    sigma_y = min(1.0, mu_y * eta_y / (2 * tau_y))
    theta_m = 1 - max(sigma_x, sigma_y)
    return ApdgParams(eta_x, eta_y, mu, beta_x, beta_y, tau_x, tau_y,
                      sigma_x, sigma_y, theta_m)


def apdg_default_params(inst: ProblemInstance, bounds: SpectralBounds | None = None) -> ApdgParams:
    """Default schedule from ``mu``, ``L`` and the range bounds of ``A^T A``."""
    b = bounds if bounds is not None else inst.constraint.bounds
    return apdg_params(inst.mu, inst.L, b.lambda_max, b.lambda_min_plus)


def apdg_run(inst: ProblemInstance, params: ApdgParams | None, stop: StopCriterion,
             cheby: bool = False, ctx: RunContext | None = None, x0=None,
             target_chi: float = 4.0) -> SolverTrace:
    """Accelerated primal-dual gradient method on ``min_x max_y F(x) + <y, A x>``.

    Starts from ``x^0 = 0`` (or ``x0``) and ``y^0 = 0``; metrics are recorded on
    the output sequence ``x_f^k``.  ``params=None`` selects
    :func:`apdg_default_params` for the operator actually used.
    """
    ctx = ctx if ctx is not None else RunContext()
    A = _ChebyConstraint(inst, ctx, target_chi) if cheby else inst.constraint
    if params is not None:
        return _apdg_loop(inst, params, stop, A, ctx, x0)
    # the default schedule sits close to the stability edge on some
    # instances: halve both step sizes and start over if it blows up
    params = apdg_default_params(inst, A.bounds)
    for retry in range(APDG_RETRIES + 1):
        ctx.reset()
        tr = _apdg_loop(inst, params, stop, A, ctx, x0)
        if tr.status != DIVERGED:
            break
        params = replace(params, eta_x=params.eta_x / 2, eta_y=params.eta_y / 2)
    tr.info["step_halvings"] = retry
    return tr


def _apdg_loop(inst, P: ApdgParams, stop, A, ctx, x0) -> SolverTrace:
    m, d = inst.m, inst.d

    x = np.zeros((m, d)) if x0 is None else np.array(x0, dtype=float)
    x_f = x.copy()
    y = np.zeros((m, A.dual_dim))
    y_prev = y.copy()
    y_f = y.copy()

    monitor = Monitor(inst, stop, "apdg")
    k = 0
    if not monitor.record(0, x_f):
        while True:
            y_m = y + P.theta_m * (y - y_prev)
            x_g = P.tau_x * x + (1 - P.tau_x) * x_f
            y_g = P.tau_y * y + (1 - P.tau_y) * y_f
            g = grad_F(inst, x_g, ctx)
            x_new = (x + P.eta_x * P.alpha_x * (x_g - x)
                     - P.eta_x * P.beta_x * A.apply_AtA(x, ctx)
                     - P.eta_x * (g + A.apply_At(y_m, ctx)))
            y_new = (y - P.eta_y * P.beta_y * A.apply_A(A.apply_At(y, ctx) + g, ctx)
                     + P.eta_y * A.apply_A(x_new, ctx))
            x_f = x_g + P.sigma_x * (x_new - x)
            y_f = y_g + P.sigma_y * (y_new - y)
            x, y_prev, y = x_new, y, y_new
            k += 1
            if monitor.record(k, x_f):
                break
    return monitor.finish(ctx, y_norm=float(np.linalg.norm(y)), y_final=y, **P.as_dict(),
                          **getattr(A, "info", {}))
