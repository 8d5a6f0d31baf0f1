"""Per-iteration metrics, stopping rules and trace diagnostics."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

DIVERGENCE_LIMIT = 1e12

CONVERGED = "converged"
MAX_ITERS = "max_iters"
DIVERGED = "diverged"
COMPLETED = "completed"  # ran to max_iters with no threshold active


@dataclass
class StopCriterion:
    """Thresholds on ``|A x^k|`` and ``F(x^k) - F*`` plus an iteration cap.

    A run stops once every active threshold is met at an iterate ``k >= 1``.
    With ``certify`` set, meeting ``eps_cons`` additionally requires
    ``sigma_max(A) |x^k - x*| < certify_margin * eps_cons``, which bounds
    ``|A x^j|`` for the iterates that follow as long as momentum does not push
    ``|x^j - x*|`` up by more than ``1 / certify_margin``.  The reported
    iteration count is then the index from which the thresholds hold for the
    rest of the trace.
    """

    eps_cons: float | None = 1e-2
    max_iters: int | None = 20000
    eps_f: float | None = None
    certify: bool = True
    certify_margin: float = 0.1

    def __post_init__(self):
        if self.eps_cons is None and self.max_iters is None and self.eps_f is None:
            raise ValueError("at least one stopping rule must be active")


@dataclass
class SolverTrace:
    """Per-iteration metrics of one solver run plus its final meters."""

    solver: str = ""
    iters: list[int] = field(default_factory=list)
    f_err: list[float] = field(default_factory=list)
    cons_viol: list[float] = field(default_factory=list)
    b_viol: list[float] = field(default_factory=list)
    w_viol: list[float] = field(default_factory=list)
    wall_ns: list[int] = field(default_factory=list)
    counters: dict = field(default_factory=dict)
    status: str = ""
    x_final: np.ndarray | None = None
    info: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.iters)

    settled_at: int | None = None

    @property
    def steps(self) -> int:
        """Number of iterations executed."""
        return self.iters[-1] if self.iters else 0

    @property
    def iterations(self) -> int:
        """Iterations needed to reach the thresholds and stay there."""
        return self.settled_at if self.settled_at is not None else self.steps

    @property
    def success(self) -> bool:
        return self.status in (CONVERGED, COMPLETED)

    @property
    def wall_seconds(self) -> float:
        return self.wall_ns[-1] * 1e-9 if self.wall_ns else 0.0


class Monitor:
    """Records metrics of primal iterates and applies the stopping rule."""

    def __init__(self, inst, stop: StopCriterion, solver: str):
        self.inst = inst
        self.stop = stop
        x_star, self.F_star = inst.solution
        self.x_star = np.tile(x_star, (inst.m, 1))
        try:
            self.sigma_A = np.sqrt(inst.constraint.bounds.lambda_max)
        except ValueError:  # A == 0
            self.sigma_A = 0.0
        self.trace = SolverTrace(solver=solver)
        self._t0 = time.perf_counter_ns()

    def record(self, k: int, x: np.ndarray) -> bool:
        """Log iterate ``k``; return True when the run must stop."""
        tr = self.trace
        cons, b, w = self.inst.violations(x)
        f_err = self.inst.F(x) - self.F_star
        tr.iters.append(k)
        tr.f_err.append(f_err)
        tr.cons_viol.append(cons)
        tr.b_viol.append(b)
        tr.w_viol.append(w)
        tr.wall_ns.append(time.perf_counter_ns() - self._t0)
        tr.x_final = x

        if not (np.isfinite(cons) and np.isfinite(f_err)) or max(cons, abs(f_err)) > DIVERGENCE_LIMIT:
            tr.status = DIVERGED
            return True
        st = self.stop
        active = [(st.eps_cons, cons), (st.eps_f, f_err)]
        active = [(eps, val) for eps, val in active if eps is not None]
        # the starting point is an input, not an iterate: never stop on it
        if k >= 1 and active and all(val < eps for eps, val in active):
            certified = True
            if st.certify and st.eps_cons is not None:
                certified = self.sigma_A * np.linalg.norm(x - self.x_star) < st.certify_margin * st.eps_cons
            if certified:
                tr.status = CONVERGED
                self._settle()
                return True
        if st.max_iters is not None and k >= st.max_iters:
            tr.status = MAX_ITERS if active else COMPLETED
            return True
        return False

    def _settle(self):
        tr, st = self.trace, self.stop
        bad = np.zeros(len(tr.iters), dtype=bool)
        if st.eps_cons is not None:
            bad |= np.asarray(tr.cons_viol) >= st.eps_cons
        if st.eps_f is not None:
            bad |= np.asarray(tr.f_err) >= st.eps_f
        bad[np.asarray(tr.iters) < 1] = True
        last = np.nonzero(bad)[0]
        tr.settled_at = tr.iters[last[-1] + 1] if last.size else tr.iters[0]

    def finish(self, ctx, **info) -> SolverTrace:
        self.trace.counters = ctx.as_dict()
        self.trace.info.update(info)
        return self.trace


def log_linear_fit(values, tail: float = 0.5) -> tuple[float, float]:
    """Least-squares line through ``log10(values)`` over the last ``tail`` fraction.

    Returns ``(slope, residual)`` where ``residual`` is the RMS deviation from
    the line divided by the range the line spans over the window.  A small
    residual means the decay is linear on a log scale.
    """
    v = np.asarray(values, dtype=float)
    v = np.log10(v[len(v) - max(2, int(round(tail * len(v)))):])
    if not np.all(np.isfinite(v)):
        raise ValueError("log-linear fit needs positive values")
    k = np.arange(v.size, dtype=float)
    slope, icpt = np.polyfit(k, v, 1)
    fit = slope * k + icpt
    span = abs(fit[-1] - fit[0])
    rms = float(np.sqrt(np.mean((v - fit) ** 2)))
    return float(slope), rms / span if span > 0 else math.inf


def trailing_min(values, window: int = 50) -> np.ndarray:
    """``min(values[k - window + 1 : k + 1])`` for every full window."""
    v = np.asarray(values, dtype=float)
    if v.size < window:
        return v[:0]
    return np.lib.stride_tricks.sliding_window_view(v, window).min(axis=1)
