"""Continuous-time distributed accelerated gradient flow.

Integrates the second-order agent dynamics

    Xdd + (3/t) Xd + t^{-beta} gradF(X) + k_gain * Llift X = 0

with classical fixed-step RK4, and maintains the six-term energy ledger that
is conserved along exact trajectories: a kinetic term in the conjugate
momentum, a Laplacian quadratic, a time-weighted optimality gap, and three
running integrals (Laplacian, Bregman, and gap) accumulated by the
trapezoidal rule on the integration grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graphs import AgentGraph, apply_lifted_laplacian
from .objectives import ConsensusOptimum, SeparableObjective
from .trace import RunTrace

__all__ = [
    "FlowParams",
    "FlowState",
    "EnergyLedger",
    "BlowUpError",
    "flow_rhs",
    "flow_rhs_per_agent",
    "energy_at",
    "integrate",
    "rate_slope",
]


class BlowUpError(RuntimeError):
    def __init__(self, msg, last_t=None):
        super().__init__(msg)
        self.last_t = last_t


@dataclass(frozen=True)
class FlowParams:
    beta: float
    k_gain: float = 1.0
    t0: float = 1.0
    dt: float = 1e-3
    horizon: float = 50.0

    def __post_init__(self):
        if not (0.0 < self.beta < 2.0):
            raise ValueError(f"beta must lie in (0, 2), got {self.beta}")
        if self.k_gain <= 0 or self.dt <= 0:
            raise ValueError("k_gain and dt must be positive")
        if not (0.0 < self.t0 < self.horizon):
            raise ValueError("need 0 < t0 < horizon")


@dataclass(frozen=True)
class FlowState:
    t: float
    X: np.ndarray
    V: np.ndarray


@dataclass(frozen=True)
class EnergyLedger:
    """Six conserved-energy components; ``total`` is their sum."""

    kinetic: float
    laplacian_term: float
    potential_term: float
    integral_laplacian: float
    integral_bregman: float
    integral_beta: float
    total: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(
            self, "total",
            self.kinetic + self.laplacian_term + self.potential_term
            + self.integral_laplacian + self.integral_bregman
            + self.integral_beta)

    def components(self):
        return (self.kinetic, self.laplacian_term, self.potential_term,
                self.integral_laplacian, self.integral_bregman,
                self.integral_beta)


def flow_rhs(state: FlowState, params: FlowParams, obj: SeparableObjective,
             graph: AgentGraph):
    """Stacked right-hand side: (dX, dV)."""
    if state.t <= 0:
        raise ValueError(f"flow is singular at t={state.t}")
    lx = apply_lifted_laplacian(graph, obj.d, state.X)
    dv = (-(3.0 / state.t) * state.V
          - state.t ** (-params.beta) * obj.grad(state.X)
          - params.k_gain * lx)
    return state.V, dv


def flow_rhs_per_agent(state: FlowState, params: FlowParams,
                       obj: SeparableObjective, graph: AgentGraph):
    """Per-agent assembly of the same dynamics: agent i reads only its own
    gradient and neighbor state differences. Cross-checks the stacked form."""
    if state.t <= 0:
        raise ValueError(f"flow is singular at t={state.t}")
    xb = state.X.reshape(graph.m, obj.d)
    vb = state.V.reshape(graph.m, obj.d)
    dv = np.empty_like(xb)
    for i in range(graph.m):
        consensus = sum((xb[i] - xb[j] for j in graph.neighbors[i]),
                        np.zeros(obj.d))
        dv[i] = (-(3.0 / state.t) * vb[i]
                 - state.t ** (-params.beta) * obj.local_grad(i, xb[i])
                 - params.k_gain * consensus)
    return state.V.copy(), dv.reshape(-1)


def energy_at(state: FlowState, accumulators, obj: SeparableObjective,
              graph: AgentGraph, opt: ConsensusOptimum,
              params: FlowParams) -> EnergyLedger:
    """Energy ledger at one sample given the three running integrals.

    ``accumulators`` is the (laplacian, bregman, beta) integral triple
    accumulated since t0. For a start at small t0 with zero velocity the
    total approaches twice the squared initial distance to the optimum.
    """
    xbar = state.X - opt.x_star_stacked
    lx = apply_lifted_laplacian(graph, obj.d, xbar)
    gap = obj.value(state.X) - opt.f_star
    int_lap, int_breg, int_beta = accumulators
    return EnergyLedger(
        kinetic=0.5 * float(np.dot(state.t * state.V + 2.0 * xbar,
                                   state.t * state.V + 2.0 * xbar)),
        laplacian_term=0.5 * params.k_gain * state.t ** 2 * float(xbar @ lx),
        potential_term=state.t ** (2.0 - params.beta) * gap,
        integral_laplacian=int_lap,
        integral_bregman=int_breg,
        integral_beta=int_beta,
    )


def _integrands(t, X, obj, graph, opt, params):
    """Pointwise values of the three energy integrands at time t."""
    xbar = X - opt.x_star_stacked
    lx = apply_lifted_laplacian(graph, obj.d, xbar)
    gap = obj.value(X) - opt.f_star
    grad = obj.grad(X)
    bregman = opt.f_star - obj.value(X) - float(grad @ (opt.x_star_stacked - X))
    return (
        params.k_gain * t * float(xbar @ lx),
        2.0 * t ** (1.0 - params.beta) * bregman,
        params.beta * t ** (1.0 - params.beta) * gap,
    )


def integrate(params: FlowParams, obj: SeparableObjective, graph: AgentGraph,
              X0: np.ndarray, V0: np.ndarray, opt: ConsensusOptimum,
              record_every: int = 1, startup_dt_fraction: float = 0.05) -> RunTrace:
    """RK4 trajectory with conserved-energy bookkeeping.

    The step is ``params.dt`` except near a tiny t0, where the 3/t damping
    would destabilize an explicit step: there the step is capped at
    ``startup_dt_fraction * t`` and ramps geometrically up to dt. Records
    every ``record_every`` accepted steps.
    """
    X = np.asarray(X0, dtype=float).copy()
    V = np.asarray(V0, dtype=float).copy()
    if X.shape != (graph.m * obj.d,) or V.shape != X.shape:
        raise ValueError("X0/V0 must be stacked md-vectors")
    t = params.t0
    acc = np.zeros(3)
    prev_integrands = np.array(_integrands(t, X, obj, graph, opt, params))

    columns = ["t", "F_gap", "grad_norm", "laplacian_norm", "E_total",
               "E_kinetic", "E_laplacian", "E_potential",
               "E_int_laplacian", "E_int_bregman", "E_int_beta"]
    trace = RunTrace(columns, metadata={
        "beta": params.beta, "k_gain": params.k_gain, "t0": params.t0,
        "dt": params.dt, "horizon": params.horizon})

    def record(t, X, V):
        ledger = energy_at(FlowState(t, X, V), tuple(acc), obj, graph, opt,
                           params)
        lx = apply_lifted_laplacian(graph, obj.d, X)
        trace.append(
            t=t,
            F_gap=obj.value(X) - opt.f_star,
            grad_norm=float(np.linalg.norm(obj.grad(X))),
            laplacian_norm=float(np.linalg.norm(lx)),
            E_total=ledger.total,
            E_kinetic=ledger.kinetic,
            E_laplacian=ledger.laplacian_term,
            E_potential=ledger.potential_term,
            E_int_laplacian=ledger.integral_laplacian,
            E_int_bregman=ledger.integral_bregman,
            E_int_beta=ledger.integral_beta,
        )

    record(t, X, V)
    lap = graph.laplacian
    k_gain, beta = params.k_gain, params.beta
    m, d = graph.m, obj.d
    grad = obj.grad

    def rhs(t, X, V):
        lx = (lap @ X.reshape(m, d)).reshape(-1)
        return V, -(3.0 / t) * V - t ** (-beta) * grad(X) - k_gain * lx

    steps_since_record = 0
    while t < params.horizon - 1e-15:
        dt = min(params.dt, startup_dt_fraction * t, params.horizon - t)
        k1x, k1v = rhs(t, X, V)
        k2x, k2v = rhs(t + 0.5 * dt, X + 0.5 * dt * k1x, V + 0.5 * dt * k1v)
        k3x, k3v = rhs(t + 0.5 * dt, X + 0.5 * dt * k2x, V + 0.5 * dt * k2v)
        k4x, k4v = rhs(t + dt, X + dt * k3x, V + dt * k3v)
        X = X + dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
        V = V + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
        t = t + dt
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(V))):
            raise BlowUpError(f"trajectory diverged before t={t:.6g}",
                              last_t=t - dt)
        cur = np.array(_integrands(t, X, obj, graph, opt, params))
        acc += 0.5 * dt * (prev_integrands + cur)
        prev_integrands = cur
        steps_since_record += 1
        if steps_since_record >= record_every or t >= params.horizon - 1e-15:
            record(t, X, V)
            steps_since_record = 0
    return trace


def rate_slope(ts, gaps, tail_fraction: float = 0.5, window=None):
    """Least-squares slope of log(gap) against log(t) over a tail window.

    ``window=(lo, hi)`` restricts to that t-range; otherwise the last
    ``tail_fraction`` of samples is used. Non-positive gaps (float noise)
    are dropped and flagged. Returns (slope, r_squared, flagged).
    """
    ts = np.asarray(ts, dtype=float)
    gaps = np.asarray(gaps, dtype=float)
    if window is not None:
        mask = (ts >= window[0]) & (ts <= window[1])
    else:
        start = int(len(ts) * (1.0 - tail_fraction))
        mask = np.zeros(len(ts), dtype=bool)
        mask[start:] = True
    flagged = bool(np.any(gaps[mask] <= 0.0))
    mask &= gaps > 0.0
    if mask.sum() < 20:
        raise ValueError(f"rate window too small ({int(mask.sum())} points)")
    lt, lg = np.log(ts[mask]), np.log(gaps[mask])
    slope, intercept = np.polyfit(lt, lg, 1)
    resid = lg - (slope * lt + intercept)
    ss_tot = float(np.sum((lg - lg.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), r2, flagged
