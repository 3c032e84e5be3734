"""Reference distributed optimizers for head-to-head comparison.

Three families: decentralized gradient descent with a mixing matrix (DGD,
inexact under a constant step), gradient tracking (DIGing, exact), and the
proportional-integral consensus flow discretized by explicit Euler (exact).
Agent updates read only neighbor states, trackers, or integral states.
"""

from __future__ import annotations

import numpy as np

from .agm import DivergenceError, _DIVERGENCE_FACTOR, _guard_reference
from .graphs import AgentGraph, apply_lifted_laplacian, metropolis_weights
from .objectives import ConsensusOptimum, SeparableObjective
from .trace import RunTrace

__all__ = ["dgd_run", "diging_run", "pi_consensus_run"]

_COLUMNS = ["k", "F_gap_plus", "F_gap", "grad_norm", "laplacian_norm",
            "s_k", "V_k", "case", "w", "r", "monotonicity_ok",
            "fallback_flag"]


def _record(trace, k, X, obj, graph, opt, s=np.nan):
    lx = apply_lifted_laplacian(graph, obj.d, X)
    gap = obj.value(X) - opt.f_star
    trace.append(k=k, F_gap_plus=gap, F_gap=gap,
                 grad_norm=float(np.linalg.norm(obj.grad(X))),
                 laplacian_norm=float(np.linalg.norm(lx)),
                 s_k=s, V_k=np.nan, case="", w=np.nan, r=np.nan,
                 monotonicity_ok=True, fallback_flag=False)


def _guard(trace, gap0, k):
    if trace.last("F_gap") > _DIVERGENCE_FACTOR * gap0:
        raise DivergenceError(
            f"gap grew {_DIVERGENCE_FACTOR:.0e}-fold by iteration {k}",
            iteration=k, trace=trace)


def _grad_blocks(obj, xb):
    return np.vstack([obj.local_grad(i, xb[i]) for i in range(obj.m)])


def dgd_run(obj: SeparableObjective, graph: AgentGraph, X0: np.ndarray,
            alpha: float, iters: int, opt: ConsensusOptimum) -> RunTrace:
    """Decentralized gradient descent: x_i <- sum_j W_ij x_j - alpha grad f_i."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    w = metropolis_weights(graph)
    xb = np.asarray(X0, dtype=float).reshape(graph.m, obj.d).copy()
    trace = RunTrace(_COLUMNS, metadata={
        "algorithm": "dgd", "alpha": alpha, "iters": iters})
    _record(trace, 0, xb.reshape(-1), obj, graph, opt, s=alpha)
    gap0 = _guard_reference(trace.last("F_gap"), 0.0)
    for k in range(1, iters + 1):
        xb = w @ xb - alpha * _grad_blocks(obj, xb)
        _record(trace, k, xb.reshape(-1), obj, graph, opt, s=alpha)
        _guard(trace, gap0, k)
    return trace


def diging_run(obj: SeparableObjective, graph: AgentGraph, X0: np.ndarray,
               alpha: float, iters: int, opt: ConsensusOptimum) -> RunTrace:
    """Gradient tracking: x <- Wx - alpha y; y <- Wy + grad(x_new) - grad(x_old).

    Preserves the tracking identity sum_i y_i = sum_i grad f_i(x_i).
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    w = metropolis_weights(graph)
    xb = np.asarray(X0, dtype=float).reshape(graph.m, obj.d).copy()
    grads = _grad_blocks(obj, xb)
    yb = grads.copy()
    trace = RunTrace(_COLUMNS, metadata={
        "algorithm": "diging", "alpha": alpha, "iters": iters})
    _record(trace, 0, xb.reshape(-1), obj, graph, opt, s=alpha)
    gap0 = _guard_reference(trace.last("F_gap"), 0.0)
    residual = 0.0
    for k in range(1, iters + 1):
        xb = w @ xb - alpha * yb
        new_grads = _grad_blocks(obj, xb)
        yb = w @ yb + new_grads - grads
        grads = new_grads
        residual = max(residual, float(np.linalg.norm(
            yb.sum(axis=0) - grads.sum(axis=0))))
        _record(trace, k, xb.reshape(-1), obj, graph, opt, s=alpha)
        _guard(trace, gap0, k)
    trace.metadata["max_tracking_residual"] = residual
    return trace


def pi_consensus_run(obj: SeparableObjective, graph: AgentGraph,
                     X0: np.ndarray, alpha: float, beta_gain: float,
                     iters: int, opt: ConsensusOptimum,
                     h_step: float = 0.05) -> RunTrace:
    """Proportional-integral consensus flow, explicit Euler with step h_step:

        x' = -alpha grad f(x) - Llift x - beta_gain v,    v' = Llift x.

    The integral state v drives exact convergence; column sums of the
    Laplacian being zero keeps sum_i v_i at zero.
    """
    if alpha <= 0 or beta_gain <= 0 or h_step <= 0:
        raise ValueError("alpha, beta_gain, and h_step must be positive")
    x = np.asarray(X0, dtype=float).copy()
    v = np.zeros_like(x)
    trace = RunTrace(_COLUMNS, metadata={
        "algorithm": "pi_consensus", "alpha": alpha, "beta_gain": beta_gain,
        "h_step": h_step, "iters": iters})
    _record(trace, 0, x, obj, graph, opt, s=h_step)
    gap0 = _guard_reference(trace.last("F_gap"), 0.0)
    v_sum = 0.0
    for k in range(1, iters + 1):
        lx = apply_lifted_laplacian(graph, obj.d, x)
        x_new = x + h_step * (-alpha * obj.grad(x) - lx - beta_gain * v)
        v = v + h_step * lx
        x = x_new
        v_sum = max(v_sum, float(np.linalg.norm(
            v.reshape(graph.m, obj.d).sum(axis=0))))
        _record(trace, k, x, obj, graph, opt, s=h_step)
        _guard(trace, gap0, k)
    trace.metadata["max_integral_sum"] = v_sum
    return trace
