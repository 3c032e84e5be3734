"""Per-agent convex objectives, the cumulative cost, and reference solvers.

A separable objective holds ``m`` local convex functions over R^d. The
cumulative cost evaluates them on a stacked md-vector, one block per agent.
The consensus optimum (common minimizer of the sum) is computed offline and
feeds the energy/Lyapunov diagnostics; distributed algorithms never read it
inside their updates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SeparableObjective",
    "QuadraticObjective",
    "LogisticObjective",
    "ConsensusOptimum",
    "SolverError",
    "eval_cumulative",
    "grad_cumulative",
    "make_quadratic",
    "make_logistic",
    "solve_consensus_optimum",
]


class SolverError(RuntimeError):
    """Reference solver failed to reach tolerance; carries the best iterate."""

    def __init__(self, msg, best_x=None, grad_norm=None):
        super().__init__(msg)
        self.best_x = best_x
        self.grad_norm = grad_norm


@dataclass(frozen=True)
class ConsensusOptimum:
    """Common minimizer of the agent sum and derived stacked quantities."""

    x_star: np.ndarray
    f_star: float
    x_star_stacked: np.ndarray
    grad_at_opt: np.ndarray  # stacked per-agent gradients at the optimum


class SeparableObjective:
    """Base class: m local functions f_i over R^d with gradient oracles."""

    m: int
    d: int
    smoothness: float  # Lipschitz constant (upper bound) of the stacked gradient
    local_smoothness: np.ndarray  # per-agent gradient Lipschitz bounds

    def local_value(self, i: int, x: np.ndarray) -> float:
        raise NotImplementedError

    def local_grad(self, i: int, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _check(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape != (self.m * self.d,):
            raise ValueError(
                f"stacked state has shape {X.shape}, expected ({self.m * self.d},)")
        return X

    def value(self, X: np.ndarray) -> float:
        """Cumulative cost: sum of f_i over the agent blocks of X."""
        X = self._check(X)
        blocks = X.reshape(self.m, self.d)
        return float(sum(self.local_value(i, blocks[i]) for i in range(self.m)))

    def grad(self, X: np.ndarray) -> np.ndarray:
        """Stacked gradient: block i is the gradient of f_i at block i of X."""
        X = self._check(X)
        blocks = X.reshape(self.m, self.d)
        return np.concatenate([self.local_grad(i, blocks[i]) for i in range(self.m)])

    def central_value(self, x: np.ndarray) -> float:
        """Sum of all f_i at a single point (the centralized objective)."""
        return float(sum(self.local_value(i, x) for i in range(self.m)))

    def central_grad(self, x: np.ndarray) -> np.ndarray:
        return np.sum([self.local_grad(i, x) for i in range(self.m)], axis=0)

    def stack(self, x: np.ndarray) -> np.ndarray:
        """Stacked copy of a single d-vector, one block per agent."""
        return np.tile(np.asarray(x, dtype=float), self.m)


def eval_cumulative(obj: SeparableObjective, X: np.ndarray) -> float:
    return obj.value(X)


def grad_cumulative(obj: SeparableObjective, X: np.ndarray) -> np.ndarray:
    return obj.grad(X)


class QuadraticObjective(SeparableObjective):
    """f_i(x) = 0.5 (x - b_i)^T Q_i (x - b_i) with SPD Q_i; closed-form optimum."""

    def __init__(self, Qs: np.ndarray, bs: np.ndarray):
        Qs = np.asarray(Qs, dtype=float)
        bs = np.asarray(bs, dtype=float)
        if Qs.ndim != 3 or Qs.shape[1] != Qs.shape[2] or bs.shape != Qs.shape[:2]:
            raise ValueError("expected Qs of shape (m, d, d) and bs of shape (m, d)")
        self.Qs = Qs
        self.bs = bs
        self.m, self.d = bs.shape
        eigs = np.linalg.eigvalsh(Qs)
        if np.any(eigs <= 0):
            raise ValueError("per-agent quadratic matrices must be SPD")
        self.local_smoothness = eigs[:, -1].copy()
        self.smoothness = float(self.local_smoothness.max())

    def local_value(self, i, x):
        r = x - self.bs[i]
        return 0.5 * float(r @ self.Qs[i] @ r)

    def local_grad(self, i, x):
        return self.Qs[i] @ (x - self.bs[i])

    def value(self, X):
        X = self._check(X)
        r = X.reshape(self.m, self.d) - self.bs
        return 0.5 * float(np.einsum("mi,mij,mj->", r, self.Qs, r))

    def grad(self, X):
        X = self._check(X)
        r = X.reshape(self.m, self.d) - self.bs
        return np.einsum("mij,mj->mi", self.Qs, r).reshape(-1)

    def closed_form_optimum(self) -> ConsensusOptimum:
        """x* = (sum Q_i)^{-1} sum Q_i b_i, exact for the quadratic family."""
        q_sum = self.Qs.sum(axis=0)
        x_star = np.linalg.solve(q_sum, np.einsum("mij,mj->i", self.Qs, self.bs))
        x_stacked = self.stack(x_star)
        return ConsensusOptimum(
            x_star=x_star,
            f_star=self.value(x_stacked),
            x_star_stacked=x_stacked,
            grad_at_opt=self.grad(x_stacked),
        )


class LogisticObjective(SeparableObjective):
    """Sharded cross-entropy: f_i(w) = sum over shard i of
    log(1 + exp(z^T w)) - y z^T w, plus an optional ridge (l2/2m)||w||^2."""

    def __init__(self, shards_z, shards_y, l2: float = 0.0):
        if len(shards_z) != len(shards_y) or not shards_z:
            raise ValueError("need matching, non-empty feature/label shard lists")
        self.Zs = [np.asarray(z, dtype=float) for z in shards_z]
        self.ys = [np.asarray(y, dtype=float) for y in shards_y]
        self.m = len(self.Zs)
        self.l2 = float(l2)
        for z, y in zip(self.Zs, self.ys):
            if z.shape[0] == 0:
                raise ValueError("empty shard")
            if z.shape[0] != y.shape[0]:
                raise ValueError("shard feature/label count mismatch")
            if not np.all(np.isin(y, (0.0, 1.0))):
                raise ValueError("labels must be in {0, 1}")
        self.d = self.Zs[0].shape[1]
        # 1/4 bound on the logistic Hessian plus the per-agent ridge share.
        self.local_smoothness = np.array([
            0.25 * np.linalg.eigvalsh(z.T @ z)[-1] + self.l2 / self.m
            for z in self.Zs
        ])
        self.smoothness = float(self.local_smoothness.max())

    def local_value(self, i, x):
        margins = self.Zs[i] @ x
        loss = np.logaddexp(0.0, margins) - self.ys[i] * margins
        return float(loss.sum() + 0.5 * self.l2 / self.m * (x @ x))

    def local_grad(self, i, x):
        margins = self.Zs[i] @ x
        sig = 1.0 / (1.0 + np.exp(-margins))
        return self.Zs[i].T @ (sig - self.ys[i]) + self.l2 / self.m * x


def make_quadratic(m: int, d: int, cond: float = 10.0, seed: int = 0,
                   scale: float = 1.0, offset_scale: float = 1.0) -> QuadraticObjective:
    """Seeded quadratic test problem with per-agent spectra in
    [scale/cond, scale] and random offsets b_i of size ~offset_scale."""
    if cond < 1.0 or scale <= 0.0:
        raise ValueError("need cond >= 1 and scale > 0")
    rng = np.random.default_rng(seed)
    Qs = np.empty((m, d, d))
    for i in range(m):
        if d == 1:
            Qs[i] = np.array([[scale]])
            continue
        eigs = np.geomspace(scale / cond, scale, d)
        basis, _ = np.linalg.qr(rng.standard_normal((d, d)))
        Qs[i] = basis @ np.diag(eigs) @ basis.T
        Qs[i] = 0.5 * (Qs[i] + Qs[i].T)
    bs = offset_scale * rng.standard_normal((m, d))
    return QuadraticObjective(Qs, bs)


def make_logistic(features: np.ndarray, labels: np.ndarray, shards,
                  l2: float = 1e-4, add_bias: bool = False) -> LogisticObjective:
    """Logistic objective sharded across agents.

    ``shards`` is either an agent count (contiguous near-equal split) or an
    explicit list of row-index arrays. ``add_bias`` appends a constant-one
    feature column.
    """
    features = np.asarray(features, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if add_bias:
        features = np.hstack([features, np.ones((features.shape[0], 1))])
    if isinstance(shards, int):
        if features.shape[0] < shards:
            raise ValueError("fewer samples than agents")
        shards = np.array_split(np.arange(features.shape[0]), shards)
    return LogisticObjective(
        [features[idx] for idx in shards],
        [labels[idx] for idx in shards],
        l2=l2,
    )


def solve_consensus_optimum(obj: SeparableObjective, tol: float = 1e-10,
                            max_iter: int = 200_000,
                            x0=None) -> ConsensusOptimum:
    """Centralized accelerated gradient descent on sum_i f_i with restarts.

    Runs until the centralized gradient norm falls below ``tol``. Raises
    SolverError carrying the best iterate if the cap is reached first.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    lip = float(np.sum(obj.local_smoothness))
    step = 1.0 / lip
    x = np.zeros(obj.d) if x0 is None else np.asarray(x0, dtype=float).copy()
    y = x.copy()
    theta = 1.0
    best_x, best_norm = x.copy(), np.inf
    f_prev = obj.central_value(x)
    for _ in range(max_iter):
        g = obj.central_grad(y)
        gx = obj.central_grad(x)
        gnorm = float(np.linalg.norm(gx))
        if gnorm < best_norm:
            best_norm, best_x = gnorm, x.copy()
        if gnorm <= tol:
            break
        x_new = y - step * g
        theta_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * theta * theta))
        y = x_new + (theta - 1.0) / theta_new * (x_new - x)
        f_new = obj.central_value(x_new)
        if f_new > f_prev:  # function-value restart
            y = x_new.copy()
            theta_new = 1.0
        x, theta, f_prev = x_new, theta_new, f_new
    else:
        raise SolverError(
            f"no convergence in {max_iter} iterations (grad norm {best_norm:.3e})",
            best_x=best_x, grad_norm=best_norm)
    x_stacked = obj.stack(best_x)
    return ConsensusOptimum(
        x_star=best_x,
        f_star=obj.value(x_stacked),
        x_star_stacked=x_stacked,
        grad_at_opt=obj.grad(x_stacked),
    )
