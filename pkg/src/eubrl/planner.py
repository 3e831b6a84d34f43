"""Dense tabular MDPs and exact discounted solvers."""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITERS = 1_000_000


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (residual={residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """P has shape (S, A, S), R has shape (S, A)."""

    P: np.ndarray
    R: np.ndarray
    gamma: float

    def __post_init__(self):
        P = np.ascontiguousarray(self.P, dtype=np.float64)
        R = np.ascontiguousarray(self.R, dtype=np.float64)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ValueError(f"P must have shape (S, A, S), got {P.shape}")
        if R.shape != P.shape[:2]:
            raise ValueError(f"R must have shape {P.shape[:2]}, got {R.shape}")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if P.min() < 0 or np.abs(P.sum(-1) - 1.0).max() > 1e-9:
            raise ValueError("every transition row must lie on the probability simplex")
        if not np.all(np.isfinite(R)):
            raise ValueError("rewards must be finite")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "gamma", float(self.gamma))

    @classmethod
    def trusted(cls, P, R, gamma) -> "TabularMdp":
        """Build without validation, for models that are valid by construction."""
        mdp = object.__new__(cls)
        object.__setattr__(mdp, "P", P)
        object.__setattr__(mdp, "R", R)
        object.__setattr__(mdp, "gamma", float(gamma))
        return mdp

    @property
    def n_states(self) -> int:
        return self.P.shape[0]

    @property
    def n_actions(self) -> int:
        return self.P.shape[1]


@numba.njit(cache=True)
def _vi_kernel(P, R, gamma, V, tol, max_iters, history):
    S, A = R.shape
    V = V.copy()
    Vn = np.empty(S)
    resid = np.inf
    for it in range(max_iters):
        resid = 0.0
        for s in range(S):
            best = -np.inf
            for a in range(A):
                q = R[s, a]
                acc = 0.0
                for t in range(S):
                    acc += P[s, a, t] * V[t]
                q += gamma * acc
                if q > best:
                    best = q
            Vn[s] = best
            d = abs(best - V[s])
            if d > resid:
                resid = d
        if it < history.shape[0]:
            history[it] = resid
        V, Vn = Vn, V
        if resid <= tol:
            return V, it + 1, resid
    return V, max_iters, resid


@numba.njit(cache=True)
def _pe_kernel(P, R, gamma, policy, V, tol, max_iters):
    S = R.shape[0]
    V = V.copy()
    Vn = np.empty(S)
    resid = np.inf
    for it in range(max_iters):
        resid = 0.0
        for s in range(S):
            a = policy[s]
            acc = 0.0
            for t in range(S):
                acc += P[s, a, t] * V[t]
            v = R[s, a] + gamma * acc
            Vn[s] = v
            d = abs(v - V[s])
            if d > resid:
                resid = d
        V, Vn = Vn, V
        if resid <= tol:
            return V, it + 1, resid
    return V, max_iters, resid


def q_values(mdp: TabularMdp, V) -> np.ndarray:
    return mdp.R + mdp.gamma * (mdp.P @ np.asarray(V, dtype=float))


def greedy_policy(mdp: TabularMdp, V) -> np.ndarray:
    """Greedy actions; ties go to the lowest action index."""
    return np.argmax(q_values(mdp, V), axis=1)


def bellman_residual(mdp: TabularMdp, V) -> float:
    """Sup-norm distance between V and its optimal Bellman backup."""
    V = np.asarray(V, dtype=float)
    return float(np.abs(q_values(mdp, V).max(axis=1) - V).max())


def value_iteration(
    mdp: TabularMdp,
    tol: float = DEFAULT_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
    v0=None,
    history: list | None = None,
):
    """Solve ``mdp`` by value iteration until the Bellman residual is at most ``tol``.

    Returns ``(V, policy)``. ``v0`` warm-starts the iteration. If ``history``
    is a list it receives the sup-norm change of every sweep, which is the
    quantity the contraction property is stated on.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    V0 = np.zeros(mdp.n_states) if v0 is None else np.asarray(v0, dtype=float)
    hist = np.empty(max_iters if history is not None else 0)
    V, iters, resid = _vi_kernel(mdp.P, mdp.R, mdp.gamma, V0, float(tol), int(max_iters), hist)
    if history is not None:
        history.extend(hist[: min(iters, max_iters)].tolist())
    if resid > tol:
        raise ConvergenceError("value iteration did not converge", resid, iters)
    return V, greedy_policy(mdp, V)


def policy_evaluation(
    mdp: TabularMdp,
    policy,
    tol: float = DEFAULT_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
    v0=None,
) -> np.ndarray:
    """Iterative evaluation of a deterministic policy to residual ``tol``."""
    policy = np.asarray(policy, dtype=np.int64)
    if policy.shape != (mdp.n_states,) or policy.min() < 0 or policy.max() >= mdp.n_actions:
        raise ValueError("policy must give one valid action per state")
    V0 = np.zeros(mdp.n_states) if v0 is None else np.asarray(v0, dtype=float)
    V, iters, resid = _pe_kernel(mdp.P, mdp.R, mdp.gamma, policy, V0, float(tol), int(max_iters))
    if resid > tol:
        raise ConvergenceError("policy evaluation did not converge", resid, iters)
    return V


def evaluate_exact(mdp: TabularMdp, policy) -> np.ndarray:
    """V^pi by a dense linear solve of (I - gamma P_pi) V = R_pi."""
    policy = np.asarray(policy, dtype=np.int64)
    idx = np.arange(mdp.n_states)
    P_pi = mdp.P[idx, policy]
    R_pi = mdp.R[idx, policy]
    return np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * P_pi, R_pi)


def policy_iteration(
    mdp: TabularMdp,
    tol: float = DEFAULT_TOL,
    max_iters: int = 10_000,
    policy0=None,
):
    """Howard policy iteration with exact evaluation.

    Reaches the same fixed point as :func:`value_iteration` in a handful of
    linear solves, which matters for discounts close to one. An action is only
    replaced when another is better by more than round-off, so the loop
    cannot cycle between tied actions.
    """
    S = mdp.n_states
    policy = np.zeros(S, dtype=np.int64) if policy0 is None else np.array(policy0, dtype=np.int64)
    idx = np.arange(S)
    for _ in range(max_iters):
        V = evaluate_exact(mdp, policy)
        Q = q_values(mdp, V)
        best = np.argmax(Q, axis=1)
        margin = 1e-12 * (1.0 + np.abs(V))
        improve = Q[idx, best] > Q[idx, policy] + margin
        if not improve.any():
            break
        policy = np.where(improve, best, policy)
    else:
        raise ConvergenceError("policy iteration did not stabilise", bellman_residual(mdp, V), max_iters)
    resid = bellman_residual(mdp, V)
    if resid > tol:
        # round-off in the solve; finish with a few warm-started sweeps
        return value_iteration(mdp, tol=tol, v0=V)
    return V, policy


def solve(mdp: TabularMdp, method: str = "value_iteration", tol: float = DEFAULT_TOL, v0=None, policy0=None):
    if method == "value_iteration":
        return value_iteration(mdp, tol=tol, v0=v0)
    if method == "policy_iteration":
        return policy_iteration(mdp, tol=tol, policy0=policy0)
    raise ValueError(f"unknown solver {method!r}")
