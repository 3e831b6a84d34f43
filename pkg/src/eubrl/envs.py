"""Benchmark environments with exact ground-truth models.

Each environment enumerates its own dynamics as a list of weighted
*effects*; stepping samples one effect and the ground-truth MDP is the
probability-weighted sum over them, so the two can never drift apart.

Episode endings (DeepSea termination, LazyChain end resets) are folded into
the state space: the transition that ends an episode lands on the start
state, and the step result carries the flag.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .planner import TabularMdp, policy_iteration, q_values


class EnvKind(str, enum.Enum):
    CHAIN = "chain"
    LOOP = "loop"
    DEEPSEA = "deepsea"
    LAZYCHAIN = "lazychain"
    BANDIT = "bandit"


CHAIN_REWARD_SCHEMES = ("table", "classic")


class EnvStateError(RuntimeError):
    """Stepping an episodic environment whose episode already ended."""


@dataclass(frozen=True)
class EnvSpec:
    kind: EnvKind
    size: int = 0
    stochastic: bool = False
    slip: float = 0.2
    reward_scheme: str = "table"
    mu1: float = 0.9
    mu2: float = 0.4

    def __post_init__(self):
        object.__setattr__(self, "kind", EnvKind(self.kind))
        k = self.kind
        if k is EnvKind.LOOP and self.size < 2:
            raise ValueError(f"Loop needs at least 2 loops, got {self.size}")
        if k in (EnvKind.DEEPSEA, EnvKind.LAZYCHAIN) and self.size < 2:
            raise ValueError(f"{k.value} needs size N >= 2, got {self.size}")
        if self.reward_scheme not in CHAIN_REWARD_SCHEMES:
            raise ValueError(f"reward_scheme must be one of {CHAIN_REWARD_SCHEMES}")
        if not 0.0 <= self.slip <= 1.0:
            raise ValueError("slip probability must lie in [0, 1]")
        if k is EnvKind.BANDIT and not (0 <= self.mu1 <= 1 and 0 <= self.mu2 <= 1):
            raise ValueError("Bernoulli arm means must lie in [0, 1]")


class Step(NamedTuple):
    next_state: int
    reward: float
    terminated: bool
    boundary: bool


class Effect(NamedTuple):
    prob: float
    next_state: int
    reward: float  # expected reward of this outcome
    boundary: bool = False
    noise: float = 0.0  # std of additive Gaussian reward noise


class TabularEnv:
    n_states: int
    n_actions: int
    start_state: int = 0
    episodic: bool = False
    horizon: int | None = None
    r_max: float
    action_names: tuple[str, ...]

    def __init__(self, spec: EnvSpec, seed=None):
        self.spec = spec
        self.rng = np.random.default_rng(seed)
        self._effects = [[self.effects(s, a) for a in range(self.n_actions)] for s in range(self.n_states)]
        self.state = self.start_state
        self.t_episode = 0
        self.done = False

    @property
    def size(self) -> int:
        return self.spec.size

    def effects(self, s: int, a: int) -> list[Effect]:
        raise NotImplementedError

    def tied_dest(self) -> np.ndarray:
        """(S, K) table of states reached by each relative offset."""
        S = self.n_states
        return np.tile(np.arange(S), (S, 1))

    def reset(self) -> int:
        self.state = self.start_state
        self.t_episode = 0
        self.done = False
        return self.state

    def step(self, action: int) -> Step:
        if self.done:
            raise EnvStateError("episode has terminated; call reset() first")
        if not 0 <= action < self.n_actions:
            raise IndexError(f"action {action} outside [0, {self.n_actions})")
        effects = self._effects[self.state][action]
        if len(effects) == 1:
            eff = effects[0]
        else:
            u = self.rng.random()
            acc = 0.0
            eff = effects[-1]
            for e in effects:
                acc += e.prob
                if u < acc:
                    eff = e
                    break
        reward = eff.reward
        if eff.noise > 0:
            reward += eff.noise * self.rng.standard_normal()
        reward = self._sample_reward(eff, reward)
        self.t_episode += 1
        terminated = self.episodic and self.t_episode >= self.horizon
        boundary = eff.boundary or terminated
        self.state = eff.next_state
        if terminated:
            self.done = True
        elif boundary:
            self.t_episode = 0
        return Step(eff.next_state, float(reward), terminated, boundary)

    def _sample_reward(self, effect: Effect, reward: float) -> float:
        return reward

    def transition_model(self):
        """Exact P (S, A, S) and expected reward R (S, A)."""
        S, A = self.n_states, self.n_actions
        P = np.zeros((S, A, S))
        R = np.zeros((S, A))
        for s in range(S):
            for a in range(A):
                for e in self._effects[s][a]:
                    P[s, a, e.next_state] += e.prob
                    R[s, a] += e.prob * e.reward
        return P, R


class Chain(TabularEnv):
    """Five states, actions (left, right); each action slips to the other effect.

    The "table" scheme pays 10 whenever the move lands in the last state.
    The "classic" scheme pays 10 only for moving forward while already in the
    last state and 2 for every return to the first state.
    """

    n_states = 5
    n_actions = 2
    action_names = ("left", "right")
    LEFT, RIGHT = 0, 1

    def __init__(self, spec, seed=None):
        self.r_max = 10.0
        super().__init__(spec, seed)

    def _forward(self, s, p):
        last = self.n_states - 1
        s2 = min(s + 1, last)
        if self.spec.reward_scheme == "classic":
            return Effect(p, s2, 10.0 if s == last else 0.0)
        return Effect(p, s2, 10.0 if s2 == last else 0.0)

    def _back(self, p):
        return Effect(p, 0, 2.0 if self.spec.reward_scheme == "classic" else 0.0)

    def effects(self, s, a):
        slip = self.spec.slip
        if a == self.RIGHT:
            out = [self._forward(s, 1.0 - slip), self._back(slip)]
        else:
            out = [self._back(1.0 - slip), self._forward(s, slip)]
        return [e for e in out if e.prob > 0]

    def tied_dest(self):
        S = self.n_states
        return np.array([[min(s + 1, S - 1), 0] for s in range(S)])


class Loop(TabularEnv):
    """L loops of four states joined at a hub (state 0).

    Action k entered from the hub starts loop k. The last loop is the
    rewarding one (2 per lap) and any other action inside it drops the agent
    back to the hub; in the other loops (1 per lap) every action advances.
    """

    def __init__(self, spec, seed=None):
        L = spec.size
        self.n_loops = L
        self.n_states = 4 * L + 1
        self.n_actions = L
        self.best_loop = L - 1
        self.r_max = 2.0
        self.action_names = tuple(f"loop{k}" for k in range(L))
        super().__init__(spec, seed)

    def loop_of(self, s):
        return (s - 1) // 4, (s - 1) % 4

    def effects(self, s, a):
        if s == 0:
            return [Effect(1.0, 1 + 4 * a, 0.0)]
        k, pos = self.loop_of(s)
        if k == self.best_loop and a != self.best_loop:
            return [Effect(1.0, 0, 0.0)]
        if pos == 3:
            return [Effect(1.0, 0, 2.0 if k == self.best_loop else 1.0)]
        return [Effect(1.0, s + 1, 0.0)]


class DeepSea(TabularEnv):
    """N x N grid; every step descends one row and moves one column left or right.

    Moving right costs 0.01/N; taking right in the bottom-right cell finds
    the treasure (+1). The episode ends after N steps. The stochastic variant
    makes a right move act as left with probability 1/N and adds N(0, 1)
    noise to rewards in both bottom corners.
    """

    n_actions = 2
    action_names = ("left", "right")
    LEFT, RIGHT = 0, 1
    episodic = True

    def __init__(self, spec, seed=None):
        N = spec.size
        self.N = N
        self.n_states = N * N
        self.horizon = N
        self.r_max = 1.0
        super().__init__(spec, seed)

    def index(self, row, col):
        return row * self.N + col

    def _dest(self, row, col):
        if row + 1 >= self.N:
            return self.start_state
        return self.index(row + 1, col)

    def effects(self, s, a):
        N = self.N
        row, col = divmod(s, N)
        left = max(col - 1, 0)
        right = min(col + 1, N - 1)
        noise = 1.0 if self.spec.stochastic and row == N - 1 and col in (0, N - 1) else 0.0
        if a == self.LEFT:
            return [Effect(1.0, self._dest(row, left), 0.0, noise=noise)]
        reward = -0.01 / N
        if row == N - 1 and col == N - 1:
            reward += 1.0
        if not self.spec.stochastic:
            return [Effect(1.0, self._dest(row, right), reward, noise=noise)]
        bad = 1.0 / N
        return [
            Effect(1.0 - bad, self._dest(row, right), reward, noise=noise),
            Effect(bad, self._dest(row, left), reward, noise=noise),
        ]

    def tied_dest(self):
        N = self.N
        rows = []
        for s in range(self.n_states):
            row, col = divmod(s, N)
            rows.append([self._dest(row, max(col - 1, 0)), self._dest(row, min(col + 1, N - 1))])
        return np.array(rows)


class LazyChain(TabularEnv):
    """Balanced chain of 2N+1 states starting in the middle.

    Actions are (left, right, nothing). Moving costs 1; reaching the right
    end pays 2N-1 and the left end N-1, after which the agent is put back in
    the middle. Doing nothing is free. The stochastic variant flips each
    move with probability 0.2.
    """

    n_actions = 3
    action_names = ("left", "right", "nothing")
    LEFT, RIGHT, NOTHING = 0, 1, 2
    FLIP = 0.2

    def __init__(self, spec, seed=None):
        N = spec.size
        self.N = N
        self.n_states = 2 * N + 1
        self.start_state = N
        self.r_max = float(2 * N - 1)
        super().__init__(spec, seed)

    def _move(self, s, d, p):
        N = self.N
        if s in (0, 2 * N):  # end cells are never occupied; treat as the reset point
            return Effect(p, N, 0.0, boundary=True)
        s2 = s + d
        if s2 == 2 * N:
            return Effect(p, N, float(2 * N - 1), boundary=True)
        if s2 == 0:
            return Effect(p, N, float(N - 1), boundary=True)
        return Effect(p, s2, -1.0)

    def effects(self, s, a):
        if a == self.NOTHING:
            if s in (0, 2 * self.N):
                return [Effect(1.0, self.N, 0.0, boundary=True)]
            return [Effect(1.0, s, 0.0)]
        d = -1 if a == self.LEFT else 1
        if not self.spec.stochastic:
            return [self._move(s, d, 1.0)]
        return [self._move(s, d, 1.0 - self.FLIP), self._move(s, -d, self.FLIP)]

    def tied_dest(self):
        return np.array(
            [[self._move(s, -1, 1.0).next_state, self._move(s, 1, 1.0).next_state, s] for s in range(self.n_states)]
        )


class BernoulliBandit(TabularEnv):
    """Two arms paying Bernoulli(mu1) and Bernoulli(mu2) in a single state."""

    n_states = 1
    n_actions = 2
    action_names = ("arm1", "arm2")

    def __init__(self, spec, seed=None):
        self.r_max = 1.0
        self.means = (spec.mu1, spec.mu2)
        super().__init__(spec, seed)

    def effects(self, s, a):
        return [Effect(1.0, 0, self.means[a])]

    def _sample_reward(self, effect, reward):
        return float(self.rng.random() < reward)


_ENVS = {
    EnvKind.CHAIN: Chain,
    EnvKind.LOOP: Loop,
    EnvKind.DEEPSEA: DeepSea,
    EnvKind.LAZYCHAIN: LazyChain,
    EnvKind.BANDIT: BernoulliBandit,
}


def make_env(spec: EnvSpec, seed=None) -> TabularEnv:
    return _ENVS[spec.kind](spec, seed)


def ground_truth_mdp(spec: EnvSpec, gamma: float) -> TabularMdp:
    P, R = make_env(spec, 0).transition_model()
    return TabularMdp(P, R, gamma)


def optimal_policy_and_value(spec: EnvSpec, gamma: float, tol: float = 1e-9):
    return policy_iteration(ground_truth_mdp(spec, gamma), tol=tol)


def optimal_action_mask(spec: EnvSpec, gamma: float, atol: float = 1e-7) -> np.ndarray:
    """Boolean (S, A) mask of actions whose optimal Q-value is within ``atol`` of the best."""
    mdp = ground_truth_mdp(spec, gamma)
    V, _ = policy_iteration(mdp, tol=1e-10)
    Q = q_values(mdp, V)
    return Q >= Q.max(axis=1, keepdims=True) - atol


def default_t_max(spec: EnvSpec) -> int | None:
    """Step budget after which a solve-style run counts as failed."""
    if spec.kind is EnvKind.DEEPSEA:
        return 50 * spec.size**2
    if spec.kind is EnvKind.LAZYCHAIN:
        return 1000 * spec.size
    return None


DEFAULT_GAMMA = {
    EnvKind.CHAIN: 0.95,
    EnvKind.LOOP: 0.95,
    EnvKind.DEEPSEA: 0.99,
    EnvKind.LAZYCHAIN: 0.999,
    EnvKind.BANDIT: 0.0,
}
