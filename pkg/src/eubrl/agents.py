"""Model-based agents that differ only in the MDP they plan on.

Every agent keeps a :class:`BeliefState` (the frequentist baselines only read
its counts and sample means), rebuilds a planning MDP on its replan schedule
and acts greedily with respect to the solution.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .belief import BeliefState, Prior, UncertaintyConfig
from .planner import TabularMdp, q_values, solve


class AgentKind(str, enum.Enum):
    EUBRL = "eubrl"
    MEAN_MDP = "mean_mdp"
    BEB = "beb"
    VBRB = "vbrb"
    MBIE_EB = "mbie_eb"
    RMAX = "rmax"
    PSRL = "psrl"


TIE_BREAKS = ("lowest", "random")
SOLVERS = ("value_iteration", "policy_iteration")


@dataclass(frozen=True)
class AgentParams:
    """Per-kind knobs; fields a kind does not use are ignored.

    ``r_max`` is the reward assigned to unknown pairs by RMAX and MBIE-EB.
    ``resample_period`` only matters for PSRL in continuing tasks and
    defaults to ceil(1 / (1 - gamma)).
    """

    kind: AgentKind = AgentKind.EUBRL
    bonus: float = 1.0
    m: int = 1
    r_max: float = 1.0
    resample_period: int | None = None
    tie_break: str = "lowest"
    replan_period: int = 1
    solver: str = "value_iteration"
    tol: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "kind", AgentKind(self.kind))
        if self.tie_break not in TIE_BREAKS:
            raise ValueError(f"tie_break must be one of {TIE_BREAKS}")
        if self.solver not in SOLVERS:
            raise ValueError(f"solver must be one of {SOLVERS}")
        if self.m < 1:
            raise ValueError("knowness m must be >= 1")
        if self.replan_period < 1:
            raise ValueError("replan_period must be >= 1")
        if self.resample_period is not None and self.resample_period < 1:
            raise ValueError("resample_period must be >= 1")


def eubrl_reward(r_b, e_total, p_u):
    """Blend of exploitation and exploration reward weighted by the probability of uncertainty."""
    return (1.0 - p_u) * r_b + p_u * e_total


def _self_loops(n_states: int, n_actions: int) -> np.ndarray:
    P = np.zeros((n_states, n_actions, n_states))
    P[np.arange(n_states), :, np.arange(n_states)] = 1.0
    return P


class Agent:
    kind: AgentKind

    def __init__(
        self,
        n_states: int,
        n_actions: int,
        gamma: float,
        params: AgentParams | None = None,
        prior: Prior | None = None,
        uncertainty: UncertaintyConfig | None = None,
        tied_dest=None,
        episodic: bool = False,
        seed=None,
    ):
        self.params = params or AgentParams(kind=self.kind)
        self.gamma = float(gamma)
        self.episodic = episodic
        self.rng = np.random.default_rng(seed)
        self.belief = BeliefState(n_states, n_actions, prior, uncertainty, tied_dest)
        self.n_states = n_states
        self.n_actions = n_actions
        self.t = 0
        self.V = None
        self.policy = None
        self.Q = None
        self.n_replans = 0
        self.replan()

    # -- planning ---------------------------------------------------------

    def build_planning_mdp(self) -> TabularMdp:
        raise NotImplementedError

    def replan(self) -> None:
        mdp = self.build_planning_mdp()
        V, _ = solve(mdp, self.params.solver, self.params.tol, v0=self.V, policy0=self.policy)
        self.Q = q_values(mdp, V)
        self.V = V
        if self.params.tie_break == "random":
            self.policy = self._random_ties(self.Q)
        else:
            self.policy = np.argmax(self.Q, axis=1)
        self.n_replans += 1

    def _random_ties(self, Q):
        best = Q.max(axis=1, keepdims=True)
        ties = Q >= best - 1e-12 * (1.0 + np.abs(best))
        if Q.shape[1] == 1 or not ties.sum(axis=1).max() > 1:
            return np.argmax(Q, axis=1)
        # pick uniformly among the tied actions of every state
        u = self.rng.random(Q.shape) * ties
        return np.argmax(u, axis=1)

    def should_replan(self, episode_end: bool) -> bool:
        if self.episodic:
            return episode_end
        return self.t % self.params.replan_period == 0

    # -- interaction ------------------------------------------------------

    def act(self, s: int) -> int:
        return int(self.policy[s])

    def observe(self, s: int, a: int, s_next: int, r: float, episode_end: bool = False) -> bool:
        """Absorb one transition; returns whether the policy was recomputed."""
        self.belief.update(s, a, s_next, r)
        self.t += 1
        if self.should_replan(episode_end):
            self.replan()
            return True
        return False


class EubrlAgent(Agent):
    kind = AgentKind.EUBRL

    def build_planning_mdp(self):
        b = self.belief
        R = eubrl_reward(b.predictive_reward_means(), b.epistemic_totals(), b.p_uncertain_all())
        return TabularMdp.trusted(b.predictive_transitions(), R, self.gamma)


class MeanMdpAgent(Agent):
    kind = AgentKind.MEAN_MDP

    def build_planning_mdp(self):
        b = self.belief
        return TabularMdp.trusted(b.predictive_transitions(), b.predictive_reward_means(), self.gamma)


class BebAgent(Agent):
    """Predictive transitions, sample-mean rewards and a 1/(1 + n + sum(alpha)) bonus."""

    kind = AgentKind.BEB

    def build_planning_mdp(self):
        b = self.belief
        alpha_sum = b.prior.alpha * b.n_states
        R = b.empirical_rewards() + self.params.bonus / (1.0 + b.counts.n_sa + alpha_sum)
        return TabularMdp.trusted(b.predictive_transitions(), R, self.gamma)


class VbrbAgent(Agent):
    """Posterior mean reward plus the combined uncertainty as an additive bonus."""

    kind = AgentKind.VBRB

    def build_planning_mdp(self):
        b = self.belief
        return TabularMdp.trusted(b.predictive_transitions(), b.predictive_reward_means() + b.epistemic_totals(), self.gamma)


class MbieEbAgent(Agent):
    """Empirical model with a bonus/sqrt(n) reward bonus.

    Unvisited pairs become self-loops paying ``r_max`` so their planning
    value is r_max / (1 - gamma).
    """

    kind = AgentKind.MBIE_EB

    def build_planning_mdp(self):
        b = self.belief
        n = b.counts.n_sa
        visited = n > 0
        R = b.empirical_rewards() + self.params.bonus / np.sqrt(np.maximum(n, 1))
        R = np.where(visited, R, self.params.r_max)
        P = np.where(visited[..., None], b.empirical_transitions(), _self_loops(b.n_states, b.n_actions))
        return TabularMdp.trusted(P, R, self.gamma)


class RmaxAgent(Agent):
    """Empirical model on pairs visited at least m times, r_max self-loops elsewhere.

    A pair's model is frozen at the visit that makes it known, so the
    planning MDP only changes when some pair crosses the threshold.
    """

    kind = AgentKind.RMAX

    def __init__(self, n_states, n_actions, *args, **kwargs):
        self._P = _self_loops(n_states, n_actions)
        self._R = None
        self._known = np.zeros((n_states, n_actions), dtype=bool)
        self._crossed = False
        super().__init__(n_states, n_actions, *args, **kwargs)

    def known(self) -> np.ndarray:
        return self._known.copy()

    def build_planning_mdp(self):
        if self._R is None:
            self._R = np.full((self.n_states, self.n_actions), self.params.r_max)
        return TabularMdp.trusted(self._P, self._R, self.gamma)

    def observe(self, s, a, s_next, r, episode_end=False):
        self.belief.update(s, a, s_next, r)
        self.t += 1
        n = self.belief.counts.n_sa[s, a]
        if n == self.params.m:
            b = self.belief
            self._P[s, a] = b.counts.n_sas[s, a] / n
            self._R[s, a] = (b.rew_n[s, a] * b.rew_mean[s, a]).sum() / n
            self._known[s, a] = True
            self._crossed = True
        if self._crossed and Agent.should_replan(self, episode_end):
            self._crossed = False
            self.replan()
            return True
        return False


class PsrlAgent(Agent):
    """Plans on one posterior sample, redrawn each episode or every resample period."""

    kind = AgentKind.PSRL

    @property
    def resample_period(self) -> int:
        if self.params.resample_period is not None:
            return self.params.resample_period
        return max(1, math.ceil(1.0 / (1.0 - self.gamma)))

    def build_planning_mdp(self):
        return self.belief.sample_model(self.rng, self.gamma)

    def should_replan(self, episode_end):
        if self.episodic:
            return episode_end
        return self.t % self.resample_period == 0


_AGENTS = {
    cls.kind: cls
    for cls in (EubrlAgent, MeanMdpAgent, BebAgent, VbrbAgent, MbieEbAgent, RmaxAgent, PsrlAgent)
}


def make_agent(
    n_states: int,
    n_actions: int,
    gamma: float,
    params: AgentParams,
    prior: Prior | None = None,
    uncertainty: UncertaintyConfig | None = None,
    tied_dest=None,
    episodic: bool = False,
    seed=None,
) -> Agent:
    cls = _AGENTS[params.kind]
    return cls(n_states, n_actions, gamma, params, prior, uncertainty, tied_dest, episodic, seed)
