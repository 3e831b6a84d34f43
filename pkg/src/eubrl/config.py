"""Experiment configuration, validated from JSON with unknown keys rejected."""
from __future__ import annotations

import json
import os
from importlib import resources
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator

from .agents import AgentKind, AgentParams
from .belief import Prior, RewardModel, UncertaintyConfig, UncertaintyMode
from .envs import DEFAULT_GAMMA, EnvKind, EnvSpec, default_t_max

SEED_OFFSET_ENV = "EUBRL_SEED_OFFSET"
DEFAULT_STEPS = 1000


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class EnvConfig(_Strict):
    kind: EnvKind
    size: int = 0
    stochastic: bool = False
    slip: float = 0.2
    reward_scheme: Literal["table", "classic"] = "table"
    mu1: float = 0.9
    mu2: float = 0.4


class AgentConfig(_Strict):
    kind: AgentKind
    eta: float = 1.0
    # multiply eta by the number of states (uncertainty has to keep pace with rewards that grow with size)
    eta_per_state: bool = False
    bonus: float = 1.0
    m: int = 1
    r_max: float | None = None
    resample_period: int | None = None
    tie_break: Literal["lowest", "random"] = "lowest"


class PriorConfig(_Strict):
    alpha: float = 1.0
    tied: bool = False
    reward_model: RewardModel = RewardModel.NORMAL_GAMMA
    mu0: float = 0.0
    lambda0: float = 1.0
    alpha0: float = 2.0
    beta0: float = 1.0
    tau0: float = 1.0
    tau: float = 1.0
    beta_a: float = 1.0
    beta_b: float = 1.0

    def to_prior(self) -> Prior:
        fields = self.model_dump(exclude={"tied"})
        return Prior(**fields)


class RegretConfig(_Strict):
    enabled: bool = False
    stride: int = Field(10, ge=1)


def parse_seeds(value) -> list[int]:
    """Accept a list of ints or a half-open range string "a..b"."""
    if isinstance(value, str):
        lo, sep, hi = value.partition("..")
        if not sep:
            raise ValueError(f"seed range must look like 'a..b', got {value!r}")
        seeds = list(range(int(lo), int(hi)))
    else:
        seeds = [int(s) for s in value]
    if not seeds:
        raise ValueError("seed list is empty")
    return seeds


class ExperimentConfig(_Strict):
    name: str = "experiment"
    env: EnvConfig
    agent: AgentConfig
    prior: PriorConfig = PriorConfig()
    uncertainty: UncertaintyMode = UncertaintyMode.VARIANCE
    gamma: float | None = None
    steps: int | None = None
    t_max: int | None = None
    halt_on_solve: bool | None = None
    success_window: int = Field(5, ge=1)
    replan_period: int = Field(1, ge=1)
    solver: Literal["value_iteration", "policy_iteration"] | None = None
    sizes: list[int] | None = None
    seeds: list[int] | str = "0..20"
    regret: RegretConfig = RegretConfig()
    log_steps: bool = False

    @field_validator("seeds")
    @classmethod
    def _check_seeds(cls, v):
        parse_seeds(v)
        return v

    @field_validator("gamma")
    @classmethod
    def _check_gamma(cls, v):
        if v is not None and not 0.0 <= v < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        return v

    # -- resolution of defaults -------------------------------------------

    def seed_list(self) -> list[int]:
        offset = int(os.environ.get(SEED_OFFSET_ENV, "0") or 0)
        return [s + offset for s in parse_seeds(self.seeds)]

    def size_list(self) -> list[int]:
        return list(self.sizes) if self.sizes else [self.env.size]

    def env_spec(self, size: int | None = None) -> EnvSpec:
        fields = self.env.model_dump()
        if size is not None:
            fields["size"] = size
        return EnvSpec(**fields)

    def resolved_gamma(self) -> float:
        return DEFAULT_GAMMA[self.env.kind] if self.gamma is None else self.gamma

    def resolved_t_max(self, size: int | None = None) -> int | None:
        if self.t_max is not None:
            return self.t_max
        return default_t_max(self.env_spec(size))

    def resolved_steps(self, size: int | None = None) -> int:
        if self.steps is not None:
            return self.steps
        return self.resolved_t_max(size) or DEFAULT_STEPS

    def tracks_success(self) -> bool:
        return self.env.kind in (EnvKind.DEEPSEA, EnvKind.LAZYCHAIN)

    def resolved_halt_on_solve(self) -> bool:
        if self.halt_on_solve is not None:
            return self.halt_on_solve
        return self.tracks_success()

    def resolved_solver(self) -> str:
        if self.solver is not None:
            return self.solver
        return "policy_iteration" if self.resolved_gamma() >= 0.99 else "value_iteration"

    def uncertainty_config(self, n_states: int) -> UncertaintyConfig:
        eta = self.agent.eta * (n_states if self.agent.eta_per_state else 1)
        return UncertaintyConfig(mode=self.uncertainty, eta=eta)

    def agent_params(self, r_max: float) -> AgentParams:
        a = self.agent
        return AgentParams(
            kind=a.kind,
            bonus=a.bonus,
            m=a.m,
            r_max=r_max if a.r_max is None else a.r_max,
            resample_period=a.resample_period,
            tie_break=a.tie_break,
            replan_period=self.replan_period,
            solver=self.resolved_solver(),
        )


def load_config(path) -> ExperimentConfig:
    text = Path(path).read_text(encoding="utf-8")
    return ExperimentConfig.model_validate(json.loads(text))


def packaged_config(name: str) -> ExperimentConfig:
    """One of the tuned configurations shipped in ``eubrl/configs``."""
    ref = resources.files("eubrl") / "configs" / f"{name}.json"
    return ExperimentConfig.model_validate(json.loads(ref.read_text(encoding="utf-8")))


def with_overrides(config: ExperimentConfig, overrides: dict) -> ExperimentConfig:
    """Copy of ``config`` with dotted keys (``"agent.eta"``) replaced."""
    data = config.model_dump(mode="json")
    for key, value in overrides.items():
        node = data
        *parents, leaf = key.split(".")
        for p in parents:
            if not isinstance(node.get(p), dict):
                raise KeyError(f"unknown config section {p!r} in {key!r}")
            node = node[p]
        node[leaf] = value
    return ExperimentConfig.model_validate(data)
