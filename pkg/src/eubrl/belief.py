"""Conjugate beliefs over tabular transitions and rewards.

Transitions get a Dirichlet per (s, a), or, in tied mode, one Dirichlet per
action over next-state *offsets* shared by every state. Rewards are modelled
per (s, a, s') with a Normal-Gamma, a known-precision Normal or a
Beta-Bernoulli posterior, and aggregated to (s, a) through the posterior
predictive transition.

All per-pair quantities are computed for the whole table at once; the scalar
accessors index into the same arrays so the two views never disagree.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.special import digamma

from .planner import TabularMdp

PSRL_DIRICHLET_CLIP = 1e-3


class ConfigurationError(ValueError):
    """Raised for prior settings under which a quantity is undefined."""


class DegeneratePriorError(ValueError):
    """Raised when the maximum epistemic uncertainty is zero."""


class UncertaintyMode(str, enum.Enum):
    VARIANCE = "variance"
    MUTUAL_INFORMATION = "mutual_information"
    COUNT_BASED = "count_based"


class RewardModel(str, enum.Enum):
    NORMAL_GAMMA = "normal_gamma"
    NORMAL = "normal"
    BETA_BERNOULLI = "beta_bernoulli"


@dataclass(frozen=True)
class Prior:
    """Hyperparameters shared by every (s, a) and (s, a, s') model.

    With the defaults (``mu0=0``, ``alpha0=2``, ``lambda0 == beta0``) the
    Normal-Gamma reward uncertainty at the prior is exactly 1.
    """

    alpha: float = 1.0
    reward_model: RewardModel = RewardModel.NORMAL_GAMMA
    mu0: float = 0.0
    lambda0: float = 1.0
    alpha0: float = 2.0
    beta0: float = 1.0
    tau0: float = 1.0
    tau: float = 1.0
    beta_a: float = 1.0
    beta_b: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "reward_model", RewardModel(self.reward_model))
        if not self.alpha > 0:
            raise ConfigurationError(f"Dirichlet alpha must be > 0, got {self.alpha}")
        if self.reward_model is RewardModel.NORMAL_GAMMA:
            if not self.lambda0 > 0 or not self.beta0 > 0:
                raise ConfigurationError("Normal-Gamma needs lambda0 > 0 and beta0 > 0")
            if not self.alpha0 > 1:
                raise ConfigurationError(
                    f"Normal-Gamma alpha0 must exceed 1 for a finite variance, got {self.alpha0}"
                )
        elif self.reward_model is RewardModel.NORMAL:
            if not self.tau0 > 0 or not self.tau > 0:
                raise ConfigurationError("Normal model needs tau0 > 0 and tau > 0")
        elif not self.beta_a > 0 or not self.beta_b > 0:
            raise ConfigurationError("Beta prior parameters must be > 0")


@dataclass(frozen=True)
class UncertaintyConfig:
    mode: UncertaintyMode = UncertaintyMode.VARIANCE
    eta: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "mode", UncertaintyMode(self.mode))
        if self.eta < 0:
            raise ConfigurationError(f"eta must be >= 0, got {self.eta}")


# -- closed forms -------------------------------------------------------------
# Every function below works on the last axis, so it accepts one parameter
# vector or a whole (S, A, S) table.


def dirichlet_mean(params):
    params = np.asarray(params, dtype=float)
    return params / params.sum(axis=-1, keepdims=True)


def dirichlet_variance(params):
    """Sum over components of Var(theta_k) under Dir(params)."""
    params = np.asarray(params, dtype=float)
    total = params.sum(axis=-1)
    spread = (params * (total[..., None] - params)).sum(axis=-1)
    return spread / (total**2 * (total + 1.0))


def dirichlet_mutual_info(params):
    """E_w[KL(Cat(w) || Cat(mean))] for w ~ Dir(params)."""
    params = np.asarray(params, dtype=float)
    total = params.sum(axis=-1, keepdims=True)
    p = params / total
    terms = p * (digamma(params + 1.0) - digamma(total + 1.0) - np.log(p))
    # exact value is >= 0; clip rounding noise
    return np.maximum(terms.sum(axis=-1), 0.0)


def normal_gamma_posterior(n, mean, m2, mu0, lambda0, alpha0, beta0):
    """Posterior (mu, lambda, alpha, beta) from count, sample mean and sum of squared deviations."""
    lam = lambda0 + n
    mu = (lambda0 * mu0 + n * mean) / lam
    alpha = alpha0 + 0.5 * n
    beta = beta0 + 0.5 * (m2 + lambda0 * n * (mean - mu0) ** 2 / lam)
    return mu, lam, alpha, beta


def normal_gamma_epistemic(lam, alpha, beta):
    """Variance of the posterior mean parameter, beta / (lambda (alpha - 1))."""
    alpha = np.asarray(alpha, dtype=float)
    if np.any(alpha <= 1):
        raise ConfigurationError("Normal-Gamma epistemic variance needs alpha > 1")
    return beta / (lam * (alpha - 1.0))


def beta_variance(a, b):
    s = a + b
    return a * b / (s * s * (s + 1.0))


def probability_of_uncertainty(e_total, e_max, eta=1.0):
    """E / E_max clipped to [0, 1]; identically zero when guidance is switched off (eta == 0)."""
    e_total = np.asarray(e_total, dtype=float)
    if eta == 0:
        return np.zeros_like(e_total)
    if not e_max > 0:
        raise DegeneratePriorError(
            "maximum epistemic uncertainty is zero; the prior carries no uncertainty to normalise by"
        )
    return np.clip(e_total / e_max, 0.0, 1.0)


@dataclass
class CountTable:
    """Visit counts N(s, a) and N(s, a, s') observed so far."""

    n_sa: np.ndarray
    n_sas: np.ndarray

    @classmethod
    def zeros(cls, n_states: int, n_actions: int) -> "CountTable":
        return cls(
            np.zeros((n_states, n_actions), dtype=np.int64),
            np.zeros((n_states, n_actions, n_states), dtype=np.int64),
        )

    def add(self, s: int, a: int, s_next: int) -> None:
        self.n_sa[s, a] += 1
        self.n_sas[s, a, s_next] += 1

    @property
    def total(self) -> int:
        return int(self.n_sa.sum())


class BeliefState:
    """Posterior over an unknown tabular MDP.

    ``tied_dest``, when given, is an integer table of shape (S, K): entry
    ``[s, k]`` is the state reached from ``s`` by offset ``k``. Each action
    then owns a single Dirichlet over the K offsets, updated by transitions
    from every state.
    """

    def __init__(
        self,
        n_states: int,
        n_actions: int,
        prior: Prior | None = None,
        uncertainty: UncertaintyConfig | None = None,
        tied_dest=None,
    ):
        if n_states < 1 or n_actions < 1:
            raise ConfigurationError("need at least one state and one action")
        self.n_states = int(n_states)
        self.n_actions = int(n_actions)
        self.prior = prior or Prior()
        self.uncertainty = uncertainty or UncertaintyConfig()
        self.counts = CountTable.zeros(self.n_states, self.n_actions)

        S, A = self.n_states, self.n_actions
        if tied_dest is None:
            self.tied_dest = None
            self.dir_counts = np.zeros((S, A, S))
        else:
            dest = np.asarray(tied_dest, dtype=np.int64)
            if dest.ndim != 2 or dest.shape[0] != S:
                raise ConfigurationError(f"tied_dest must have shape (S, K), got {dest.shape}")
            if dest.min() < 0 or dest.max() >= S:
                raise ConfigurationError("tied_dest refers to states outside the state space")
            self.tied_dest = dest
            self.dir_counts = np.zeros((A, dest.shape[1]))

        # per-(s, a, s') running reward statistics (Welford)
        self.rew_n = np.zeros((S, A, S))
        self.rew_mean = np.zeros((S, A, S))
        self.rew_m2 = np.zeros((S, A, S))

        self._cache: dict = {}
        # 1/sqrt(N) never exceeds its value at N = 1
        self._e_max = 1.0 if self.uncertainty.mode is UncertaintyMode.COUNT_BASED else 0.0
        self.epistemic_totals()

    @property
    def e_max(self) -> float:
        """Running maximum of the combined uncertainty, starting from its prior value.

        Refreshed lazily: the table is recomputed on first read after an update,
        which is before any uncertainty value can be handed out.
        """
        self.epistemic_totals()
        return self._e_max

    # -- updates ----------------------------------------------------------

    def _check_pair(self, s, a):
        if not (0 <= s < self.n_states and 0 <= a < self.n_actions):
            raise IndexError(f"(s={s}, a={a}) outside {self.n_states}x{self.n_actions}")

    def update(self, s: int, a: int, s_next: int, r: float) -> None:
        self._check_pair(s, a)
        if not 0 <= s_next < self.n_states:
            raise IndexError(f"next state {s_next} outside state space of size {self.n_states}")
        r = float(r)
        if not np.isfinite(r):
            raise ValueError(f"reward must be finite, got {r}")

        if self.tied_dest is None:
            self.dir_counts[s, a, s_next] += 1.0
        else:
            hits = np.flatnonzero(self.tied_dest[s] == s_next)
            if hits.size == 0:
                raise ValueError(f"transition {s}->{s_next} has no offset in the tied encoding")
            self.dir_counts[a, hits[0]] += 1.0
        self.counts.add(s, a, s_next)

        n = self.rew_n[s, a, s_next] + 1.0
        delta = r - self.rew_mean[s, a, s_next]
        self.rew_mean[s, a, s_next] += delta / n
        self.rew_m2[s, a, s_next] += delta * (r - self.rew_mean[s, a, s_next])
        self.rew_n[s, a, s_next] = n

        self._cache.clear()

    # -- posterior parameters ---------------------------------------------

    def dirichlet_params(self) -> np.ndarray:
        """Effective Dirichlet parameters over next states, shape (S, A, S)."""
        if "dir" not in self._cache:
            if self.tied_dest is None:
                params = self.prior.alpha + self.dir_counts
            else:
                S, A = self.n_states, self.n_actions
                shared = self.prior.alpha + self.dir_counts  # (A, K)
                params = np.zeros((S, A, S))
                rows = np.arange(S)
                for k in range(self.tied_dest.shape[1]):
                    params[rows, :, self.tied_dest[:, k]] += shared[:, k]
            self._cache["dir"] = params
        return self._cache["dir"]

    def reward_posterior_means(self) -> np.ndarray:
        """Posterior mean of the reward mean for every (s, a, s')."""
        if "rmean" not in self._cache:
            p, n, mean = self.prior, self.rew_n, self.rew_mean
            if p.reward_model is RewardModel.NORMAL_GAMMA:
                out = (p.lambda0 * p.mu0 + n * mean) / (p.lambda0 + n)
            elif p.reward_model is RewardModel.NORMAL:
                out = (p.tau0 * p.mu0 + p.tau * n * mean) / (p.tau0 + n * p.tau)
            else:
                out = (p.beta_a + n * mean) / (p.beta_a + p.beta_b + n)
            self._cache["rmean"] = out
        return self._cache["rmean"]

    def reward_epistemic_sas(self) -> np.ndarray:
        """Epistemic variance of the reward mean for every (s, a, s')."""
        if "rvar" not in self._cache:
            p, n = self.prior, self.rew_n
            if p.reward_model is RewardModel.NORMAL_GAMMA:
                _, lam, alpha, beta = normal_gamma_posterior(
                    n, self.rew_mean, self.rew_m2, p.mu0, p.lambda0, p.alpha0, p.beta0
                )
                out = normal_gamma_epistemic(lam, alpha, beta)
            elif p.reward_model is RewardModel.NORMAL:
                out = 1.0 / (p.tau0 + p.tau * n)
            else:
                succ = n * self.rew_mean
                out = beta_variance(p.beta_a + succ, p.beta_b + n - succ)
            self._cache["rvar"] = out
        return self._cache["rvar"]

    # -- whole-table views --------------------------------------------------

    def predictive_transitions(self) -> np.ndarray:
        if "P" not in self._cache:
            self._cache["P"] = dirichlet_mean(self.dirichlet_params())
        return self._cache["P"]

    def predictive_reward_means(self) -> np.ndarray:
        if "R" not in self._cache:
            self._cache["R"] = (self.predictive_transitions() * self.reward_posterior_means()).sum(-1)
        return self._cache["R"]

    def epistemic_transitions(self) -> np.ndarray:
        if "ET" not in self._cache:
            self._cache["ET"] = dirichlet_variance(self.dirichlet_params())
        return self._cache["ET"]

    def mutual_info_transitions(self) -> np.ndarray:
        if "MI" not in self._cache:
            self._cache["MI"] = dirichlet_mutual_info(self.dirichlet_params())
        return self._cache["MI"]

    def epistemic_rewards(self) -> np.ndarray:
        if "ER" not in self._cache:
            self._cache["ER"] = (self.predictive_transitions() * self.reward_epistemic_sas()).sum(-1)
        return self._cache["ER"]

    def epistemic_totals(self) -> np.ndarray:
        """Combined uncertainty per (s, a); also advances the running maximum."""
        if "E" not in self._cache:
            mode = self.uncertainty.mode
            if mode is UncertaintyMode.COUNT_BASED:
                n = self.counts.n_sa
                with np.errstate(divide="ignore"):
                    out = np.where(n > 0, 1.0 / np.sqrt(np.maximum(n, 1)), self._e_max)
            else:
                e_t = (
                    self.mutual_info_transitions()
                    if mode is UncertaintyMode.MUTUAL_INFORMATION
                    else self.epistemic_transitions()
                )
                out = self.uncertainty.eta * (np.sqrt(e_t) + np.sqrt(self.epistemic_rewards()))
            self._e_max = max(self._e_max, float(out.max()))
            self._cache["E"] = out
        return self._cache["E"]

    def p_uncertain_all(self) -> np.ndarray:
        if "PU" not in self._cache:
            eta = 1.0 if self.uncertainty.mode is UncertaintyMode.COUNT_BASED else self.uncertainty.eta
            self._cache["PU"] = probability_of_uncertainty(self.epistemic_totals(), self._e_max, eta)
        return self._cache["PU"]

    def empirical_transitions(self) -> np.ndarray:
        """Maximum-likelihood P-hat; uniform rows for unvisited pairs."""
        n_sa = self.counts.n_sa[..., None]
        uniform = np.full(self.counts.n_sas.shape, 1.0 / self.n_states)
        return np.where(n_sa > 0, self.counts.n_sas / np.maximum(n_sa, 1), uniform)

    def empirical_rewards(self) -> np.ndarray:
        """Sample-mean reward per (s, a); zero for unvisited pairs."""
        n_sa = self.counts.n_sa
        total = (self.rew_n * self.rew_mean).sum(-1)
        return np.where(n_sa > 0, total / np.maximum(n_sa, 1), 0.0)

    # -- per-pair accessors -----------------------------------------------

    def predictive_transition(self, s: int, a: int) -> np.ndarray:
        self._check_pair(s, a)
        return self.predictive_transitions()[s, a].copy()

    def predictive_reward_mean(self, s: int, a: int) -> float:
        self._check_pair(s, a)
        return float(self.predictive_reward_means()[s, a])

    def epistemic_transition(self, s: int, a: int) -> float:
        self._check_pair(s, a)
        return float(self.epistemic_transitions()[s, a])

    def mutual_info_transition(self, s: int, a: int) -> float:
        self._check_pair(s, a)
        return float(self.mutual_info_transitions()[s, a])

    def epistemic_reward(self, s: int, a: int) -> float:
        self._check_pair(s, a)
        return float(self.epistemic_rewards()[s, a])

    def epistemic_total(self, s: int, a: int) -> float:
        self._check_pair(s, a)
        return float(self.epistemic_totals()[s, a])

    def p_uncertain(self, s: int, a: int) -> float:
        self._check_pair(s, a)
        return float(self.p_uncertain_all()[s, a])

    # -- posterior sampling -----------------------------------------------

    def sample_model(self, rng: np.random.Generator, gamma: float) -> TabularMdp:
        """Draw one MDP from the posterior (transition rows and reward means)."""
        params = np.maximum(self.dirichlet_params(), PSRL_DIRICHLET_CLIP)
        # Gamma(a) = Gamma(a + 1) * U**(1/a), taken in log space so tiny shapes
        # do not underflow to an all-zero row
        log_g = np.log(rng.standard_gamma(params + 1.0)) + np.log(rng.random(params.shape)) / params
        log_g -= log_g.max(axis=-1, keepdims=True)
        P = np.exp(log_g)
        P /= P.sum(axis=-1, keepdims=True)

        p, n = self.prior, self.rew_n
        if p.reward_model is RewardModel.NORMAL_GAMMA:
            mu, lam, alpha, beta = normal_gamma_posterior(
                n, self.rew_mean, self.rew_m2, p.mu0, p.lambda0, p.alpha0, p.beta0
            )
            precision = rng.gamma(alpha, 1.0 / beta)
            means = mu + rng.standard_normal(mu.shape) / np.sqrt(lam * precision)
        elif p.reward_model is RewardModel.NORMAL:
            prec = p.tau0 + p.tau * n
            means = self.reward_posterior_means() + rng.standard_normal(n.shape) / np.sqrt(prec)
        else:
            succ = n * self.rew_mean
            means = rng.beta(p.beta_a + succ, p.beta_b + n - succ)
        R = (P * means).sum(-1)
        return TabularMdp(P, R, gamma)
