"""Numerical checks of the identities, rate bounds and constructions behind the method.

Each check is deterministic given its seed and returns a :class:`CheckReport`
that serialises to JSON.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import lambertw

from .agents import AgentKind, AgentParams, make_agent
from .belief import (
    BeliefState,
    Prior,
    RewardModel,
    UncertaintyConfig,
    UncertaintyMode,
    beta_variance,
    dirichlet_mean,
    dirichlet_mutual_info,
    dirichlet_variance,
    normal_gamma_epistemic,
    normal_gamma_posterior,
)
from .envs import EnvSpec, make_env


class ConstructionError(ValueError):
    """Parameters violate a precondition of the bandit construction."""


@dataclass
class CheckReport:
    name: str
    passed: bool
    measured: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    counterexample: dict | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True, default=_jsonable)


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(type(x))


# -- posterior-mean decompositions ------------------------------------------------


def check_transition_decomposition(trials: int = 1000, seed: int = 0, tol: float = 1e-12) -> CheckReport:
    """P_b - P = n/(n+a0) (P_hat - P) + a0/(n+a0) (P_b0 - P) on random instances."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    bad = None
    for i in range(trials):
        S = int(rng.integers(2, 11))
        alpha = np.exp(rng.uniform(np.log(1e-3), np.log(10.0), S))
        P = rng.dirichlet(np.ones(S))
        counts = rng.multinomial(int(rng.integers(0, 60)) if i % 10 else 0, P).astype(float)
        n, a0 = counts.sum(), alpha.sum()
        p_hat = counts / max(n, 1.0)
        lhs = dirichlet_mean(alpha + counts) - P
        rhs = n / (n + a0) * (p_hat - P) + a0 / (n + a0) * (dirichlet_mean(alpha) - P)
        err = float(np.abs(lhs - rhs).max())
        if err > worst:
            worst = err
            if err > tol:
                bad = {"alpha": alpha, "P": P, "counts": counts, "error": err}
    return CheckReport(
        "transition_decomposition", worst <= tol, {"max_error": worst, "trials": trials}, {"abs": tol}, bad
    )


def _posterior_mean_from_stream(prior: Prior, rewards) -> float:
    b = BeliefState(1, 1, prior)
    for r in rewards:
        b.update(0, 0, 0, r)
    return b.reward_posterior_means()[0, 0, 0]


def check_reward_decomposition(trials: int = 1000, seed: int = 0, tol: float = 1e-12) -> CheckReport:
    """Prior/data split of the posterior mean reward for Normal-Normal and Normal-Gamma beliefs."""
    rng = np.random.default_rng(seed)
    worst = {"normal": 0.0, "normal_gamma": 0.0}
    bad = None
    for i in range(trials):
        r_true = rng.uniform(-5, 5)
        n = int(rng.integers(0, 40)) if i % 10 else 0
        mu0 = rng.uniform(-5, 5)
        tau0, tau = np.exp(rng.uniform(-3, 3, 2))
        data = r_true + rng.standard_normal(n) / math.sqrt(tau)
        r_hat = float(np.mean(data)) if n else 0.0

        rb = _posterior_mean_from_stream(Prior(reward_model=RewardModel.NORMAL, mu0=mu0, tau0=tau0, tau=tau), data)
        rhs = tau0 / (tau0 + n * tau) * (mu0 - r_true) + n * tau / (tau0 + n * tau) * (r_hat - r_true)
        err_nn = abs((rb - r_true) - rhs)

        lam0 = float(np.exp(rng.uniform(-3, 3)))
        rb = _posterior_mean_from_stream(Prior(mu0=mu0, lambda0=lam0, beta0=1.0, alpha0=2.0), data)
        rhs = lam0 / (lam0 + n) * (mu0 - r_true) + n / (lam0 + n) * (r_hat - r_true)
        err_ng = abs((rb - r_true) - rhs)

        for key, err in (("normal", err_nn), ("normal_gamma", err_ng)):
            if err > worst[key]:
                worst[key] = err
                if err > tol:
                    bad = {"model": key, "mu0": mu0, "n": n, "data": data, "error": err}
    return CheckReport(
        "reward_decomposition",
        max(worst.values()) <= tol,
        {"max_error": worst, "trials": trials},
        {"abs": tol},
        bad,
    )


# -- rates ------------------------------------------------------------------------


def dirichlet_lower_constant(alpha0: float, alpha_j: float) -> float:
    return 2.0 * (alpha0 - alpha_j) / ((1.0 + alpha0) ** 2 * (2.0 + alpha0))


def check_uncertainty_rates(n_max: int = 10_000, seed: int = 0) -> CheckReport:
    """Upper O(1/n) and lower O(1/n^2) envelopes over n = 1..n_max.

    * Dirichlet: n E_T <= 1 on random streams and the single-outcome stream;
      n^2 E_T >= 2 (a0 - a_j) / ((1 + a0)^2 (2 + a0)) on the single-outcome stream.
    * Normal-Normal: n E in [1/(tau0 + tau), 1/tau].
    * Normal-Gamma: with rewards in [0, 1], n E <= max((beta0 + lambda0/2)/(alpha0 - 1), 1/4);
      with a constant reward equal to mu0, n^2 E >= beta0 / ((lambda0 + 1)(alpha0 - 1/2)).
    """
    rng = np.random.default_rng(seed)
    n = np.arange(1, n_max + 1, dtype=float)
    measured, failures = {}, []

    for S, alpha in ((2, 1.0), (3, 0.1), (5, 1.0), (10, 0.5), (4, 1e-3)):
        params = np.full((n_max, S), alpha)
        params[:, 0] += n
        e_single = dirichlet_variance(params)
        counts = np.cumsum(rng.multinomial(1, rng.dirichlet(np.ones(S)), n_max), axis=0)
        e_random = dirichlet_variance(alpha + counts)
        c1 = dirichlet_lower_constant(S * alpha, alpha)
        key = f"dirichlet_S{S}_alpha{alpha:g}"
        measured[key] = {
            "max_n_E": float(max((n * e_single).max(), (n * e_random).max())),
            "min_n2_E": float((n**2 * e_single).min()),
            "C1": c1,
        }
        if measured[key]["max_n_E"] > 1.0:
            failures.append(key + " upper")
        if measured[key]["min_n2_E"] < c1:
            failures.append(key + " lower")

    for tau0, tau in ((1.0, 1.0), (1.0, 2.0), (0.01, 5.0), (10.0, 0.1)):
        e = 1.0 / (tau0 + tau * n)
        key = f"normal_tau0{tau0:g}_tau{tau:g}"
        lo, hi = 1.0 / (tau0 + tau), 1.0 / tau
        measured[key] = {"min_n_E": float((n * e).min()), "max_n_E": float((n * e).max()), "bounds": [lo, hi]}
        if (n * e).min() < lo or (n * e).max() > hi:
            failures.append(key)

    for lam0, a0, b0 in ((1.0, 2.0, 1.0), (0.1, 2.0, 0.1), (1e-3, 1.5, 1e-3), (5.0, 3.0, 2.0)):
        key = f"normal_gamma_lambda{lam0:g}_alpha{a0:g}_beta{b0:g}"
        # constant reward at the prior mean: zero sample variance, zero mean shift
        _, lam, alpha, beta = normal_gamma_posterior(n, 0.0, 0.0, 0.0, lam0, a0, b0)
        e_det = normal_gamma_epistemic(lam, alpha, beta)
        c1 = b0 / ((lam0 + 1.0) * (a0 - 0.5))
        # bounded random rewards, running mean and squared deviations
        r = rng.random(n_max)
        mean = np.cumsum(r) / n
        m2 = np.cumsum(r**2) - n * mean**2
        _, lam, alpha, beta = normal_gamma_posterior(n, mean, np.maximum(m2, 0.0), 0.0, lam0, a0, b0)
        e_rand = normal_gamma_epistemic(lam, alpha, beta)
        c2 = max((b0 + lam0 / 2.0) / (a0 - 1.0), 0.25)
        measured[key] = {
            "min_n2_E_deterministic": float((n**2 * e_det).min()),
            "C1": c1,
            "max_n_E": float(max((n * e_det).max(), (n * e_rand).max())),
            "C2": c2,
        }
        if measured[key]["min_n2_E_deterministic"] < c1:
            failures.append(key + " lower")
        if measured[key]["max_n_E"] > c2:
            failures.append(key + " upper")

    return CheckReport(
        "uncertainty_rates",
        not failures,
        measured,
        {"n_max": n_max},
        {"failed": failures} if failures else None,
    )


def check_beta_variance_monotone(streams: int = 10_000, length: int = 50, seed: int = 0) -> CheckReport:
    """Does Beta(a, a) posterior variance shrink after every Bernoulli observation?

    The first observation always shrinks it. Later observations need not:
    Beta(10, 1) -> Beta(10, 2) raises the variance, so long streams produce
    counterexamples and this check is expected to fail.
    """
    rng = np.random.default_rng(seed)
    first_ok = True
    bad = None
    n_up = 0
    for i in range(streams):
        a = float(np.exp(rng.uniform(-3, 3)))
        x = rng.random(length) < rng.random()
        s = np.concatenate([[0], np.cumsum(x)])
        f = np.arange(length + 1) - s
        v = beta_variance(a + s, a + f)
        first_ok &= bool(v[1] < v[0])
        up = np.flatnonzero(np.diff(v) > 0)
        if up.size:
            n_up += 1
            if bad is None:
                k = int(up[0])
                bad = {"a": a, "step": k + 1, "before": [a + s[k], a + f[k]], "after": [a + s[k + 1], a + f[k + 1]]}
    return CheckReport(
        "beta_variance_monotone",
        n_up == 0,
        {"streams": streams, "streams_with_increase": n_up, "first_step_always_decreases": first_ok},
        {},
        bad,
    )


# -- mutual information --------------------------------------------------------------


def monte_carlo_mutual_info(params, samples: int, rng) -> tuple[float, float]:
    """Mean and standard error of KL(Cat(w) || Cat(mean)) for w ~ Dir(params)."""
    params = np.asarray(params, dtype=float)
    mean = params / params.sum()
    w = rng.dirichlet(params, size=samples)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(w > 0, w * (np.log(w) - np.log(mean)), 0.0)
    kl = terms.sum(axis=1)
    return float(kl.mean()), float(kl.std(ddof=1) / math.sqrt(samples))


def check_mi_closed_form(trials: int = 100, samples: int = 1_000_000, seed: int = 0) -> CheckReport:
    """Closed-form Dirichlet mutual information against Monte-Carlo KL, within 3 standard errors."""
    rng = np.random.default_rng(seed)
    worst_z = 0.0
    bad = None
    nonneg = True
    for _ in range(trials):
        K = int(rng.integers(2, 6))
        params = np.exp(rng.uniform(np.log(0.05), np.log(20.0), K))
        exact = float(dirichlet_mutual_info(params))
        nonneg &= exact >= 0
        est, se = monte_carlo_mutual_info(params, samples, rng)
        z = abs(exact - est) / se
        if z > worst_z:
            worst_z = z
            if z > 3:
                bad = {"params": params, "closed_form": exact, "monte_carlo": est, "se": se}
    ref = float(dirichlet_mutual_info([1.0, 1.0]))
    concentrated = float(dirichlet_mutual_info(np.full(3, 1e4)))
    passed = worst_z <= 3 and nonneg and abs(ref - 0.19315) <= 1e-3 and concentrated < 1e-3
    return CheckReport(
        "mi_closed_form",
        passed,
        {"max_z": worst_z, "dir11": ref, "concentrated_1e4": concentrated, "trials": trials, "samples": samples},
        {"z": 3.0, "dir11_abs": 1e-3},
        bad,
    )


# -- epistemic resistance ------------------------------------------------------------


def resistance_violations(p_u, e_max: float) -> list[int]:
    """Prefix lengths T at which sum_{t<=T} P_U < 1 + (2 / E_max)(sqrt(T) - 1)."""
    p_u = np.asarray(p_u, dtype=float)
    T = np.arange(1, p_u.size + 1)
    lhs = np.cumsum(p_u)
    rhs = 1.0 + (2.0 / e_max) * (np.sqrt(T) - 1.0)
    return (T[lhs < rhs - 1e-12]).tolist()


RESISTANCE_ENVS = (
    EnvSpec("chain"),
    EnvSpec("loop", size=2),
    EnvSpec("deepsea", size=4),
    EnvSpec("deepsea", size=5, stochastic=True),
    EnvSpec("lazychain", size=5),
    EnvSpec("lazychain", size=4, stochastic=True),
    EnvSpec("bandit"),
)


def count_mode_trajectory(spec: EnvSpec, steps: int, seed: int, gamma: float = 0.9):
    """P_U of every visited pair for an EUBRL agent in count-based mode, with E_max."""
    ss_env, ss_agent = np.random.SeedSequence(seed).spawn(2)
    env = make_env(spec, ss_env)
    agent = make_agent(
        env.n_states,
        env.n_actions,
        gamma,
        AgentParams(kind=AgentKind.EUBRL, tie_break="random"),
        Prior(),
        UncertaintyConfig(mode=UncertaintyMode.COUNT_BASED),
        episodic=env.episodic,
        seed=ss_agent,
    )
    s = env.reset()
    p_u = []
    for _ in range(steps):
        a = agent.act(s)
        p_u.append(agent.belief.p_uncertain(s, a))
        step = env.step(a)
        agent.observe(s, a, step.next_state, step.reward, episode_end=step.terminated)
        s = env.reset() if step.terminated else step.next_state
    return np.array(p_u), agent.belief.e_max


def check_resistance_lower_bound(trajectories: int = 100, steps: int = 200, seed: int = 0) -> CheckReport:
    worst_margin = math.inf
    bad = None
    for i in range(trajectories):
        spec = RESISTANCE_ENVS[i % len(RESISTANCE_ENVS)]
        p_u, e_max = count_mode_trajectory(spec, steps, seed * 100_003 + i)
        T = np.arange(1, steps + 1)
        margin = float((np.cumsum(p_u) - (1.0 + (2.0 / e_max) * (np.sqrt(T) - 1.0))).min())
        worst_margin = min(worst_margin, margin)
        violations = resistance_violations(p_u, e_max)
        if violations and bad is None:
            bad = {"env": spec.kind.value, "trajectory": i, "first_violation_T": violations[0]}
    return CheckReport(
        "resistance_lower_bound",
        bad is None,
        {"min_margin": worst_margin, "trajectories": trajectories, "steps": steps},
        {"abs": 1e-12},
        bad,
    )


# -- prior mismatch bandit -------------------------------------------------------------


def prior_mismatch_thresholds(mu2: float, eta_conf: float) -> tuple[float, float, float]:
    """(C, a1, a2) for a Bernoulli(mu2) arm; a symmetric prior above max(a1, a2) makes sticking likely."""
    if not mu2 > 5.0 / 16.0:
        raise ConstructionError(f"the construction needs mu2 > 5/16, got {mu2}")
    if not 0 < eta_conf < 1:
        raise ConstructionError("confidence level must lie in (0, 1)")
    C = (mu2 - 5.0 / 16.0) ** 2
    a1 = math.log(2.0 / (eta_conf * (1.0 - math.exp(-2.0 * C)))) / (2.0 * C) - 1.0
    a2 = float(-(32.0 / 9.0) * lambertw(-9.0 * eta_conf / 64.0, k=-1).real)
    return C, a1, a2


def bandit_sticks(a: float, mu1: float, mu2: float, steps: int, seed: int, eta: float = 1.0) -> bool:
    """Whether an EUBRL agent with Beta(a, a) beliefs pulls the second arm at every step."""
    ss_env, ss_agent = np.random.SeedSequence(seed).spawn(2)
    env = make_env(EnvSpec("bandit", mu1=mu1, mu2=mu2), ss_env)
    agent = make_agent(
        1,
        2,
        0.0,
        AgentParams(kind=AgentKind.EUBRL, tie_break="random"),
        Prior(reward_model=RewardModel.BETA_BERNOULLI, beta_a=a, beta_b=a),
        UncertaintyConfig(eta=eta),
        seed=ss_agent,
    )
    s = env.reset()
    for _ in range(steps):
        act = agent.act(s)
        if act != 1:
            return False
        step = env.step(act)
        agent.observe(s, act, step.next_state, step.reward)
    return True


def run_prior_mismatch_bandit(
    a: float,
    mu1: float = 0.9,
    mu2: float = 0.4,
    eta_conf: float = 0.1,
    seeds: int = 200,
    steps: int = 10_000,
    seed: int = 0,
) -> CheckReport:
    """Fraction of seeds that never leave the worse arm, against (1 - eta_conf)/2 minus 3 sigma."""
    if not mu1 > mu2:
        raise ConstructionError("the first arm must be the better one")
    C, a1, a2 = prior_mismatch_thresholds(mu2, eta_conf)
    stuck = sum(bandit_sticks(a, mu1, mu2, steps, seed * 1_000_003 + i) for i in range(seeds))
    frac = stuck / seeds
    target = 0.5 * (1.0 - eta_conf)
    margin = 3.0 * math.sqrt(target * (1.0 - target) / seeds)
    return CheckReport(
        "prior_mismatch_bandit",
        frac >= target - margin,
        {
            "stick_fraction": frac,
            "stuck": stuck,
            "seeds": seeds,
            "steps": steps,
            "a": a,
            "C": C,
            "a1": a1,
            "a2": a2,
            "above_threshold": math.floor(a) > max(a1, a2),
        },
        {"required": target - margin, "target": target, "margin": margin},
        None if frac >= target - margin else {"stick_fraction": frac},
    )


CHECKS = {
    "transition_decomposition": check_transition_decomposition,
    "reward_decomposition": check_reward_decomposition,
    "uncertainty_rates": check_uncertainty_rates,
    "beta_variance_monotone": check_beta_variance_monotone,
    "mi_closed_form": check_mi_closed_form,
    "resistance_lower_bound": check_resistance_lower_bound,
    "prior_mismatch_bandit": lambda: run_prior_mismatch_bandit(500.0),
}
