import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eubrl.agents import AgentKind, AgentParams, eubrl_reward, make_agent
from eubrl.belief import Prior, UncertaintyConfig, UncertaintyMode
from eubrl.envs import EnvSpec, make_env, optimal_policy_and_value


def agent_for(kind, S=5, A=2, gamma=0.9, eta=1.0, episodic=False, seed=0, **params):
    return make_agent(
        S, A, gamma, AgentParams(kind=kind, **params), Prior(), UncertaintyConfig(eta=eta), episodic=episodic, seed=seed
    )


def drive(agent, env, steps):
    s = env.reset()
    for _ in range(steps):
        a = agent.act(s)
        step = env.step(a)
        agent.observe(s, a, step.next_state, step.reward, episode_end=step.terminated)
        s = env.reset() if step.terminated else step.next_state
    return agent


# -- the blended reward ----------------------------------------------------------


def test_eubrl_reward_endpoints_and_midpoint():
    assert eubrl_reward(3.0, 0.7, 1.0) == 0.7
    assert eubrl_reward(3.0, 0.7, 0.0) == 3.0
    assert eubrl_reward(2.0, 1.0, 0.5) == 1.5


@given(st.floats(-100, 100), st.floats(0, 100), st.floats(0, 1))
def test_eubrl_reward_is_between_its_inputs(r_b, e, p):
    out = eubrl_reward(r_b, e, p)
    assert min(r_b, e) - 1e-9 <= out <= max(r_b, e) + 1e-9


# -- planning MDPs ---------------------------------------------------------------------


def test_fresh_eubrl_plans_on_pure_uncertainty():
    agent = agent_for(AgentKind.EUBRL)
    mdp = agent.build_planning_mdp()
    np.testing.assert_allclose(mdp.R, agent.belief.epistemic_totals())


def test_eubrl_planning_reward_interpolates_along_a_run():
    env = make_env(EnvSpec("chain", reward_scheme="classic"), seed=3)
    agent = make_agent(5, 2, 0.95, AgentParams(kind="eubrl"), Prior(), UncertaintyConfig(eta=3.0), seed=1)
    s = env.reset()
    for _ in range(200):
        b = agent.belief
        r_b, e = b.predictive_reward_means(), b.epistemic_totals()
        R = agent.build_planning_mdp().R
        assert np.all(R >= np.minimum(r_b, e) - 1e-12) and np.all(R <= np.maximum(r_b, e) + 1e-12)
        a = agent.act(s)
        step = env.step(a)
        agent.observe(s, a, step.next_state, step.reward)
        s = step.next_state


def test_mean_mdp_uses_posterior_means():
    agent = agent_for(AgentKind.MEAN_MDP)
    agent.observe(0, 1, 1, 4.0)
    mdp = agent.build_planning_mdp()
    np.testing.assert_allclose(mdp.R, agent.belief.predictive_reward_means())
    np.testing.assert_allclose(mdp.P, agent.belief.predictive_transitions())


def test_beb_bonus_at_prior():
    agent = agent_for(AgentKind.BEB, bonus=1.0)
    np.testing.assert_allclose(agent.build_planning_mdp().R, 1 / 6)


def test_vbrb_adds_uncertainty_to_mean():
    agent = agent_for(AgentKind.VBRB, eta=2.0)
    agent.observe(0, 0, 1, 1.0)
    b = agent.belief
    np.testing.assert_allclose(agent.build_planning_mdp().R, b.predictive_reward_means() + b.epistemic_totals())


def test_mbie_eb_unvisited_pairs_are_optimistic():
    agent = agent_for(AgentKind.MBIE_EB, gamma=0.9, r_max=10.0, bonus=0.5)
    agent.observe(0, 0, 1, 1.0)
    mdp = agent.build_planning_mdp()
    assert mdp.R[0, 0] == pytest.approx(1.0 + 0.5)
    assert mdp.R[2, 1] == 10.0 and mdp.P[2, 1, 2] == 1.0
    assert agent.V[3] == pytest.approx(10.0 / (1 - 0.9), rel=1e-4)


def test_rmax_single_visit_becomes_known():
    agent = agent_for(AgentKind.RMAX, m=1, r_max=7.0)
    agent.observe(2, 1, 3, 0.5)
    mdp = agent.build_planning_mdp()
    assert agent.known().sum() == 1 and agent.known()[2, 1]
    assert mdp.R[2, 1] == 0.5 and mdp.P[2, 1, 3] == 1.0
    others = ~agent.known()
    assert np.all(mdp.R[others] == 7.0)


def test_rmax_model_changes_only_at_threshold():
    agent = agent_for(AgentKind.RMAX, m=3, r_max=1.0)
    replans = []
    for i in range(6):
        replans.append(agent.observe(0, 0, i % 2, 0.0))
    assert replans == [False, False, True, False, False, False]
    before = agent.known().copy()
    agent.observe(0, 0, 1, 5.0)
    assert np.array_equal(agent.known(), before)
    assert agent.build_planning_mdp().R[0, 0] == 0.0  # frozen at the crossing visit


def test_psrl_samples_from_posterior():
    agent = agent_for(AgentKind.PSRL, seed=4)
    m1 = agent.build_planning_mdp()
    m2 = agent.build_planning_mdp()
    assert not np.array_equal(m1.P, m2.P)
    np.testing.assert_allclose(m1.P.sum(-1), 1.0, atol=1e-12)


def test_psrl_resample_period_default():
    assert agent_for(AgentKind.PSRL, gamma=0.95).resample_period == 20
    assert agent_for(AgentKind.PSRL, gamma=0.95, resample_period=3).resample_period == 3


# -- acting and replanning ----------------------------------------------------------------


def test_fresh_agent_breaks_ties_to_lowest_action():
    assert agent_for(AgentKind.EUBRL, S=1, A=2).act(0) == 0


def test_act_is_idempotent():
    agent = agent_for(AgentKind.EUBRL)
    assert len({agent.act(3) for _ in range(10)}) == 1


def test_random_tie_break_is_fair():
    firsts = [agent_for(AgentKind.EUBRL, S=1, A=2, seed=i, tie_break="random").act(0) for i in range(400)]
    assert 150 < sum(firsts) < 250


def test_infinite_horizon_replans_every_step():
    agent = agent_for(AgentKind.EUBRL)
    flags = [agent.observe(0, 1, 1, 0.0) for _ in range(5)]
    assert all(flags) and agent.n_replans == 6


def test_episodic_replans_only_at_episode_end():
    agent = agent_for(AgentKind.EUBRL, episodic=True)
    policy = agent.policy.copy()
    assert agent.observe(0, 1, 1, 0.0, episode_end=False) is False
    np.testing.assert_array_equal(agent.policy, policy)
    assert agent.observe(1, 1, 0, 0.0, episode_end=True) is True


def test_replan_period():
    agent = agent_for(AgentKind.MEAN_MDP, replan_period=3)
    flags = [agent.observe(0, 1, 1, 0.0) for _ in range(6)]
    assert flags == [False, False, True, False, False, True]


@pytest.mark.parametrize("kind", list(AgentKind))
def test_identical_seeds_identical_policies(kind):
    spec = EnvSpec("chain", reward_scheme="classic")
    policies = []
    for _ in range(2):
        agent = make_agent(5, 2, 0.95, AgentParams(kind=kind, r_max=10.0), Prior(), UncertaintyConfig(eta=2.0), seed=9)
        env = make_env(spec, seed=11)
        s = env.reset()
        trace = []
        for _ in range(150):
            a = agent.act(s)
            step = env.step(a)
            agent.observe(s, a, step.next_state, step.reward)
            s = step.next_state
            trace.append(agent.policy.copy())
        policies.append(np.array(trace))
    np.testing.assert_array_equal(*policies)


def test_zero_eta_eubrl_matches_mean_mdp_exactly():
    spec = EnvSpec("chain", reward_scheme="classic")
    traces = []
    for kind in ("eubrl", "mean_mdp"):
        agent = make_agent(5, 2, 0.95, AgentParams(kind=kind), Prior(), UncertaintyConfig(eta=0.0), seed=2)
        env = make_env(spec, seed=5)
        s = env.reset()
        trace = []
        for _ in range(300):
            a = agent.act(s)
            step = env.step(a)
            agent.observe(s, a, step.next_state, step.reward)
            s = step.next_state
            trace.append((a, agent.V.copy()))
        traces.append(trace)
    for (a1, v1), (a2, v2) in zip(*traces):
        assert a1 == a2 and np.array_equal(v1, v2)


def test_eubrl_converges_to_right_on_chain():
    spec = EnvSpec("chain", reward_scheme="classic")
    agent = make_agent(
        5, 2, 0.95, AgentParams(kind="eubrl"), Prior(alpha=0.01), UncertaintyConfig(eta=5.0),
        tied_dest=make_env(spec).tied_dest(), seed=0,
    )
    drive(agent, make_env(spec, seed=0), 1000)
    _, pi_star = optimal_policy_and_value(spec, 0.95)
    np.testing.assert_array_equal(agent.policy, pi_star)


def test_count_mode_eubrl_runs():
    agent = make_agent(
        4, 2, 0.9, AgentParams(kind="eubrl"), Prior(), UncertaintyConfig(mode=UncertaintyMode.COUNT_BASED), seed=0
    )
    assert np.all(agent.build_planning_mdp().R == 1.0)
    agent.observe(0, 0, 1, 0.0)
    assert agent.belief.p_uncertain(0, 0) == 1.0
    agent.observe(0, 0, 1, 0.0)
    assert agent.belief.p_uncertain(0, 0) == pytest.approx(2**-0.5)


def test_invalid_params():
    with pytest.raises(ValueError):
        AgentParams(tie_break="first")
    with pytest.raises(ValueError):
        AgentParams(m=0)
    with pytest.raises(ValueError):
        AgentParams(kind="beetle")


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 1000))
def test_p_uncertain_never_grows_on_deterministic_stream(seed):
    rng = np.random.default_rng(seed)
    agent = agent_for(AgentKind.EUBRL, S=3, A=2)
    s, a, s2 = (int(x) for x in rng.integers(0, 2, 3))
    r = float(rng.normal())
    prev = agent.belief.p_uncertain(s, a)
    for _ in range(30):
        agent.observe(s, a, s2, r)
        cur = agent.belief.p_uncertain(s, a)
        assert cur <= prev + 1e-12
        prev = cur
