import numpy as np
import pytest

from latrisk.calibration import RiskSchedule
from latrisk.critic import TauBatch
from latrisk.deployment import (
    DeployState,
    PassCounter,
    RefineConfig,
    act,
    current_eta,
    observe,
    refine_action,
    run_deployment,
)
from latrisk.encoder import EncoderConfig, Encoder
from latrisk.envs.base import Transition
from latrisk.envs.diagnostic import (
    DiagnosticFamily,
    OracleCostCritic,
    OracleEncoder,
    OracleRewardCritic,
)
from latrisk.numerics import T
from latrisk.numerics.tensor import as_tensor
from latrisk.trainer import Agent, AgentConfig

SCHED = RiskSchedule((4, 8, 64, 128), (0.9, 0.6, 0.3, 0.05), (True,) * 4, 0.9, 4)


def _tau_count(taus):
    return (taus.taus if isinstance(taus, TauBatch) else np.asarray(taus)).shape[-1]


class Quadratic:
    """tau-independent critic ``scale * (a - centre)^2`` broadcast over quantile levels."""

    def __init__(self, scale, centre=0.0):
        self.scale, self.centre = scale, centre

    def __call__(self, s, a, z, taus):
        a = as_tensor(a)
        q = self.scale * T.tsum(T.square(a - self.centre), axis=-1, keepdims=True)
        return q * np.ones((1, _tau_count(taus)))


def _small_agent(seed=0):
    from latrisk.actor import ActorConfig
    from latrisk.critic import CriticConfig

    cfg = AgentConfig(
        encoder=EncoderConfig(d_z=2, hidden=(8,)),
        critic=CriticConfig(d_model=8, feature_layers=1, d_tau=4, n_blocks=1, n_tau=4, n_tau_target=4),
        actor=ActorConfig(hidden=(8,), k_samples=2),
    )
    return Agent(2, 1, cfg, seed)


def test_eta_zero_returns_nominal_bit_exact():
    ag = _small_agent()
    rng = np.random.default_rng(0)
    s, z = rng.normal(size=(20, 2)), rng.normal(size=(20, 2))
    res = refine_action(s, z, 0.0, ag.actor, ag.reward_critic, ag.cost_critic, -np.inf, RefineConfig())
    assert res.action.tobytes() == ag.actor(s, z).tobytes()


def test_early_stop_leaves_nominal_untouched():
    ag = _small_agent(1)
    s, z = np.ones((3, 2)), np.zeros((3, 2))
    ctr = PassCounter()
    res = refine_action(s, z, 0.7, ag.actor, ag.reward_critic, ag.cost_critic, np.inf, RefineConfig(), ctr)
    assert res.action.tobytes() == res.nominal.tobytes()
    assert res.early_stop.all() and (ctr.forward, ctr.backward) == (3, 0)


def test_quadratic_oracle_descends_to_threshold():
    trace = []
    actor = lambda s, z: np.ones((len(s), 1))
    eta = 1.0 - 2.0**-30
    res = refine_action(np.zeros((1, 1)), np.zeros((1, 1)), eta, actor, Quadratic(-1.0, 0.5), Quadratic(4.0), 1.0,
                        RefineConfig(k_ref=10), trace=trace)
    qc = [4.0] + [4.0 * float(a[0, 0]) ** 2 for a in trace]
    assert all(b < a for a, b in zip(qc, qc[1:]))
    assert qc[-1] <= 1.0
    assert 4.0 * float(res.action[0, 0]) ** 2 <= 1.0 + 1e-6
    # hand-computed first iterate: reward step to 0.99, then cost step 0.99 - 0.05 * 8 * 0.99
    assert trace[0][0, 0] == pytest.approx(0.99 - 0.4 * 0.99, abs=1e-12)


@pytest.mark.parametrize("k_ref", [1, 5, 15])
def test_pass_counts_follow_per_iteration_model(k_ref):
    ag = _small_agent(2)
    s, z = np.random.default_rng(3).normal(size=(16, 2)), np.zeros((16, 2))
    ctr = PassCounter()
    res = refine_action(s, z, 0.5, ag.actor, ag.reward_critic, ag.cost_critic, -np.inf, RefineConfig(k_ref=k_ref), ctr)
    assert (res.iterations == k_ref).all()
    assert ctr.forward == 3 * k_ref * 16 and ctr.backward == 2 * k_ref * 16


def test_backward_ratio_fifteen_to_five_is_three():
    ag = _small_agent(4)
    s, z = np.random.default_rng(5).normal(size=(8, 2)), np.zeros((8, 2))
    counts = []
    for k in (5, 15):
        ctr = PassCounter()
        refine_action(s, z, 0.5, ag.actor, ag.reward_critic, ag.cost_critic, -np.inf, RefineConfig(k_ref=k), ctr)
        counts.append(ctr.backward)
    assert counts[1] == 3 * counts[0]


def test_breaking_check_adds_one_forward():
    actor = lambda s, z: np.ones((len(s), 1))
    ctr = PassCounter()
    res = refine_action(np.zeros((1, 1)), np.zeros((1, 1)), 0.5, actor, Quadratic(-1.0, 0.5), Quadratic(4.0), 1.0,
                        RefineConfig(k_ref=10), ctr)
    k = int(res.iterations[0])
    assert 0 < k < 10
    assert ctr.forward == 3 * k + 1 and ctr.backward == 2 * k


def test_refined_actions_stay_in_box_and_params_unchanged():
    ag = _small_agent(6)
    before = ag.checksums()
    rng = np.random.default_rng(0)
    s, z = rng.normal(0, 5, size=(32, 2)), rng.normal(size=(32, 2))
    cfg = RefineConfig(alpha_r=5.0, alpha_c=5.0)
    for eta in (0.0, 0.3, 0.95):
        a = refine_action(s, z, eta, ag.actor, ag.reward_critic, ag.cost_critic, -np.inf, cfg).action
        assert np.all((a >= -1) & (a <= 1))
    assert ag.checksums() == before
    with pytest.raises(ValueError):
        refine_action(s, z, 1.0, ag.actor, ag.reward_critic, ag.cost_critic, 0.0, cfg)


def test_nan_critic_gradient_falls_back(caplog):
    class NanCritic:
        def __call__(self, s, a, z, taus):
            return as_tensor(a) * np.nan * np.ones((1, _tau_count(taus)))

    actor = lambda s, z: np.full((len(s), 1), 0.3)
    res = refine_action(np.zeros((2, 1)), np.zeros((2, 1)), 0.5, actor, NanCritic(), Quadratic(1.0), -1.0,
                        RefineConfig())
    assert res.fell_back.all()
    np.testing.assert_array_equal(res.action, 0.3)


def test_current_eta_lookup_convention():
    assert current_eta(SCHED, 0) == 0.9
    assert current_eta(SCHED, 7) == 0.9
    assert current_eta(SCHED, 8) == 0.6
    assert current_eta(SCHED, 100) == 0.3
    assert current_eta(SCHED, 10_000) == 0.05


def test_observe_shrinks_variance_and_tracks_schedule():
    enc = Encoder(1, 1, EncoderConfig(d_z=2, hidden=(4,)), np.random.default_rng(0))
    st = DeployState(enc, SCHED, 1.0)
    assert st.eta == 0.9 and st.n_real == 0
    rng = np.random.default_rng(1)
    etas = []
    for k in range(70):
        t = Transition(rng.normal(size=1), rng.uniform(-1, 1, 1), rng.normal(size=1), 0.1, 0.2)
        observe(st, t)
        if k == 0:
            assert np.all(st.posterior.var < 1.0)
        etas.append(st.eta)
    assert st.n_real == 70 and etas[-1] == 0.3
    assert all(b <= a for a, b in zip(etas, etas[1:]))


def test_act_uses_prior_mean_and_is_repeatable():
    ag = _small_agent(7)
    st = DeployState(ag.encoder, SCHED, 1e9)
    s = np.ones((1, 2))
    a1 = act(st, s, ag.actor, ag.reward_critic, ag.cost_critic, RefineConfig())
    a2 = act(st, s, ag.actor, ag.reward_critic, ag.cost_critic, RefineConfig())
    assert a1.action.tobytes() == a2.action.tobytes()
    assert a1.action.tobytes() == ag.actor(s, np.zeros((1, 2))).tobytes()


def test_oracle_deployment_adapts_and_logs():
    fam = DiagnosticFamily(horizon=20)
    env_spec = fam.make(1.4)
    env = fam.instance(env_spec, 0)
    enc = OracleEncoder(fam.noise, fam.offset)
    actor = lambda s, z: np.full((len(s), 1), 0.8)
    res = run_deployment(env, enc, actor, OracleRewardCritic(env_spec), OracleCostCritic(env_spec), SCHED,
                         10.0, RefineConfig(n_tau=8), episodes=5, gamma=0.95)
    ablate = run_deployment(fam.instance(env_spec, 0), enc, actor, OracleRewardCritic(env_spec),
                            OracleCostCritic(env_spec), SCHED, 10.0, RefineConfig(n_tau=8), episodes=5, gamma=0.95,
                            fixed_eta=0.0)
    assert len(res.rows) == 100 and len(res.episode_costs) == 5
    assert all(b <= a for a, b in zip(res.etas, res.etas[1:]))
    assert res.episode_costs[0] < ablate.episode_costs[0]
    assert res.rows[-1]["cum_cost_undisc"] == pytest.approx(sum(res.episode_costs))
    cut = run_deployment(fam.instance(env_spec, 0), enc, actor, OracleRewardCritic(env_spec),
                         OracleCostCritic(env_spec), SCHED, 10.0, RefineConfig(n_tau=8), episodes=5, max_steps=7)
    assert len(cut.rows) == 7
