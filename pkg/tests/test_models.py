import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latrisk.actor import Actor, ActorConfig, LagrangeState, actor_loss, pid_update
from latrisk.critic import (
    CriticConfig,
    QuantileCritic,
    TauBatch,
    cosine_basis,
    huber_quantile_loss,
    polyak_update,
    q_upper_tail,
    td_error_matrix,
    td_targets,
)
from latrisk.encoder import (
    Encoder,
    EncoderConfig,
    GaussianFactor,
    combine_arrays,
    combine_factors,
    kl_to_prior,
)
from latrisk.envs.base import Transition
from latrisk.numerics import ParamStore, grad
from latrisk.verify import QuantileOracle, numeric_product

SMALL = CriticConfig(d_model=8, feature_layers=1, d_tau=4, n_blocks=1, n_critics=2, n_tau=4, n_tau_target=4)


# -- encoder ------------------------------------------------------------------------

def test_single_factor_is_its_own_posterior():
    f = GaussianFactor(np.array([0.3, -1.0]), np.array([2.0, 0.5]))
    post = combine_factors([f])
    np.testing.assert_array_equal(post.mean, f.mean)
    np.testing.assert_allclose(post.var, f.var, rtol=1e-15)


def test_two_unit_factors_hand_case():
    post = combine_factors([GaussianFactor(np.array([1.0]), np.array([1.0])),
                            GaussianFactor(np.array([3.0]), np.array([1.0]))])
    assert post.mean[0] == 2.0 and post.var[0] == 0.5


def test_empty_context_is_prior():
    post = combine_factors([], d_z=3)
    np.testing.assert_array_equal(post.mean, np.zeros(3))
    np.testing.assert_array_equal(post.var, np.ones(3))
    assert kl_to_prior(post) == 0.0
    with pytest.raises(ValueError):
        combine_factors([])


def test_mismatched_factor_dims_rejected():
    with pytest.raises(ValueError):
        combine_factors([GaussianFactor(np.zeros(2), np.ones(2)), GaussianFactor(np.zeros(3), np.ones(3))])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_product_matches_quadrature_and_shrinks(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 5))
    mu, var = rng.normal(0, 2, size=(n, 1)), rng.uniform(0.3, 3.0, size=(n, 1))
    post = combine_arrays(mu, var)
    m, v = numeric_product(mu[:, 0], var[:, 0])
    assert abs(m - post.mean[0]) < 1e-6 and abs(v - post.var[0]) < 1e-6
    assert post.var[0] <= var.min() * (1 + 1e-12)


def test_permutation_invariance_is_exact():
    rng = np.random.default_rng(3)
    mu, var = rng.normal(size=(5, 2)), rng.uniform(0.1, 2.0, size=(5, 2))
    ref = combine_arrays(mu, var)
    for perm in itertools.islice(itertools.permutations(range(5)), 0, 120, 7):
        p = combine_arrays(mu[list(perm)], var[list(perm)])
        assert p.mean.tobytes() == ref.mean.tobytes() and p.var.tobytes() == ref.var.tobytes()


def test_encoder_posterior_variances_positive():
    enc = Encoder(2, 1, EncoderConfig(d_z=3, hidden=(8,)), np.random.default_rng(0))
    rng = np.random.default_rng(1)
    ts = [Transition(rng.normal(size=2), rng.uniform(-1, 1, 1), rng.normal(size=2), 0.1, 0.2) for _ in range(6)]
    post = enc.posterior(ts)
    assert post.n == 6 and np.all(post.var > 0)
    f = enc.factor_forward(ts)
    assert combine_factors(f).mean.tobytes() == post.mean.tobytes()


def test_encoder_config_validation():
    with pytest.raises(ValueError):
        EncoderConfig(beta_kl=-1.0)


# -- critic ---------------------------------------------------------------------------

def _loss(delta, tau, kappa=1.0):
    return float(huber_quantile_loss(np.full((1, 1, 1), delta), np.array([tau]), kappa).data)


def test_huber_hand_cases():
    assert abs(_loss(0.5, 0.5) - 0.0625) <= 1e-12
    # quadratic branch at |delta| = kappa is 0.5; linear branch beyond
    assert abs(_loss(2.0, 0.25) - 0.375) <= 1e-12
    assert abs(_loss(-2.0, 0.25) - 1.125) <= 1e-12
    assert _loss(0.0, 0.7) == 0.0


@settings(max_examples=50, deadline=None)
@given(st.floats(-5, 5), st.floats(0.01, 0.99), st.floats(0.1, 3.0))
def test_huber_loss_matches_scalar_formula(delta, tau, kappa):
    h = 0.5 * delta**2 if abs(delta) <= kappa else kappa * (abs(delta) - 0.5 * kappa)
    ref = abs(tau - (delta < 0)) * h / kappa
    assert abs(_loss(delta, tau, kappa) - ref) <= 1e-12 * max(1.0, ref)
    assert _loss(delta, tau, kappa) >= 0


def test_quantile_regression_minimiser():
    # a constant prediction minimising the pinball loss against samples lands on the tau-quantile
    rng = np.random.default_rng(0)
    y = rng.normal(size=2001)
    grid = np.linspace(-2, 2, 801)
    for tau in (0.1, 0.5, 0.9):
        losses = [np.mean(np.abs(tau - (y - g < 0)) * np.abs(y - g)) for g in grid]
        assert abs(grid[int(np.argmin(losses))] - np.quantile(y, tau)) < 0.02


def test_cosine_basis_first_column_is_one():
    b = cosine_basis(np.array([0.0, 0.3, 1.0]), 4)
    np.testing.assert_array_equal(b[:, 0], 1.0)
    assert b[2, 1] == pytest.approx(-1.0)


def test_critic_shapes_and_head_mean():
    rng = np.random.default_rng(0)
    c = QuantileCritic(4, SMALL, rng)
    s, a, z = rng.normal(size=(3, 2)), rng.normal(size=(3, 1)), rng.normal(size=(3, 1))
    taus = np.array([0.1, 0.5, 0.9, 0.2, 0.7])
    out = c(s, a, z, taus).data
    assert out.shape == (3, 5)
    ms = c.members(c.params.constants(), s, a, z, taus)
    np.testing.assert_allclose(out, (ms[0].data + ms[1].data) / 2, rtol=0, atol=1e-14)


def test_td_targets_terminal_and_gamma_zero():
    oracle = QuantileOracle(lambda t: 5.0 + t)
    s = np.zeros((2, 1))
    y = td_targets(oracle, s, s, s, np.array([1.0, 2.0]), np.array([1.0, 0.0]), 0.5, np.array([0.0, 1.0]))
    np.testing.assert_allclose(y, [[1.0, 1.0], [4.5, 5.0]])
    y0 = td_targets(oracle, s, s, s, np.array([1.0, 2.0]), np.zeros(2), 0.0, np.array([0.5]))
    np.testing.assert_array_equal(y0[:, 0], [1.0, 2.0])
    with pytest.raises(ValueError):
        td_targets(oracle, s, s, s, np.ones(2), np.zeros(2), 1.0, np.array([0.5]))


def test_td_error_matrix_layout():
    d = td_error_matrix(np.array([[1.0, 2.0]]), np.array([[10.0, 20.0, 30.0]])).data
    assert d.shape == (1, 2, 3) and d[0, 1, 2] == 28.0


def test_upper_tail_identity_oracle_closed_form():
    u = np.linspace(0, 1, 1001)
    s = np.zeros((1, 1))
    for eta in (0.0, 0.4, 0.8):
        q = q_upper_tail(QuantileOracle(lambda t: t), s, s, s, eta, u)[0]
        assert q == pytest.approx((1 + eta) / 2, abs=1e-12)
    with pytest.raises(ValueError):
        TauBatch.upper_tail(1.0, u)


def test_polyak_extremes():
    tgt, on = ParamStore({"w": np.zeros(2)}), ParamStore({"w": np.ones(2)})
    polyak_update(tgt, on, 0.0)
    np.testing.assert_array_equal(tgt["w"], 0.0)
    polyak_update(tgt, on, 0.25)
    np.testing.assert_array_equal(tgt["w"], 0.25)
    polyak_update(tgt, on, 1.0)
    np.testing.assert_array_equal(tgt["w"], 1.0)


# -- actor ------------------------------------------------------------------------------

def test_actor_output_bounded():
    actor = Actor(3, 2, 1, ActorConfig(hidden=(8,)), np.random.default_rng(0))
    a = actor(np.random.default_rng(1).normal(0, 100, size=(50, 3)), np.zeros((50, 2)))
    assert a.shape == (50, 1) and np.all(np.abs(a) <= 1.0)


def test_actor_loss_gradient_ignores_critic_params():
    rng = np.random.default_rng(0)
    actor = Actor(2, 1, 1, ActorConfig(hidden=(4,), k_samples=2), rng)
    rc, cc = QuantileCritic(4, SMALL, rng), QuantileCritic(4, SMALL, rng)
    before = rc.params.checksum(), cc.params.checksum()
    s, z = rng.normal(size=(5, 2)), rng.normal(size=(5, 1))
    leaves = actor.params.leaves()
    gs = grad(actor_loss(actor, leaves, rc, cc, s, z, 0.5, 2, np.random.default_rng(1)), list(leaves.values()))
    assert any(np.any(g != 0) for g in gs)
    assert (rc.params.checksum(), cc.params.checksum()) == before


def test_pid_hand_step_and_projection():
    st_ = LagrangeState(lam=0.0, kp=0.1, ki=0.01, kd=0.0)
    st_ = pid_update(st_, 12.0, 10.0)
    assert st_.lam == pytest.approx(0.1 * 2 + 0.01 * 2)
    low = pid_update(LagrangeState(lam=0.05), 0.0, 10.0)
    assert low.lam == 0.0
    with pytest.raises(ValueError):
        LagrangeState(kp=-1.0)


def test_pid_holds_at_target():
    st_ = LagrangeState(lam=0.7)
    for _ in range(5):
        st_ = pid_update(st_, 10.0, 10.0)
    assert st_.lam == 0.7
