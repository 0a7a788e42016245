import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from anticipate import objective as O
from anticipate.errors import DomainError


def trace(probs, omega=None, positive=False, tau=0, fps=20.0, log_probs=None, values=None, norm=None, ent=None):
    n = len(probs)
    z = np.zeros(n)
    return O.EpisodeTrace(
        probs=np.asarray(probs, float), omega=np.full(n, 1.5) if omega is None else np.asarray(omega, float),
        log_probs=z if log_probs is None else np.asarray(log_probs, float),
        values=z if values is None else np.asarray(values, float),
        rewards=z, norm_rewards=z if norm is None else np.asarray(norm, float),
        entropy=z if ent is None else np.asarray(ent, float), positive=positive, accident_frame=tau, fps=fps)


def test_temporal_penalty_cases():
    assert O.temporal_penalty(9, 10, 20.0) == 0.0
    assert O.temporal_penalty(10 - 1 - 20, 10, 20.0) == -1.0
    assert O.temporal_penalty(15, 10, 20.0) == 0.0
    with pytest.raises(DomainError):
        O.temporal_penalty(0, 0, 20.0)


def test_anticipation_loss_cases():
    assert O.anticipation_loss(trace([0.5] * 7)) == pytest.approx(np.log(2), abs=1e-15)
    # single frame at t = tau - 1, omega 1.5
    assert O.anticipation_loss(trace([0.5], positive=True, tau=1)) == pytest.approx(1.5 * np.log(2), abs=1e-15)
    near = O.anticipation_loss(trace([1 - 1e-12] * 5, positive=True, tau=3))
    assert 0 <= near < 1e-6


def test_anticipation_probability_clamp():
    assert np.isfinite(O.anticipation_loss(trace([0.0, 1.0], positive=True, tau=2)))
    assert np.isfinite(O.anticipation_loss(trace([0.0, 1.0])))


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 30))
def test_anticipation_monotone_and_nonnegative(seed, n):
    rng = np.random.default_rng(seed)
    p = rng.uniform(0.01, 0.9, n)
    tau = int(rng.integers(1, n + 1))
    bump = p + rng.uniform(0, 0.09, n)
    pos = O.anticipation_loss(trace(p, positive=True, tau=tau))
    assert pos >= 0 and O.anticipation_loss(trace(bump, positive=True, tau=tau)) <= pos
    neg = O.anticipation_loss(trace(bump))
    assert neg >= 0 and O.anticipation_loss(trace(p)) <= neg


def test_penalty_weight_is_one_from_tau_minus_one():
    n, tau, fps = 10, 6, 2.0
    w = np.exp(O.temporal_penalty(np.arange(n), tau, fps))
    assert np.all((w > 0) & (w <= 1))
    assert np.all(w[tau - 1:] == 1.0) and np.all(w[: tau - 1] < 1.0)


def test_actor_loss_cases():
    t = trace([0.5, 0.5], ent=[np.log(2)] * 2)
    assert O.actor_loss(t, 0.1) == pytest.approx(-0.1 * np.log(2), abs=1e-15)
    assert O.actor_loss(trace([0.5, 0.5]), 0.0) == 0.0
    single = trace([0.5], log_probs=[-0.5], norm=[2.0])
    assert O.actor_loss(single, 0.0) == 1.0


def test_critic_loss_cases():
    assert O.critic_loss(trace([0.5, 0.5], values=[0.3, -1], norm=[0.3, -1])) == 0.0
    assert O.critic_loss(trace([0.5], norm=[1.0])) == 0.5
    assert O.critic_loss(trace([0.5, 0.5], norm=[1.0, -1.0])) == 0.5


def test_total_loss_cases():
    assert O.total_loss(1.0, 0.2, 0.4) == pytest.approx(1.2, abs=1e-15)
    assert O.total_loss(0.7, 3.0, 9.0, O.LossConfig(alpha=0.0)) == 0.7
    assert O.total_loss(1.0, 0.2, 0.4, O.LossConfig(beta=0.0)) == pytest.approx(1.1)


@settings(max_examples=50, deadline=None)
@given(a=st.floats(-5, 5), b=st.floats(-5, 5), c=st.floats(-5, 5),
       alpha=st.floats(0, 2), beta=st.floats(0, 2), d=st.floats(-3, 3))
def test_total_loss_affine(a, b, c, alpha, beta, d):
    cfg = O.LossConfig(alpha=alpha, beta=beta)
    base = O.total_loss(a, b, c, cfg)
    assert O.total_loss(a + d, b, c, cfg) - base == pytest.approx(d, abs=1e-9)
    assert O.total_loss(a, b + d, c, cfg) - base == pytest.approx(alpha * d, abs=1e-9)
    assert O.total_loss(a, b, c + d, cfg) - base == pytest.approx(alpha * beta * d, abs=1e-9)


def test_disabled_terms_drop_out():
    cfg = O.LossConfig(use_anticipation=False, use_actor=False)
    assert cfg.coefficients == (0.0, 0.0, 0.25)
    assert O.total_loss(5.0, 5.0, 2.0, cfg) == 0.5


def test_batch_anticipation_is_mean_of_videos():
    ts = [trace([0.5] * 3), trace([0.2, 0.9], positive=True, tau=2)]
    assert O.batch_anticipation_loss(ts) == pytest.approx(np.mean([O.anticipation_loss(t) for t in ts]))
