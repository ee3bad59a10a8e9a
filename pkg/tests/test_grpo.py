import math
import statistics

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from justrl.errors import ConfigError, StructuralError
from justrl.gradcheck import check_surrogate, random_groups, random_policy
from justrl.grpo import (
    ClipRange,
    OverlongPenaltyConfig,
    RolloutGroup,
    apply_overlong_penalty,
    normalize_group,
    surrogate_loss_and_grad,
)
from justrl.policy import ToyPolicy, grad_logprob, logprob

PROMPT = [0, 3, 4]


def make_group(policy, responses, ratios, advantages):
    """Group whose per-token ratios under ``policy`` are exactly ``ratios``."""
    old = []
    for resp, rs in zip(responses, ratios):
        cur = [logprob(policy, PROMPT + resp[:t], resp[t]) for t in range(len(resp))]
        old.append(np.array(cur) - np.log(rs))
    return RolloutGroup("g", PROMPT, responses, old, np.zeros(len(responses)), advantages=np.array(advantages))


def token_grad(policy, resp, t):
    return grad_logprob(policy, PROMPT + resp[:t], resp[t])


# -- normalization -------------------------------------------------------------


def test_normalize_examples():
    assert np.array_equal(normalize_group([1, 1, 1, 1]), np.zeros(4))
    assert np.array_equal(normalize_group([-1, -1]), np.zeros(2))
    a = normalize_group([1, -1])
    np.testing.assert_allclose(a, [1 / (1 + 1e-6), -1 / (1 + 1e-6)], rtol=1e-15)


def test_normalize_matches_statistics_oracle():
    r = [1, 1, -1, -1, -1, 1, 1, -1]
    mu, sd = statistics.fmean(r), statistics.pstdev(r)
    np.testing.assert_allclose(normalize_group(r), [(x - mu) / (sd + 1e-6) for x in r], atol=1e-12)
    np.testing.assert_allclose(normalize_group(r, scale_by_std=False), [x - mu for x in r], atol=1e-15)


def test_normalize_rejects_tiny_groups():
    with pytest.raises(ConfigError):
        normalize_group([1.0])
    with pytest.raises(ConfigError):
        normalize_group([])


group_rewards = st.lists(st.floats(-100, 100, allow_nan=False), min_size=2, max_size=16)


@settings(max_examples=300, deadline=None)
@given(r=group_rewards, scale=st.floats(0.1, 50), shift=st.floats(-50, 50))
def test_normalize_affine_invariance(r, scale, shift):
    r = np.array(r)
    s1, s2 = r.std(), (scale * r + shift).std()
    if min(s1, s2) < 1e-3:
        return
    a = normalize_group(r)
    b = normalize_group(scale * r + shift)
    # eps sits in the denominator, so invariance holds to relative O(eps / std)
    bound = np.abs(a).max() * 2e-6 / min(s1, s2) + 1e-9
    np.testing.assert_allclose(a, b, rtol=0, atol=bound)


@settings(max_examples=300, deadline=None)
@given(r=st.lists(st.sampled_from([-1.0, 1.0]), min_size=2, max_size=16))
def test_binary_groups_mean_zero_unit_std(r):
    a = normalize_group(r)
    if len(set(r)) == 1:
        assert np.array_equal(a, np.zeros(len(r)))
    else:
        assert abs(a.mean()) < 1e-9
        assert abs(a.std() - 1) < 1e-4


# -- overlong penalty ---------------------------------------------------------


def test_overlong_penalty_examples():
    cfg = OverlongPenaltyConfig(enabled=True, window=4, max_response_len=10)
    assert apply_overlong_penalty(1.0, 6, cfg) == 1.0
    assert apply_overlong_penalty(1.0, 7, cfg) == pytest.approx(0.75)
    assert apply_overlong_penalty(1.0, 8, cfg) == pytest.approx(0.5)
    assert apply_overlong_penalty(-1.0, 10, cfg) == pytest.approx(-2.0)
    assert apply_overlong_penalty(1.0, 50, cfg) == pytest.approx(0.0)  # clamped at -1
    off = OverlongPenaltyConfig(enabled=False, window=4, max_response_len=10)
    assert apply_overlong_penalty(1.0, 10, off) == 1.0


def test_overlong_config_validation():
    with pytest.raises(ConfigError):
        OverlongPenaltyConfig(enabled=True, window=0, max_response_len=10)
    with pytest.raises(ConfigError):
        OverlongPenaltyConfig(enabled=True, window=10, max_response_len=10)


@given(n=st.integers(0, 400))
def test_overlong_penalty_bounded_and_monotone(n):
    cfg = OverlongPenaltyConfig(enabled=True, window=64, max_response_len=256)
    p = apply_overlong_penalty(0.0, n, cfg)
    assert -1.0 <= p <= 0.0
    assert apply_overlong_penalty(0.0, n + 1, cfg) <= p


# -- surrogate ----------------------------------------------------------------


@pytest.fixture
def pol():
    return ToyPolicy.random(seed=12, scale=0.6)


def test_reinforce_oracle_at_unit_ratio(pol):
    responses = [[5, 6, 1], [7, 1], [13, 4, 14, 1]]
    adv = [0.9, -0.4, -0.5]
    grp = make_group(pol, responses, [np.ones(len(r)) for r in responses], adv)
    res = surrogate_loss_and_grad(pol, [grp], ClipRange())
    total = sum(len(r) for r in responses)
    assert res.n_tokens == total
    assert res.loss == pytest.approx(-sum(a * len(r) for a, r in zip(adv, responses)) / total, abs=1e-12)
    expect = np.zeros(pol.n_params)
    for resp, a in zip(responses, adv):
        for t in range(len(resp)):
            expect -= a * token_grad(pol, resp, t) / total
    np.testing.assert_allclose(res.grad, expect, atol=1e-12)
    assert res.clip_fraction == 0.0


def test_clamped_token_contributes_constant_and_no_gradient(pol):
    responses = [[5], [7]]
    a = 1.0
    grp = make_group(pol, responses, [[1.5], [1.0]], [a, -a])
    res = surrogate_loss_and_grad(pol, [grp], ClipRange())
    assert res.loss == pytest.approx(-(1.28 * a + (-a)) / 2, abs=1e-12)
    np.testing.assert_allclose(res.grad, a * token_grad(pol, [7], 0) / 2, atol=1e-12)
    assert res.clip_fraction == 0.5


def test_clip_higher_asymmetry_observable(pol):
    # rho = 1.25 with A > 0: live under [0.8, 1.28], clamped under symmetric [0.8, 1.2]
    grp = make_group(pol, [[5], [7]], [[1.25], [1.0]], [1.0, 0.0])
    live = surrogate_loss_and_grad(pol, [grp], ClipRange(0.8, 1.28))
    sym = surrogate_loss_and_grad(pol, [grp], ClipRange(0.8, 1.2))
    np.testing.assert_allclose(live.grad, -1.25 * token_grad(pol, [5], 0) / 2, atol=1e-12)
    assert np.array_equal(sym.grad, np.zeros(pol.n_params))


@pytest.mark.parametrize(
    "rho, adv, live",
    [
        (1.27, 1.0, True),
        (1.29, 1.0, False),
        (0.79, 1.0, True),
        (0.79, -1.0, False),
        (0.81, -1.0, True),
        (1.5, -1.0, True),
        (0.5, 1.0, True),
    ],
)
def test_gradient_zero_exactly_when_clamp_binds(pol, rho, adv, live):
    grp = make_group(pol, [[5], [7]], [[rho], [1.0]], [adv, 0.0])
    res = surrogate_loss_and_grad(pol, [grp], ClipRange())
    if live:
        np.testing.assert_allclose(res.grad, -rho * adv * token_grad(pol, [5], 0) / 2, atol=1e-12)
        assert np.any(res.grad != 0)
    else:
        assert np.array_equal(res.grad, np.zeros(pol.n_params))


def test_zero_advantages_give_zero_loss_and_gradient(pol):
    grp = make_group(pol, [[5, 1], [7, 8, 1]], [[1.4, 0.6], [1.0, 2.0, 0.3]], [0.0, 0.0])
    res = surrogate_loss_and_grad(pol, [grp], ClipRange())
    assert res.loss == 0.0
    assert np.array_equal(res.grad, np.zeros(pol.n_params))


def test_finite_differences_cover_both_clip_branches():
    rng = np.random.default_rng(0)
    lows = highs = 0
    for _ in range(100):
        r = check_surrogate(rng)
        assert r.max_rel_error <= 1e-4
        lows += r.clipped_low
        highs += r.clipped_high
    assert lows > 0 and highs > 0


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_clip_fraction_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    pol = random_policy(rng)
    groups = random_groups(rng, pol)
    res = surrogate_loss_and_grad(pol, groups, ClipRange())
    flags = []
    for grp in groups:
        for resp, old, a in zip(grp.responses, grp.old_logprobs, grp.advantages):
            for t in range(len(resp)):
                rho = math.exp(logprob(pol, list(grp.prompt_tokens) + resp[:t], resp[t]) - old[t])
                flags.append((a > 0 and rho > 1.28) or (a < 0 and rho < 0.8))
    assert res.clip_fraction == pytest.approx(sum(flags) / len(flags), abs=1e-15)


def test_structural_errors():
    with pytest.raises(StructuralError):
        RolloutGroup("x", PROMPT, [[5]], [np.zeros(1)], np.zeros(1))
    with pytest.raises(StructuralError):
        RolloutGroup("x", PROMPT, [[5], [6, 7]], [np.zeros(1), np.zeros(1)], np.zeros(2))
    with pytest.raises(StructuralError):
        RolloutGroup("x", PROMPT, [[5], [6]], [np.zeros(1), np.zeros(1)], np.zeros(3))


def test_clip_range_validation():
    with pytest.raises(ConfigError):
        ClipRange(1.1, 1.28)
    with pytest.raises(ConfigError):
        ClipRange(0.8, 0.9)
