import math
import random
from fractions import Fraction

import pytest
from hypothesis import assume, given, settings, strategies as st

from chart_tir.errors import EmptyMask, GroupTooSmall, KinkTooClose, LengthMismatch
from chart_tir.grpo import (
    GrpoConfig, attach_advantages, compute_advantages, grpo_objective, objective_gradient, objective_gradient_check,
    token_term, trajectory_terms,
)
from chart_tir.model import GroupSample, MaskedTokenBatch, Termination, Trajectory

from conftest import make_image


def pop_stats(xs):
    m = math.fsum(xs) / len(xs)
    return m, math.sqrt(math.fsum((x - m) ** 2 for x in xs) / len(xs))


def test_advantage_examples():
    assert compute_advantages([1.0] * 4) == [0.0] * 4
    assert compute_advantages([1.3, 0.0]) == pytest.approx([1.0, -1.0], abs=1e-12)
    assert compute_advantages([1, 0] * 4) == [1.0, -1.0] * 4


def test_group_too_small():
    with pytest.raises(GroupTooSmall):
        compute_advantages([1.0])


rewards = st.lists(st.sampled_from([0.0, 0.1, 1.0, 1.1, 1.2, 1.3]), min_size=2, max_size=16)


@settings(max_examples=500, deadline=None)
@given(rewards)
def test_advantage_normalization(rs):
    adv = compute_advantages(rs)
    if len(set(rs)) == 1:
        assert adv == [0.0] * len(rs)
        return
    m, s = pop_stats(adv)
    assert abs(m) <= 1e-9 and abs(s - 1) <= 1e-9


@settings(max_examples=300, deadline=None)
@given(rewards, st.floats(-100, 100, allow_nan=False))
def test_shift_invariance(rs, c):
    a = compute_advantages(rs)
    b = compute_advantages([r + c for r in rs])
    assert all(abs(x - y) <= 1e-6 for x, y in zip(a, b))


def test_attach_advantages():
    img = make_image(8, 8)
    t = Trajectory(img, "q", (), "", "a", Termination.ANSWER)
    g = attach_advantages(GroupSample([t, t]), [1.3, 0.0])
    assert g.rewards == [1.3, 0.0] and g.advantages == pytest.approx([1.0, -1.0])


def B(old, new, mask, adv):
    return MaskedTokenBatch(old, new, mask, adv)


def test_objective_hand_cases():
    assert grpo_objective([B([0.0], [math.log(2)], [True], 1.0)]) == pytest.approx(1.2, abs=1e-12)
    assert grpo_objective([B([0.0], [math.log(2)], [True], -1.0)]) == pytest.approx(-2.0, abs=1e-12)


def test_ratio_one_returns_mean_advantage_exactly():
    rng = random.Random(0)
    advs = [rng.uniform(-2, 2) for _ in range(7)]
    batch = [B([-1.5] * 5, [-1.5] * 5, [True, False, True, True, False], a) for a in advs]
    assert grpo_objective(batch) == float(sum(map(Fraction, advs)) / len(advs))


def test_validation_errors():
    with pytest.raises(EmptyMask):
        grpo_objective([])
    with pytest.raises(EmptyMask):
        grpo_objective([B([0.0], [0.0], [False], 1.0)])
    with pytest.raises(LengthMismatch):
        grpo_objective([B([0.0, 0.0], [0.0], [True], 1.0)])


def test_config_validation():
    for kw in ({"epsilon": 0}, {"epsilon": 1}, {"std_floor": 0}, {"std_mode": "sample"}):
        with pytest.raises(ValueError):
            GrpoConfig(**kw)


lps = st.floats(-5, 0, allow_nan=False)


@st.composite
def batches(draw, n_max=4, t_max=6):
    out = []
    for _ in range(draw(st.integers(1, n_max))):
        n = draw(st.integers(1, t_max))
        old = draw(st.lists(lps, min_size=n, max_size=n))
        delta = draw(st.lists(st.floats(-1.5, 1.5, allow_nan=False), min_size=n, max_size=n))
        mask = draw(st.lists(st.booleans(), min_size=n, max_size=n))
        mask[draw(st.integers(0, n - 1))] = True
        out.append(B(old, [o + d for o, d in zip(old, delta)], mask, draw(st.floats(-3, 3, allow_nan=False))))
    return out


@settings(max_examples=300, deadline=None)
@given(batches(), st.data())
def test_mask_invariance(batch, data):
    before = grpo_objective(batch)
    edited = []
    for b in batch:
        new = [n if m else data.draw(lps) for n, m in zip(b.new_logprobs, b.mask)]
        old = [o if m else data.draw(lps) for o, m in zip(b.old_logprobs, b.mask)]
        edited.append(B(old, new, b.mask, b.advantage))
    assert grpo_objective(edited) == before


@settings(max_examples=500, deadline=None)
@given(lps, st.floats(-3, 3, allow_nan=False), st.floats(-3, 3, allow_nan=False))
def test_clip_bound(old, delta, adv):
    eps = 0.2
    new = old + delta
    t = token_term(old, new, adv, eps)
    w = math.exp(new - old)
    if adv > 0:
        assert t <= (1 + eps) * adv + 1e-12
    if adv < 0:
        assert t <= w * adv + 1e-12
    assert t == min(w * adv, min(max(w, 1 - eps), 1 + eps) * adv)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.just(0.5), min_size=2, max_size=8), batches())
def test_degenerate_group_objective_is_zero(rs, batch):
    adv = compute_advantages(rs)
    zeroed = [B(b.old_logprobs, b.new_logprobs, b.mask, adv[0]) for b in batch]
    assert grpo_objective(zeroed) == 0.0


def test_trajectory_terms_mean_is_objective():
    batch = [B([0.0, 0.0], [0.1, -0.1], [True, True], 1.0), B([0.0], [0.5], [True], -0.5)]
    terms = trajectory_terms(batch)
    assert len(terms) == 2
    assert grpo_objective(batch) == pytest.approx(sum(terms) / 2, abs=1e-15)


def test_gradient_ratio_one():
    batch = [B([-1.0, -2.0, -0.5], [-1.0, -2.0, -0.5], [True, True, False], 0.7)]
    assert objective_gradient_check(batch, h=1e-5) < 1e-4


def test_gradient_fully_clipped_token():
    batch = [B([0.0], [math.log(3)], [True], 1.0)]
    assert objective_gradient(batch) == [[0.0]]
    assert objective_gradient_check(batch) < 1e-4


def test_gradient_mixed_batch():
    batch = [
        B([0.0, -1.0], [0.5, -1.1], [True, True], 1.0),
        B([-0.3], [-1.0], [True], -1.0),
        B([-2.0, -2.0, -2.0], [-1.0, -2.05, -3.0], [True, False, True], 0.4),
        B([-0.1], [-0.1], [True], -0.2),
    ]
    assert objective_gradient_check(batch) < 1e-4


def test_kink_detection():
    with pytest.raises(KinkTooClose):
        objective_gradient_check([B([0.0], [math.log(1.2)], [True], 1.0)])


def random_kink_free_batch(rng, eps=0.2, h=1e-5):
    batch = []
    for _ in range(rng.randint(1, 4)):
        n = rng.randint(1, 6)
        old = [rng.uniform(-4, 0) for _ in range(n)]
        new = []
        for o in old:
            while True:
                d = rng.uniform(-1, 1)
                w = math.exp(d)
                if abs(w - (1 - eps)) > 100 * h and abs(w - (1 + eps)) > 100 * h:
                    break
            new.append(o + d)
        mask = [rng.random() < 0.7 for _ in range(n)]
        mask[rng.randrange(n)] = True
        batch.append(B(old, new, mask, rng.uniform(-2, 2)))
    return batch


def test_gradient_random_batches():
    rng = random.Random(1234)
    worst = max(objective_gradient_check(random_kink_free_batch(rng)) for _ in range(100))
    assert worst < 1e-4


@settings(max_examples=50, deadline=None)
@given(batches())
def test_gradient_property(batch):
    for b in batch:
        for o, n, m in zip(b.old_logprobs, b.new_logprobs, b.mask):
            w = math.exp(n - o)
            assume(not m or (abs(w - 0.8) > 1e-3 and abs(w - 1.2) > 1e-3))
    assert objective_gradient_check(batch) < 1e-4
