"""Group-relative advantages and the masked, clipped GRPO surrogate.

Averages are accumulated exactly (``fractions.Fraction``) and rounded once,
so results are bit-stable regardless of summation order and a ratio-1 batch
returns exactly the mean advantage.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass
from fractions import Fraction

from .errors import EmptyMask, GroupTooSmall, KinkTooClose, LengthMismatch
from .model import GroupSample, MaskedTokenBatch


@dataclass(frozen=True)
class GrpoConfig:
    epsilon: float = 0.2
    std_floor: float = 1e-6
    std_mode: str = "population"

    def __post_init__(self):
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        if not self.std_floor > 0:
            raise ValueError("std_floor must be positive")
        if self.std_mode != "population":
            raise ValueError("only the population standard deviation is supported")


def _exact_mean(values) -> Fraction:
    values = list(values)
    return sum((Fraction(v) for v in values), Fraction(0)) / len(values)


def compute_advantages(rewards: Sequence[float], cfg: GrpoConfig | None = None) -> list[float]:
    """Standardize rewards within the group; a flat group gets all zeros."""
    cfg = cfg or GrpoConfig()
    if len(rewards) < 2:
        raise GroupTooSmall(f"a group needs at least 2 rewards, got {len(rewards)}")
    mean = _exact_mean(rewards)
    var = _exact_mean((Fraction(r) - mean) ** 2 for r in rewards)
    std = math.sqrt(var)
    if std < cfg.std_floor:
        return [0.0] * len(rewards)
    m = float(mean)
    return [(r - m) / std for r in rewards]


def attach_advantages(group: GroupSample, rewards: Sequence[float], cfg: GrpoConfig | None = None) -> GroupSample:
    group.rewards = [float(r) for r in rewards]
    group.advantages = compute_advantages(group.rewards, cfg)
    return group


def _validate(batch: Sequence[MaskedTokenBatch]) -> None:
    if not batch:
        raise EmptyMask("the batch holds no trajectories")
    for g, b in enumerate(batch):
        if not (len(b.old_logprobs) == len(b.new_logprobs) == len(b.mask)):
            raise LengthMismatch(
                f"trajectory {g}: {len(b.old_logprobs)} old, {len(b.new_logprobs)} new, {len(b.mask)} mask entries"
            )
        if not any(b.mask):
            raise EmptyMask(f"trajectory {g} has no trainable tokens")


def token_term(old_lp: float, new_lp: float, advantage: float, epsilon: float) -> float:
    w = math.exp(new_lp - old_lp)
    clipped = min(max(w, 1.0 - epsilon), 1.0 + epsilon)
    return min(w * advantage, clipped * advantage)


def trajectory_terms(batch: Sequence[MaskedTokenBatch], cfg: GrpoConfig | None = None) -> list[float]:
    """Per-trajectory masked token means of the clipped surrogate."""
    cfg = cfg or GrpoConfig()
    _validate(batch)
    return [float(_trajectory_mean(b, cfg.epsilon)) for b in batch]


def _trajectory_mean(b: MaskedTokenBatch, epsilon: float) -> Fraction:
    terms = [
        token_term(o, n, b.advantage, epsilon)
        for o, n, m in zip(b.old_logprobs, b.new_logprobs, b.mask)
        if m
    ]
    return _exact_mean(terms)


def grpo_objective(batch: Sequence[MaskedTokenBatch], cfg: GrpoConfig | None = None) -> float:
    """Scalar objective to maximize: mean over trajectories of masked token means."""
    cfg = cfg or GrpoConfig()
    _validate(batch)
    per_traj = [_trajectory_mean(b, cfg.epsilon) for b in batch]
    return float(sum(per_traj, Fraction(0)) / len(per_traj))


def objective_gradient(batch: Sequence[MaskedTokenBatch], cfg: GrpoConfig | None = None) -> list[list[float]]:
    """Analytic d objective / d new_logprob for every token.

    The unclipped branch ``w*A`` has derivative ``w*A``; when the clipped
    branch is selected with the ratio outside the trust region the term is
    constant and its derivative is zero.
    """
    cfg = cfg or GrpoConfig()
    _validate(batch)
    lo, hi = 1.0 - cfg.epsilon, 1.0 + cfg.epsilon
    G = len(batch)
    grads = []
    for b in batch:
        n_masked = sum(b.mask)
        row = []
        for o, n, m in zip(b.old_logprobs, b.new_logprobs, b.mask):
            if not m:
                row.append(0.0)
                continue
            w = math.exp(n - o)
            a = b.advantage
            clipped = min(max(w, lo), hi)
            unclipped_selected = w * a <= clipped * a
            row.append(w * a / (G * n_masked) if unclipped_selected or lo <= w <= hi else 0.0)
        grads.append(row)
    return grads


def objective_gradient_check(
    batch: Sequence[MaskedTokenBatch], cfg: GrpoConfig | None = None, h: float = 1e-5, abs_floor: float = 1e-6
) -> float:
    """Max relative gap between analytic and central finite-difference gradients.

    The relative error uses ``max(|analytic|, |numeric|, abs_floor)`` as the
    denominator so tokens with a zero gradient are judged on an absolute scale.
    """
    cfg = cfg or GrpoConfig()
    _validate(batch)
    lo, hi = 1.0 - cfg.epsilon, 1.0 + cfg.epsilon
    for g, b in enumerate(batch):
        for j, (o, n, m) in enumerate(zip(b.old_logprobs, b.new_logprobs, b.mask)):
            if not m:
                continue
            w = math.exp(n - o)
            if abs(w - lo) <= 10 * h or abs(w - hi) <= 10 * h:
                raise KinkTooClose(f"token {j} of trajectory {g} has ratio {w!r} within {10 * h:g} of a clip edge")

    analytic = objective_gradient(batch, cfg)
    worst = 0.0
    batch = list(batch)
    for g, b in enumerate(batch):
        for j in range(len(b.new_logprobs)):
            up = list(b.new_logprobs)
            dn = list(b.new_logprobs)
            up[j] += h
            dn[j] -= h
            plus = batch[:g] + [b.with_new_logprobs(up)] + batch[g + 1:]
            minus = batch[:g] + [b.with_new_logprobs(dn)] + batch[g + 1:]
            fd = (grpo_objective(plus, cfg) - grpo_objective(minus, cfg)) / (2 * h)
            a = analytic[g][j]
            err = abs(a - fd) / max(abs(a), abs(fd), abs_floor)
            worst = max(worst, err)
    return worst
