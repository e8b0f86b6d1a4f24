import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from chart_tir.errors import InvariantViolation
from chart_tir.model import (
    DEFAULT_ASPECT_POOLS, BBox, ChartImage, ChartSpec, CodeExec, Crop, ErrorKind, GroupSample, MaskedTokenBatch,
    QAItem, QType, RewardBreakdown, Step, Termination, TextObs, ToolError, Trajectory, reward_total,
)

from conftest import make_image


def test_chart_image_shape_and_readonly():
    img = make_image(10, 7)
    assert (img.width, img.height) == (10, 7)
    assert img.pixels.shape == (7, 10, 3)
    with pytest.raises(ValueError):
        img.pixels[0, 0, 0] = 1


@pytest.mark.parametrize("shape", [(0, 5, 3), (5, 0, 3), (5, 5), (5, 5, 4)])
def test_chart_image_rejects_bad_shapes(shape):
    with pytest.raises(InvariantViolation):
        ChartImage(np.zeros(shape, dtype=np.uint8), "x")


def test_chart_image_png_roundtrip():
    img = make_image(33, 21, sid="a")
    back = ChartImage.from_png(img.to_png(), "a")
    assert back == img
    assert back.content_hash == img.content_hash


def test_content_hash_depends_on_shape():
    a = ChartImage(np.zeros((2, 6, 3), np.uint8), "a")
    b = ChartImage(np.zeros((6, 2, 3), np.uint8), "a")
    assert a.content_hash != b.content_hash


@pytest.mark.parametrize("box", [(0, 0, 0, 5), (5, 0, 4, 9), (-1, 0, 3, 3), (0, 0, 3.0, 3), (0, True, 3, 3)])
def test_bbox_rejects_invalid(box):
    with pytest.raises(InvariantViolation):
        BBox(*box)


def test_code_exec_requires_source():
    with pytest.raises(InvariantViolation):
        CodeExec("")


def test_trajectory_answer_iff_terminated_by_answer(image):
    Trajectory(image, "q", (), "r", "42", Termination.ANSWER)
    Trajectory(image, "q", (), "", None, Termination.TURN_LIMIT)
    with pytest.raises(InvariantViolation):
        Trajectory(image, "q", (), "", None, Termination.ANSWER)
    with pytest.raises(InvariantViolation):
        Trajectory(image, "q", (), "", "42", Termination.PARSE_FAILURE_LIMIT)


def test_turn_budget(image):
    step = Step("r", Crop(BBox(0, 0, 8, 8)), TextObs("x", False))
    t = Trajectory(image, "q", (step,) * 3, "", None, Termination.TURN_LIMIT)
    t.check_turn_budget(3)
    with pytest.raises(InvariantViolation):
        t.check_turn_budget(2)


def test_step_requires_observation():
    with pytest.raises(InvariantViolation):
        Step("r", CodeExec("print(1)"), None)


bit = st.sampled_from([0, 1])


@given(bit, bit, bit)
def test_reward_closed_form_matches_exact_rational(acc, fmt, tool):
    exact = Fraction(acc) + Fraction(1, 10) * fmt + Fraction(2, 10) * (tool if acc else 0)
    assert reward_total(acc, fmt, tool, 0.1, 0.2) == float(exact)
    b = RewardBreakdown.compute(acc, fmt, tool)
    assert b.total == float(exact)


def test_reward_breakdown_rejects_inconsistent_total():
    with pytest.raises(InvariantViolation):
        RewardBreakdown(1.0, 1.0, 1.0, 0.1, 0.2, 1.3000000000000003)
    with pytest.raises(InvariantViolation):
        RewardBreakdown(0.5, 1.0, 1.0, 0.1, 0.2, 0.8)


def test_reward_gate():
    assert RewardBreakdown.compute(0, 1, 1).total == 0.1
    assert RewardBreakdown.compute(1, 1, 1).total == 1.3


def test_group_sample_lengths(image):
    t = Trajectory(image, "q", (), "", "a", Termination.ANSWER)
    with pytest.raises(InvariantViolation):
        GroupSample([t])
    with pytest.raises(InvariantViolation):
        GroupSample([t, t], rewards=[1.0])
    g = GroupSample([t, t], rewards=[1.0, 0.0], advantages=[1.0, -1.0])
    assert g.size == 2 and g.failed == [False, False]


def test_masked_batch_roundtrip():
    b = MaskedTokenBatch([-1.0, -2.0], [-1.5, -2.5], [True, False], 0.5)
    assert MaskedTokenBatch.from_dict(b.to_dict()) == b
    assert b.with_new_logprobs([0.0, 0.0]).new_logprobs == (0.0, 0.0)


def test_qa_item_validation_and_aspect_pool():
    item = QAItem("img", "How many bars?", "4", "recognition", "Counting", "numeric", 2, "synth")
    item.check_aspect()
    assert QAItem.from_dict(item.to_dict()) == item
    with pytest.raises(InvariantViolation):
        QAItem("img", "q", "4", "reasoning", "Counting", "numeric", 2, "synth").check_aspect()
    with pytest.raises(InvariantViolation):
        QAItem("img", "q", " ", "reasoning", "Counting", "numeric", 2, "synth")
    with pytest.raises(InvariantViolation):
        QAItem("img", "q", "4", "reasoning", "Counting", "numeric", 6, "synth")


def test_aspect_pools_have_eight_per_type():
    assert len(DEFAULT_ASPECT_POOLS[QType.RECOGNITION]) == 8
    assert len(DEFAULT_ASPECT_POOLS[QType.REASONING]) == 8
    assert "Extreme Value Analysis" in DEFAULT_ASPECT_POOLS[QType.REASONING]
    assert "Conditional Reasoning" in DEFAULT_ASPECT_POOLS[QType.REASONING]


def test_chart_spec_invariants():
    s = ChartSpec("p", 3, (2, 2), ("line", "bar", "pie"), 3, None)
    assert ChartSpec.from_dict(s.to_dict()) == s
    with pytest.raises(InvariantViolation):
        ChartSpec("p", 5, (2, 2), ("line",) * 5, 3)
    with pytest.raises(InvariantViolation):
        ChartSpec("p", 2, (1, 2), ("line",), 3)


def test_tool_error_kinds():
    assert {k.value for k in ErrorKind} == {"timeout", "exec_failure", "invalid_args", "resource_limit"}
    assert ToolError(ErrorKind.TIMEOUT, "slow").error is ErrorKind.TIMEOUT


@given(bit, bit, bit)
def test_reward_total_is_order_independent(acc, fmt, tool):
    terms = [acc, 0.1 * fmt, 0.2 * tool * acc]
    assert reward_total(acc, fmt, tool, 0.1, 0.2) == math.fsum(reversed(terms))
