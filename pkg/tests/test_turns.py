import pytest
from hypothesis import given, settings, strategies as st

from chart_tir.errors import ArityMismatch, NonCompliantTurn
from chart_tir.model import BBox, CodeExec, Crop, Step, Termination, TextObs, Trajectory
from chart_tir.turns import ParsedTurn, ViolationKind as V, parse_turn, render_turn, trajectory_format_ok

from conftest import answer_turn, code_turn, crop_turn, make_image


def test_crop_example():
    p = parse_turn('<think>zoom to legend</think><tool_call>{"name":"crop","arguments":{"bbox":[10,20,110,220]}}</tool_call>')
    assert p.reasoning == "zoom to legend"
    assert p.tool_call == Crop(BBox(10, 20, 110, 220))
    assert p.violations == ()
    assert p.compliant


def test_answer_example():
    p = parse_turn("<think>done</think><answer>42</answer>")
    assert p.final_answer == "42" and p.tool_call is None and p.compliant


def test_code_call():
    p = parse_turn(code_turn("print(1+1)"))
    assert p.tool_call == CodeExec("print(1+1)")


def test_whitespace_between_blocks_is_ignored():
    p = parse_turn("  <think> a </think>\n\n<answer> 7 </answer>\n")
    assert p.compliant and p.reasoning == "a" and p.final_answer == "7"


@pytest.mark.parametrize("raw, kind", [
    ("<think>hmm</think>", V.NO_ACTION_OR_ANSWER),
    ("<answer>1</answer>", V.MISSING_THINK_BLOCK),
    ("<think>a</think><answer>1", V.UNCLOSED_TAG),
    ("<think>a</think><answer>1</answer><answer>2</answer>", V.MULTIPLE_ACTIONS),
    (crop_turn([0, 0, 5, 5]) + "<answer>1</answer>", V.MULTIPLE_ACTIONS),
    ('<think>a</think><tool_call>{"name":"rotate","arguments":{}}</tool_call>', V.UNKNOWN_TOOL),
    ('<think>a</think><tool_call>{"name":"crop","arguments":{"bbox":[1,2,3]}}</tool_call>', V.BAD_TOOL_ARGS),
    ('<think>a</think><tool_call>{"name":"crop","arguments":{"bbox":[5,0,1,9]}}</tool_call>', V.BAD_TOOL_ARGS),
    ('<think>a</think><tool_call>{"name":"crop","arguments":{"bbox":[0,0,1.5,9]}}</tool_call>', V.BAD_TOOL_ARGS),
    ('<think>a</think><tool_call>{"name":"code","arguments":{"source":""}}</tool_call>', V.BAD_TOOL_ARGS),
    ('<think>a</think><tool_call>{"name":"code",\n"arguments":{"source":"1"}}</tool_call>', V.BAD_TOOL_ARGS),
    ("<think>a</think><tool_call>not json</tool_call>", V.BAD_TOOL_ARGS),
    ("<think>a</think><answer>1</answer> trailing", V.TRAILING_GARBAGE),
    ("preamble <think>a</think><answer>1</answer>", V.MISSING_THINK_BLOCK),
    ("<think>a</think><think>b</think><answer>1</answer>", V.TRAILING_GARBAGE),
    ("<think>a</think><answer>   </answer>", V.NO_ACTION_OR_ANSWER),
    ("", V.NO_ACTION_OR_ANSWER),
])
def test_violations(raw, kind):
    p = parse_turn(raw)
    assert kind in p.violations
    assert not p.compliant


@settings(max_examples=2000, deadline=None)
@given(st.text())
def test_parse_is_total_on_text(raw):
    p = parse_turn(raw)
    assert not (p.tool_call is not None and p.final_answer is not None)


tags = st.sampled_from(["<think>", "</think>", "<answer>", "</answer>", "<tool_call>", "</tool_call>",
                        '{"name":"crop","arguments":{"bbox":[0,0,4,4]}}', '{"name":"code"', "x", " ", "\n"])


@settings(max_examples=2000, deadline=None)
@given(st.lists(tags, max_size=12).map("".join))
def test_parse_is_total_on_tag_soup(raw):
    p = parse_turn(raw)
    assert not (p.tool_call is not None and p.final_answer is not None)
    assert p.compliant == (len(p.violations) == 0)


@settings(max_examples=500, deadline=None)
@given(st.binary())
def test_parse_accepts_bytes(raw):
    parse_turn(raw)


safe_text = st.text().filter(lambda s: "</think>" not in s)
answers = st.text(min_size=1).map(str.strip).filter(lambda s: s and "</answer>" not in s)
bboxes = st.tuples(st.integers(0, 500), st.integers(0, 500), st.integers(1, 500), st.integers(1, 500)).map(
    lambda t: Crop(BBox(t[0], t[1], t[0] + t[2], t[1] + t[3])))
codes = st.text(min_size=1).filter(str.strip).map(CodeExec)


@st.composite
def compliant_turns(draw):
    reasoning = draw(safe_text).strip()
    if draw(st.booleans()):
        return ParsedTurn(reasoning, final_answer=draw(answers))
    return ParsedTurn(reasoning, tool_call=draw(st.one_of(bboxes, codes)))


@settings(max_examples=1000, deadline=None)
@given(compliant_turns())
def test_render_parse_roundtrip(p):
    assert parse_turn(render_turn(p)) == p


def test_render_examples():
    assert render_turn(ParsedTurn("x", final_answer="7")) == "<think>x</think><answer>7</answer>"
    raw = render_turn(ParsedTurn("", tool_call=Crop(BBox(0, 0, 1, 1))))
    assert parse_turn(raw).tool_call == Crop(BBox(0, 0, 1, 1))
    with pytest.raises(NonCompliantTurn):
        render_turn(ParsedTurn("x", violations=(V.NO_ACTION_OR_ANSWER,)))
    with pytest.raises(NonCompliantTurn):
        render_turn(ParsedTurn("x"))


def test_render_escapes_closing_tag_in_code():
    p = ParsedTurn("r", tool_call=CodeExec('print("</tool_call>")'))
    assert parse_turn(render_turn(p)) == p


IMG = make_image()
STEP = Step("zoom", Crop(BBox(0, 0, 8, 8)), TextObs("ok", False))


def test_format_ok_two_turns():
    t = Trajectory(IMG, "q", (STEP,), "done", "5", Termination.ANSWER)
    assert trajectory_format_ok(t, [crop_turn([0, 0, 8, 8]), answer_turn("5")])


def test_format_trailing_garbage_is_false():
    t = Trajectory(IMG, "q", (STEP,), "done", "5", Termination.ANSWER)
    assert not trajectory_format_ok(t, [crop_turn([0, 0, 8, 8]) + " junk", answer_turn("5")])


def test_format_last_turn_must_answer():
    t = Trajectory(IMG, "q", (STEP,), "done", "5", Termination.ANSWER)
    assert not trajectory_format_ok(t, [crop_turn([0, 0, 8, 8]), crop_turn([0, 0, 8, 8])])


def test_format_arity_mismatch():
    t = Trajectory(IMG, "q", (STEP,), "done", "5", Termination.ANSWER)
    with pytest.raises(ArityMismatch):
        trajectory_format_ok(t, [answer_turn("5")])


def test_format_unanswered_is_false():
    t = Trajectory(IMG, "q", (STEP,) * 2, "", None, Termination.TURN_LIMIT)
    assert not trajectory_format_ok(t, [crop_turn([0, 0, 8, 8])] * 2)
    assert not trajectory_format_ok(t, [])
