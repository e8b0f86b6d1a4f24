"""Assistant-turn grammar.

A compliant turn is::

    <think>REASONING</think><tool_call>{"name": ..., "arguments": ...}</tool_call>

or::

    <think>REASONING</think><answer>ANSWER</answer>

Whitespace between blocks is ignored. The tool-call payload is a single-line
JSON object. Two tools exist: ``crop`` with ``{"bbox": [x0, y0, x1, y1]}`` and
``code`` with ``{"source": "..."}``.

Parsing is total: every defect is reported as a violation on the result.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field

from .errors import ArityMismatch, InvariantViolation, NonCompliantTurn
from .model import BBox, CodeExec, Crop, ToolAction, Trajectory

TOOL_NAMES = ("crop", "code")

_TAGS = ("think", "tool_call", "answer")


class ViolationKind(str, enum.Enum):
    MISSING_THINK_BLOCK = "missing_think_block"
    UNCLOSED_TAG = "unclosed_tag"
    MULTIPLE_ACTIONS = "multiple_actions"
    UNKNOWN_TOOL = "unknown_tool"
    BAD_TOOL_ARGS = "bad_tool_args"
    NO_ACTION_OR_ANSWER = "no_action_or_answer"
    TRAILING_GARBAGE = "trailing_garbage"


@dataclass(frozen=True)
class ParsedTurn:
    reasoning: str
    tool_call: ToolAction | None = None
    final_answer: str | None = None
    violations: tuple[ViolationKind, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "violations", tuple(self.violations))
        if self.tool_call is not None and self.final_answer is not None:
            raise InvariantViolation("a turn cannot carry both a tool call and an answer")

    @property
    def compliant(self) -> bool:
        return not self.violations


def _next_open_tag(raw: str, pos: int) -> tuple[int, str | None]:
    best, name = -1, None
    for tag in _TAGS:
        i = raw.find(f"<{tag}>", pos)
        if i != -1 and (best == -1 or i < best):
            best, name = i, tag
    return best, name


def _scan(raw: str) -> tuple[list[tuple[str, str]], set[ViolationKind]]:
    """Split ``raw`` into (tag, content) blocks; stray text becomes ("", text)."""
    blocks: list[tuple[str, str]] = []
    problems: set[ViolationKind] = set()
    pos, n = 0, len(raw)
    while pos < n:
        while pos < n and raw[pos].isspace():
            pos += 1
        if pos >= n:
            break
        start, tag = _next_open_tag(raw, pos)
        if start != pos:
            stop = n if start == -1 else start
            blocks.append(("", raw[pos:stop]))
            pos = stop
            continue
        body_start = pos + len(tag) + 2
        end = raw.find(f"</{tag}>", body_start)
        if end == -1:
            problems.add(ViolationKind.UNCLOSED_TAG)
            blocks.append((tag, raw[body_start:]))
            break
        blocks.append((tag, raw[body_start:end]))
        pos = end + len(tag) + 3
    return blocks, problems


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _parse_tool_payload(payload: str) -> tuple[ToolAction | None, ViolationKind | None]:
    text = payload.strip()
    if "\n" in text or "\r" in text:
        return None, ViolationKind.BAD_TOOL_ARGS
    try:
        obj = json.loads(text)
    except (ValueError, RecursionError):
        return None, ViolationKind.BAD_TOOL_ARGS
    if not isinstance(obj, dict) or set(obj) != {"name", "arguments"} or not isinstance(obj["name"], str):
        return None, ViolationKind.BAD_TOOL_ARGS
    name, args = obj["name"], obj["arguments"]
    if name not in TOOL_NAMES:
        return None, ViolationKind.UNKNOWN_TOOL
    if not isinstance(args, dict):
        return None, ViolationKind.BAD_TOOL_ARGS
    if name == "crop":
        bbox = args.get("bbox")
        if set(args) != {"bbox"} or not isinstance(bbox, list) or len(bbox) != 4 or not all(map(_is_int, bbox)):
            return None, ViolationKind.BAD_TOOL_ARGS
        try:
            return Crop(BBox(*bbox)), None
        except InvariantViolation:
            return None, ViolationKind.BAD_TOOL_ARGS
    source = args.get("source")
    if set(args) != {"source"} or not isinstance(source, str) or not source.strip():
        return None, ViolationKind.BAD_TOOL_ARGS
    return CodeExec(source), None


def parse_turn(raw: str) -> ParsedTurn:
    if isinstance(raw, bytes):
        raw = raw.decode("utf-8", errors="replace")
    blocks, violations = _scan(raw)
    found = set(violations)

    reasoning = ""
    rest = blocks
    if blocks and blocks[0][0] == "think":
        reasoning = blocks[0][1].strip()
        rest = blocks[1:]
    else:
        found.add(ViolationKind.MISSING_THINK_BLOCK)

    actions = [(tag, body) for tag, body in rest if tag in ("tool_call", "answer")]
    if any(tag in ("", "think") for tag, _ in rest):
        found.add(ViolationKind.TRAILING_GARBAGE)

    tool_call = None
    answer = None
    if len(actions) > 1:
        found.add(ViolationKind.MULTIPLE_ACTIONS)
    elif len(actions) == 1:
        tag, body = actions[0]
        if tag == "tool_call":
            tool_call, problem = _parse_tool_payload(body)
            if problem is not None:
                found.add(problem)
        else:
            answer = body.strip()
            if not answer:
                answer = None
                found.add(ViolationKind.NO_ACTION_OR_ANSWER)
    else:
        found.add(ViolationKind.NO_ACTION_OR_ANSWER)

    ordered = tuple(k for k in ViolationKind if k in found)
    return ParsedTurn(reasoning, tool_call, answer, ordered)


def tool_call_json(action: ToolAction) -> str:
    if isinstance(action, Crop):
        payload = {"name": "crop", "arguments": {"bbox": action.bbox.as_list()}}
    else:
        payload = {"name": "code", "arguments": {"source": action.source}}
    # "<" only occurs inside JSON strings; escaping it keeps a source that
    # mentions "</tool_call>" from closing the block early
    return json.dumps(payload, ensure_ascii=False, separators=(",", ":")).replace("<", "\\u003c")


def render_turn(p: ParsedTurn) -> str:
    if p.violations:
        raise NonCompliantTurn(f"turn has violations: {[v.value for v in p.violations]}")
    if p.tool_call is None and p.final_answer is None:
        raise NonCompliantTurn("turn has neither a tool call nor an answer")
    if "</think>" in p.reasoning or (p.final_answer is not None and "</answer>" in p.final_answer):
        raise NonCompliantTurn("content contains a closing tag and cannot be rendered")
    head = f"<think>{p.reasoning}</think>"
    if p.tool_call is not None:
        return f"{head}<tool_call>{tool_call_json(p.tool_call)}</tool_call>"
    return f"{head}<answer>{p.final_answer}</answer>"


def trajectory_format_ok(t: Trajectory, raw_turns: list[str]) -> bool:
    """All turns compliant and the last one carries the final answer.

    A rollout that hit a parse failure is non-compliant by definition, so the
    arity check only applies once every turn has parsed cleanly.
    """
    if not raw_turns:
        return False
    parsed = [parse_turn(r) for r in raw_turns]
    if any(p.violations for p in parsed):
        return False
    if t.answer is not None and len(raw_turns) != len(t.steps) + 1:
        raise ArityMismatch(f"{len(raw_turns)} raw turns for {len(t.steps)} steps plus an answer")
    return parsed[-1].final_answer is not None
