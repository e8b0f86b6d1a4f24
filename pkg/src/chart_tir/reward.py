"""Trajectory rewards: gated sum of accuracy, format and tool signals."""

from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass

from .clients import judge_answer
from .errors import JudgeRequired
from .model import AnswerType, RewardBreakdown, ToolError, Trajectory
from .turns import trajectory_format_ok

DEFAULT_LAMBDA1 = 0.1
DEFAULT_LAMBDA2 = 0.2


@dataclass(frozen=True)
class MatchPolicy:
    numeric_rel_tol: float = 0.05
    case_fold: bool = True
    strip_units: bool = True
    judge_fallback: bool = False
    numeric_abs_tol_at_zero: float = 1e-9

    def __post_init__(self):
        if self.numeric_rel_tol < 0:
            raise ValueError("numeric_rel_tol must be >= 0")


_NUM_RE = re.compile(r"^[+-]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?$")
_CURRENCY = "$€£¥₹"
_YES = {"yes", "y", "true"}
_NO = {"no", "n", "false"}


def parse_number(text: str, strip_units: bool = True) -> float | None:
    s = unicodedata.normalize("NFKC", text).strip().rstrip(".")
    s = s.replace("−", "-")
    if strip_units:
        s = s.replace(",", "").strip(_CURRENCY + " ")
        if s.endswith("%"):
            s = s[:-1].strip()
        m = re.match(r"^([+-]?[\d.eE+-]+)\s*[A-Za-z%]*$", s)
        if m:
            s = m.group(1)
        s = s.lstrip(_CURRENCY)
    if not _NUM_RE.match(s):
        return None
    try:
        return float(s)
    except ValueError:
        return None


def normalize_text(text: str, case_fold: bool = True) -> str:
    s = unicodedata.normalize("NFKC", text).strip()
    if case_fold:
        s = s.casefold()
    s = re.sub(r"\s+", " ", s)
    return s.strip(" .!?;:\"'`")


def normalize_binary(text: str) -> str | None:
    head = re.sub(r"[^a-z]", " ", text.strip().lower()).split()
    if not head:
        return None
    if head[0] in _YES:
        return "yes"
    if head[0] in _NO:
        return "no"
    return None


def normalize_list(text: str, case_fold: bool = True) -> tuple[str, ...]:
    s = text.strip().strip("[]()")
    parts = re.split(r"\s*[,;]\s*|\s+(?:to|-|–)\s+", s)
    return tuple(normalize_text(p, case_fold) for p in parts if p.strip())


def answer_key(text: str, answer_type: AnswerType, policy: MatchPolicy | None = None) -> str:
    """Canonical string used to bucket equivalent answers (e.g. for voting)."""
    policy = policy or MatchPolicy()
    answer_type = AnswerType(answer_type)
    if answer_type is AnswerType.NUMERIC:
        v = parse_number(text, policy.strip_units)
        return repr(v) if v is not None else normalize_text(text, policy.case_fold)
    if answer_type is AnswerType.BINARY:
        return normalize_binary(text) or normalize_text(text, policy.case_fold)
    if answer_type is AnswerType.LIST_RANGE:
        return "|".join(normalize_list(text, policy.case_fold))
    return normalize_text(text, policy.case_fold)


def accuracy_reward(
    pred: str | None,
    gold: str,
    answer_type: AnswerType | str = AnswerType.TEXT,
    policy: MatchPolicy | None = None,
    judge=None,
    question: str = "",
) -> float:
    if not gold or not str(gold).strip():
        raise ValueError("gold answer must be non-empty")
    if pred is None:
        return 0.0
    policy = policy or MatchPolicy()
    answer_type = AnswerType(answer_type)

    if answer_type is AnswerType.NUMERIC:
        p, g = parse_number(pred, policy.strip_units), parse_number(gold, policy.strip_units)
        if p is None or g is None:
            return 0.0
        tol = policy.numeric_rel_tol * abs(g) if g != 0 else policy.numeric_abs_tol_at_zero
        return 1.0 if abs(p - g) <= tol else 0.0

    if answer_type is AnswerType.BINARY:
        p, g = normalize_binary(pred), normalize_binary(gold)
        return 1.0 if p is not None and p == g else 0.0

    if answer_type is AnswerType.LIST_RANGE:
        matched = normalize_list(pred, policy.case_fold) == normalize_list(gold, policy.case_fold)
    else:
        matched = normalize_text(pred, policy.case_fold) == normalize_text(gold, policy.case_fold)
    if matched:
        return 1.0
    if not policy.judge_fallback:
        return 0.0
    if judge is None:
        raise JudgeRequired("text answer mismatch needs the judge, but none is configured")
    return 1.0 if judge_answer(judge, question, gold, pred).correct else 0.0


def tool_reward(t: Trajectory) -> float:
    """1 when at least one tool call executed without error."""
    return 1.0 if any(not isinstance(s.observation, ToolError) for s in t.steps) else 0.0


def format_reward(t: Trajectory, raw_turns: list[str]) -> float:
    return 1.0 if trajectory_format_ok(t, raw_turns) else 0.0


def total_reward(
    t: Trajectory,
    raw_turns: list[str],
    gold: str,
    lambda1: float = DEFAULT_LAMBDA1,
    lambda2: float = DEFAULT_LAMBDA2,
    answer_type: AnswerType | str = AnswerType.TEXT,
    policy: MatchPolicy | None = None,
    judge=None,
) -> RewardBreakdown:
    acc = accuracy_reward(t.answer, gold, answer_type, policy, judge, t.question)
    return RewardBreakdown.compute(acc, format_reward(t, raw_turns), tool_reward(t), lambda1, lambda2)
