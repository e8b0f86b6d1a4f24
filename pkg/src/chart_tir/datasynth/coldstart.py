"""Cold-start distillation: teacher rollouts kept only when every tool call
succeeded and the final answer is correct."""

from __future__ import annotations

import logging
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from ..clients import ChatMessage, ImagePart
from ..errors import PolicyFailure
from ..model import ChartImage, QAItem, Termination, ToolError, Trajectory
from ..prompts import SYSTEM_PROMPT_VERSION
from ..reward import MatchPolicy, accuracy_reward
from ..rollout import RolloutConfig, conversation, run_trajectory
from ..turns import trajectory_format_ok

log = logging.getLogger(__name__)

SFT_SCHEMA = "sft-v1"


@dataclass
class ColdStartOutcome:
    index: int
    item: QAItem
    trajectory: Trajectory | None
    raw_turns: list[str]
    kept: bool
    reason: str

    def audit(self) -> dict:
        return {"index": self.index, "image_ref": self.item.image_ref, "question": self.item.question,
                "kept": self.kept, "reason": self.reason}


def keep_reason(t: Trajectory, raw_turns: list[str], item: QAItem, match: MatchPolicy | None = None, judge=None) -> str:
    """Empty string when the rollout qualifies, otherwise why it was dropped."""
    if t.terminated_by is not Termination.ANSWER:
        return f"not answered ({t.terminated_by.value})"
    if any(isinstance(s.observation, ToolError) for s in t.steps):
        return "tool error"
    if not trajectory_format_ok(t, raw_turns):
        return "format violation"
    if accuracy_reward(t.answer, item.answer, item.answer_type, match, judge, item.question) != 1.0:
        return "wrong answer"
    return ""


def _part_json(part) -> dict:
    if isinstance(part, ImagePart):
        return {"type": "image", "image_ref": part.image.source_id}
    return {"type": "text", "text": part.text}


def sft_record(t: Trajectory, raw_turns: list[str], item: QAItem) -> dict:
    """Chat transcript in the rollout turn grammar; assistant turns are the targets."""
    msgs: list[ChatMessage] = conversation(t, raw_turns)
    return {
        "schema": SFT_SCHEMA,
        "prompt_version": SYSTEM_PROMPT_VERSION,
        "image_ref": item.image_ref,
        "question": item.question,
        "answer": item.answer,
        "messages": [{"role": m.role.value, "content": [_part_json(p) for p in m.content]} for m in msgs],
        "target_turns": list(raw_turns),
    }


def distill_cold_start(
    teacher,
    items: Sequence[QAItem],
    images: Mapping[str, ChartImage],
    cfg: RolloutConfig | None = None,
    sandbox=None,
    match: MatchPolicy | None = None,
    judge=None,
    concurrency: int = 4,
) -> list[ColdStartOutcome]:
    """One teacher rollout per item. Outcomes keep input order."""
    cfg = cfg or RolloutConfig()

    def one(pair):
        idx, item = pair
        try:
            t, raw = run_trajectory(teacher, images[item.image_ref], item.question, cfg, sandbox)
        except PolicyFailure as e:
            log.warning("cold-start item %d: %s", idx, e)
            return ColdStartOutcome(idx, item, e.trajectory, e.raw_turns, False, "policy failure")
        reason = keep_reason(t, raw, item, match, judge)
        return ColdStartOutcome(idx, item, t, raw, not reason, reason or "kept")

    pairs = list(enumerate(items))
    if concurrency <= 1:
        return [one(p) for p in pairs]
    with ThreadPoolExecutor(max_workers=concurrency) as pool:
        return list(pool.map(one, pairs))
