"""QA generation conditioned on analytical aspects, and the checker agent's
four-stage quality control (alignment, reasoning verification, majority
voting, difficulty)."""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field, replace

from ..clients import ChatMessage, ImagePart, Role, Sampling, TextPart, parse_yes_no
from ..errors import GenerationUnparseable, InvariantViolation, UnparseableVerdict
from ..model import DEFAULT_ASPECT_POOLS, AnswerType, ChartImage, Provenance, QAItem, QType
from ..reward import MatchPolicy, answer_key
from ..turns import parse_turn

QA_TEMPLATE_VERSION = "qa-v1"
CHECK_TEMPLATE_VERSION = "check-v1"

QA_TEMPLATE = """You write question-answer pairs about the chart shown.
Question category: {qtype}
Analytical aspect to exercise: {aspect}
Chart context:
{context}

Write {n} question(s) answerable from the chart alone. Answers must be short and exact.
Reply with a JSON list only:
[{{"question": "...", "answer": "...", "answer_type": "text|numeric|binary|list_range"}}]"""

ALIGN_TEMPLATE = """Look at the chart. Can the following question be answered from the chart's visual content
alone, without outside knowledge or unsupported claims?
Question: {question}
Proposed answer: {answer}
Reply with exactly: verdict: yes  or  verdict: no"""

VERIFY_TEMPLATE = """Look at the chart and check the proposed answer step by step against the chart evidence.
Question: {question}
Proposed answer: {answer}
Is the answer correct and consistent with the chart? Reply with exactly: verdict: yes  or  verdict: no"""

VOTE_TEMPLATE = """Answer the question about the chart. Give only the final answer, as briefly as possible.
Question: {question}"""

DIFFICULTY_TEMPLATE = """How much visual and numerical reasoning does this question need, from 1 (trivial lookup)
to 5 (multi-step analysis across several chart elements)?
Question: {question}
Answer: {answer}
Reply with: difficulty: <1-5>"""


def _find_json_list(raw: str):
    fenced = re.search(r"```(?:json)?\s*\n(.*?)```", raw, re.DOTALL)
    text = fenced.group(1) if fenced else raw
    start, end = text.find("["), text.rfind("]")
    if start == -1 or end < start:
        raise GenerationUnparseable("no JSON list in the QA agent reply")
    try:
        return json.loads(text[start:end + 1])
    except ValueError as e:
        raise GenerationUnparseable(f"invalid JSON in the QA agent reply: {e}") from None


def generate_qa(
    llm, image: ChartImage, context: str, aspect: str, qtype: QType | str,
    provenance: Provenance | str = Provenance.SYNTH, n: int = 2,
    pools: dict[QType, tuple[str, ...]] | None = None, sampling: Sampling | None = None,
) -> list[QAItem]:
    qtype = QType(qtype)
    pools = pools or DEFAULT_ASPECT_POOLS
    if aspect not in pools.get(qtype, ()):
        raise InvariantViolation(f"aspect {aspect!r} is not in the {qtype.value} pool")
    prompt = QA_TEMPLATE.format(qtype=qtype.value, aspect=aspect, context=context.strip() or "(none)", n=n)
    msg = ChatMessage(Role.USER, (ImagePart(image), TextPart(prompt)))
    raw = llm.complete([msg], sampling or Sampling(temperature=0.7, max_tokens=1024)).text
    rows = _find_json_list(raw)
    items = []
    for row in rows:
        if not isinstance(row, dict):
            raise GenerationUnparseable("QA entries must be JSON objects")
        q, a = row.get("question"), row.get("answer")
        if not isinstance(q, str) or not q.strip() or a is None or not str(a).strip():
            raise GenerationUnparseable("a QA entry is missing its question or answer")
        try:
            atype = AnswerType(row.get("answer_type") or "text")
        except ValueError:
            atype = AnswerType.TEXT
        items.append(QAItem(image.source_id, q.strip(), str(a).strip(), qtype, aspect, atype, 3, provenance))
    return items


@dataclass(frozen=True)
class CheckReport:
    alignment_ok: bool
    reasoning_ok: bool
    votes: tuple[str, ...]
    agreement: float
    difficulty: int
    kept: bool
    thresholds: dict = field(default_factory=dict)
    template_version: str = CHECK_TEMPLATE_VERSION

    def to_dict(self) -> dict:
        return {
            "alignment_ok": self.alignment_ok,
            "reasoning_ok": self.reasoning_ok,
            "votes": list(self.votes),
            "agreement": self.agreement,
            "difficulty": self.difficulty,
            "kept": self.kept,
            "thresholds": self.thresholds,
            "template_version": self.template_version,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CheckReport":
        return cls(d["alignment_ok"], d["reasoning_ok"], tuple(d["votes"]), float(d["agreement"]),
                   int(d["difficulty"]), bool(d["kept"]), dict(d.get("thresholds") or {}),
                   d.get("template_version", CHECK_TEMPLATE_VERSION))


def passes(report: CheckReport, qtype: QType, vote_threshold: float, difficulty_threshold: int) -> bool:
    """The keep rule. Difficulty gates reasoning questions only."""
    if not (report.alignment_ok and report.reasoning_ok and report.agreement >= vote_threshold):
        return False
    return QType(qtype) is not QType.REASONING or report.difficulty >= difficulty_threshold


def _ask(checker, image, prompt, temperature, max_tokens) -> str:
    msg = ChatMessage(Role.USER, (ImagePart(image), TextPart(prompt)))
    return checker.complete([msg], Sampling(temperature=temperature, max_tokens=max_tokens)).text


def _vote_answer(raw: str) -> str:
    parsed = parse_turn(raw)
    if parsed.final_answer is not None:
        return parsed.final_answer
    m = re.search(r"<answer>(.*?)</answer>", raw, re.DOTALL)
    return (m.group(1) if m else raw).strip()


def parse_difficulty(raw: str) -> int:
    m = re.search(r"difficulty\s*[:=]\s*([1-5])\b", raw, re.IGNORECASE) or re.match(r"\s*([1-5])\b", raw)
    if not m:
        raise UnparseableVerdict(f"cannot read a difficulty score from {raw[:80]!r}")
    return int(m.group(1))


def check_qa(
    checker, item: QAItem, image: ChartImage, votes_n: int = 5, vote_threshold: float = 0.8,
    difficulty_threshold: int = 3, match: MatchPolicy | None = None,
) -> CheckReport:
    """Run all four stages and decide whether ``item`` is kept."""
    fmt = {"question": item.question, "answer": item.answer}
    aligned = parse_yes_no(_ask(checker, image, ALIGN_TEMPLATE.format(**fmt), 0.0, 16))
    verified = parse_yes_no(_ask(checker, image, VERIFY_TEMPLATE.format(**fmt), 0.0, 512))
    votes = tuple(_vote_answer(_ask(checker, image, VOTE_TEMPLATE.format(**fmt), 1.0, 128)) for _ in range(votes_n))
    keys = Counter(answer_key(v, item.answer_type, match) for v in votes)
    agreement = max(keys.values()) / votes_n if votes_n else 0.0
    difficulty = parse_difficulty(_ask(checker, image, DIFFICULTY_TEMPLATE.format(**fmt), 0.0, 16))
    thresholds = {"votes_n": votes_n, "vote_threshold": vote_threshold, "difficulty_threshold": difficulty_threshold}
    report = CheckReport(aligned, verified, votes, agreement, difficulty, False, thresholds)
    return replace(report, kept=passes(report, item.qtype, vote_threshold, difficulty_threshold))


def with_difficulty(item: QAItem, report: CheckReport) -> QAItem:
    return replace(item, difficulty=report.difficulty)
