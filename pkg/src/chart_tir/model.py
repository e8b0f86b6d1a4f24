"""Shared domain types: images, tool actions, observations, trajectories,
rewards, GRPO batches and synthesis-pipeline records.

All types are immutable once built; image pixel buffers are flagged
read-only so they can be shared between threads.
"""

from __future__ import annotations

import enum
import hashlib
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image as PILImage

from .errors import InvariantViolation


class ChartImage:
    """An 8-bit RGB raster with a stable identifier."""

    __slots__ = ("_pixels", "source_id", "_hash")

    def __init__(self, pixels, source_id: str):
        arr = np.asarray(pixels)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise InvariantViolation(f"pixels must have shape (height, width, 3), got {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise InvariantViolation("image must be at least 1x1")
        if arr.dtype != np.uint8:
            if np.any(arr < 0) or np.any(arr > 255):
                raise InvariantViolation("pixel values must lie in [0, 255]")
            arr = arr.astype(np.uint8)
        arr = np.ascontiguousarray(arr).copy()
        arr.setflags(write=False)
        self._pixels = arr
        self.source_id = str(source_id)
        self._hash = None

    @property
    def pixels(self) -> np.ndarray:
        return self._pixels

    @property
    def width(self) -> int:
        return int(self._pixels.shape[1])

    @property
    def height(self) -> int:
        return int(self._pixels.shape[0])

    @property
    def content_hash(self) -> str:
        if self._hash is None:
            h = hashlib.sha256()
            h.update(f"{self.height}x{self.width}:".encode())
            h.update(self._pixels.tobytes())
            self._hash = h.hexdigest()
        return self._hash

    def __eq__(self, other):
        if not isinstance(other, ChartImage):
            return NotImplemented
        return (
            self.source_id == other.source_id
            and self._pixels.shape == other._pixels.shape
            and bool(np.array_equal(self._pixels, other._pixels))
        )

    def __hash__(self):
        return hash((self.source_id, self.content_hash))

    def __repr__(self):
        return f"ChartImage({self.source_id!r}, {self.width}x{self.height})"

    @classmethod
    def from_png(cls, data: bytes | str | Path, source_id: str | None = None) -> "ChartImage":
        if isinstance(data, (str, Path)):
            path = Path(data)
            raw = path.read_bytes()
            if source_id is None:
                source_id = path.stem
        else:
            raw = data
        with PILImage.open(io.BytesIO(raw)) as im:
            rgb = np.asarray(im.convert("RGB"))
        return cls(rgb, source_id if source_id is not None else "image")

    def to_png(self) -> bytes:
        buf = io.BytesIO()
        PILImage.fromarray(self._pixels, mode="RGB").save(buf, format="PNG")
        return buf.getvalue()


@dataclass(frozen=True)
class BBox:
    """Integer pixel box, origin top-left, ``x1``/``y1`` exclusive."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        for name in ("x0", "y0", "x1", "y1"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
                raise InvariantViolation(f"bbox {name} must be an integer, got {v!r}")
        if not (0 <= self.x0 < self.x1 and 0 <= self.y0 < self.y1):
            raise InvariantViolation(f"invalid bbox {self.as_list()}")

    def as_list(self) -> list[int]:
        return [int(self.x0), int(self.y0), int(self.x1), int(self.y1)]

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0


# --- tool actions --------------------------------------------------------


@dataclass(frozen=True)
class Crop:
    bbox: BBox

    kind = "crop"


@dataclass(frozen=True)
class CodeExec:
    source: str

    kind = "code"

    def __post_init__(self):
        if not self.source or not self.source.strip():
            raise InvariantViolation("code source must be non-empty")


ToolAction = Union[Crop, CodeExec]


# --- observations --------------------------------------------------------


class ErrorKind(str, enum.Enum):
    TIMEOUT = "timeout"
    EXEC_FAILURE = "exec_failure"
    INVALID_ARGS = "invalid_args"
    RESOURCE_LIMIT = "resource_limit"


@dataclass(frozen=True)
class TextObs:
    content: str
    truncated: bool = False

    kind = "text"


@dataclass(frozen=True)
class ImageObs:
    image: ChartImage

    kind = "image"


@dataclass(frozen=True)
class ToolError:
    error: ErrorKind
    message: str

    kind = "error"


Observation = Union[TextObs, ImageObs, ToolError]


@dataclass(frozen=True)
class Step:
    reasoning: str
    action: ToolAction
    observation: Observation

    def __post_init__(self):
        if self.observation is None:
            raise InvariantViolation("a persisted step must carry its observation")


class Termination(str, enum.Enum):
    ANSWER = "answer"
    TURN_LIMIT = "turn_limit"
    PARSE_FAILURE_LIMIT = "parse_failure_limit"
    POLICY_FAILURE = "policy_failure"


@dataclass(frozen=True)
class Trajectory:
    image: ChartImage
    question: str
    steps: tuple[Step, ...]
    final_reasoning: str
    answer: str | None
    terminated_by: Termination

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        object.__setattr__(self, "terminated_by", Termination(self.terminated_by))
        answered = self.terminated_by is Termination.ANSWER
        if answered != (self.answer is not None):
            raise InvariantViolation(
                f"terminated_by={self.terminated_by.value} is inconsistent with answer={self.answer!r}"
            )

    def check_turn_budget(self, max_tool_turns: int) -> None:
        if len(self.steps) > max_tool_turns:
            raise InvariantViolation(f"{len(self.steps)} steps exceed the budget of {max_tool_turns}")

    @property
    def tool_calls(self) -> list[ToolAction]:
        return [s.action for s in self.steps]


# --- rewards and GRPO ----------------------------------------------------


def reward_total(acc: float, fmt: float, tool: float, lambda1: float, lambda2: float) -> float:
    """Closed-form trajectory reward; the tool term counts only when acc > 0.

    Summed with ``math.fsum`` so the result is the correctly rounded value
    of the exact sum, independent of term order.
    """
    gate = 1.0 if acc > 0 else 0.0
    return math.fsum((acc, lambda1 * fmt, lambda2 * gate * tool))


@dataclass(frozen=True)
class RewardBreakdown:
    acc: float
    format: float
    tool: float
    lambda1: float
    lambda2: float
    total: float

    def __post_init__(self):
        for name in ("acc", "format", "tool"):
            if getattr(self, name) not in (0.0, 1.0):
                raise InvariantViolation(f"{name} must be 0 or 1")
        expected = reward_total(self.acc, self.format, self.tool, self.lambda1, self.lambda2)
        if self.total != expected:
            raise InvariantViolation(f"total {self.total!r} != closed form {expected!r}")

    @classmethod
    def compute(cls, acc, fmt, tool, lambda1=0.1, lambda2=0.2) -> "RewardBreakdown":
        acc, fmt, tool = float(acc), float(fmt), float(tool)
        return cls(acc, fmt, tool, lambda1, lambda2, reward_total(acc, fmt, tool, lambda1, lambda2))

    def to_dict(self) -> dict:
        return {
            "acc": self.acc,
            "format": self.format,
            "tool": self.tool,
            "lambda1": self.lambda1,
            "lambda2": self.lambda2,
            "total": self.total,
        }


@dataclass
class GroupSample:
    """G rollouts of one prompt; rewards and advantages are filled in later."""

    trajectories: list[Trajectory]
    raw_turns: list[list[str]] = field(default_factory=list)
    rewards: list[float] | None = None
    advantages: list[float] | None = None
    failed: list[bool] = field(default_factory=list)

    def __post_init__(self):
        g = len(self.trajectories)
        if g < 2:
            raise InvariantViolation("a group needs at least two trajectories")
        if not self.failed:
            self.failed = [False] * g
        if self.raw_turns and len(self.raw_turns) != g:
            raise InvariantViolation(f"raw_turns has length {len(self.raw_turns)}, expected {g}")
        for name in ("rewards", "advantages", "failed"):
            v = getattr(self, name)
            if v is not None and len(v) != g:
                raise InvariantViolation(f"{name} has length {len(v)}, expected {g}")

    @property
    def size(self) -> int:
        return len(self.trajectories)


@dataclass(frozen=True)
class MaskedTokenBatch:
    """Per-token log-probabilities of one trajectory plus its trainable-token mask."""

    old_logprobs: tuple[float, ...]
    new_logprobs: tuple[float, ...]
    mask: tuple[bool, ...]
    advantage: float

    def __post_init__(self):
        object.__setattr__(self, "old_logprobs", tuple(float(x) for x in self.old_logprobs))
        object.__setattr__(self, "new_logprobs", tuple(float(x) for x in self.new_logprobs))
        object.__setattr__(self, "mask", tuple(bool(x) for x in self.mask))
        object.__setattr__(self, "advantage", float(self.advantage))

    def with_new_logprobs(self, new_logprobs) -> "MaskedTokenBatch":
        return MaskedTokenBatch(self.old_logprobs, tuple(new_logprobs), self.mask, self.advantage)

    def to_dict(self) -> dict:
        return {
            "old_logprobs": list(self.old_logprobs),
            "new_logprobs": list(self.new_logprobs),
            "mask": list(self.mask),
            "advantage": self.advantage,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MaskedTokenBatch":
        return cls(d["old_logprobs"], d["new_logprobs"], d["mask"], d["advantage"])


# --- synthesis records ---------------------------------------------------


class QType(str, enum.Enum):
    RECOGNITION = "recognition"
    REASONING = "reasoning"


class AnswerType(str, enum.Enum):
    TEXT = "text"
    NUMERIC = "numeric"
    BINARY = "binary"
    LIST_RANGE = "list_range"


class Provenance(str, enum.Enum):
    SYNTH = "synth"
    ARXIV_MINED = "arxiv_mined"


RECOGNITION_ASPECTS = (
    "Axis Label Extraction",
    "Color Extraction",
    "Title Extraction",
    "Tick Extraction",
    "Numerical Value Extraction",
    "Counting",
    "Pattern Recognition",
    "Enumeration",
)

REASONING_ASPECTS = (
    "Extreme Value Analysis",
    "Conditional Reasoning",
    "Comparative Analysis",
    "Trend Analysis",
    "Aggregation & Calculation",
    "Ranking & Ordering",
    "Proportional & Distributional Analysis",
    "Pattern & Correlation",
)

DEFAULT_ASPECT_POOLS: dict[QType, tuple[str, ...]] = {
    QType.RECOGNITION: RECOGNITION_ASPECTS,
    QType.REASONING: REASONING_ASPECTS,
}


@dataclass(frozen=True)
class QAItem:
    image_ref: str
    question: str
    answer: str
    qtype: QType
    aspect: str
    answer_type: AnswerType
    difficulty: int
    provenance: Provenance

    def __post_init__(self):
        object.__setattr__(self, "qtype", QType(self.qtype))
        object.__setattr__(self, "answer_type", AnswerType(self.answer_type))
        object.__setattr__(self, "provenance", Provenance(self.provenance))
        if isinstance(self.difficulty, bool) or not isinstance(self.difficulty, int) or not 1 <= self.difficulty <= 5:
            raise InvariantViolation(f"difficulty must be an integer in 1..5, got {self.difficulty!r}")
        if not str(self.answer).strip():
            raise InvariantViolation("answer must be non-empty")

    def check_aspect(self, pools: dict[QType, tuple[str, ...]] | None = None) -> None:
        pools = pools or DEFAULT_ASPECT_POOLS
        if self.aspect not in pools.get(self.qtype, ()):
            raise InvariantViolation(f"aspect {self.aspect!r} not in the {self.qtype.value} pool")

    def to_dict(self) -> dict:
        return {
            "image_ref": self.image_ref,
            "question": self.question,
            "answer": self.answer,
            "qtype": self.qtype.value,
            "aspect": self.aspect,
            "answer_type": self.answer_type.value,
            "difficulty": self.difficulty,
            "provenance": self.provenance.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QAItem":
        return cls(
            image_ref=str(d["image_ref"]),
            question=str(d["question"]),
            answer=str(d["answer"]),
            qtype=d["qtype"],
            aspect=str(d["aspect"]),
            answer_type=d["answer_type"],
            difficulty=int(d["difficulty"]),
            provenance=d["provenance"],
        )


@dataclass(frozen=True)
class ChartSpec:
    persona: str
    num_subplots: int
    layout: tuple[int, int]
    chart_types: tuple[str, ...]
    difficulty: int
    reference_id: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "layout", tuple(self.layout))
        object.__setattr__(self, "chart_types", tuple(self.chart_types))
        rows, cols = self.layout
        if self.num_subplots < 1:
            raise InvariantViolation("num_subplots must be >= 1")
        if rows * cols < self.num_subplots:
            raise InvariantViolation(f"layout {self.layout} cannot hold {self.num_subplots} subplots")
        if len(self.chart_types) != self.num_subplots:
            raise InvariantViolation("one chart type per subplot is required")
        if not 1 <= self.difficulty <= 5:
            raise InvariantViolation("difficulty must be in 1..5")

    def to_dict(self) -> dict:
        return {
            "persona": self.persona,
            "num_subplots": self.num_subplots,
            "layout": list(self.layout),
            "chart_types": list(self.chart_types),
            "difficulty": self.difficulty,
            "reference_id": self.reference_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ChartSpec":
        return cls(
            d["persona"], int(d["num_subplots"]), tuple(d["layout"]), tuple(d["chart_types"]),
            int(d["difficulty"]), d.get("reference_id"),
        )
