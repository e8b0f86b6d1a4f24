"""Plot-code generation with sandbox repair, and MLLM-judged chart filters."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass

from ..clients import ChatMessage, ImagePart, Role, Sampling, TextPart
from ..errors import InvariantViolation, RenderFailed, UnparseableVerdict
from ..model import ChartImage, ChartSpec
from .references import ReferenceSnippet

log = logging.getLogger(__name__)

PLOT_TEMPLATE_VERSION = "plot-v1"
QUALITY_TEMPLATE_VERSION = "quality-v1"
CHART_FILTER_TEMPLATE_VERSION = "chart-filter-v1"

PLOT_TEMPLATE = """You are a plotting agent. Write a complete, self-contained Python program using matplotlib
that draws a realistic chart and saves it to "chart.png".

Persona (the topic should suit them): {persona}
Number of subplots: {num_subplots}
Grid layout (rows, cols): {rows} x {cols}
Chart type of each subplot, in order: {chart_types}
Visual complexity (1 = simple, 5 = dense): {difficulty}

Invent concrete data values inline in the code. Every subplot needs a title, axis labels where
applicable, and a legend when several series are drawn.
Follow the style of this reference program:
```python
{reference}
```
Reply with a single ```python code block."""

REPAIR_TEMPLATE = """Running your program failed:
{error}
Return the full corrected program as a single ```python code block. It must save "chart.png"."""

QUALITY_TEMPLATE = """Rate this chart on two axes from 1 (worst) to 5 (best).
visual_quality: penalize severe overlap, misalignment and unreadable text.
semantic_completeness: are the essential elements (axes, legends, labels) present so the chart
can be read on its own?
Reply with JSON only: {"visual_quality": <1-5>, "semantic_completeness": <1-5>}"""

CHART_FILTER_TEMPLATE = """Classify this figure extracted from a scientific paper.
Caption: {caption}
Context: {context}
Reply with exactly one label:
chart      - a valid data visualization (plot, bar chart, heatmap, ...)
cluttered  - a data visualization too cluttered to read
diagram    - a schematic, flowchart or architecture figure
table      - a table rendered as an image
photo      - a photograph or natural image
other      - anything else"""

FIGURE_LABELS = ("chart", "cluttered", "diagram", "table", "photo", "other")

_CODE_BLOCK = re.compile(r"```(?:python|py)?[ \t]*\n(.*?)```", re.DOTALL)


def extract_code(reply: str) -> str:
    m = _CODE_BLOCK.search(reply)
    return (m.group(1) if m else reply).strip("\n")


@dataclass(frozen=True)
class GeneratedChart:
    code: str
    image: ChartImage
    repairs: int


def _plot_prompt(spec: ChartSpec, ref: ReferenceSnippet | None) -> str:
    return PLOT_TEMPLATE.format(
        persona=spec.persona,
        num_subplots=spec.num_subplots,
        rows=spec.layout[0],
        cols=spec.layout[1],
        chart_types=", ".join(spec.chart_types),
        difficulty=spec.difficulty,
        reference=ref.code.strip() if ref is not None else "# (no reference)",
    )


def generate_chart(
    llm, spec: ChartSpec, ref: ReferenceSnippet | None, sandbox, max_repairs: int = 3,
    source_id: str = "chart", sampling: Sampling | None = None,
) -> GeneratedChart:
    """Ask the plotting agent for code, run it, and feed errors back until an image appears."""
    sampling = sampling or Sampling(temperature=0.7, max_tokens=4096)
    messages = [ChatMessage.text(Role.USER, _plot_prompt(spec, ref))]
    error = ""
    for attempt in range(max_repairs + 1):
        reply = llm.complete(messages, sampling).text
        code = extract_code(reply)
        res = sandbox.execute(code, collect_artifacts=True)
        pngs = [a for a in res.artifacts if a.lower().endswith(".png")]
        if res.ok and pngs:
            name = "chart.png" if "chart.png" in pngs else pngs[0]
            try:
                image = ChartImage.from_png(res.artifact_data[name], source_id)
            except Exception as e:  # unreadable image: treat like any other render failure
                error = f"the saved image could not be decoded: {e}"
            else:
                return GeneratedChart(code, image, attempt)
        elif res.ok:
            error = "the program ran but did not save any PNG image"
        else:
            error = (res.stderr.strip() or f"exit status {res.exit_code}")[-1500:]
        log.debug("render attempt %d failed: %s", attempt + 1, error.splitlines()[-1:] or error)
        messages += [ChatMessage.text(Role.ASSISTANT, reply), ChatMessage.text(Role.USER, REPAIR_TEMPLATE.format(error=error))]
    raise RenderFailed(f"no valid chart after {max_repairs + 1} executions", attempts=max_repairs + 1, last_error=error)


@dataclass(frozen=True)
class QualityVerdict:
    visual_score: int
    semantic_score: int
    keep: bool

    def to_dict(self) -> dict:
        return {"visual_score": self.visual_score, "semantic_score": self.semantic_score, "keep": self.keep}


def _score(raw: str, key: str) -> int | None:
    m = re.search(rf'"?{key}[a-z_]*"?\s*[:=]\s*"?([1-5])\b', raw, re.IGNORECASE)
    return int(m.group(1)) if m else None


def parse_quality(raw: str) -> tuple[int, int]:
    visual, semantic = _score(raw, "visual"), _score(raw, "semantic")
    if visual is None or semantic is None:
        raise UnparseableVerdict(f"cannot read quality scores from {raw[:120]!r}")
    return visual, semantic


def filter_image(judge, image: ChartImage, thresholds: tuple[int, int] = (3, 3)) -> QualityVerdict:
    """Keep a chart only if both the visual and the semantic score clear their threshold."""
    msg = ChatMessage(Role.USER, (ImagePart(image), TextPart(QUALITY_TEMPLATE)))
    raw = judge.complete([msg], Sampling(temperature=0.0, max_tokens=64)).text
    visual, semantic = parse_quality(raw)
    return QualityVerdict(visual, semantic, visual >= thresholds[0] and semantic >= thresholds[1])


@dataclass(frozen=True)
class ArxivFigureRecord:
    image: ChartImage
    caption: str
    context: str
    field_tag: str = ""

    def __post_init__(self):
        if not self.caption.strip() and not self.context.strip():
            raise InvariantViolation(f"figure {self.image.source_id!r} has neither caption nor context")


def parse_figure_label(raw: str) -> str:
    words = re.sub(r"[^a-z\- ]", " ", raw.strip().lower()).split()
    if words and words[0] == "non-chart":
        return "other"
    if words and words[0] in FIGURE_LABELS:
        return words[0]
    raise UnparseableVerdict(f"cannot read a figure label from {raw[:80]!r}")


def filter_arxiv_record(judge, rec: ArxivFigureRecord) -> bool:
    """True when the judge labels the mined figure a readable chart."""
    prompt = CHART_FILTER_TEMPLATE.format(caption=rec.caption.strip() or "(none)", context=rec.context.strip()[:2000] or "(none)")
    msg = ChatMessage(Role.USER, (ImagePart(rec.image), TextPart(prompt)))
    raw = judge.complete([msg], Sampling(temperature=0.0, max_tokens=8)).text
    return parse_figure_label(raw) == "chart"


def spec_context(spec: ChartSpec, code: str) -> str:
    """Text context handed to the QA agent for a synthetic chart: its spec and source."""
    return json.dumps(spec.to_dict(), ensure_ascii=False) + "\n\nPlotting code (contains the exact data):\n" + code
