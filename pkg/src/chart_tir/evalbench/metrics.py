"""Dataset and rollout statistics."""

from __future__ import annotations

import math
from collections import Counter
from collections.abc import Iterable, Sequence

import numpy as np
from PIL import Image as PILImage

from ..errors import EmptyDataset
from ..model import ChartImage, CodeExec, Crop, QAItem, Trajectory


def grayscale(image: ChartImage) -> np.ndarray:
    """8-bit luma (ITU-R 601 weights), as produced by PIL's ``L`` conversion."""
    return np.asarray(PILImage.fromarray(image.pixels, mode="RGB").convert("L"))


def pixel_entropy(image: ChartImage, base: float = 2.0) -> float:
    """Shannon entropy of the 256-bin grayscale histogram (0 log 0 = 0)."""
    gray = grayscale(image)
    counts = np.bincount(gray.ravel(), minlength=256)
    p = counts[counts > 0] / gray.size
    h = -float(np.sum(p * np.log(p))) / math.log(base)
    return h + 0.0  # normalizes -0.0


def avg_pixel_entropy(images: Iterable[ChartImage], base: float = 2.0) -> float:
    values = [pixel_entropy(img, base) for img in images]
    if not values:
        raise EmptyDataset("average pixel entropy needs at least one image")
    return math.fsum(values) / len(values)


def tool_distribution(trajectories: Iterable[Trajectory]) -> dict[str, float]:
    """Share of executed tool calls by kind, in percent."""
    counts = Counter()
    for t in trajectories:
        for s in t.steps:
            if isinstance(s.action, Crop):
                counts["crop"] += 1
            elif isinstance(s.action, CodeExec):
                counts["code"] += 1
    total = counts["crop"] + counts["code"]
    if total == 0:
        return {"crop_pct": 0.0, "code_pct": 0.0}
    return {"crop_pct": 100.0 * counts["crop"] / total, "code_pct": 100.0 * counts["code"] / total}


def shares(values: Sequence) -> dict[str, float]:
    counts = Counter(str(v) for v in values)
    n = sum(counts.values())
    return {k: 100.0 * c / n for k, c in sorted(counts.items())} if n else {}


def subplot_bucket(n: int) -> str:
    if n <= 1:
        return "1"
    if n <= 4:
        return "2-4"
    if n <= 9:
        return "5-9"
    return "9+"


def qa_statistics(items: Sequence[QAItem]) -> dict:
    return {
        "n_items": len(items),
        "qtype_pct": shares([i.qtype.value for i in items]),
        "answer_type_pct": shares([i.answer_type.value for i in items]),
        "aspect_pct": shares([i.aspect for i in items]),
        "difficulty_pct": shares([i.difficulty for i in items]),
        "provenance_pct": shares([i.provenance.value for i in items]),
    }


def chart_statistics(meta_rows: Sequence[dict]) -> dict:
    specs = [r["spec"] for r in meta_rows if r.get("spec")]
    return {
        "n_charts": len(meta_rows),
        "provenance_pct": shares([r.get("provenance", "synth") for r in meta_rows]),
        "subplot_count_pct": shares([subplot_bucket(int(s["num_subplots"])) for s in specs]),
        "chart_type_pct": shares([t for s in specs for t in s["chart_types"]]),
        "mean_subplots": (sum(int(s["num_subplots"]) for s in specs) / len(specs)) if specs else 0.0,
    }
