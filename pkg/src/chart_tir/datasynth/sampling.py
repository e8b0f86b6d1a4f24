"""Chart-spec and QA-aspect sampling with configurable target distributions.

Defaults reproduce the corpus statistics published for the reference chart
dataset (shares in percent).
"""

from __future__ import annotations

import math
import random
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

from ..model import ChartSpec, QType, RECOGNITION_ASPECTS, REASONING_ASPECTS

# (label, lo, hi, share); counts inside a bucket are uniform. The open-ended
# top bucket spans 10..15, which brings the mean subplot count to 2.78.
SUBPLOT_BUCKETS: tuple[tuple[str, int, int, float], ...] = (
    ("1", 1, 1, 51.32),
    ("2-4", 2, 4, 29.61),
    ("5-9", 5, 9, 18.26),
    ("9+", 10, 15, 0.81),
)

# subplot-level chart types
SUBPLOT_TYPE_SHARES: dict[str, float] = {
    "line": 30.07,
    "bar": 20.37,
    "scatter": 11.45,
    "heatmap": 9.14,
    "pie": 8.14,
    "area": 4.59,
    "box": 4.14,
    "histogram": 2.44,
    "radar": 1.67,
    "special": 8.00,
}

# chart types of single-plot figures
SINGLE_PLOT_TYPE_SHARES: dict[str, float] = {
    "line": 15.17,
    "bar": 6.75,
    "area": 5.13,
    "scatter": 5.08,
    "box": 4.46,
    "radar": 4.22,
    "pie": 3.24,
    "heatmap": 1.77,
    "histogram": 0.63,
    "special": 4.87,
}

# multi-subplot figures: all panels share one type vs. composite
MULTI_ONE_TYPE_SHARE = 37.81
MULTI_COMPOSITE_SHARE = 10.87

QTYPE_SHARES = {QType.RECOGNITION: 57.18, QType.REASONING: 42.82}

ASPECT_SHARES: dict[QType, dict[str, float]] = {
    QType.RECOGNITION: dict(zip(RECOGNITION_ASPECTS, (14.32, 13.62, 7.34, 5.58, 5.56, 5.94, 4.78, 0.03))),
    QType.REASONING: dict(zip(REASONING_ASPECTS, (15.46, 9.34, 6.01, 3.32, 3.20, 2.22, 1.78, 1.49))),
}

DEFAULT_PERSONAS = (
    "a public-health analyst tracking regional vaccination rates",
    "a climate scientist comparing decadal temperature anomalies",
    "a retail manager reviewing quarterly sales by store",
    "a graduate student benchmarking neural network training runs",
    "a transit planner studying ridership across bus lines",
    "an energy economist modelling electricity prices",
    "a sports statistician comparing player performance",
    "a hospital administrator monitoring bed occupancy",
    "a marine biologist counting species across reef sites",
    "a startup founder tracking monthly active users",
    "an agronomist comparing crop yields under irrigation schemes",
    "a logistics coordinator analysing delivery delays",
    "a music-streaming analyst studying genre popularity",
    "a city budget officer comparing departmental spending",
    "a seismologist summarising earthquake magnitudes",
    "a teacher visualising exam score distributions",
    "a pharmaceutical researcher reporting dose-response trials",
    "a real-estate analyst comparing rents across districts",
    "an astronomer plotting exoplanet orbital periods",
    "a cybersecurity analyst tracking incident counts",
)


@dataclass(frozen=True)
class SpecPools:
    personas: Sequence[str] = DEFAULT_PERSONAS
    subplot_buckets: Sequence[tuple[str, int, int, float]] = SUBPLOT_BUCKETS
    subplot_type_shares: Mapping[str, float] = field(default_factory=lambda: dict(SUBPLOT_TYPE_SHARES))
    single_plot_type_shares: Mapping[str, float] = field(default_factory=lambda: dict(SINGLE_PLOT_TYPE_SHARES))
    multi_one_type_share: float = MULTI_ONE_TYPE_SHARE
    multi_composite_share: float = MULTI_COMPOSITE_SHARE
    # (reference id, "single" | "multi")
    references: Sequence[tuple[str, str]] = ()

    def __post_init__(self):
        if not self.personas or not self.subplot_buckets or not self.subplot_type_shares:
            raise ValueError("sampling pools must be non-empty")


def _pick(rng: random.Random, shares: Mapping):
    keys = list(shares)
    return rng.choices(keys, weights=[shares[k] for k in keys], k=1)[0]


def layouts_for(n: int) -> list[tuple[int, int]]:
    """Grids that hold ``n`` panels without a fully empty row."""
    out = []
    for rows in range(1, n + 1):
        cols = math.ceil(n / rows)
        if (rows - 1) * cols < n and (rows, cols) not in out:
            out.append((rows, cols))
    return out


def sample_chart_spec(rng: random.Random | int, pools: SpecPools | None = None) -> ChartSpec:
    """Draw one spec. Passing an int seeds a fresh generator."""
    if not isinstance(rng, random.Random):
        rng = random.Random(rng)
    pools = pools or SpecPools()
    persona = rng.choice(list(pools.personas))
    bucket = rng.choices(list(pools.subplot_buckets), weights=[b[3] for b in pools.subplot_buckets], k=1)[0]
    n = rng.randint(bucket[1], bucket[2])
    layout = rng.choice(layouts_for(n))
    if n == 1:
        types = (_pick(rng, pools.single_plot_type_shares),)
    elif rng.random() * (pools.multi_one_type_share + pools.multi_composite_share) < pools.multi_one_type_share:
        types = (_pick(rng, pools.subplot_type_shares),) * n
    else:
        types = tuple(_pick(rng, pools.subplot_type_shares) for _ in range(n))
    difficulty = rng.randint(1, 5)
    tag = "single" if n == 1 else "multi"
    refs = [rid for rid, t in pools.references if t == tag] or [rid for rid, _ in pools.references]
    reference_id = rng.choice(refs) if refs else None
    return ChartSpec(persona, n, layout, types, difficulty, reference_id)


def sample_chart_specs(n: int, seed: int, pools: SpecPools | None = None) -> list[ChartSpec]:
    rng = random.Random(seed)
    return [sample_chart_spec(rng, pools) for _ in range(n)]


def sample_aspect(rng: random.Random, shares: Mapping[QType, Mapping[str, float]] | None = None,
                  qtype_shares: Mapping[QType, float] | None = None) -> tuple[QType, str]:
    shares = shares or ASPECT_SHARES
    qtype = _pick(rng, qtype_shares or QTYPE_SHARES)
    return qtype, _pick(rng, shares[qtype])
