"""Stage runners for the data pipeline.

Stages talk only through files under one output directory:

    charts/              PNG assets (synthetic and mined)
    charts.meta.jsonl    one row per kept synthetic chart
    arxiv.meta.jsonl     one row per kept mined figure
    qa.jsonl             QA items that passed every check
    coldstart.sft.jsonl  distilled SFT records
    *.audit.jsonl        one row per processed record, kept or not

Work inside a stage runs on a thread pool, but results are written in input
order and every random draw comes from a seed, so identical seeds and
cassettes give byte-identical outputs.
"""

from __future__ import annotations

import logging
import random
from collections.abc import Callable, Iterable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import TypeVar

from ..clients import Sampling
from ..errors import ChartTIRError, DatasetMalformed, InvariantViolation
from ..model import DEFAULT_ASPECT_POOLS, ChartImage, ChartSpec, Provenance, QAItem, QType
from ..records import ImageStore, TrajectoryRecord, TrajectoryStore, read_jsonl, read_qa_jsonl, write_jsonl, write_qa_jsonl
from ..reward import MatchPolicy
from ..rollout import RolloutConfig
from .charts import (
    ArxivFigureRecord, filter_arxiv_record, filter_image, generate_chart, spec_context,
)
from .coldstart import distill_cold_start, sft_record
from .qa import CheckReport, check_qa, generate_qa, passes, with_difficulty
from .references import ReferenceSnippet, load_reference_library
from .sampling import ASPECT_SHARES, QTYPE_SHARES, SpecPools, sample_aspect, sample_chart_specs

log = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

CHARTS_DIR = "charts"
CHARTS_META = "charts.meta.jsonl"
ARXIV_META = "arxiv.meta.jsonl"
QA_FILE = "qa.jsonl"
SFT_FILE = "coldstart.sft.jsonl"
COLDSTART_STORE = "coldstart.traj.jsonl"


def ordered_map(fn: Callable[[T], R], items: Iterable[T], concurrency: int) -> list[R]:
    items = list(items)
    if concurrency <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=concurrency) as pool:
        return list(pool.map(fn, items))


def _seed_for(seed: int, *parts) -> int:
    # str seeding of random.Random is stable across processes (sha512 based)
    return random.Random(":".join(map(str, (seed, *parts)))).getrandbits(31)


@dataclass
class StageResult:
    processed: int = 0
    kept: int = 0
    outputs: list[Path] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"processed": self.processed, "kept": self.kept, "outputs": [str(p) for p in self.outputs]}


# --- charts ------------------------------------------------------------------


def synth_charts(
    llm, judge, sandbox, out_dir: str | Path, n: int, seed: int,
    library: Mapping[str, ReferenceSnippet] | None = None, pools: SpecPools | None = None,
    max_repairs: int = 3, quality_thresholds: tuple[int, int] = (3, 3), concurrency: int = 4,
) -> StageResult:
    out = Path(out_dir)
    library = library if library is not None else load_reference_library()
    if pools is None:
        pools = SpecPools(references=[(r.id, r.layout_tag.value) for r in library.values()])
    specs = sample_chart_specs(n, seed, pools)
    store = ImageStore(out / CHARTS_DIR)

    def one(pair):
        i, spec = pair
        sid = f"synth-{seed}-{i:05d}"
        audit = {"source_id": sid, "spec": spec.to_dict()}
        try:
            chart = generate_chart(llm, spec, library.get(spec.reference_id) if spec.reference_id else None,
                                   sandbox, max_repairs, sid, Sampling(0.7, 4096, seed=_seed_for(seed, sid)))
        except ChartTIRError as e:
            return None, {**audit, "kept": False, "stage": "render", "error": f"{e.code}: {e}"}
        try:
            verdict = filter_image(judge, chart.image, quality_thresholds)
        except ChartTIRError as e:
            return None, {**audit, "kept": False, "stage": "quality", "error": f"{e.code}: {e}"}
        audit.update(repairs=chart.repairs, quality=verdict.to_dict(), kept=verdict.keep)
        if not verdict.keep:
            return None, {**audit, "stage": "quality"}
        meta = {"source_id": sid, "provenance": Provenance.SYNTH.value, "spec": spec.to_dict(),
                "code": chart.code, "repairs": chart.repairs, "quality": verdict.to_dict()}
        return (chart.image, meta), audit

    results = ordered_map(one, enumerate(specs), concurrency)
    kept = [r[0] for r in results if r[0] is not None]
    for image, _ in kept:
        store.put(image)
    write_jsonl(out / CHARTS_META, [m for _, m in kept])
    write_jsonl(out / "synth_charts.audit.jsonl", [r[1] for r in results])
    return StageResult(len(specs), len(kept), [out / CHARTS_META, out / "synth_charts.audit.jsonl", out / CHARTS_DIR])


def ingest_arxiv(judge, records_path: str | Path, out_dir: str | Path, image_root: str | Path | None = None,
                 concurrency: int = 4) -> StageResult:
    """Filter pre-extracted figure records down to readable charts.

    Input rows: ``{"id", "image": path relative to image_root, "caption", "context", "field"}``.
    """
    records_path = Path(records_path)
    if not records_path.is_file():
        raise DatasetMalformed(f"figure records {records_path} do not exist")
    root = Path(image_root) if image_root is not None else records_path.parent
    out = Path(out_dir)
    rows = list(read_jsonl(records_path))

    def one(pair):
        i, row = pair
        sid = str(row.get("id") or f"arxiv-{i:05d}")
        audit = {"source_id": sid}
        try:
            image = ChartImage.from_png(root / row["image"], sid)
            rec = ArxivFigureRecord(image, row.get("caption") or "", row.get("context") or "", row.get("field") or "")
        except (InvariantViolation, KeyError, OSError, ValueError) as e:
            return None, {**audit, "kept": False, "stage": "record", "error": str(e)}
        try:
            ok = filter_arxiv_record(judge, rec)
        except ChartTIRError as e:
            return None, {**audit, "kept": False, "stage": "classify", "error": f"{e.code}: {e}"}
        meta = {"source_id": sid, "provenance": Provenance.ARXIV_MINED.value, "caption": rec.caption,
                "context": rec.context, "field": rec.field_tag}
        return ((image, meta) if ok else None), {**audit, "kept": ok, "stage": "classify"}

    results = ordered_map(one, enumerate(rows), concurrency)
    kept = [r[0] for r in results if r[0] is not None]
    store = ImageStore(out / CHARTS_DIR)
    for image, _ in kept:
        store.put(image)
    write_jsonl(out / ARXIV_META, [m for _, m in kept])
    write_jsonl(out / "arxiv.audit.jsonl", [r[1] for r in results])
    return StageResult(len(rows), len(kept), [out / ARXIV_META, out / "arxiv.audit.jsonl"])


# --- QA ----------------------------------------------------------------------


def chart_meta(out_dir: str | Path) -> list[dict]:
    out = Path(out_dir)
    rows = []
    for name in (CHARTS_META, ARXIV_META):
        if (out / name).is_file():
            rows.extend(read_jsonl(out / name))
    return rows


def _qa_context(meta: dict) -> str:
    if meta.get("provenance") == Provenance.ARXIV_MINED.value:
        return f"Caption: {meta.get('caption', '')}\nContext: {meta.get('context', '')}"
    return spec_context(ChartSpec.from_dict(meta["spec"]), meta.get("code", ""))


@dataclass(frozen=True)
class QAParams:
    questions_per_chart: int = 2
    votes_n: int = 5
    vote_threshold: float = 0.8
    difficulty_threshold: int = 3
    aspect_shares: Mapping[QType, Mapping[str, float]] = field(default_factory=lambda: ASPECT_SHARES)
    qtype_shares: Mapping[QType, float] = field(default_factory=lambda: QTYPE_SHARES)
    pools: Mapping[QType, tuple[str, ...]] = field(default_factory=lambda: DEFAULT_ASPECT_POOLS)


def synth_qa(llm, checker, out_dir: str | Path, seed: int, params: QAParams | None = None,
             match: MatchPolicy | None = None, concurrency: int = 4) -> StageResult:
    """Generate QA for every chart in the stage directory and keep the ones that pass all checks."""
    params = params or QAParams()
    out = Path(out_dir)
    metas = chart_meta(out)
    if not metas:
        raise DatasetMalformed(f"no chart metadata under {out}")
    images = ImageStore(out / CHARTS_DIR)

    def one(meta):
        sid = meta["source_id"]
        rng = random.Random(_seed_for(seed, sid, "aspect"))
        qtype, aspect = sample_aspect(rng, params.aspect_shares, params.qtype_shares)
        audit_rows, kept = [], []
        try:
            image = images[sid]
            items = generate_qa(llm, image, _qa_context(meta), aspect, qtype, meta.get("provenance", "synth"),
                                params.questions_per_chart, dict(params.pools),
                                Sampling(0.7, 1024, seed=_seed_for(seed, sid, "qa")))
        except (ChartTIRError, KeyError) as e:
            code = getattr(e, "code", type(e).__name__)
            return [], [{"image_ref": sid, "aspect": aspect, "qtype": qtype.value, "stage": "generate",
                         "kept": False, "error": f"{code}: {e}"}]
        for item in items:
            try:
                report = check_qa(checker, item, image, params.votes_n, params.vote_threshold,
                                  params.difficulty_threshold, match)
            except ChartTIRError as e:
                audit_rows.append({"item": item.to_dict(), "stage": "check", "kept": False, "error": f"{e.code}: {e}"})
                continue
            final = with_difficulty(item, report)
            audit_rows.append({"item": final.to_dict(), "stage": "check", "kept": report.kept, "report": report.to_dict()})
            if report.kept:
                kept.append(final)
        return kept, audit_rows

    results = ordered_map(one, metas, concurrency)
    kept = [it for r in results for it in r[0]]
    audit = [row for r in results for row in r[1]]
    write_qa_jsonl(out / QA_FILE, kept)
    write_jsonl(out / "qa.audit.jsonl", audit)
    return StageResult(sum(len(r[1]) for r in results), len(kept), [out / QA_FILE, out / "qa.audit.jsonl"])


def audit_qa(out_dir: str | Path, params: QAParams | None = None) -> list[str]:
    """Emitted QA items that lack a passing check report. Empty means the filter held."""
    params = params or QAParams()
    out = Path(out_dir)
    passing = set()
    for row in read_jsonl(out / "qa.audit.jsonl"):
        rep = row.get("report")
        if not rep:
            continue
        report = CheckReport.from_dict(rep)
        item = QAItem.from_dict(row["item"])
        if report.kept and passes(report, item.qtype, params.vote_threshold, params.difficulty_threshold):
            passing.add((item.image_ref, item.question, item.answer))
    return [it.question for it in read_qa_jsonl(out / QA_FILE) if (it.image_ref, it.question, it.answer) not in passing]


# --- cold start --------------------------------------------------------------


def coldstart(teacher, out_dir: str | Path, sandbox=None, cfg: RolloutConfig | None = None,
              match: MatchPolicy | None = None, judge=None, items: Sequence[QAItem] | None = None,
              concurrency: int = 4) -> StageResult:
    out = Path(out_dir)
    items = list(items) if items is not None else read_qa_jsonl(out / QA_FILE)
    images = ImageStore(out / CHARTS_DIR)
    missing = sorted({it.image_ref for it in items if it.image_ref not in images})
    if missing:
        raise DatasetMalformed(f"{len(missing)} image(s) not found, e.g. {missing[0]!r}")
    outcomes = distill_cold_start(teacher, items, images, cfg, sandbox, match, judge, concurrency)
    kept = [o for o in outcomes if o.kept]
    write_jsonl(out / SFT_FILE, [sft_record(o.trajectory, o.raw_turns, o.item) for o in kept])
    TrajectoryStore(out / COLDSTART_STORE, out / "coldstart_images").write(
        TrajectoryRecord(o.trajectory, o.raw_turns, {"index": o.index}) for o in kept
    )
    write_jsonl(out / "coldstart.audit.jsonl", [o.audit() for o in outcomes])
    return StageResult(len(outcomes), len(kept), [out / SFT_FILE, out / COLDSTART_STORE, out / "coldstart.audit.jsonl"])
