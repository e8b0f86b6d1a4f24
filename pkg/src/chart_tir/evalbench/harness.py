"""Benchmark runner: greedy rollouts, answer scoring, JSON/CSV reports and figures."""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import defaultdict
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

from .. import plotting
from ..clients import Sampling
from ..errors import DatasetMalformed, PolicyFailure
from ..model import ChartImage, CodeExec, Crop, QAItem, Trajectory
from ..records import TrajectoryRecord
from ..reward import MatchPolicy, accuracy_reward
from ..rollout import RolloutConfig, run_trajectory
from .metrics import tool_distribution

log = logging.getLogger(__name__)

REPORT_SCHEMA = "eval-report-v1"


@dataclass(frozen=True)
class EvalConfig:
    rollout: RolloutConfig = field(default_factory=RolloutConfig)
    match: MatchPolicy = field(default_factory=MatchPolicy)
    concurrency: int = 4
    entropy_base: float = 2.0

    def greedy_rollout(self) -> RolloutConfig:
        s = self.rollout.sampling
        return replace(self.rollout, sampling=Sampling(0.0, s.max_tokens, s.want_logprobs, s.seed))


@dataclass
class ItemResult:
    index: int
    item: QAItem
    trajectory: Trajectory
    raw_turns: list[str]
    correct: float
    failed: bool = False

    def row(self) -> dict:
        n_crop = sum(isinstance(s.action, Crop) for s in self.trajectory.steps)
        n_code = sum(isinstance(s.action, CodeExec) for s in self.trajectory.steps)
        return {
            "index": self.index,
            "image_ref": self.item.image_ref,
            "qtype": self.item.qtype.value,
            "aspect": self.item.aspect,
            "answer_type": self.item.answer_type.value,
            "gold": self.item.answer,
            "pred": self.trajectory.answer if self.trajectory.answer is not None else "",
            "correct": int(self.correct),
            "turns": len(self.raw_turns),
            "n_crop": n_crop,
            "n_code": n_code,
            "terminated_by": self.trajectory.terminated_by.value,
            "failed": int(self.failed),
        }


@dataclass
class EvalReport:
    n_items: int
    accuracy: float
    per_qtype: dict[str, float]
    tool_distribution: dict[str, float]
    mean_turns: float
    config_hash: str = ""
    n_failed: int = 0
    schema: str = REPORT_SCHEMA
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "schema": self.schema,
            "n_items": self.n_items,
            "accuracy": self.accuracy,
            "per_qtype": self.per_qtype,
            "tool_distribution": self.tool_distribution,
            "mean_turns": self.mean_turns,
            "n_failed": self.n_failed,
            "config_hash": self.config_hash,
            **({"extra": self.extra} if self.extra else {}),
        }


def summarize(results: Sequence[ItemResult], config_hash: str = "") -> EvalReport:
    if not results:
        raise DatasetMalformed("no items were evaluated")
    n = len(results)
    by_qtype: dict[str, list[float]] = defaultdict(list)
    for r in results:
        by_qtype[r.item.qtype.value].append(r.correct)
    return EvalReport(
        n_items=n,
        accuracy=math.fsum(r.correct for r in results) / n,
        per_qtype={k: math.fsum(v) / len(v) for k, v in sorted(by_qtype.items())},
        tool_distribution=tool_distribution(r.trajectory for r in results),
        mean_turns=math.fsum(len(r.raw_turns) for r in results) / n,
        config_hash=config_hash,
        n_failed=sum(r.failed for r in results),
    )


def run_benchmark(
    policy,
    items: Sequence[QAItem],
    images: Mapping[str, ChartImage],
    cfg: EvalConfig | None = None,
    sandbox=None,
    judge=None,
    config_hash: str = "",
) -> tuple[EvalReport, list[ItemResult]]:
    """One greedy rollout per item, scored with the accuracy reward."""
    cfg = cfg or EvalConfig()
    if not items:
        raise DatasetMalformed("the benchmark dataset is empty")
    missing = sorted({it.image_ref for it in items if images.get(it.image_ref) is None})
    if missing:
        raise DatasetMalformed(f"{len(missing)} image(s) not found, e.g. {missing[0]!r}")
    rollout_cfg = cfg.greedy_rollout()

    def one(pair):
        idx, item = pair
        image = images.get(item.image_ref)
        failed = False
        try:
            traj, raw = run_trajectory(policy, image, item.question, rollout_cfg, sandbox)
        except PolicyFailure as e:
            log.warning("item %d: %s", idx, e)
            traj, raw, failed = e.trajectory, e.raw_turns, True
        correct = accuracy_reward(traj.answer, item.answer, item.answer_type, cfg.match, judge, item.question)
        return ItemResult(idx, item, traj, raw, correct, failed)

    pairs = list(enumerate(items))
    if cfg.concurrency <= 1:
        results = [one(p) for p in pairs]
    else:
        with ThreadPoolExecutor(max_workers=cfg.concurrency) as pool:
            results = list(pool.map(one, pairs))
    return summarize(results, config_hash), results


def to_records(results: Sequence[ItemResult]) -> list[TrajectoryRecord]:
    return [
        TrajectoryRecord(r.trajectory, r.raw_turns, {"index": r.index, "image_ref": r.item.image_ref, "correct": r.correct})
        for r in results
    ]


CSV_FIELDS = ["index", "image_ref", "qtype", "aspect", "answer_type", "gold", "pred", "correct", "turns",
              "n_crop", "n_code", "terminated_by", "failed"]


def write_report(report: EvalReport, path: str | Path, results: Sequence[ItemResult] = (),
                 csv_path: str | Path | None = None, figures: bool = True) -> list[Path]:
    """Write the JSON report, the per-item CSV, and the report figures."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    written = [path]
    if results:
        csv_path = Path(csv_path) if csv_path else path.with_suffix(".csv")
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
            w.writeheader()
            for r in results:
                w.writerow(r.row())
        written.append(csv_path)
    if figures:
        stem = path.with_suffix("")
        written.append(plotting.tool_distribution_figure(report.tool_distribution, f"{stem}.tool_distribution.png"))
        written.append(plotting.accuracy_figure(report.per_qtype, report.accuracy, f"{stem}.accuracy.png"))
    return written
