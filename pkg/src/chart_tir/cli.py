"""Command-line entry point.

Exit codes: 0 success, 2 usage error, 3 configuration error, 4 runtime
failure. Failures are reported on stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import json
import logging
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import plotting
from .clients import JUDGE_TEMPLATE_VERSION
from .datasynth import charts as synth_charts_mod, qa as synth_qa_mod
from .datasynth.pipeline import QAParams, chart_meta, coldstart, ingest_arxiv, synth_charts, synth_qa
from .datasynth.references import load_reference_library
from .datasynth.sampling import QTYPE_SHARES, SUBPLOT_BUCKETS
from .config import config_hash, grpo_config, load_config, make_client, make_sandbox, match_policy, rollout_config
from .errors import ChartTIRError, ConfigInvalid, DatasetMalformed, EmptyDataset, PartialGroupError, UnknownSubcommand
from .evalbench import EvalConfig, avg_pixel_entropy, chart_statistics, pixel_entropy, qa_statistics, run_benchmark, write_report
from .evalbench.harness import to_records
from .grpo import attach_advantages, grpo_objective, objective_gradient_check
from .model import ChartImage, MaskedTokenBatch, QAItem, RewardBreakdown
from .prompts import SYSTEM_PROMPT_VERSION
from .records import ImageStore, TrajectoryRecord, TrajectoryStore, read_jsonl, read_qa_jsonl
from .reward import total_reward
from .rollout import run_group

log = logging.getLogger("chart_tir")

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


@dataclass
class RunManifest:
    subcommand: str
    config_hash: str
    config: dict
    versions: dict
    endpoints: dict = field(default_factory=dict)
    started: str = ""
    finished: str = ""
    outputs: list[str] = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def write(self, path: Path) -> Path:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.__dict__, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
        return path


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def _versions() -> dict:
    charts, qa = synth_charts_mod, synth_qa_mod
    return {
        "system_prompt": SYSTEM_PROMPT_VERSION,
        "judge_template": JUDGE_TEMPLATE_VERSION,
        "plot_template": charts.PLOT_TEMPLATE_VERSION,
        "quality_template": charts.QUALITY_TEMPLATE_VERSION,
        "chart_filter_template": charts.CHART_FILTER_TEMPLATE_VERSION,
        "qa_template": qa.QA_TEMPLATE_VERSION,
        "check_template": qa.CHECK_TEMPLATE_VERSION,
    }


class Run:
    """Per-invocation context: effective config, lazily built clients, manifest."""

    def __init__(self, args, cfg: dict):
        self.args = args
        self.cfg = cfg
        self.clients: dict = {}
        self._sandbox = None
        self.manifest = RunManifest(args.command, config_hash(cfg), cfg, _versions(), started=_now())

    def client(self, role: str):
        if role not in self.clients:
            self.clients[role] = make_client(self.cfg, role)
            self.manifest.endpoints[role] = self.clients[role].identity
        return self.clients[role]

    @property
    def sandbox(self):
        if self._sandbox is None:
            self._sandbox = make_sandbox(self.cfg)
        return self._sandbox

    def judge_if_enabled(self):
        return self.client("judge") if self.cfg["reward"]["judge_fallback"] else None

    def finish(self, manifest_path: Path, outputs, summary: dict) -> Path:
        self.manifest.finished = _now()
        self.manifest.outputs = [str(p) for p in outputs]
        self.manifest.summary = summary
        return self.manifest.write(manifest_path)


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")


def _images_for(args, dataset: Path) -> ImageStore:
    root = Path(args.images) if args.images else dataset.parent / "charts"
    return ImageStore(root)


# --- subcommands -------------------------------------------------------------


def cmd_synth_charts(run: Run) -> int:
    a, s = run.args, run.cfg["synth"]
    out = Path(a.out)
    summary, outputs = {}, []
    if a.n > 0:
        library = load_reference_library(a.library) if a.library else load_reference_library()
        res = synth_charts(run.client("llm"), run.client("judge"), run.sandbox, out, a.n, a.seed, library,
                           max_repairs=s["max_repairs"],
                           quality_thresholds=(s["visual_threshold"], s["semantic_threshold"]),
                           concurrency=s["concurrency"])
        summary["synth"] = res.to_dict()
        outputs += res.outputs
    if a.arxiv_records:
        res = ingest_arxiv(run.client("judge"), a.arxiv_records, out, a.image_root, s["concurrency"])
        summary["arxiv"] = res.to_dict()
        outputs += res.outputs
    run.finish(out / "manifest.synth-charts.json", outputs, summary)
    _emit(summary)
    return EXIT_OK


def cmd_synth_qa(run: Run) -> int:
    s = run.cfg["synth"]
    params = QAParams(s["questions_per_chart"], s["votes_n"], s["vote_threshold"], s["difficulty_threshold"])
    out = Path(run.args.out)
    res = synth_qa(run.client("llm"), run.client("judge"), out, run.args.seed, params, match_policy(run.cfg),
                   s["concurrency"])
    run.finish(out / "manifest.synth-qa.json", res.outputs, res.to_dict())
    _emit(res.to_dict())
    return EXIT_OK


def cmd_coldstart(run: Run) -> int:
    a = run.args
    out = Path(a.out)
    items = read_qa_jsonl(a.dataset) if a.dataset else None
    res = coldstart(run.client(a.teacher), out, run.sandbox, rollout_config(run.cfg), match_policy(run.cfg),
                    run.judge_if_enabled(), items, run.cfg["synth"]["concurrency"])
    run.finish(out / "manifest.coldstart.json", res.outputs, res.to_dict())
    _emit(res.to_dict())
    return EXIT_OK


def cmd_rollout(run: Run) -> int:
    a = run.args
    dataset = Path(a.dataset)
    items = read_qa_jsonl(dataset)
    if a.limit:
        items = items[: a.limit]
    if not items:
        raise DatasetMalformed(f"{dataset} has no items")
    images = _images_for(a, dataset)
    cfg = rollout_config(run.cfg)
    if a.group_size:
        cfg = replace(cfg, group_size=a.group_size)
    r, g = run.cfg["reward"], grpo_config(run.cfg)
    policy, judge, match = run.client("policy"), run.judge_if_enabled(), match_policy(run.cfg)
    records, n_partial = [], 0
    for idx, item in enumerate(items):
        try:
            group = run_group(policy, images[item.image_ref], item.question, cfg, run.sandbox)
        except PartialGroupError as e:
            log.warning("item %d skipped: %s", idx, e)
            n_partial += 1
            continue
        breakdowns = [
            total_reward(t, raw, item.answer, r["lambda1"], r["lambda2"], item.answer_type, match, judge)
            for t, raw in zip(group.trajectories, group.raw_turns)
        ]
        group = attach_advantages(group, [b.total for b in breakdowns], g)
        for gi, (t, raw) in enumerate(zip(group.trajectories, group.raw_turns)):
            meta = {"item": idx, "member": gi, "gold": item.answer, "answer_type": item.answer_type.value,
                    "reward": breakdowns[gi].to_dict(), "advantage": group.advantages[gi], "failed": group.failed[gi]}
            records.append(TrajectoryRecord(t, raw, meta))
    out = Path(a.out)
    TrajectoryStore(out).write(records)
    summary = {"items": len(items), "trajectories": len(records), "skipped_groups": n_partial}
    run.finish(out.with_suffix(".manifest.json"), [out, out.parent / "images"], summary)
    _emit(summary)
    return EXIT_OK


def cmd_reward_check(run: Run) -> int:
    """Recompute rewards for a stored rollout, or print the binary reward table."""
    a, r = run.args, run.cfg["reward"]
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["index", "acc", "format", "tool", "total", "stored_total", "match"])
    if a.table:
        for i in range(8):
            acc, fmt, tool = (i >> 2) & 1, (i >> 1) & 1, i & 1
            b = RewardBreakdown.compute(acc, fmt, tool, r["lambda1"], r["lambda2"])
            writer.writerow([i, acc, fmt, tool, repr(b.total), "", ""])
        return EXIT_OK
    if not a.store:
        raise UsageError("reward-check needs --store or --table")
    match, judge, mismatches = match_policy(run.cfg), run.judge_if_enabled(), 0
    rows = []
    for i, rec in enumerate(TrajectoryStore(a.store).read()):
        gold = rec.meta.get("gold")
        if gold is None:
            raise DatasetMalformed(f"record {i} carries no gold answer in its meta")
        b = total_reward(rec.trajectory, rec.raw_turns or [], gold, r["lambda1"], r["lambda2"],
                         rec.meta.get("answer_type", "text"), match, judge)
        stored = (rec.meta.get("reward") or {}).get("total")
        ok = stored is None or stored == b.total
        mismatches += not ok
        writer.writerow([i, b.acc, b.format, b.tool, repr(b.total), "" if stored is None else repr(stored), int(ok)])
        rows.append({"index": i, **b.to_dict(), "stored_total": stored, "match": ok})
    if a.report:
        n = len(rows)
        means = {k: (math.fsum(r[k] for r in rows) / n if n else 0.0) for k in ("acc", "format", "tool", "total")}
        report = Path(a.report)
        report.parent.mkdir(parents=True, exist_ok=True)
        report.write_text(json.dumps({"n": n, "means": means, "mismatches": mismatches, "records": rows},
                                     indent=2, sort_keys=True) + "\n", encoding="utf-8")
        run.finish(report.with_suffix(".manifest.json"), [report], {"n": n, "means": means, "mismatches": mismatches})
    return EXIT_OK if not mismatches else EXIT_RUNTIME


def cmd_grpo_eval(run: Run) -> int:
    a = run.args
    path = Path(a.fixtures)
    if not path.is_file():
        raise DatasetMalformed(f"fixture file {path} does not exist")
    try:
        batch = [MaskedTokenBatch.from_dict(row) for row in read_jsonl(path)]
    except (KeyError, TypeError, ValueError) as e:
        raise DatasetMalformed(f"{path}: {e}") from None
    cfg = grpo_config(run.cfg)
    out = {"objective": grpo_objective(batch, cfg), "n_trajectories": len(batch),
           "mean_advantage": sum(b.advantage for b in batch) / len(batch) if batch else 0.0,
           "epsilon": cfg.epsilon}
    if a.grad_check:
        out["grad_check_max_rel_error"] = objective_gradient_check(batch, cfg)
    _emit(out)
    return EXIT_OK


def cmd_eval(run: Run) -> int:
    a = run.args
    dataset = Path(a.dataset)
    items = read_qa_jsonl(dataset)
    images = _images_for(a, dataset)
    e = run.cfg["eval"]
    cfg = EvalConfig(rollout_config(run.cfg), match_policy(run.cfg), e["concurrency"], e["entropy_base"])
    report, results = run_benchmark(run.client("policy"), items, images, cfg, run.sandbox,
                                    run.judge_if_enabled(), run.manifest.config_hash)
    outputs = write_report(report, a.report, results, a.csv, figures=not a.no_figures)
    if a.store:
        TrajectoryStore(a.store).write(to_records(results))
        outputs.append(Path(a.store))
    run.finish(Path(a.report).with_suffix(".manifest.json"), outputs, report.to_dict())
    _emit(report.to_dict())
    return EXIT_OK


def _load_images(paths: list[str]) -> list[ChartImage]:
    files: list[Path] = []
    for p in map(Path, paths):
        files.extend(sorted(p.glob("*.png")) if p.is_dir() else [p])
    if not files:
        raise EmptyDataset("no images given")
    images = []
    for f in files:
        try:
            images.append(ChartImage.from_png(f, f.stem))
        except (OSError, ValueError) as e:
            raise DatasetMalformed(f"cannot read image {f}: {e}") from None
    return images


def cmd_entropy(run: Run) -> int:
    a = run.args
    base = a.base if a.base is not None else run.cfg["eval"]["entropy_base"]
    images = _load_images(a.images)
    values = [pixel_entropy(img, base) for img in images]
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["image", "entropy"])
    for img, h in zip(images, values):
        writer.writerow([img.source_id, repr(h)])
    mean = avg_pixel_entropy(images, base)
    writer.writerow(["__mean__", repr(mean)])
    if a.figure:
        plotting.histogram_figure(values, a.figure, f"pixel entropy (log base {base:g})",
                                  title=f"mean {mean:.3f} over {len(values)} images")
    return EXIT_OK


def cmd_stats(run: Run) -> int:
    a = run.args
    root = Path(a.dir)
    stats: dict = {}
    metas = chart_meta(root)
    if metas:
        stats["charts"] = chart_statistics(metas)
    qa_path = Path(a.dataset) if a.dataset else root / "qa.jsonl"
    items: list[QAItem] = read_qa_jsonl(qa_path) if qa_path.is_file() else []
    if items:
        stats["qa"] = qa_statistics(items)
    if not stats:
        raise EmptyDataset(f"no chart metadata or QA items under {root}")
    report = Path(a.report)
    report.parent.mkdir(parents=True, exist_ok=True)
    report.write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    rows = [{"group": g, "metric": m, "key": k, "value": v}
            for g, body in stats.items() for m, val in body.items() if isinstance(val, dict) for k, v in val.items()]
    csv_path = report.with_suffix(".csv")
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=["group", "metric", "key", "value"])
        w.writeheader()
        w.writerows(rows)
    outputs = [report, csv_path]
    if not a.no_figures:
        stem = report.with_suffix("")
        if "charts" in stats:
            target = {label: share for label, _, _, share in SUBPLOT_BUCKETS}
            outputs.append(plotting.bar_shares(stats["charts"]["subplot_count_pct"], f"{stem}.subplots.png",
                                               "subplots per chart", target))
            outputs.append(plotting.bar_shares(stats["charts"]["chart_type_pct"], f"{stem}.chart_types.png",
                                               "subplot chart types"))
        if "qa" in stats:
            target = {q.value: s for q, s in QTYPE_SHARES.items()}
            outputs.append(plotting.bar_shares(stats["qa"]["qtype_pct"], f"{stem}.qtypes.png", "question types", target))
            outputs.append(plotting.bar_shares(stats["qa"]["aspect_pct"], f"{stem}.aspects.png", "analytical aspects"))
    run.finish(report.with_suffix(".manifest.json"), outputs, {"groups": sorted(stats)})
    _emit({"report": str(report), "outputs": [str(p) for p in outputs]})
    return EXIT_OK


COMMANDS = {
    "synth-charts": cmd_synth_charts,
    "synth-qa": cmd_synth_qa,
    "coldstart": cmd_coldstart,
    "rollout": cmd_rollout,
    "reward-check": cmd_reward_check,
    "grpo-eval": cmd_grpo_eval,
    "eval": cmd_eval,
    "entropy": cmd_entropy,
    "stats": cmd_stats,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="TOML config file (default: $CHART_TIR_CONFIG)")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value; repeatable")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="chart-tir", description="Tool-integrated chart reasoning: data, rollouts, rewards, evaluation.")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("synth-charts", parents=[common], help="generate and filter synthetic charts; ingest mined figures")
    s.add_argument("--out", required=True, help="pipeline directory")
    s.add_argument("--n", type=int, default=0, help="number of chart specs to sample")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--library", help="reference snippet directory (default: bundled seed set)")
    s.add_argument("--arxiv-records", help="JSONL of pre-extracted figure records")
    s.add_argument("--image-root", help="directory the figure image paths are relative to")

    s = sub.add_parser("synth-qa", parents=[common], help="generate QA pairs and run the four-stage checks")
    s.add_argument("--out", required=True, help="pipeline directory holding charts")
    s.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("coldstart", parents=[common], help="distill verified teacher trajectories into SFT records")
    s.add_argument("--out", required=True, help="pipeline directory")
    s.add_argument("--dataset", help="QA JSONL (default: <out>/qa.jsonl)")
    s.add_argument("--teacher", choices=("llm", "policy"), default="llm", help="endpoint role acting as teacher")

    s = sub.add_parser("rollout", parents=[common], help="sample GRPO groups with rewards and advantages")
    s.add_argument("--dataset", required=True)
    s.add_argument("--images", help="image directory (default: <dataset dir>/charts)")
    s.add_argument("--out", required=True, help="trajectory store (JSONL)")
    s.add_argument("--group-size", type=int, help="overrides rollout.group_size")
    s.add_argument("--limit", type=int, default=0, help="only the first N items")

    s = sub.add_parser("reward-check", parents=[common], help="recompute rewards as CSV")
    s.add_argument("--store", help="trajectory store written by rollout")
    s.add_argument("--table", action="store_true", help="print the reward for all 8 binary component combinations")
    s.add_argument("--report", help="also write per-trajectory breakdowns and aggregate means as JSON")

    s = sub.add_parser("grpo-eval", parents=[common], help="evaluate the clipped objective on token fixtures")
    s.add_argument("--fixtures", required=True, help="JSONL, one masked token batch per trajectory")
    s.add_argument("--grad-check", action="store_true", help="also run the finite-difference gradient check")

    s = sub.add_parser("eval", parents=[common], help="greedy benchmark evaluation")
    s.add_argument("--dataset", required=True)
    s.add_argument("--images", help="image directory (default: <dataset dir>/charts)")
    s.add_argument("--report", required=True, help="JSON report path; CSV and figures go alongside")
    s.add_argument("--csv", help="per-item CSV path (default: report path with .csv)")
    s.add_argument("--store", help="also write the trajectories here")
    s.add_argument("--no-figures", action="store_true")

    s = sub.add_parser("entropy", parents=[common], help="per-image and average pixel entropy as CSV")
    s.add_argument("images", nargs="+", help="PNG files or directories")
    s.add_argument("--base", type=float, help="logarithm base (default: eval.entropy_base)")
    s.add_argument("--figure", help="also write a histogram PNG here")

    s = sub.add_parser("stats", parents=[common], help="dataset statistics report with figures")
    s.add_argument("--dir", required=True, help="pipeline directory")
    s.add_argument("--dataset", help="QA JSONL (default: <dir>/qa.jsonl)")
    s.add_argument("--report", required=True, help="JSON report path; CSV and figures go alongside")
    s.add_argument("--no-figures", action="store_true")
    return p


def _fail(code: int, error: str, message: str) -> int:
    sys.stderr.write(json.dumps({"error": error, "message": message, "exit_code": code}) + "\n")
    return code


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        if "invalid choice" in str(e) and "COMMAND" in str(e):
            bad = next((x for x in argv if not x.startswith("-")), "")
            return _fail(EXIT_USAGE, UnknownSubcommand.code, f"unknown subcommand {bad!r}")
        return _fail(EXIT_USAGE, "UsageError", str(e))
    except SystemExit as e:  # --help
        return int(e.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.overrides)
        return COMMANDS[args.command](Run(args, cfg))
    except UsageError as e:
        return _fail(EXIT_USAGE, "UsageError", str(e))
    except ConfigInvalid as e:
        return _fail(EXIT_CONFIG, e.code, str(e))
    except ChartTIRError as e:
        return _fail(EXIT_RUNTIME, e.code, str(e))
    except OSError as e:
        return _fail(EXIT_RUNTIME, type(e).__name__, str(e))


if __name__ == "__main__":
    sys.exit(main())
