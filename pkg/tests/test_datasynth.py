import json
import random
from collections import Counter

import numpy as np
import pytest
from PIL import Image

from chart_tir.clients import CassetteTransport, ChatClient, ScriptedTransport
from chart_tir.datasynth import (
    ArxivFigureRecord, filter_arxiv_record, filter_image, generate_chart, generate_qa, load_reference_library,
    sample_chart_spec, sample_chart_specs, verify_snippet,
)
from chart_tir.datasynth.charts import extract_code, parse_figure_label, parse_quality
from chart_tir.datasynth.coldstart import distill_cold_start, sft_record
from chart_tir.datasynth.pipeline import (
    QA_FILE, SFT_FILE, QAParams, audit_qa, coldstart, ingest_arxiv, synth_charts, synth_qa,
)
from chart_tir.datasynth.qa import CheckReport, check_qa, parse_difficulty, passes
from chart_tir.datasynth.sampling import SUBPLOT_BUCKETS, layouts_for, sample_aspect
from chart_tir.errors import (
    GenerationUnparseable, InvariantViolation, RenderFailed, UnparseableVerdict,
)
from chart_tir.model import ChartSpec, QAItem, QType, TextObs, ToolError
from chart_tir.records import read_jsonl, read_qa_jsonl
from chart_tir.rollout import RolloutConfig

from conftest import answer_turn, code_turn, make_image, scripted
from fakes import BROKEN_CODE, PLOT_CODE, FakeLab, FakeTeacher

IMG = make_image(40, 30, sid="chart-1")


# --- sampling -------------------------------------------------------------


def bucket_of(n):
    for label, lo, hi, _ in SUBPLOT_BUCKETS:
        if lo <= n <= hi:
            return label


def test_subplot_distribution_10k():
    specs = sample_chart_specs(10_000, seed=7)
    freq = Counter(bucket_of(s.num_subplots) for s in specs)
    for label, _, _, share in SUBPLOT_BUCKETS:
        assert abs(100 * freq[label] / 10_000 - share) <= 2.0, label


def test_single_subplot_layout():
    rng = random.Random(3)
    singles = [s for s in (sample_chart_spec(rng) for _ in range(500)) if s.num_subplots == 1]
    assert singles and all(s.layout == (1, 1) for s in singles)


def test_sampling_deterministic():
    assert sample_chart_specs(50, 11) == sample_chart_specs(50, 11)
    assert sample_chart_specs(50, 11) != sample_chart_specs(50, 12)
    assert sample_chart_spec(5) == sample_chart_spec(5)


def test_layouts_hold_panels():
    for n in range(1, 16):
        for r, c in layouts_for(n):
            assert r * c >= n and (r - 1) * c < n


def test_specs_are_valid():
    for s in sample_chart_specs(300, 1):
        assert len(s.chart_types) == s.num_subplots
        assert s.layout[0] * s.layout[1] >= s.num_subplots


def test_aspect_sampling_respects_pools():
    rng = random.Random(0)
    draws = [sample_aspect(rng) for _ in range(2000)]
    share = sum(q is QType.RECOGNITION for q, _ in draws) / len(draws)
    assert abs(share - 0.5718) < 0.04


# --- references / chart generation ---------------------------------------


def test_bundled_library_runs(sandbox):
    lib = load_reference_library()
    assert {r.layout_tag.value for r in lib.values()} == {"single", "multi"}
    snippet = next(iter(lib.values()))
    assert verify_snippet(snippet, sandbox)


def test_library_requires_header(tmp_path):
    (tmp_path / "x.py").write_text("print(1)\n")
    with pytest.raises(InvariantViolation):
        load_reference_library(tmp_path)


SPEC = ChartSpec("a teacher", 1, (1, 1), ("bar",), 2)
GOOD = "```python\n" + PLOT_CODE.format(a=1, b=2, c=3, color="red", tag=1) + "```"
BAD = "```python\n" + BROKEN_CODE + "```"


def test_generate_chart_first_try(sandbox):
    out = generate_chart(scripted([GOOD]), SPEC, None, sandbox, source_id="c0")
    assert out.repairs == 0 and out.image.source_id == "c0" and out.image.width > 10


def test_generate_chart_one_repair(sandbox):
    llm = scripted([BAD, GOOD])
    out = generate_chart(llm, SPEC, None, sandbox, max_repairs=3)
    assert out.repairs == 1
    repair_prompt = llm.transport.requests[1]["messages"][-1]["content"][0]["text"]
    assert "ValueError" in repair_prompt


def test_generate_chart_budget(sandbox):
    llm = scripted([BAD] * 10)
    with pytest.raises(RenderFailed) as ei:
        generate_chart(llm, SPEC, None, sandbox, max_repairs=2)
    assert ei.value.attempts == 3 and len(llm.transport.requests) == 3


def test_generate_chart_without_png(sandbox):
    with pytest.raises(RenderFailed):
        generate_chart(scripted(["```python\nprint('no image')\n```"] * 2), SPEC, None, sandbox, max_repairs=1)


def test_extract_code():
    assert extract_code("text\n```python\nx = 1\n```\nmore") == "x = 1"
    assert extract_code("x = 2") == "x = 2"


@pytest.mark.parametrize("reply, keep", [
    ('{"visual_quality": 5, "semantic_completeness": 5}', True),
    ('{"visual_quality": 2, "semantic_completeness": 5}', False),
    ('{"visual_quality": 5, "semantic_completeness": 2}', False),
])
def test_filter_image(reply, keep):
    v = filter_image(scripted([reply]), IMG, (3, 3))
    assert v.keep is keep


def test_quality_unparseable():
    with pytest.raises(UnparseableVerdict):
        parse_quality("looks great")


def test_filter_arxiv():
    rec = ArxivFigureRecord(IMG, "Accuracy vs. epochs", "")
    assert filter_arxiv_record(scripted(["chart"]), rec) is True
    assert filter_arxiv_record(scripted(["diagram"]), rec) is False
    with pytest.raises(InvariantViolation):
        ArxivFigureRecord(IMG, " ", "")
    with pytest.raises(UnparseableVerdict):
        parse_figure_label("hmm")


# --- QA --------------------------------------------------------------------


QA_REPLY = json.dumps([{"question": "How many bars?", "answer": "4", "answer_type": "numeric"},
                       {"question": "Which bar is tallest?", "answer": "B"}])


def test_generate_qa_tags():
    items = generate_qa(scripted([QA_REPLY]), IMG, "ctx", "Counting", "recognition")
    assert len(items) == 2
    assert all(it.qtype is QType.RECOGNITION and it.aspect == "Counting" for it in items)
    assert items[1].answer_type.value == "text"


def test_generate_qa_errors():
    with pytest.raises(InvariantViolation):
        generate_qa(scripted([QA_REPLY]), IMG, "", "Counting", "reasoning")
    with pytest.raises(GenerationUnparseable):
        generate_qa(scripted(['[{"question": "q?"}]']), IMG, "", "Counting", "recognition")
    with pytest.raises(GenerationUnparseable):
        generate_qa(scripted(["no json here"]), IMG, "", "Counting", "recognition")


def item(qtype="reasoning", aspect="Conditional Reasoning"):
    return QAItem(IMG.source_id, "What is A+B?", "7", qtype, aspect, "numeric", 3, "synth")


def checker(votes, difficulty=4, align="verdict: yes", verify="verdict: yes"):
    return scripted([align, verify, *votes, f"difficulty: {difficulty}"])


def test_check_qa_kept():
    c = checker(["7"] * 5)
    rep = check_qa(c, item(), IMG)
    assert rep.kept and rep.agreement == 1.0 and rep.difficulty == 4
    temps = [r["temperature"] for r in c.transport.requests]
    assert temps == [0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0]


def test_check_qa_low_agreement():
    rep = check_qa(checker(["7", "7", "8", "9", "10"]), item(), IMG)
    assert rep.agreement == 0.4 and not rep.kept


def test_check_qa_vote_normalization():
    rep = check_qa(checker(["7", "7.0", "<think>x</think><answer>7</answer>", "7 units", "8"]), item(), IMG)
    assert rep.agreement == 0.8 and rep.kept


def test_check_qa_difficulty_reasoning_only():
    assert not check_qa(checker(["7"] * 5, difficulty=2), item(), IMG).kept
    assert check_qa(checker(["7"] * 5, difficulty=2), item("recognition", "Counting"), IMG).kept


def test_check_qa_alignment_and_verification():
    assert not check_qa(checker(["7"] * 5, align="verdict: no"), item(), IMG).kept
    assert not check_qa(checker(["7"] * 5, verify="verdict: no"), item(), IMG).kept


def test_check_report_invariant():
    rep = check_qa(checker(["7"] * 5), item(), IMG)
    assert CheckReport.from_dict(rep.to_dict()) == rep
    assert passes(rep, QType.REASONING, 0.8, 3)
    with pytest.raises(UnparseableVerdict):
        parse_difficulty("hard")


# --- cold start ------------------------------------------------------------


def qa(q, a="25"):
    return QAItem(IMG.source_id, q, a, "reasoning", "Conditional Reasoning", "numeric", 3, "synth")


def test_cold_start_filter(sandbox):
    items = [qa("clean one"), qa("clean two [toolerr]"), qa("clean three [wrong]"), qa("clean four")]
    teacher = ChatClient(ScriptedTransport(FakeTeacher({it.question: it.answer for it in items})))
    outcomes = distill_cold_start(teacher, items, {IMG.source_id: IMG}, RolloutConfig(), sandbox, concurrency=1)
    assert [o.kept for o in outcomes] == [True, False, False, True]
    assert [o.reason for o in outcomes] == ["kept", "tool error", "wrong answer", "kept"]
    assert isinstance(outcomes[1].trajectory.steps[0].observation, ToolError)
    assert outcomes[0].trajectory.steps[0].observation == TextObs("25\n", False)


def test_cold_start_budget_failures(sandbox):
    teacher = scripted(["garbage"], cycle=True)
    (o,) = distill_cold_start(teacher, [qa("x")], {IMG.source_id: IMG}, sandbox=sandbox, concurrency=1)
    assert not o.kept and o.reason.startswith("not answered")


def test_sft_record_shape(sandbox):
    it = qa("what?")
    teacher = scripted([code_turn("print(25)"), answer_turn("25")])
    (o,) = distill_cold_start(teacher, [it], {IMG.source_id: IMG}, sandbox=sandbox, concurrency=1)
    rec = sft_record(o.trajectory, o.raw_turns, it)
    assert rec["schema"] == "sft-v1" and rec["target_turns"] == o.raw_turns
    roles = [m["role"] for m in rec["messages"]]
    assert roles == ["system", "user", "assistant", "user", "assistant"]
    assert rec["messages"][1]["content"][0] == {"type": "image", "image_ref": IMG.source_id}
    json.dumps(rec)


# --- pipeline --------------------------------------------------------------


def run_pipeline(out, transport_factory, sandbox, seed=5, n=4):
    lab_client = ChatClient(transport_factory("synth"), model="lab")
    synth_charts(lab_client, lab_client, sandbox, out, n=n, seed=seed, concurrency=2)
    synth_qa(lab_client, lab_client, out, seed=seed, concurrency=2)
    return lab_client


def snapshot(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.mark.slow
def test_pipeline_byte_identical_under_cassettes(tmp_path, sandbox):
    lab = FakeLab()
    cassette = tmp_path / "synth.cassette.jsonl"
    run_pipeline(tmp_path / "a", lambda _: CassetteTransport(cassette, "record", ScriptedTransport(lab)), sandbox)
    run_pipeline(tmp_path / "b", lambda _: CassetteTransport(cassette), sandbox)
    run_pipeline(tmp_path / "c", lambda _: CassetteTransport(cassette), sandbox)
    a, b, c = snapshot(tmp_path / "a"), snapshot(tmp_path / "b"), snapshot(tmp_path / "c")
    assert a == b == c
    assert "qa.jsonl" in a and any(k.startswith("charts/") for k in a)

    items = read_qa_jsonl(tmp_path / "a" / QA_FILE)
    audit = list(read_jsonl(tmp_path / "a" / "qa.audit.jsonl"))
    assert 0 < len(items) < len(audit)
    assert not any("[reject]" in it.question for it in items)
    assert audit_qa(tmp_path / "a") == []


def test_audit_qa_detects_smuggled_items(tmp_path):
    out = tmp_path
    good = qa("kept?")
    rep = CheckReport(True, True, ("25",) * 5, 1.0, 4, True)
    (out / "qa.audit.jsonl").write_text(json.dumps({"item": good.to_dict(), "report": rep.to_dict()}) + "\n")
    smuggled = qa("smuggled?")
    (out / QA_FILE).write_text("\n".join(json.dumps(i.to_dict()) for i in (good, smuggled)) + "\n")
    assert audit_qa(out, QAParams()) == ["smuggled?"]


def _png(path, seed):
    rng = np.random.default_rng(seed)
    Image.fromarray(rng.integers(0, 255, (20, 30, 3), dtype=np.uint8)).save(path)


def test_ingest_arxiv_and_coldstart(tmp_path, sandbox):
    src = tmp_path / "src"
    src.mkdir()
    rows = []
    for i, caption in enumerate(["Loss curve", "System flowchart", "", "Accuracy by model"]):
        _png(src / f"f{i}.png", i)
        rows.append({"id": f"arxiv-{i}", "image": f"f{i}.png", "caption": caption, "context": "", "field": "cs"})
    rows.append({"id": "arxiv-missing", "image": "nope.png", "caption": "x", "context": ""})
    (src / "records.jsonl").write_text("\n".join(json.dumps(r) for r in rows) + "\n")

    out = tmp_path / "out"
    lab = FakeLab()
    judge = ChatClient(ScriptedTransport(lab))
    res = ingest_arxiv(judge, src / "records.jsonl", out)
    assert (res.processed, res.kept) == (5, 2)
    audit = list(read_jsonl(out / "arxiv.audit.jsonl"))
    assert [a["stage"] for a in audit] == ["classify", "classify", "record", "classify", "record"]

    synth_qa(judge, judge, out, seed=1, concurrency=1)
    items = read_qa_jsonl(out / QA_FILE)
    assert items and all(it.provenance.value == "arxiv_mined" for it in items)

    teacher = ChatClient(ScriptedTransport(FakeTeacher(lab.answers)))
    res = coldstart(teacher, out, sandbox, concurrency=1)
    assert res.kept == len(items)
    sft = list(read_jsonl(out / SFT_FILE))
    assert [r["question"] for r in sft] == [it.question for it in items]
