"""Convert third-party benchmark layouts into the repo's QA JSONL format.

Only the ChartQA layout (``imgname`` / ``query`` / ``label``) ships as a
preset; other benchmarks go through :class:`FieldMapAdapter` with an explicit
field mapping.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from ..errors import DatasetMalformed
from ..model import AnswerType, ChartImage, Provenance, QAItem, QType
from ..records import ImageStore, write_qa_jsonl
from ..reward import normalize_binary, parse_number


def infer_answer_type(answer: str) -> AnswerType:
    if parse_number(answer) is not None:
        return AnswerType.NUMERIC
    if normalize_binary(answer) is not None and len(answer.split()) == 1:
        return AnswerType.BINARY
    if answer.strip().startswith("[") or ("," in answer and len(answer) < 80):
        return AnswerType.LIST_RANGE
    return AnswerType.TEXT


@dataclass(frozen=True)
class FieldMapAdapter:
    image_field: str
    question_field: str
    answer_field: str
    qtype: QType = QType.REASONING
    aspect: str = "benchmark"
    difficulty: int = 3

    def _rows(self, path: Path) -> list[dict]:
        text = path.read_text(encoding="utf-8")
        try:
            data = json.loads(text)
        except json.JSONDecodeError:
            try:
                data = [json.loads(line) for line in text.splitlines() if line.strip()]
            except json.JSONDecodeError as e:
                raise DatasetMalformed(f"{path}: neither JSON nor JSONL: {e}") from None
        if isinstance(data, dict):
            data = list(data.values())
        if not isinstance(data, list):
            raise DatasetMalformed(f"{path}: expected a list of records")
        return data

    def convert(self, source: str | Path, image_root: str | Path, out_qa: str | Path, out_images: str | Path) -> int:
        source, image_root = Path(source), Path(image_root)
        store = ImageStore(out_images)
        items = []
        for row in self._rows(source):
            try:
                img_name = str(row[self.image_field])
                answer = row[self.answer_field]
                if isinstance(answer, list):
                    answer = ", ".join(map(str, answer))
                answer = str(answer)
                question = str(row[self.question_field])
            except (KeyError, TypeError) as e:
                raise DatasetMalformed(f"{source}: record lacks field {e}") from None
            sid = Path(img_name).stem
            if sid not in store:
                store.put(ChartImage.from_png(image_root / img_name, sid))
            items.append(QAItem(sid, question, answer, self.qtype, self.aspect, infer_answer_type(answer),
                                self.difficulty, Provenance.ARXIV_MINED))
        return write_qa_jsonl(out_qa, items)


ADAPTERS = {
    "chartqa": FieldMapAdapter("imgname", "query", "label"),
    "generic": FieldMapAdapter("image", "question", "answer"),
}
