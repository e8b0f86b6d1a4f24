"""Line-delimited JSON records for trajectories and QA datasets, plus the
PNG image store they reference.

Trajectory records never inline pixels. Each image is referenced by its
``source_id`` and a SHA-256 content hash that is verified on load.
"""

from __future__ import annotations

import json
import os
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any
from urllib.parse import quote, unquote

from .errors import DatasetMalformed, InvariantViolation, MalformedRecord
from .model import (
    BBox,
    ChartImage,
    CodeExec,
    Crop,
    ErrorKind,
    ImageObs,
    QAItem,
    Step,
    Termination,
    TextObs,
    ToolError,
    Trajectory,
)

TRAJECTORY_SCHEMA = "traj-v1"


def read_jsonl(path: str | Path) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as e:
                raise MalformedRecord(f"{path}:{lineno}: {e}") from None


def write_jsonl(path: str | Path, rows: Iterable[Any]) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        for row in rows:
            line = row if isinstance(row, str) else dumps(row)
            fh.write(line + "\n")
            n += 1
    os.replace(tmp, path)
    return n


def dumps(obj: Any) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


class ImageStore:
    """PNG files addressed by ``source_id`` inside one directory."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self._cache: dict[str, ChartImage] = {}

    def path_for(self, source_id: str) -> Path:
        return self.root / (quote(source_id, safe="") + ".png")

    def put(self, image: ChartImage) -> Path:
        path = self.path_for(image.source_id)
        if not path.exists():
            self.root.mkdir(parents=True, exist_ok=True)
            path.write_bytes(image.to_png())
        self._cache[image.source_id] = image
        return path

    def get(self, source_id: str, default=None):
        if source_id in self._cache:
            return self._cache[source_id]
        path = self.path_for(source_id)
        if not path.exists():
            return default
        img = ChartImage.from_png(path, source_id)
        self._cache[source_id] = img
        return img

    def __getitem__(self, source_id: str) -> ChartImage:
        img = self.get(source_id)
        if img is None:
            raise KeyError(source_id)
        return img

    def __contains__(self, source_id: str) -> bool:
        return source_id in self._cache or self.path_for(source_id).exists()

    def ids(self) -> list[str]:
        if not self.root.exists():
            return []
        return sorted(unquote(p.stem) for p in self.root.glob("*.png"))


# --- trajectory encoding ---------------------------------------------------


def _image_ref(img: ChartImage) -> dict:
    return {"source_id": img.source_id, "sha256": img.content_hash, "width": img.width, "height": img.height}


def _action_to_json(action) -> dict:
    if isinstance(action, Crop):
        return {"kind": "crop", "bbox": action.bbox.as_list()}
    return {"kind": "code", "source": action.source}


def _obs_to_json(obs) -> dict:
    if isinstance(obs, TextObs):
        return {"kind": "text", "content": obs.content, "truncated": obs.truncated}
    if isinstance(obs, ImageObs):
        return {"kind": "image", "image": _image_ref(obs.image)}
    return {"kind": "error", "error": obs.error.value, "message": obs.message}


def trajectory_to_json(t: Trajectory, raw_turns: list[str] | None = None, meta: dict | None = None) -> dict:
    rec: dict[str, Any] = {
        "schema": TRAJECTORY_SCHEMA,
        "image": _image_ref(t.image),
        "question": t.question,
        "steps": [
            {
                "reasoning": s.reasoning,
                "action": _action_to_json(s.action),
                "observation": _obs_to_json(s.observation),
            }
            for s in t.steps
        ],
        "final_reasoning": t.final_reasoning,
        "terminated_by": t.terminated_by.value,
    }
    if t.answer is not None:
        rec["answer"] = t.answer
    if raw_turns is not None:
        rec["raw_turns"] = list(raw_turns)
    if meta:
        rec["meta"] = meta
    return rec


def serialize_trajectory(t: Trajectory, raw_turns: list[str] | None = None, meta: dict | None = None) -> str:
    """One-line JSON record for ``t``; images are referenced, not inlined."""
    return dumps(trajectory_to_json(t, raw_turns, meta))


@dataclass
class TrajectoryRecord:
    trajectory: Trajectory
    raw_turns: list[str] | None = None
    meta: dict = field(default_factory=dict)


ImageResolver = Mapping[str, ChartImage] | ImageStore


def _resolve(ref: Any, images: ImageResolver | None) -> ChartImage:
    if not isinstance(ref, dict):
        raise MalformedRecord("image reference must be an object")
    sid = ref["source_id"]
    if not isinstance(sid, str):
        raise MalformedRecord("image source_id must be a string")
    img = images.get(sid) if images is not None else None
    if img is None:
        raise MalformedRecord(f"image {sid!r} cannot be resolved")
    if ref.get("sha256") not in (None, img.content_hash):
        raise InvariantViolation(f"content hash mismatch for image {sid!r}")
    return img


def _str(v: Any, what: str) -> str:
    if not isinstance(v, str):
        raise MalformedRecord(f"{what} must be a string")
    return v


def _action_from_json(d: Any):
    if not isinstance(d, dict):
        raise MalformedRecord("action must be an object")
    kind = d.get("kind")
    if kind == "crop":
        bbox = d["bbox"]
        if not isinstance(bbox, list) or len(bbox) != 4:
            raise MalformedRecord("crop bbox must be a 4-element list")
        return Crop(BBox(*bbox))
    if kind == "code":
        return CodeExec(_str(d["source"], "code source"))
    raise MalformedRecord(f"unknown action kind {kind!r}")


def _obs_from_json(d: Any, images: ImageResolver | None):
    if not isinstance(d, dict):
        raise MalformedRecord("observation must be an object")
    kind = d.get("kind")
    if kind == "text":
        return TextObs(_str(d["content"], "text content"), bool(d.get("truncated", False)))
    if kind == "image":
        return ImageObs(_resolve(d["image"], images))
    if kind == "error":
        return ToolError(ErrorKind(d["error"]), _str(d.get("message", ""), "error message"))
    raise MalformedRecord(f"unknown observation kind {kind!r}")


def read_trajectory_record(
    record: str | bytes, images: ImageResolver | None = None, max_steps: int | None = None
) -> TrajectoryRecord:
    """Decode a record. Any defect surfaces as MalformedRecord or InvariantViolation."""
    try:
        if isinstance(record, bytes):
            record = record.decode("utf-8")
        d = json.loads(record)
    except (UnicodeDecodeError, json.JSONDecodeError, RecursionError) as e:
        raise MalformedRecord(f"not a JSON record: {e}") from None
    if not isinstance(d, dict):
        raise MalformedRecord("record must be a JSON object")
    try:
        steps_raw = d["steps"]
        if not isinstance(steps_raw, list):
            raise MalformedRecord("steps must be a list")
        steps = []
        for s in steps_raw:
            if not isinstance(s, dict):
                raise MalformedRecord("step must be an object")
            steps.append(
                Step(
                    _str(s.get("reasoning", ""), "reasoning"),
                    _action_from_json(s["action"]),
                    _obs_from_json(s["observation"], images),
                )
            )
        answer = d.get("answer")
        if answer is not None:
            answer = _str(answer, "answer")
        raw_turns = d.get("raw_turns")
        if raw_turns is not None and not (isinstance(raw_turns, list) and all(isinstance(x, str) for x in raw_turns)):
            raise MalformedRecord("raw_turns must be a list of strings")
        meta = d.get("meta") or {}
        if not isinstance(meta, dict):
            raise MalformedRecord("meta must be an object")
        traj = Trajectory(
            image=_resolve(d["image"], images),
            question=_str(d["question"], "question"),
            steps=tuple(steps),
            final_reasoning=_str(d.get("final_reasoning", ""), "final_reasoning"),
            answer=answer,
            terminated_by=Termination(d["terminated_by"]),
        )
        if max_steps is not None:
            traj.check_turn_budget(max_steps)
    except (MalformedRecord, InvariantViolation):
        raise
    except (KeyError, TypeError, ValueError, AttributeError, OverflowError) as e:
        raise MalformedRecord(f"bad record structure: {type(e).__name__}: {e}") from None
    return TrajectoryRecord(traj, raw_turns, meta)


def deserialize_trajectory(record: str | bytes, images: ImageResolver | None = None, max_steps: int | None = None) -> Trajectory:
    return read_trajectory_record(record, images, max_steps).trajectory


class TrajectoryStore:
    """A ``*.traj.jsonl`` file plus its sibling ``images/`` directory."""

    def __init__(self, path: str | Path, image_dir: str | Path | None = None):
        self.path = Path(path)
        self.images = ImageStore(image_dir if image_dir is not None else self.path.parent / "images")

    def write(self, records: Iterable[TrajectoryRecord]) -> int:
        rows = []
        for rec in records:
            self._put_images(rec.trajectory)
            rows.append(serialize_trajectory(rec.trajectory, rec.raw_turns, rec.meta))
        return write_jsonl(self.path, rows)

    def _put_images(self, t: Trajectory) -> None:
        self.images.put(t.image)
        for s in t.steps:
            if isinstance(s.observation, ImageObs):
                self.images.put(s.observation.image)

    def read(self) -> list[TrajectoryRecord]:
        out = []
        with open(self.path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    out.append(read_trajectory_record(line, self.images))
        return out


# --- QA datasets -------------------------------------------------------------


def read_qa_jsonl(path: str | Path, check_aspects: bool = False) -> list[QAItem]:
    path = Path(path)
    if not path.is_file():
        raise DatasetMalformed(f"dataset {path} does not exist")
    items = []
    try:
        for row in read_jsonl(path):
            item = QAItem.from_dict(row)
            if check_aspects:
                item.check_aspect()
            items.append(item)
    except (MalformedRecord, InvariantViolation, KeyError, TypeError, ValueError) as e:
        raise DatasetMalformed(f"{path}: {e}") from None
    return items


def write_qa_jsonl(path: str | Path, items: Iterable[QAItem]) -> int:
    return write_jsonl(path, (it.to_dict() for it in items))
