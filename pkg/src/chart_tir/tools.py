"""The two chart tools: region cropping and code computation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ChartTIRError
from .model import BBox, ChartImage, CodeExec, Crop, ErrorKind, ImageObs, Observation, TextObs, ToolAction, ToolError
from .sandbox import ExecLimits, ExitStatus

log = logging.getLogger(__name__)

CHART_FILENAME = "chart.png"
STDERR_EXCERPT = 600


@dataclass(frozen=True)
class ToolConfig:
    min_crop_side: int = 8
    crop_resize_factor: float = 1.0
    exec_limits: ExecLimits = field(default_factory=ExecLimits)

    def __post_init__(self):
        if self.min_crop_side < 1:
            raise ValueError("min_crop_side must be >= 1")
        if not self.crop_resize_factor >= 1:
            raise ValueError("crop_resize_factor must be >= 1")


def _scaled(n: int, factor: float) -> int:
    return max(1, int(np.floor(n * factor + 0.5)))


def crop(image: ChartImage, bbox: BBox, cfg: ToolConfig | None = None) -> Observation:
    """Clamp ``bbox`` to the frame, cut it out, then nearest-neighbour upscale."""
    cfg = cfg or ToolConfig()
    x0 = min(max(bbox.x0, 0), image.width)
    y0 = min(max(bbox.y0, 0), image.height)
    x1 = min(max(bbox.x1, 0), image.width)
    y1 = min(max(bbox.y1, 0), image.height)
    w, h = x1 - x0, y1 - y0
    if w < cfg.min_crop_side or h < cfg.min_crop_side:
        return ToolError(
            ErrorKind.INVALID_ARGS,
            f"crop box {bbox.as_list()} clamps to {w}x{h} inside a {image.width}x{image.height} image; "
            f"each side must be at least {cfg.min_crop_side}px",
        )
    region = image.pixels[y0:y1, x0:x1]
    factor = cfg.crop_resize_factor
    sid = f"{image.source_id}@crop[{x0},{y0},{x1},{y1}]"
    if factor != 1:
        out_w, out_h = _scaled(w, factor), _scaled(h, factor)
        cols = np.minimum((np.arange(out_w) / factor).astype(np.int64), w - 1)
        rows = np.minimum((np.arange(out_h) / factor).astype(np.int64), h - 1)
        region = region[rows[:, None], cols[None, :]]
        sid += f"x{factor:g}"
    return ImageObs(ChartImage(region, sid))


def run_tool(image: ChartImage, action: ToolAction, cfg: ToolConfig | None, sandbox) -> Observation:
    """Execute one tool action. Never raises: every failure becomes a ToolError."""
    cfg = cfg or ToolConfig()
    try:
        if isinstance(action, Crop):
            return crop(image, action.bbox, cfg)
        if isinstance(action, CodeExec):
            return _run_code(image, action.source, cfg, sandbox)
        return ToolError(ErrorKind.INVALID_ARGS, f"unsupported action {type(action).__name__}")
    except ChartTIRError as e:
        return ToolError(ErrorKind.EXEC_FAILURE, f"{e.code}: {e}")
    except Exception as e:  # tool failures must never escape into the rollout loop
        log.exception("tool execution failed")
        return ToolError(ErrorKind.EXEC_FAILURE, f"{type(e).__name__}: {e}")


def _excerpt(text: str) -> str:
    text = text.strip()
    return text if len(text) <= STDERR_EXCERPT else "..." + text[-STDERR_EXCERPT:]


def _run_code(image: ChartImage, source: str, cfg: ToolConfig, sandbox) -> Observation:
    res = sandbox.execute(source, cfg.exec_limits, {CHART_FILENAME: image.to_png()})
    if res.status is ExitStatus.OK:
        return TextObs(res.stdout, res.truncated)
    if res.status is ExitStatus.TIMEOUT:
        return ToolError(ErrorKind.TIMEOUT, f"execution exceeded {cfg.exec_limits.wall_timeout:g}s")
    if res.status is ExitStatus.KILLED:
        return ToolError(ErrorKind.RESOURCE_LIMIT, _excerpt(res.stderr) or "killed by a resource limit")
    msg = _excerpt(res.stderr) or f"exit status {res.exit_code}"
    return ToolError(ErrorKind.EXEC_FAILURE, msg)
