"""Reference plotting snippets that condition chart generation.

A library is a directory of ``*.py`` files. Each file starts with two
header comments::

    # layout: single | multi
    # provenance: free text

The file stem is the snippet id. A small seed set ships with the package.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path

from ..errors import InvariantViolation

BUNDLED_LIBRARY = Path(__file__).with_name("reference_library")


class LayoutTag(str, enum.Enum):
    SINGLE = "single"
    MULTI = "multi"


@dataclass(frozen=True)
class ReferenceSnippet:
    id: str
    layout_tag: LayoutTag
    code: str
    provenance: str = ""

    def __post_init__(self):
        object.__setattr__(self, "layout_tag", LayoutTag(self.layout_tag))
        if not self.code.strip():
            raise InvariantViolation(f"reference {self.id!r} has no code")


def _header(lines: list[str], key: str) -> str | None:
    for line in lines[:5]:
        line = line.strip()
        if line.startswith("#") and ":" in line:
            k, v = line[1:].split(":", 1)
            if k.strip().lower() == key:
                return v.strip()
    return None


def load_reference_library(directory: str | Path | None = None) -> dict[str, ReferenceSnippet]:
    directory = Path(directory) if directory is not None else BUNDLED_LIBRARY
    library = {}
    for path in sorted(directory.glob("*.py")):
        code = path.read_text(encoding="utf-8")
        lines = code.splitlines()
        layout = _header(lines, "layout")
        if layout is None:
            raise InvariantViolation(f"{path.name}: missing '# layout:' header")
        library[path.stem] = ReferenceSnippet(path.stem, layout, code, _header(lines, "provenance") or "")
    return library


def verify_snippet(snippet: ReferenceSnippet, sandbox) -> bool:
    """The snippet runs cleanly and leaves at least one image behind."""
    res = sandbox.execute(snippet.code)
    return res.ok and any(a.lower().endswith((".png", ".jpg", ".jpeg")) for a in res.artifacts)
