"""Deterministic report emission (JSON and markdown tables).

Field ordering is fixed and floats are rounded before serialization, so
identical inputs always produce byte-identical output.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional


def to_json(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def markdown_table(headers: list[str], rows: list[list]) -> str:
    def cell(v) -> str:
        if isinstance(v, float):
            return f"{v:.2f}"
        if isinstance(v, bool):
            return "yes" if v else "no"
        return str(v)

    lines = ["| " + " | ".join(headers) + " |",
             "| " + " | ".join("---" for _ in headers) + " |"]
    for row in rows:
        lines.append("| " + " | ".join(cell(v) for v in row) + " |")
    return "\n".join(lines) + "\n"


def emit(text: str, out: Optional[str] = None) -> None:
    if out is None:
        print(text, end="")
    else:
        Path(out).write_text(text)
