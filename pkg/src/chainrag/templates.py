"""Versioned prompt assets shipped in ``chainrag/prompts``."""

from __future__ import annotations

import re
from functools import lru_cache
from importlib import resources
from string import Template

_SECTION = re.compile(r"^---(\w+)---$")


@lru_cache(maxsize=None)
def load_sections(name: str) -> dict[str, Template]:
    """Parse ``prompts/<name>.txt`` into its ``---section---`` blocks, dropping comments."""
    text = resources.files("chainrag").joinpath("prompts", f"{name}.txt").read_text(encoding="utf-8")
    sections: dict[str, list[str]] = {}
    current = None
    for line in text.splitlines():
        m = _SECTION.match(line)
        if m:
            current = m.group(1)
            sections[current] = []
        elif current is not None:
            sections[current].append(line)
        elif line and not line.startswith("#"):
            raise ValueError(f"prompt asset {name}: text outside a section: {line!r}")
    return {k: Template("\n".join(v).strip("\n")) for k, v in sections.items()}


def render(name: str, section: str, **values: str) -> str:
    return load_sections(name)[section].substitute(**values)
