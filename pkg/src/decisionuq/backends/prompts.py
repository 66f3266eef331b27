"""Prompt assembly for in-context-learning queries."""
from __future__ import annotations

import string
from dataclasses import dataclass

from ..errors import MissingPlaceholder

_FORMATTER = string.Formatter()


def placeholders(text: str) -> list[str]:
    return [name for _, name, _, _ in _FORMATTER.parse(text) if name is not None]


def format_strict(text: str, values: dict) -> str:
    """``str.format`` that raises MissingPlaceholder for absent or None values."""
    for name in placeholders(text):
        if name == "" or values.get(name) is None:
            raise MissingPlaceholder(name)
    return text.format(**values)


@dataclass(frozen=True)
class PromptTemplate:
    """Renders ``header``, then one ``demo`` block per demonstration, then ``query``.

    ``demo`` sees ``{x}`` and ``{y}``; ``query`` sees ``{x}`` (the test
    input). Every part may also reference ``{instruction}``, ``{system}``,
    ``{task}`` and ``{query_id}``.
    """

    query: str = "{x}"
    demo: str = "{x}\n{y}\n"
    header: str = ""
    template_id: str = "default"

    def to_dict(self):
        return {"id": self.template_id, "header": self.header, "demo": self.demo, "query": self.query}

    @classmethod
    def from_dict(cls, d):
        return cls(query=d.get("query", "{x}"), demo=d.get("demo", "{x}\n{y}\n"),
                   header=d.get("header", ""), template_id=d.get("id", "default"))


DEFAULT_TEMPLATE = PromptTemplate()
RAW_TEMPLATE = PromptTemplate(query="{x}", demo="", header="", template_id="raw")


def render_prompt(context, template: PromptTemplate = DEFAULT_TEMPLATE) -> str:
    common = {"instruction": context.instruction, "system": context.system,
              "task": context.task, "query_id": context.query_id}
    parts = [format_strict(template.header, common)] if template.header else []
    for x, y in context.demos:
        parts.append(format_strict(template.demo, {**common, "x": x, "y": y}))
    parts.append(format_strict(template.query, {**common, "x": context.x_star}))
    return "".join(parts)
