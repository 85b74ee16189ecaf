"""Layer-name mapping files.

One mapping per line: `source.name = archive.name`, with an optional
expected-shape annotation `source.name = archive.name : 11x3x4x4`.
Blank lines and `#` comments are ignored.
"""

from dataclasses import dataclass
from typing import Optional

from .errors import ExportError


@dataclass(frozen=True)
class MappingRule:
    source: str
    dest: str
    shape: Optional[tuple] = None


def parse_mapping(text: str):
    rules = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ExportError(f"mapping line {lineno}: expected 'source = dest', got {raw!r}")
        source, rhs = (part.strip() for part in line.split("=", 1))
        shape = None
        if ":" in rhs:
            rhs, dims = (part.strip() for part in rhs.split(":", 1))
            try:
                shape = tuple(int(d) for d in dims.split("x"))
            except ValueError:
                raise ExportError(f"mapping line {lineno}: bad shape {dims!r}") from None
        if not source or not rhs:
            raise ExportError(f"mapping line {lineno}: empty name in {raw!r}")
        rules.append(MappingRule(source=source, dest=rhs, shape=shape))
    if not rules:
        raise ExportError("mapping file contains no rules")
    seen_dest = {}
    for rule in rules:
        if rule.dest in seen_dest:
            raise ExportError(f"mapping is not injective: {seen_dest[rule.dest]!r} and "
                              f"{rule.source!r} both map to {rule.dest!r}")
        seen_dest[rule.dest] = rule.source
    seen_src = set()
    for rule in rules:
        if rule.source in seen_src:
            raise ExportError(f"source layer {rule.source!r} is mapped twice")
        seen_src.add(rule.source)
    return rules


def read_mapping(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_mapping(fh.read())
