"""Canonical structure extraction for SVG golden comparisons.

Golden tests compare figure *structure* (element tree, path complexity,
text content), not raster pixels, so cosmetic changes the renderer does not
control (ids, hashes, whitespace) do not participate.
"""

from __future__ import annotations

import json
import re
import xml.etree.ElementTree as ET
from pathlib import Path

_VOLATILE_ATTRS = {"id", "clip-path", "xlink:href", "href"}


def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def _path_commands(d: str) -> str:
    """Compressed command signature of a path's d attribute, e.g. 'M L*120 z'."""
    letters = re.findall(r"[A-Za-z]", d)
    out = []
    i = 0
    while i < len(letters):
        j = i
        while j + 1 < len(letters) and letters[j + 1] == letters[i]:
            j += 1
        run = j - i + 1
        out.append(letters[i] if run == 1 else f"{letters[i]}*{run}")
        i = j + 1
    return " ".join(out)


def structure(svg_text: str) -> list:
    """Nested [tag, salient-attrs, children] structure of an SVG document."""
    root = ET.fromstring(svg_text)

    def walk(el):
        attrs = {}
        for key, value in sorted(el.attrib.items()):
            name = _local(key)
            if name in _VOLATILE_ATTRS:
                continue
            if name == "d":
                attrs["d"] = _path_commands(value)
            elif name in ("fill", "stroke", "style", "font-size", "opacity",
                          "stroke-width", "transform"):
                attrs[name] = _strip_numbers(value)
        node = [_local(el.tag), attrs]
        text = (el.text or "").strip()
        if text:
            node.append(["#text", text])
        children = [walk(c) for c in el]
        if children:
            node.append(children)
        return node

    return walk(root)


def _strip_numbers(value: str) -> str:
    """Round embedded coordinates so layout jitter below 0.1pt is ignored."""
    def repl(match):
        return format(float(match.group(0)), ".1f")

    return re.sub(r"-?\d+(?:\.\d+)?(?:e-?\d+)?", repl, value)


def structure_of_file(path) -> list:
    return structure(Path(path).read_text())


def dump(struct) -> str:
    return json.dumps(struct, sort_keys=True, separators=(",", ":"))


def equal(a, b) -> bool:
    return dump(a) == dump(b)
