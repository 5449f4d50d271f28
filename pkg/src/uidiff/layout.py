"""Deterministic HTML layout and rasterization.

A small box-model engine: block stacking, single-level flex rows and
columns, margins/padding, inline text wrapping with the bundled Pillow
font, solid gray boxes for placeholder images.  It exists so rendering,
pixel-diff filtering, block extraction, and every score built on them
can run without a browser and produce identical bytes on every run in
a given environment.

Supported CSS is intentionally narrow: simple selectors (tag, .class,
#id and compounds), px/em/% lengths, the display/flex/gap/margin/
padding/width/height/background/color/font-size/font-weight/text-align/
border properties.  Everything else is ignored.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from math import ceil
from typing import Optional

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .dom import (
    Comment,
    Element,
    HtmlDocument,
    Node,
    Text,
    element_style,
    parse_style,
)

__all__ = ["Block", "LayoutResult", "render_layout"]

DEFAULT_VIEWPORT_WIDTH = 1280

BLOCK_TAGS = frozenset(
    "html body div p h1 h2 h3 h4 h5 h6 ul ol li section article main header "
    "footer nav aside form table thead tbody tfoot tr td th fieldset figure "
    "figcaption blockquote pre dl dt dd hr address center".split()
)
INLINE_BLOCK_TAGS = frozenset("img button input select textarea".split())
SKIP_TAGS = frozenset("head style script title meta base noscript template".split())
BOLD_TAGS = frozenset("b strong th h1 h2 h3 h4 h5 h6".split())

_HEADING_SIZE = {"h1": 32, "h2": 24, "h3": 19, "h4": 16, "h5": 13, "h6": 11}
_HEADING_MARGIN = {"h1": 21, "h2": 20, "h3": 19, "h4": 21, "h5": 22, "h6": 25}

NAMED_COLORS = {
    "black": (0, 0, 0),
    "white": (255, 255, 255),
    "red": (255, 0, 0),
    "green": (0, 128, 0),
    "blue": (0, 0, 255),
    "yellow": (255, 255, 0),
    "orange": (255, 165, 0),
    "purple": (128, 0, 128),
    "pink": (255, 192, 203),
    "gray": (128, 128, 128),
    "grey": (128, 128, 128),
    "silver": (192, 192, 192),
    "brown": (165, 42, 42),
    "cyan": (0, 255, 255),
    "magenta": (255, 0, 255),
    "navy": (0, 0, 128),
    "teal": (0, 128, 128),
    "maroon": (128, 0, 0),
    "olive": (128, 128, 0),
    "lime": (0, 255, 0),
    "aqua": (0, 255, 255),
    "fuchsia": (255, 0, 255),
    "gold": (255, 215, 0),
    "beige": (245, 245, 220),
    "ivory": (255, 255, 240),
    "coral": (255, 127, 80),
    "salmon": (250, 128, 114),
    "tomato": (255, 99, 71),
    "crimson": (220, 20, 60),
    "indigo": (75, 0, 130),
    "violet": (238, 130, 238),
    "lightgray": (211, 211, 211),
    "lightgrey": (211, 211, 211),
    "darkgray": (169, 169, 169),
    "darkgrey": (169, 169, 169),
    "lightblue": (173, 216, 230),
    "darkblue": (0, 0, 139),
    "lightgreen": (144, 238, 144),
    "darkgreen": (0, 100, 0),
    "darkred": (139, 0, 0),
    "whitesmoke": (245, 245, 245),
    "lavender": (230, 230, 250),
    "skyblue": (135, 206, 235),
    "steelblue": (70, 130, 180),
    "slategray": (112, 128, 144),
    "dimgray": (105, 105, 105),
}

RGB = tuple[int, int, int]


def parse_color(value: Optional[str]) -> Optional[RGB]:
    """Parse #hex, rgb()/rgba(), or a named color; None when unknown."""
    if not value:
        return None
    value = value.strip().lower()
    if value.startswith("#"):
        digits = value[1:]
        if re.fullmatch(r"[0-9a-f]{3}", digits):
            return tuple(int(c * 2, 16) for c in digits)  # type: ignore[return-value]
        if re.fullmatch(r"[0-9a-f]{6}", digits):
            return tuple(int(digits[i : i + 2], 16) for i in (0, 2, 4))  # type: ignore[return-value]
        return None
    match = re.fullmatch(r"rgba?\(([^)]*)\)", value)
    if match:
        parts = [p.strip() for p in match.group(1).split(",")]
        if len(parts) >= 3:
            try:
                rgb = tuple(max(0, min(255, int(float(p)))) for p in parts[:3])
            except ValueError:
                return None
            return rgb  # type: ignore[return-value]
        return None
    return NAMED_COLORS.get(value)


def _extract_color(value: Optional[str]) -> Optional[RGB]:
    """First parseable color token in a (possibly shorthand) value."""
    if not value:
        return None
    direct = parse_color(value)
    if direct is not None:
        return direct
    for token in value.split():
        color = parse_color(token)
        if color is not None:
            return color
    return None


@dataclass
class Block:
    """A visible text-bearing region: bbox in CSS pixels, text, fg color."""

    x: float
    y: float
    w: float
    h: float
    text: str
    color: RGB

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    def to_record(self) -> dict:
        return {
            "bbox": [self.x, self.y, self.w, self.h],
            "text": self.text,
            "color": list(self.color),
        }

    @staticmethod
    def from_record(rec: dict) -> "Block":
        x, y, w, h = rec["bbox"]
        return Block(x, y, w, h, rec["text"], tuple(rec["color"]))  # type: ignore[arg-type]


def scale_blocks(blocks: list[Block], factor: float) -> list[Block]:
    """Rescale block geometry by the pixel-budget factor; text unchanged."""
    return [
        Block(b.x * factor, b.y * factor, b.w * factor, b.h * factor, b.text, b.color)
        for b in blocks
    ]


# ---------------------------------------------------------------------------
# stylesheet

@dataclass
class _Rule:
    tag: Optional[str]
    classes: tuple[str, ...]
    ident: Optional[str]
    specificity: int
    order: int
    decls: dict[str, str]


_SELECTOR_PART = re.compile(r"([#.]?)([\w-]+)")


def _parse_selector(sel: str, order: int, decls: dict[str, str]) -> Optional[_Rule]:
    sel = sel.strip()
    if not sel:
        return None
    if " " in sel or ">" in sel or ":" in sel or "[" in sel or "+" in sel or "~" in sel:
        return None  # combinators and pseudo-classes unsupported
    tag = None
    classes: list[str] = []
    ident = None
    if sel == "*":
        return _Rule(None, (), None, 0, order, decls)
    pos = 0
    for match in _SELECTOR_PART.finditer(sel):
        if match.start() != pos:
            return None
        pos = match.end()
        marker, name = match.groups()
        if marker == ".":
            classes.append(name)
        elif marker == "#":
            ident = name
        else:
            tag = name.lower()
    if pos != len(sel):
        return None
    spec = (100 if ident else 0) + 10 * len(classes) + (1 if tag else 0)
    return _Rule(tag, tuple(classes), ident, spec, order, decls)


def parse_stylesheet(css: str) -> list[_Rule]:
    css = re.sub(r"/\*.*?\*/", "", css, flags=re.DOTALL)
    css = re.sub(r"@media[^{]*\{", "", css)  # flatten media queries, keep rules
    rules: list[_Rule] = []
    order = 0
    for block in re.finditer(r"([^{}]+)\{([^{}]*)\}", css):
        selectors, body = block.groups()
        decls = parse_style(body)
        if not decls:
            continue
        for sel in selectors.split(","):
            rule = _parse_selector(sel, order, decls)
            if rule is not None:
                rules.append(rule)
                order += 1
    return rules


def _rule_matches(rule: _Rule, el: Element) -> bool:
    if rule.tag is not None and rule.tag != el.name:
        return False
    if rule.ident is not None and el.attrs.get("id") != rule.ident:
        return False
    if rule.classes:
        classes = (el.attrs.get("class") or "").split()
        return all(c in classes for c in rule.classes)
    return rule.tag is not None or rule.ident is not None or rule.classes == ()


def resolved_style(el: Element, sheet: list[_Rule]) -> dict[str, str]:
    """Cascaded declarations for one element: sheet rules then inline."""
    matched = [r for r in sheet if _rule_matches(r, el)]
    matched.sort(key=lambda r: (r.specificity, r.order))
    decls: dict[str, str] = {}
    for rule in matched:
        decls.update(rule.decls)
    decls.update(element_style(el))
    return decls


# ---------------------------------------------------------------------------
# lengths

def _px(value: Optional[str], font_size: int, base: int = 0) -> Optional[int]:
    """Resolve a CSS length to integer pixels; percentages against base."""
    if value is None:
        return None
    value = value.strip().lower()
    if value in ("auto", "inherit", "initial", "unset", "none", ""):
        return None
    match = re.fullmatch(r"(-?\d+(?:\.\d+)?)(px|em|rem|%|pt)?", value)
    if not match:
        return None
    num = float(match.group(1))
    unit = match.group(2)
    if unit == "em" or unit == "rem":
        return int(round(num * font_size))
    if unit == "%":
        return int(round(num * base / 100.0))
    if unit == "pt":
        return int(round(num * 4 / 3))
    return int(round(num))


def _box_sides(decls: dict[str, str], prop: str, font_size: int) -> list[int]:
    """Resolve margin/padding shorthand + sides to [top, right, bottom, left]."""
    sides = [0, 0, 0, 0]
    shorthand = decls.get(prop)
    if shorthand:
        parts = [p for p in shorthand.split() if p]
        vals = [(_px(p, font_size) or 0) for p in parts]
        if len(vals) == 1:
            sides = [vals[0]] * 4
        elif len(vals) == 2:
            sides = [vals[0], vals[1], vals[0], vals[1]]
        elif len(vals) == 3:
            sides = [vals[0], vals[1], vals[2], vals[1]]
        elif len(vals) >= 4:
            sides = vals[:4]
    for i, side in enumerate(("top", "right", "bottom", "left")):
        value = decls.get(f"{prop}-{side}")
        if value is not None:
            sides[i] = _px(value, font_size) or 0
    return sides


def _margin_auto(decls: dict[str, str]) -> bool:
    shorthand = (decls.get("margin") or "").split()
    if decls.get("margin-left") == "auto" and decls.get("margin-right") == "auto":
        return True
    return len(shorthand) == 2 and shorthand[1] == "auto"


# ---------------------------------------------------------------------------
# fonts

_FONT_CACHE: dict[int, ImageFont.FreeTypeFont] = {}


def _font(size: int) -> ImageFont.FreeTypeFont:
    size = max(6, min(96, size))
    if size not in _FONT_CACHE:
        _FONT_CACHE[size] = ImageFont.load_default(size=size)
    return _FONT_CACHE[size]


def _word_width(word: str, size: int, bold: bool) -> int:
    width = int(ceil(_font(size).getlength(word)))
    return width + (2 if bold else 0)  # bold is drawn with a 1px stroke


def _line_metrics(size: int) -> tuple[int, int]:
    ascent, descent = _font(size).getmetrics()
    glyph_h = ascent + descent
    return glyph_h, max(glyph_h, int(ceil(size * 1.25)))


# ---------------------------------------------------------------------------
# layout engine

@dataclass
class _Word:
    text: str
    size: int
    bold: bool
    color: RGB
    owner: int  # id of owning element (for block grouping)


@dataclass
class _Box:
    """Atomic inline-block participant (img/button/input)."""

    el: Element
    w: int
    h: int


@dataclass
class _OwnerAccum:
    el: Element
    color: RGB
    words: list[str] = field(default_factory=list)
    min_x: int = 1 << 30
    min_y: int = 1 << 30
    max_x: int = 0
    max_y: int = 0


@dataclass
class LayoutResult:
    width: int
    height: int
    pixels: np.ndarray  # uint8 (h, w, 3)
    blocks: list[Block]


class _Engine:
    def __init__(self, doc: HtmlDocument, viewport_width: int) -> None:
        self.doc = doc
        self.viewport = viewport_width
        self.sheet = self._collect_sheet(doc)
        self.ops: list[tuple] = []
        self.owners: dict[int, _OwnerAccum] = {}
        self.bottom = 0

    @staticmethod
    def _collect_sheet(doc: HtmlDocument) -> list[_Rule]:
        css_parts: list[str] = []

        def rec(nodes: list[Node]) -> None:
            for node in nodes:
                if isinstance(node, Element):
                    if node.name == "style":
                        css_parts.append(
                            "".join(c.value for c in node.children if isinstance(c, Text))
                        )
                    else:
                        rec(node.children)

        rec(doc.children)
        return parse_stylesheet("\n".join(css_parts))

    # -- style helpers

    def _decls(self, el: Element) -> dict[str, str]:
        return resolved_style(el, self.sheet)

    def _display(self, el: Element, decls: dict[str, str]) -> str:
        display = (decls.get("display") or "").strip().lower()
        if display in ("none", "block", "flex", "inline", "inline-block"):
            if display == "inline" and self._has_block_child(el):
                return "block"
            return display
        if el.name in SKIP_TAGS:
            return "none"
        if el.name in INLINE_BLOCK_TAGS:
            return "inline-block"
        if el.name in BLOCK_TAGS:
            return "block"
        if self._has_block_child(el):
            return "block"
        return "inline"

    def _has_block_child(self, el: Element) -> bool:
        for child in el.children:
            if isinstance(child, Element):
                decls = self._decls(child)
                display = (decls.get("display") or "").strip().lower()
                if display in ("block", "flex"):
                    return True
                if display in ("inline", "inline-block", "none"):
                    continue
                if child.name in BLOCK_TAGS:
                    return True
        return False

    # -- inherited context: (font_size, bold, color, align)

    def _text_ctx(
        self, el: Element, decls: dict[str, str], inh: tuple[int, bool, RGB, str]
    ) -> tuple[int, bool, RGB, str]:
        size, bold, color, align = inh
        if el.name in _HEADING_SIZE:
            size = _HEADING_SIZE[el.name]
        fs = _px(decls.get("font-size"), size, size)
        if fs:
            size = max(1, fs)
        weight = (decls.get("font-weight") or "").strip().lower()
        if el.name in BOLD_TAGS:
            bold = True
        if weight:
            if weight in ("bold", "bolder") or weight.isdigit() and int(weight) >= 600:
                bold = True
            elif weight in ("normal", "lighter") or weight.isdigit():
                bold = False
        fg = parse_color(decls.get("color"))
        if el.name == "a" and "color" not in decls:
            fg = (0, 0, 238)
        if fg is not None:
            color = fg
        ta = (decls.get("text-align") or "").strip().lower()
        if ta in ("left", "center", "right"):
            align = ta
        return size, bold, color, align

    # -- painting

    def _fill(self, x: int, y: int, w: int, h: int, color: RGB) -> None:
        if w > 0 and h > 0:
            self.ops.append(("fill", x, y, w, h, color))
            self.bottom = max(self.bottom, y + h)

    def _frame(self, x: int, y: int, w: int, h: int, width: int, color: RGB) -> None:
        if w > 0 and h > 0 and width > 0:
            self.ops.append(("frame", x, y, w, h, width, color))
            self.bottom = max(self.bottom, y + h)

    def _word(self, x: int, y: int, word: _Word) -> None:
        self.ops.append(("word", x, y, word.text, word.size, word.bold, word.color))

    def _track_owner(self, word: _Word, x: int, y: int, w: int, h: int) -> None:
        acc = self.owners.get(word.owner)
        if acc is None:
            return
        acc.words.append(word.text)
        acc.min_x = min(acc.min_x, x)
        acc.min_y = min(acc.min_y, y)
        acc.max_x = max(acc.max_x, x + w)
        acc.max_y = max(acc.max_y, y + h)
        self.bottom = max(self.bottom, y + h)

    # -- inline flow

    def _gather_inline(
        self, nodes: list[Node], inh: tuple[int, bool, RGB, str], owner: Element
    ) -> list[object]:
        atoms: list[object] = []
        size, bold, color, _ = inh
        for node in nodes:
            if isinstance(node, Text):
                for piece in node.value.split():
                    atoms.append(_Word(piece, size, bold, color, id(owner)))
                self._ensure_owner(owner, color)
            elif isinstance(node, Element):
                decls = self._decls(node)
                display = self._display(node, decls)
                if display == "none":
                    continue
                ctx = self._text_ctx(node, decls, inh)
                if node.name == "br":
                    atoms.append("break")
                elif display == "inline-block" or node.name in INLINE_BLOCK_TAGS:
                    atoms.append(self._measure_atom(node, decls, ctx))
                else:
                    atoms.extend(self._gather_inline(node.children, ctx, node))
        return atoms

    def _ensure_owner(self, el: Element, color: RGB) -> None:
        if id(el) not in self.owners:
            self.owners[id(el)] = _OwnerAccum(el, color)

    def _measure_atom(
        self, el: Element, decls: dict[str, str], ctx: tuple[int, bool, RGB, str]
    ) -> _Box:
        size = ctx[0]
        if el.name == "img":
            w = _px(el.attrs.get("width"), size) or _px(decls.get("width"), size, self.viewport) or 100
            h = _px(el.attrs.get("height"), size) or _px(decls.get("height"), size) or 100
            return _Box(el, max(1, w), max(1, h))
        glyph_h, line_h = _line_metrics(size)
        if el.name == "button":
            label = _element_text(el)
            tw = sum(_word_width(w, size, ctx[1]) for w in label.split())
            tw += max(0, len(label.split()) - 1) * _word_width(" ", size, False)
            w = _px(decls.get("width"), size, self.viewport) or (tw + 22)
            h = _px(decls.get("height"), size) or (line_h + 10)
            return _Box(el, max(1, w), max(1, h))
        w = _px(decls.get("width"), size, self.viewport) or 150
        h = _px(decls.get("height"), size) or (line_h + 8)
        return _Box(el, max(1, w), max(1, h))

    def _layout_paragraph(
        self, atoms: list[object], x: int, y: int, width: int, align: str, base_size: int
    ) -> int:
        """Greedy line wrap; returns consumed height."""
        if not atoms:
            return 0
        width = max(width, 1)
        lines: list[list[tuple[int, object]]] = []
        current: list[tuple[int, object]] = []
        cursor = 0
        space = _word_width(" ", base_size, False)
        for atom in atoms:
            if atom == "break":
                lines.append(current)
                current, cursor = [], 0
                continue
            aw = atom.w if isinstance(atom, _Box) else _word_width(atom.text, atom.size, atom.bold)
            sep = space if current else 0
            if current and cursor + sep + aw > width:
                lines.append(current)
                current, cursor = [], 0
                sep = 0
            current.append((cursor + sep, atom))
            cursor += sep + aw
        if current:
            lines.append(current)

        _, default_line_h = _line_metrics(base_size)
        total = 0
        for line in lines:
            if not line:
                total += default_line_h
                continue
            line_h = default_line_h
            line_w = 0
            for offset, atom in line:
                if isinstance(atom, _Box):
                    line_h = max(line_h, atom.h)
                    line_w = offset + atom.w
                else:
                    line_h = max(line_h, _line_metrics(atom.size)[1])
                    line_w = offset + _word_width(atom.text, atom.size, atom.bold)
            shift = 0
            if align == "center":
                shift = max(0, (width - line_w) // 2)
            elif align == "right":
                shift = max(0, width - line_w)
            for offset, atom in line:
                ax = x + shift + offset
                if isinstance(atom, _Box):
                    self._paint_atom(atom, ax, y + total + line_h - atom.h)
                else:
                    glyph_h, _ = _line_metrics(atom.size)
                    ay = y + total + line_h - glyph_h
                    self._word(ax, ay, atom)
                    self._track_owner(
                        atom, ax, ay, _word_width(atom.text, atom.size, atom.bold), glyph_h
                    )
            total += line_h
        return total

    def _paint_atom(self, box: _Box, x: int, y: int) -> None:
        el = box.el
        decls = self._decls(el)
        if el.name == "img":
            bg = _extract_color(decls.get("background-color") or decls.get("background"))
            self._fill(x, y, box.w, box.h, bg or (204, 204, 204))
            self._frame(x, y, box.w, box.h, 1, (153, 153, 153))
            return
        bg = _extract_color(decls.get("background-color") or decls.get("background"))
        self._fill(x, y, box.w, box.h, bg or (239, 239, 239))
        self._frame(x, y, box.w, box.h, 1, (118, 118, 118))
        label = _element_text(el)
        if label:
            size, bold, color, _ = self._text_ctx(el, decls, (16, False, (0, 0, 0), "left"))
            words = label.split()
            tw = sum(_word_width(w, size, bold) for w in words)
            tw += max(0, len(words) - 1) * _word_width(" ", size, False)
            glyph_h, _ = _line_metrics(size)
            tx = x + max(0, (box.w - tw) // 2)
            ty = y + max(0, (box.h - glyph_h) // 2)
            self._ensure_owner(el, color)
            cursor = tx
            for w in words:
                word = _Word(w, size, bold, color, id(el))
                self._word(cursor, ty, word)
                ww = _word_width(w, size, bold)
                self._track_owner(word, cursor, ty, ww, glyph_h)
                cursor += ww + _word_width(" ", size, False)

    # -- block flow

    def _layout_element(
        self,
        el: Element,
        x: int,
        y: int,
        avail_w: int,
        inh: tuple[int, bool, RGB, str],
        forced_w: Optional[int] = None,
    ) -> tuple[int, int]:
        """Lay out one block-ish element with its top-left margin corner at (x, y).

        Returns (outer_width, outer_height) including margins.
        """
        decls = self._decls(el)
        display = self._display(el, decls)
        if display == "none":
            return (0, 0)
        ctx = self._text_ctx(el, decls, inh)
        size = ctx[0]

        margins = _box_sides(decls, "margin", size)
        paddings = _box_sides(decls, "padding", size)
        if el.name == "body" and "margin" not in decls and "margin-top" not in decls:
            margins = [8, 8, 8, 8]
        if el.name == "p" and "margin" not in decls:
            margins[0] = margins[0] or 16
            margins[2] = margins[2] or 16
        if el.name in _HEADING_MARGIN and "margin" not in decls:
            margins[0] = margins[0] or _HEADING_MARGIN[el.name]
            margins[2] = margins[2] or _HEADING_MARGIN[el.name]
        if el.name in ("ul", "ol") and "padding" not in decls and "padding-left" not in decls:
            paddings[3] = paddings[3] or 40

        border_w, border_color = _border(decls)
        mt, mr, mb, ml = margins
        pt, pr, pb, pl = paddings

        if forced_w is not None:
            box_w = max(1, forced_w - ml - mr)
        else:
            explicit = _px(decls.get("width"), size, avail_w)
            box_w = explicit if explicit else max(1, avail_w - ml - mr)
            if explicit and _margin_auto(decls):
                ml = max(0, (avail_w - explicit) // 2)
                mr = ml
        content_w = max(1, box_w - pl - pr - 2 * border_w)

        x0 = x + ml
        y0 = y + mt
        cx = x0 + border_w + pl
        cy = y0 + border_w + pt

        bg = _extract_color(decls.get("background-color") or decls.get("background"))
        bg_index = None
        if bg is not None or border_w:
            bg_index = len(self.ops)
            self.ops.append(None)  # placeholder, patched once height is known

        if display == "inline-block" or el.name in INLINE_BLOCK_TAGS:
            box = self._measure_atom(el, decls, ctx)
            if bg_index is not None:
                self.ops.pop(bg_index)
            self._paint_atom(box, x0, y0)
            return (box.w + ml + mr, box.h + mt + mb)

        flex = display == "flex"
        column = flex and (decls.get("flex-direction") or "row").strip().lower().startswith("column")
        gap = _px(decls.get("gap"), size) or 0

        content_h = 0
        if el.name == "hr":
            self._fill(cx, cy, content_w, 2, (136, 136, 136))
            content_h = 2
        elif flex and not column:
            content_h = self._layout_flex_row(el, cx, cy, content_w, gap, ctx)
        else:
            content_h = self._layout_stack(el, cx, cy, content_w, gap if flex else 0, ctx)

        explicit_h = _px(decls.get("height"), size)
        if explicit_h:
            content_h = explicit_h - pt - pb - 2 * border_w
            content_h = max(0, content_h)
        min_h = _px(decls.get("min-height"), size)
        if min_h:
            content_h = max(content_h, min_h - pt - pb - 2 * border_w)

        box_h = content_h + pt + pb + 2 * border_w
        if bg_index is not None:
            self.ops[bg_index] = ("fill", x0, y0, box_w, box_h, bg) if bg else ("nop",)
            self.bottom = max(self.bottom, y0 + box_h)
            if border_w:
                self._frame(x0, y0, box_w, box_h, border_w, border_color)
        return (box_w + ml + mr, box_h + mt + mb)

    def _flow_groups(self, el: Element) -> list[tuple[str, list[Node]]]:
        """Split children into alternating inline runs and block singletons."""
        groups: list[tuple[str, list[Node]]] = []
        run: list[Node] = []
        for child in el.children:
            if isinstance(child, Comment):
                continue
            if isinstance(child, Text):
                if child.value.strip():
                    run.append(child)
                continue
            decls = self._decls(child)
            display = self._display(child, decls)
            if display == "none":
                continue
            if display in ("block", "flex"):
                if run:
                    groups.append(("inline", run))
                    run = []
                groups.append(("block", [child]))
            else:
                run.append(child)
        if run:
            groups.append(("inline", run))
        return groups

    def _layout_stack(
        self, el: Element, x: int, y: int, width: int, gap: int, ctx: tuple[int, bool, RGB, str]
    ) -> int:
        cursor = 0
        first = True
        for kind, nodes in self._flow_groups(el):
            if not first and gap:
                cursor += gap
            first = False
            if kind == "inline":
                atoms = self._gather_inline_run(nodes, ctx, el)
                cursor += self._layout_paragraph(atoms, x, y + cursor, width, ctx[3], ctx[0])
            else:
                child = nodes[0]
                assert isinstance(child, Element)
                _, outer_h = self._layout_element(child, x, y + cursor, width, ctx)
                cursor += outer_h
        return cursor

    def _gather_inline_run(
        self, nodes: list[Node], ctx: tuple[int, bool, RGB, str], owner: Element
    ) -> list[object]:
        atoms: list[object] = []
        for node in nodes:
            if isinstance(node, Text):
                for piece in node.value.split():
                    atoms.append(_Word(piece, ctx[0], ctx[1], ctx[2], id(owner)))
                self._ensure_owner(owner, ctx[2])
            else:
                assert isinstance(node, Element)
                decls = self._decls(node)
                display = self._display(node, decls)
                node_ctx = self._text_ctx(node, decls, ctx)
                if node.name == "br":
                    atoms.append("break")
                elif display == "inline-block" or node.name in INLINE_BLOCK_TAGS:
                    atoms.append(self._measure_atom(node, decls, node_ctx))
                else:
                    atoms.extend(self._gather_inline(node.children, node_ctx, node))
        return atoms

    def _layout_flex_row(
        self, el: Element, x: int, y: int, width: int, gap: int, ctx: tuple[int, bool, RGB, str]
    ) -> int:
        items = [
            child
            for child in el.children
            if isinstance(child, Element)
            and self._display(child, self._decls(child)) != "none"
        ]
        if not items:
            return self._layout_stack(el, x, y, width, 0, ctx)

        # Fixed-width and intrinsic (img/button) items keep their size;
        # the rest share the remaining width equally.
        widths: list[Optional[int]] = []
        for child in items:
            decls = self._decls(child)
            size = self._text_ctx(child, decls, ctx)[0]
            explicit = _px(decls.get("width"), size, width)
            if explicit:
                margins = _box_sides(decls, "margin", size)
                widths.append(explicit + margins[1] + margins[3])
            elif child.name in ("img", "button", "input"):
                box = self._measure_atom(child, decls, self._text_ctx(child, decls, ctx))
                widths.append(box.w)
            else:
                widths.append(None)
        flexible = [i for i, w in enumerate(widths) if w is None]
        used = sum(w for w in widths if w is not None) + gap * (len(items) - 1)
        if flexible:
            share = max(1, (width - used) // len(flexible))
            for i in flexible:
                widths[i] = share

        cursor = x
        row_h = 0
        for child, w in zip(items, widths):
            assert w is not None
            _, outer_h = self._layout_element(child, cursor, y, w, ctx, forced_w=w)
            row_h = max(row_h, outer_h)
            cursor += w + gap
        return row_h

    # -- entry

    def run(self) -> LayoutResult:
        root = self.doc.root()
        body = next(
            (c for c in root.children if isinstance(c, Element) and c.name == "body"),
            root,
        )
        base_ctx = (16, False, (0, 0, 0), "left")
        page_bg = (255, 255, 255)
        for holder in (root, body):
            decls = self._decls(holder)
            bg = _extract_color(decls.get("background-color") or decls.get("background"))
            if bg is not None:
                page_bg = bg

        self._layout_element(body, 0, 0, self.viewport, base_ctx)
        height = max(self.bottom, 16)

        img = Image.new("RGB", (self.viewport, height), page_bg)
        draw = ImageDraw.Draw(img)
        for op in self.ops:
            if op is None or op[0] == "nop":
                continue
            if op[0] == "fill":
                _, x, y, w, h, color = op
                draw.rectangle([x, y, x + w - 1, y + h - 1], fill=color)
            elif op[0] == "frame":
                _, x, y, w, h, lw, color = op
                draw.rectangle([x, y, x + w - 1, y + h - 1], outline=color, width=lw)
            elif op[0] == "word":
                _, x, y, text, size, bold, color = op
                if bold:
                    draw.text((x, y), text, font=_font(size), fill=color,
                              stroke_width=1, stroke_fill=color)
                else:
                    draw.text((x, y), text, font=_font(size), fill=color)

        blocks = []
        for acc in self.owners.values():
            if not acc.words or acc.max_x <= acc.min_x:
                continue
            blocks.append(
                Block(
                    float(acc.min_x),
                    float(acc.min_y),
                    float(acc.max_x - acc.min_x),
                    float(acc.max_y - acc.min_y),
                    " ".join(acc.words),
                    acc.color,
                )
            )
        blocks.sort(key=lambda b: (b.y, b.x))
        return LayoutResult(self.viewport, height, np.asarray(img, dtype=np.uint8), blocks)


def _border(decls: dict[str, str]) -> tuple[int, RGB]:
    value = decls.get("border")
    if not value:
        return 0, (0, 0, 0)
    width = 1
    color: RGB = (0, 0, 0)
    for token in value.split():
        px = _px(token, 16)
        if px is not None and px >= 0:
            width = px
            continue
        parsed = parse_color(token)
        if parsed is not None:
            color = parsed
    return width, color


def _element_text(el: Element) -> str:
    parts: list[str] = []

    def rec(nodes: list[Node]) -> None:
        for node in nodes:
            if isinstance(node, Text):
                parts.append(node.value)
            elif isinstance(node, Element):
                rec(node.children)

    rec(el.children)
    return " ".join(" ".join(parts).split())


def render_layout(doc: HtmlDocument, viewport_width: int = DEFAULT_VIEWPORT_WIDTH) -> LayoutResult:
    """Render a document with the deterministic engine."""
    engine = _Engine(doc, viewport_width)

    # Word color tracking needs owner colors fixed before text flows; the
    # engine registers owners lazily during inline gathering.
    result = engine.run()
    return result
