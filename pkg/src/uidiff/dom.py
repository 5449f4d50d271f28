"""Error-tolerant HTML document model.

Parses dirty HTML into a plain node tree, scrubs it down to a
self-contained renderable unit, and serializes it back to a canonical
text form.  The canonical form is a fixpoint: parsing a serialization
and serializing again reproduces the same bytes, which is what makes
byte-span edit records (see :mod:`uidiff.perturb`) safe to splice and
invert.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from html.parser import HTMLParser
from typing import Iterator, Optional, Union

__all__ = [
    "Comment",
    "Element",
    "HardParseFailure",
    "HtmlDocument",
    "SanitizeReport",
    "Text",
    "attr_value_span",
    "element_style",
    "is_complete",
    "node_at",
    "normalize",
    "parse",
    "parse_style",
    "sanitize",
    "serialize",
    "serialize_with_spans",
    "set_element_style",
    "style_to_text",
    "substitute_placeholders",
    "text_content",
    "walk",
]

PLACEHOLDER_SRC = "[Placeholder]"
DEFAULT_PLACEHOLDER_SIZE = 100

VOID_ELEMENTS = frozenset(
    "area base br col embed hr img input link meta param source track wbr".split()
)

# Raw-text elements whose children are emitted without entity escaping.
RAWTEXT_ELEMENTS = frozenset(("style", "script"))

# Containers where whitespace-only text between children never renders.
STRUCTURAL_ELEMENTS = frozenset(
    "html head body div section article main header footer nav aside "
    "ul ol table thead tbody tfoot tr form figure dl select colgroup".split()
)

_EXTERNAL_URL = re.compile(r"^\s*(?:https?:)?//", re.IGNORECASE)
_CSS_IMPORT = re.compile(r"@import\b[^;]*;?", re.IGNORECASE)
_CSS_URL = re.compile(r"url\(\s*['\"]?\s*((?:https?:)?//[^'\")]*)['\"]?\s*\)", re.IGNORECASE)
_OPEN_HTML = re.compile(r"<html(?:\s[^>]*)?>", re.IGNORECASE)
_CLOSE_HTML = re.compile(r"</html\s*>", re.IGNORECASE)


class HardParseFailure(ValueError):
    """No root element could be recovered from the input text."""


@dataclass
class Text:
    value: str


@dataclass
class Comment:
    value: str


@dataclass
class Element:
    name: str
    attrs: dict[str, Optional[str]] = field(default_factory=dict)
    children: list["Node"] = field(default_factory=list)


Node = Union[Element, Text, Comment]


@dataclass
class HtmlDocument:
    """A parsed HTML document plus the text it came from.

    ``source`` is the exact input handed to :func:`parse` (or the
    canonical serialization for documents produced by a transform);
    ``repairs`` counts recovery actions the parser had to take.
    """

    children: list[Node]
    source: str = ""
    provenance: str = ""
    doctype: Optional[str] = None
    repairs: int = 0

    def root(self) -> Element:
        for child in self.children:
            if isinstance(child, Element):
                return child
        raise HardParseFailure("document has no element root")


@dataclass
class SanitizeReport:
    removed_scripts: int = 0
    removed_external_refs: int = 0
    repaired_tags: int = 0
    rejected: bool = False
    reason: str = ""


# ---------------------------------------------------------------------------
# parsing


class _TreeBuilder(HTMLParser):
    """Tolerant tree construction on top of the stdlib tokenizer.

    Recovery rules: void elements never open a scope, mismatched end
    tags pop up to the matching ancestor (or are dropped), and anything
    still open at EOF is closed implicitly.  Every recovery action bumps
    ``repairs`` so the sanitize report can surface it.
    """

    def __init__(self) -> None:
        super().__init__(convert_charrefs=True)
        self.top: list[Node] = []
        self.stack: list[Element] = []
        self.doctype: Optional[str] = None
        self.repairs = 0

    def _append(self, node: Node) -> None:
        target = self.stack[-1].children if self.stack else self.top
        if isinstance(node, Text) and target and isinstance(target[-1], Text):
            target[-1].value += node.value
        else:
            target.append(node)

    def handle_starttag(self, tag: str, attrs: list[tuple[str, Optional[str]]]) -> None:
        attr_map: dict[str, Optional[str]] = {}
        for name, value in attrs:
            if name in attr_map:
                self.repairs += 1  # duplicate attribute, keep first
                continue
            attr_map[name] = value
        el = Element(tag, attr_map)
        self._append(el)
        if tag not in VOID_ELEMENTS:
            self.stack.append(el)

    def handle_startendtag(self, tag: str, attrs: list[tuple[str, Optional[str]]]) -> None:
        # "<div/>" in HTML does not actually self-close non-void elements,
        # but treating it as empty keeps the tree local and renderable.
        attr_map: dict[str, Optional[str]] = {}
        for name, value in attrs:
            attr_map.setdefault(name, value)
        self._append(Element(tag, attr_map))
        if tag not in VOID_ELEMENTS:
            self.repairs += 1

    def handle_endtag(self, tag: str) -> None:
        if tag in VOID_ELEMENTS:
            return
        names = [el.name for el in self.stack]
        if tag not in names:
            self.repairs += 1  # stray end tag
            return
        while self.stack:
            closed = self.stack.pop()
            if closed.name == tag:
                break
            self.repairs += 1  # implicitly closed intermediate element

    def handle_data(self, data: str) -> None:
        if data:
            self._append(Text(data))

    def handle_comment(self, data: str) -> None:
        self._append(Comment(data))

    def handle_decl(self, decl: str) -> None:
        if self.doctype is None and decl.lower().startswith("doctype"):
            self.doctype = decl
        else:
            self.repairs += 1

    def handle_pi(self, data: str) -> None:
        # Processing instructions have no HTML meaning; keep the bytes
        # visible as a comment rather than dropping them.
        self._append(Comment("?" + data))
        self.repairs += 1

    def unknown_decl(self, data: str) -> None:
        self._append(Comment("[" + data + "]"))
        self.repairs += 1

    def close(self) -> None:
        super().close()
        self.repairs += len(self.stack)
        self.stack.clear()


def parse(text: str, provenance: str = "") -> HtmlDocument:
    """Parse UTF-8 HTML text, recovering from malformed markup.

    Raises :class:`HardParseFailure` when the input contains no element
    at all (nothing can be rendered from it).
    """
    if not text:
        raise HardParseFailure("empty input")
    builder = _TreeBuilder()
    builder.feed(text)
    builder.close()
    doc = HtmlDocument(
        children=builder.top,
        source=text,
        provenance=provenance,
        doctype=builder.doctype,
        repairs=builder.repairs,
    )
    if not any(True for _ in _iter_elements(doc.children)):
        raise HardParseFailure("no root element recovered")
    return doc


def _iter_elements(nodes: list[Node]) -> Iterator[Element]:
    for node in nodes:
        if isinstance(node, Element):
            yield node
            yield from _iter_elements(node.children)


def walk(doc: HtmlDocument) -> Iterator[tuple[tuple[int, ...], Node]]:
    """Yield (root-to-node index path, node) in document order."""

    def rec(nodes: list[Node], prefix: tuple[int, ...]) -> Iterator[tuple[tuple[int, ...], Node]]:
        for i, node in enumerate(nodes):
            path = prefix + (i,)
            yield path, node
            if isinstance(node, Element):
                yield from rec(node.children, path)

    yield from rec(doc.children, ())


def node_at(doc: HtmlDocument, path: tuple[int, ...]) -> Node:
    nodes = doc.children
    node: Node
    node = nodes[path[0]]
    for idx in path[1:]:
        assert isinstance(node, Element)
        node = node.children[idx]
    return node


# ---------------------------------------------------------------------------
# serialization

def _escape_text(value: str) -> str:
    return value.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _escape_attr(value: str) -> str:
    return _escape_text(value).replace('"', "&quot;")


def _open_tag(el: Element) -> str:
    parts = ["<", el.name]
    for name, value in el.attrs.items():
        if value is None:
            parts.append(f" {name}")
        else:
            parts.append(f' {name}="{_escape_attr(value)}"')
    parts.append(">")
    return "".join(parts)


@dataclass
class NodeSpan:
    """Byte extent of one node inside a serialization.

    ``open_end`` is the end of the element's start tag (equal to ``end``
    for text and comment nodes).
    """

    start: int
    end: int
    open_end: int


def serialize(doc: HtmlDocument) -> str:
    text, _ = serialize_with_spans(doc)
    return text


def serialize_with_spans(doc: HtmlDocument) -> tuple[str, dict[tuple[int, ...], NodeSpan]]:
    """Serialize and record the byte span of every node.

    Offsets index into the returned string; they are what
    :class:`uidiff.perturb.EditRecord` byte spans refer to.
    """
    chunks: list[str] = []
    spans: dict[tuple[int, ...], NodeSpan] = {}
    pos = 0

    def emit(chunk: str) -> None:
        nonlocal pos
        chunks.append(chunk)
        pos += len(chunk)

    def rec(nodes: list[Node], prefix: tuple[int, ...], raw: bool) -> None:
        for i, node in enumerate(nodes):
            path = prefix + (i,)
            start = pos
            if isinstance(node, Text):
                emit(node.value if raw else _escape_text(node.value))
                spans[path] = NodeSpan(start, pos, pos)
            elif isinstance(node, Comment):
                emit(f"<!--{node.value}-->")
                spans[path] = NodeSpan(start, pos, pos)
            else:
                emit(_open_tag(node))
                open_end = pos
                if node.name not in VOID_ELEMENTS:
                    rec(node.children, path, raw or node.name in RAWTEXT_ELEMENTS)
                    emit(f"</{node.name}>")
                spans[path] = NodeSpan(start, pos, open_end)

    if doc.doctype is not None:
        emit(f"<!{doc.doctype}>")
    rec(doc.children, (), False)
    return "".join(chunks), spans


def attr_value_span(doc: HtmlDocument, path: tuple[int, ...], attr: str) -> tuple[int, int]:
    """Byte span of one attribute's escaped value inside the open tag."""
    el = node_at(doc, path)
    assert isinstance(el, Element)
    _, spans = serialize_with_spans(doc)
    offset = spans[path].start + len("<") + len(el.name)
    for name, value in el.attrs.items():
        if value is None:
            offset += len(f" {name}")
            continue
        escaped = _escape_attr(value)
        if name == attr:
            start = offset + len(f' {name}="')
            return start, start + len(escaped)
        offset += len(f' {name}="{escaped}"')
    raise KeyError(f"element has no attribute {attr!r}")


# ---------------------------------------------------------------------------
# inline style handling

def parse_style(style: Optional[str]) -> dict[str, str]:
    """Parse an inline style string into an ordered property map.

    Splits on ``;`` then the first ``:``; declarations without a colon
    are dropped.  Property names are lowercased, values kept verbatim
    modulo surrounding whitespace.
    """
    result: dict[str, str] = {}
    if not style:
        return result
    for chunk in style.split(";"):
        if ":" not in chunk:
            continue
        name, _, value = chunk.partition(":")
        name = name.strip().lower()
        value = value.strip()
        if name and value:
            result[name] = value
    return result


def style_to_text(style_map: dict[str, str]) -> str:
    return "; ".join(f"{k}:{v}" for k, v in style_map.items())


def element_style(el: Element) -> dict[str, str]:
    return parse_style(el.attrs.get("style"))


def set_element_style(el: Element, style_map: dict[str, str]) -> None:
    if style_map:
        el.attrs["style"] = style_to_text(style_map)
    else:
        el.attrs.pop("style", None)


# ---------------------------------------------------------------------------
# predicates

def is_complete(text: str) -> bool:
    """True iff the text has both an opening and a closing html tag."""
    return bool(_OPEN_HTML.search(text)) and bool(_CLOSE_HTML.search(text))


# ---------------------------------------------------------------------------
# transforms

def _copy_node(node: Node) -> Node:
    if isinstance(node, Text):
        return Text(node.value)
    if isinstance(node, Comment):
        return Comment(node.value)
    return Element(node.name, dict(node.attrs), [_copy_node(c) for c in node.children])


def _copy_children(nodes: list[Node]) -> list[Node]:
    return [_copy_node(n) for n in nodes]


def _scrub_css_text(css: str) -> tuple[str, int]:
    """Strip @import statements and external url() targets from CSS."""
    removed = 0

    def count(match: re.Match) -> str:
        nonlocal removed
        removed += 1
        return ""

    css = _CSS_IMPORT.sub(count, css)

    def neutralize(match: re.Match) -> str:
        nonlocal removed
        removed += 1
        return "none"

    css = _CSS_URL.sub(neutralize, css)
    return css, removed


def sanitize(doc: HtmlDocument) -> tuple[HtmlDocument, SanitizeReport]:
    """Remove scripts and external resource references.

    The document is made renderable in isolation where possible: missing
    html/body structure is synthesized rather than rejected, and only a
    document with no visible content left is marked rejected.
    """
    report = SanitizeReport(repaired_tags=doc.repairs)

    def clean(nodes: list[Node]) -> list[Node]:
        kept: list[Node] = []
        for node in nodes:
            if isinstance(node, Element):
                if node.name == "script":
                    report.removed_scripts += 1
                    continue
                if node.name in ("link", "base"):
                    report.removed_external_refs += 1
                    continue
                if node.name in ("iframe", "embed", "object", "audio", "video"):
                    report.removed_external_refs += 1
                    continue
                attrs = {}
                for name, value in node.attrs.items():
                    if name.startswith("on"):
                        report.removed_scripts += 1
                        continue
                    if name == "style" and value:
                        value, n = _scrub_css_text(value)
                        report.removed_external_refs += n
                    attrs[name] = value
                children = clean(node.children)
                if node.name == "style":
                    merged = "".join(c.value for c in children if isinstance(c, Text))
                    merged, n = _scrub_css_text(merged)
                    report.removed_external_refs += n
                    # A stray close tag inside CSS would truncate the
                    # raw-text scope on reparse; drop it.
                    lowered = merged.lower()
                    if "</style" in lowered:
                        merged = re.sub(r"</style", "", merged, flags=re.IGNORECASE)
                        report.repaired_tags += 1
                    children = [Text(merged)] if merged else []
                kept.append(Element(node.name, attrs, children))
            else:
                kept.append(_copy_node(node))
        return kept

    children = clean(doc.children)

    html_el = next((n for n in children if isinstance(n, Element) and n.name == "html"), None)
    if html_el is None:
        body = Element("body", {}, children)
        html_el = Element("html", {}, [body])
        children = [html_el]
        report.repaired_tags += 1
    elif not any(isinstance(c, Element) and c.name == "body" for c in html_el.children):
        head = [c for c in html_el.children if isinstance(c, Element) and c.name == "head"]
        rest = [c for c in html_el.children if c not in head]
        html_el.children = head + [Element("body", {}, rest)]
        report.repaired_tags += 1

    out = HtmlDocument(
        children=children,
        provenance=doc.provenance,
        doctype=doc.doctype,
        repairs=doc.repairs,
    )
    out.source = serialize(out)

    if not _has_visible_content(out):
        report.rejected = True
        report.reason = "no renderable content after sanitization"
    return out, report


def _has_visible_content(doc: HtmlDocument) -> bool:
    if text_content(doc).strip():
        return True
    for _, node in walk(doc):
        if isinstance(node, Element) and node.name in ("img", "button", "input", "hr"):
            return True
    return False


def substitute_placeholders(doc: HtmlDocument) -> HtmlDocument:
    """Point every image at the local placeholder token with fixed dimensions."""
    out = HtmlDocument(
        children=_copy_children(doc.children),
        provenance=doc.provenance,
        doctype=doc.doctype,
        repairs=doc.repairs,
    )
    for _, node in walk(out):
        if not isinstance(node, Element) or node.name != "img":
            continue
        node.attrs["src"] = PLACEHOLDER_SRC
        node.attrs.pop("srcset", None)
        style = element_style(node)
        for dim in ("width", "height"):
            if _positive_int(node.attrs.get(dim)) is not None:
                continue
            from_style = _px_value(style.get(dim))
            node.attrs[dim] = str(from_style if from_style else DEFAULT_PLACEHOLDER_SIZE)
    out.source = serialize(out)
    return out


def _positive_int(value: Optional[str]) -> Optional[int]:
    if value is None:
        return None
    try:
        n = int(value.strip())
    except ValueError:
        return None
    return n if n > 0 else None


def _px_value(value: Optional[str]) -> Optional[int]:
    if not value:
        return None
    match = re.fullmatch(r"\s*(\d+(?:\.\d+)?)\s*px\s*", value)
    if not match:
        return None
    n = int(float(match.group(1)))
    return n or None


def normalize(doc: HtmlDocument) -> HtmlDocument:
    """Canonicalize attribute order, inline styles, and structural whitespace.

    Idempotent, and rendering-neutral: element count and visible text
    are unchanged.
    """
    def norm(nodes: list[Node], in_structural: bool) -> list[Node]:
        out: list[Node] = []
        for node in nodes:
            if isinstance(node, Text):
                if in_structural and not node.value.strip():
                    continue
                out.append(Text(node.value))
            elif isinstance(node, Comment):
                out.append(Comment(node.value))
            else:
                attrs = dict(sorted(node.attrs.items()))
                if attrs.get("style"):
                    style = parse_style(attrs["style"])
                    ordered = dict(sorted(style.items()))
                    if ordered:
                        attrs["style"] = style_to_text(ordered)
                    else:
                        del attrs["style"]
                children = norm(
                    node.children,
                    node.name in STRUCTURAL_ELEMENTS and node.name not in RAWTEXT_ELEMENTS,
                )
                out.append(Element(node.name, attrs, children))
        return out

    out_doc = HtmlDocument(
        children=norm(doc.children, True),
        provenance=doc.provenance,
        doctype=doc.doctype,
        repairs=doc.repairs,
    )
    out_doc.source = serialize(out_doc)
    return out_doc


def text_content(doc: HtmlDocument) -> str:
    """Visible text of the document (style/script content excluded)."""
    parts: list[str] = []

    def rec(nodes: list[Node]) -> None:
        for node in nodes:
            if isinstance(node, Text):
                parts.append(node.value)
            elif isinstance(node, Element) and node.name not in RAWTEXT_ELEMENTS:
                rec(node.children)

    rec(doc.children)
    return "".join(parts)
