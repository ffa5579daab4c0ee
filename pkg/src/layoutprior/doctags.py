"""DocTags vocabulary, parser and serializer.

A DocTags document is a flat sequence of elements::

    <text><loc_132><loc_56><loc_432><loc_71>Some words</text>

Each element is an open tag, an optional run of exactly four location tokens
(``x_min, y_min, x_max, y_max`` on a 0..500 grid), a body, and a mandatory
close tag. Bodies are plain text, except for list containers (child elements)
and ``<otsl>`` (text interleaved with table-cell tokens). A document may be
wrapped in a single ``<layout> ... </layout>`` block, which is how layout
priors are written into prompts.

The canonical text form separates top-level elements with a newline. The
parser tolerates any whitespace between elements; :func:`validate` rejects
anything that does not reproduce byte-for-byte.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum

from .errors import LayoutPriorError

LOC_MAX = 500
WRAPPER = "layout"
OTSL_TOKENS = ("fcel", "ecel", "lcel", "ucel", "nl")


class LayoutTag(str, Enum):
    # the first twelve are the core DocTags layout vocabulary
    PAGE_HEADER = "page_header"
    SECTION_HEADER = "section_header"
    UNORDERED_LIST = "unordered_list"
    ORDERED_LIST = "ordered_list"
    LIST_ITEM = "list_item"
    TEXT = "text"
    OTSL = "otsl"
    PICTURE = "picture"
    PAGE_BREAK = "page_break"
    FORMULA = "formula"
    CODE = "code"
    PAGE_FOOTER = "page_footer"
    # extension set, covers every detector class
    CAPTION = "caption"
    FOOTNOTE = "footnote"
    TITLE = "title"
    DOCUMENT_INDEX = "document_index"
    CHECKBOX_SELECTED = "checkbox_selected"
    CHECKBOX_UNSELECTED = "checkbox_unselected"
    FORM = "form"
    KEY_VALUE_REGION = "key_value_region"

    def __str__(self):
        return self.value


class TokenClass(str, Enum):
    LAYOUT_TAG = "layout_tag"
    LOC = "loc"
    CONTENT = "content"
    CONTROL = "control"

    def __str__(self):
        return self.value


CONTAINER_TAGS = frozenset({LayoutTag.UNORDERED_LIST, LayoutTag.ORDERED_LIST})
_TAG_NAMES = {t.value: t for t in LayoutTag}
_CONTROL_NAMES = frozenset((WRAPPER,) + OTSL_TOKENS)

MARKUP_RE = re.compile(r"<(/?)([a-z][a-z0-9_]*)>")
_LOC_RE = re.compile(r"loc_(0|[1-9][0-9]{0,2})")
MAX_DEPTH = 64


# --------------------------------------------------------------------------
# errors


class DocTagsError(LayoutPriorError, ValueError):
    """Malformed DocTags input. ``offset`` is a UTF-8 byte offset."""

    def __init__(self, message, offset=None):
        super().__init__(message if offset is None else f"{message} at byte {offset}")
        self.offset = offset


class UnknownTag(DocTagsError):
    def __init__(self, name, offset=None):
        super().__init__(f"unknown tag <{name}>", offset)
        self.name = name


class MalformedLoc(DocTagsError):
    def __init__(self, text, offset=None):
        super().__init__(f"malformed location run {text!r}", offset)
        self.text = text


class LocOutOfRange(DocTagsError):
    def __init__(self, value, offset=None):
        super().__init__(f"location {value} outside 0..{LOC_MAX}", offset)
        self.value = value


class UnbalancedTag(DocTagsError):
    def __init__(self, name, offset=None):
        super().__init__(f"unbalanced tag <{name}>", offset)
        self.name = name


class MisplacedTag(DocTagsError):
    def __init__(self, name, offset=None):
        super().__init__(f"tag <{name}> not allowed here", offset)
        self.name = name


class UnexpectedText(DocTagsError):
    def __init__(self, text, offset=None):
        super().__init__(f"text outside an element: {text[:20]!r}", offset)
        self.text = text


class InvalidBox(DocTagsError):
    pass


class MalformedOtsl(DocTagsError):
    pass


class InvalidEncoding(DocTagsError):
    pass


class NonCanonical(DocTagsError):
    pass


# --------------------------------------------------------------------------
# data types


def _check_locs(locs):
    if len(locs) != 4:
        raise ValueError(f"expected 4 location tokens, got {len(locs)}")
    for v in locs:
        if not isinstance(v, int) or isinstance(v, bool) or not 0 <= v <= LOC_MAX:
            raise ValueError(f"location {v!r} outside 0..{LOC_MAX}")
    if locs[0] > locs[2] or locs[1] > locs[3]:
        raise ValueError(f"inverted box {locs}")


@dataclass(frozen=True, slots=True)
class DocElement:
    tag: LayoutTag
    locs: tuple[int, int, int, int] | None = None
    content: str = ""
    children: tuple[DocElement, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "tag", LayoutTag(self.tag))
        if self.locs is not None:
            object.__setattr__(self, "locs", tuple(self.locs))
            _check_locs(self.locs)
        object.__setattr__(self, "children", tuple(self.children))
        if self.children:
            if self.tag not in CONTAINER_TAGS:
                raise ValueError(f"<{self.tag}> cannot hold child elements")
            if self.content:
                raise ValueError("an element holds either content or children, not both")
        if self.tag is LayoutTag.OTSL:
            parse_otsl(self.content)
        elif MARKUP_RE.search(self.content):
            raise ValueError(f"content of <{self.tag}> contains markup")


@dataclass(frozen=True, slots=True)
class DocTagsDoc:
    elements: tuple[DocElement, ...] = ()
    wrapper: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "elements", tuple(self.elements))
        if self.wrapper not in (None, WRAPPER):
            raise ValueError(f"unsupported wrapper {self.wrapper!r}")

    @property
    def raw_token_count(self) -> int:
        return len(tokenize(serialize(self)))

    def iter_elements(self):
        """Preorder walk over all elements, children included."""
        stack = list(reversed(self.elements))
        while stack:
            el = stack.pop()
            yield el
            stack.extend(reversed(el.children))


@dataclass(frozen=True, slots=True)
class OtslCell:
    row: int
    col: int
    text: str
    filled: bool
    rowspan: int = 1
    colspan: int = 1


# --------------------------------------------------------------------------
# lexing


def _byte_offset(text, index):
    return len(text[:index].encode("utf-8", "surrogatepass"))


@dataclass(slots=True)
class _Tok:
    start: int
    text: str
    name: str | None = None  # None for text runs
    closing: bool = False
    loc: int | None = None


def _lex(text):
    toks = []
    pos = 0
    for m in MARKUP_RE.finditer(text):
        if m.start() > pos:
            toks.append(_Tok(pos, text[pos : m.start()]))
        closing, name = m.group(1) == "/", m.group(2)
        tok = _Tok(m.start(), m.group(0), name, closing)
        if name.startswith("loc_"):
            off = _byte_offset(text, m.start())
            lm = _LOC_RE.fullmatch(name)
            digits = name[4:]
            if closing:
                raise MalformedLoc(m.group(0), off)
            if lm is None:
                if digits.isdigit() and digits.isascii() and not (len(digits) > 1 and digits[0] == "0"):
                    raise LocOutOfRange(int(digits) if len(digits) <= 100 else digits, off)
                raise MalformedLoc(m.group(0), off)
            value = int(digits)
            if value > LOC_MAX:
                raise LocOutOfRange(value, off)
            tok.loc = value
        elif name not in _TAG_NAMES and name not in _CONTROL_NAMES:
            raise UnknownTag(name, _byte_offset(text, m.start()))
        toks.append(tok)
        pos = m.end()
    if pos < len(text):
        toks.append(_Tok(pos, text[pos:]))
    return toks


# --------------------------------------------------------------------------
# parsing


class _Parser:
    def __init__(self, text):
        self.text = text
        self.toks = _lex(text)
        self.i = 0
        self.depth = 0

    def off(self, tok_or_index):
        idx = tok_or_index.start if isinstance(tok_or_index, _Tok) else tok_or_index
        return _byte_offset(self.text, idx)

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else None

    def next(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def document(self):
        self._skip_space()
        tok = self.peek()
        wrapper = None
        if tok is not None and tok.name == WRAPPER and not tok.closing:
            self.next()
            wrapper = WRAPPER
            elements = self._elements(stop=tok)
            self._skip_space()
        else:
            elements = self._elements(stop=None)
        tok = self.peek()
        if tok is not None:
            if tok.name is None:
                raise UnexpectedText(tok.text, self.off(tok))
            raise MisplacedTag(tok.name, self.off(tok))
        return DocTagsDoc(tuple(elements), wrapper)

    def _skip_space(self):
        while (tok := self.peek()) is not None and tok.name is None:
            if tok.text.strip():
                raise UnexpectedText(tok.text, self.off(tok))
            self.i += 1

    def _elements(self, stop):
        """Elements up to the close tag matching ``stop`` (or EOF when None)."""
        out = []
        while True:
            self._skip_space()
            tok = self.peek()
            if tok is None:
                if stop is not None:
                    raise UnbalancedTag(stop.name, self.off(stop))
                return out
            if tok.closing:
                if stop is not None and tok.name == stop.name:
                    self.next()
                    return out
                raise UnbalancedTag(tok.name, self.off(tok))
            if tok.name in _TAG_NAMES:
                out.append(self._element())
            else:
                raise MisplacedTag(tok.name, self.off(tok))

    def _element(self):
        open_tok = self.next()
        tag = _TAG_NAMES[open_tok.name]
        if self.depth >= MAX_DEPTH:
            raise DocTagsError(f"elements nested deeper than {MAX_DEPTH}", self.off(open_tok))
        locs = []
        while (tok := self.peek()) is not None and tok.loc is not None:
            locs.append(self.next())
        if len(locs) not in (0, 4):
            raise MalformedLoc("".join(t.text for t in locs), self.off(locs[0]))
        box = tuple(t.loc for t in locs) if locs else None
        if box is not None and (box[0] > box[2] or box[1] > box[3]):
            raise InvalidBox(f"inverted box {box}", self.off(locs[0]))

        if tag in CONTAINER_TAGS:
            self.depth += 1
            content, children = self._container_body(open_tok)
            self.depth -= 1
        else:
            content, children = self._text_body(open_tok, tag), ()
        try:
            return DocElement(tag, box, content, children)
        except MalformedOtsl as exc:
            raise MalformedOtsl(str(exc), self.off(open_tok)) from None

    def _text_body(self, open_tok, tag):
        parts = []
        while True:
            tok = self.peek()
            if tok is None:
                raise UnbalancedTag(open_tok.name, self.off(open_tok))
            if tok.name is None:
                parts.append(self.next().text)
                continue
            if tok.closing and tok.name == open_tok.name:
                self.next()
                return "".join(parts)
            if tok.closing:
                raise UnbalancedTag(tok.name, self.off(tok))
            if tag is LayoutTag.OTSL and tok.name in OTSL_TOKENS:
                parts.append(self.next().text)
                continue
            if tok.loc is not None:
                raise MalformedLoc(tok.text, self.off(tok))
            raise MisplacedTag(tok.name, self.off(tok))

    def _container_body(self, open_tok):
        parts = []
        children = []
        while True:
            tok = self.peek()
            if tok is None:
                raise UnbalancedTag(open_tok.name, self.off(open_tok))
            if tok.name is None:
                parts.append(self.next())
                continue
            if tok.closing:
                if tok.name != open_tok.name:
                    raise UnbalancedTag(tok.name, self.off(tok))
                self.next()
                break
            if tok.name in _TAG_NAMES:
                children.append(self._element())
                continue
            if tok.loc is not None:
                raise MalformedLoc(tok.text, self.off(tok))
            raise MisplacedTag(tok.name, self.off(tok))
        if children:
            for t in parts:
                if t.text.strip():
                    raise UnexpectedText(t.text, self.off(t))
            return "", tuple(children)
        return "".join(t.text for t in parts), ()


def parse(text: str | bytes) -> DocTagsDoc:
    """Parse DocTags markup into a :class:`DocTagsDoc`.

    Raises a :class:`DocTagsError` subclass on any malformed input; nothing is
    silently skipped.
    """
    if isinstance(text, (bytes, bytearray, memoryview)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise InvalidEncoding(f"invalid UTF-8: {exc.reason}", exc.start) from None
    return _Parser(text).document()


# --------------------------------------------------------------------------
# serialization


def serialize_element(el: DocElement) -> str:
    parts = [f"<{el.tag.value}>"]
    if el.locs is not None:
        parts.extend(f"<loc_{v}>" for v in el.locs)
    if el.children:
        parts.extend(serialize_element(c) for c in el.children)
    else:
        parts.append(el.content)
    parts.append(f"</{el.tag.value}>")
    return "".join(parts)


def serialize(doc: DocTagsDoc) -> str:
    body = "\n".join(serialize_element(e) for e in doc.elements)
    if doc.wrapper is None:
        return body
    if not doc.elements:
        return f"<{doc.wrapper}>\n</{doc.wrapper}>"
    return f"<{doc.wrapper}>\n{body}\n</{doc.wrapper}>"


def validate(text: str | bytes) -> DocTagsDoc:
    """Parse and require a byte-identical round trip."""
    doc = parse(text)
    if isinstance(text, (bytes, bytearray, memoryview)):
        text = bytes(text).decode("utf-8")
    out = serialize(doc)
    if out != text:
        i = next((k for k, (a, b) in enumerate(zip(out, text)) if a != b), min(len(out), len(text)))
        raise NonCanonical("input is not in canonical form", _byte_offset(text, i))
    return doc


# --------------------------------------------------------------------------
# tokens


def tokenize(text: str) -> list[str]:
    """Split markup into vocabulary tokens and whitespace-delimited words."""
    out = []
    pos = 0
    for m in MARKUP_RE.finditer(text):
        out.extend(text[pos : m.start()].split())
        out.append(m.group(0))
        pos = m.end()
    out.extend(text[pos:].split())
    return out


def classify_token(token: str) -> TokenClass:
    m = MARKUP_RE.fullmatch(token)
    if m is None:
        return TokenClass.CONTENT
    name = m.group(2)
    if m.group(1) == "" and _LOC_RE.fullmatch(name) and int(name[4:]) <= LOC_MAX:
        return TokenClass.LOC
    if name in _TAG_NAMES:
        return TokenClass.LAYOUT_TAG
    if name in _CONTROL_NAMES:
        return TokenClass.CONTROL
    return TokenClass.CONTENT


def count_tokens(fragment: str) -> int:
    """Markup tokens count 1 each; content counts whitespace-delimited words."""
    parse(fragment)
    return len(tokenize(fragment))


# --------------------------------------------------------------------------
# OTSL tables


def parse_otsl(content: str) -> tuple[tuple[OtslCell, ...], ...]:
    """Resolve an ``<otsl>`` body into rows of anchor cells with spans.

    Cell tokens are row-major: ``<fcel>`` (filled, followed by its text),
    ``<ecel>`` (empty), ``<lcel>`` (merge into the cell on the left),
    ``<ucel>`` (merge into the cell above); ``<nl>`` ends a row.
    """
    grid = [[]]
    pos = 0
    last = None
    for m in MARKUP_RE.finditer(content):
        _otsl_text(grid, last, content[pos : m.start()])
        name = m.group(2)
        if m.group(1) or name not in OTSL_TOKENS:
            raise MalformedOtsl(f"unexpected {m.group(0)} in table body")
        if name == "nl":
            grid.append([])
            last = None
        else:
            grid[-1].append([name, ""])
            last = name
        pos = m.end()
    _otsl_text(grid, last, content[pos:])
    if not grid[-1]:
        grid.pop()

    anchor = {}
    extent = {}
    for r, row in enumerate(grid):
        for c, (kind, _) in enumerate(row):
            if kind in ("fcel", "ecel"):
                anchor[r, c] = (r, c)
                extent[r, c] = [r, c]
                continue
            if kind == "lcel":
                if c == 0:
                    raise MalformedOtsl(f"<lcel> in first column of row {r}")
                a = anchor[r, c - 1]
            else:
                if r == 0 or c >= len(grid[r - 1]):
                    raise MalformedOtsl(f"<ucel> at ({r}, {c}) has no cell above")
                a = anchor[r - 1, c]
            anchor[r, c] = a
            ext = extent[a]
            ext[0] = max(ext[0], r)
            ext[1] = max(ext[1], c)

    rows = []
    for r, row in enumerate(grid):
        cells = []
        for c, (kind, text) in enumerate(row):
            if kind in ("fcel", "ecel"):
                er, ec = extent[r, c]
                cells.append(OtslCell(r, c, text.strip(), kind == "fcel", er - r + 1, ec - c + 1))
        rows.append(tuple(cells))
    return tuple(rows)


def _otsl_text(grid, last, text):
    if not text:
        return
    if last == "fcel":
        grid[-1][-1][1] += text
    elif text.strip():
        raise MalformedOtsl(f"cell text {text[:20]!r} not preceded by <fcel>")
