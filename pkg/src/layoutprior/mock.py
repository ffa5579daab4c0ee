"""Deterministic stand-in for the vision-language decoder.

Given a ground-truth page and an optional layout prior, :func:`decode`
reproduces the two failure modes a layout prior is meant to prevent: regions
the decoder never resolves (omissions) and, when no prior is injected at all,
runaway repetition without EOS. Everything is keyed by ``(seed, page_id)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .doctags import DocElement, DocTagsDoc, LayoutTag, parse, serialize, serialize_element, tokenize
from .guard import DEFAULT_T_MAX, GenerationRecord
from .layout import BBox, Detection, PageDetections, greedy_match
from .prior import TAG_TO_CLASS, LayoutPrior
from .rng import SplitMix64

MATCH_IOU = 0.5
TAIL_TOKENS = 512


@dataclass(frozen=True, slots=True)
class PageFixture:
    page_id: str
    truth: DocTagsDoc
    domain: str = ""


@dataclass(frozen=True, slots=True)
class DegradeConfig:
    miss_rate_without_prior: float = 0.0
    loop_rate_without_prior: float = 0.0
    seed: int = 0
    loop_tokens: int = 2 * DEFAULT_T_MAX + 2000

    def __post_init__(self):
        for name in ("miss_rate_without_prior", "loop_rate_without_prior"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        if self.loop_tokens <= DEFAULT_T_MAX:
            raise ValueError("loop_tokens must exceed the default T_max")

    @classmethod
    def from_spec(cls, text: str, seed: int) -> DegradeConfig:
        """Parse ``miss=0.7,loop=0.1``."""
        kw = {}
        keys = {"miss": "miss_rate_without_prior", "loop": "loop_rate_without_prior"}
        for part in filter(None, (p.strip() for p in text.split(","))):
            key, sep, value = part.partition("=")
            if not sep or key.strip() not in keys:
                raise ValueError(f"bad degrade term {part!r}; expected miss=R or loop=R")
            kw[keys[key.strip()]] = float(value)
        return cls(seed=seed, **kw)


def decode(fixture: PageFixture, prior: LayoutPrior | None, cfg: DegradeConfig):
    """Return ``(predicted doc, generation record)``.

    Truth elements matched by a prior item (same tag, IoU >= 0.5) are emitted
    verbatim. Every other element is dropped with probability
    ``miss_rate_without_prior``. With no prior at all, the page loops with
    probability ``loop_rate_without_prior``.

    Draw order: one uniform for the loop gate, then one per top-level truth
    element whether or not it is matched, so raising the miss rate can only
    remove elements for a fixed seed.
    """
    rng = SplitMix64.for_page(cfg.seed, fixture.page_id)
    loops = rng.random() < cfg.loop_rate_without_prior and prior is None
    truth = fixture.truth.elements
    draws = [rng.random() for _ in truth]

    matched = set()
    if prior is not None and prior.items:
        refs = [(it.tag, BBox(*it.locs)) for it in prior.items]
        cands = [(el.tag, None if el.locs is None else BBox(*el.locs)) for el in truth]
        matched = set(greedy_match(cands, refs, MATCH_IOU))

    kept = tuple(el for k, el in enumerate(truth) if k in matched or draws[k] >= cfg.miss_rate_without_prior)
    doc = DocTagsDoc(kept)

    if loops:
        unit = tokenize(serialize_element(kept[-1])) if kept else ["<text>", "</text>"]
        tail = (unit * (TAIL_TOKENS // len(unit) + 1))[-TAIL_TOKENS:]
        rec = GenerationRecord(fixture.page_id, fixture.domain, cfg.loop_tokens, False, tuple(tail))
    else:
        tokens = tokenize(serialize(doc))
        rec = GenerationRecord(fixture.page_id, fixture.domain, len(tokens), True, tuple(tokens[-64:]))
    return doc, rec


def prior_from_truth(fixture: PageFixture) -> LayoutPrior:
    """An exact prior: one item per located top-level truth element."""
    return LayoutPrior.from_doc(fixture.page_id, fixture.truth)


def detections_from_truth(fixture: PageFixture, width: int = 500, height: int = 500, score: float = 0.99):
    """Detector output that reproduces the truth layout on a page of the given size."""
    dets = []
    for el in fixture.truth.elements:
        if el.locs is None or el.tag not in TAG_TO_CLASS:
            continue
        x0, y0, x1, y1 = el.locs
        box = BBox(x0 * width / 500, y0 * height / 500, x1 * width / 500, y1 * height / 500)
        dets.append(Detection(TAG_TO_CLASS[el.tag], score, box))
    return PageDetections(fixture.page_id, width, height, tuple(dets))


# --------------------------------------------------------------------------
# synthetic corpus

DOMAINS = ("energy", "finance_en", "finance_fr", "hr", "industrial", "pharma", "telecom")

_WORDS = (
    "revenue grew percent quarter market share operating margin cash flow capital "
    "employee policy leave benefit contract salary grid turbine voltage output plant "
    "solar storage demand forecast risk audit board report annual total net income "
    "cost unit price volume region segment growth decline target plan review safety "
    "compliance supplier order delivery asset liability equity dividend ratio index"
).split()

_TEXT_TAGS = (
    LayoutTag.TEXT,
    LayoutTag.TEXT,
    LayoutTag.TEXT,
    LayoutTag.SECTION_HEADER,
    LayoutTag.LIST_ITEM,
    LayoutTag.CAPTION,
    LayoutTag.FOOTNOTE,
    LayoutTag.FORMULA,
    LayoutTag.CODE,
)


def _words(rng, lo, hi):
    return " ".join(_WORDS[rng.below(len(_WORDS))] for _ in range(lo + rng.below(hi - lo + 1)))


def _table(rng):
    rows, cols = 2 + rng.below(3), 2 + rng.below(3)
    body = []
    for r in range(rows):
        for c in range(cols):
            u = rng.random()
            if c > 0 and u < 0.1:
                body.append("<lcel>")
            elif u < 0.2:
                body.append("<ecel>")
            else:
                body.append("<fcel>" + _words(rng, 1, 3))
        body.append("<nl>")
    return "".join(body)


def synth_page(page_id: str, seed: int, domain: str = "") -> PageFixture:
    """A single-column page of 4 to 14 non-overlapping regions."""
    rng = SplitMix64.for_page(seed, "synth:" + page_id)
    n = 4 + rng.below(11)
    y = 10 + rng.below(20)
    elements = []
    if rng.random() < 0.5:
        elements.append(DocElement(LayoutTag.PAGE_HEADER, (40, 2, 300, 8), _words(rng, 2, 5)))
    for _ in range(n):
        r = rng.random()
        if r < 0.12:
            tag, content, h = LayoutTag.OTSL, _table(rng), 30 + rng.below(60)
        elif r < 0.18:
            tag, content, h = LayoutTag.PICTURE, "", 40 + rng.below(80)
        else:
            tag = _TEXT_TAGS[rng.below(len(_TEXT_TAGS))]
            content = _words(rng, 2, 6) if tag is LayoutTag.SECTION_HEADER else _words(rng, 4, 40)
            h = 6 + rng.below(30)
        if y + h > 480:
            break
        x0 = 30 + rng.below(40)
        x1 = min(470, x0 + 150 + rng.below(280))
        elements.append(DocElement(tag, (x0, y, x1, y + h), content))
        y += h + 2 + rng.below(10)
    elements.append(DocElement(LayoutTag.PAGE_FOOTER, (40, 488, 200, 496), _words(rng, 1, 4)))
    return PageFixture(page_id, DocTagsDoc(tuple(elements)), domain)


def synth_corpus(n_pages: int, seed: int, domains=DOMAINS) -> list[PageFixture]:
    return [synth_page(f"page-{k:05d}", seed, domains[k % len(domains)]) for k in range(n_pages)]


# --------------------------------------------------------------------------
# files


def write_fixtures(fixtures, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for fx in sorted(fixtures, key=lambda f: f.page_id):
        (directory / f"{fx.page_id}.doctags").write_text(serialize(fx.truth), encoding="utf-8")
        lines.append(json.dumps({"page_id": fx.page_id, "domain": fx.domain}))
    (directory / "manifest.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_fixtures(directory) -> list[PageFixture]:
    """``*.doctags`` files plus an optional ``manifest.jsonl`` naming domains."""
    directory = Path(directory)
    domains = {}
    manifest = directory / "manifest.jsonl"
    if manifest.exists():
        for line in manifest.read_text(encoding="utf-8").splitlines():
            if line.strip():
                obj = json.loads(line)
                domains[str(obj["page_id"])] = str(obj.get("domain", ""))
    out = []
    for path in sorted(directory.glob("*.doctags")):
        doc = parse(path.read_text(encoding="utf-8"))
        out.append(PageFixture(path.stem, doc, domains.get(path.stem, "")))
    return out
