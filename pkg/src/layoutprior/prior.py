"""Layout priors: quantize, map classes to DocTags, order, perturb, prompt."""

from __future__ import annotations

import math
import re
import statistics
from dataclasses import dataclass

from .doctags import LOC_MAX, WRAPPER, DocElement, DocTagsDoc, LayoutTag, count_tokens, serialize
from .errors import EmptyCorpus, LayoutPriorError
from .layout import BBox, PageDetections, PostprocessConfig, postprocess
from .rng import SplitMix64

DEFAULT_INSTRUCTION = "Convert this page to Docling:"

CLASS_TO_TAG = (
    LayoutTag.CAPTION,
    LayoutTag.FOOTNOTE,
    LayoutTag.FORMULA,
    LayoutTag.LIST_ITEM,
    LayoutTag.PAGE_FOOTER,
    LayoutTag.PAGE_HEADER,
    LayoutTag.PICTURE,
    LayoutTag.SECTION_HEADER,
    LayoutTag.OTSL,
    LayoutTag.TEXT,
    LayoutTag.TITLE,
    LayoutTag.DOCUMENT_INDEX,
    LayoutTag.CODE,
    LayoutTag.CHECKBOX_SELECTED,
    LayoutTag.CHECKBOX_UNSELECTED,
    LayoutTag.FORM,
    LayoutTag.KEY_VALUE_REGION,
)
TAG_TO_CLASS = {tag: i for i, tag in enumerate(CLASS_TO_TAG)}


class InvalidPage(LayoutPriorError, ValueError):
    pass


class UnknownClass(LayoutPriorError, ValueError):
    def __init__(self, cls):
        super().__init__(f"detector class {cls} has no DocTags mapping")
        self.cls = cls


class BadPerturbSpec(LayoutPriorError, ValueError):
    pass


@dataclass(frozen=True, slots=True)
class PriorItem:
    tag: LayoutTag
    locs: tuple[int, int, int, int]

    def to_element(self) -> DocElement:
        return DocElement(self.tag, self.locs)


@dataclass(frozen=True, slots=True)
class LayoutPrior:
    page_id: str
    items: tuple[PriorItem, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))

    def to_doc(self) -> DocTagsDoc:
        return DocTagsDoc(tuple(it.to_element() for it in self.items), WRAPPER)

    def serialize(self) -> str:
        return serialize(self.to_doc())

    @classmethod
    def from_doc(cls, page_id: str, doc: DocTagsDoc) -> LayoutPrior:
        return cls(page_id, tuple(PriorItem(e.tag, e.locs) for e in doc.elements if e.locs is not None))


@dataclass(frozen=True, slots=True)
class PerturbConfig:
    shuffle: bool = False
    inject_prob: float = 1.0
    dropout: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("inject_prob", "dropout"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")

    @property
    def label(self) -> str:
        """The ``[S]-[P]-[D]`` name, e.g. ``ys-1.0-0.3``."""
        return f"{'ys' if self.shuffle else 'ns'}-{self.inject_prob!r}-{self.dropout!r}"

    @classmethod
    def from_label(cls, text: str, seed: int = 0) -> PerturbConfig:
        m = re.fullmatch(r"\s*(ys|ns)\s*-\s*([0-9.]+)\s*-\s*([0-9.]+)\s*", text)
        if m is None:
            raise BadPerturbSpec(f"expected [ys|ns]-P-D, got {text!r}")
        try:
            return cls(m.group(1) == "ys", float(m.group(2)), float(m.group(3)), seed)
        except ValueError as exc:
            raise BadPerturbSpec(str(exc)) from None


@dataclass(frozen=True, slots=True)
class PromptSpec:
    instruction: str
    prior_block: str
    token_overhead: int
    page_id: str = ""
    perturb_label: str | None = None

    @property
    def text(self) -> str:
        if not self.prior_block:
            return self.instruction
        return f"{self.instruction}\n{self.prior_block}"

    def to_dict(self) -> dict:
        return {
            "page_id": self.page_id,
            "instruction": self.instruction,
            "prior": self.prior_block or None,
            "prompt": self.text,
            "token_overhead": self.token_overhead,
            "perturb_config": self.perturb_label,
        }


def _round_half_up(x: float) -> int:
    # coordinates are non-negative, so half-up == half-away-from-zero
    return int(math.floor(x + 0.5))


def quantize(box: BBox, width: int, height: int) -> tuple[int, int, int, int]:
    """Map a pixel box onto the 0..500 location grid."""
    if width <= 0 or height <= 0:
        raise InvalidPage(f"non-positive page size {width}x{height}")

    def q(v, dim):
        return min(max(_round_half_up(v * LOC_MAX / dim), 0), LOC_MAX)

    return (q(box.x_min, width), q(box.y_min, height), q(box.x_max, width), q(box.y_max, height))


def map_class(cls: int) -> LayoutTag:
    if isinstance(cls, bool) or not isinstance(cls, int) or not 0 <= cls < len(CLASS_TO_TAG):
        raise UnknownClass(cls)
    return CLASS_TO_TAG[cls]


def reading_order(items):
    """Top-to-bottom bands, left-to-right within a band.

    Items are visited by ``y_min``; an item joins the current band when it
    overlaps the band vertically (its ``y_min`` lies strictly above the band's
    lowest ``y_max``). Boxes that merely touch start a new band.
    """

    def pos(it):
        x0, y0, x1, y1 = it.locs
        return (y0, x0, y1, x1, it.tag.value)

    bands = []
    bottom = None
    for it in sorted(items, key=pos):
        y0, y1 = it.locs[1], it.locs[3]
        if bands and (y0 < bottom or y0 == bands[-1][0].locs[1]):
            bands[-1].append(it)
            bottom = max(bottom, y1)
        else:
            bands.append([it])
            bottom = y1
    out = []
    for band in bands:
        out.extend(sorted(band, key=lambda it: (it.locs[0], it.locs[1], it.locs[2], it.locs[3], it.tag.value)))
    return out


def build_prior(page: PageDetections, cfg: PostprocessConfig | None = None) -> LayoutPrior:
    page = postprocess(page, cfg)
    items = [PriorItem(map_class(d.cls), quantize(d.box, page.width, page.height)) for d in page.detections]
    return LayoutPrior(page.page_id, tuple(reading_order(items)))


def perturb(prior: LayoutPrior, cfg: PerturbConfig) -> LayoutPrior | None:
    """Ablation-style perturbation; ``None`` means the prior is not injected.

    Draw order per call: one uniform for the injection gate, one per item for
    dropout, then a Fisher-Yates shuffle when enabled.
    """
    rng = SplitMix64.for_page(cfg.seed, prior.page_id)
    if rng.random() >= cfg.inject_prob:
        return None
    items = [it for it in prior.items if rng.random() >= cfg.dropout]
    if cfg.shuffle:
        rng.shuffle(items)
    return LayoutPrior(prior.page_id, tuple(items))


def build_prompt(
    prior: LayoutPrior | None,
    instruction: str = DEFAULT_INSTRUCTION,
    perturb_label: str | None = None,
    page_id: str = "",
) -> PromptSpec:
    if prior is None:
        return PromptSpec(instruction, "", 0, page_id, perturb_label)
    block = prior.serialize()
    return PromptSpec(instruction, block, count_tokens(block), prior.page_id, perturb_label)


def overhead_stats(prompts) -> dict:
    values = [p.token_overhead if isinstance(p, PromptSpec) else int(p) for p in prompts]
    if not values:
        raise EmptyCorpus("no prompts")
    return {
        "min": min(values),
        "max": max(values),
        "median": statistics.median(values),
        "mean": statistics.fmean(values),
    }
