"""Detector post-processing: confidence filter, fragment merge, per-class NMS.

Boxes are pixel coordinates with a top-left origin. Whenever an order has to
be chosen, detections are ranked by score (descending), then class id, then
``x_min``, then ``y_min`` (ascending), which makes every result independent of
the input order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

from .errors import LayoutPriorError

NUM_CLASSES = 17

# detector class id -> name
CLASS_NAMES = (
    "Caption",
    "Footnote",
    "Formula",
    "List-item",
    "Page-footer",
    "Page-header",
    "Picture",
    "Section-header",
    "Table",
    "Text",
    "Title",
    "Document Index",
    "Code",
    "Checkbox-Selected",
    "Checkbox-Unselected",
    "Form",
    "Key-Value Region",
)


class DetectionFormatError(LayoutPriorError, ValueError):
    """A detections record is missing fields or holds invalid values."""


@dataclass(frozen=True, slots=True)
class BBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min <= self.x_max and self.y_min <= self.y_max):
            raise ValueError(f"inverted box {self.as_tuple()}")
        if min(self.x_min, self.y_min) < 0:
            raise ValueError(f"negative coordinate in {self.as_tuple()}")

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def as_tuple(self):
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    def union(self, other: BBox) -> BBox:
        return BBox(
            min(self.x_min, other.x_min),
            min(self.y_min, other.y_min),
            max(self.x_max, other.x_max),
            max(self.y_max, other.y_max),
        )


@dataclass(frozen=True, slots=True)
class Detection:
    cls: int
    score: float
    box: BBox

    def __post_init__(self):
        if not 0 <= self.cls < NUM_CLASSES:
            raise ValueError(f"class id {self.cls} outside 0..{NUM_CLASSES - 1}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")


@dataclass(frozen=True, slots=True)
class PageDetections:
    page_id: str
    width: int
    height: int
    detections: tuple[Detection, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"page {self.page_id!r}: non-positive size {self.width}x{self.height}")
        object.__setattr__(self, "detections", tuple(self.detections))


@dataclass(frozen=True, slots=True)
class PostprocessConfig:
    confidence_threshold: float = 0.6
    nms_iou_threshold: float = 0.5
    merge_ios_threshold: float = 0.8

    def __post_init__(self):
        for name in ("confidence_threshold", "nms_iou_threshold", "merge_ios_threshold"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")


def _intersection(a: BBox, b: BBox) -> float:
    w = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    h = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if w <= 0 or h <= 0:
        return 0.0
    return w * h


def iou(a: BBox, b: BBox) -> float:
    inter = _intersection(a, b)
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return inter / union


def ios(a: BBox, b: BBox) -> float:
    """Intersection over the smaller of the two areas."""
    smaller = min(a.area, b.area)
    if smaller <= 0:
        return 0.0
    return _intersection(a, b) / smaller


def rank_key(det: Detection):
    b = det.box
    return (-det.score, det.cls, b.x_min, b.y_min, b.x_max, b.y_max)


def filter_confidence(dets, threshold):
    """Keep detections scoring strictly above ``threshold``, in input order."""
    return [d for d in dets if d.score > threshold]


def merge_fragments(dets, ios_threshold):
    """Fuse same-class boxes that are mostly inside one another.

    Any same-class pair whose intersection-over-smaller-area reaches the
    threshold is replaced by its bounding union carrying the higher score.
    Repeats until no pair qualifies.
    """
    work = sorted(dets, key=rank_key)
    merged = True
    while merged:
        merged = False
        for i in range(len(work)):
            for j in range(i + 1, len(work)):
                a, b = work[i], work[j]
                if a.cls == b.cls and ios(a.box, b.box) >= ios_threshold:
                    fused = Detection(a.cls, max(a.score, b.score), a.box.union(b.box))
                    work = sorted(work[:i] + work[i + 1 : j] + work[j + 1 :] + [fused], key=rank_key)
                    merged = True
                    break
            if merged:
                break
    return work


def nms(dets, iou_threshold):
    """Greedy per-class non-maximum suppression.

    A box is kept iff its IoU with every already kept box of the same class
    is at most ``iou_threshold``.
    """
    kept = []
    for d in sorted(dets, key=rank_key):
        if all(k.cls != d.cls or iou(k.box, d.box) <= iou_threshold for k in kept):
            kept.append(d)
    return kept


def postprocess(page: PageDetections, cfg: PostprocessConfig | None = None) -> PageDetections:
    cfg = cfg or PostprocessConfig()
    dets = filter_confidence(page.detections, cfg.confidence_threshold)
    dets = merge_fragments(dets, cfg.merge_ios_threshold)
    dets = nms(dets, cfg.nms_iou_threshold)
    return replace(page, detections=tuple(dets))


def greedy_match(pred, ref, threshold=0.5):
    """One-to-one matching of ``(tag, box)`` pairs by descending IoU.

    Only pairs with equal tags and IoU >= ``threshold`` are eligible. Ties go
    to the lower pred index, then the lower ref index. Returns a dict
    ``pred index -> ref index``.
    """
    cands = []
    for i, (ptag, pbox) in enumerate(pred):
        if pbox is None:
            continue
        for j, (rtag, rbox) in enumerate(ref):
            if rbox is None or rtag != ptag:
                continue
            v = iou(pbox, rbox)
            if v >= threshold:
                cands.append((-v, i, j))
    cands.sort()
    out = {}
    used = set()
    for _, i, j in cands:
        if i in out or j in used:
            continue
        out[i] = j
        used.add(j)
    return out


# --------------------------------------------------------------------------
# file format


def page_from_dict(obj) -> PageDetections:
    """Build a page from its JSON form, clamping boxes into the page."""
    try:
        page_id = str(obj["page_id"])
        width, height = int(obj["width"]), int(obj["height"])
        raw = obj.get("detections", [])
        if width <= 0 or height <= 0:
            raise ValueError(f"non-positive page size {width}x{height}")
        dets = []
        for d in raw:
            x0, y0, x1, y1 = (float(v) for v in d["bbox"])
            x0, x1 = sorted((x0, x1))
            y0, y1 = sorted((y0, y1))
            box = BBox(
                min(max(x0, 0.0), width),
                min(max(y0, 0.0), height),
                min(max(x1, 0.0), width),
                min(max(y1, 0.0), height),
            )
            dets.append(Detection(int(d["class"]), float(d["score"]), box))
    except (KeyError, TypeError, ValueError) as exc:
        raise DetectionFormatError(f"bad detections record: {exc}") from None
    return PageDetections(page_id, width, height, tuple(dets))


def page_to_dict(page: PageDetections) -> dict:
    return {
        "page_id": page.page_id,
        "width": page.width,
        "height": page.height,
        "detections": [
            {"class": d.cls, "score": d.score, "bbox": list(d.box.as_tuple())} for d in page.detections
        ],
    }


def read_pages(path) -> list[PageDetections]:
    """Read a detections file: one JSON object, or JSONL with one page per line."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        stripped = text.strip()
        if not stripped:
            return []
        try:
            objs = [json.loads(stripped)]
        except json.JSONDecodeError:
            objs = [json.loads(line) for line in text.splitlines() if line.strip()]
    except json.JSONDecodeError as exc:
        raise DetectionFormatError(f"{path}: {exc}") from None
    return [page_from_dict(o) for o in objs]
