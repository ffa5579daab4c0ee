"""Page and corpus metrics: text similarity, TEDS over tables, reading order.

Text metrics run on a plain-text flattening of each document: element
contents in document order joined by newlines, table rows joined by newlines
and cells within a row by ``" | "``. Both sides are flattened the same way.
"""

from __future__ import annotations

import csv
import io
import math
from collections import Counter
from dataclasses import asdict, dataclass

import numpy as np

from .doctags import DocTagsDoc, LayoutTag, parse_otsl
from .errors import EmptyCorpus
from .kernels import levenshtein
from .layout import BBox, greedy_match
from .teds import otsl_to_tree, teds

CSV_FIELDS = ("page_id", "bleu", "f1", "precision", "recall", "edit_dist", "teds", "teds_s", "ro_ed")


def flatten_text(doc: DocTagsDoc) -> str:
    parts = []
    for el in doc.iter_elements():
        if el.tag is LayoutTag.OTSL:
            rows = parse_otsl(el.content)
            text = "\n".join(" | ".join(c.text for c in row) for row in rows)
        else:
            text = el.content.strip()
        if text:
            parts.append(text)
    return "\n".join(parts)


def _codepoints(s: str):
    return np.frombuffer(s.encode("utf-32-le"), dtype=np.uint32).astype(np.int64)


def edit_distance_norm(pred: str, ref: str) -> float:
    """Character Levenshtein distance over the longer length; 0 when both empty."""
    longest = max(len(pred), len(ref))
    if longest == 0:
        return 0.0
    return levenshtein(_codepoints(pred), _codepoints(ref)) / longest


def token_prf(pred: str, ref: str) -> dict:
    """Whitespace-token precision/recall/F1 over multisets."""
    p, r = pred.split(), ref.split()
    if not p and not r:
        return {"precision": 1.0, "recall": 1.0, "f1": 1.0}
    if not p or not r:
        return {"precision": 0.0, "recall": 0.0, "f1": 0.0}
    overlap = sum((Counter(p) & Counter(r)).values())
    precision = overlap / len(p)
    recall = overlap / len(r)
    f1 = 0.0 if overlap == 0 else 2 * precision * recall / (precision + recall)
    return {"precision": precision, "recall": recall, "f1": f1}


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(pred: str, ref: str, max_n: int = 4) -> float:
    """Sentence BLEU, uniform weights, brevity penalty.

    Orders above one use add-one smoothing, ``(matches + 1) / (max(count, 1) + 1)``.
    Identical token sequences score 1.0; without that rule smoothing would
    mark a perfect hypothesis shorter than ``max_n`` words below 1.
    """
    hyp, refs = pred.split(), ref.split()
    if hyp == refs:
        return 1.0
    if not hyp or not refs:
        return 0.0
    log_sum = 0.0
    for n in range(1, max_n + 1):
        h = _ngrams(hyp, n)
        matches = sum((h & _ngrams(refs, n)).values())
        total = max(sum(h.values()), 1)
        if n == 1:
            if matches == 0:
                return 0.0
            log_sum += math.log(matches / total)
        else:
            log_sum += math.log((matches + 1) / (total + 1))
    bp = 1.0 if len(hyp) > len(refs) else math.exp(1 - len(refs) / len(hyp))
    return bp * math.exp(log_sum / max_n)


def _located(doc):
    return [(el.tag, None if el.locs is None else BBox(*el.locs)) for el in doc.elements]


def reading_order_ed(pred: DocTagsDoc, ref: DocTagsDoc, iou_threshold: float = 0.5) -> float:
    """Normalised edit distance between matched reference indices and 0..n-1.

    Pred elements are matched one-to-one to reference elements (same tag,
    IoU >= threshold, greedy by IoU). Unmatched pred elements become a
    sentinel that never equals a reference index.
    """
    p, r = _located(pred), _located(ref)
    if not p and not r:
        return 0.0
    match = greedy_match(p, r, iou_threshold)
    seq = [match.get(i, -1) for i in range(len(p))]
    return levenshtein(np.array(seq, dtype=np.int64), np.arange(len(r), dtype=np.int64)) / max(len(p), len(r))


def _tables(doc):
    return [el for el in doc.iter_elements() if el.tag is LayoutTag.OTSL]


def table_scores(pred: DocTagsDoc, ref: DocTagsDoc):
    """Mean (TEDS, TEDS-S) over reference tables, paired in order; None without tables."""
    rt, pt = _tables(ref), _tables(pred)
    if not rt:
        return None, None
    full, struct = [], []
    for k, rel in enumerate(rt):
        if k >= len(pt):
            full.append(0.0)
            struct.append(0.0)
            continue
        full.append(teds(otsl_to_tree(pt[k]), otsl_to_tree(rel)))
        struct.append(teds(otsl_to_tree(pt[k]), otsl_to_tree(rel), structure_only=True))
    return sum(full) / len(full), sum(struct) / len(struct)


@dataclass(frozen=True, slots=True)
class PageMetrics:
    page_id: str
    bleu: float
    f1: float
    precision: float
    recall: float
    edit_dist: float
    teds: float | None
    teds_s: float | None
    ro_ed: float | None


def page_metrics(page_id: str, pred: DocTagsDoc, ref: DocTagsDoc) -> PageMetrics:
    pt, rt = flatten_text(pred), flatten_text(ref)
    prf = token_prf(pt, rt)
    t, ts = table_scores(pred, ref)
    has_locs = any(el.locs is not None for el in ref.elements)
    return PageMetrics(
        page_id,
        bleu(pt, rt),
        prf["f1"],
        prf["precision"],
        prf["recall"],
        edit_distance_norm(pt, rt),
        t,
        ts,
        reading_order_ed(pred, ref) if has_locs else None,
    )


@dataclass(frozen=True, slots=True)
class MetricReport:
    bleu: float
    f1: float
    precision: float
    recall: float
    edit_dist: float
    teds: float | None
    teds_s: float | None
    reading_order_ed: float | None
    n_pages: int
    n_table_pages: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def _mean(values):
    values = [v for v in values if v is not None]
    return sum(values) / len(values) if values else None


def aggregate(pages) -> MetricReport:
    pages = sorted(pages, key=lambda m: m.page_id)
    if not pages:
        raise EmptyCorpus("no pages to evaluate")
    return MetricReport(
        bleu=_mean(m.bleu for m in pages),
        f1=_mean(m.f1 for m in pages),
        precision=_mean(m.precision for m in pages),
        recall=_mean(m.recall for m in pages),
        edit_dist=_mean(m.edit_dist for m in pages),
        teds=_mean(m.teds for m in pages),
        teds_s=_mean(m.teds_s for m in pages),
        reading_order_ed=_mean(m.ro_ed for m in pages),
        n_pages=len(pages),
        n_table_pages=sum(m.teds is not None for m in pages),
    )


def evaluate_corpus(pairs) -> tuple[MetricReport, list[PageMetrics]]:
    """Average per-page metrics over ``(page_id, pred, ref)`` triples.

    ``pairs`` may also hold bare ``(pred, ref)`` tuples; those are numbered.
    TEDS is averaged over pages whose reference has a table.
    """
    per_page = []
    for k, item in enumerate(pairs):
        if len(item) == 2:
            page_id, (pred, ref) = f"{k:06d}", item
        else:
            page_id, pred, ref = item
        per_page.append(page_metrics(page_id, pred, ref))
    per_page.sort(key=lambda m: m.page_id)
    return aggregate(per_page), per_page


def per_page_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for m in rows:
        w.writerow(["" if v is None else (f"{v:.6f}" if isinstance(v, float) else v) for v in (
            m.page_id, m.bleu, m.f1, m.precision, m.recall, m.edit_dist, m.teds, m.teds_s, m.ro_ed
        )])
    return buf.getvalue()
