"""Attention phase-shift analysis and MMD distribution-shift diagnostics."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial.distance import pdist

from .doctags import TokenClass
from .errors import LayoutPriorError
from .kernels import rbf_sum

SEGMENTS = ("image_patches", "instruction", "layout_prior", "generated")
STRUCT_KINDS = (TokenClass.LAYOUT_TAG, TokenClass.LOC)


class SegmentMismatch(LayoutPriorError, ValueError):
    pass


class EmptyPatches(LayoutPriorError, ValueError):
    pass


class DegenerateSample(LayoutPriorError, ValueError):
    pass


class AnalysisFormatError(LayoutPriorError, ValueError):
    pass


# --------------------------------------------------------------------------
# attention


@dataclass(frozen=True)
class AttentionTensor:
    values: np.ndarray  # (layers, heads, seq, seq)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 4 or v.shape[2] != v.shape[3] or 0 in v.shape:
            raise ValueError(f"expected (L, H, S, S) attention, got shape {v.shape}")
        if not np.isfinite(v).all() or (v < 0).any():
            raise ValueError("attention weights must be finite and non-negative")
        if not np.allclose(v.sum(axis=-1), 1.0, atol=1e-4):
            raise ValueError("attention rows must sum to 1")
        object.__setattr__(self, "values", v)

    @property
    def seq(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class PhaseShiftSummary:
    frac_struct_to_prior: float | None
    frac_content_to_image: float | None
    bimodality_gap: float | None
    mass_struct_to_prior: float | None
    mass_content_to_image: float | None
    n_struct: int
    n_content: int

    def to_dict(self) -> dict:
        return asdict(self)


def aggregate_attention(t: AttentionTensor) -> np.ndarray:
    """Elementwise max over layers and heads."""
    return t.values.max(axis=(0, 1))


def _check_segments(seg, seq):
    seg = list(seg)
    if len(seg) != seq:
        raise SegmentMismatch(f"{len(seg)} segment labels for sequence length {seq}")
    bad = set(seg) - set(SEGMENTS)
    if bad:
        raise SegmentMismatch(f"unknown segment labels {sorted(bad)}")
    return np.array(seg)


def phase_shift(t: AttentionTensor, seg, token_kinds) -> PhaseShiftSummary:
    """Where each generated token looks hardest.

    For every generated position i the peak of the aggregated row over
    earlier positions (j < i, ties to the lowest j) is located. Structural
    tokens (layout tags and locations) are scored on landing in the layout
    prior, content tokens on landing in the image patches. The ``mass_*``
    fields give the mean share of each row's aggregated mass in the same
    target segment.
    """
    agg = aggregate_attention(t)
    seg = _check_segments(seg, t.seq)
    gen = np.flatnonzero(seg == "generated")
    kinds = [TokenClass(k) for k in token_kinds]
    if len(kinds) != len(gen):
        raise SegmentMismatch(f"{len(kinds)} token kinds for {len(gen)} generated positions")

    hits = {"struct": [], "content": []}
    mass = {"struct": [], "content": []}
    for i, kind in zip(gen, kinds):
        if kind in STRUCT_KINDS:
            group, target = "struct", "layout_prior"
        elif kind is TokenClass.CONTENT:
            group, target = "content", "image_patches"
        else:
            continue
        if i > 0:
            peak = int(np.argmax(agg[i, :i]))
            hits[group].append(seg[peak] == target)
        row = agg[i]
        total = row.sum()
        if total > 0:
            mass[group].append(row[seg == target].sum() / total)

    def frac(xs):
        return float(sum(xs)) / len(xs) if xs else None

    def avg(xs):
        return float(np.mean(xs)) if xs else None

    fs, fc = frac(hits["struct"]), frac(hits["content"])
    gap = None if fs is None or fc is None else fs - (1.0 - fc)
    return PhaseShiftSummary(
        fs, fc, gap, avg(mass["struct"]), avg(mass["content"]), len(hits["struct"]), len(hits["content"])
    )


def load_attention(path):
    """Read the attention JSON file; returns (tensor, segments, token_kinds)."""
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
        L, H, S = int(obj["layers"]), int(obj["heads"]), int(obj["seq"])
        values = np.asarray(obj["values"], dtype=np.float64)
        if values.size != L * H * S * S:
            raise ValueError(f"values holds {values.size} floats, expected {L * H * S * S}")
        tensor = AttentionTensor(values.reshape(L, H, S, S))
        return tensor, list(obj["segments"]), list(obj["token_kinds"])
    except (KeyError, TypeError, ValueError) as exc:
        raise AnalysisFormatError(f"{path}: {exc}") from None


# --------------------------------------------------------------------------
# embeddings and MMD


@dataclass(frozen=True)
class EmbeddingSet:
    rows: np.ndarray
    label: str = ""

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        if rows.ndim != 2:
            raise ValueError(f"expected (n, d) embeddings, got shape {rows.shape}")
        if not np.isfinite(rows).all():
            raise ValueError("embeddings must be finite")
        object.__setattr__(self, "rows", rows)

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def d(self) -> int:
        return self.rows.shape[1]


@dataclass(frozen=True)
class MmdReport:
    mmd2_biased: float
    mmd2_unbiased: float
    mmd_biased: float
    mmd_unbiased: float
    gamma: float
    sigma: float | None
    n_x: int
    n_y: int

    def to_dict(self) -> dict:
        return asdict(self)


def pool_embedding(patch_tokens) -> np.ndarray:
    """Mean over every token of every patch: (P, T, d) -> (d,)."""
    v = np.asarray(patch_tokens, dtype=np.float64)
    if v.ndim != 3:
        raise ValueError(f"expected (patches, tokens, dim), got shape {v.shape}")
    if v.shape[0] == 0 or v.shape[1] == 0:
        raise EmptyPatches("no patch tokens to pool")
    return v.reshape(-1, v.shape[2]).mean(axis=0)


def median_heuristic_sigma(x: EmbeddingSet, y: EmbeddingSet) -> float:
    """Median pairwise Euclidean distance over the pooled sample."""
    pooled = np.vstack([x.rows, y.rows])
    if pooled.shape[0] < 2:
        raise DegenerateSample("need at least two points")
    sigma = float(np.median(pdist(pooled)))
    if sigma <= 0:
        raise DegenerateSample("median pairwise distance is zero")
    return sigma


def gamma_from_sigma(sigma: float) -> float:
    return 1.0 / (2.0 * sigma * sigma)


def mmd(x: EmbeddingSet, y: EmbeddingSet, gamma: float, sigma: float | None = None) -> MmdReport:
    """Biased and unbiased MMD^2 with ``k(a, b) = exp(-gamma |a - b|^2)``.

    The unbiased estimate drops the i == j terms from the within-sample sums
    and can be negative; the ``mmd_*`` fields clip at zero before the root.
    """
    n, m = x.n, y.n
    if n < 2 or m < 2:
        raise ValueError("each sample needs at least two points")
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    kxy = rbf_sum(x.rows, y.rows, gamma) / (n * m)
    kxx_full = rbf_sum(x.rows, x.rows, gamma)
    kyy_full = rbf_sum(y.rows, y.rows, gamma)
    kxx_off = rbf_sum(x.rows, x.rows, gamma, skip_diagonal=True)
    kyy_off = rbf_sum(y.rows, y.rows, gamma, skip_diagonal=True)
    biased = kxx_full / (n * n) + kyy_full / (m * m) - 2.0 * kxy
    unbiased = kxx_off / (n * (n - 1)) + kyy_off / (m * (m - 1)) - 2.0 * kxy
    return MmdReport(
        biased,
        unbiased,
        math.sqrt(max(biased, 0.0)),
        math.sqrt(max(unbiased, 0.0)),
        float(gamma),
        sigma,
        n,
        m,
    )


def load_embeddings(path, label=None) -> EmbeddingSet:
    """CSV (optional ``label`` column, header optional) or JSONL rows.

    JSONL rows are either a bare list of floats or an object with
    ``embedding`` and optional ``label``.
    """
    rows = []
    labels = set()
    try:
        with open(path, encoding="utf-8") as fh:
            if str(path).endswith((".jsonl", ".json")):
                for line in fh:
                    if not line.strip():
                        continue
                    obj = json.loads(line)
                    if isinstance(obj, dict):
                        rows.append([float(v) for v in obj["embedding"]])
                        if "label" in obj:
                            labels.add(str(obj["label"]))
                    else:
                        rows.append([float(v) for v in obj])
            else:
                reader = csv.reader(fh)
                header = None
                for rec in reader:
                    if not rec:
                        continue
                    if header is None and not _is_number(rec[0]) and "label" in rec:
                        header = rec
                        continue
                    if header is not None and "label" in header:
                        k = header.index("label")
                        labels.add(rec[k])
                        rec = rec[:k] + rec[k + 1 :]
                    elif rec and not _is_number(rec[-1]):
                        labels.add(rec[-1])
                        rec = rec[:-1]
                    rows.append([float(v) for v in rec])
        if len({len(r) for r in rows}) > 1:
            raise ValueError("rows have differing dimensions")
        if not rows:
            raise ValueError("no embedding rows")
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise AnalysisFormatError(f"{path}: {exc}") from None
    if label is None:
        label = ",".join(sorted(labels))
    return EmbeddingSet(np.array(rows), label)


def _is_number(s):
    try:
        float(s)
    except ValueError:
        return False
    return True
