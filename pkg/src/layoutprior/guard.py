"""Decode-stability auditing.

A generation fails when it runs past ``t_max`` tokens without emitting EOS.
The repetition-period detector is a separate diagnostic and never changes the
failure count.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import EmptyCorpus, LayoutPriorError

DEFAULT_T_MAX = 5000
DEFAULT_MIN_REPEATS = 4
DEFAULT_TAIL_WINDOW = 512


class GenerationFormatError(LayoutPriorError, ValueError):
    pass


@dataclass(frozen=True, slots=True)
class GenerationRecord:
    page_id: str
    domain: str
    token_count: int
    ended_with_eos: bool
    tail_tokens: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.token_count < 0:
            raise ValueError("token_count must be non-negative")
        if self.tail_tokens is not None:
            object.__setattr__(self, "tail_tokens", tuple(self.tail_tokens))
            if len(self.tail_tokens) > self.token_count:
                raise ValueError("tail longer than the generation")

    def to_dict(self) -> dict:
        return {
            "page_id": self.page_id,
            "domain": self.domain,
            "token_count": self.token_count,
            "ended_with_eos": self.ended_with_eos,
            "tail_tokens": None if self.tail_tokens is None else list(self.tail_tokens),
        }

    @classmethod
    def from_dict(cls, obj) -> GenerationRecord:
        try:
            tail = obj.get("tail_tokens")
            return cls(
                str(obj["page_id"]),
                str(obj.get("domain", "")),
                int(obj["token_count"]),
                bool(obj["ended_with_eos"]),
                None if tail is None else tuple(str(t) for t in tail),
            )
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise GenerationFormatError(f"bad generation record: {exc}") from None


@dataclass(frozen=True, slots=True)
class DomainStats:
    pages: int
    failures: int

    @property
    def rate(self) -> float:
        return self.failures / self.pages


@dataclass(frozen=True, slots=True)
class StabilityReport:
    t_max: int
    per_domain: dict[str, DomainStats] = field(default_factory=dict)
    periodic_pages: int = 0

    @property
    def overall_rate(self) -> float:
        """Unweighted mean of the per-domain failure rates."""
        rates = [s.rate for s in self.per_domain.values()]
        return sum(rates) / len(rates)

    def ranking(self) -> list[str]:
        """Domains by failure rate, worst first; ties by name."""
        return sorted(self.per_domain, key=lambda d: (-self.per_domain[d].rate, d))

    def to_dict(self) -> dict:
        return {
            "t_max": self.t_max,
            "per_domain": {
                d: {"pages": s.pages, "failures": s.failures, "rate": s.rate}
                for d, s in sorted(self.per_domain.items())
            },
            "overall_rate": self.overall_rate,
            "periodic_pages": self.periodic_pages,
        }


def is_failure(rec: GenerationRecord, t_max: int = DEFAULT_T_MAX) -> bool:
    if t_max <= 0:
        raise ValueError("t_max must be positive")
    return rec.token_count > t_max and not rec.ended_with_eos


def detect_period(tail, min_repeats: int = DEFAULT_MIN_REPEATS) -> int | None:
    """Smallest p such that the last ``p * min_repeats`` tokens repeat with period p."""
    if min_repeats < 2:
        raise ValueError("min_repeats must be at least 2")
    tail = list(tail)
    n = len(tail)
    for p in range(1, n // min_repeats + 1):
        start = n - p * min_repeats
        if all(tail[k] == tail[k + p] for k in range(start, n - p)):
            return p
    return None


def stability_report(
    recs,
    t_max: int = DEFAULT_T_MAX,
    min_repeats: int = DEFAULT_MIN_REPEATS,
    window: int = DEFAULT_TAIL_WINDOW,
) -> StabilityReport:
    recs = list(recs)
    if not recs:
        raise EmptyCorpus("no generation records")
    pages: dict[str, int] = {}
    fails: dict[str, int] = {}
    periodic = 0
    for r in recs:
        pages[r.domain] = pages.get(r.domain, 0) + 1
        fails[r.domain] = fails.get(r.domain, 0) + is_failure(r, t_max)
        if r.tail_tokens and detect_period(r.tail_tokens[-window:], min_repeats) is not None:
            periodic += 1
    per_domain = {d: DomainStats(pages[d], fails[d]) for d in sorted(pages)}
    return StabilityReport(t_max, per_domain, periodic)


def read_generations(path) -> list[GenerationRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise GenerationFormatError(f"{path}:{lineno}: {exc}") from None
            out.append(GenerationRecord.from_dict(obj))
    return out
