"""Location-token loss mask and the masked negative log-likelihood."""

from __future__ import annotations

from dataclasses import dataclass

from .doctags import TokenClass, classify_token
from .errors import LayoutPriorError


class MissingLogprobs(LayoutPriorError, ValueError):
    pass


@dataclass(frozen=True, slots=True)
class TokenSeq:
    tokens: tuple[str, ...]
    logprobs: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if self.logprobs is not None:
            object.__setattr__(self, "logprobs", tuple(float(v) for v in self.logprobs))
            if len(self.logprobs) != len(self.tokens):
                raise ValueError(f"{len(self.tokens)} tokens but {len(self.logprobs)} logprobs")


def build_mask(seq) -> tuple[int, ...]:
    """1 for label and content tokens, 0 for location tokens."""
    tokens = seq.tokens if isinstance(seq, TokenSeq) else seq
    return tuple(0 if classify_token(t) is TokenClass.LOC else 1 for t in tokens)


def masked_nll(seq: TokenSeq) -> float:
    """``-sum(mask[i] * logprob[i])``, unnormalised."""
    if seq.logprobs is None:
        raise MissingLogprobs("sequence has no logprobs")
    return -sum(lp for bit, lp in zip(build_mask(seq), seq.logprobs) if bit) + 0.0


def mask_report(seq: TokenSeq) -> dict:
    bits = build_mask(seq)
    n = sum(bits)
    out = {"mask": list(bits), "n_tokens": len(bits), "n_unmasked": n}
    if seq.logprobs is not None:
        total = masked_nll(seq)
        out["masked_nll"] = total
        # derived field; the loss itself is the raw sum above
        out["mean_nll_over_unmasked"] = total / n if n else None
    return out
