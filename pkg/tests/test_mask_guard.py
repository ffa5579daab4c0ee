import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from layoutprior.errors import EmptyCorpus
from layoutprior.guard import (
    GenerationFormatError,
    GenerationRecord,
    detect_period,
    is_failure,
    read_generations,
    stability_report,
)
from layoutprior.mask import MissingLogprobs, TokenSeq, build_mask, mask_report, masked_nll

TOKENS = st.sampled_from(["<text>", "</text>", "<loc_0>", "<loc_500>", "<loc_77>", "hello", "<fcel>", "4%", "<loc_501>"])


def test_mask_reference_pattern():
    toks = ["<text>", "<loc_100>", "<loc_200>", "<loc_300>", "<loc_400>", "</text>"]
    assert build_mask(toks) == (1, 0, 0, 0, 0, 1)
    assert build_mask(toks[:5] + ["hello", "</text>"]) == (1, 0, 0, 0, 0, 1, 1)


def test_mask_extremes():
    assert build_mask(["a", "b"]) == (1, 1)
    assert build_mask(["<loc_1>", "<loc_2>"]) == (0, 0)


def test_masked_nll_examples():
    assert masked_nll(TokenSeq(("a", "<loc_5>", "b"), (-1.0, -100.0, -2.0))) == 3.0
    assert masked_nll(TokenSeq(("<loc_1>",), (-4.0,))) == 0.0
    with pytest.raises(MissingLogprobs):
        masked_nll(TokenSeq(("a",)))
    with pytest.raises(ValueError):
        TokenSeq(("a", "b"), (-1.0,))


@given(st.lists(st.tuples(TOKENS, st.floats(-50, 0), st.floats(-50, 0)), min_size=1, max_size=40))
def test_masked_nll_ignores_masked_positions(rows):
    toks = tuple(t for t, _, _ in rows)
    a = TokenSeq(toks, tuple(x for _, x, _ in rows))
    mask = build_mask(a)
    b = TokenSeq(toks, tuple(x if m else y for (_, x, y), m in zip(rows, mask)))
    assert masked_nll(a) == masked_nll(b)
    assert masked_nll(a) <= -sum(a.logprobs) + 1e-9


@given(st.lists(TOKENS, max_size=20), st.lists(TOKENS, max_size=20))
def test_mask_concat(a, b):
    assert build_mask(a + b) == build_mask(a) + build_mask(b)


@given(st.lists(st.sampled_from(["x", "y", "</text>"]), min_size=1), st.data())
def test_no_loc_equals_plain_nll(toks, data):
    lps = data.draw(st.lists(st.floats(-10, 0), min_size=len(toks), max_size=len(toks)))
    assert masked_nll(TokenSeq(tuple(toks), tuple(lps))) == pytest.approx(-sum(lps))


def test_mask_report_fields():
    rep = mask_report(TokenSeq(("a", "<loc_1>", "b"), (-1.0, -3.0, -2.0)))
    assert rep == {"mask": [1, 0, 1], "n_tokens": 3, "n_unmasked": 2, "masked_nll": 3.0, "mean_nll_over_unmasked": 1.5}


# --------------------------------------------------------------------------
# guard


def rec(n, eos, domain="d", tail=None, pid="p"):
    return GenerationRecord(pid, domain, n, eos, tail)


def test_failure_boundary():
    assert is_failure(rec(5001, False), 5000)
    assert not is_failure(rec(5001, True), 5000)
    assert not is_failure(rec(5000, False), 5000)
    with pytest.raises(ValueError):
        is_failure(rec(1, False), 0)


@given(st.integers(0, 20000), st.integers(0, 20000), st.integers(1, 20000), st.integers(1, 20000))
def test_failure_monotone(n1, n2, t1, t2):
    lo, hi = sorted((n1, n2))
    assert is_failure(rec(lo, False), t1) <= is_failure(rec(hi, False), t1)
    ta, tb = sorted((t1, t2))
    assert is_failure(rec(n1, False), tb) <= is_failure(rec(n1, False), ta)


def test_detect_period_examples():
    assert detect_period(list("ababab"), 3) == 2
    assert detect_period(list("aaaa"), 2) == 1
    assert detect_period([str(k) for k in range(1000)], 4) is None
    with pytest.raises(ValueError):
        detect_period(list("aa"), 1)


def _periodic(tail, p, r):
    n = len(tail)
    return all(tail[k] == tail[k + p] for k in range(n - p * r, n - p))


@given(st.lists(st.sampled_from("ab"), max_size=40), st.integers(2, 5))
def test_detect_period_minimal(tail, r):
    p = detect_period(tail, r)
    valid = [q for q in range(1, len(tail) // r + 1) if _periodic(tail, q, r)]
    assert p == (valid[0] if valid else None)


def test_report_examples():
    recs = [rec(6000 if k < 10 else 10, k >= 10, "hr") for k in range(100)]
    r = stability_report(recs)
    assert r.per_domain["hr"].rate == 0.10
    two = [rec(6000, False, "a")] + [rec(1, True, "a")] * 49 + [rec(6000, False, "b")] * 2 + [rec(1, True, "b")] * 48
    assert stability_report(two).overall_rate == pytest.approx(0.03, abs=1e-15)
    assert stability_report([rec(9999, True, d) for d in "xyz"]).overall_rate == 0.0
    with pytest.raises(EmptyCorpus):
        stability_report([])


def test_period_is_diagnostic_only():
    looped = rec(100, True, tail=("a", "b") * 20)
    r = stability_report([looped], t_max=50)
    assert r.periodic_pages == 1 and r.per_domain["d"].failures == 0


def test_tail_longer_than_count():
    with pytest.raises(ValueError):
        rec(1, True, tail=("a", "b"))


def test_read_generations(tmp_path):
    p = tmp_path / "g.jsonl"
    p.write_text(json.dumps(rec(7, True, "hr", ("x",)).to_dict()) + "\n\n")
    assert read_generations(p) == [rec(7, True, "hr", ("x",))]
    p.write_text('{"page_id": "a"}\n')
    with pytest.raises(GenerationFormatError):
        read_generations(p)
    p.write_text("{nope\n")
    with pytest.raises(GenerationFormatError):
        read_generations(p)
