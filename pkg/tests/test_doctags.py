import pytest
from hypothesis import given
from hypothesis import strategies as st
from strategies import docs

from layoutprior.doctags import (
    DocElement,
    DocTagsDoc,
    DocTagsError,
    InvalidBox,
    InvalidEncoding,
    LayoutTag,
    LocOutOfRange,
    MalformedLoc,
    MalformedOtsl,
    MisplacedTag,
    NonCanonical,
    TokenClass,
    UnbalancedTag,
    UnexpectedText,
    UnknownTag,
    classify_token,
    count_tokens,
    parse,
    parse_otsl,
    serialize,
    tokenize,
    validate,
)


def test_parse_single_element():
    doc = parse("<text><loc_132><loc_56><loc_432><loc_71></text>")
    assert doc.elements == (DocElement(LayoutTag.TEXT, (132, 56, 432, 71), ""),)


def test_parse_empty():
    assert parse("") == DocTagsDoc()
    assert serialize(DocTagsDoc()) == ""


def test_loc_out_of_range():
    with pytest.raises(LocOutOfRange) as ei:
        parse("<text><loc_501>")
    assert ei.value.args[0] == 501 or "501" in str(ei.value)


def test_serialize_caption():
    el = DocElement(LayoutTag.CAPTION, (132, 296, 295, 302))
    assert serialize(DocTagsDoc((el,))) == "<caption><loc_132><loc_296><loc_295><loc_302></caption>"


@pytest.mark.parametrize(
    "text, exc",
    [
        ("<bogus></bogus>", UnknownTag),
        ("<text><loc_1><loc_2></text>", MalformedLoc),
        ("<text><loc_01><loc_2><loc_3><loc_4></text>", MalformedLoc),
        ("<text>abc", UnbalancedTag),
        ("<text>abc</title>", UnbalancedTag),
        ("</text>", UnbalancedTag),
        ("hello", UnexpectedText),
        ("<text><fcel></text>", MisplacedTag),
        ("<text><loc_9><loc_0><loc_3><loc_4></text>", InvalidBox),
        ("<otsl><lcel><nl></otsl>", MalformedOtsl),
        ("<otsl>orphan<fcel>a</otsl>", MalformedOtsl),
        ("<text>a<loc_3>b</text>", MalformedLoc),
    ],
)
def test_structured_errors(text, exc):
    with pytest.raises(exc) as ei:
        parse(text)
    assert isinstance(ei.value, DocTagsError)
    assert isinstance(ei.value.offset, int) and 0 <= ei.value.offset <= len(text.encode())


def test_error_offset_is_in_bytes():
    text = "<text>é</text>\n<nope></nope>"
    with pytest.raises(UnknownTag) as ei:
        parse(text)
    assert ei.value.offset == text.encode().index(b"<nope>")


def test_invalid_utf8():
    with pytest.raises(InvalidEncoding):
        parse(b"<text>\xff</text>")


def test_validate_rejects_non_canonical():
    assert validate("<text>a</text>\n<text>b</text>").elements
    with pytest.raises(NonCanonical):
        validate("<text>a</text>  <text>b</text>")


def test_page_break_without_locs():
    doc = parse("<page_break></page_break>")
    assert doc.elements[0].locs is None


def test_nested_list():
    text = "<unordered_list><list_item>a</list_item><list_item>b</list_item></unordered_list>"
    doc = validate(text)
    assert [c.content for c in doc.elements[0].children] == ["a", "b"]
    assert [e.tag for e in doc.iter_elements()] == [LayoutTag.UNORDERED_LIST, LayoutTag.LIST_ITEM, LayoutTag.LIST_ITEM]


def test_deep_nesting_is_an_error_not_a_crash():
    text = "<ordered_list>" * 5000 + "</ordered_list>" * 5000
    with pytest.raises(DocTagsError):
        parse(text)


def test_content_with_lone_angle_brackets():
    doc = validate("<text>a < b > c</text>")
    assert doc.elements[0].content == "a < b > c"


def test_markup_in_content_rejected_at_construction():
    with pytest.raises(ValueError):
        DocElement(LayoutTag.TEXT, None, "x <title> y")


# --------------------------------------------------------------------------
# tokens


def test_classify_examples():
    assert classify_token("<loc_0>") is TokenClass.LOC
    assert classify_token("<section_header>") is TokenClass.LAYOUT_TAG
    assert classify_token("</section_header>") is TokenClass.LAYOUT_TAG
    assert classify_token("Revenue grew 4%") is TokenClass.CONTENT
    assert classify_token("<fcel>") is TokenClass.CONTROL
    assert classify_token("<layout>") is TokenClass.CONTROL


def test_vocabulary_closure():
    locs = {f"<loc_{n}>" for n in range(501)}
    assert all(classify_token(t) is TokenClass.LOC for t in locs)
    near_misses = ["<loc_501>", "<loc_-1>", "<loc_01>", "</loc_5>", "<loc_>", "<loc_1000>", "loc_5", "<loc_5 >", "<LOC_5>"]
    assert all(classify_token(t) is not TokenClass.LOC for t in near_misses)


@given(st.text(max_size=12))
def test_loc_only_for_vocabulary(s):
    assert (classify_token(s) is TokenClass.LOC) == (s in {f"<loc_{n}>" for n in range(501)})


def test_count_tokens_c3(c3_fragment):
    assert count_tokens(c3_fragment) == 60
    assert count_tokens("<layout>\n" + c3_fragment + "\n</layout>") == 62
    assert count_tokens("") == 0


def test_count_tokens_content_words():
    assert count_tokens("<text>Revenue grew 4%</text>") == 5


@given(docs, docs)
def test_count_tokens_additive(a, b):
    sa, sb = serialize(DocTagsDoc(a.elements)), serialize(DocTagsDoc(b.elements))
    joined = "\n".join(s for s in (sa, sb) if s)
    assert count_tokens(joined) == count_tokens(sa) + count_tokens(sb)


def test_tokenize_keeps_words_with_angle_brackets():
    assert tokenize("<text>a<b c</text>") == ["<text>", "a<b", "c", "</text>"]


# --------------------------------------------------------------------------
# round trip


@given(docs)
def test_round_trip_doc(doc):
    text = serialize(doc)
    assert parse(text) == doc
    assert serialize(validate(text)) == text
    assert doc.raw_token_count == count_tokens(text)


@given(st.binary(max_size=200))
def test_parse_never_crashes(data):
    try:
        doc = parse(data)
    except DocTagsError:
        return
    serialize(doc)


# --------------------------------------------------------------------------
# OTSL


def test_otsl_spans():
    (a,), () = parse_otsl("<fcel>a<lcel><nl><ucel><ucel><nl>")
    assert (a.text, a.rowspan, a.colspan) == ("a", 2, 2)
    (x, y), (e,) = parse_otsl("<fcel>x<fcel>y<nl><ucel><ecel><nl>")
    assert x.rowspan == 2 and y.rowspan == 1
    assert e.filled is False and (e.row, e.col) == (1, 1)


def test_otsl_ucel_without_cell_above():
    with pytest.raises(MalformedOtsl):
        parse_otsl("<ucel><nl>")
