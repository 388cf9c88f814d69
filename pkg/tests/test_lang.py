import threading
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import cadrl.lang as lang
from cadrl.lang import (
    EOS_ID,
    VOCAB,
    VOCAB_SIZE,
    Circle,
    EmptyResult,
    Mode,
    OutOfWorld,
    ParseError,
    Plane,
    Rect,
    TokenClass,
    TokenSeq,
    UnknownLexeme,
    classify_token,
    detokenize,
    execute,
    parse,
    parse_source,
    strip_reasoning,
    tokenize,
)
from cadrl.lang.tokens import LEXEME_TO_ID, NUMBER_LEXEMES

LANG_DIR = Path(lang.__file__).parent


# ------------------------------------------------------------------ vocabulary

def test_vocab_file_is_the_id_table():
    lines = (LANG_DIR / "vocab.txt").read_text(encoding="utf-8").splitlines()
    assert tuple(lines) == VOCAB
    assert VOCAB_SIZE < 100
    assert [l for l in lines if classify_token(LEXEME_TO_ID[l]) is TokenClass.NUMBER] == list(NUMBER_LEXEMES)


def test_number_literals_are_the_quarter_grid():
    assert [float(x) for x in NUMBER_LEXEMES] == [0.25 * i for i in range(1, 33)]


def test_grammar_file_ships():
    text = (LANG_DIR / "minicad.ebnf").read_text(encoding="utf-8")
    assert 'feature := "PLANE" axis prim+ "EXTRUDE" num mode? ;' in text


def test_tokenize_empty():
    seq = tokenize("")
    assert len(seq) == 0 and seq.truncated is False


def test_tokenize_reference_line():
    seq = tokenize("<Think> base plate </Think> PLANE XY RECT 2.0 1.0 EXTRUDE 1.0 <EOS>")
    # enumerated by hand against vocab.txt
    D, W, K, A, N = (TokenClass.DELIMITER, TokenClass.THINK_WORD, TokenClass.KEYWORD,
                     TokenClass.AXIS, TokenClass.NUMBER)
    assert [t.cls for t in seq.tokens] == [D, W, W, D, K, A, K, N, N, K, N, TokenClass.EOS]
    assert [t.id for t in seq.tokens] == [VOCAB.index(x) for x in
                                          "<Think> base plate </Think> PLANE XY RECT 2.0 1.0 EXTRUDE 1.0 <EOS>".split()]
    assert seq.truncated is False


def test_tokenize_unknown_lexeme():
    with pytest.raises(UnknownLexeme) as err:
        tokenize("PLANE QQ")
    assert (err.value.position, err.value.lexeme) == (1, "QQ")


@pytest.mark.parametrize("lexeme,cls", [("2.0", TokenClass.NUMBER), ("EXTRUDE", TokenClass.KEYWORD),
                                        ("<Think>", TokenClass.DELIMITER), ("YZ", TokenClass.AXIS),
                                        ("<EOS>", TokenClass.EOS), ("plate", TokenClass.THINK_WORD)])
def test_classify_token(lexeme, cls):
    assert classify_token(LEXEME_TO_ID[lexeme]) is cls


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from(VOCAB), max_size=60))
def test_tokenize_detokenize_round_trip(lexemes):
    text = " ".join(lexemes)
    assert detokenize(tokenize(text)) == text


# ------------------------------------------------------------------ reasoning split

def test_strip_reasoning_with_delimiters():
    seq = tokenize("<Think> first </Think> PLANE XY RECT 1.0 1.0 EXTRUDE 1.0 <EOS>")
    assert strip_reasoning(seq).text() == "PLANE XY RECT 1.0 1.0 EXTRUDE 1.0"


def test_strip_reasoning_without_close_returns_all_but_eos():
    seq = tokenize("PLANE XY RECT 1.0 1.0 EXTRUDE 1.0 <EOS>")
    assert strip_reasoning(seq).text() == "PLANE XY RECT 1.0 1.0 EXTRUDE 1.0"


def test_strip_reasoning_unclosed_reasoning_is_empty():
    seq = TokenSeq(tokenize("<Think> first then").ids, truncated=True)
    assert len(strip_reasoning(seq)) == 0


def test_strip_reasoning_cuts_at_first_eos():
    seq = tokenize("<Think> </Think> PLANE <EOS> XY <EOS>")
    assert strip_reasoning(seq).text() == "PLANE"


# ------------------------------------------------------------------ parser

def test_parse_minimal_program():
    prog = parse(tokenize("PLANE XY RECT 2.0 1.0 EXTRUDE 1.0"))
    assert len(prog.features) == 1
    f = prog.features[0]
    assert (f.plane, f.primitives, f.depth, f.mode) == (Plane.XY, (Rect(2.0, 1.0),), 1.0, Mode.UNION)


@pytest.mark.parametrize("src,kind", [
    ("PLANE XY EXTRUDE 1.0", "empty-sketch"),
    ("PLANE XY MOVE 1.0 1.0 EXTRUDE 1.0", "empty-sketch"),
    ("PLANE XY RECT 2.0 EXTRUDE 1.0", "missing-number"),
    ("PLANE XY RECT 2.0", "dangling-keyword"),
    ("PLANE XY RECT 2.0 1.0 EXTRUDE", "dangling-keyword"),
    ("PLANE", "dangling-keyword"),
    ("", "zero-feature"),
    ("RECT 1.0 1.0", "unexpected-token"),
    ("PLANE XY RECT 1.0 1.0 EXTRUDE 1.0 CUT", "unexpected-token"),
    ("PLANE XY CIRCLE 1.0 EXTRUDE 2.0 CUT PLANE XY CIRCLE 0.5 EXTRUDE 2.0", "unexpected-token"),
])
def test_parse_errors(src, kind):
    with pytest.raises(ParseError) as err:
        parse(tokenize(src))
    assert err.value.kind == kind


def test_parse_trailing_cut_mode():
    prog = parse_source("PLANE XY CIRCLE 1.0 EXTRUDE 2.0 PLANE XY CIRCLE 0.5 EXTRUDE 2.0 CUT")
    assert [f.mode for f in prog.features] == [Mode.UNION, Mode.CUT]
    assert prog.features[1].primitives == (Circle(0.5),)


def test_to_source_round_trip():
    src = "PLANE XZ MOVE 0.5 0.25 CIRCLE 1.0 EXTRUDE 2.0 UNION PLANE XY RECT 1.0 3.0 EXTRUDE 1.0 CUT"
    prog = parse_source(src)
    assert prog.to_source() == src
    assert parse_source(prog.to_source()) == prog


@settings(max_examples=500, deadline=None)
@given(st.lists(st.integers(0, VOCAB_SIZE - 1), max_size=40))
def test_parse_is_total(ids):
    try:
        prog = parse(TokenSeq(tuple(ids)))
    except ParseError:
        return
    assert prog.features and prog.features[0].mode is Mode.UNION


_prim = st.one_of(
    st.tuples(st.just("RECT"), st.sampled_from(NUMBER_LEXEMES), st.sampled_from(NUMBER_LEXEMES)),
    st.tuples(st.just("CIRCLE"), st.sampled_from(NUMBER_LEXEMES)),
)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["XY", "XZ", "YZ"]), st.lists(_prim, min_size=1, max_size=3),
                          st.sampled_from(NUMBER_LEXEMES), st.sampled_from(["", "UNION", "CUT"])),
                min_size=1, max_size=4))
def test_grammar_generated_programs_parse(feats):
    words = []
    for i, (axis, prims, depth, mode) in enumerate(feats):
        if i == 0 and mode == "CUT":
            mode = ""
        words += ["PLANE", axis] + [w for p in prims for w in p] + ["EXTRUDE", depth] + ([mode] if mode else [])
    prog = parse(tokenize(" ".join(words)))
    assert len(prog.features) == len(feats)


# ------------------------------------------------------------------ interpreter

def test_box_volume_matches_analytic():
    solid = execute(parse_source("PLANE XY RECT 2.0 1.0 EXTRUDE 1.0"), 64)
    assert solid.volume == pytest.approx(2.0, rel=0.03)


def test_cylinder_volume_matches_analytic():
    solid = execute(parse_source("PLANE XY CIRCLE 1.0 EXTRUDE 2.0"), 64)
    assert solid.volume == pytest.approx(np.pi * 2.0, rel=0.03)


def test_self_cut_is_empty_result():
    with pytest.raises(EmptyResult):
        execute(parse_source("PLANE XY RECT 2.0 2.0 EXTRUDE 2.0 PLANE XY RECT 2.0 2.0 EXTRUDE 2.0 CUT"), 32)


def test_out_of_world():
    with pytest.raises(OutOfWorld):
        execute(parse_source("PLANE XY MOVE 6.0 0.25 RECT 8.0 1.0 EXTRUDE 1.0"), 16)
    with pytest.raises(OutOfWorld):
        execute(parse_source("PLANE XY RECT 1.0 1.0 EXTRUDE 8.0 PLANE YZ MOVE 8.0 0.25 CIRCLE 1.0 EXTRUDE 1.0 CUT"), 16)


@pytest.mark.parametrize("plane,extent", [("XY", (2.0, 1.0, 3.0)), ("XZ", (2.0, 3.0, 1.0)), ("YZ", (3.0, 2.0, 1.0))])
def test_plane_conventions(plane, extent):
    solid = execute(parse_source(f"PLANE {plane} RECT 2.0 1.0 EXTRUDE 3.0"), 8)
    np.testing.assert_allclose(solid.hi - solid.lo, extent)
    # extrusion runs from 0 along the positive normal
    normal = {"XY": 2, "XZ": 1, "YZ": 0}[plane]
    assert solid.lo[normal] == 0.0


def test_move_offsets_the_pen():
    solid = execute(parse_source("PLANE XY MOVE 1.0 0.5 RECT 2.0 1.0 EXTRUDE 1.0"), 8)
    np.testing.assert_allclose(solid.lo, [0.0, 0.0, 0.0])
    np.testing.assert_allclose(solid.hi, [2.0, 1.0, 1.0])


def test_cut_removes_material():
    full = execute(parse_source("PLANE XY RECT 4.0 4.0 EXTRUDE 2.0"), 64)
    holed = execute(parse_source("PLANE XY RECT 4.0 4.0 EXTRUDE 2.0 PLANE XY CIRCLE 1.0 EXTRUDE 2.0 CUT"), 64)
    assert full.volume - holed.volume == pytest.approx(np.pi * 2.0, rel=0.03)


def test_execute_is_deterministic_across_threads():
    prog = parse_source("PLANE XY RECT 4.0 3.0 EXTRUDE 2.0 PLANE XZ MOVE 0.5 0.5 CIRCLE 1.0 EXTRUDE 1.5 CUT")
    ref = execute(prog, 48).occupancy
    out = [None] * 4

    def work(i):
        out[i] = execute(prog, 48).occupancy

    threads = [threading.Thread(target=work, args=(i,)) for i in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert all(np.array_equal(ref, o) for o in out)
    assert np.array_equal(ref, execute(prog, 48).occupancy)


def test_rect_volume_error_shrinks_with_resolution():
    prog = parse_source("PLANE XY MOVE 0.25 0.5 RECT 2.25 1.75 EXTRUDE 1.25")
    errors = [abs(execute(prog, r).volume - 2.25 * 1.75 * 1.25) for r in (32, 64, 128)]
    assert errors[0] >= errors[1] >= errors[2]
    assert errors[2] <= 1e-9 + 0.03 * 2.25 * 1.75 * 1.25


def test_eos_is_not_token_zero():
    # zero-parameter greedy decoding must be able to emit token 0 repeatedly
    assert EOS_ID != 0
