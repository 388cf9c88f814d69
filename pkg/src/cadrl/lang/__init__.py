"""MiniQuery: a small parametric CAD scripting language."""

from .interpreter import WORLD_HI, WORLD_LO, EmptyResult, ExecutionError, OutOfWorld, execute
from .parser import Circle, Feature, Mode, Move, ParseError, Plane, Program, Rect, parse
from .tokens import (
    EOS_ID,
    THINK_CLOSE_ID,
    THINK_OPEN_ID,
    VOCAB,
    VOCAB_SIZE,
    Token,
    TokenClass,
    TokenSeq,
    UnknownLexeme,
    classify_token,
    detokenize,
    strip_reasoning,
    tokenize,
)


def parse_source(text: str) -> Program:
    """Tokenize and parse MiniQuery source text (no reasoning segment)."""
    return parse(tokenize(text))
