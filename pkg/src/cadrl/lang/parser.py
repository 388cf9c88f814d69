"""MiniQuery AST and single-pass LL(1) parser (grammar in ``minicad.ebnf``)."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Union

from .tokens import (
    AXES,
    NUMBER_VALUES,
    VOCAB,
    TokenClass,
    TokenSeq,
    classify_token,
    number_lexeme,
)


class Plane(Enum):
    XY = "XY"
    XZ = "XZ"
    YZ = "YZ"


class Mode(Enum):
    UNION = "UNION"
    CUT = "CUT"


@dataclass(frozen=True)
class Rect:
    width: float
    height: float


@dataclass(frozen=True)
class Circle:
    radius: float


@dataclass(frozen=True)
class Move:
    dx: float
    dy: float


SketchPrimitive = Union[Rect, Circle, Move]


@dataclass(frozen=True)
class Feature:
    plane: Plane
    primitives: tuple[SketchPrimitive, ...]
    depth: float
    mode: Mode = Mode.UNION

    def literals(self) -> tuple[float, ...]:
        """Numeric literals in slot order (primitive parameters, then depth)."""
        out: list[float] = []
        for prim in self.primitives:
            if isinstance(prim, Rect):
                out += [prim.width, prim.height]
            elif isinstance(prim, Circle):
                out.append(prim.radius)
            else:
                out += [prim.dx, prim.dy]
        out.append(self.depth)
        return tuple(out)


@dataclass(frozen=True)
class Program:
    features: tuple[Feature, ...]

    def __post_init__(self):
        if not self.features:
            raise ValueError("program needs at least one feature")
        if self.features[0].mode is not Mode.UNION:
            raise ValueError("first feature must be a UNION")
        literal_set = set(NUMBER_VALUES)
        for feat in self.features:
            if not any(not isinstance(p, Move) for p in feat.primitives):
                raise ValueError("feature sketch has no closed primitive")
            if any(v not in literal_set for v in feat.literals()):
                raise ValueError("dimension outside the literal grid")

    def to_source(self) -> str:
        """Canonical MiniQuery text; the mode keyword is always written."""
        words: list[str] = []
        for feat in self.features:
            words += ["PLANE", feat.plane.value]
            for prim in feat.primitives:
                if isinstance(prim, Rect):
                    words += ["RECT", number_lexeme(prim.width), number_lexeme(prim.height)]
                elif isinstance(prim, Circle):
                    words += ["CIRCLE", number_lexeme(prim.radius)]
                else:
                    words += ["MOVE", number_lexeme(prim.dx), number_lexeme(prim.dy)]
            words += ["EXTRUDE", number_lexeme(feat.depth), feat.mode.value]
        return " ".join(words)


class ParseError(Exception):
    """Syntax error at a token position.

    ``kind`` is one of ``missing-number``, ``dangling-keyword``,
    ``empty-sketch``, ``zero-feature``, ``unexpected-token``.
    """

    def __init__(self, kind: str, position: int, expected: str, found: str | None):
        super().__init__(f"{kind} at token {position}: expected {expected}, found {found or 'end of input'}")
        self.kind = kind
        self.position = position
        self.expected = expected
        self.found = found


_PRIM_ARITY = {"RECT": 2, "CIRCLE": 1, "MOVE": 2}


class _Parser:
    def __init__(self, ids: tuple[int, ...]):
        self.ids = ids
        self.pos = 0

    def peek(self) -> str | None:
        return VOCAB[self.ids[self.pos]] if self.pos < len(self.ids) else None

    def fail(self, kind: str, expected: str):
        raise ParseError(kind, self.pos, expected, self.peek())

    def number(self, after: str) -> float:
        if self.pos >= len(self.ids):
            self.fail("dangling-keyword", f"number after {after}")
        if classify_token(self.ids[self.pos]) is not TokenClass.NUMBER:
            self.fail("missing-number", f"number after {after}")
        value = float(VOCAB[self.ids[self.pos]])
        self.pos += 1
        return value

    def feature(self) -> Feature:
        self.pos += 1  # PLANE
        axis = self.peek()
        if axis is None:
            self.fail("dangling-keyword", "axis after PLANE")
        if axis not in AXES:
            self.fail("unexpected-token", "axis after PLANE")
        self.pos += 1
        prims: list[SketchPrimitive] = []
        while (lex := self.peek()) in _PRIM_ARITY:
            self.pos += 1
            if lex == "RECT":
                prims.append(Rect(self.number("RECT"), self.number("RECT")))
            elif lex == "CIRCLE":
                prims.append(Circle(self.number("CIRCLE")))
            else:
                prims.append(Move(self.number("MOVE"), self.number("MOVE")))
        if self.peek() != "EXTRUDE":
            if self.peek() is None and not prims:
                self.fail("dangling-keyword", "sketch primitive")
            self.fail("unexpected-token", "sketch primitive or EXTRUDE")
        if not any(not isinstance(p, Move) for p in prims):
            self.fail("empty-sketch", "RECT or CIRCLE before EXTRUDE")
        self.pos += 1
        depth = self.number("EXTRUDE")
        mode = Mode.UNION
        if self.peek() in ("UNION", "CUT"):
            mode = Mode(self.peek())
            self.pos += 1
        return Feature(Plane(axis), tuple(prims), depth, mode)

    def program(self) -> Program:
        features: list[Feature] = []
        while self.pos < len(self.ids):
            if self.peek() != "PLANE":
                self.fail("unexpected-token", "PLANE")
            feat = self.feature()
            if not features and feat.mode is Mode.CUT:
                raise ParseError("unexpected-token", self.pos - 1, "UNION or PLANE (nothing to cut)", "CUT")
            features.append(feat)
        if not features:
            self.fail("zero-feature", "PLANE")
        return Program(tuple(features))


def parse(code: TokenSeq) -> Program:
    """Parse a code segment (reasoning already stripped) into a Program."""
    return _Parser(code.ids).program()
