"""Vocabulary, tokenizer and token-class lookup for MiniQuery.

The vocabulary is closed and ships as ``vocab.txt`` next to this module; a
token id is the line index of its lexeme in that file.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from importlib import resources

THINK_OPEN = "<Think>"
THINK_CLOSE = "</Think>"
EOS = "<EOS>"

KEYWORDS = ("PLANE", "RECT", "CIRCLE", "MOVE", "EXTRUDE", "UNION", "CUT")
AXES = ("XY", "XZ", "YZ")
# 0.25, 0.5, ..., 8.0 rendered with str(float)
NUMBER_VALUES = tuple(0.25 * i for i in range(1, 33))
NUMBER_LEXEMES = tuple(str(v) for v in NUMBER_VALUES)


class TokenClass(Enum):
    KEYWORD = "KEYWORD"
    NUMBER = "NUMBER"
    DELIMITER = "DELIMITER"
    AXIS = "AXIS"
    EOS = "EOS"
    THINK_WORD = "THINK_WORD"


class UnknownLexeme(ValueError):
    def __init__(self, position: int, lexeme: str):
        super().__init__(f"unknown lexeme {lexeme!r} at position {position}")
        self.position = position
        self.lexeme = lexeme


def _load_vocab() -> tuple[str, ...]:
    text = resources.files(__package__).joinpath("vocab.txt").read_text(encoding="utf-8")
    return tuple(line for line in text.split("\n") if line)


def _lexeme_class(lexeme: str) -> TokenClass:
    if lexeme in (THINK_OPEN, THINK_CLOSE):
        return TokenClass.DELIMITER
    if lexeme == EOS:
        return TokenClass.EOS
    if lexeme in KEYWORDS:
        return TokenClass.KEYWORD
    if lexeme in AXES:
        return TokenClass.AXIS
    if lexeme in NUMBER_LEXEMES:
        return TokenClass.NUMBER
    return TokenClass.THINK_WORD


VOCAB: tuple[str, ...] = _load_vocab()
VOCAB_SIZE = len(VOCAB)
LEXEME_TO_ID: dict[str, int] = {lex: i for i, lex in enumerate(VOCAB)}
_CLASSES: tuple[TokenClass, ...] = tuple(_lexeme_class(lex) for lex in VOCAB)

THINK_OPEN_ID = LEXEME_TO_ID[THINK_OPEN]
THINK_CLOSE_ID = LEXEME_TO_ID[THINK_CLOSE]
EOS_ID = LEXEME_TO_ID[EOS]

assert len(set(VOCAB)) == VOCAB_SIZE, "duplicate lexeme in vocab.txt"
assert all(lex in LEXEME_TO_ID for lex in KEYWORDS + AXES + NUMBER_LEXEMES)
assert sum(c is TokenClass.NUMBER for c in _CLASSES) == len(NUMBER_LEXEMES)


@dataclass(frozen=True)
class Token:
    id: int
    lexeme: str
    cls: TokenClass

    @classmethod
    def from_id(cls, token_id: int) -> "Token":
        return cls(token_id, VOCAB[token_id], _CLASSES[token_id])


@dataclass(frozen=True)
class TokenSeq:
    """An ordered run of vocabulary tokens.

    ``truncated`` marks a generation that hit the length cap before EOS.
    """

    ids: tuple[int, ...] = ()
    truncated: bool = False

    @classmethod
    def from_ids(cls, ids, truncated: bool = False) -> "TokenSeq":
        return cls(tuple(int(i) for i in ids), truncated)

    @property
    def tokens(self) -> list[Token]:
        return [Token.from_id(i) for i in self.ids]

    @property
    def lexemes(self) -> list[str]:
        return [VOCAB[i] for i in self.ids]

    def __len__(self) -> int:
        return len(self.ids)

    def __add__(self, other: "TokenSeq") -> "TokenSeq":
        return TokenSeq(self.ids + other.ids, other.truncated)

    def text(self) -> str:
        return detokenize(self)


def tokenize(text: str) -> TokenSeq:
    ids = []
    for position, lexeme in enumerate(text.split()):
        try:
            ids.append(LEXEME_TO_ID[lexeme])
        except KeyError:
            raise UnknownLexeme(position, lexeme) from None
    return TokenSeq(tuple(ids), False)


def detokenize(seq: TokenSeq) -> str:
    return " ".join(VOCAB[i] for i in seq.ids)


def classify_token(token_id: int) -> TokenClass:
    return _CLASSES[token_id]


def number_lexeme(value: float) -> str:
    """Lexeme of a quantized literal; raises ValueError off the grid."""
    lex = str(float(value))
    if lex not in NUMBER_LEXEMES:
        raise ValueError(f"{value!r} is not a MiniQuery literal")
    return lex


def strip_reasoning(seq: TokenSeq) -> TokenSeq:
    """Return the code segment: tokens after the first ``</Think>``, up to EOS.

    Without a closing delimiter the whole sequence minus EOS is returned,
    unless the reasoning was opened and never closed, in which case the code
    segment is empty.
    """
    ids = seq.ids
    if THINK_CLOSE_ID in ids:
        ids = ids[ids.index(THINK_CLOSE_ID) + 1:]
    elif THINK_OPEN_ID in ids:
        return TokenSeq((), seq.truncated)
    if EOS_ID in ids:
        ids = ids[: ids.index(EOS_ID)]
    return TokenSeq(ids, seq.truncated)

