"""Deterministic ExeCAD-style task corpus.

Programs are sampled first; the structured prompt, the natural-language
prompt and the reasoning trace are all derived from the program, so every
task is aligned by construction.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .lang import (
    EOS_ID,
    THINK_CLOSE_ID,
    THINK_OPEN_ID,
    Circle,
    ExecutionError,
    Feature,
    Mode,
    Move,
    ParseError,
    Plane,
    Program,
    Rect,
    TokenSeq,
    UnknownLexeme,
    execute,
    parse_source,
    tokenize,
)
from .lang.tokens import LEXEME_TO_ID, NUMBER_LEXEMES, TokenClass, classify_token, number_lexeme

DEFAULT_MIX = (0.5, 0.3, 0.2)
VALIDATION_RESOLUTION = 32
FIELDS = ("id", "nl_prompt", "struct_prompt", "program", "difficulty", "split")


class CorpusError(Exception):
    pass


class IOFailure(CorpusError):
    pass


class SchemaViolation(CorpusError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line


class InvalidProgram(CorpusError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line


class StructPromptError(ValueError):
    pass


@dataclass(frozen=True)
class TaskSpec:
    id: str
    nl_prompt: str
    struct_prompt: str
    reference_program: str
    difficulty: int
    split: str

    def program(self) -> Program:
        return parse_source(self.reference_program)

    def to_record(self) -> dict:
        rec = asdict(self)
        rec["program"] = rec.pop("reference_program")
        return {k: rec[k] for k in FIELDS}


# ---------------------------------------------------------------- prompts

def _fmt2(v: float) -> str:
    return f"{v:.2f}"


def derive_struct_prompt(program: Program) -> str:
    """Canonical structured prompt, one line per feature; lossless."""
    lines = []
    for i, feat in enumerate(program.features, 1):
        prims = []
        for p in feat.primitives:
            if isinstance(p, Rect):
                prims.append(f"rect {_fmt2(p.width)} x {_fmt2(p.height)}")
            elif isinstance(p, Circle):
                prims.append(f"circle {_fmt2(p.radius)}")
            else:
                prims.append(f"move {_fmt2(p.dx)} {_fmt2(p.dy)}")
        lines.append(
            f"feature {i}: plane {feat.plane.value}; sketch {', '.join(prims)}; "
            f"extrude {_fmt2(feat.depth)}; {feat.mode.value.lower()}"
        )
    return "\n".join(lines)


_NUM = r"(\d+\.\d{2})"
_LINE_RE = re.compile(r"feature (\d+): plane (XY|XZ|YZ); sketch (.+); extrude " + _NUM + r"; (union|cut)")
_PRIM_RES = (
    (re.compile(r"rect " + _NUM + " x " + _NUM), lambda m: Rect(float(m[1]), float(m[2]))),
    (re.compile(r"circle " + _NUM), lambda m: Circle(float(m[1]))),
    (re.compile(r"move " + _NUM + " " + _NUM), lambda m: Move(float(m[1]), float(m[2]))),
)


def parse_struct_prompt(text: str) -> Program:
    features = []
    for n, line in enumerate(text.split("\n"), 1):
        m = _LINE_RE.fullmatch(line)
        if m is None or int(m[1]) != n:
            raise StructPromptError(f"malformed structured prompt line {n}: {line!r}")
        prims = []
        for chunk in m[3].split(", "):
            for rx, build in _PRIM_RES:
                pm = rx.fullmatch(chunk)
                if pm:
                    prims.append(build(pm))
                    break
            else:
                raise StructPromptError(f"unknown sketch primitive {chunk!r}")
        features.append(Feature(Plane(m[2]), tuple(prims), float(m[4]), Mode(m[5].upper())))
    try:
        return Program(tuple(features))
    except ValueError as exc:
        raise StructPromptError(str(exc)) from None


_RECT_PHRASES = (
    "a rectangular plate {w} by {h}",
    "a {w} by {h} rectangle",
    "a block footprint of {w} x {h}",
    "a rectangle {w} wide and {h} tall",
    "a {w} by {h} rectangular profile",
)
_CIRCLE_PHRASES = (
    "a disc of radius {r}",
    "a circle with radius {r}",
    "a round profile of radius {r}",
    "a cylinder base of radius {r}",
    "a circular sketch with radius {r}",
)
_UNION_FRAMES = (
    "{lead} {shape} on the {plane} plane{move} and give it a thickness of {d}.",
    "{lead} {shape}{move} on plane {plane}, extruded by {d}.",
    "{lead} {shape} in the {plane} plane{move} and extrude it {d}.",
    "{lead} {shape} sketched on {plane}{move}, pulled up {d}.",
    "{lead} {shape} on the {plane} plane{move} with a height of {d}.",
)
_CUT_FRAMES = (
    "Then cut {shape} on the {plane} plane{move} to a depth of {d}.",
    "Remove {shape}{move} on plane {plane}, cutting {d} deep.",
    "Subtract {shape} sketched in {plane}{move}, {d} deep.",
    "Make a hole from {shape} on the {plane} plane{move}, depth {d}.",
    "Then cut away {shape} in the {plane} plane{move} over a depth of {d}.",
)


def derive_nl_prompt(program: Program, rng: np.random.Generator | int) -> str:
    """Templated paraphrase; every numeric literal appears verbatim."""
    rng = np.random.default_rng(rng)
    sentences = []
    for i, feat in enumerate(program.features):
        shape = ""
        for p in feat.primitives:
            if isinstance(p, Move):
                continue
            if isinstance(p, Rect):
                shape = _RECT_PHRASES[rng.integers(len(_RECT_PHRASES))].format(
                    w=number_lexeme(p.width), h=number_lexeme(p.height))
            else:
                shape = _CIRCLE_PHRASES[rng.integers(len(_CIRCLE_PHRASES))].format(r=number_lexeme(p.radius))
        moves = [p for p in feat.primitives if isinstance(p, Move)]
        move = ""
        if moves:
            move = " shifted by " + " and ".join(f"{number_lexeme(m.dx)} and {number_lexeme(m.dy)}" for m in moves)
        shapes = [p for p in feat.primitives if not isinstance(p, Move)]
        if len(shapes) > 1:
            # rare multi-shape sketches: list every extra profile explicitly
            extra = []
            for p in shapes[:-1]:
                if isinstance(p, Rect):
                    extra.append(f"a {number_lexeme(p.width)} by {number_lexeme(p.height)} rectangle")
                else:
                    extra.append(f"a circle with radius {number_lexeme(p.radius)}")
            shape = " together with ".join(extra + [shape])
        frames = _CUT_FRAMES if feat.mode is Mode.CUT else _UNION_FRAMES
        lead = "Create" if i == 0 else "Then add"
        frame = frames[rng.integers(len(frames))]
        sentences.append(frame.format(lead=lead, shape=shape, plane=feat.plane.value,
                                      move=move, d=number_lexeme(feat.depth)))
    return " ".join(sentences)


def make_cot_trace(program: Program) -> str:
    """One narration sentence per feature, in reasoning-vocabulary words."""
    words: list[str] = []
    n = len(program.features)
    for i, feat in enumerate(program.features):
        words.append("first" if i == 0 else ("finally" if i == n - 1 else "then"))
        words.append(feat.plane.value.lower())
        for p in feat.primitives:
            if isinstance(p, Rect):
                words += ["rect", number_lexeme(p.width), number_lexeme(p.height)]
            elif isinstance(p, Circle):
                words += ["circle", number_lexeme(p.radius)]
            else:
                words += ["move", number_lexeme(p.dx), number_lexeme(p.dy)]
        words += ["extrude", number_lexeme(feat.depth), "cut" if feat.mode is Mode.CUT else "add", "."]
    return " ".join(words)


_SYNONYMS = {
    "rectangular": "rect", "rectangle": "rect",
    "circular": "circle", "round": "circle", "cylinder": "circle",
    "union": "add", "remove": "cut", "subtract": "cut",
    "thickness": "extrude", "extruded": "extrude", "height": "extrude", "depth": "extrude",
    "deep": "extrude", "shifted": "move", "offset": "move",
}
_WORD_RE = re.compile(r"\d+\.\d+|[A-Za-z]+")


def encode_prompt(text: str) -> TokenSeq:
    """Map prompt text onto the closed vocabulary for policy conditioning.

    Words are lower-cased and folded through a small synonym table; numbers
    on the literal grid become NUMBER tokens; everything else is dropped.
    """
    ids = []
    for word in _WORD_RE.findall(text):
        if word[0].isdigit():
            try:
                ids.append(LEXEME_TO_ID[number_lexeme(float(word))])
            except ValueError:
                pass
            continue
        word = _SYNONYMS.get(word.lower(), word.lower())
        tid = LEXEME_TO_ID.get(word)
        if tid is not None and classify_token(tid) is TokenClass.THINK_WORD:
            ids.append(tid)
    return TokenSeq(tuple(ids))


def target_sequence(program: Program) -> TokenSeq:
    """``<Think> trace </Think> code <EOS>`` for supervised cold start."""
    body = tokenize(make_cot_trace(program)).ids + (THINK_CLOSE_ID,) + tokenize(program.to_source()).ids
    return TokenSeq((THINK_OPEN_ID,) + body + (EOS_ID,))


# ---------------------------------------------------------------- generation

def split_for(task_id: str) -> str:
    digest = hashlib.sha256(task_id.encode("utf-8")).digest()
    return "test" if digest[0] % 10 == 0 else "train"


_WIDE = tuple(v for v in (float(x) for x in NUMBER_LEXEMES) if 0.5 <= v <= 4.0)
_RADIUS = tuple(v for v in (float(x) for x in NUMBER_LEXEMES) if 0.5 <= v <= 2.0)
_SMALL = tuple(v for v in (float(x) for x in NUMBER_LEXEMES) if 0.25 <= v <= 2.0)


def _pick(rng: np.random.Generator, grid: tuple[float, ...]) -> float:
    return float(grid[rng.integers(len(grid))])


def _sample_feature(rng: np.random.Generator, mode: Mode) -> Feature:
    plane = (Plane.XY, Plane.XZ, Plane.YZ)[rng.integers(3)]
    prims = []
    if rng.random() < 0.25:
        prims.append(Move(_pick(rng, _SMALL), _pick(rng, _SMALL)))
    if rng.random() < 0.6:
        prims.append(Rect(_pick(rng, _WIDE), _pick(rng, _WIDE)))
    else:
        prims.append(Circle(_pick(rng, _RADIUS)))
    return Feature(plane, tuple(prims), _pick(rng, _WIDE), mode)


def sample_program(rng: np.random.Generator, n_features: int) -> Program:
    """Sample until the program executes to a non-empty in-world solid."""
    while True:
        feats = [_sample_feature(rng, Mode.UNION)]
        for _ in range(n_features - 1):
            feats.append(_sample_feature(rng, Mode.CUT if rng.random() < 0.4 else Mode.UNION))
        program = Program(tuple(feats))
        try:
            execute(program, VALIDATION_RESOLUTION)
        except ExecutionError:
            continue
        return program


def generate_corpus(n: int, seed: int, difficulty_mix=DEFAULT_MIX) -> list[TaskSpec]:
    if n < 1:
        raise ValueError("n must be >= 1")
    mix = np.asarray(difficulty_mix, dtype=float)
    if mix.shape != (3,) or np.any(mix < 0) or mix.sum() <= 0:
        raise ValueError("difficulty_mix needs three non-negative weights")
    mix = mix / mix.sum()
    tasks = []
    for i in range(n):
        # one child stream per task keeps task i fixed as n grows
        rng = np.random.default_rng([seed, i])
        difficulty = int(rng.choice(3, p=mix)) + 1
        program = sample_program(rng, difficulty)
        task_id = f"s{seed}-{i:06d}"
        tasks.append(TaskSpec(
            id=task_id,
            nl_prompt=derive_nl_prompt(program, rng),
            struct_prompt=derive_struct_prompt(program),
            reference_program=program.to_source(),
            difficulty=difficulty,
            split=split_for(task_id),
        ))
    return tasks


# ---------------------------------------------------------------- I/O

def save_corpus(tasks, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for task in tasks:
            fh.write(json.dumps(task.to_record(), ensure_ascii=False) + "\n")


def _check_record(rec, line: int) -> TaskSpec:
    if not isinstance(rec, dict):
        raise SchemaViolation(line, "record is not a JSON object")
    for key in FIELDS:
        if key not in rec:
            raise SchemaViolation(line, f"missing field {key!r}")
    for key in ("id", "nl_prompt", "struct_prompt", "program", "split"):
        if not isinstance(rec[key], str):
            raise SchemaViolation(line, f"field {key!r} must be a string")
    if not isinstance(rec["difficulty"], int) or rec["difficulty"] not in (1, 2, 3):
        raise SchemaViolation(line, "difficulty must be 1, 2 or 3")
    if rec["split"] not in ("train", "test"):
        raise SchemaViolation(line, "split must be 'train' or 'test'")
    try:
        program = parse_source(rec["program"])
        execute(program, VALIDATION_RESOLUTION)
    except (UnknownLexeme, ParseError, ExecutionError, ValueError) as exc:
        raise InvalidProgram(line, f"reference program rejected: {exc}") from None
    if len(program.features) != rec["difficulty"]:
        raise SchemaViolation(line, "difficulty does not match the feature count")
    if rec["struct_prompt"] != derive_struct_prompt(program):
        raise SchemaViolation(line, "struct_prompt does not match the reference program")
    return TaskSpec(rec["id"], rec["nl_prompt"], rec["struct_prompt"], rec["program"],
                    rec["difficulty"], rec["split"])


def load_corpus(path) -> list[TaskSpec]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise IOFailure(f"cannot read corpus {path}: {exc}") from exc
    tasks = []
    for line_no, line in enumerate(text.split("\n"), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaViolation(line_no, f"invalid JSON: {exc.msg}") from None
        tasks.append(_check_record(rec, line_no))
    return tasks
