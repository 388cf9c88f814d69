"""Gated three-part reward: executability, IoU geometry, external evaluation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

from ..corpus import StructPromptError, TaskSpec, parse_struct_prompt
from ..geometry import Solid, iou
from ..lang import (
    EmptyResult,
    OutOfWorld,
    ParseError,
    Program,
    TokenSeq,
    UnknownLexeme,
    execute,
    parse,
    strip_reasoning,
    tokenize,
)

log = logging.getLogger(__name__)

REFERENCE_FRAME_MISALIGNMENT = "REFERENCE_FRAME_MISALIGNMENT"
PARAMETRIC_MISASSIGNMENT = "PARAMETRIC_MISASSIGNMENT"
FEATURE_COUNT_MISMATCH = "FEATURE_COUNT_MISMATCH"
MODE_MISMATCH = "MODE_MISMATCH"
PRIMITIVE_MISMATCH = "PRIMITIVE_MISMATCH"
UNPARSEABLE = "UNPARSEABLE"
VIOLATION_TAGS = frozenset({
    REFERENCE_FRAME_MISALIGNMENT, PARAMETRIC_MISASSIGNMENT,
    FEATURE_COUNT_MISMATCH, MODE_MISMATCH, PRIMITIVE_MISMATCH, UNPARSEABLE,
})
MAJOR_TAGS = frozenset({REFERENCE_FRAME_MISALIGNMENT, PARAMETRIC_MISASSIGNMENT, UNPARSEABLE})

EVAL_FALLBACK = "EVAL_FALLBACK"


class ScoreOutOfRange(ValueError):
    pass


@dataclass(frozen=True)
class RewardWeights:
    lambda_geom: float = 0.7
    lambda_eval: float = 0.3

    def __post_init__(self):
        if self.lambda_geom < 0 or self.lambda_eval < 0:
            raise ValueError("reward weights must be non-negative")
        if abs(self.lambda_geom + self.lambda_eval - 1.0) > 1e-12:
            raise ValueError("reward weights must sum to 1")


@dataclass(frozen=True)
class Deductions:
    major: int = 40
    minor: int = 10


@dataclass(frozen=True)
class Violation:
    tag: str
    detail: str = ""


@dataclass(frozen=True)
class EvalRequest:
    program: str
    nl_prompt: str
    struct_prompt: str

    def to_json(self) -> dict:
        return {"program": self.program, "nl_prompt": self.nl_prompt, "struct_prompt": self.struct_prompt}


@dataclass(frozen=True)
class EvalResponse:
    score: int
    violations: tuple[Violation, ...] = ()

    def __post_init__(self):
        if not 0 <= self.score <= 100:
            raise ScoreOutOfRange(f"score {self.score} outside [0, 100]")

    @property
    def tags(self) -> list[str]:
        return [v.tag for v in self.violations]

    def to_json(self) -> dict:
        return {"score": self.score, "violations": [{"tag": v.tag, "detail": v.detail} for v in self.violations]}


@dataclass
class RewardBreakdown:
    r_exec: int
    r_geom: float
    r_eval: float
    total: float
    diagnostics: list[str] = field(default_factory=list)


@dataclass
class ExecResult:
    r: int
    solid: Optional[Solid]
    diagnostics: list[str]
    program: Optional[Program] = None


def exec_reward(seq: TokenSeq | str, resolution: int = 64) -> ExecResult:
    """1 iff the code segment lexes, parses and executes to a non-empty solid."""
    if isinstance(seq, str):
        try:
            seq = tokenize(seq)
        except UnknownLexeme as exc:
            return ExecResult(0, None, [f"LEX:{exc.lexeme}"])
    code = strip_reasoning(seq)
    if len(code) == 0:
        return ExecResult(0, None, ["EMPTY:no-code"])
    try:
        program = parse(code)
    except ParseError as exc:
        return ExecResult(0, None, [f"PARSE:{exc.kind}"])
    try:
        solid = execute(program, resolution)
    except EmptyResult:
        return ExecResult(0, None, ["RUNTIME:EmptyResult"])
    except OutOfWorld:
        return ExecResult(0, None, ["RUNTIME:OutOfWorld"])
    return ExecResult(1, solid, [], program)


def geom_reward(gen: Solid, gt: Solid, resolution: int = 64) -> float:
    return iou(gen, gt, resolution)


def score_against(program: Program, reference: Program, deductions: Deductions = Deductions()) -> EvalResponse:
    """Deduction-table score of ``program`` against a reference, features matched by position."""
    violations: list[Violation] = []
    n_gen, n_ref = len(program.features), len(reference.features)
    if n_gen != n_ref:
        violations.append(Violation(FEATURE_COUNT_MISMATCH, f"{n_gen} features, expected {n_ref}"))
    for i, (got, want) in enumerate(zip(program.features, reference.features), 1):
        if got.plane is not want.plane:
            violations.append(Violation(
                REFERENCE_FRAME_MISALIGNMENT, f"feature {i}: plane {got.plane.value}, expected {want.plane.value}"))
        if got.literals() != want.literals():
            how = "swapped slots" if sorted(got.literals()) == sorted(want.literals()) else "wrong values"
            violations.append(Violation(PARAMETRIC_MISASSIGNMENT, f"feature {i}: {how}"))
        if [type(p) for p in got.primitives] != [type(p) for p in want.primitives]:
            violations.append(Violation(PRIMITIVE_MISMATCH, f"feature {i}: sketch primitives differ"))
        if got.mode is not want.mode:
            violations.append(Violation(MODE_MISMATCH, f"feature {i}: {got.mode.value}, expected {want.mode.value}"))
    score = 100
    for v in violations:
        score -= deductions.major if v.tag in MAJOR_TAGS else deductions.minor
    return EvalResponse(max(score, 0), tuple(violations))


def score_struct(program: Program | None, struct_prompt: str, deductions: Deductions = Deductions()) -> EvalResponse:
    """Score against a structured prompt; an unparseable program scores 0."""
    reference = parse_struct_prompt(struct_prompt)
    if program is None:
        return EvalResponse(0, (Violation(UNPARSEABLE, "program did not parse"),))
    return score_against(program, reference, deductions)


def heuristic_score(program: Program, task: TaskSpec, deductions: Deductions = Deductions()) -> EvalResponse:
    """Deterministic stand-in for an LLM judge."""
    return score_struct(program, task.struct_prompt, deductions)


def eval_reward(response: EvalResponse | int) -> float:
    score = response.score if isinstance(response, EvalResponse) else response
    if not 0 <= score <= 100:
        raise ScoreOutOfRange(f"score {score} outside [0, 100]")
    return score / 100


def total_reward(r_exec: int, r_geom: float, r_eval: float, w: RewardWeights = RewardWeights()) -> float:
    return r_exec * (w.lambda_geom * r_geom + w.lambda_eval * r_eval)


class RewardEngine:
    """Scores rollouts against tasks, caching reference geometry per task id.

    With ``eval_endpoint`` set the evaluation score comes from the remote
    service; any remote failure falls back to the local heuristic and tags
    the breakdown with ``EVAL_FALLBACK``.
    """

    def __init__(self, weights: RewardWeights = RewardWeights(), deductions: Deductions = Deductions(),
                 resolution: int = 64, eval_endpoint: str | None = None, eval_timeout: float = 2.0):
        self.weights = weights
        self.deductions = deductions
        self.resolution = resolution
        self.eval_endpoint = eval_endpoint
        self.eval_timeout = eval_timeout
        self._gt: dict[str, Solid] = {}

    def reference_solid(self, task: TaskSpec) -> Solid:
        solid = self._gt.get(task.id)
        if solid is None:
            solid = execute(task.program(), self.resolution)
            self._gt[task.id] = solid
        return solid

    def _evaluate(self, result: ExecResult, task: TaskSpec, diagnostics: list[str]) -> EvalResponse:
        if self.eval_endpoint:
            from .remote import RemoteEvalError, score_remote

            request = EvalRequest(result.program.to_source(), task.nl_prompt, task.struct_prompt)
            try:
                return score_remote(request, self.eval_endpoint, self.eval_timeout)
            except RemoteEvalError as exc:
                log.warning("remote evaluator failed (%s); using heuristic", exc)
                diagnostics.append(EVAL_FALLBACK)
        return heuristic_score(result.program, task, self.deductions)

    def score(self, seq: TokenSeq, task: TaskSpec) -> RewardBreakdown:
        result = exec_reward(seq, self.resolution)
        diagnostics = list(result.diagnostics)
        if result.r == 0:
            return RewardBreakdown(0, 0.0, 0.0, 0.0, diagnostics)
        r_geom = geom_reward(result.solid, self.reference_solid(task), self.resolution)
        response = self._evaluate(result, task, diagnostics)
        diagnostics += response.tags
        r_eval = eval_reward(response)
        return RewardBreakdown(1, r_geom, r_eval, total_reward(1, r_geom, r_eval, self.weights), diagnostics)


__all__ = [
    "Deductions", "EvalRequest", "EvalResponse", "ExecResult", "RewardBreakdown", "RewardEngine",
    "RewardWeights", "ScoreOutOfRange", "StructPromptError", "Violation", "eval_reward", "exec_reward",
    "geom_reward", "heuristic_score", "score_against", "score_struct", "total_reward",
]
