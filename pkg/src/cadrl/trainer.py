"""Cold-start supervised training and group-relative RL post-training.

The RL objective per token is the stretched clipped surrogate
``min(r * A, clip(r, eps_low, eps_high) * A)`` with importance ratio
``r = exp(logp - logp_old)``; per-token losses are aggregated with the
precision-weighted per-sample mean, and truncated rollouts are dropped
before any reward or loss is computed.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .corpus import TaskSpec, encode_prompt, make_cot_trace
from .lang import (
    EOS_ID,
    THINK_CLOSE_ID,
    THINK_OPEN_ID,
    ExecutionError,
    ParseError,
    TokenClass,
    TokenSeq,
    classify_token,
    execute,
    parse,
    tokenize,
)
from .policy import Policy, Rollout, grad_logprob, logprob, sample_rollout
from .reward import RewardEngine

log = logging.getLogger(__name__)

PROMPT_MODES = ("natural", "structured", "both")


class MalformedExample(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


@dataclass
class TrainerConfig:
    group_size: int = 8
    eps_low: float = 0.6
    eps_high: float = 1.8
    t_max: int = 80
    learning_rate_coldstart: float = 1e-2
    learning_rate_rl: float = 1e-3
    omega_number: float = 2.0
    adv_epsilon: float = 1e-6
    batch_size: int = 4
    seed: int = 0
    k: int = 12
    temperature: float = 1.0
    prompt_mode: str = "structured"
    coldstart_steps: int = 2000
    rl_steps: int = 500
    coldstart_precision: bool = False

    def __post_init__(self):
        if not 0 < self.eps_low < 1 < self.eps_high:
            raise ValueError("need 0 < eps_low < 1 < eps_high")
        if self.omega_number < 1:
            raise ValueError("omega_number must be >= 1")
        if self.group_size < 2:
            raise ValueError("group_size must be >= 2")
        if self.prompt_mode not in PROMPT_MODES:
            raise ValueError(f"prompt_mode must be one of {PROMPT_MODES}")
        if self.t_max < 1 or self.batch_size < 1 or self.k < 1:
            raise ValueError("t_max, batch_size and k must be positive")


def task_prompt(task: TaskSpec, mode: str) -> TokenSeq:
    if mode == "natural":
        return encode_prompt(task.nl_prompt)
    if mode == "structured":
        return encode_prompt(task.struct_prompt)
    if mode == "both":
        return encode_prompt(task.nl_prompt) + encode_prompt(task.struct_prompt)
    raise ValueError(f"unknown prompt mode {mode!r}")


@dataclass(frozen=True)
class TrainingExample:
    """(x, y, r, c): natural prompt, structured prompt, reasoning, code."""

    x: TokenSeq
    y: TokenSeq
    r: TokenSeq
    c: TokenSeq

    @classmethod
    def from_task(cls, task: TaskSpec) -> "TrainingExample":
        program = task.program()
        return cls(encode_prompt(task.nl_prompt), encode_prompt(task.struct_prompt),
                   tokenize(make_cot_trace(program)), tokenize(program.to_source()))

    def prompt(self, mode: str = "structured") -> TokenSeq:
        return {"natural": self.x, "structured": self.y, "both": self.x + self.y}[mode]

    def target(self) -> TokenSeq:
        seq = TokenSeq((THINK_OPEN_ID,) + self.r.ids + (THINK_CLOSE_ID,) + self.c.ids + (EOS_ID,))
        for tid in self.r.ids:
            if classify_token(tid) not in (TokenClass.THINK_WORD, TokenClass.NUMBER):
                raise MalformedExample("reasoning segment holds a non-reasoning token")
        try:
            execute(parse(self.c), 32)
        except (ParseError, ExecutionError) as exc:
            raise MalformedExample(f"code segment does not execute: {exc}") from None
        return seq


# ---------------------------------------------------------------- losses

def precision_weights(seq: TokenSeq, omega_number: float) -> np.ndarray:
    """omega_number on NUMBER tokens of the code segment, 1 elsewhere."""
    ids = seq.ids
    w = np.ones(len(ids))
    if THINK_CLOSE_ID in ids:
        code_start = ids.index(THINK_CLOSE_ID) + 1
    elif THINK_OPEN_ID in ids:
        return w
    else:
        code_start = 0
    for t in range(code_start, len(ids)):
        if classify_token(ids[t]) is TokenClass.NUMBER:
            w[t] = omega_number
    return w


def precision_loss(losses: Sequence[np.ndarray], weights: Sequence[np.ndarray]) -> float:
    """Batch mean of per-sample weighted means, each normalized by its weight sum."""
    if len(losses) != len(weights):
        raise LengthMismatch("need one weight vector per sample")
    if not losses:
        return 0.0
    total = 0.0
    for ell, w in zip(losses, weights):
        ell, w = np.asarray(ell, dtype=float), np.asarray(w, dtype=float)
        if ell.shape != w.shape:
            raise LengthMismatch(f"loss length {ell.shape} != weight length {w.shape}")
        if np.any(w <= 0):
            raise ValueError("precision weights must be positive")
        total += float((w * ell).sum() / w.sum())
    return total / len(losses)


def coldstart_loss(policy: Policy, batch: Sequence[TrainingExample], prompt_mode: str = "structured",
                   omega_number: Optional[float] = None) -> tuple[float, np.ndarray]:
    """Mean over examples of the summed target NLL, with its gradient.

    With ``omega_number`` set, per-token NLLs are aggregated by
    :func:`precision_loss` instead.
    """
    if not batch:
        raise MalformedExample("empty batch")
    loss = 0.0
    grad = np.zeros_like(policy.params)
    n = len(batch)
    for ex in batch:
        prompt, target = ex.prompt(prompt_mode), ex.target()
        nll = -logprob(policy, prompt, target)
        if omega_number is None:
            loss += float(nll.sum()) / n
            coeff = np.full(len(target), -1.0 / n)
        else:
            w = precision_weights(target, omega_number)
            loss += float((w * nll).sum() / w.sum()) / n
            coeff = -w / w.sum() / n
        grad += grad_logprob(policy, prompt, target, coeff)
    return loss, grad


def group_advantages(rewards, adv_epsilon: float = 1e-6) -> np.ndarray:
    r = np.asarray(rewards, dtype=float)
    return (r - r.mean()) / (r.std() + adv_epsilon)


def trs_surrogate(ratio, advantage, eps_low: float, eps_high: float):
    """Per-token stretched clipped objective min(r*A, clip(r, lo, hi)*A)."""
    ratio = np.asarray(ratio, dtype=float)
    return np.minimum(ratio * advantage, np.clip(ratio, eps_low, eps_high) * advantage)


def trs_surrogate_dratio(ratio, advantage, eps_low: float, eps_high: float):
    """d objective / d ratio: A where the unclipped term is selected, else 0."""
    ratio = np.asarray(ratio, dtype=float)
    advantage = np.broadcast_to(np.asarray(advantage, dtype=float), ratio.shape)
    unclipped = ratio * advantage <= np.clip(ratio, eps_low, eps_high) * advantage
    return np.where(unclipped, advantage, 0.0)


Surrogate = Callable[[np.ndarray, float], tuple[np.ndarray, np.ndarray]]


def make_trs(eps_low: float, eps_high: float) -> Surrogate:
    def surrogate(ratio, advantage):
        return (trs_surrogate(ratio, advantage, eps_low, eps_high),
                trs_surrogate_dratio(ratio, advantage, eps_low, eps_high))
    return surrogate


def filter_overlong(rollouts: Iterable[Rollout]) -> tuple[list[Rollout], int]:
    kept, dropped = [], 0
    for r in rollouts:
        if r.truncated:
            dropped += 1
        else:
            kept.append(r)
    return kept, dropped


@dataclass
class ScoredGroup:
    task_id: str
    rollouts: list[Rollout]
    advantages: np.ndarray
    filtered: int = 0


def score_groups(groups: Sequence[Sequence[Rollout]], tasks: Sequence[TaskSpec], engine: RewardEngine,
                 adv_epsilon: float) -> list[ScoredGroup]:
    """Drop truncated rollouts, score the rest, standardize within each group."""
    out = []
    for rollouts, task in zip(groups, tasks):
        kept, dropped = filter_overlong(rollouts)
        for r in kept:
            r.reward = engine.score(r.seq, task)
        if kept:
            adv = group_advantages([r.reward.total for r in kept], adv_epsilon)
        else:
            log.debug("group for %s fully filtered as overlong; skipped", task.id)
            adv = np.zeros(0)
        out.append(ScoredGroup(task.id, kept, adv, dropped))
    return out


def rl_loss(policy: Policy, scored: Sequence[ScoredGroup], omega_number: float,
            surrogate: Surrogate) -> tuple[float, np.ndarray]:
    """Negated precision-aggregated surrogate over all kept rollouts, with gradient."""
    items = [(r, a) for g in scored for r, a in zip(g.rollouts, g.advantages)]
    grad = np.zeros_like(policy.params)
    if not items:
        return 0.0, grad
    n = len(items)
    loss = 0.0
    for rollout, adv in items:
        lp = logprob(policy, rollout.prompt, rollout.seq)
        ratio = np.exp(lp - rollout.logprobs_old)
        value, dratio = surrogate(ratio, float(adv))
        w = precision_weights(rollout.seq, omega_number)
        z = w.sum()
        loss += float((w * -value).sum() / z) / n
        coeff = -(w / z / n) * dratio * ratio
        grad += grad_logprob(policy, rollout.prompt, rollout.seq, coeff)
    return loss, grad


@dataclass
class UpdateReport:
    step: int
    mean_reward: float
    mean_exec: float
    surrogate_loss: float
    fraction_filtered: float
    grad_norm: float
    wall_clock: float
    skipped_groups: int = 0

    def to_json(self) -> dict:
        return asdict(self)


def sample_groups(policy: Policy, tasks: Sequence[TaskSpec], config: TrainerConfig, step: int) -> list[list[Rollout]]:
    rng = np.random.default_rng([config.seed, step])
    groups = []
    for task in tasks:
        prompt = task_prompt(task, config.prompt_mode)
        groups.append([sample_rollout(policy, prompt, config.t_max, config.temperature, rng, task.id)
                       for _ in range(config.group_size)])
    return groups


def rl_step(policy: Policy, tasks: Sequence[TaskSpec], config: TrainerConfig, engine: RewardEngine,
            step: int = 0, surrogate: Optional[Surrogate] = None) -> UpdateReport:
    """One sample-score-update round; updates ``policy.params`` in place."""
    if not tasks:
        raise ValueError("rl_step needs at least one task")
    t0 = time.perf_counter()
    surrogate = surrogate or make_trs(config.eps_low, config.eps_high)
    groups = sample_groups(policy, tasks, config, step)
    scored = score_groups(groups, tasks, engine, config.adv_epsilon)
    loss, grad = rl_loss(policy, scored, config.omega_number, surrogate)
    policy.params -= config.learning_rate_rl * grad
    kept = [r for g in scored for r in g.rollouts]
    total = sum(len(g) for g in groups)
    return UpdateReport(
        step=step,
        mean_reward=float(np.mean([r.reward.total for r in kept])) if kept else 0.0,
        mean_exec=float(np.mean([r.reward.r_exec for r in kept])) if kept else 0.0,
        surrogate_loss=loss,
        fraction_filtered=(total - len(kept)) / total,
        grad_norm=float(np.linalg.norm(grad)),
        wall_clock=time.perf_counter() - t0,
        skipped_groups=sum(1 for g in scored if not g.rollouts),
    )


def fd_gradcheck(params: np.ndarray, loss_builder: Callable[[np.ndarray], tuple[float, np.ndarray]],
                 n_cases: int = 20, h: float = 1e-4, seed: int = 0) -> float:
    """Worst relative error between analytic and central-difference gradients.

    Coordinates are drawn from those with a non-zero analytic gradient.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    params = np.asarray(params, dtype=float)
    _, grad = loss_builder(params)
    candidates = np.flatnonzero(grad)
    if candidates.size == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    coords = rng.choice(candidates, size=min(n_cases, candidates.size), replace=False)
    worst = 0.0
    for i in coords:
        e = np.zeros_like(params)
        e[i] = h
        fd = (loss_builder(params + e)[0] - loss_builder(params - e)[0]) / (2 * h)
        denom = max(abs(fd), abs(grad[i]), 1e-12)
        worst = max(worst, abs(fd - grad[i]) / denom)
    return worst


# ---------------------------------------------------------------- loops

def train_coldstart(policy: Policy, examples: Sequence[TrainingExample], config: TrainerConfig,
                    steps: Optional[int] = None, on_step: Optional[Callable[[UpdateReport], None]] = None) -> list[UpdateReport]:
    steps = config.coldstart_steps if steps is None else steps
    rng = np.random.default_rng(config.seed)
    omega = config.omega_number if config.coldstart_precision else None
    reports = []
    for step in range(steps):
        t0 = time.perf_counter()
        if len(examples) <= config.batch_size:
            batch = list(examples)
        else:
            batch = [examples[i] for i in rng.choice(len(examples), config.batch_size, replace=False)]
        loss, grad = coldstart_loss(policy, batch, config.prompt_mode, omega)
        policy.params -= config.learning_rate_coldstart * grad
        rep = UpdateReport(step, 0.0, 0.0, loss, 0.0, float(np.linalg.norm(grad)), time.perf_counter() - t0)
        reports.append(rep)
        if on_step:
            on_step(rep)
    return reports


def train_rl(policy: Policy, tasks: Sequence[TaskSpec], config: TrainerConfig, engine: RewardEngine,
             steps: Optional[int] = None, on_step: Optional[Callable[[UpdateReport], None]] = None) -> list[UpdateReport]:
    steps = config.rl_steps if steps is None else steps
    rng = np.random.default_rng([config.seed, 1 << 20])
    reports = []
    for step in range(steps):
        if len(tasks) <= config.batch_size:
            batch = list(tasks)
        else:
            batch = [tasks[i] for i in rng.choice(len(tasks), config.batch_size, replace=False)]
        rep = rl_step(policy, batch, config, engine, step)
        reports.append(rep)
        if on_step:
            on_step(rep)
    return reports


__all__ = [
    "LengthMismatch", "MalformedExample", "ScoredGroup", "TrainerConfig", "TrainingExample", "UpdateReport",
    "coldstart_loss", "fd_gradcheck", "filter_overlong", "group_advantages", "make_trs", "precision_loss",
    "precision_weights", "rl_loss", "rl_step", "sample_groups", "score_groups", "task_prompt",
    "train_coldstart", "train_rl", "trs_surrogate", "trs_surrogate_dratio",
]
