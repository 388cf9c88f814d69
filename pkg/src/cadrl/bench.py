"""Table-style metrics: IoU, mean/median Chamfer (x1e3) and executability."""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .corpus import TaskSpec, target_sequence
from .geometry import Solid, chamfer, iou, surface_points
from .lang import WORLD_HI, WORLD_LO, TokenSeq, execute
from .policy import Policy, greedy_decode
from .reward import exec_reward
from .trainer import task_prompt

Decoder = Callable[[TaskSpec, str], TokenSeq]
WORLD_DIAGONAL = math.sqrt(3) * (WORLD_HI - WORLD_LO)


def normalized_chamfer(gen: Solid, gt: Solid, n_points: int = 1024, seed: int = 0) -> float:
    """Chamfer after mapping both clouds by the reference bbox-to-unit-cube transform.

    The transform is shared (translate by the reference ``lo``, scale by its
    largest extent), so size errors in ``gen`` stay visible.
    """
    scale = float(np.max(gt.hi - gt.lo))
    a = (surface_points(gen, n_points, seed).points - gt.lo) / scale
    b = (surface_points(gt, n_points, seed).points - gt.lo) / scale
    return chamfer(a, b)


@dataclass
class TaskResult:
    task_id: str
    mode: str
    executable: bool
    iou: Optional[float]
    cd: Optional[float]
    diagnostics: list[str] = field(default_factory=list)


@dataclass
class ModeMetrics:
    iou_pct: float
    mean_cd_e3: Optional[float]
    med_cd_e3: Optional[float]
    exec_pct: float
    n_tasks: int
    n_scored: int


@dataclass
class MetricsReport(ModeMetrics):
    breakdown: dict[str, ModeMetrics] = field(default_factory=dict)
    penalize_failures: bool = False

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"

    def table(self) -> str:
        head = f"{'mode':<12}{'IoU(%)':>10}{'MeanCD':>10}{'MedCD':>10}{'Exec(%)':>10}{'N':>6}"
        rows = [head, "-" * len(head)]

        def fmt(x):
            return f"{x:10.2f}" if x is not None else f"{'-':>10}"

        for name, m in list(self.breakdown.items()) + [("all", self)]:
            rows.append(f"{name:<12}{fmt(m.iou_pct)}{fmt(m.mean_cd_e3)}{fmt(m.med_cd_e3)}{fmt(m.exec_pct)}{m.n_tasks:>6}")
        return "\n".join(rows) + "\n"


def evaluate_task(task: TaskSpec, mode: str, decoder: Decoder, resolution: int = 64, cd_points: int = 1024,
                  penalize_failures: bool = False) -> TaskResult:
    seq = decoder(task, mode)
    result = exec_reward(seq, resolution)
    if not result.r:
        if penalize_failures:
            gt = execute(task.program(), resolution)
            return TaskResult(task.id, mode, False, 0.0, WORLD_DIAGONAL / float(np.max(gt.hi - gt.lo)),
                              result.diagnostics)
        return TaskResult(task.id, mode, False, None, None, result.diagnostics)
    gt = execute(task.program(), resolution)
    return TaskResult(task.id, mode, True, iou(result.solid, gt, resolution),
                      normalized_chamfer(result.solid, gt, cd_points, seed=0))


def aggregate(results: Sequence[TaskResult]) -> ModeMetrics:
    n = len(results)
    scored = [r for r in results if r.iou is not None]
    n_exec = sum(r.executable for r in results)
    cds = sorted(r.cd for r in scored)
    return ModeMetrics(
        iou_pct=100.0 * float(np.mean([r.iou for r in scored])) if scored else 0.0,
        mean_cd_e3=1e3 * float(np.mean(cds)) if cds else None,
        # lower median: exact order statistic
        med_cd_e3=1e3 * cds[(len(cds) - 1) // 2] if cds else None,
        exec_pct=100.0 * n_exec / n if n else 0.0,
        n_tasks=n,
        n_scored=len(scored),
    )


def evaluate(tasks: Sequence[TaskSpec], decoder: Decoder, modes: Sequence[str] = ("structured",),
             resolution: int = 64, cd_points: int = 1024, penalize_failures: bool = False,
             threads: int = 1) -> tuple[MetricsReport, list[TaskResult]]:
    jobs = [(t, m) for m in modes for t in sorted(tasks, key=lambda t: t.id)]

    def run(job):
        return evaluate_task(job[0], job[1], decoder, resolution, cd_points, penalize_failures)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]
    overall = aggregate(results)
    breakdown = {m: aggregate([r for r in results if r.mode == m]) for m in modes}
    report = MetricsReport(**asdict(overall), breakdown=breakdown, penalize_failures=penalize_failures)
    return report, results


def policy_decoder(policy: Policy, t_max: int) -> Decoder:
    def decode(task: TaskSpec, mode: str) -> TokenSeq:
        return greedy_decode(policy, task_prompt(task, mode), t_max)
    return decode


def reference_decoder(task: TaskSpec, mode: str) -> TokenSeq:
    return target_sequence(task.program())
