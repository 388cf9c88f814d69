"""Command-line entry point: ``cadrl generate|train|eval|render|score-one``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import collections
import json
import logging
import sys
from pathlib import Path

from . import bench
from .config import Config, ConfigError, load_config
from .corpus import CorpusError, generate_corpus, load_corpus, save_corpus
from .geometry import export_mesh
from .lang import VOCAB_SIZE, ExecutionError, ParseError, UnknownLexeme, execute, parse, strip_reasoning, tokenize
from .policy import CheckpointError, init_policy, load_checkpoint, save_checkpoint
from .reward import RewardBreakdown
from .trainer import TrainingExample, train_coldstart, train_rl

log = logging.getLogger("cadrl")


class CLIError(Exception):
    """Runtime failure reported with exit code 1."""


class MissingInitialCheckpoint(CLIError):
    pass


def _mix(text: str) -> tuple[float, float, float]:
    try:
        parts = tuple(float(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"mix must be three comma-separated numbers, got {text!r}") from None
    if len(parts) != 3 or any(p < 0 for p in parts) or sum(parts) <= 0:
        raise argparse.ArgumentTypeError("mix must be three non-negative weights")
    return parts


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _load_tasks(path, split: str | None, limit: int | None):
    try:
        tasks = load_corpus(path)
    except CorpusError as exc:
        raise CLIError(f"cannot load corpus: {exc}") from None
    if split and split != "all":
        tasks = [t for t in tasks if t.split == split]
    if limit:
        tasks = tasks[:limit]
    if not tasks:
        raise CLIError("no tasks selected from corpus")
    return tasks


def cmd_generate(args, cfg: Config) -> int:
    tasks = generate_corpus(args.n, args.seed, args.mix)
    save_corpus(tasks, args.out)
    hist = collections.Counter(t.difficulty for t in tasks)
    splits = collections.Counter(t.split for t in tasks)
    print(f"wrote {len(tasks)} tasks to {args.out}")
    print("difficulty " + " ".join(f"{d}:{hist.get(d, 0)}" for d in (1, 2, 3)))
    print(f"split train:{splits.get('train', 0)} test:{splits.get('test', 0)}")
    return 0


def cmd_train(args, cfg: Config) -> int:
    tcfg = cfg.trainer
    if args.seed is not None:
        tcfg.seed = args.seed
    tasks = _load_tasks(args.corpus, args.split, args.limit)
    steps = args.steps
    if args.stage == "rl":
        if not args.init:
            raise MissingInitialCheckpoint("RL stage needs --init <cold-start checkpoint>")
        policy = _load_policy(args.init)
    elif args.init:
        policy = _load_policy(args.init)
    else:
        policy = init_policy(VOCAB_SIZE, tcfg.k, tcfg.seed)
    log_path = Path(args.log) if args.log else Path(str(args.out) + ".log.jsonl")
    with open(log_path, "w", encoding="utf-8", newline="\n") as fh:
        def emit(report):
            fh.write(json.dumps(report.to_json(), sort_keys=True) + "\n")

        if args.stage == "coldstart":
            examples = [TrainingExample.from_task(t) for t in tasks]
            reports = train_coldstart(policy, examples, tcfg, steps, emit)
        else:
            reports = train_rl(policy, tasks, tcfg, cfg.reward.engine(), steps, emit)
    save_checkpoint(policy, args.out)
    if reports:
        last = reports[-1]
        print(f"{args.stage}: {len(reports)} steps, final loss {last.surrogate_loss:.4f}, "
              f"mean reward {last.mean_reward:.3f}")
    print(f"checkpoint -> {args.out}; log -> {log_path}")
    return 0


def _load_policy(path):
    try:
        return load_checkpoint(path)
    except (OSError, CheckpointError) as exc:
        raise CLIError(f"cannot load checkpoint {path}: {exc}") from None


def cmd_eval(args, cfg: Config) -> int:
    tasks = _load_tasks(args.corpus, args.split, args.limit)
    if args.reference:
        decoder = bench.reference_decoder
    else:
        if not args.checkpoint:
            raise CLIError("eval needs --checkpoint or --reference")
        decoder = bench.policy_decoder(_load_policy(args.checkpoint), cfg.trainer.t_max)
    modes = ("natural", "structured") if args.prompt_mode == "both" else (args.prompt_mode,)
    report, _ = bench.evaluate(tasks, decoder, modes, cfg.eval.resolution, cfg.eval.cd_points,
                               args.penalize_failures, args.threads)
    print(report.table(), end="")
    if args.out_json:
        Path(args.out_json).write_text(report.to_json(), encoding="utf-8")
    return 0


def _program_from_text(text: str):
    try:
        return parse(strip_reasoning(tokenize(text)))
    except (UnknownLexeme, ParseError) as exc:
        raise CLIError(f"invalid program: {exc}") from None


def cmd_render(args, cfg: Config) -> int:
    try:
        text = Path(args.program_file).read_text(encoding="utf-8")
    except OSError as exc:
        raise CLIError(f"cannot read {args.program_file}: {exc}") from None
    program = _program_from_text(text)
    try:
        solid = execute(program, args.resolution or cfg.eval.resolution)
    except ExecutionError as exc:
        raise CLIError(f"execution failed: {type(exc).__name__}: {exc}") from None
    Path(args.out_obj).write_text(export_mesh(solid), encoding="utf-8", newline="\n")
    print(f"mesh -> {args.out_obj}")
    return 0


def cmd_score_one(args, cfg: Config) -> int:
    if args.program_file:
        text = Path(args.program_file).read_text(encoding="utf-8")
    else:
        text = args.program
    tasks = _load_tasks(args.corpus, None, None)
    matches = [t for t in tasks if t.id == args.task_id]
    if not matches:
        raise CLIError(f"task {args.task_id!r} not in corpus")
    try:
        seq = tokenize(text)
    except UnknownLexeme as exc:
        breakdown = RewardBreakdown(0, 0.0, 0.0, 0.0, [f"LEX:{exc.lexeme}"])
    else:
        breakdown = cfg.reward.engine().score(seq, matches[0])
    print(json.dumps(breakdown.__dict__, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cadrl", description="MiniQuery text-to-CAD RL laboratory")
    ap.add_argument("--config", help="INI config file")
    ap.add_argument("--seed", type=int, default=None, help="global seed")
    ap.add_argument("--threads", type=_positive, default=1, help="worker threads for evaluation")
    ap.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                    help="override a config key (repeatable)")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate a task corpus (JSONL)")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--mix", type=_mix, default=(0.5, 0.3, 0.2))
    g.add_argument("--out", required=True)

    t = sub.add_parser("train", help="run cold-start or RL training")
    t.add_argument("--stage", choices=("coldstart", "rl"), required=True)
    t.add_argument("--corpus", required=True)
    t.add_argument("--out", required=True, help="output checkpoint")
    t.add_argument("--init", help="initial checkpoint (required for rl)")
    t.add_argument("--steps", type=int, default=None)
    t.add_argument("--split", default="train", choices=("train", "test", "all"))
    t.add_argument("--limit", type=int, default=None, help="use only the first N tasks")
    t.add_argument("--log", help="per-step JSONL log (default: <out>.log.jsonl)")

    e = sub.add_parser("eval", help="greedy-decode and report metrics")
    e.add_argument("--checkpoint")
    e.add_argument("--reference", action="store_true", help="score the corpus reference programs")
    e.add_argument("--corpus", required=True)
    e.add_argument("--split", default="test", choices=("train", "test", "all"))
    e.add_argument("--limit", type=int, default=None)
    e.add_argument("--prompt-mode", choices=("natural", "structured", "both"), default="both")
    e.add_argument("--penalize-failures", action="store_true",
                   help="score failed programs IoU 0 and CD = world diagonal instead of excluding them")
    e.add_argument("--out-json")

    r = sub.add_parser("render", help="execute a program file and export an OBJ mesh")
    r.add_argument("program_file")
    r.add_argument("out_obj")
    r.add_argument("--resolution", type=int, default=None)

    s = sub.add_parser("score-one", help="score one program against a corpus task")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--program")
    src.add_argument("--program-file")
    s.add_argument("--corpus", required=True)
    s.add_argument("--task-id", required=True)
    return ap


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "render": cmd_render,
    "score-one": cmd_score_one,
}


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "generate":
        if args.n < 1:
            ap.error("--n must be at least 1")
        if args.seed is None:
            args.seed = 0
    try:
        cfg = load_config(args.config, args.set)
    except ConfigError as exc:
        ap.error(str(exc))
    try:
        return COMMANDS[args.command](args, cfg)
    except CLIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
