import json

import numpy as np
import pytest

from cadrl import bench
from cadrl.cli import main
from cadrl.config import ConfigError, load_config
from cadrl.corpus import generate_corpus, load_corpus, save_corpus
from cadrl.geometry import exposed_faces, parse_obj
from cadrl.lang import VOCAB_SIZE, execute, parse_source
from cadrl.policy import init_policy, load_checkpoint, save_checkpoint


@pytest.fixture
def corpus(tmp_path):
    path = tmp_path / "corpus.jsonl"
    save_corpus(generate_corpus(40, 0, (0.6, 0.3, 0.1)), path)
    return path


# ------------------------------------------------------------------ config

def test_config_defaults_and_overrides(tmp_path):
    cfg = load_config()
    assert (cfg.reward.lambda_geom, cfg.reward.lambda_eval) == (0.7, 0.3)
    assert (cfg.trainer.eps_low, cfg.trainer.eps_high, cfg.trainer.group_size) == (0.6, 1.8, 8)
    ini = tmp_path / "c.ini"
    ini.write_text("[reward]\nlambda_geom = 0.5\nlambda_eval = 0.5\n[trainer]\nk = 4\n", encoding="utf-8")
    cfg = load_config(str(ini), ["trainer.group_size=4", "eval.cd_points=256", "trainer.coldstart_precision=yes"])
    assert cfg.reward.lambda_geom == 0.5 and cfg.trainer.k == 4 and cfg.trainer.group_size == 4
    assert cfg.eval.cd_points == 256 and cfg.trainer.coldstart_precision is True
    assert cfg.reward.engine().weights.lambda_eval == 0.5


@pytest.mark.parametrize("override", ["trainer.nope=1", "bogus.k=1", "trainer.k", "trainer.k=abc",
                                      "reward.lambda_geom=0.9", "trainer.eps_low=1.5"])
def test_config_errors(override):
    with pytest.raises(ConfigError):
        load_config(None, [override])


# ------------------------------------------------------------------ metrics

def _result(task_id, iou, cd, mode="structured"):
    return bench.TaskResult(task_id, mode, iou is not None, iou, cd)


def test_aggregate_lower_median_and_exclusion():
    results = [_result("a", 1.0, 0.004), _result("b", 0.5, 0.001), _result("c", None, None),
               _result("d", 0.0, 0.003), _result("e", 0.5, 0.002)]
    m = bench.aggregate(results)
    assert m.iou_pct == pytest.approx(50.0)
    assert m.med_cd_e3 == pytest.approx(2.0)  # lower median of 1, 2, 3, 4
    assert m.mean_cd_e3 == pytest.approx(2.5)
    assert m.exec_pct == 80.0 and m.n_tasks == 5
    assert m.exec_pct * m.n_tasks / 100 == m.n_scored


def test_reference_programs_score_perfectly():
    tasks = generate_corpus(15, 1)
    report, results = bench.evaluate(tasks, bench.reference_decoder, ("structured",), 64, 1024)
    assert report.exec_pct == 100.0 and report.iou_pct == 100.0
    # identical solids, identical seeded samples
    assert report.mean_cd_e3 == 0.0


def test_normalized_chamfer_sees_scale_errors():
    gt = execute(parse_source("PLANE XY RECT 2.0 2.0 EXTRUDE 2.0"), 32)
    big = execute(parse_source("PLANE XY RECT 4.0 4.0 EXTRUDE 4.0"), 32)
    assert bench.normalized_chamfer(big, gt) > 0.1
    assert bench.normalized_chamfer(gt, gt) == 0.0


def test_untrained_policy_rarely_executes():
    tasks = generate_corpus(40, 2)
    report, _ = bench.evaluate(tasks, bench.policy_decoder(init_policy(VOCAB_SIZE, 8, 0), 48))
    assert report.exec_pct < 5.0


def test_prompt_modes_only_change_the_prompt():
    tasks = generate_corpus(8, 3)
    seen = []

    def decoder(task, mode):
        seen.append((task.id, mode))
        return bench.reference_decoder(task, mode)

    report, results = bench.evaluate(tasks, decoder, ("natural", "structured"), 32, 128)
    assert set(report.breakdown) == {"natural", "structured"}
    assert report.breakdown["natural"] == report.breakdown["structured"]
    assert len(seen) == 16


def test_report_is_deterministic_across_threads():
    tasks = generate_corpus(10, 4)
    dec = bench.policy_decoder(init_policy(VOCAB_SIZE, 8, 1), 24)
    a, _ = bench.evaluate(tasks, dec, ("natural", "structured"), 32, 128, penalize_failures=True)
    b, _ = bench.evaluate(tasks, dec, ("natural", "structured"), 32, 128, penalize_failures=True, threads=4)
    assert a.to_json() == b.to_json()


def test_penalize_failures_scores_failures():
    tasks = generate_corpus(5, 5)

    def broken(task, mode):
        from cadrl.lang import tokenize
        return tokenize("PLANE XY <EOS>")

    report, results = bench.evaluate(tasks, broken, penalize_failures=True)
    assert report.exec_pct == 0.0 and report.iou_pct == 0.0 and report.n_scored == 5
    assert all(r.cd >= bench.WORLD_DIAGONAL / 8.0 for r in results)
    report, _ = bench.evaluate(tasks, broken)
    assert report.n_scored == 0 and report.mean_cd_e3 is None


# ------------------------------------------------------------------ subcommands

def test_generate(tmp_path, capsys):
    out = tmp_path / "g.jsonl"
    assert main(["--seed", "0", "generate", "--n", "100", "--mix", "0.5,0.3,0.2", "--out", str(out)]) == 0
    assert len(load_corpus(out)) == 100
    assert "difficulty 1:49 2:34 3:17" in capsys.readouterr().out


def test_generate_usage_errors(tmp_path):
    with pytest.raises(SystemExit) as err:
        main(["generate", "--n", "0", "--out", str(tmp_path / "x")])
    assert err.value.code == 2
    with pytest.raises(SystemExit) as err:
        main(["generate", "--n", "5", "--mix", "1,2", "--out", str(tmp_path / "x")])
    assert err.value.code == 2


def test_train_coldstart_logs_one_line_per_step(tmp_path, corpus):
    ckpt = tmp_path / "cs.ckpt"
    args = ["--seed", "1", "--set", "trainer.k=4", "train", "--stage", "coldstart", "--corpus", str(corpus),
            "--out", str(ckpt), "--steps", "7"]
    assert main(args) == 0
    lines = (tmp_path / "cs.ckpt.log.jsonl").read_text(encoding="utf-8").splitlines()
    assert len(lines) == 7
    assert set(json.loads(lines[0])) >= {"step", "mean_reward", "surrogate_loss", "fraction_filtered",
                                         "grad_norm", "wall_clock"}
    assert load_checkpoint(ckpt).k == 4


def test_train_rl_requires_checkpoint(tmp_path, corpus, capsys):
    args = ["train", "--stage", "rl", "--corpus", str(corpus), "--out", str(tmp_path / "rl.ckpt")]
    assert main(args) == 1
    assert "--init" in capsys.readouterr().err


def test_train_rl_from_checkpoint(tmp_path, corpus):
    init = tmp_path / "init.ckpt"
    save_checkpoint(init_policy(VOCAB_SIZE, 4, 0), init)
    args = ["--set", "trainer.group_size=2", "--set", "trainer.t_max=8", "--set", "reward.resolution=16",
            "train", "--stage", "rl", "--corpus", str(corpus), "--init", str(init),
            "--out", str(tmp_path / "rl.ckpt"), "--steps", "2"]
    assert main(args) == 0
    assert len((tmp_path / "rl.ckpt.log.jsonl").read_text().splitlines()) == 2


def test_eval_reference_and_json(tmp_path, corpus, capsys):
    out = tmp_path / "m.json"
    assert main(["eval", "--reference", "--corpus", str(corpus), "--split", "all", "--limit", "6",
                 "--out-json", str(out)]) == 0
    table = capsys.readouterr().out
    assert table.splitlines()[0].split() == ["mode", "IoU(%)", "MeanCD", "MedCD", "Exec(%)", "N"]
    doc = json.loads(out.read_text())
    assert doc["exec_pct"] == 100.0 and doc["iou_pct"] == 100.0
    assert set(doc["breakdown"]) == {"natural", "structured"}


def test_eval_checkpoint_is_byte_deterministic(tmp_path, corpus):
    ckpt = tmp_path / "p.ckpt"
    save_checkpoint(init_policy(VOCAB_SIZE, 8, 2), ckpt)
    outs = []
    for i, threads in enumerate(("1", "3")):
        out = tmp_path / f"m{i}.json"
        main(["--threads", threads, "eval", "--checkpoint", str(ckpt), "--corpus", str(corpus),
              "--split", "all", "--limit", "5", "--out-json", str(out)])
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_eval_missing_checkpoint(tmp_path, corpus):
    assert main(["eval", "--checkpoint", str(tmp_path / "nope"), "--corpus", str(corpus)]) == 1


def test_render(tmp_path):
    prog = tmp_path / "p.mq"
    prog.write_text("PLANE XY RECT 2.0 1.0 EXTRUDE 1.0 PLANE XY CIRCLE 0.25 EXTRUDE 1.0 CUT\n")
    out = tmp_path / "p.obj"
    assert main(["render", str(prog), str(out), "--resolution", "8"]) == 0
    solid = execute(parse_source(prog.read_text()), 8)
    _, faces = parse_obj(out.read_text())
    assert len(faces) == 2 * len(exposed_faces(solid))


def test_render_invalid_program(tmp_path, capsys):
    prog = tmp_path / "bad.mq"
    prog.write_text("PLANE XY EXTRUDE 1.0")
    assert main(["render", str(prog), str(tmp_path / "x.obj")]) == 1
    assert "empty-sketch" in capsys.readouterr().err


def test_render_golden_unit_box(tmp_path):
    from pathlib import Path
    prog = tmp_path / "box.mq"
    prog.write_text("PLANE XY RECT 1.0 1.0 EXTRUDE 1.0")
    out = tmp_path / "box.obj"
    assert main(["render", str(prog), str(out), "--resolution", "2"]) == 0
    assert out.read_bytes() == (Path(__file__).parent / "golden" / "unit_box_r2.obj").read_bytes()


def test_score_one(corpus, capsys):
    task = load_corpus(corpus)[0]
    assert main(["score-one", "--program", task.reference_program, "--corpus", str(corpus),
                 "--task-id", task.id]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["total"] == pytest.approx(1.0) and doc["r_exec"] == 1


def test_score_one_unknown_task(corpus):
    assert main(["score-one", "--program", "PLANE", "--corpus", str(corpus), "--task-id", "zzz"]) == 1


def test_bad_config_is_usage_error(corpus):
    with pytest.raises(SystemExit) as err:
        main(["--set", "nope", "eval", "--reference", "--corpus", str(corpus)])
    assert err.value.code == 2
