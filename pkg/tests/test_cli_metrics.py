import json
import math

import numpy as np
import pytest

from uecrl import checkpoint as ckpt
from uecrl.cli import main
from uecrl.config import acceptance_config, dump_config, load_config, parse_config
from uecrl.errors import InvalidArgument
from uecrl.experiments import format_table, sweep, trend_comparisons
from uecrl.metrics import FIELD_ORDER, MetricsWriter, export_plots, format_record, read_metrics, step_record
from uecrl.policy import ContextKey, PolicyParams
from uecrl.trainer import TrainConfig, init_state, train

TINY = """
[train]
max_steps = 5
batch_size = 4
learning_rate = 1.0
seed = 1
checkpoint_every = 5

[curriculum]
size = 8
hard_fraction = 0.25
modchain_fraction = 0.5

[prior]
margin_easy = 2.0
margin_hard = 6.0
"""


# config

def test_parse_sections_and_types():
    cfg = parse_config(TINY + "\n[uec]\nt_prime = 1.1\nexplore = false\n", environ={})
    assert cfg.max_steps == 5 and cfg.learning_rate == 1.0
    assert cfg.curriculum.size == 8
    assert cfg.uec.t_prime == 1.1 and cfg.uec.explore is False


def test_unknown_keys_and_sections_fail():
    with pytest.raises(InvalidArgument, match="unknown key"):
        parse_config("[train]\nlearning_rte = 0.1\n", environ={})
    with pytest.raises(InvalidArgument, match="unknown config section"):
        parse_config("[optimizer]\nlr = 1\n", environ={})
    with pytest.raises(InvalidArgument, match="cannot parse"):
        parse_config("[train]\nbatch_size = eight\n", environ={})
    with pytest.raises(InvalidArgument, match="malformed"):
        parse_config("batch_size = 8\n", environ={})


def test_environment_overrides_win():
    env = {"UECRL_UEC_T_PRIME": "1.1", "UECRL_TRAIN_SEED": "9", "UECRL_UEC_A0": "0.5", "HOME": "/x"}
    cfg = parse_config(TINY, environ=env)
    assert cfg.uec.t_prime == 1.1 and cfg.seed == 9 and cfg.uec.A0 == 0.5
    with pytest.raises(InvalidArgument):
        parse_config("", environ={"UECRL_TRAIN_LR": "1"})


def test_dump_round_trips():
    for cfg in (TrainConfig(), acceptance_config("dapo", seed=4)):
        assert parse_config(dump_config(cfg), environ={}) == cfg


def test_missing_config_file(tmp_path):
    with pytest.raises(InvalidArgument):
        load_config(tmp_path / "nope.ini", environ={})


# metrics

def _record(step, **over):
    values = {k: 0.0 for k in FIELD_ORDER}
    values.update(step=step, buffer_size=0, explored_prompts=0, o_eff_size=0, replay_size=0)
    values.update(over)
    return step_record(**values)


def test_record_format():
    line = format_record(_record(3, reward_mean=1 / 3, token_entropy_mean=math.pi))
    parsed = json.loads(line)
    assert list(parsed) == list(FIELD_ORDER)
    assert parsed["reward_mean"] == 0.333333333
    assert parsed["token_entropy_mean"] == 3.14159265
    assert '"step": 3,' in line


def test_record_fields_checked():
    with pytest.raises(ValueError):
        step_record(step=1)
    with pytest.raises(ValueError):
        _record(1, bogus=2.0)


def test_steps_must_increase(tmp_path):
    w = MetricsWriter(tmp_path / "m.jsonl")
    w.emit(_record(1))
    with pytest.raises(ValueError):
        w.emit(_record(1))
    w.close()


def test_export_plots_one_row_per_step(tmp_path):
    cfg = parse_config(TINY, environ={})
    cfg.eval_every = 5
    cfg.eval_ks = (1, 4)
    cfg.eval_samples = 4
    train(cfg, tmp_path)
    paths = export_plots(tmp_path / "metrics.jsonl", tmp_path / "plots")
    names = {p.name for p in paths}
    assert {"entropy.dat", "reward.dat", "response_length.dat", "clip_fraction.dat", "pass_at_1.dat"} <= names
    rows = (tmp_path / "plots" / "entropy.dat").read_text().splitlines()
    assert len(rows) == 5
    step, value = rows[0].split(" ")
    assert step == "1" and float(value) >= 0


def test_same_seed_same_metric_bytes(tmp_path):
    cfg = parse_config(TINY, environ={})
    train(cfg, tmp_path / "a")
    train(cfg, tmp_path / "b")
    assert (tmp_path / "a" / "metrics.jsonl").read_bytes() == (tmp_path / "b" / "metrics.jsonl").read_bytes()


def test_manifest_written(tmp_path):
    cfg = parse_config(TINY, environ={})
    train(cfg, tmp_path)
    manifest = json.loads((tmp_path / "run_manifest.json").read_text())
    assert {"config_hash", "seed", "code_version", "start_time", "task_suite_digest"} <= set(manifest)


def test_clip_and_difficulty_fractions_bounded():
    cfg = parse_config(TINY, environ={})
    cfg.max_steps = 30
    for rec in train(cfg).records:
        assert 0 <= rec["clip_fraction"] <= 1
        assert 0 <= rec["difficult_fraction"] <= 1


# checkpoints

def test_policy_round_trip_is_exact(tmp_path):
    params = PolicyParams.tabular(3)
    params.set_row(ContextKey("a", ()), [0.1, 1 / 3, -2e-17])
    params.set_row(ContextKey("a", (2, 0)), [1e300, 0.0, -1.5])
    ckpt.save_policy(params, tmp_path / "p.policy", global_step=7)
    back, step = ckpt.load_policy(tmp_path / "p.policy")
    assert step == 7
    assert set(back.rows) == set(params.rows)
    for key in params.rows:
        assert back.rows[key].tolist() == params.rows[key].tolist()
    lin = PolicyParams.linear(4, "ngram2-16")
    lin.set_row(5, [1.0, 2.0, 3.0, 4.0])
    ckpt.save_policy(lin, tmp_path / "l.policy")
    assert ckpt.load_policy(tmp_path / "l.policy")[0].rows[5].tolist() == [1.0, 2.0, 3.0, 4.0]


def test_bad_checkpoint_rejected(tmp_path):
    (tmp_path / "x.policy").write_text("hello\n")
    with pytest.raises(InvalidArgument):
        ckpt.load_policy(tmp_path / "x.policy")
    with pytest.raises(InvalidArgument):
        ckpt.resolve(tmp_path / "missing.policy")


def test_restore_reproduces_buffer(tmp_path):
    cfg = parse_config(TINY, environ={})
    cfg.max_steps = 10
    result = train(cfg)
    ckpt.save(result.state, cfg, tmp_path)
    state = init_state(cfg)
    ckpt.restore(state, tmp_path)
    assert state.global_step == 10
    assert [t.tokens for t in state.buffer] == [t.tokens for t in result.state.buffer]
    assert [t.old_logprobs_t1 for t in state.buffer] == [t.old_logprobs_t1 for t in result.state.buffer]


# command line

def test_train_then_eval(tmp_path, capsys):
    config = tmp_path / "tiny.ini"
    config.write_text(TINY)
    run = tmp_path / "run"
    assert main(["train", "--config", str(config), "--out", str(run), "--quiet"]) == 0
    assert main(["eval", "--checkpoint", str(run), "--k", "1", "4", "--samples", "8"]) == 0
    out = capsys.readouterr().out
    assert "easy" in out and "hard" in out and "pass@1" in out


def test_cli_flag_overrides(tmp_path):
    config = tmp_path / "tiny.ini"
    config.write_text(TINY)
    run = tmp_path / "run"
    assert main(["train", "--config", str(config), "--out", str(run), "--steps", "3", "--algorithm", "grpo", "--seed", "5", "--quiet"]) == 0
    saved = load_config(run / "config.ini", environ={})
    assert (saved.max_steps, saved.algorithm, saved.seed) == (3, "grpo", 5)
    assert len(read_metrics(run / "metrics.jsonl")) == 3


def test_cli_errors(tmp_path, capsys):
    assert main(["train", "--config", str(tmp_path / "nope.ini")]) != 0
    bad = tmp_path / "bad.ini"
    bad.write_text("[train]\nlearning_rte = 1\n")
    assert main(["train", "--config", str(bad), "--out", str(tmp_path / "r")]) != 0
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code != 0


def test_verify_theorems_command(tmp_path, capsys):
    report = tmp_path / "report.jsonl"
    assert main(["verify-theorems", "--out", str(report)]) == 0
    rows = [json.loads(line) for line in report.read_text().splitlines()]
    assert len(rows) == 200 + 1 + 20
    assert all(r["verdict"] == "pass" for r in rows)
    assert {"seed", "eta", "predicted", "actual", "residual", "verdict"} <= set(rows[0])
    assert "FAIL" not in capsys.readouterr().out


def test_sweep_table_shape(capsys, tmp_path):
    config = tmp_path / "tiny.ini"
    config.write_text(TINY)
    out = tmp_path / "cells.jsonl"
    assert main(["sweep", "--config", str(config), "--steps", "3", "--quiet", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    lines = text.splitlines()
    assert lines[0].split()[-3:] == ["s'=128", "s'=256", "s'=512"]
    assert [ln.split()[0] for ln in lines[1:4]] == ["t'=1.0", "t'=1.1", "t'=1.2"]
    assert len(out.read_text().splitlines()) == 9
    assert "trend comparisons holding" in text


def test_trend_comparisons_count():
    cfg = parse_config(TINY, environ={})
    cfg.max_steps = 2
    cells = sweep(cfg, seeds=(0,))
    checks = trend_comparisons(cells)
    assert len(checks) == 6 + 4
    assert "t'=1.0" in format_table(cells)
