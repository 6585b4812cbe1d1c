import json
from dataclasses import replace

import numpy as np
import pytest

from agps import env as envmod
from agps.errors import ConfigurationError
from agps.harness import (
    BASELINES,
    ExperimentSpec,
    MetricsArchive,
    ablate_memory,
    baseline_config,
    eval_expert,
    export_qmap,
    main,
    parse_config_text,
    run_experiment,
    run_open_loop,
)
from agps.harness.cli import UsageError
from agps.orchestrator import RunConfig, RunMetrics, run_training, write_outputs
from agps.supervisor import OracleConfig

TINY = RunConfig(budget=600, eval_checkpoints=1, eval_episodes=2, n_demos=3)


# baselines -----------------------------------------------------------------------

def test_baseline_table():
    assert baseline_config("serl", TINY).agent == "none"
    po = baseline_config("pruning_only", TINY)
    assert (po.guidance, po.pruning) == (False, True)
    go = baseline_config("guidance_only", TINY)
    assert (go.guidance, go.pruning) == (True, False)
    hil = baseline_config("scripted_hil", TINY)
    assert hil.oracle.latency_steps > 0 and hil.oracle.wrong_direction_prob > 0
    with pytest.raises(ConfigurationError):
        baseline_config("magic", TINY)


def test_serl_short_budget_fails():
    archive = run_experiment(ExperimentSpec("s", "serl", (0, 1), TINY))
    assert archive.final_successes == [0.0, 0.0]


def test_open_loop_planner_needs_precise_perception():
    noisy = replace(TINY, oracle=OracleConfig(perception_noise_sigma=0.01), eval_episodes=20)
    assert run_open_loop(noisy).final_success == 0.0
    exact = replace(TINY, oracle=OracleConfig(perception_noise_sigma=0.0), eval_episodes=20)
    assert run_open_loop(exact).final_success >= 0.8


def test_expert_evaluation(ins_cfg):
    assert eval_expert(ins_cfg, 5) == 1.0


# archive -----------------------------------------------------------------------------

def fake_metrics(rates):
    m = RunMetrics()
    m.checkpoints = [(1000 * (k + 1), 10 * k, r) for k, r in enumerate(rates)]
    return m


def test_archive_statistics():
    arch = MetricsArchive(ExperimentSpec("x", "agps", (0, 1, 2)))
    for s, rates in enumerate([[0.0, 0.5, 1.0], [0.1, 0.4, 0.8], [0.0, 0.9, 0.9]]):
        arch.runs[s] = fake_metrics(rates)
    assert arch.median_final == 0.9
    curve = arch.curve()
    assert [r["median"] for r in curve] == [0.0, 0.5, 0.9]
    assert curve[1]["q25"] == pytest.approx(0.45) and curve[1]["q75"] == pytest.approx(0.7)
    assert arch.curve_csv().splitlines()[0] == "checkpoint,env_step,median,q25,q75"


def test_spec_validation():
    with pytest.raises(ConfigurationError):
        ExperimentSpec(seeds=())
    with pytest.raises(ConfigurationError):
        ExperimentSpec(baseline="nope")
    assert set(BASELINES) >= {"agps", "serl", "pruning_only", "open_loop_planner"}


def test_ablation_report(tmp_path):
    report = ablate_memory([0], replace(TINY, budget=1500), tmp_path)
    row = report["rows"][0]
    assert set(row) >= {"fresh_calls_on", "fresh_calls_off", "eligible", "passes", "speedup"}
    assert json.loads((tmp_path / "memory_ablation.json").read_text()) == report


# config files ---------------------------------------------------------------------

def test_parse_config_text():
    text = "# comment\nbudget = 500\nenv.success_tol = [0.001, 0.001, 0.003]\nname = my run  # trailing\n"
    assert parse_config_text(text) == {"budget": 500, "env.success_tol": [0.001, 0.001, 0.003], "name": "my run"}
    with pytest.raises(UsageError):
        parse_config_text("no equals sign")


# CLI ------------------------------------------------------------------------------

def test_usage_errors_exit_2(tmp_path, capsys):
    assert main([]) == 2
    assert main(["fly"]) == 2
    assert main(["demo-gen", "--n", "0", "--out", str(tmp_path / "d")]) == 2
    assert main(["train", "--out", str(tmp_path), "--seeds", "a,b"]) == 2
    assert main(["train", "--out", str(tmp_path), "--config", str(tmp_path / "missing.cfg")]) == 2
    assert main(["train", "--out", str(tmp_path), "--agent", "remote"]) == 2
    assert main(["eval", str(tmp_path / "nope.npz")]) == 2
    assert main(["export-qmap", str(tmp_path / "nope.npz"), "--out", str(tmp_path)]) == 2
    assert "usage error" in capsys.readouterr().err


def test_demo_gen_is_byte_identical(tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    assert main(["demo-gen", "--n", "20", "--seed", "3", "--out", str(a)]) == 0
    assert main(["demo-gen", "--n", "20", "--seed", "3", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    demos = envmod.DemoSet.load(a)
    assert len(demos) == 20 and all(ep.success for ep in demos.episodes)


def test_train_eval_export(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("eval_checkpoints = 1\neval_episodes = 2\nn_demos = 3\n")
    demos = tmp_path / "demos.jsonl"
    assert main(["demo-gen", "--n", "3", "--out", str(demos)]) == 0
    out = tmp_path / "train"
    assert main(["train", "--baseline", "serl", "--budget", "400", "--seeds", "0,1", "--config", str(cfg),
                 "--demos", str(demos), "--single-threaded", "--out", str(out)]) == 0
    assert (out / "metrics.csv").exists() and (out / "seed_1" / "checkpoint.npz").exists()
    report = json.loads((out / "report.json").read_text())
    assert report["baseline"] == "serl" and report["seeds"] == [0, 1]
    ckpt = out / "seed_0" / "checkpoint.npz"
    assert main(["eval", str(ckpt), "--n", "2", "--out", str(tmp_path / "eval.json")]) == 0
    assert json.loads((tmp_path / "eval.json").read_text())["n"] == 2
    assert main(["export-qmap", str(ckpt), "--resolution", "5", "--out", str(tmp_path / "q")]) == 0
    rep = json.loads((tmp_path / "q" / "qmap_report.json").read_text())
    assert len(rep["bbox_3d"]) == 9 and rep["distance"] >= 0
    assert len((tmp_path / "q" / "qmap.csv").read_text().splitlines()) == 26


def test_demo_task_mismatch_is_usage_error(tmp_path):
    demos = tmp_path / "demos.jsonl"
    assert main(["demo-gen", "--n", "1", "--out", str(demos)]) == 0
    assert main(["train", "--task", "hanging", "--demos", str(demos), "--out", str(tmp_path / "t")]) == 2


def test_runtime_failure_exits_1(tmp_path):
    bad = tmp_path / "bad.npz"
    np.savez(bad, nothing=np.zeros(1))
    assert main(["eval", str(bad)]) == 1


def test_export_qmap_untrained_still_reports(tmp_path):
    metrics, run = run_training(replace(TINY, budget=150))
    write_outputs(tmp_path, metrics, run)
    report, land = export_qmap(tmp_path / "checkpoint.npz", resolution=6)
    assert land.values.shape == (6, 6)
    assert {"argmax", "bbox_center", "bbox_half_diagonal", "aligned"} <= set(report)
