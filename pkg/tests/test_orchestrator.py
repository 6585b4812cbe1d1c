from dataclasses import replace

import numpy as np
import pytest

from agps import env as envmod
from agps.errors import ConfigurationError
from agps.geometry import contains
from agps.orchestrator import (
    Run,
    RunConfig,
    evaluate,
    interaction_step,
    load_checkpoint,
    loo_indices,
    nonincreasing_after_peak,
    prefix_points,
    run_training,
    write_outputs,
)
from agps.orchestrator.records import episodes_csv, metrics_csv
from agps.ot_float import DetectorConfig, float_index
from agps.state import EnvAction
from agps.supervisor import RemoteAgent, Subgoal, task_profile

SMALL = dict(budget=1200, eval_checkpoints=1, eval_episodes=2, n_demos=5)


def small(**kw):
    return RunConfig(**{**SMALL, **kw})


def drive(run, steps, delta):
    for _ in range(steps):
        run.env_step(EnvAction(delta), "policy")


# helpers --------------------------------------------------------------------------

def test_prefix_points():
    assert prefix_points(35, 10) == [10, 20, 30, 35]
    assert prefix_points(35, 10, min_prefix=14) == [20, 30, 35]
    assert prefix_points(5, 10, min_prefix=8) == []
    assert prefix_points(10, 10) == [10]


def test_loo_indices_exclude_self():
    rng = np.random.default_rng(0)
    embs = [rng.normal(size=(12, 4)) for _ in range(3)]
    embs = [e / np.linalg.norm(e, axis=1, keepdims=True) for e in embs]
    vals = loo_indices(embs, DetectorConfig())
    assert len(vals) == 3 * 2 and min(vals) > 0
    assert loo_indices(embs[:1], DetectorConfig()) == []


@pytest.mark.parametrize("series,ok", [
    ([0, 3, 5, 4, 2, 1, 0, 0], True),
    ([5, 4, 3, 2, 1], True),
    ([0, 6, 6, 6, 1, 0, 0, 5, 5], False),
    ([0, 5, 1, 0, 0, 6, 6, 6], True),
    ([1, 2], True),
])
def test_nonincreasing_after_peak(series, ok):
    assert nonincreasing_after_peak(series) is ok


def test_config_validation():
    with pytest.raises(ConfigurationError):
        RunConfig(agent="remote")
    with pytest.raises(ConfigurationError):
        RunConfig(budget=0)
    cfg = RunConfig().with_overrides(**{"train.hidden": 16, "detector.eval_stride": 5, "seed": 3})
    assert (cfg.train.hidden, cfg.detector.eval_stride, cfg.seed) == (16, 5, 3)
    assert cfg.fingerprint() != RunConfig().fingerprint()


# run loop -------------------------------------------------------------------------

def test_single_threaded_runs_are_bitwise_reproducible():
    a, _ = run_training(small())
    b, _ = run_training(small())
    assert metrics_csv(a) == metrics_csv(b)
    assert episodes_csv(a) == episodes_csv(b)
    assert a.lambdas == b.lambdas


def test_agent_none_reduces_to_plain_rl():
    none, run_n = run_training(small(agent="none"))
    off, run_o = run_training(small(guidance=False, pruning=False))
    assert metrics_csv(none) == metrics_csv(off)
    assert none.triggers == off.triggers == [] and none.lambdas == []
    assert run_n.agent is None and run_o.agent is None


def test_quiet_detector_means_no_agent_calls():
    run = Run(small())
    run.threshold = 10.0
    run.start_episode()
    while not (run.episode.done or run.episode.length >= 60):
        assert interaction_step(run)[0] == "act"
    assert run.agent.calls == {}
    assert all(not fired for *_, fired in run.metrics.lambdas)


def test_first_prune_is_fresh_then_memory_hit():
    run = Run(small(guidance=False))
    goal = Subgoal("align_connector")
    run.start_episode()
    run.prune(goal, {})
    assert (run.metrics.fresh_calls, run.metrics.memory_hits) == (1, 0)
    assert run.agent.calls["gen_bbox"] == 1
    run.episode.success = True
    run.end_episode()
    run.start_episode()
    record = {}
    run.prune(goal, record)
    assert (run.metrics.fresh_calls, run.metrics.memory_hits) == (1, 1)
    assert record["memory_hit"] and run.agent.calls["gen_bbox"] == 1


def test_memory_off_always_asks():
    run = Run(small(guidance=False, memory=False))
    goal = Subgoal("align_connector")
    for _ in range(2):
        run.start_episode()
        run.prune(goal, {})
        run.episode.success = True
        run.end_episode()
    assert (run.metrics.fresh_calls, run.metrics.memory_hits) == (2, 0)


def test_pruned_policy_actions_stay_in_box():
    run = Run(small(guidance=False))
    run.start_episode()
    run.prune(Subgoal("align_connector"), {})
    box = run.episode.box
    assert contains(box, run.episode.state.tcp.position)
    for _ in range(30):
        if run.episode.done:
            break
        run.policy_step()
        assert contains(box, run.episode.state.tcp.position, tol=1e-3)


def test_guidance_lowers_deviation():
    cfg = small(env=envmod.insertion_config(transition_noise_sigma=0.0), pruning=False)
    run = Run(cfg)
    run.start_episode()
    drive(run, 20, [0.0, 0.01, 0.0, 0, 0, 0])
    before = float_index(np.asarray(run.episode.embeddings), run.demo_emb, run.detector).value
    run.guide({})
    after = float_index(np.asarray(run.episode.embeddings), run.demo_emb, run.detector).value
    assert run.metrics.guidance_plans == 1
    assert after < before


def test_success_pool_uses_stride_points_only():
    run = Run(small())
    run.start_episode()
    for _ in range(35):
        run.env_step(EnvAction.zero(), "policy")
    run.episode.success = True
    run.end_episode()
    det = run.detector
    expected = [t for t in range(det.eval_stride, 36, det.eval_stride) if t >= det.min_prefix]
    assert len(run.success_pool[0]) == len(expected)


def test_detector_waits_for_longest_demo():
    run = Run(small())
    longest = max(len(e) for e in run.demo_emb)
    assert run.detector.min_prefix == max(longest, run.cfg.detector.min_prefix)
    run.start_episode()
    assert run.episode.next_eval >= run.detector.min_prefix
    assert run.episode.next_eval % run.detector.eval_stride == 0


def test_protocol_failure_aborts_with_partial_metrics():
    cfg = small(on_agent_failure="abort", budget=4000)
    agent = RemoteAgent("http://127.0.0.1:9", task_profile(cfg.env), timeout=0.2)
    metrics, run = run_training(cfg, agent=agent)
    assert metrics.aborted and "protocol" in metrics.error
    assert 0 < metrics.env_steps < cfg.budget


def test_protocol_failure_falls_back_to_oracle():
    cfg = small(budget=3000)
    agent = RemoteAgent("http://127.0.0.1:9", task_profile(cfg.env), timeout=0.2)
    metrics, run = run_training(cfg, agent=agent)
    assert not metrics.aborted
    assert metrics.triggers
    assert any(r.get("event") == "fallback" for r in run.audit)


def test_threaded_mode_completes():
    metrics, run = run_training(small(threaded=True))
    assert not metrics.aborted
    assert metrics.env_steps == 1200 and metrics.updates > 0
    assert len(metrics.checkpoints) == 2


def test_outputs_and_checkpoint_round_trip(tmp_path):
    metrics, run = run_training(small(budget=600))
    out = write_outputs(tmp_path / "run", metrics, run)
    names = sorted(p.name for p in out.iterdir())
    assert names == ["audit.jsonl", "checkpoint.npz", "episodes.csv", "metrics.csv", "report.json"]
    agent, cfg = load_checkpoint(out / "checkpoint.npz")
    assert cfg == run.cfg
    obs = envmod.observe(envmod.reset(cfg.env, np.random.default_rng(0)), cfg.env).vector()
    assert np.array_equal(agent.policy_mean(obs), run.agent_rl.policy_mean(obs))


# evaluation -----------------------------------------------------------------------

def test_evaluate_expert_and_random(ins_cfg):
    assert evaluate(lambda s: envmod.expert_action(s, ins_cfg), 10, cfg=ins_cfg) == 1.0
    rng = np.random.default_rng(0)
    lim = np.asarray(ins_cfg.action_limit)
    assert evaluate(lambda s: EnvAction(rng.uniform(-1, 1, 6) * lim), 10, cfg=ins_cfg) <= 0.1
    with pytest.raises(ValueError):
        evaluate(lambda s: None, 0, cfg=ins_cfg)


def test_evaluate_is_reproducible():
    run = Run(small())
    assert evaluate(run, 3, seed=4) == evaluate(run, 3, seed=4)
