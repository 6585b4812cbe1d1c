"""Baseline definitions and the RL-free open-loop planner."""
from dataclasses import replace

import numpy as np

from .. import env as envmod
from ..errors import ConfigurationError
from ..geometry import denormalize_pixel, deproject
from ..orchestrator import RunConfig, RunMetrics
from ..primitives import GuidancePlan, PrimitiveCall, plan_to_actions
from ..supervisor import ScriptedOracle, hil_proxy_config, recovery_plan, task_profile

BASELINES = ("agps", "serl", "pruning_only", "guidance_only", "scripted_hil", "open_loop_planner")


def baseline_config(baseline, base=None):
    """``RunConfig`` for a baseline id, layered on top of ``base``."""
    base = RunConfig() if base is None else base
    if baseline == "agps":
        return replace(base, name="agps")
    if baseline == "serl":
        return replace(base, name="serl", agent="none")
    if baseline == "pruning_only":
        return replace(base, name="pruning_only", guidance=False, pruning=True)
    if baseline == "guidance_only":
        return replace(base, name="guidance_only", guidance=True, pruning=False)
    if baseline == "scripted_hil":
        return replace(base, name="scripted_hil", agent="oracle", guidance=True, pruning=False,
                       oracle=hil_proxy_config())
    if baseline == "open_loop_planner":
        return replace(base, name="open_loop_planner")
    raise ConfigurationError(f"unknown baseline {baseline!r}; expected one of {BASELINES}")


def planner_plan(task):
    """Recovery recipe extended to finish the task without any learned policy."""
    calls = list(recovery_plan(task).calls)
    if task == envmod.INSERTION:
        calls += [
            PrimitiveCall("move_to_pose", target="socket", rpy=(0.0, 0.0, 0.0), analysis="touch the port"),
            PrimitiveCall("move_to_pose", target="port_floor", rpy=(0.0, 0.0, 0.0), analysis="push in"),
        ]
    return GuidancePlan(tuple(calls))


def _planner_keypoints(oracle, state, obs, cfg, camera):
    kps = {}
    for kp in oracle.perceive(obs, camera):
        u, v = denormalize_pixel(kp, camera.width, camera.height)
        kps[kp.name] = deproject(camera, u, v).p
    kps.update(envmod.proprio_keypoints(state, cfg))
    if "socket" in kps:
        kps["port_floor"] = kps["socket"] - np.array([0.0, 0.0, cfg.port_depth])
    return kps


def open_loop_episode(cfg, oracle, camera, rng):
    """Perceive once, plan once, execute the whole action list blind."""
    state = envmod.reset(cfg, rng)
    obs = envmod.observe(state, cfg)
    kps = _planner_keypoints(oracle, state, obs, cfg, camera)
    oracle.calls["gen_waypoints"] += 1
    lim = np.asarray(cfg.action_limit)
    plan = plan_to_actions(planner_plan(cfg.task), kps, state.tcp, lim[:3], max_rot_step=lim[3:],
                           step_cap=cfg.horizon, refresh=lambda tcp: envmod.tcp_keypoints(tcp, cfg))
    for action in plan.actions[: cfg.horizon]:
        res = envmod.step(state, action, cfg, rng)
        state = res.next
        if res.done:
            return res.success
    return False


def run_open_loop(run_cfg, n_episodes=None):
    """Success rate of the open-loop planner, shaped like a training run's metrics."""
    cfg = run_cfg.env
    n = run_cfg.eval_episodes if n_episodes is None else n_episodes
    streams = np.random.SeedSequence(run_cfg.seed).spawn(2)
    oracle = ScriptedOracle(task_profile(cfg, run_cfg.bbox_margins), cfg, run_cfg.oracle,
                            np.random.default_rng(streams[0]))
    rng = np.random.default_rng(streams[1])
    camera = envmod.camera(cfg)
    wins = sum(open_loop_episode(cfg, oracle, camera, rng) for _ in range(n))
    metrics = RunMetrics(config_fingerprint=run_cfg.fingerprint())
    metrics.checkpoints.append((0, n, wins / n))
    metrics.agent_calls = dict(oracle.calls)
    return metrics
