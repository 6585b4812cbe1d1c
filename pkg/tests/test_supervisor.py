import numpy as np
import pytest

from agps import env as envmod
from agps.errors import ConfigurationError, PerceptionEmptyError, ProtocolError, UnknownKeypointError
from agps.geometry import WorldPoint, denormalize_pixel, deproject, project
from agps.primitives import GuidancePlan, PrimitiveCall, resolve
from agps.state import TCPState
from agps.supervisor import (
    GUIDE,
    PRUNE,
    EpisodicMemory,
    OracleConfig,
    RemoteAgent,
    ScriptedOracle,
    Subgoal,
    check_memory,
    make_agent,
    recovery_plan,
    record_outcome,
    task_profile,
)
from agps.supervisor.server import OracleServer


def oracle_for(cfg, **kw):
    return ScriptedOracle(task_profile(cfg), cfg, OracleConfig(**kw), np.random.default_rng(0))


def scene(cfg, seed=0):
    state = envmod.reset(cfg, np.random.default_rng(seed))
    return state, envmod.observe(state, cfg)


# decide_mode ------------------------------------------------------------------

def test_rule_table(ins_cfg, hang_cfg):
    assert oracle_for(ins_cfg).decide_mode(None, Subgoal("align_connector")).mode is PRUNE
    assert oracle_for(hang_cfg).decide_mode(None, Subgoal("approach_hook")).mode is GUIDE


# perceive ---------------------------------------------------------------------

def test_noiseless_perception_recovers_socket(ins_cfg):
    state, obs = scene(ins_cfg)
    cam = envmod.camera(ins_cfg)
    (kp,) = oracle_for(ins_cfg, perception_noise_sigma=0.0).perceive(obs, cam)
    u, v = denormalize_pixel(kp, cam.width, cam.height)
    p = deproject(cam, u, v).p
    truth = envmod.task_keypoints(state, ins_cfg)["socket"]
    # the wire format quantises pixels to 1/1000 of the image, so exactness is bounded by that grid
    px_m = np.linalg.norm(p - cam.position) / cam.K[0, 0] * cam.width / 1000
    assert np.linalg.norm(p - truth) <= px_m


def test_exact_pixels_deproject_to_truth(ins_cfg):
    state, _ = scene(ins_cfg)
    cam = envmod.camera(ins_cfg)
    truth = envmod.task_keypoints(state, ins_cfg)["socket"]
    u, v, _ = project(cam, truth)
    assert np.linalg.norm(deproject(cam, u, v).p - truth) <= 1e-6


def test_dropout_raises(ins_cfg):
    _, obs = scene(ins_cfg)
    with pytest.raises(PerceptionEmptyError):
        oracle_for(ins_cfg, keypoint_dropout_prob=1.0).perceive(obs, envmod.camera(ins_cfg))


# gen_bbox ---------------------------------------------------------------------

def test_insertion_margins(ins_cfg):
    box = oracle_for(ins_cfg).gen_bbox([WorldPoint("socket", [0.5, 0.0, 0.2])])
    assert np.allclose(box.size, [0.01, 0.02, 0.05])
    assert np.allclose(box.center, [0.5, 0.0, 0.2])


# gen_waypoints ------------------------------------------------------------------

def test_hanging_recipe(hang_cfg):
    plan = oracle_for(hang_cfg).gen_waypoints(None, {"tcp": 0, "ring_kp": 0, "hook": 0})
    assert [c.to_json() | {"analysis": None} for c in plan] == [
        {"name": "lift", "height": 0.05, "analysis": None},
        {"name": "move_to_pose", "target": "above_hook", "analysis": None},
        {"name": "move_delta", "from": "ring_kp", "to": "hook", "analysis": None},
        {"name": "release", "analysis": None},
    ]


def test_missing_keypoint(hang_cfg):
    with pytest.raises(UnknownKeypointError):
        oracle_for(hang_cfg).gen_waypoints(None, {"tcp": 0})


def test_insertion_plan_reduces_lateral_error(ins_cfg):
    cfg = envmod.insertion_config(transition_noise_sigma=0.0)
    state, _ = scene(cfg)
    tcp = TCPState(np.asarray(cfg.goal) + [0.0, 0.06, 0.06])
    socket = envmod.task_keypoints(state, cfg)["socket"]
    kps = {"socket": socket, "tcp": tcp.position}
    errs = [abs(tcp.position[1] - socket[1])]
    for call in recovery_plan(cfg.task):
        wp = resolve(call, kps, tcp)
        tcp = wp.target
        errs.append(abs(tcp.position[1] - socket[1]))
    assert errs[1] < errs[0]
    assert all(b <= a + 1e-12 for a, b in zip(errs, errs[1:]))


def test_operator_noise_perturbs_static_keypoints_only(ins_cfg):
    o = ScriptedOracle(task_profile(ins_cfg), ins_cfg, OracleConfig(waypoint_noise_sigma=0.01),
                       np.random.default_rng(3))
    kps = {"socket": np.array([0.5, 0, 0.11]), "tcp": np.array([0.5, 0, 0.2])}
    out = o.perturb_keypoints(kps, kps["tcp"])
    assert np.array_equal(out["tcp"], kps["tcp"])
    assert not np.array_equal(out["socket"], kps["socket"])
    assert oracle_for(ins_cfg).perturb_keypoints(kps, kps["tcp"]) is kps


# memory ---------------------------------------------------------------------------

def test_memory_lifecycle():
    mem = EpisodicMemory()
    g = Subgoal("align_connector")
    box = object()
    assert check_memory(mem, g) is None
    record_outcome(mem, g, box, False)
    assert check_memory(mem, g) is None
    record_outcome(mem, g, box, True)
    entry = mem.entries[g.id]
    assert (entry.successes, entry.failures) == (1, 0)
    assert check_memory(mem, g) is box
    record_outcome(mem, g, box, False)
    record_outcome(mem, g, box, True)
    assert mem.entries[g.id].failures == 0
    for _ in range(3):
        record_outcome(mem, g, box, False)
    assert g not in mem
    assert check_memory(mem, g) is None


# agents ---------------------------------------------------------------------------

def test_make_agent(ins_cfg):
    assert make_agent("none", ins_cfg) is None
    assert isinstance(make_agent("oracle", ins_cfg), ScriptedOracle)
    with pytest.raises(ConfigurationError):
        make_agent("remote", ins_cfg)
    with pytest.raises(ConfigurationError):
        make_agent("vlm", ins_cfg)


@pytest.mark.parametrize("task", envmod.TASKS)
def test_remote_agent_matches_oracle_over_http(task):
    cfg = envmod.default_config(task)
    state, obs = scene(cfg)
    cam = envmod.camera(cfg)
    local = oracle_for(cfg, perception_noise_sigma=0.0)
    served = oracle_for(cfg, perception_noise_sigma=0.0)
    with OracleServer(served, cam) as srv:
        remote = RemoteAgent(srv.url, task_profile(cfg))
        phase = Subgoal(state.phase)
        assert remote.decide_mode(obs, phase) == local.decide_mode(obs, phase)
        kps = remote.perceive(obs, cam)
        assert kps == local.perceive(obs, cam)
        pts = [WorldPoint(k.name, np.array([0.5, 0.0, 0.2])) for k in kps]
        assert remote.gen_bbox(pts) == local.gen_bbox(pts)
        named = {n: np.zeros(3) for n in task_profile(cfg).valid_keypoints}
        assert remote.gen_waypoints(obs, named) == local.gen_waypoints(obs, named)
        assert remote.calls["perceive"] == 1


def test_remote_transport_failure_is_protocol_error(ins_cfg):
    remote = RemoteAgent("http://127.0.0.1:9", task_profile(ins_cfg), timeout=0.5)
    with pytest.raises(ProtocolError):
        remote.decide_mode(scene(ins_cfg)[1], Subgoal("x"))


def test_recovery_plans_are_plans():
    for task in envmod.TASKS:
        assert isinstance(recovery_plan(task), GuidancePlan)
    assert recovery_plan(envmod.INSERTION).calls[0] == PrimitiveCall(
        "move_to_pose", target="above_socket", rpy=(0.0, 0.0, 0.0), analysis="reposition above the socket")
