"""Supervising agents: a scripted ground-truth oracle and an HTTP client for a remote one.

Both expose the same four capabilities (``decide_mode``, ``perceive``,
``gen_bbox``, ``gen_waypoints``) and count how often each is invoked.
"""
import hashlib
import json
import urllib.error
import urllib.request
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .. import env as envmod
from ..errors import (
    ConfigurationError,
    EmptyInputError,
    PerceptionEmptyError,
    ProtocolError,
    UnknownKeypointError,
)
from ..geometry import PixelKeypoint, bbox_from_keypoints, normalize_pixel, project
from ..primitives import GuidancePlan, PrimitiveCall
from . import wire
from .wire import AgentDecision, InterventionMode

GUIDE = InterventionMode.ACTION_GUIDANCE
PRUNE = InterventionMode.EXPLORATION_PRUNING


@dataclass(frozen=True)
class Subgoal:
    id: str


@dataclass(frozen=True)
class OracleConfig:
    perception_noise_sigma: float = 0.001  # metres at the keypoint's depth
    keypoint_dropout_prob: float = 0.0
    latency_steps: int = 0
    # human-in-the-loop proxy knobs (zero for the plain oracle)
    waypoint_noise_sigma: float = 0.0
    wrong_direction_prob: float = 0.0

    def __post_init__(self):
        if self.perception_noise_sigma < 0 or self.waypoint_noise_sigma < 0:
            raise ConfigurationError("noise sigmas must be nonnegative")
        if not 0.0 <= self.keypoint_dropout_prob <= 1.0:
            raise ConfigurationError("dropout probability must lie in [0, 1]")
        if not 0.0 <= self.wrong_direction_prob <= 1.0:
            raise ConfigurationError("wrong-direction probability must lie in [0, 1]")
        if self.latency_steps < 0:
            raise ConfigurationError("latency must be nonnegative")


def hil_proxy_config():
    """Synthetic stand-in for a human operator: slow, noisy, sometimes wrong."""
    return OracleConfig(latency_steps=5, waypoint_noise_sigma=0.01, wrong_direction_prob=0.1)


@dataclass(frozen=True)
class TaskProfile:
    """What an agent is told about a task, plus the oracle's per-task recipes."""

    task: str
    description: str
    rules: tuple  # (phase, mode) pairs
    default_mode: InterventionMode
    static_keypoints: tuple
    valid_keypoints: tuple
    margins: tuple
    min_size: tuple
    workspace_lo: tuple
    workspace_hi: tuple

    def mode_for(self, subgoal_id):
        return dict(self.rules).get(subgoal_id, self.default_mode)

    @property
    def workspace(self):
        from ..geometry import SpatialConstraint

        return SpatialConstraint.from_bounds(self.workspace_lo, self.workspace_hi)


INSERTION_MARGINS = (0.005, 0.01, 0.025)


def task_profile(cfg, margins=None, min_size=(0.0, 0.0, 0.0)):
    if cfg.task == envmod.INSERTION:
        return TaskProfile(
            task=cfg.task,
            description="Insert the USB connector held by the gripper into the socket.",
            rules=(("align_connector", PRUNE), ("approach_socket", GUIDE)),
            default_mode=PRUNE,
            static_keypoints=("socket",),
            valid_keypoints=("tcp", "socket"),
            margins=INSERTION_MARGINS if margins is None else tuple(margins),
            min_size=tuple(min_size),
            workspace_lo=cfg.workspace_lo,
            workspace_hi=cfg.workspace_hi,
        )
    return TaskProfile(
        task=cfg.task,
        description="Hang the knot loop held by the gripper onto the hook.",
        rules=(("approach_hook", GUIDE), ("hang_on_hook", GUIDE)),
        default_mode=GUIDE,
        static_keypoints=("hook",),
        valid_keypoints=("tcp", "ring_kp", "hook"),
        margins=(0.01, 0.01, 0.02) if margins is None else tuple(margins),
        min_size=tuple(min_size),
        workspace_lo=cfg.workspace_lo,
        workspace_hi=cfg.workspace_hi,
    )


def recovery_plan(task):
    """The oracle's fixed recovery recipe for each task."""
    if task == envmod.INSERTION:
        calls = [
            PrimitiveCall("move_to_pose", target="above_socket", rpy=(0.0, 0.0, 0.0),
                          analysis="reposition above the socket"),
            PrimitiveCall("pre_grasp", target="socket", rpy=(0.0, 0.0, 0.0),
                          analysis="descend to just above the port"),
        ]
    else:
        calls = [
            PrimitiveCall("lift", height=0.05, analysis="clear the hook body"),
            PrimitiveCall("move_to_pose", target="above_hook", analysis="centre the loop over the hook"),
            PrimitiveCall("move_delta", from_kp="ring_kp", to_kp="hook", analysis="lower the loop onto the tip"),
            PrimitiveCall("release", analysis="let go once hooked"),
        ]
    return GuidancePlan(tuple(calls))


def digest(payload):
    text = json.dumps(payload, sort_keys=True, default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


class ScriptedOracle:
    """Ground-truth agent with configurable perception noise, dropout and mistakes."""

    kind = "oracle"

    def __init__(self, profile, env_cfg, config=None, rng=None):
        self.profile = profile
        self.env_cfg = env_cfg
        self.config = OracleConfig() if config is None else config
        self.rng = np.random.default_rng(0) if rng is None else rng
        self.calls = Counter()

    def decide_mode(self, obs, subgoal):
        self.calls["decide_mode"] += 1
        mode = self.profile.mode_for(subgoal.id)
        return AgentDecision(mode, f"rule table: phase {subgoal.id} -> {mode.value}")

    def perceive(self, obs, camera):
        self.calls["perceive"] += 1
        cfg = self.config
        truth = envmod.scene_keypoints(obs, self.env_cfg)
        fx, fy = camera.K[0, 0], camera.K[1, 1]
        out = []
        for name in self.profile.static_keypoints:
            u, v, depth = project(camera, truth[name])
            if cfg.perception_noise_sigma > 0:
                u += self.rng.normal(0.0, cfg.perception_noise_sigma * fx / depth)
                v += self.rng.normal(0.0, cfg.perception_noise_sigma * fy / depth)
            if cfg.keypoint_dropout_prob > 0 and self.rng.random() < cfg.keypoint_dropout_prob:
                continue
            un, vn = normalize_pixel(u, v, camera.width, camera.height)
            out.append(PixelKeypoint(name, un, vn, 1.0, f"{name} location"))
        if not out:
            raise PerceptionEmptyError("every keypoint was dropped")
        return out

    def gen_bbox(self, keypoints3d, profile=None):
        self.calls["gen_bbox"] += 1
        profile = self.profile if profile is None else profile
        if not keypoints3d:
            raise EmptyInputError("gen_bbox needs at least one keypoint")
        return bbox_from_keypoints(keypoints3d, profile.margins, profile.min_size, profile.workspace)

    def gen_waypoints(self, obs, keypoints):
        self.calls["gen_waypoints"] += 1
        plan = recovery_plan(self.profile.task)
        missing = [n for n in self.profile.valid_keypoints if n not in keypoints]
        if missing:
            raise UnknownKeypointError(missing[0])
        return plan

    def perturb_keypoints(self, keypoints, tcp):
        """Apply the operator-noise knobs to a keypoint map (identity for the plain oracle)."""
        cfg = self.config
        if cfg.waypoint_noise_sigma == 0 and cfg.wrong_direction_prob == 0:
            return keypoints
        out = {}
        flip = cfg.wrong_direction_prob > 0 and self.rng.random() < cfg.wrong_direction_prob
        for name, p in keypoints.items():
            p = np.asarray(p, dtype=float)
            if name in self.profile.static_keypoints:
                p = p + self.rng.normal(0.0, cfg.waypoint_noise_sigma, 3)
                if flip:
                    p = 2 * np.asarray(tcp) - p
            out[name] = p
        return out


class RemoteAgent:
    """JSON-over-HTTP client. Each capability is a POST to ``{base_url}/{name}``."""

    kind = "remote"

    def __init__(self, base_url, profile, timeout=30.0):
        self.base_url = base_url.rstrip("/")
        self.profile = profile
        self.timeout = timeout
        self.calls = Counter()
        self.last_payload = None

    def _post(self, endpoint, body):
        self.calls[endpoint] += 1
        req = urllib.request.Request(
            f"{self.base_url}/{endpoint}",
            data=json.dumps(body).encode(),
            headers={"Content-Type": "application/json"},
            method="POST",
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                raw = resp.read().decode("utf-8")
        except (urllib.error.URLError, TimeoutError, OSError) as exc:
            raise ProtocolError(f"{endpoint}: transport failure ({exc})", None) from None
        self.last_payload = raw
        return raw

    def _base(self):
        return {"task": self.profile.description, "task_id": self.profile.task}

    def decide_mode(self, obs, subgoal):
        body = {**self._base(), "subgoal": subgoal.id, "observation": _obs_json(obs)}
        return wire.decode_strategy(self._post("decide_mode", body))

    def perceive(self, obs, camera):
        body = {
            **self._base(),
            "observation": _obs_json(obs),
            "camera": {"K": camera.K.tolist(), "width": camera.width, "height": camera.height},
        }
        kps = wire.decode_keypoints(self._post("perceive", body))
        if not kps:
            raise PerceptionEmptyError("remote agent returned no keypoints")
        return kps

    def gen_bbox(self, keypoints3d, profile=None):
        profile = self.profile if profile is None else profile
        if not keypoints3d:
            raise EmptyInputError("gen_bbox needs at least one keypoint")
        body = {
            **self._base(),
            "keypoints_3d": {kp.name: kp.p.tolist() for kp in keypoints3d},
            "global_xyz_low": list(profile.workspace_lo),
            "global_xyz_high": list(profile.workspace_hi),
        }
        return wire.decode_bbox(self._post("gen_bbox", body), profile.workspace).constraint

    def gen_waypoints(self, obs, keypoints):
        body = {
            **self._base(),
            "observation": _obs_json(obs),
            "keypoints": {k: np.asarray(v, dtype=float).tolist() for k, v in keypoints.items()},
            "valid_keypoints": list(self.profile.valid_keypoints),
        }
        return wire.decode_tool_calls(self._post("gen_waypoints", body))

    def perturb_keypoints(self, keypoints, tcp):
        return keypoints


def _obs_json(obs):
    return {"proprio": obs.proprio.tolist(), "scene": obs.scene.tolist(), "step": obs.step_index}


# module-level operations ------------------------------------------------------

def decide_mode(agent, obs, subgoal):
    return agent.decide_mode(obs, subgoal)


def perceive(agent, obs, camera):
    return agent.perceive(obs, camera)


def gen_bbox(agent, keypoints3d, profile=None):
    return agent.gen_bbox(keypoints3d, profile)


def gen_waypoints(agent, obs, keypoints):
    return agent.gen_waypoints(obs, keypoints)


def make_agent(kind, env_cfg, profile=None, oracle_config=None, rng=None, remote_url=None, timeout=30.0):
    profile = task_profile(env_cfg) if profile is None else profile
    if kind == "oracle":
        return ScriptedOracle(profile, env_cfg, oracle_config, rng)
    if kind == "remote":
        if not remote_url:
            raise ConfigurationError("remote agent needs a URL")
        return RemoteAgent(remote_url, profile, timeout)
    if kind == "none":
        return None
    raise ConfigurationError(f"unknown agent kind {kind!r}")
