"""Seedable analogues of a precision insertion task and a hook-hanging task.

Insertion: a fixture plane at ``surface_z`` blocks the TCP everywhere except a
small port around the socket; success means reaching the bottom of the port
with the yaw aligned.  Hanging: a ring hangs ``ring_drop`` below the TCP and
has to pass over the hook tip before being lowered onto it and released.
"""
import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .encoding import Observation
from .errors import ActionBoundsError, ConfigurationError, ExpertFailureError
from .geometry import CameraModel, SpatialConstraint, intrinsics, look_at, plane_depth
from .state import GRIPPER_CLOSE, GRIPPER_OPEN, EnvAction, TCPState, wrap_angle

INSERTION = "insertion"
HANGING = "hanging"
TASKS = (INSERTION, HANGING)

DEMO_FORMAT = "agps-demos"
DEMO_VERSION = 1
DEMO_FIELDS = ("state", "action", "reward", "next", "done", "success", "episode", "step")


@dataclass(frozen=True)
class EnvConfig:
    task: str = INSERTION
    horizon: int = 400
    control_hz: float = 10.0
    # half-ranges (x, y, z, roll, pitch, yaw) around the nominal start
    reset_ranges: tuple = (0.06, 0.06, 0.05, 0.0, 0.0, 0.06)
    action_limit: tuple = (0.01, 0.01, 0.01, 0.05, 0.05, 0.05)
    success_tol: tuple = (0.002, 0.002, 0.003)
    rot_tol: float = 0.1
    transition_noise_sigma: float = 0.0002
    goal_jitter: float = 0.0
    seed: int = 0
    goal: tuple = (0.5, 0.0, 0.1)
    start_offset: tuple = (0.0, 0.0, 0.08)
    port_depth: float = 0.01
    ring_drop: float = 0.03
    hook_clearance: float = 0.01
    near_goal_noise_scale: float = 3.0
    # fraction of lateral motion kept while pressing down on the fixture away from the port
    contact_friction: float = 1.0
    auto_release: bool = True
    workspace_lo: tuple = (0.38, -0.12, 0.1)
    workspace_hi: tuple = (0.62, 0.12, 0.32)
    image_size: tuple = (640, 480)
    # recorded for reference only; the simulator has no impedance controller
    metadata: tuple = ()

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigurationError(f"unknown task {self.task!r}")
        if self.horizon <= 0:
            raise ConfigurationError("horizon must be positive")
        if any(t <= 0 for t in self.success_tol) or self.rot_tol <= 0:
            raise ConfigurationError("tolerances must be positive")
        if len(self.reset_ranges) != 6 or len(self.action_limit) != 6:
            raise ConfigurationError("reset_ranges and action_limit need 6 entries")
        if self.transition_noise_sigma < 0:
            raise ConfigurationError("noise sigma must be nonnegative")

    @property
    def surface_z(self):
        return self.goal[2] + self.port_depth

    @property
    def workspace(self):
        return SpatialConstraint.from_bounds(self.workspace_lo, self.workspace_hi)

    @property
    def nominal_start(self):
        return np.asarray(self.goal) + np.asarray(self.start_offset)


def insertion_config(**overrides):
    base = dict(
        task=INSERTION,
        horizon=400,
        metadata=(
            ("translational_stiffness_N_per_m", 1800),
            ("rotational_stiffness_Nm_per_rad", 150),
            ("wrist_camera_resolution", "848x480"),
            ("side_camera_resolution", "640x480"),
            ("initial_demonstrations", 20),
        ),
    )
    base.update(overrides)
    return EnvConfig(**base)


def hanging_config(**overrides):
    base = dict(
        task=HANGING,
        horizon=200,
        reset_ranges=(0.02, 0.0, 0.02, 0.0, 0.0, 0.0),
        success_tol=(0.01, 0.01, 0.005),
        goal=(0.55, 0.0, 0.22),
        start_offset=(-0.06, 0.0, 0.0),
        workspace_lo=(0.40, -0.12, 0.15),
        workspace_hi=(0.62, 0.12, 0.35),
        transition_noise_sigma=0.0005,
        metadata=(
            ("translational_stiffness_N_per_m", 2000),
            ("rotational_stiffness_Nm_per_rad", 150),
            ("initial_demonstrations", 20),
        ),
    )
    base.update(overrides)
    return EnvConfig(**base)


def default_config(task, **overrides):
    if task == INSERTION:
        return insertion_config(**overrides)
    if task == HANGING:
        return hanging_config(**overrides)
    raise ConfigurationError(f"unknown task {task!r}")


@dataclass(frozen=True)
class EnvState:
    tcp: TCPState
    goal_pose: TCPState
    phase: str
    object_attached: bool = True
    step: int = 0
    passed_over: bool = False

    def to_json(self):
        return {
            "tcp": {
                "position": self.tcp.position.tolist(),
                "rpy": self.tcp.rpy.tolist(),
                "gripper": float(self.tcp.gripper),
            },
            "goal": {"position": self.goal_pose.position.tolist(), "rpy": self.goal_pose.rpy.tolist()},
            "phase": self.phase,
            "object_attached": self.object_attached,
            "step": self.step,
            "passed_over": self.passed_over,
        }

    @classmethod
    def from_json(cls, d):
        return cls(
            TCPState(d["tcp"]["position"], d["tcp"]["rpy"], d["tcp"]["gripper"]),
            TCPState(d["goal"]["position"], d["goal"]["rpy"]),
            d["phase"],
            d["object_attached"],
            d["step"],
            d["passed_over"],
        )


@dataclass(frozen=True)
class StepResult:
    next: EnvState
    reward: float
    done: bool
    success: bool


def ring_position(state, cfg):
    return state.tcp.position - np.array([0.0, 0.0, cfg.ring_drop])


def _phase(tcp_pos, goal, cfg, passed_over=False):
    if cfg.task == INSERTION:
        planar = np.linalg.norm(tcp_pos[:2] - goal[:2])
        near = planar <= 0.01 and tcp_pos[2] <= cfg.surface_z + 0.04
        return "align_connector" if near else "approach_socket"
    return "hang_on_hook" if passed_over else "approach_hook"


def reset(cfg, rng):
    """Sample a start pose uniformly inside the reset ranges."""
    goal = np.asarray(cfg.goal, dtype=float)
    if cfg.goal_jitter > 0:
        goal = goal + rng.uniform(-cfg.goal_jitter, cfg.goal_jitter, 3) * np.array([1.0, 1.0, 0.0])
    ranges = np.asarray(cfg.reset_ranges, dtype=float)
    offset = rng.uniform(-1.0, 1.0, 6) * ranges
    start = goal + np.asarray(cfg.start_offset) + offset[:3]
    tcp = TCPState(start, offset[3:], 0.0)
    goal_pose = TCPState(goal, (0.0, 0.0, 0.0))
    return EnvState(tcp, goal_pose, _phase(start, goal, cfg), True, 0, False)


def _in_port(pos, goal, yaw_err, cfg):
    tol = np.asarray(cfg.success_tol)
    return bool(np.all(np.abs(pos[:2] - goal[:2]) <= tol[:2]) and abs(yaw_err) <= cfg.rot_tol)


def check_action(action, cfg):
    lim = np.asarray(cfg.action_limit)
    if np.any(np.abs(action.delta) > lim + 1e-12):
        raise ActionBoundsError(f"action {action.delta.tolist()} exceeds limits {lim.tolist()}")


def step(state, action, cfg, rng):
    """Advance one control step. ``rng`` supplies the transition noise."""
    check_action(action, cfg)
    goal = state.goal_pose.position
    old = state.tcp.position
    sigma = cfg.transition_noise_sigma
    if cfg.task == HANGING and np.linalg.norm(ring_position(state, cfg) - goal) < 0.05:
        sigma *= cfg.near_goal_noise_scale
    noise = rng.normal(0.0, sigma, 3) if sigma > 0 else np.zeros(3)
    pos = old + action.delta[:3] + noise
    rpy = wrap_angle(state.tcp.rpy + action.delta[3:])
    pos = np.clip(pos, cfg.workspace_lo, cfg.workspace_hi)
    grip = state.tcp.gripper
    if action.gripper == GRIPPER_OPEN:
        grip = 1.0
    elif action.gripper == GRIPPER_CLOSE:
        grip = 0.0
    attached = state.object_attached
    passed_over = state.passed_over
    success = False
    failed = False
    tol = np.asarray(cfg.success_tol)

    if cfg.task == INSERTION:
        yaw_err = wrap_angle(rpy[2] - state.goal_pose.rpy[2])
        was_inside = old[2] < cfg.surface_z
        if was_inside:
            # laterally confined by the port walls
            pos[:2] = np.clip(pos[:2], goal[:2] - tol[:2], goal[:2] + tol[:2])
            rpy[2] = state.tcp.rpy[2]
            yaw_err = wrap_angle(rpy[2] - state.goal_pose.rpy[2])
        elif pos[2] < cfg.surface_z and not _in_port(pos, goal, yaw_err, cfg):
            if old[2] <= cfg.surface_z + 1e-9 and action.delta[2] < 0:
                pos[:2] = old[:2] + cfg.contact_friction * (pos[:2] - old[:2])
            pos[2] = cfg.surface_z
        pos[2] = max(pos[2], goal[2])
        success = _in_port(pos, goal, yaw_err, cfg) and pos[2] - goal[2] <= tol[2]
    else:
        ring = pos - np.array([0.0, 0.0, cfg.ring_drop])
        old_ring = old - np.array([0.0, 0.0, cfg.ring_drop])
        top = goal[2] + cfg.hook_clearance
        if ring[2] < top and old_ring[0] < goal[0] - tol[0] and ring[0] >= goal[0] - tol[0]:
            # the hook body blocks lateral passage below its tip
            ring[0] = goal[0] - tol[0] - 1e-4
        aligned = abs(ring[0] - goal[0]) <= tol[0] and abs(ring[1] - goal[1]) <= tol[1]
        if not aligned:
            passed_over = False
        elif ring[2] >= top:
            passed_over = True
        if passed_over and aligned:
            ring[2] = max(ring[2], goal[2])
        pos = ring + np.array([0.0, 0.0, cfg.ring_drop])
        hooked = passed_over and aligned and ring[2] - goal[2] <= tol[2]
        if attached and action.gripper == GRIPPER_OPEN:
            attached = False
            success = hooked
            failed = not hooked
        elif attached and hooked and cfg.auto_release:
            success = True

    tcp = TCPState(pos, rpy, grip)
    nxt = EnvState(tcp, state.goal_pose, _phase(pos, goal, cfg, passed_over), attached, state.step + 1, passed_over)
    done = success or failed or nxt.step >= cfg.horizon
    return StepResult(nxt, 1.0 if success else 0.0, bool(done), bool(success))


def observe(state, cfg):
    tcp = state.tcp
    proprio = np.concatenate([tcp.position, tcp.rpy, [tcp.gripper]])
    scene = [state.goal_pose.position, [state.goal_pose.rpy[2]]]
    if cfg.task == HANGING:
        scene += [ring_position(state, cfg), [float(state.passed_over)]]
    return Observation(proprio, np.concatenate(scene), state.step)


def obs_dim(cfg):
    return 7 + (4 if cfg.task == INSERTION else 8)


def obs_normalizer(cfg):
    """Fixed per-feature centre and scale used by the encoder and the policy inputs."""
    start = cfg.nominal_start
    goal = np.asarray(cfg.goal)
    center = np.concatenate([start, np.zeros(3), [0.5], goal, [0.0]])
    scale = np.concatenate([np.full(3, 0.05), np.full(3, 0.1), [0.5], np.full(3, 0.05), [0.1]])
    if cfg.task == HANGING:
        center = np.concatenate([center, start - np.array([0.0, 0.0, cfg.ring_drop]), [0.5]])
        scale = np.concatenate([scale, np.full(3, 0.05), [0.5]])
    return center, scale


def camera(cfg):
    """Fixed side camera with analytic depth of the plane carrying the task's static keypoint."""
    width, height = cfg.image_size
    K = intrinsics(600.0, 600.0, width / 2, height / 2)
    goal = np.asarray(cfg.goal, dtype=float)
    if cfg.task == INSERTION:
        look = np.array([goal[0], goal[1], cfg.surface_z])
        eye = look + np.array([-0.35, 0.0, 0.35])
        normal, offset = (0.0, 0.0, 1.0), cfg.surface_z
    else:
        look = goal
        eye = goal + np.array([-0.45, 0.05, 0.1])
        normal, offset = (1.0, 0.0, 0.0), goal[0]
    R, t = look_at(eye, look)
    cam = CameraModel(K, R, t, None, width, height)
    return replace(cam, depth_lookup=plane_depth(cam, normal, offset))


def _static_keypoints(goal, cfg):
    goal = np.asarray(goal, dtype=float)
    if cfg.task == INSERTION:
        return {"socket": np.array([goal[0], goal[1], goal[2] + cfg.port_depth])}
    return {"hook": goal.copy()}


def task_keypoints(state, cfg):
    """Ground-truth static keypoints visible to the camera."""
    return _static_keypoints(state.goal_pose.position, cfg)


def scene_keypoints(obs, cfg):
    """Same as :func:`task_keypoints`, read off an observation's scene block."""
    return _static_keypoints(obs.scene[:3], cfg)


def proprio_keypoints(state, cfg):
    """Keypoints known from proprioception rather than perception."""
    return tcp_keypoints(state.tcp, cfg)


def tcp_keypoints(tcp, cfg):
    kps = {"tcp": tcp.position.copy()}
    if cfg.task == HANGING:
        kps["ring_kp"] = tcp.position - np.array([0.0, 0.0, cfg.ring_drop])
    return kps


def expert_action(state, cfg):
    """Scripted expert: closed-loop proportional control through task waypoints."""
    lim = np.asarray(cfg.action_limit)
    goal = state.goal_pose.position
    pos = state.tcp.position
    tol = np.asarray(cfg.success_tol)
    if cfg.task == INSERTION:
        xy_err = goal[:2] - pos[:2]
        aligned = np.all(np.abs(xy_err) <= 0.4 * tol[:2]) and abs(state.tcp.rpy[2]) <= 0.5 * cfg.rot_tol
        z_target = goal[2] if aligned or pos[2] < cfg.surface_z else cfg.surface_z + 0.005
        target = np.array([goal[0], goal[1], z_target])
        gripper = None
    else:
        ring = ring_position(state, cfg)
        top = goal[2] + cfg.hook_clearance
        gripper = None
        if state.passed_over:
            target_ring = goal
            if ring[2] - goal[2] <= 0.5 * tol[2]:
                gripper = GRIPPER_OPEN
        elif ring[2] < top + 0.01 and ring[0] < goal[0] - tol[0]:
            target_ring = np.array([ring[0], goal[1], top + 0.02])
        else:
            target_ring = np.array([goal[0], goal[1], top + 0.02])
        target = target_ring + np.array([0.0, 0.0, cfg.ring_drop])
    dpos = np.clip(target - pos, -lim[:3], lim[:3])
    drot = np.clip(wrap_angle(state.goal_pose.rpy - state.tcp.rpy), -lim[3:], lim[3:])
    return EnvAction(np.concatenate([dpos, drot]), gripper)


@dataclass
class Transition:
    obs: np.ndarray
    action: np.ndarray
    reward: float
    next_obs: np.ndarray
    done: bool
    success: bool
    source: str = "policy"


@dataclass
class DemoEpisode:
    episode_id: int
    states: list
    actions: list
    rewards: list
    dones: list
    successes: list
    observations: list = field(default_factory=list)

    @property
    def success(self):
        return bool(self.successes and self.successes[-1])

    def __len__(self):
        return len(self.actions)

    def transitions(self, cfg):
        out = []
        for i, a in enumerate(self.actions):
            out.append(Transition(
                observe(self.states[i], cfg).vector(),
                np.asarray(a.delta, dtype=float),
                self.rewards[i],
                observe(self.states[i + 1], cfg).vector(),
                self.dones[i],
                self.successes[i],
                "demo",
            ))
        return out


@dataclass
class DemoSet:
    cfg: EnvConfig
    episodes: list

    def __len__(self):
        return len(self.episodes)

    def transitions(self):
        return [t for ep in self.episodes for t in ep.transitions(self.cfg)]

    def observation_arrays(self):
        return [np.array([o.vector() for o in ep.observations]) for ep in self.episodes]

    def dumps(self):
        header = {
            "format": DEMO_FORMAT,
            "version": DEMO_VERSION,
            "fields": list(DEMO_FIELDS),
            "env": _cfg_json(self.cfg),
            "episodes": len(self.episodes),
        }
        lines = [json.dumps(header)]
        for ep in self.episodes:
            for i, a in enumerate(ep.actions):
                rec = {
                    "state": ep.states[i].to_json(),
                    "action": {"delta": a.delta.tolist(), "gripper": a.gripper},
                    "reward": ep.rewards[i],
                    "next": ep.states[i + 1].to_json(),
                    "done": ep.dones[i],
                    "success": ep.successes[i],
                    "episode": ep.episode_id,
                    "step": i,
                }
                lines.append(json.dumps(rec))
        return "\n".join(lines) + "\n"

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            lines = [ln for ln in fh.read().splitlines() if ln.strip()]
        header = json.loads(lines[0])
        if header.get("format") != DEMO_FORMAT or header.get("version") != DEMO_VERSION:
            raise ValueError(f"{path}: not a version-{DEMO_VERSION} demo file")
        cfg = _cfg_from_json(header["env"])
        episodes = {}
        for ln in lines[1:]:
            rec = json.loads(ln)
            ep = episodes.setdefault(rec["episode"], DemoEpisode(rec["episode"], [], [], [], [], []))
            if not ep.states:
                ep.states.append(EnvState.from_json(rec["state"]))
            ep.actions.append(EnvAction(rec["action"]["delta"], rec["action"]["gripper"]))
            ep.rewards.append(rec["reward"])
            ep.states.append(EnvState.from_json(rec["next"]))
            ep.dones.append(rec["done"])
            ep.successes.append(rec["success"])
        out = []
        for key in sorted(episodes):
            ep = episodes[key]
            ep.observations = [observe(s, cfg) for s in ep.states]
            out.append(ep)
        return cls(cfg, out)


def _cfg_json(cfg):
    d = asdict(cfg)
    d["metadata"] = [list(kv) for kv in cfg.metadata]
    return d


def _cfg_from_json(d):
    d = dict(d)
    for k, v in d.items():
        if isinstance(v, list):
            d[k] = tuple(tuple(x) if isinstance(x, list) else x for x in v)
    return EnvConfig(**d)


def rollout(cfg, rng, policy, state=None, max_steps=None):
    """Run ``policy(state) -> EnvAction`` until done; returns a :class:`DemoEpisode`."""
    state = reset(cfg, rng) if state is None else state
    ep = DemoEpisode(0, [state], [], [], [], [], [observe(state, cfg)])
    limit = cfg.horizon if max_steps is None else max_steps
    for _ in range(limit):
        action = policy(state)
        res = step(state, action, cfg, rng)
        ep.actions.append(action)
        ep.rewards.append(res.reward)
        ep.dones.append(res.done)
        ep.successes.append(res.success)
        ep.states.append(res.next)
        ep.observations.append(observe(res.next, cfg))
        state = res.next
        if res.done:
            break
    return ep


def generate_demos(cfg, n=20, rng=None, retry_cap=10):
    """``n`` successful scripted-expert episodes; failed attempts are resampled."""
    if n < 1:
        raise ConfigurationError("need at least one demonstration")
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    episodes = []
    failures = 0
    while len(episodes) < n:
        ep = rollout(cfg, rng, lambda s: expert_action(s, cfg))
        if ep.success:
            ep.episode_id = len(episodes)
            episodes.append(ep)
            failures = 0
        else:
            failures += 1
            if failures >= retry_cap:
                raise ExpertFailureError(f"expert failed {failures} consecutive resets under {cfg.task} config")
    return DemoSet(cfg, episodes)
