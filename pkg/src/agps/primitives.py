"""Action primitives: named waypoint generators and a proportional waypoint tracker."""
from dataclasses import dataclass

import numpy as np

from .errors import MalformedCallError, UnknownKeypointError
from .geometry import WorldPoint
from .state import GRIPPER_CLOSE, GRIPPER_OPEN, EnvAction, TCPState, wrap_angle

PRIMITIVE_NAMES = ("move_to_pose", "pre_grasp", "move_delta", "lift", "grasp", "release")
ABOVE_PREFIX = "above_"

ABOVE_OFFSET = 0.05
APPROACH_OFFSET = 0.03
WAYPOINT_TOL = 0.005
ROT_TOL = 0.01


@dataclass(frozen=True)
class PrimitiveCall:
    name: str
    target: str = None
    rpy: tuple = None
    from_kp: str = None
    to_kp: str = None
    height: float = None
    analysis: str = None

    def __post_init__(self):
        if self.name not in PRIMITIVE_NAMES:
            raise MalformedCallError(f"unknown primitive {self.name!r}")
        if self.name in ("move_to_pose", "pre_grasp") and not self.target:
            raise MalformedCallError(f"{self.name} requires a target")
        if self.name == "move_delta" and not (self.from_kp and self.to_kp):
            raise MalformedCallError("move_delta requires 'from' and 'to'")
        if self.name == "lift":
            if self.height is None or not float(self.height) > 0:
                raise MalformedCallError("lift requires a positive height")
        if self.rpy is not None:
            if len(self.rpy) != 3:
                raise MalformedCallError("rpy must have three components")
            object.__setattr__(self, "rpy", tuple(self.rpy))

    def to_json(self):
        out = {"name": self.name}
        if self.target is not None:
            out["target"] = self.target
        if self.rpy is not None:
            out["rpy"] = list(self.rpy)
        if self.from_kp is not None:
            out["from"] = self.from_kp
        if self.to_kp is not None:
            out["to"] = self.to_kp
        if self.height is not None:
            out["height"] = self.height
        if self.analysis is not None:
            out["analysis"] = self.analysis
        return out

    @classmethod
    def from_json(cls, obj):
        if not isinstance(obj, dict) or "name" not in obj:
            raise MalformedCallError(f"primitive call must be an object with a name: {obj!r}")
        return cls(
            name=obj["name"],
            target=obj.get("target"),
            rpy=obj.get("rpy"),
            from_kp=obj.get("from"),
            to_kp=obj.get("to"),
            height=obj.get("height"),
            analysis=obj.get("analysis"),
        )


@dataclass(frozen=True)
class GuidancePlan:
    calls: tuple

    def __post_init__(self):
        calls = tuple(self.calls)
        if not calls:
            raise MalformedCallError("a guidance plan needs at least one call")
        for c in calls:
            if not isinstance(c, PrimitiveCall):
                raise MalformedCallError(f"not a primitive call: {c!r}")
        object.__setattr__(self, "calls", calls)

    def __len__(self):
        return len(self.calls)

    def __iter__(self):
        return iter(self.calls)


@dataclass(frozen=True)
class Waypoint:
    target: TCPState
    kind: str = "motion"  # or "gripper"


def _lookup(keypoints, name):
    if name not in keypoints:
        raise UnknownKeypointError(name)
    kp = keypoints[name]
    return np.array(kp.p if isinstance(kp, WorldPoint) else kp, dtype=float)


def _target_position(keypoints, target, above_offset):
    if target in keypoints:
        return _lookup(keypoints, target)
    if target.startswith(ABOVE_PREFIX):
        base = _lookup(keypoints, target[len(ABOVE_PREFIX):])
        return base + np.array([0.0, 0.0, above_offset])
    raise UnknownKeypointError(target)


def resolve(call, keypoints, tcp, above_offset=ABOVE_OFFSET, approach_offset=APPROACH_OFFSET):
    """Turn one primitive call into a waypoint relative to the current TCP."""
    rpy = tcp.rpy if call.rpy is None else np.asarray(call.rpy, dtype=float)
    name = call.name
    if name == "move_to_pose":
        pos = _target_position(keypoints, call.target, above_offset)
    elif name == "pre_grasp":
        pos = _target_position(keypoints, call.target, above_offset) + np.array([0.0, 0.0, approach_offset])
    elif name == "move_delta":
        pos = tcp.position + (_lookup(keypoints, call.to_kp) - _lookup(keypoints, call.from_kp))
    elif name == "lift":
        pos = tcp.position + np.array([0.0, 0.0, float(call.height)])
    elif name == "grasp":
        return Waypoint(tcp.replace(gripper=0.0), "gripper")
    elif name == "release":
        return Waypoint(tcp.replace(gripper=1.0), "gripper")
    else:  # pragma: no cover - guarded by PrimitiveCall
        raise MalformedCallError(name)
    return Waypoint(tcp.replace(position=pos, rpy=rpy), "motion")


def track_step(tcp, waypoint, max_step, gain=1.0, max_rot_step=None):
    """One proportional-control action toward a motion waypoint, clipped per axis."""
    max_rot_step = max_step if max_rot_step is None else max_rot_step
    dpos = np.clip(gain * (waypoint.target.position - tcp.position), -max_step, max_step)
    drot = np.clip(gain * wrap_angle(waypoint.target.rpy - tcp.rpy), -max_rot_step, max_rot_step)
    return EnvAction(np.concatenate([dpos, drot]))


def reached(tcp, waypoint, tol=WAYPOINT_TOL, rot_tol=ROT_TOL):
    if waypoint.kind == "gripper":
        return True
    pos_err = np.linalg.norm(waypoint.target.position - tcp.position)
    rot_err = np.max(np.abs(wrap_angle(waypoint.target.rpy - tcp.rpy)))
    return pos_err <= tol and rot_err <= rot_tol


def gripper_action(waypoint):
    return EnvAction.zero(GRIPPER_OPEN if waypoint.target.gripper >= 0.5 else GRIPPER_CLOSE)


@dataclass
class PlanActions:
    actions: list
    waypoints: list
    reached: bool
    final_tcp: TCPState


def apply_nominal(tcp, action):
    """Noise-free kinematics: integrate one action into a TCP state."""
    grip = tcp.gripper
    if action.gripper == GRIPPER_OPEN:
        grip = 1.0
    elif action.gripper == GRIPPER_CLOSE:
        grip = 0.0
    return TCPState(tcp.position + action.delta[:3], tcp.rpy + action.delta[3:], grip)


def plan_to_actions(
    plan,
    keypoints,
    tcp0,
    max_step,
    gain=1.0,
    tol=WAYPOINT_TOL,
    step_cap=100,
    above_offset=ABOVE_OFFSET,
    approach_offset=APPROACH_OFFSET,
    max_rot_step=None,
    refresh=None,
):
    """Open-loop action list that drives nominal kinematics through every waypoint.

    Stops early with ``reached=False`` if a waypoint is not within ``tol`` after
    ``step_cap`` actions.  ``refresh(tcp)`` may return keypoints that move with
    the TCP; they are recomputed from the nominal state before each call.
    """
    if not np.all(np.asarray(max_step) > 0):
        raise ValueError("max_step must be positive")
    tcp = tcp0
    actions, waypoints = [], []
    for call in plan:
        if refresh is not None:
            keypoints = {**keypoints, **refresh(tcp)}
        wp = resolve(call, keypoints, tcp, above_offset, approach_offset)
        waypoints.append(wp)
        if wp.kind == "gripper":
            a = gripper_action(wp)
            actions.append(a)
            tcp = apply_nominal(tcp, a)
            continue
        n = 0
        while not reached(tcp, wp, tol):
            if n >= step_cap:
                return PlanActions(actions, waypoints, False, tcp)
            a = track_step(tcp, wp, max_step, gain, max_rot_step)
            actions.append(a)
            tcp = apply_nominal(tcp, a)
            n += 1
    return PlanActions(actions, waypoints, True, tcp)
