"""Small value types shared by the env, primitives and policy code."""
from dataclasses import dataclass

import numpy as np

GRIPPER_OPEN = "open"
GRIPPER_CLOSE = "close"


def wrap_angle(a):
    """Wrap angles to (-pi, pi]."""
    a = np.asarray(a, dtype=float)
    w = np.mod(a + np.pi, 2 * np.pi) - np.pi
    return np.where(w == -np.pi, np.pi, w)


@dataclass(frozen=True)
class TCPState:
    position: np.ndarray
    rpy: np.ndarray = (0.0, 0.0, 0.0)
    gripper: float = 0.0  # 0 closed, 1 open

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))
        object.__setattr__(self, "rpy", wrap_angle(np.asarray(self.rpy, dtype=float).reshape(3)))
        if not 0.0 <= self.gripper <= 1.0:
            raise ValueError("gripper opening must lie in [0, 1]")

    def replace(self, position=None, rpy=None, gripper=None):
        return TCPState(
            self.position if position is None else position,
            self.rpy if rpy is None else rpy,
            self.gripper if gripper is None else gripper,
        )

    def __eq__(self, other):
        if not isinstance(other, TCPState):
            return NotImplemented
        return (
            np.array_equal(self.position, other.position)
            and np.array_equal(self.rpy, other.rpy)
            and self.gripper == other.gripper
        )

    __hash__ = None


@dataclass(frozen=True)
class EnvAction:
    """End-effector delta pose ``(dx, dy, dz, droll, dpitch, dyaw)`` plus an optional gripper command."""

    delta: np.ndarray
    gripper: str = None

    def __post_init__(self):
        object.__setattr__(self, "delta", np.asarray(self.delta, dtype=float).reshape(6))
        if self.gripper not in (None, GRIPPER_OPEN, GRIPPER_CLOSE):
            raise ValueError(f"gripper command must be open/close/None, got {self.gripper!r}")

    @classmethod
    def zero(cls, gripper=None):
        return cls(np.zeros(6), gripper)
