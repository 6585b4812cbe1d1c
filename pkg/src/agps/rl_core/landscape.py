"""Critic value maps over two state axes."""
from dataclasses import dataclass, field

import numpy as np


@dataclass
class SliceSpec:
    """Grid over two observation features with every other feature held at ``base_obs``.

    ``linked`` maps extra feature indices to ``(grid_axis, offset)`` so derived
    features (e.g. a held object's position) follow the swept coordinate.
    """

    base_obs: np.ndarray
    axes: tuple
    grid_a: np.ndarray
    grid_b: np.ndarray
    linked: dict = field(default_factory=dict)
    names: tuple = ("y", "z")

    def __post_init__(self):
        self.base_obs = np.asarray(self.base_obs, dtype=float)
        self.grid_a = np.asarray(self.grid_a, dtype=float)
        self.grid_b = np.asarray(self.grid_b, dtype=float)
        if self.grid_a.size < 2 or self.grid_b.size < 2:
            raise ValueError("grid resolution must be at least 2x2")

    def observations(self):
        A, B = np.meshgrid(self.grid_a, self.grid_b, indexing="ij")
        obs = np.repeat(self.base_obs[None], A.size, axis=0)
        obs[:, self.axes[0]] = A.ravel()
        obs[:, self.axes[1]] = B.ravel()
        for idx, (which, offset) in self.linked.items():
            obs[:, idx] = (A if which == 0 else B).ravel() + offset
        return obs


@dataclass
class QLandscape:
    values: np.ndarray
    grid_a: np.ndarray
    grid_b: np.ndarray
    names: tuple

    def argmax(self):
        """Coordinates of the highest-value cell."""
        i, j = np.unravel_index(int(np.argmax(self.values)), self.values.shape)
        return float(self.grid_a[i]), float(self.grid_b[j])

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write(f"{self.names[0]},{self.names[1]},q\n")
            for i, a in enumerate(self.grid_a):
                for j, b in enumerate(self.grid_b):
                    fh.write(f"{a!r},{b!r},{self.values[i, j]!r}\n")


def q_landscape(agent, spec):
    """min-over-twins Q(s, pi_mean(s)) on every cell of the slice."""
    obs = spec.observations()
    act = agent.policy_mean(obs)
    q = agent.q_values(obs, act).min(axis=0)
    return QLandscape(q.reshape(spec.grid_a.size, spec.grid_b.size), spec.grid_a, spec.grid_b, spec.names)
