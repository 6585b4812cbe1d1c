"""Deterministic observation encoder.

Stands in for a pretrained visual backbone: a seeded random projection of the
flattened observation followed by L2 normalisation, so that the cosine cost
used by the transport detector is ``1 - dot``.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DimensionError


@dataclass(frozen=True)
class Observation:
    proprio: np.ndarray
    scene: np.ndarray
    step_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "proprio", np.asarray(self.proprio, dtype=float))
        object.__setattr__(self, "scene", np.asarray(self.scene, dtype=float))
        if not (np.all(np.isfinite(self.proprio)) and np.all(np.isfinite(self.scene))):
            raise ValueError("observation entries must be finite")

    def vector(self):
        return np.concatenate([self.proprio, self.scene])

    def __eq__(self, other):
        if not isinstance(other, Observation):
            return NotImplemented
        return (
            self.step_index == other.step_index
            and np.array_equal(self.proprio, other.proprio)
            and np.array_equal(self.scene, other.scene)
        )

    __hash__ = None


@dataclass(frozen=True)
class Encoder:
    """Immutable projection ``x -> normalize(W x)``.

    When ``center``/``scale`` are set the input is standardised first and a
    constant 1 is appended, which keeps distance-from-center information that
    pure normalisation would discard along rays.
    """

    seed: int
    in_dim: int
    d_emb: int
    weights: np.ndarray = field(repr=False)
    center: np.ndarray = field(default=None, repr=False)
    scale: np.ndarray = field(default=None, repr=False)

    @property
    def affine(self):
        return self.center is not None

    def _prepare(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.in_dim:
            raise DimensionError(f"expected input dimension {self.in_dim}, got {x.shape[-1]}")
        if self.affine:
            x = (x - self.center) / self.scale
            ones = np.ones(x.shape[:-1] + (1,))
            x = np.concatenate([x, ones], axis=-1)
        return x

    def encode_vectors(self, x):
        """Encode an ``(n, in_dim)`` array (or a single vector) of raw observations."""
        z = self._prepare(x) @ self.weights.T
        norms = np.linalg.norm(z, axis=-1, keepdims=True)
        degenerate = norms[..., 0] == 0.0
        out = np.divide(z, norms, out=np.zeros_like(z), where=norms > 0)
        if np.any(degenerate):
            out[degenerate] = 0.0
            out[degenerate, 0] = 1.0
        return out

    def __call__(self, obs):
        return encode(self, obs)


def make_encoder(seed, in_dim, d_emb=32, center=None, scale=None):
    if int(d_emb) < 2:
        raise ConfigurationError(f"d_emb must be >= 2, got {d_emb}")
    if int(in_dim) < 1:
        raise ConfigurationError(f"in_dim must be >= 1, got {in_dim}")
    if (center is None) != (scale is None):
        raise ConfigurationError("center and scale must be given together")
    cols = in_dim
    if center is not None:
        center = np.broadcast_to(np.asarray(center, dtype=float), (in_dim,)).copy()
        scale = np.broadcast_to(np.asarray(scale, dtype=float), (in_dim,)).copy()
        if np.any(scale <= 0):
            raise ConfigurationError("scale entries must be positive")
        cols += 1
    rng = np.random.default_rng(seed)
    weights = rng.standard_normal((d_emb, cols)) / np.sqrt(d_emb)
    weights.setflags(write=False)
    return Encoder(int(seed), int(in_dim), int(d_emb), weights, center, scale)


def encode(encoder, obs):
    """Unit-norm embedding of one observation; the zero vector maps to e_1."""
    vec = obs.vector() if isinstance(obs, Observation) else np.asarray(obs, dtype=float)
    if vec.ndim != 1:
        raise DimensionError("encode expects a single observation")
    return encoder.encode_vectors(vec)
