"""Pinhole projection/deprojection, keypoint bounding boxes and box masking."""
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BehindCameraError,
    ConfigurationError,
    ConstraintViolation,
    DegenerateDepthError,
    EmptyInputError,
    GeometryError,
)

NORM_RANGE = 1000


@dataclass(frozen=True)
class CameraModel:
    """Intrinsics ``K`` and world->camera extrinsics ``(R, t)``.

    ``depth_lookup(u, v)`` returns the camera-frame depth seen at a pixel.
    """

    K: np.ndarray
    R: np.ndarray
    t: np.ndarray
    depth_lookup: object = field(default=None, compare=False, repr=False)
    width: int = 640
    height: int = 480

    def __post_init__(self):
        K = np.asarray(self.K, dtype=float)
        R = np.asarray(self.R, dtype=float)
        t = np.asarray(self.t, dtype=float).reshape(3)
        if K.shape != (3, 3) or R.shape != (3, 3):
            raise ConfigurationError("K and R must be 3x3")
        if K[0, 0] == 0 or K[1, 1] == 0 or abs(np.linalg.det(K)) < 1e-12:
            raise ConfigurationError("intrinsic matrix must be invertible with fx, fy != 0")
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9) or abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ConfigurationError("R must be a proper rotation")
        for name, val in (("K", K), ("R", R), ("t", t)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "_K_inv", np.linalg.inv(K))

    @property
    def K_inv(self):
        return self._K_inv

    @property
    def position(self):
        """Camera centre in world coordinates."""
        return -self.R.T @ self.t


@dataclass(frozen=True)
class PixelKeypoint:
    name: str
    u_norm: int
    v_norm: int
    confidence: float = 1.0
    description: str = ""

    def __post_init__(self):
        for c in (self.u_norm, self.v_norm):
            if not 0 <= c <= NORM_RANGE:
                raise ValueError(f"normalised coordinate {c} outside [0, {NORM_RANGE}]")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must lie in [0, 1]")


@dataclass(frozen=True)
class WorldPoint:
    name: str
    p: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float).reshape(3))


def _num(x):
    x = float(x)
    return int(x) if x.is_integer() else x


@dataclass(frozen=True)
class SpatialConstraint:
    """Axis-aligned box in the robot base frame: ``center`` and full ``size``."""

    center: np.ndarray
    size: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).reshape(3)
        s = np.asarray(self.size, dtype=float).reshape(3)
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(s))):
            raise GeometryError("box entries must be finite")
        if np.any(s <= 0):
            raise GeometryError(f"box sizes must be positive, got {s.tolist()}")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "size", s)

    @property
    def lo(self):
        return self.center - self.size / 2

    @property
    def hi(self):
        return self.center + self.size / 2

    @property
    def half_diagonal(self):
        return float(np.linalg.norm(self.size) / 2)

    @classmethod
    def from_bounds(cls, lo, hi):
        lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
        return cls((lo + hi) / 2, hi - lo)

    def to_bbox3d(self):
        """Nine-number layout ``[cx, cy, cz, sx, sy, sz, 0, 0, 0]``."""
        return [_num(v) for v in self.center] + [_num(v) for v in self.size] + [0, 0, 0]

    @classmethod
    def from_bbox3d(cls, values):
        if len(values) != 9:
            raise GeometryError(f"bbox_3d needs 9 numbers, got {len(values)}")
        if any(float(v) != 0.0 for v in values[6:]):
            raise GeometryError("only axis-aligned boxes (zero rotation) are supported")
        return cls(values[:3], values[3:6])

    def __eq__(self, other):
        if not isinstance(other, SpatialConstraint):
            return NotImplemented
        return np.array_equal(self.center, other.center) and np.array_equal(self.size, other.size)

    __hash__ = None


def denormalize_pixel(kp, width, height):
    if width <= 0 or height <= 0:
        raise ValueError("image dimensions must be positive")
    return kp.u_norm / NORM_RANGE * width, kp.v_norm / NORM_RANGE * height


def normalize_pixel(u_px, v_px, width, height):
    """Inverse of :func:`denormalize_pixel`, rounded and clipped to [0, 1000]."""
    u = int(np.clip(round(u_px / width * NORM_RANGE), 0, NORM_RANGE))
    v = int(np.clip(round(v_px / height * NORM_RANGE), 0, NORM_RANGE))
    return u, v


def deproject(cam, u_px, v_px, depth=None, name=""):
    """World point ``R^-1 (d K^-1 [u, v, 1]^T - t)``."""
    d = cam.depth_lookup(u_px, v_px) if depth is None else depth
    if not d > 0:
        raise DegenerateDepthError(f"nonpositive depth {d} at pixel ({u_px}, {v_px})")
    ray = cam.K_inv @ np.array([u_px, v_px, 1.0])
    return WorldPoint(name, cam.R.T @ (d * ray - cam.t))


def project(cam, p):
    """Pixel coordinates and camera-frame depth of a world point."""
    p = p.p if isinstance(p, WorldPoint) else np.asarray(p, dtype=float)
    pc = cam.R @ p + cam.t
    if not pc[2] > 0:
        raise BehindCameraError(f"point {p.tolist()} is behind the camera (z={pc[2]})")
    uvw = cam.K @ pc
    return uvw[0] / uvw[2], uvw[1] / uvw[2], float(pc[2])


def bbox_from_keypoints(points, margins, min_size, workspace):
    """AABB of the points, grown by ``margins`` per side, at least ``min_size``, clipped to ``workspace``."""
    if len(points) == 0:
        raise EmptyInputError("bbox_from_keypoints needs at least one point")
    margins = np.asarray(margins, dtype=float)
    min_size = np.asarray(min_size, dtype=float)
    if np.any(margins < 0) or np.any(min_size < 0):
        raise GeometryError("margins and min_size must be nonnegative")
    pts = np.array([pt.p if isinstance(pt, WorldPoint) else pt for pt in points], dtype=float)
    lo = pts.min(axis=0) - margins
    hi = pts.max(axis=0) + margins
    grow = np.maximum(min_size - (hi - lo), 0.0) / 2
    lo, hi = lo - grow, hi + grow
    lo = np.maximum(lo, workspace.lo)
    hi = np.minimum(hi, workspace.hi)
    if np.any(hi <= lo):
        raise GeometryError("bounding box does not intersect the workspace")
    return SpatialConstraint.from_bounds(lo, hi)


def contains(box, p, tol=1e-12):
    p = np.asarray(p, dtype=float)[:3]
    return bool(np.all(np.abs(p - box.center) <= box.size / 2 + tol))


def clamp_action_to_box(tcp_pos, delta, box):
    """Clip the translational part of ``delta`` so ``tcp_pos + delta`` stays in ``box``.

    Rotational and gripper components pass through untouched.
    """
    tcp_pos = np.asarray(tcp_pos, dtype=float)[:3]
    out = np.array(delta, dtype=float)
    if not contains(box, tcp_pos):
        raise ConstraintViolation("TCP is outside the active exploration box", tcp_pos, box)
    target = tcp_pos + out[:3]
    if contains(box, target):
        return out
    out[:3] = np.clip(target, box.lo, box.hi) - tcp_pos
    return out


def look_at(eye, target, up=(0.0, 0.0, 1.0)):
    """World->camera rotation and translation for a camera at ``eye`` facing ``target``.

    Camera axes: x right, y down, z forward.
    """
    eye, target, up = (np.asarray(v, dtype=float) for v in (eye, target, up))
    fwd = target - eye
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, up)
    if np.linalg.norm(right) < 1e-9:
        raise ConfigurationError("up vector is parallel to the viewing direction")
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    R = np.stack([right, down, fwd])
    return R, -R @ eye


def intrinsics(fx, fy, cx, cy):
    return np.array([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])


def plane_depth(cam, normal, offset):
    """Depth function for the plane ``normal . x = offset`` seen by ``cam``."""
    normal = np.asarray(normal, dtype=float)
    centre = cam.position

    def lookup(u, v):
        ray_c = cam.K_inv @ np.array([u, v, 1.0])
        ray_w = cam.R.T @ ray_c
        denom = normal @ ray_w
        if abs(denom) < 1e-12:
            return 0.0
        # ray_c has unit z, so the ray parameter is the camera-frame depth
        return float((offset - normal @ centre) / denom)

    return lookup
