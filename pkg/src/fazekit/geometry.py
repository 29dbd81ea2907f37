"""Rotation, gaze-angle and virtual-camera math.

Angles are (pitch, yaw) pairs in radians with no roll. All functions accept a
single pair or a stacked ``(..., 2)`` array and broadcast over leading axes.

The frontal axis is ``(0, 0, 1)``; a gaze direction is that axis rotated by the
gaze rotation matrix.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DegenerateInputError, InvalidArgumentError

FRONTAL_AXIS = np.array([0.0, 0.0, 1.0])

# arccos is clamped this far inside [-1, 1] so its derivative stays bounded.
COS_CLAMP = 1e-7

_GIMBAL_TOL = 1e-9


class EulerAngles(NamedTuple):
    theta: float  # pitch
    phi: float  # yaw


@dataclass(frozen=True)
class VirtualCamera:
    focal_length: float = 1300.0  # mm
    distance: float = 600.0  # mm
    patch_width: int = 256
    patch_height: int = 64

    def intrinsics(self):
        return np.array([
            [self.focal_length, 0.0, 0.5 * self.patch_width],
            [0.0, self.focal_length, 0.5 * self.patch_height],
            [0.0, 0.0, 1.0],
        ])


def _as_angles(angles):
    a = np.asarray(angles, dtype=np.float64)
    if a.shape[-1:] != (2,):
        raise InvalidArgumentError(f"angles must have trailing dimension 2, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidArgumentError("angles must be finite")
    return a


def euler_to_rotation(angles):
    """Rotation ``R_y(phi) @ R_x(theta)`` for (pitch, yaw) angles.

    Returns an array of shape ``(..., 3, 3)``.
    """
    a = _as_angles(angles)
    theta, phi = a[..., 0], a[..., 1]
    ct, st = np.cos(theta), np.sin(theta)
    cp, sp = np.cos(phi), np.sin(phi)
    zero, one = np.zeros_like(theta), np.ones_like(theta)
    r_yaw = np.stack([
        np.stack([cp, zero, sp], -1),
        np.stack([zero, one, zero], -1),
        np.stack([-sp, zero, cp], -1),
    ], -2)
    r_pitch = np.stack([
        np.stack([one, zero, zero], -1),
        np.stack([zero, ct, -st], -1),
        np.stack([zero, st, ct], -1),
    ], -2)
    return r_yaw @ r_pitch


def relative_rotation(r_a, r_b):
    """Rotation taking orientation ``a`` to orientation ``b``: ``R_b R_a^T``."""
    r_a = np.asarray(r_a, dtype=np.float64)
    r_b = np.asarray(r_b, dtype=np.float64)
    return r_b @ np.swapaxes(r_a, -1, -2)


def gaze_vector_from_euler(angles):
    """Unit gaze vector(s) for (pitch, yaw) angles."""
    return euler_to_rotation(angles) @ FRONTAL_AXIS


def euler_from_gaze_vector(g):
    """Inverse of :func:`gaze_vector_from_euler`.

    With ``g = (cos(theta) sin(phi), -sin(theta), cos(theta) cos(phi))`` this
    is ``theta = -arcsin(g_y)``, ``phi = atan2(g_x, g_z)``.
    """
    g = np.asarray(g, dtype=np.float64)
    if g.shape[-1:] != (3,):
        raise InvalidArgumentError(f"gaze vectors must have trailing dimension 3, got {g.shape}")
    norm = np.linalg.norm(g, axis=-1, keepdims=True)
    if np.any(norm == 0) or not np.all(np.isfinite(g)):
        raise InvalidArgumentError("gaze vector must be finite and non-zero")
    g = g / norm
    if np.any(np.abs(g[..., 1]) > 1.0 - _GIMBAL_TOL):
        raise DegenerateInputError("gaze vector is parallel to the y-axis; yaw is undefined")
    theta = -np.arcsin(g[..., 1])
    phi = np.arctan2(g[..., 0], g[..., 2])
    return np.stack([theta, phi], -1)


def angular_distance(a, b):
    """Angle in radians between vectors along the last axis.

    The cosine is clamped to ``[-1 + 1e-7, 1 - 1e-7]`` before arccos.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    if np.any(na == 0) or np.any(nb == 0):
        raise InvalidArgumentError("angular distance is undefined for zero vectors")
    cos = np.sum(a * b, axis=-1) / (na * nb)
    return np.arccos(np.clip(cos, -1.0 + COS_CLAMP, 1.0 - COS_CLAMP))


def normalization_matrix(head_rotation, reference_point, cam=VirtualCamera()):
    """Rotation and scale of the normalizing virtual camera.

    The returned rotation puts ``reference_point`` on the virtual camera's +z
    axis while keeping the head's x-axis horizontal; ``scale`` brings it to
    ``cam.distance``. So ``scale * R @ reference_point == (0, 0, cam.distance)``.
    """
    head_rotation = np.asarray(head_rotation, dtype=np.float64)
    c = np.asarray(reference_point, dtype=np.float64)
    if c.shape != (3,) or not np.all(np.isfinite(c)):
        raise InvalidArgumentError("reference point must be a finite 3-vector")
    if c[2] <= 0:
        raise InvalidArgumentError(f"reference point must have positive depth, got z={c[2]}")
    dist = np.linalg.norm(c)
    z_axis = c / dist
    head_x = head_rotation[:, 0]
    y_axis = np.cross(z_axis, head_x)
    y_norm = np.linalg.norm(y_axis)
    if y_norm < 1e-12:
        raise DegenerateInputError("head x-axis is parallel to the viewing direction")
    y_axis /= y_norm
    x_axis = np.cross(y_axis, z_axis)
    x_axis /= np.linalg.norm(x_axis)
    rotation = np.stack([x_axis, y_axis, z_axis])
    return rotation, cam.distance / dist
