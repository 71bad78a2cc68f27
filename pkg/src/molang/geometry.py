"""Rotation representations used for motion frames.

A 6D rotation is the first two columns of a rotation matrix laid out as
``(c1, c2)``. Any 6D vector with non-degenerate columns maps back to a proper
rotation through Gram-Schmidt, so blends and network outputs stay usable.
"""

from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np
from scipy.spatial.transform import Rotation

from molang.const import NUM_JOINTS, ROT6D_DIM
from molang.exception import (
    MolangDegenerateRotationException,
    MolangInvalidArgumentException,
)

if TYPE_CHECKING:
    from molang.typing import FloatArray

DEGENERATE_NORM = 1e-8


def axis_angle_to_matrix(v: FloatArray) -> FloatArray:
    """Rodrigues rotation for one or many axis-angle vectors (``..., 3``)."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != 3:
        m = f"axis-angle vectors need 3 components, got {v.shape}"
        raise MolangInvalidArgumentException(m)
    if not np.all(np.isfinite(v)):
        raise MolangInvalidArgumentException("axis-angle must be finite")

    flat = v.reshape(-1, 3)
    mats = Rotation.from_rotvec(flat).as_matrix()
    return mats.reshape(*v.shape[:-1], 3, 3)


def matrix_to_axis_angle(r: FloatArray) -> FloatArray:
    r = np.asarray(r, dtype=np.float64)
    flat = r.reshape(-1, 3, 3)
    vecs = Rotation.from_matrix(flat).as_rotvec()
    return vecs.reshape(*r.shape[:-2], 3)


def matrix_to_6d(r: FloatArray) -> FloatArray:
    r = np.asarray(r, dtype=np.float64)
    return np.concatenate([r[..., :, 0], r[..., :, 1]], axis=-1)


def six_d_to_matrix(d: FloatArray) -> FloatArray:
    d = np.asarray(d, dtype=np.float64)
    if d.shape[-1] != ROT6D_DIM:
        m = f"6D rotations need 6 components, got {d.shape}"
        raise MolangInvalidArgumentException(m)

    a1, a2 = d[..., :3], d[..., 3:]

    n1 = np.linalg.norm(a1, axis=-1, keepdims=True)
    if np.any(n1 <= DEGENERATE_NORM) or not np.all(np.isfinite(d)):
        raise MolangDegenerateRotationException("first column is degenerate")
    c1 = a1 / n1

    u2 = a2 - np.sum(c1 * a2, axis=-1, keepdims=True) * c1
    n2 = np.linalg.norm(u2, axis=-1, keepdims=True)
    if np.any(n2 <= DEGENERATE_NORM):
        m = "second column is parallel to the first"
        raise MolangDegenerateRotationException(m)
    c2 = u2 / n2
    c3 = np.cross(c1, c2)

    return np.stack([c1, c2, c3], axis=-1)


def axis_angle_to_6d(v: FloatArray) -> FloatArray:
    return matrix_to_6d(axis_angle_to_matrix(v))


def identity_6d(*shape: int) -> FloatArray:
    """Identity rotations in 6D with leading ``shape``."""
    out = np.zeros((*shape, ROT6D_DIM))
    out[..., 0] = 1.0
    out[..., 4] = 1.0
    return out


def interpolate_pose(a: FloatArray, b: FloatArray, t: float) -> FloatArray:
    """Linear blend in 6D space; no re-orthonormalization happens here."""
    if not 0.0 <= t <= 1.0:
        raise MolangInvalidArgumentException(f"t={t} isn't in [0, 1].")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        m = f"poses differ in shape: {a.shape} vs {b.shape}"
        raise MolangInvalidArgumentException(m)

    # Exact endpoints, no rounding from the blend.
    if t == 0.0:
        return a.copy()
    if t == 1.0:
        return b.copy()
    return (1.0 - t) * a + t * b


def pose_from_frame(frame: FloatArray) -> FloatArray:
    """View a flat 132-vector frame as ``22 x 6``."""
    return np.asarray(frame).reshape(NUM_JOINTS, ROT6D_DIM)
