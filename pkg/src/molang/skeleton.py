from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Self

import numpy as np

from molang.const import ROT6D_DIM
from molang.exception import (
    MolangInvalidSkeletonException,
    MolangParseException,
)
from molang.geometry import six_d_to_matrix

if TYPE_CHECKING:
    from collections.abc import Sequence

    from molang.typing import FloatArray, IntArray

LOGGER = logging.getLogger("molang")

# SMPL body joint order; joint 0 carries the global orientation.
SMPL_JOINT_NAMES = (
    "pelvis",
    "left_hip",
    "right_hip",
    "spine1",
    "left_knee",
    "right_knee",
    "spine2",
    "left_ankle",
    "right_ankle",
    "spine3",
    "left_foot",
    "right_foot",
    "neck",
    "left_collar",
    "right_collar",
    "head",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
)

SMPL_PARENTS = (
    -1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19,
)  # fmt: skip

# Rest offsets in meters, parent-local, y up, x towards the body's left.
SMPL_REST_OFFSETS = (
    (0.000, 0.000, 0.000),
    (0.090, -0.080, 0.000),
    (-0.090, -0.080, 0.000),
    (0.000, 0.110, 0.000),
    (0.000, -0.400, 0.000),
    (0.000, -0.400, 0.000),
    (0.000, 0.130, 0.000),
    (0.000, -0.420, 0.000),
    (0.000, -0.420, 0.000),
    (0.000, 0.060, 0.020),
    (0.000, -0.060, 0.120),
    (0.000, -0.060, 0.120),
    (0.000, 0.220, -0.020),
    (0.080, 0.120, 0.000),
    (-0.080, 0.120, 0.000),
    (0.000, 0.090, 0.040),
    (0.110, 0.030, 0.000),
    (-0.110, 0.030, 0.000),
    (0.270, 0.000, 0.000),
    (-0.270, 0.000, 0.000),
    (0.250, 0.000, 0.000),
    (-0.250, 0.000, 0.000),
)


def validate_parents(parents: Sequence[int]) -> None:
    """Check that ``parents`` describes one tree rooted at joint 0."""
    n = len(parents)
    if n == 0:
        raise MolangInvalidSkeletonException("parent array is empty")

    roots = [i for i, p in enumerate(parents) if p < 0]
    if roots != [0]:
        m = f"expected a single root at joint 0, found roots {roots}"
        raise MolangInvalidSkeletonException(m)

    for i, p in enumerate(parents):
        if p >= n:
            m = f"joint {i} has out-of-range parent {p}"
            raise MolangInvalidSkeletonException(m)

    for i in range(n):
        seen = set()
        j = i
        while j != 0:
            if j in seen:
                m = f"joint {i} is part of a cycle"
                raise MolangInvalidSkeletonException(m)
            seen.add(j)
            j = parents[j]


def build_adjacency(parents: Sequence[int]) -> FloatArray:
    """Symmetric 0/1 adjacency with self-loops; no degree normalization."""
    validate_parents(parents)

    n = len(parents)
    a = np.eye(n)
    for k, p in enumerate(parents):
        if p >= 0:
            a[p, k] = 1.0
            a[k, p] = 1.0
    return a


@dataclass
class SkeletonGraph:
    names: tuple[str, ...]
    parents: tuple[int, ...]
    offsets: FloatArray
    adjacency: FloatArray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if len(self.names) != len(self.parents):
            m = f"{len(self.names)} names for {len(self.parents)} joints"
            raise MolangInvalidSkeletonException(m)
        self.offsets = np.asarray(self.offsets, dtype=np.float64)
        if self.offsets.shape != (len(self.parents), 3):
            m = f"offsets have shape {self.offsets.shape}"
            raise MolangInvalidSkeletonException(m)
        self.adjacency = build_adjacency(self.parents)

    @property
    def num_joints(self) -> int:
        return len(self.parents)

    @property
    def order(self) -> list[int]:
        """Joints sorted so every parent precedes its children."""
        children: dict[int, list[int]] = {}
        for k, p in enumerate(self.parents):
            children.setdefault(p, []).append(k)
        out, stack = [], [0]
        while stack:
            k = stack.pop()
            out.append(k)
            stack.extend(reversed(children.get(k, [])))
        return out

    @property
    def parent_array(self) -> IntArray:
        return np.asarray(self.parents, dtype=np.int64)

    @classmethod
    def smpl(cls) -> Self:
        return cls(
            names=SMPL_JOINT_NAMES,
            parents=SMPL_PARENTS,
            offsets=np.array(SMPL_REST_OFFSETS),
        )

    def joint_index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError as e:
            m = f"{name!r} isn't a joint of this skeleton"
            raise MolangInvalidSkeletonException(m) from e

    def to_json(self) -> str:
        joints = [
            {
                "id": i,
                "name": name,
                "parent": int(self.parents[i]),
                "offset": [float(x) for x in self.offsets[i]],
            }
            for i, name in enumerate(self.names)
        ]
        return json.dumps({"joints": joints}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> Self:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            m = f"skeleton:{e.lineno}:{e.colno}: {e.msg}"
            raise MolangParseException(m) from e

        try:
            joints = sorted(data["joints"], key=lambda x: x["id"])
            if [x["id"] for x in joints] != list(range(len(joints))):
                m = "joint ids must be 0..n-1"
                raise MolangInvalidSkeletonException(m)
            return cls(
                names=tuple(x["name"] for x in joints),
                parents=tuple(int(x["parent"]) for x in joints),
                offsets=np.array([x["offset"] for x in joints], dtype=float),
            )
        except (KeyError, TypeError) as e:
            m = f"skeleton document is missing fields: {e}"
            raise MolangParseException(m) from e


def forward_kinematics(pose: FloatArray, skel: SkeletonGraph) -> FloatArray:
    """Joint positions (``..., J, 3``) for 6D poses (``..., J, 6``).

    The root stays at the origin; root translation is not modeled.
    """
    pose = np.asarray(pose, dtype=np.float64)
    j = skel.num_joints
    if pose.shape[-2:] != (j, ROT6D_DIM):
        m = f"pose shape {pose.shape} doesn't match {j} joints"
        raise MolangInvalidSkeletonException(m)

    local = six_d_to_matrix(pose)
    lead = pose.shape[:-2]
    glob = np.empty((*lead, j, 3, 3))
    pos = np.zeros((*lead, j, 3))

    glob[..., 0, :, :] = local[..., 0, :, :]
    for k in skel.order[1:]:
        p = skel.parents[k]
        glob[..., k, :, :] = glob[..., p, :, :] @ local[..., k, :, :]
        pos[..., k, :] = pos[..., p, :] + np.einsum(
            "...ij,j->...i", glob[..., p, :, :], skel.offsets[k]
        )

    return pos
