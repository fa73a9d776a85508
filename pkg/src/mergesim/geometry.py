"""Plane embedding of the two-road merge layout.

The merge point sits at the origin. Highway traffic travels along the x axis
with unit heading (1, 0) for every path coordinate s. Merge-road traffic
approaches from below at a fixed angle theta: for s < 0 the vehicle sits at
s * (cos theta, sin theta) with heading (cos theta, sin theta), and for s >= 0
it has joined the highway line, pose (s, 0) with heading (1, 0). Path
coordinate s is the signed distance to the merge point along the route, so
the position is continuous at s = 0 while the heading jumps there.

The control zone spans cz_before_m of road before the merge point and
cz_after_m after it, measured along s on either road.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

HIGHWAY = "highway"
MERGE = "merge"
ROADS = (HIGHWAY, MERGE)

# integer road codes used by the array-based hot path
ROAD_CODE = {HIGHWAY: 0, MERGE: 1}


@dataclass(frozen=True)
class MergeLayout:
    """Static description of the merge junction.

    merge_angle_rad: angle between the merge road and the highway, in
        (0, pi/2) exclusive.
    cz_before_m / cz_after_m: control-zone extent upstream and downstream of
        the merge point, both strictly positive.
    """

    merge_angle_rad: float
    cz_before_m: float
    cz_after_m: float

    def __post_init__(self):
        if not 0.0 < self.merge_angle_rad < math.pi / 2:
            raise ValueError(
                f"merge angle must lie in (0, pi/2) rad, got {self.merge_angle_rad}"
            )
        if self.cz_before_m <= 0.0 or self.cz_after_m <= 0.0:
            raise ValueError("control-zone extents must be positive")


@dataclass(frozen=True)
class PlanePose:
    """Plane position and unit heading of one vehicle."""

    x: float
    y: float
    heading: np.ndarray

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class PairGeometry:
    """Relative state of an unordered vehicle pair (i, j) in the plane.

    offset: position_i - position_j.
    rel_velocity: v_i * heading_i - v_j * heading_j.
    """

    offset: np.ndarray
    rel_velocity: np.ndarray
    heading_i: np.ndarray
    heading_j: np.ndarray


def _check_road(road: str) -> None:
    if road not in ROADS:
        raise ValueError(f"unknown road {road!r}, expected one of {ROADS}")


def path_to_plane(road: str, s: float, layout: MergeLayout) -> PlanePose:
    """Map a path coordinate to its plane pose.

    Heading is piecewise constant per road; the merge road's heading jumps at
    s = 0 where it joins the highway line.
    """
    _check_road(road)
    if road == HIGHWAY or s >= 0.0:
        return PlanePose(float(s), 0.0, np.array([1.0, 0.0]))
    c = math.cos(layout.merge_angle_rad)
    n = math.sin(layout.merge_angle_rad)
    return PlanePose(s * c, s * n, np.array([c, n]))


def pair_geometry(
    road_i: str,
    s_i: float,
    v_i: float,
    road_j: str,
    s_j: float,
    v_j: float,
    layout: MergeLayout,
) -> PairGeometry:
    """Relative offset and velocity of a pair, each vehicle moving along its
    own heading at its scalar speed."""
    pose_i = path_to_plane(road_i, s_i, layout)
    pose_j = path_to_plane(road_j, s_j, layout)
    offset = pose_i.position - pose_j.position
    rel = v_i * pose_i.heading - v_j * pose_j.heading
    return PairGeometry(offset, rel, pose_i.heading, pose_j.heading)


def plane_states(
    road_codes: np.ndarray, s: np.ndarray, layout: MergeLayout
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized pose lookup: (n,) road codes and path coordinates to
    (n, 2) positions and unit headings.

    Must agree elementwise with path_to_plane; a property test holds the two
    routes together.
    """
    n = s.shape[0]
    pos = np.empty((n, 2))
    head = np.empty((n, 2))
    c = math.cos(layout.merge_angle_rad)
    sn = math.sin(layout.merge_angle_rad)
    on_ramp = (road_codes == ROAD_CODE[MERGE]) & (s < 0.0)
    pos[:, 0] = np.where(on_ramp, s * c, s)
    pos[:, 1] = np.where(on_ramp, s * sn, 0.0)
    head[:, 0] = np.where(on_ramp, c, 1.0)
    head[:, 1] = np.where(on_ramp, sn, 0.0)
    return pos, head
