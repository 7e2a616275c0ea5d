"""Coordinate frames, camera models, and the 3-DoF pose parameterization.

Frame conventions used throughout the package:

    Satellite 3D frame (right-handed):
      - x: east, y: south, z: vertically down.
      - The satellite image is a parallel (orthographic) projection:
        u = x / gamma + center, v = y / gamma + center; depth is discarded.
    Ground camera frame (standard computer vision):
      - x: right, y: down, z: forward along the optical axis.
    Vehicle (GPS) body frame:
      - Coincides with the ground camera frame when ``cam_to_gps`` is the
        identity; otherwise ``cam_to_gps`` maps camera to body coordinates.

Pose convention:
    yaw = 0 points the vehicle north (satellite -y); positive yaw rotates
    the heading toward east, which is clockwise in image coordinates.
    The lateral / longitudinal translations live in the vehicle frame at
    the current yaw: longitudinal along the heading, lateral along the
    heading rotated +90 degrees (the vehicle's right side). The vehicle's
    planar position in the satellite frame is therefore

        position = R(yaw) @ (lateral, -longitudinal).

    Roll and pitch are applied before yaw (roll, then pitch, then yaw) and
    stay fixed during optimization, as does the height translation.

Angles are radians internally; degrees appear only at CLI and file
boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DomainError

# Web-mercator ground resolution at the equator for zoom 0, meters per pixel.
WEB_MERCATOR_BASE = 156543.03392

_TWO_PI = 2.0 * math.pi


def wrap_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    wrapped = math.remainder(theta, _TWO_PI)
    if wrapped <= -math.pi:
        wrapped += _TWO_PI
    return wrapped


def meters_per_pixel(latitude_deg: float, zoom: int, scale: int) -> float:
    """Ground distance covered by one satellite pixel (meters).

    Follows the web-map tiling model: the equatorial base resolution scaled
    by cos(latitude) and divided by 2**zoom * scale.
    """
    if not abs(latitude_deg) < 90.0:
        raise DomainError(f"latitude must satisfy |lat| < 90, got {latitude_deg}")
    if zoom < 0:
        raise DomainError(f"zoom must be >= 0, got {zoom}")
    if scale < 1:
        raise DomainError(f"scale must be >= 1, got {scale}")
    return WEB_MERCATOR_BASE * math.cos(math.radians(latitude_deg)) / (2**zoom * scale)


@dataclass(frozen=True)
class SatelliteGeoref:
    """Georeference of a square satellite crop.

    ``center_px`` is the pixel coordinate of the map origin on both image
    axes; ``gamma`` is the meters-per-pixel ratio.
    """

    center_px: float
    gamma: float
    latitude_deg: float
    zoom: int
    scale: int
    earth_const: float = WEB_MERCATOR_BASE

    def __post_init__(self):
        if not self.gamma > 0:
            raise DomainError(f"gamma must be > 0, got {self.gamma}")
        if not abs(self.latitude_deg) < 90.0:
            raise DomainError(f"latitude must satisfy |lat| < 90, got {self.latitude_deg}")

    @classmethod
    def from_latitude(cls, center_px: float, latitude_deg: float, zoom: int = 18,
                      scale: int = 2) -> "SatelliteGeoref":
        gamma = meters_per_pixel(latitude_deg, zoom, scale)
        return cls(center_px, gamma, latitude_deg, zoom, scale)

    @classmethod
    def from_gamma(cls, center_px: float, gamma: float, zoom: int = 18,
                   scale: int = 2) -> "SatelliteGeoref":
        """Solve for the latitude whose tile resolution equals ``gamma``."""
        cos_lat = gamma * (2**zoom * scale) / WEB_MERCATOR_BASE
        if not 0.0 < cos_lat <= 1.0:
            raise DomainError(
                f"gamma {gamma} is not reachable at zoom {zoom}, scale {scale}")
        return cls(center_px, gamma, math.degrees(math.acos(cos_lat)), zoom, scale)

    def coarsened(self, level: int) -> "SatelliteGeoref":
        """Georeference of the same crop downsampled by 2**level.

        Pixel coordinates scale by 2**-level; one coarse pixel covers
        2**level times more meters, equivalent to dropping ``level`` zoom
        steps at the same latitude.
        """
        if level == 0:
            return self
        f = 2**level
        return SatelliteGeoref(self.center_px / f, self.gamma * f,
                               self.latitude_deg, self.zoom - level, self.scale)


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics of the ground camera (pixels)."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise DomainError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise DomainError("principal point must lie inside the image")


@dataclass(frozen=True)
class RigidTransform:
    """Proper rigid transform: p -> rotation @ p + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.array(self.rotation, dtype=np.float64)
        tr = np.array(self.translation, dtype=np.float64).reshape(3)
        if rot.shape != (3, 3):
            raise ContractError(f"rotation must be 3x3, got {rot.shape}")
        if not np.all(np.isfinite(rot)) or not np.all(np.isfinite(tr)):
            raise DomainError("transform contains non-finite values")
        if np.max(np.abs(rot.T @ rot - np.eye(3))) > 1e-9:
            raise DomainError("rotation is not orthonormal within 1e-9")
        if abs(np.linalg.det(rot) - 1.0) > 1e-9:
            raise DomainError("rotation determinant must be +1 within 1e-9")
        rot.setflags(write=False)
        tr.setflags(write=False)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", tr)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other: (self ∘ other)(p) = self(other(p))."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.rotation.T, -(self.rotation.T @ self.translation))


@dataclass(frozen=True)
class Pose3:
    """3-DoF vehicle pose: lateral shift (m), longitudinal shift (m), yaw (rad).

    Yaw is wrapped to (-pi, pi] on construction.
    """

    lateral: float
    longitudinal: float
    yaw: float

    def __post_init__(self):
        if not (math.isfinite(self.lateral) and math.isfinite(self.longitudinal)
                and math.isfinite(self.yaw)):
            raise DomainError("pose fields must be finite")
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    def with_delta(self, delta) -> "Pose3":
        """Pose after adding (d_lateral, d_longitudinal, d_yaw); yaw rewrapped."""
        d = np.asarray(delta, dtype=np.float64)
        return Pose3(self.lateral + d[0], self.longitudinal + d[1], self.yaw + d[2])

    def as_array(self) -> np.ndarray:
        return np.array([self.lateral, self.longitudinal, self.yaw])


@dataclass(frozen=True)
class PoseContext:
    """Frozen attitude and mounting context for one solve.

    roll/pitch in radians, height is the satellite-frame z translation in
    meters (z points down), ``cam_to_gps`` maps camera to vehicle body
    coordinates.
    """

    roll: float = 0.0
    pitch: float = 0.0
    height: float = 0.0
    cam_to_gps: RigidTransform = field(default_factory=RigidTransform.identity)


@dataclass(frozen=True)
class PointSet:
    """N 3D points in the ground-camera frame, meters."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ContractError(f"points must be Nx3, got {pts.shape}")
        if pts.shape[0] < 1:
            raise ContractError("point set must contain at least one point")
        if not np.all(np.isfinite(pts)):
            raise DomainError("points contain non-finite coordinates")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def count(self) -> int:
        return self.points.shape[0]


def _rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _rot_x(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


# Body axes (x right, y down, z forward) expressed in satellite axes
# (east, south, down) at zero attitude: right->east, down->down,
# forward->north.
_BODY_TO_SAT = np.array([
    [1.0, 0.0, 0.0],
    [0.0, 0.0, -1.0],
    [0.0, 1.0, 0.0],
])


def pose_translation(pose: Pose3, height: float) -> np.ndarray:
    """Vehicle position in the satellite frame for a given pose."""
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    return np.array([
        pose.lateral * c + pose.longitudinal * s,
        pose.lateral * s - pose.longitudinal * c,
        height,
    ])


def pose_to_transform(pose: Pose3, ctx: PoseContext) -> RigidTransform:
    """Rigid transform from the ground-camera frame to the satellite 3D frame.

    Composes the body-to-satellite attitude (roll, then pitch, then yaw,
    with only yaw taken from the pose) and the vehicle translation with the
    camera-to-body mounting transform.
    """
    rot_body_to_sat = (_rot_z(pose.yaw) @ _BODY_TO_SAT
                       @ _rot_x(ctx.pitch) @ _rot_z(ctx.roll))
    gps_to_sat = RigidTransform(rot_body_to_sat, pose_translation(pose, ctx.height))
    return gps_to_sat.compose(ctx.cam_to_gps)


def transform_points(points, transform: RigidTransform) -> np.ndarray:
    """Apply a rigid transform to an Nx3 array or a PointSet row-wise."""
    pts = points.points if isinstance(points, PointSet) else np.asarray(points, dtype=np.float64)
    return pts @ transform.rotation.T + transform.translation


def project_satellite(points_sat: np.ndarray, georef: SatelliteGeoref) -> np.ndarray:
    """Parallel projection of satellite-frame points onto the satellite image.

    Returns Nx2 pixel coordinates (u, v); the z (down) component is
    discarded. Out-of-image coordinates are returned as-is.
    """
    pts = np.asarray(points_sat, dtype=np.float64)
    return pts[..., :2] / georef.gamma + georef.center_px


def project_ground(points_cam, intrinsics: CameraIntrinsics,
                   depth_min: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
    """Pinhole projection of camera-frame points onto the ground image.

    Returns (Nx2 pixel coordinates, N visibility flags). A point is visible
    iff its depth exceeds ``depth_min`` and the pixel lies inside
    [0, width) x [0, height). Coordinates of invisible points are computed
    with the depth clamped to ``depth_min`` so the output stays finite.
    """
    pts = points_cam.points if isinstance(points_cam, PointSet) else np.asarray(points_cam, dtype=np.float64)
    z = pts[:, 2]
    safe_z = np.maximum(z, depth_min)
    u = intrinsics.fx * pts[:, 0] / safe_z + intrinsics.cx
    v = intrinsics.fy * pts[:, 1] / safe_z + intrinsics.cy
    visible = ((z > depth_min)
               & (u >= 0) & (u < intrinsics.width)
               & (v >= 0) & (v < intrinsics.height))
    return np.stack([u, v], axis=1), visible


def d_satproj_d_pose_many(points_cam, pose: Pose3, ctx: PoseContext,
                          georef: SatelliteGeoref) -> np.ndarray:
    """Analytic Jacobians of satellite pixel coordinates w.r.t. the pose.

    Returns an Nx2x3 array: for each point, d(u, v) / d(lateral,
    longitudinal, yaw). The translation columns are constant across points
    (each with norm 1/gamma); the yaw column is the rotation derivative
    (-v_m, u_m)/gamma of the point's planar map position.
    """
    pts_sat = transform_points(points_cam, pose_to_transform(pose, ctx))
    x, y = pts_sat[:, 0], pts_sat[:, 1]
    n = pts_sat.shape[0]
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    inv_g = 1.0 / georef.gamma
    jac = np.empty((n, 2, 3))
    jac[:, 0, 0] = c * inv_g
    jac[:, 0, 1] = s * inv_g
    jac[:, 0, 2] = -y * inv_g
    jac[:, 1, 0] = s * inv_g
    jac[:, 1, 1] = -c * inv_g
    jac[:, 1, 2] = x * inv_g
    return jac


def d_satproj_d_pose(point_cam, pose: Pose3, ctx: PoseContext,
                     georef: SatelliteGeoref) -> np.ndarray:
    """2x3 Jacobian of one point's satellite pixel w.r.t. the 3-DoF pose."""
    pt = np.asarray(point_cam, dtype=np.float64).reshape(1, 3)
    return d_satproj_d_pose_many(pt, pose, ctx, georef)[0]


def translate_pose_east_south(pose: Pose3, d_east: float, d_south: float) -> Pose3:
    """Pose whose map position is shifted by (d_east, d_south), same yaw."""
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    return Pose3(pose.lateral + c * d_east + s * d_south,
                 pose.longitudinal + s * d_east - c * d_south,
                 pose.yaw)


def sample_points(cloud: PointSet, n: int, seed: int) -> PointSet:
    """Draw n points uniformly from a cloud, deterministically per seed.

    Sampling is without replacement unless n exceeds the cloud size.
    """
    if n < 1:
        raise ContractError(f"sample size must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    replace = n > cloud.count
    idx = rng.choice(cloud.count, size=n, replace=replace)
    return PointSet(cloud.points[idx])
