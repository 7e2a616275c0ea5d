"""One localization instance and shared pose-evaluation machinery."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .features import (AttentionMap, FeatureMap, FeaturePyramid, SparseAlignment,
                       attention_lookup_many, bilinear_lookup_many)
from .geometry import (CameraIntrinsics, PointSet, Pose3, PoseContext,
                       SatelliteGeoref, pose_to_transform, project_ground,
                       project_satellite, transform_points)


def _check_halving(name: str, pyramid: FeaturePyramid) -> None:
    h0, w0 = pyramid.feature(0).height, pyramid.feature(0).width
    for lvl in range(1, pyramid.level_count):
        feat = pyramid.feature(lvl)
        expect = (-(-h0 // 2**lvl), -(-w0 // 2**lvl))
        if (feat.height, feat.width) != expect:
            raise ContractError(
                f"{name} pyramid level {lvl} is {feat.height}x{feat.width}, "
                f"expected {expect[0]}x{expect[1]} (halving per level)")


@dataclass(frozen=True)
class AlignmentProblem:
    """Everything needed to localize one frame against a satellite crop."""

    sat_pyramid: FeaturePyramid
    georef: SatelliteGeoref
    grd_pyramid: FeaturePyramid
    intrinsics: CameraIntrinsics
    points: PointSet
    ctx: PoseContext
    gt_pose: Pose3

    def __post_init__(self):
        if self.sat_pyramid.level_count != self.grd_pyramid.level_count:
            raise ContractError(
                f"level counts differ: satellite {self.sat_pyramid.level_count} "
                f"vs ground {self.grd_pyramid.level_count}")
        for lvl in range(self.sat_pyramid.level_count):
            cs = self.sat_pyramid.feature(lvl).channels
            cg = self.grd_pyramid.feature(lvl).channels
            if cs != cg:
                raise ContractError(f"level {lvl}: channel mismatch {cs} vs {cg}")
        _check_halving("satellite", self.sat_pyramid)
        _check_halving("ground", self.grd_pyramid)

    @property
    def level_count(self) -> int:
        return self.sat_pyramid.level_count

    def satellite_level(self, level: int) -> tuple[FeatureMap, AttentionMap, SatelliteGeoref]:
        return (self.sat_pyramid.feature(level), self.sat_pyramid.attention(level),
                self.georef.coarsened(level))


@dataclass(frozen=True)
class GroundLevelData:
    """Pose-independent ground-view lookups for one pyramid level."""

    uv: np.ndarray        # (N, 2) level-scaled pixel coordinates
    features: np.ndarray  # (N, c)
    attention: np.ndarray  # (N,)
    valid: np.ndarray     # (N,) ground-visible and in level bounds


def ground_level_data(problem: AlignmentProblem, level: int) -> GroundLevelData:
    """Project points into the ground view and sample that level's maps.

    The pose never moves ground pixels, so coordinates are projected once at
    full resolution and scaled by 2**-level for coarser maps.
    """
    uv0, visible = project_ground(problem.points, problem.intrinsics)
    uv = uv0 / float(2**level)
    feats, _, inb_f = bilinear_lookup_many(problem.grd_pyramid.feature(level).data, uv)
    att, inb_a = attention_lookup_many(problem.grd_pyramid.attention(level), uv)
    valid = visible & inb_f & inb_a
    return GroundLevelData(uv=uv, features=feats, attention=att, valid=valid)


@dataclass(frozen=True)
class PoseEvaluation:
    """Sparse alignment at one pose and level, plus solver-side extras."""

    alignment: SparseAlignment
    uv_sat: np.ndarray      # (N, 2)
    sat_grads: np.ndarray | None  # (N, c, 2) when requested


def evaluate_pose(problem: AlignmentProblem, pose: Pose3, level: int = 0,
                  ground: GroundLevelData | None = None,
                  want_grads: bool = False) -> PoseEvaluation:
    """Residuals and weights of the sparse alignment at ``pose``.

    ``ground`` may carry precomputed ground-view lookups for the level;
    ``want_grads`` additionally returns the satellite feature gradients at
    the projected pixels for Jacobian assembly.
    """
    if ground is None:
        ground = ground_level_data(problem, level)
    f_sat, a_sat, georef = problem.satellite_level(level)

    pts_sat = transform_points(problem.points, pose_to_transform(pose, problem.ctx))
    uv_sat = project_satellite(pts_sat, georef)

    vals_sat, grads_sat, inb_sat = bilinear_lookup_many(f_sat.data, uv_sat)
    att_sat, _ = attention_lookup_many(a_sat, uv_sat)

    valid = ground.valid & inb_sat
    residuals = vals_sat - ground.features
    residuals[~valid] = 0.0
    weights = att_sat * ground.attention
    weights[~valid] = 0.0
    if want_grads:
        grads_sat[~valid] = 0.0

    alignment = SparseAlignment(residuals=residuals, weights=weights, valid_mask=valid)
    return PoseEvaluation(alignment=alignment, uv_sat=uv_sat,
                          sat_grads=grads_sat if want_grads else None)
