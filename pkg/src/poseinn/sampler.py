"""Synthetic pose sampling against a surface point cloud.

Candidates get a uniform random position in the scene box and an
orientation built from a randomly picked training orientation with a small
random rotation on top. A candidate is kept only if

  rule 1: distance to the nearest training position is at most 0.5 m
          (configurable),
  rule 2: the number of cloud points in its view frustum lies inside the
          [min, max] range observed over the training poses,
  rule 3: the distance to its nearest in-view cloud point lies inside the
          training [min, max] range.

"In view" is frustum containment with positive depth and no occlusion
test; rule 3's minimum already rejects cameras pressed against geometry.
Candidates use independently derived rngs, so the accepted list does not
depend on evaluation order, and every accepted pose re-passes the filter
when recomputed from scratch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, SamplingError
from .geometry import Pose, euler_to_matrix, matrix_to_euler, random_rotation, wrap_angle
from .scenegen import CameraIntrinsics, Scene

REASON_RULE1 = "rule1_delta_training"
REASON_RULE2 = "rule2_n_in_view"
REASON_RULE3 = "rule3_delta_in_view"


@dataclass(frozen=True)
class SamplingConfig:
    target: int = 2000
    max_delta_training: float = 0.5
    max_rot_noise: float = np.deg2rad(3.6)
    widen: float = 1.0
    budget_factor: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.target < 1 or self.max_delta_training <= 0 or self.max_rot_noise < 0:
            raise DomainError("sampling config thresholds must be positive")
        if self.widen < 1.0 or self.budget_factor < 1:
            raise DomainError("widen must be >= 1 and budget_factor >= 1")


@dataclass(frozen=True)
class ViewStats:
    n_in_view: int
    delta_in_view: float  # nan when n_in_view == 0
    delta_training: float


@dataclass(frozen=True)
class AcceptanceRanges:
    n_lo: float
    n_hi: float
    d_lo: float
    d_hi: float


@dataclass(frozen=True)
class FilterResult:
    accepted: bool
    reason: str | None
    stats: ViewStats


def in_view_mask(pose: Pose, intr: CameraIntrinsics, cloud: np.ndarray) -> np.ndarray:
    """Boolean mask of cloud points inside the camera frustum."""
    cloud = np.asarray(cloud, dtype=np.float64)
    rot = pose.rotation()
    rel = (cloud - pose.position) @ rot  # columns: forward, left, up
    depth, lat, vert = rel[:, 0], rel[:, 1], rel[:, 2]
    tan_h = np.tan(intr.hfov / 2.0)
    tan_v = tan_h * (intr.height / intr.width)
    return (depth > 0.0) & (np.abs(lat) <= depth * tan_h) & (np.abs(vert) <= depth * tan_v)


def view_stats(pose: Pose, intr: CameraIntrinsics, cloud: np.ndarray,
               training_positions: np.ndarray) -> ViewStats:
    mask = in_view_mask(pose, intr, cloud)
    n = int(np.sum(mask))
    if n > 0:
        d_in_view = float(np.min(np.linalg.norm(cloud[mask] - pose.position, axis=1)))
    else:
        d_in_view = float("nan")
    d_training = float(np.min(np.linalg.norm(training_positions - pose.position, axis=1)))
    return ViewStats(n, d_in_view, d_training)


def compute_ranges(training_poses: list[Pose], intr: CameraIntrinsics,
                   cloud: np.ndarray, widen: float = 1.0) -> AcceptanceRanges:
    """Training-set [min, max] of N_in_view and delta_in_view, optionally
    widened multiplicatively (lo / widen, hi * widen)."""
    if not training_poses:
        raise SamplingError("cannot compute acceptance ranges from an empty training set")
    positions = np.array([p.position for p in training_poses])
    ns, ds = [], []
    for p in training_poses:
        s = view_stats(p, intr, cloud, positions)
        ns.append(s.n_in_view)
        if s.n_in_view > 0:
            ds.append(s.delta_in_view)
    if not ds:
        raise SamplingError("no training pose sees any cloud point; check scene and cloud")

    # multiplicative widening so a degenerate [v, v] range (tiny or highly
    # symmetric training sets) can still open up; widen = 1 keeps exact min/max
    def widened(lo: float, hi: float) -> tuple[float, float]:
        return lo / widen, hi * widen

    n_lo, n_hi = widened(float(min(ns)), float(max(ns)))
    d_lo, d_hi = widened(float(min(ds)), float(max(ds)))
    return AcceptanceRanges(n_lo, n_hi, d_lo, d_hi)


def sample_orientation(training_poses: list[Pose], max_angle: float,
                       rng: np.random.Generator) -> np.ndarray:
    """R_noise @ R_training^rand; planar training sets stay planar by using
    a heading perturbation of the same geodesic size."""
    if not training_poses:
        raise SamplingError("cannot sample an orientation from an empty training set")
    pick = training_poses[int(rng.integers(0, len(training_poses)))]
    if pick.dim == 3:
        if max_angle == 0.0:
            return pick.rotation()
        u = rng.uniform(-max_angle, max_angle)
        return euler_to_matrix(wrap_angle(pick.euler[0] + u), 0.0, 0.0)
    return random_rotation(max_angle, rng) @ pick.rotation()


def filter_pose(candidate: Pose, training_positions: np.ndarray, cloud: np.ndarray,
                intr: CameraIntrinsics, ranges: AcceptanceRanges,
                cfg: SamplingConfig) -> FilterResult:
    """Apply the three rules in order; the reason names the first failure."""
    stats = view_stats(candidate, intr, cloud, training_positions)
    if stats.delta_training > cfg.max_delta_training:
        return FilterResult(False, REASON_RULE1, stats)
    if not ranges.n_lo <= stats.n_in_view <= ranges.n_hi:
        return FilterResult(False, REASON_RULE2, stats)
    if stats.n_in_view == 0 or not ranges.d_lo <= stats.delta_in_view <= ranges.d_hi:
        return FilterResult(False, REASON_RULE3, stats)
    return FilterResult(True, None, stats)


def sample_poses(scene: Scene, cloud: np.ndarray, training_poses: list[Pose],
                 intr: CameraIntrinsics, cfg: SamplingConfig,
                 ranges: AcceptanceRanges | None = None) -> list[tuple[Pose, ViewStats]]:
    """Rejection-sample cfg.target accepted poses; raises with diagnostics
    if the attempt budget (budget_factor * target) runs out."""
    if not training_poses:
        raise SamplingError("cannot sample poses from an empty training set")
    if len(cloud) == 0:
        raise SamplingError("cannot sample poses against an empty cloud")
    dim = training_poses[0].dim
    positions = np.array([p.position for p in training_poses])
    if ranges is None:
        ranges = compute_ranges(training_poses, intr, cloud, cfg.widen)

    z_lo, z_hi = (float(positions[:, 2].min()), float(positions[:, 2].max())) if dim == 3 \
        else (scene.bounds.lo[2], scene.bounds.hi[2])

    accepted: list[tuple[Pose, ViewStats]] = []
    budget = cfg.budget_factor * cfg.target
    reasons = {REASON_RULE1: 0, REASON_RULE2: 0, REASON_RULE3: 0, "collision": 0}
    attempts = 0
    for i in range(budget):
        attempts += 1
        rng = np.random.default_rng([cfg.seed, i])
        pos = np.array([
            rng.uniform(scene.bounds.lo[0], scene.bounds.hi[0]),
            rng.uniform(scene.bounds.lo[1], scene.bounds.hi[1]),
            rng.uniform(z_lo, z_hi) if z_hi > z_lo else z_lo,
        ])
        if scene.position_collides(pos):
            reasons["collision"] += 1
            continue
        rot = sample_orientation(training_poses, cfg.max_rot_noise, rng)
        tz, tx, ty = matrix_to_euler(rot)
        if dim == 3:
            candidate = Pose(np.array([pos[0], pos[1], 0.0]), np.array([tz, 0.0, 0.0]), dim=3)
        else:
            candidate = Pose(pos, np.array([tz, tx, ty]), dim=6)
        result = filter_pose(candidate, positions, cloud, intr, ranges, cfg)
        if result.accepted:
            accepted.append((candidate, result.stats))
            if len(accepted) == cfg.target:
                return accepted
        else:
            reasons[result.reason] += 1
    rate = len(accepted) / attempts if attempts else 0.0
    raise SamplingError(
        f"accepted only {len(accepted)}/{cfg.target} poses in {attempts} attempts "
        f"(rate {rate:.4f}); rejections: {reasons}")
