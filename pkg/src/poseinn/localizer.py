"""Inference: pose posteriors from the flow, filtering, tracking, EKF fusion.

localize() encodes an image once, draws N residual latents, and inverts the
flow to get N pose samples; downstream consumers use the sample spread as an
uncertainty signal, either to drop unreliable frames (variance_filter) or to
weight an odometry fusion (ekf_fuse).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConditioningError, DimensionError, DomainError, TrackingError
from .geometry import Pose, wrap_angle
from .model import PoseRegressor
from .ndiff import Tensor

# eigenvalues may dip this far below zero before a covariance counts as broken
PSD_SLACK = 1e-10


def circular_mean(angles: np.ndarray) -> float:
    return float(np.arctan2(np.mean(np.sin(angles)), np.mean(np.cos(angles))))


@dataclass(frozen=True)
class PosePosterior:
    """N decoded pose samples plus their moments.

    ``samples`` is (n, d) in meters/radians; angular columns of ``variance``
    are circular (mean squared wrapped deviation from the circular mean);
    ``position_cov`` covers the position block only.
    """

    samples: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    position_cov: np.ndarray
    dim: int

    @property
    def mean_pose(self) -> Pose:
        return Pose.from_vector(self.mean, self.dim)

    def scalar_uncertainty(self, include_rotation: bool = False) -> float:
        """Sum of position variances; optionally adds the angular ones."""
        k = 2 if self.dim == 3 else 3
        u = float(np.sum(self.variance[:k]))
        if include_rotation:
            u += float(np.sum(self.variance[k:]))
        return u


def summarize_samples(samples: np.ndarray, dim: int) -> PosePosterior:
    """Moments of decoded pose samples; angles use circular statistics."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[1] != dim or len(samples) < 1:
        raise DimensionError(f"need (n, {dim}) samples, got {samples.shape}")
    k = 2 if dim == 3 else 3
    mean = np.empty(dim)
    mean[:k] = samples[:, :k].mean(axis=0)
    for j in range(k, dim):
        mean[j] = circular_mean(samples[:, j])
    # columns whose samples all agree get the exact value and zero spread
    # (the float mean of n equal values need not equal them bitwise)
    same = np.all(samples == samples[0], axis=0)
    mean[same] = samples[0, same]
    dev = samples - mean
    dev[:, k:] = wrap_angle(dev[:, k:])
    dev[:, same] = 0.0
    variance = np.mean(dev * dev, axis=0)
    pos_dev = dev[:, :k]
    position_cov = pos_dev.T @ pos_dev / len(samples)
    return PosePosterior(samples=samples, mean=mean, variance=variance,
                         position_cov=position_cov, dim=dim)


def localize(model: PoseRegressor, image: np.ndarray, n_samples: int = 50,
             condition: Pose | None = None,
             rng: np.random.Generator | None = None) -> PosePosterior:
    """Image -> pose posterior from n_samples draws of the residual latent.

    The image is encoded once with the VAE mean; each sample inverts the flow
    at a fresh z ~ N(0, 1). Conditional models require ``condition`` (the
    previous-state estimate); unconditional models reject one.
    """
    if rng is None:
        raise DomainError("localize needs an rng (pass np.random.default_rng(seed))")
    if n_samples < 1:
        raise DomainError("n_samples must be >= 1")
    image = np.asarray(image, dtype=np.float64)
    hw = model.config.image_hw
    if image.shape != (hw, hw, 3):
        raise DimensionError(f"image must be ({hw}, {hw}, 3), got {image.shape}")
    if model.config.conditional and condition is None:
        raise ConditioningError("conditional model requires a previous-state condition")

    yhat = model.vae.encode(image[None], mode="mean").data
    if not np.all(np.isfinite(yhat)):
        raise DomainError("model produced a non-finite image latent")
    y_tile = np.repeat(yhat, n_samples, axis=0)
    z = rng.standard_normal((n_samples, model.config.dim))
    c = None
    if condition is not None:
        c = Tensor(np.tile(model.condition_vector(condition), (n_samples, 1)))
    x = model.flow.inverse(Tensor(y_tile), Tensor(z), c).data
    samples = model.decode_pose_vectors(x)
    return summarize_samples(samples, model.config.dim)


def variance_filter(posteriors: list[PosePosterior],
                    include_rotation: bool = False) -> tuple[np.ndarray, list[PosePosterior]]:
    """Keep posteriors whose scalar uncertainty is <= the median.

    Returns (boolean keep mask, kept subset). Ties at the median are kept, so
    distinct values keep exactly ceil(n / 2) entries.
    """
    if len(posteriors) < 2:
        raise DomainError("variance filtering needs at least 2 posteriors")
    u = np.array([p.scalar_uncertainty(include_rotation) for p in posteriors])
    mask = u <= np.median(u)
    return mask, [p for p, m in zip(posteriors, mask) if m]


# ---------------------------------------------------------------------------
# sequential localization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrackPoint:
    frame: int
    posterior: PosePosterior
    condition: Pose | None
    lost: bool


def sequential_localize(model: PoseRegressor, images: np.ndarray,
                        initial_pose: Pose, rng: np.random.Generator,
                        n_samples: int = 50, var_ceiling: float = np.inf,
                        lost_after: int = 5) -> list[TrackPoint]:
    """Per-frame localization where each frame is conditioned on the rounded
    previous estimate (for conditional models; unconditional models just run
    frame-independent localization).

    A frame whose scalar uncertainty exceeds ``var_ceiling`` counts toward a
    divergence streak; once ``lost_after`` consecutive frames exceed it, the
    remaining track points are flagged lost (tracking continues regardless).
    """
    if model.config.dim != 3:
        raise TrackingError("sequential localization is planar only")
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4 or len(images) == 0:
        raise DimensionError("need a non-empty (t, h, w, 3) image stream")
    if lost_after < 1:
        raise DomainError("lost_after must be >= 1")

    prev = initial_pose
    track: list[TrackPoint] = []
    streak = 0
    lost = False
    for t, img in enumerate(images):
        cond = prev if model.config.conditional else None
        post = localize(model, img, n_samples=n_samples, condition=cond, rng=rng)
        streak = streak + 1 if post.scalar_uncertainty() > var_ceiling else 0
        if streak >= lost_after:
            lost = True
        track.append(TrackPoint(frame=t, posterior=post, condition=cond, lost=lost))
        prev = post.mean_pose
    return track


# ---------------------------------------------------------------------------
# heading multimodality
# ---------------------------------------------------------------------------

def heading_modes(headings: np.ndarray, n_bins: int = 18) -> list[tuple[float, float]]:
    """Local maxima of the circular heading histogram.

    Returns (bin center, mass) pairs sorted by decreasing peak count, where
    mass is the fraction of samples in the peak bin and its two circular
    neighbors (a mode is the lobe around a peak, not one bin). Peaks within
    two bins of a stronger peak are suppressed so one lobe yields one mode.
    """
    headings = wrap_angle(np.asarray(headings, dtype=np.float64).reshape(-1))
    if len(headings) == 0:
        raise DomainError("heading_modes needs at least one sample")
    counts, edges = np.histogram(headings, bins=n_bins, range=(-np.pi, np.pi))
    centers = (edges[:-1] + edges[1:]) / 2
    n = len(headings)
    peaks = [i for i in range(n_bins)
             if counts[i] > 0
             and counts[i] >= counts[(i - 1) % n_bins]
             and counts[i] >= counts[(i + 1) % n_bins]]
    peaks.sort(key=lambda i: (-counts[i], i))
    kept: list[int] = []
    for i in peaks:
        if all(min((i - j) % n_bins, (j - i) % n_bins) > 2 for j in kept):
            kept.append(i)
    out = []
    for i in kept:
        mass = (counts[(i - 1) % n_bins] + counts[i] + counts[(i + 1) % n_bins]) / n
        out.append((float(centers[i]), float(mass)))
    return out


# ---------------------------------------------------------------------------
# EKF odometry fusion
# ---------------------------------------------------------------------------

def _check_psd(cov: np.ndarray, what: str) -> np.ndarray:
    cov = np.asarray(cov, dtype=np.float64)
    if not np.all(np.isfinite(cov)):
        raise ConditioningError(f"{what} has non-finite entries")
    if not np.allclose(cov, cov.T, atol=1e-9):
        raise ConditioningError(f"{what} is not symmetric")
    if np.linalg.eigvalsh(cov).min() < -PSD_SLACK:
        raise ConditioningError(f"{what} is not positive semidefinite")
    return (cov + cov.T) / 2


@dataclass(frozen=True)
class EkfState:
    """Planar filter state: mean (x, y, theta) and 3x3 covariance."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        if mean.shape != (3,):
            raise DimensionError(f"EKF mean must be (3,), got {mean.shape}")
        cov = _check_psd(self.cov, "EKF covariance")
        if cov.shape != (3, 3):
            raise DimensionError(f"EKF covariance must be (3, 3), got {cov.shape}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)


@dataclass(frozen=True)
class OdometryStep:
    """Body-frame increment (forward, lateral, heading) with process noise
    variances for (x, y, theta)."""

    d_forward: float
    d_lateral: float
    d_theta: float
    noise: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        noise = np.asarray(self.noise, dtype=np.float64).reshape(-1)
        vals = (self.d_forward, self.d_lateral, self.d_theta)
        if not all(np.isfinite(v) for v in vals) or not np.all(np.isfinite(noise)):
            raise DomainError("odometry step must be finite")
        if noise.shape != (3,) or np.any(noise < 0):
            raise DomainError("process noise must be 3 non-negative variances")
        object.__setattr__(self, "noise", noise)


def ekf_predict(state: EkfState, odom: OdometryStep) -> EkfState:
    """Compose the body-frame increment onto the state (exact planar motion)
    and push the covariance through the analytic Jacobian."""
    x, y, th = state.mean
    c, s = np.cos(th), np.sin(th)
    mean = np.array([x + c * odom.d_forward - s * odom.d_lateral,
                     y + s * odom.d_forward + c * odom.d_lateral,
                     wrap_angle(th + odom.d_theta)])
    F = np.array([[1.0, 0.0, -s * odom.d_forward - c * odom.d_lateral],
                  [0.0, 1.0, c * odom.d_forward - s * odom.d_lateral],
                  [0.0, 0.0, 1.0]])
    cov = F @ state.cov @ F.T + np.diag(odom.noise)
    return EkfState(mean=mean, cov=cov)


def ekf_update(state: EkfState, meas_mean: np.ndarray, meas_cov: np.ndarray,
               fuse_heading: bool = True) -> EkfState:
    """Fuse a pose measurement; the heading innovation is wrapped so a
    measurement across the +-pi seam pulls the short way around."""
    meas_mean = np.asarray(meas_mean, dtype=np.float64).reshape(-1)
    if meas_mean.shape != (3,):
        raise DimensionError(f"measurement mean must be (3,), got {meas_mean.shape}")
    R = _check_psd(meas_cov, "measurement covariance")
    if R.shape != (3, 3):
        raise DimensionError(f"measurement covariance must be (3, 3), got {R.shape}")
    if fuse_heading:
        H = np.eye(3)
    else:
        H = np.eye(3)[:2]
        R = R[:2, :2]
    nu = meas_mean[: len(H)] - H @ state.mean
    if fuse_heading:
        nu[2] = wrap_angle(nu[2])
    S = H @ state.cov @ H.T + R
    K = np.linalg.solve(S.T, (state.cov @ H.T).T).T
    mean = state.mean + K @ nu
    mean[2] = wrap_angle(mean[2])
    ikh = np.eye(3) - K @ H
    cov = ikh @ state.cov @ ikh.T + K @ R @ K.T  # Joseph form keeps PSD
    return EkfState(mean=mean, cov=cov)


def posterior_measurement(post: PosePosterior) -> tuple[np.ndarray, np.ndarray]:
    """Posterior -> (mean, full 3x3 covariance) measurement for the EKF.

    The covariance comes from the samples with wrapped heading deviations,
    so the position-heading cross terms are retained.
    """
    if post.dim != 3:
        raise TrackingError("EKF fusion is planar only")
    dev = post.samples - post.mean
    dev[:, 2] = wrap_angle(dev[:, 2])
    cov = dev.T @ dev / len(post.samples)
    return post.mean.copy(), cov


def ekf_fuse(state: EkfState, odom: OdometryStep, post: PosePosterior,
             fuse_heading: bool = True) -> EkfState:
    """Predict with odometry, then update with the posterior measurement."""
    mean, cov = posterior_measurement(post)
    return ekf_update(ekf_predict(state, odom), mean, cov, fuse_heading=fuse_heading)
