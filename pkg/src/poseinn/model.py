"""Combined pose-regression model: coupling flow + image VAE + conditioning.

Glues the invertible flow over encoded poses to the convolutional VAE over
images, owns the pose normalization bounds, and encodes the optional
rounded-previous-state condition for sequential localization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ndiff as nd
from .encoder import Vae, VaeConfig
from .errors import ConditioningError, DimensionError, DomainError
from .flow import FlowConfig, FlowModel
from .geometry import Aabb, Pose, encoded_length, positional_encode_batch, wrap_angle


@dataclass(frozen=True)
class ModelConfig:
    """Architecture of a full pose-regression model.

    dim is the pose dimension (3 planar, 6 full). The image latent width is
    fixed at 2 * dim * enc_L so the flow's two sides line up exactly.
    Conditional models (planar only) take a grid-rounded previous pose,
    positionally encoded, as side input to every coupling block.
    """

    dim: int
    image_hw: int = 32
    enc_L: int = 5
    blocks: int = 6
    hidden: int = 128
    layers: int = 2
    clamp: float = 2.0
    conditional: bool = False
    cond_width: int = 32
    cond_cell_xy: float = 0.5
    cond_cell_theta: float = np.pi / 6
    seed: int = 0

    def __post_init__(self):
        if self.dim not in (3, 6):
            raise DimensionError(f"pose dim must be 3 or 6, got {self.dim}")
        if self.conditional and self.dim != 3:
            raise ConditioningError("conditional models are planar only")
        if self.cond_cell_xy <= 0 or self.cond_cell_theta <= 0:
            raise DomainError("conditioning grid cells must be positive")

    @property
    def latent(self) -> int:
        return 2 * self.dim * self.enc_L

    @property
    def x_len(self) -> int:
        return 2 * self.dim * self.enc_L + self.dim

    @property
    def cond_dim(self) -> int:
        return encoded_length(self.dim, self.enc_L) if self.conditional else 0


def round_to_grid(pose: Pose, cell_xy: float, cell_theta: float) -> Pose:
    """Snap a planar pose to the center of its conditioning grid cell.

    Cell membership uses floor, so e.g. x = 1.26 with 0.5 m cells lands in
    [1.0, 1.5) and is reported as its center 1.25.
    """
    if pose.dim != 3:
        raise DimensionError("conditioning grid rounding is planar only")

    def center(v: float, cell: float) -> float:
        return (np.floor(v / cell) + 0.5) * cell

    x = center(pose.position[0], cell_xy)
    y = center(pose.position[1], cell_xy)
    th = wrap_angle(center(wrap_angle(pose.euler[0]), cell_theta))
    return Pose(np.array([x, y, 0.0]), np.array([th, 0.0, 0.0]), dim=3)


class PoseRegressor:
    """Flow + VAE pair sharing one named-parameter dict for the optimizer."""

    def __init__(self, config: ModelConfig, bounds: Aabb):
        self.config = config
        self.bounds = bounds
        self.flow = FlowModel(FlowConfig(
            dim=config.dim, enc_L=config.enc_L, blocks=config.blocks,
            hidden=config.hidden, layers=config.layers, clamp=config.clamp,
            cond_dim=config.cond_dim, cond_width=config.cond_width,
            seed=config.seed))
        self.vae = Vae(VaeConfig(image_hw=config.image_hw, latent=config.latent,
                                 seed=config.seed + 1))
        self.params: dict[str, nd.Tensor] = {}
        for k, t in self.flow.params.items():
            self.params[f"flow.{k}"] = t
        for k, t in self.vae.params.items():
            self.params[f"vae.{k}"] = t

    # ------------------------------------------------------------------
    # pose <-> flow coordinates
    # ------------------------------------------------------------------
    def _pos_width(self) -> int:
        return 2 if self.config.dim == 3 else 3

    def normalize_vectors(self, vs: np.ndarray) -> np.ndarray:
        """Pose vectors (n, d) in meters/radians -> normalized [-1, 1]."""
        vs = np.asarray(vs, dtype=np.float64)
        if vs.ndim != 2 or vs.shape[1] != self.config.dim:
            raise DimensionError(f"expected (n, {self.config.dim}) pose vectors, got {vs.shape}")
        k = self._pos_width()
        pos, ang = vs[:, :k], vs[:, k:]
        lo, hi = self.bounds.lo[:k], self.bounds.hi[:k]
        if np.any(pos < lo - 1e-6) or np.any(pos > hi + 1e-6):
            raise DomainError("pose position outside the normalization bounds")
        center, half = self.bounds.center[:k], self.bounds.half[:k]
        pos_n = np.clip((pos - center) / half, -1.0, 1.0)
        return np.concatenate([pos_n, wrap_angle(ang) / np.pi], axis=1)

    def denormalize_vectors(self, vs: np.ndarray) -> np.ndarray:
        """Inverse of normalize_vectors; angles come back wrapped."""
        vs = np.asarray(vs, dtype=np.float64)
        k = self._pos_width()
        pos = vs[:, :k] * self.bounds.half[:k] + self.bounds.center[:k]
        ang = wrap_angle(vs[:, k:] * np.pi)
        return np.concatenate([pos, ang], axis=1)

    def encode_pose_batch(self, vs: np.ndarray) -> np.ndarray:
        """Pose vectors (n, d) -> flow inputs (n, 2dL + d)."""
        return positional_encode_batch(self.normalize_vectors(vs), self.config.enc_L)

    def decode_pose_vectors(self, x: np.ndarray) -> np.ndarray:
        """Flow outputs (n, 2dL + d) -> pose vectors via the raw tail."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.config.x_len:
            raise DimensionError(f"expected (n, {self.config.x_len}) flow vectors, got {x.shape}")
        return self.denormalize_vectors(x[:, self.config.latent:])

    # ------------------------------------------------------------------
    # conditioning
    # ------------------------------------------------------------------
    def condition_vector(self, prev: Pose) -> np.ndarray:
        """Previous-state estimate -> encoded condition row (cond_dim,).

        Clamps the estimate into bounds first so a slightly drifted track
        still produces a valid cell, then rounds to the grid and encodes.
        """
        if not self.config.conditional:
            raise ConditioningError("model is unconditional but a condition was given")
        pos = np.clip(prev.position, self.bounds.lo, self.bounds.hi)
        clamped = Pose(np.array([pos[0], pos[1], 0.0]),
                       np.array([prev.euler[0], 0.0, 0.0]), dim=3)
        cell = round_to_grid(clamped, self.config.cond_cell_xy, self.config.cond_cell_theta)
        # cell centers sit strictly inside the bounds whenever the cell size
        # divides the box, but clamp again so odd geometry cannot escape
        v = self.normalize_vectors(np.clip(
            cell.as_vector()[None, :],
            np.append(self.bounds.lo[:2], -np.pi),
            np.append(self.bounds.hi[:2], np.pi)))
        return positional_encode_batch(v, self.config.enc_L)[0]

    def condition_batch(self, poses: list[Pose]) -> np.ndarray:
        return np.stack([self.condition_vector(p) for p in poses])

    # ------------------------------------------------------------------
    # serialization
    # ------------------------------------------------------------------
    def param_arrays(self) -> dict[str, np.ndarray]:
        out = {f"flow.{k}": a for k, a in self.flow.param_arrays().items()}
        out.update({f"vae.{k}": a for k, a in self.vae.param_arrays().items()})
        return out

    def load_param_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.flow.load_param_arrays(
            {k[len("flow."):]: a for k, a in arrays.items() if k.startswith("flow.")})
        self.vae.load_param_arrays(
            {k[len("vae."):]: a for k, a in arrays.items() if k.startswith("vae.")})
