"""Bidirectional training loop for the pose-regression model.

Each step evaluates the forward path (encoded pose -> image latent), the
reverse path (image latent + fresh Gaussian z -> pose), and the VAE
reconstruction, sums the weighted losses, and applies one joint Adam update
to every parameter. Also owns the binary checkpoint format.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from . import ndiff as nd
from .encoder import kl_divergence
from .errors import CheckpointError, DomainError, NonFiniteError
from .geometry import Aabb, Pose, euler_to_matrix
from .model import ModelConfig, PoseRegressor
from .ndiff import Tensor

# keeps acos off its infinite-slope endpoints; floors the rotation loss at
# acos(1 - 1e-7) ~ 4.5e-4 rad, far below any acceptance threshold
ACOS_GUARD = 1e-7

MAGIC = b"PINN"
VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    """Schedule and loss weights; defaults are the desk-scale protocol."""

    epochs: int = 30
    batch: int = 200
    lr_start: float = 5e-4
    lr_end: float = 5e-5
    w_fwd: float = 1.0
    w_rev_pos: float = 1.0
    w_rev_rot: float = 1.0
    w_rev_enc: float = 0.1
    w_recon: float = 1.0
    w_kl: float = 1e-3
    w_nll: float = 0.0
    warmup_epochs: int = 3
    checkpoint_every: int = 10
    mix: str = "alternate"
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch < 1:
            raise DomainError("epochs and batch size must be positive")
        if not (self.lr_start >= self.lr_end > 0):
            raise DomainError("need lr_start >= lr_end > 0")
        for name in ("w_fwd", "w_rev_pos", "w_rev_rot", "w_rev_enc",
                     "w_recon", "w_kl", "w_nll"):
            if getattr(self, name) < 0:
                raise DomainError(f"loss weight {name} must be >= 0")
        if self.warmup_epochs < 0 or self.checkpoint_every < 0:
            raise DomainError("warmup_epochs and checkpoint_every must be >= 0")
        if self.mix not in ("alternate", "pool"):
            raise DomainError(f"mix must be 'alternate' or 'pool', got '{self.mix}'")


@dataclass(frozen=True)
class LossEntry:
    """One row of the loss report. rev_pos is a squared error in m^2;
    rev_rot is a mean geodesic angle in radians."""

    epoch: int
    lr: float
    total: float
    fwd: float
    rev_pos: float
    rev_rot: float
    rev_enc: float
    recon: float
    kl: float
    nll: float = 0.0


def learning_rate(cfg: TrainConfig, epoch: int) -> float:
    """Geometric interpolation lr_start -> lr_end over the epoch index."""
    if cfg.epochs == 1:
        return cfg.lr_start
    return cfg.lr_start * (cfg.lr_end / cfg.lr_start) ** (epoch / (cfg.epochs - 1))


# ---------------------------------------------------------------------------
# in-graph rotation losses
# ---------------------------------------------------------------------------

def _guarded_angle(cosang: Tensor) -> Tensor:
    return nd.acos(nd.clip(cosang, -1.0 + ACOS_GUARD, 1.0 - ACOS_GUARD))


def _planar_rotation_loss(theta_pred: Tensor, theta_gt: np.ndarray) -> Tensor:
    """Mean |heading difference| via the rotation-trace identity
    tr(Rz(a) Rz(b)^T) = 2 cos(a - b) + 1, which stays smooth in the graph."""
    cosd = nd.add(nd.mul(nd.cos(theta_pred), np.cos(theta_gt)),
                  nd.mul(nd.sin(theta_pred), np.sin(theta_gt)))
    return nd.tmean(_guarded_angle(cosd))


def _full_rotation_loss(ang_pred: Tensor, rot_gt: np.ndarray) -> Tensor:
    """Mean geodesic angle acos((tr(R_pred R_gt^T) - 1) / 2).

    R_pred = Rz @ Rx @ Ry is expanded symbolically so the whole batch runs
    through elementwise ops; the trace is the entrywise inner product with
    the constant ground-truth matrices.
    """
    tz, tx, ty = nd.split(ang_pred, [1, 1, 1])
    cz, sz = nd.cos(tz), nd.sin(tz)
    cx, sx = nd.cos(tx), nd.sin(tx)
    cy, sy = nd.cos(ty), nd.sin(ty)
    entries = [
        nd.sub(nd.mul(cz, cy), nd.mul(nd.mul(sz, sx), sy)),   # r00
        nd.mul(nd.mul(sz, cx), -1.0),                         # r01
        nd.add(nd.mul(cz, sy), nd.mul(nd.mul(sz, sx), cy)),   # r02
        nd.add(nd.mul(sz, cy), nd.mul(nd.mul(cz, sx), sy)),   # r10
        nd.mul(cz, cx),                                       # r11
        nd.sub(nd.mul(sz, sy), nd.mul(nd.mul(cz, sx), cy)),   # r12
        nd.mul(nd.mul(cx, sy), -1.0),                         # r20
        sx,                                                   # r21
        nd.mul(cx, cy),                                       # r22
    ]
    trace = None
    for (i, j), r in zip([(0, 0), (0, 1), (0, 2), (1, 0), (1, 1),
                          (1, 2), (2, 0), (2, 1), (2, 2)], entries):
        term = nd.mul(r, rot_gt[:, i, j][:, None])
        trace = term if trace is None else nd.add(trace, term)
    return nd.tmean(_guarded_angle(nd.mul(trace - 1.0, 0.5)))


# ---------------------------------------------------------------------------
# one optimizer step
# ---------------------------------------------------------------------------

def train_step(model: PoseRegressor, pose_vecs: np.ndarray, images: np.ndarray,
               cfg: TrainConfig, rng: np.random.Generator, lr: float,
               opt: nd.Adam, cond_vecs: np.ndarray | None = None,
               warmup: bool = False, epoch: int = 0) -> LossEntry:
    """Build the joint loss on one batch, backprop, and step the optimizer.

    ``warmup`` restricts the graph to the VAE losses (reconstruction + KL);
    the flow parameters then receive no gradient and stay untouched.
    """
    if len(pose_vecs) == 0:
        raise DomainError("training batch is empty")
    d = model.config.dim
    k = 2 if d == 3 else 3
    latent = model.config.latent
    parts: dict[str, float] = {}

    try:
        y = Tensor(np.asarray(images, dtype=np.float64))
        mu, logvar = model.vae.encode_stats(y)
        eps = rng.standard_normal(size=mu.data.shape)
        yhat = mu + nd.mul(nd.exp(nd.mul(logvar, 0.5)), Tensor(eps))
        recon = nd.mse(model.vae.decode(yhat), y)
        parts["recon"] = recon.item()
        kl = kl_divergence(mu, logvar)
        parts["kl"] = kl.item()

        if warmup:
            fwd = rev_pos = rev_rot = rev_enc = nll = None
        else:
            xhat_np = model.encode_pose_batch(pose_vecs)
            xhat = Tensor(xhat_np)
            c = Tensor(cond_vecs) if cond_vecs is not None else None
            y_pred, _ = model.flow.forward(xhat, c)
            fwd = nd.mse(y_pred, yhat)
            parts["fwd"] = fwd.item()

            z = Tensor(rng.standard_normal(size=(len(pose_vecs), d)))
            x_pred = model.flow.inverse(yhat, z, c)
            enc_pred = nd.narrow(x_pred, 0, latent)
            tail_pred = nd.narrow(x_pred, latent, latent + d)
            enc_gt = xhat_np[:, :latent]
            tail_gt = xhat_np[:, latent:]

            half = model.bounds.half[:k][None, :]
            pos_pred = nd.narrow(tail_pred, 0, k)
            rev_pos = nd.mse(nd.mul(pos_pred, half), Tensor(tail_gt[:, :k] * half))
            parts["rev_pos"] = rev_pos.item()

            ang_pred = nd.mul(nd.narrow(tail_pred, k, d), np.pi)
            if d == 3:
                rev_rot = _planar_rotation_loss(ang_pred, tail_gt[:, k:] * np.pi)
            else:
                gt_eul = tail_gt[:, k:] * np.pi
                rot_gt = np.stack([euler_to_matrix(*e) for e in gt_eul])
                rev_rot = _full_rotation_loss(ang_pred, rot_gt)
            parts["rev_rot"] = rev_rot.item()

            rev_enc = nd.mse(enc_pred, Tensor(enc_gt))
            parts["rev_enc"] = rev_enc.item()

            nll = None
            if cfg.w_nll > 0:
                z_fwd = model.flow.forward(xhat, c)[1]
                logdet = model.flow.log_det_jacobian(xhat, c)
                nll = nd.tmean(nd.mul(nd.tsum(nd.mul(z_fwd, z_fwd), axis=1), 0.5) - logdet)
                parts["nll"] = nll.item()

        total = nd.add(nd.mul(recon, cfg.w_recon), nd.mul(kl, cfg.w_kl))
        if not warmup:
            total = total + nd.mul(fwd, cfg.w_fwd) + nd.mul(rev_pos, cfg.w_rev_pos) \
                + nd.mul(rev_rot, cfg.w_rev_rot) + nd.mul(rev_enc, cfg.w_rev_enc)
            if nll is not None:
                total = total + nd.mul(nll, cfg.w_nll)

        opt.zero_grad()
        total.backward()
        opt.step(lr=lr)
    except NonFiniteError as e:
        raise NonFiniteError(
            f"non-finite training loss: {e}; finite components so far: "
            + ", ".join(f"{n}={v:.6g}" for n, v in parts.items())) from e

    def val(t) -> float:
        # fp rounding can leave a mathematically >= 0 component a hair below
        return 0.0 if t is None else max(0.0, t.item())

    return LossEntry(epoch=epoch, lr=lr, total=total.item(), fwd=val(fwd),
                     rev_pos=val(rev_pos), rev_rot=val(rev_rot),
                     rev_enc=val(rev_enc), recon=val(recon), kl=val(kl),
                     nll=val(nll))


# ---------------------------------------------------------------------------
# epoch loop
# ---------------------------------------------------------------------------

def _mean_entry(epoch: int, lr: float, steps: list[LossEntry]) -> LossEntry:
    n = len(steps)
    avg = lambda f: sum(getattr(s, f) for s in steps) / n
    return LossEntry(epoch=epoch, lr=lr, total=avg("total"), fwd=avg("fwd"),
                     rev_pos=avg("rev_pos"), rev_rot=avg("rev_rot"),
                     rev_enc=avg("rev_enc"), recon=avg("recon"),
                     kl=avg("kl"), nll=avg("nll"))


def train(model: PoseRegressor, poses: np.ndarray, images: np.ndarray,
          cfg: TrainConfig, synth_poses: np.ndarray | None = None,
          synth_images: np.ndarray | None = None, out_dir=None,
          start_epoch: int = 0, opt: nd.Adam | None = None,
          ) -> tuple[list[LossEntry], nd.Adam]:
    """Run the full schedule; returns per-epoch mean losses and the optimizer.

    With a synthetic split present, mix='alternate' interleaves whole epochs
    1:1 between the original and synthetic sets; mix='pool' shuffles their
    concatenation every epoch. All per-epoch randomness is derived from
    (seed, epoch) counters, so resuming from a checkpoint at any epoch
    reproduces the uninterrupted run bitwise.
    """
    poses = np.asarray(poses, dtype=np.float64)
    images = np.asarray(images, dtype=np.float64)
    if len(poses) != len(images) or len(poses) == 0:
        raise DomainError("poses and images must be non-empty and equal length")
    have_synth = synth_poses is not None and len(synth_poses) > 0
    if have_synth:
        synth_poses = np.asarray(synth_poses, dtype=np.float64)
        synth_images = np.asarray(synth_images, dtype=np.float64)
        if len(synth_poses) != len(synth_images):
            raise DomainError("synthetic poses and images must be equal length")

    if cfg.mix == "pool" and have_synth:
        pools = [(np.concatenate([poses, synth_poses]),
                  np.concatenate([images, synth_images]))]
    elif have_synth:
        pools = [(poses, images), (synth_poses, synth_images)]
    else:
        pools = [(poses, images)]
    for pp, _ in pools:
        if cfg.batch > len(pp):
            raise DomainError(f"batch size {cfg.batch} exceeds a training pool of {len(pp)}")

    conds = [model.condition_batch([Pose.from_vector(v, model.config.dim) for v in pp])
             if model.config.conditional else None for pp, _ in pools]

    if opt is None:
        opt = nd.Adam(model.params)
    entries: list[LossEntry] = []
    for epoch in range(start_epoch, cfg.epochs):
        pool_i = epoch % len(pools)
        pool_poses, pool_images = pools[pool_i]
        pool_cond = conds[pool_i]
        warmup = epoch < cfg.warmup_epochs
        lr = learning_rate(cfg, epoch)
        perm = np.random.default_rng([cfg.seed, 7, epoch]).permutation(len(pool_poses))
        steps = []
        try:
            for bi, lo in enumerate(range(0, len(perm), cfg.batch)):
                idx = perm[lo:lo + cfg.batch]
                rng = np.random.default_rng([cfg.seed, epoch, bi])
                steps.append(train_step(
                    model, pool_poses[idx], pool_images[idx], cfg, rng, lr, opt,
                    pool_cond[idx] if pool_cond is not None else None,
                    warmup=warmup, epoch=epoch))
        except NonFiniteError as e:
            raise NonFiniteError(f"epoch {epoch}: {e}") from e
        entries.append(_mean_entry(epoch, lr, steps))
        if out_dir is not None and cfg.checkpoint_every > 0 \
                and (epoch + 1) % cfg.checkpoint_every == 0 and epoch + 1 < cfg.epochs:
            save_checkpoint(f"{out_dir}/epoch_{epoch + 1:04d}.ckpt", model,
                            epoch=epoch + 1, train_cfg=cfg, opt=opt)
    if out_dir is not None:
        save_checkpoint(f"{out_dir}/model.ckpt", model, epoch=cfg.epochs,
                        train_cfg=cfg, opt=opt)
    return entries, opt


def format_loss_table(entries: list[LossEntry]) -> str:
    """Per-epoch losses as tab-separated text with a header row."""
    cols = ["epoch", "lr", "total", "fwd", "rev_pos", "rev_rot",
            "rev_enc", "recon", "kl", "nll"]
    lines = ["\t".join(cols)]
    for e in entries:
        lines.append("\t".join(
            [str(e.epoch)] + [repr(getattr(e, c)) for c in cols[1:]]))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.off = 0

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.blob):
            raise CheckpointError("truncated checkpoint file")
        out = self.blob[self.off:self.off + n]
        self.off += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]


@dataclass
class Checkpoint:
    """Everything needed to resume: rebuilt model, schedule position,
    optimizer moment arrays, and the echoed training config."""

    model: PoseRegressor
    epoch: int
    adam_t: int
    opt_arrays: dict
    train: TrainConfig | None


def save_checkpoint(path, model: PoseRegressor, epoch: int = 0,
                    train_cfg: TrainConfig | None = None,
                    opt: nd.Adam | None = None) -> None:
    """Write magic, version, JSON meta block, then named float64 records."""
    meta = {
        "model": asdict(model.config),
        "bounds_lo": [float(v) for v in model.bounds.lo],
        "bounds_hi": [float(v) for v in model.bounds.hi],
        "epoch": int(epoch),
        "adam_t": int(opt.state["t"]) if opt is not None and opt.state else 0,
        "train": asdict(train_cfg) if train_cfg is not None else None,
    }
    arrays = model.param_arrays()
    if opt is not None:
        arrays.update(opt.state_arrays())
    meta_b = json.dumps(meta).encode("utf-8")
    out = [MAGIC, struct.pack("<I", VERSION), struct.pack("<Q", len(meta_b)),
           meta_b, struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        name_b = name.encode("utf-8")
        a = np.ascontiguousarray(arr, dtype="<f8")
        out.append(struct.pack("<I", len(name_b)))
        out.append(name_b)
        out.append(struct.pack("<I", a.ndim))
        out.append(struct.pack(f"<{a.ndim}I", *a.shape))
        out.append(a.tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(out))


def load_checkpoint(path) -> Checkpoint:
    """Rebuild the model (architecture from the meta block, parameters and
    optimizer moments bitwise from the records)."""
    with open(path, "rb") as f:
        r = _Reader(f.read())
    if r.take(4) != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        meta = json.loads(r.take(r.u64()).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupt checkpoint meta block: {e}") from e
    arrays = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        rank = r.u32()
        shape = struct.unpack(f"<{rank}I", r.take(4 * rank))
        n = int(np.prod(shape)) if rank else 1
        arrays[name] = np.frombuffer(r.take(8 * n), dtype="<f8").reshape(shape).copy()

    model = PoseRegressor(ModelConfig(**meta["model"]),
                          Aabb(np.array(meta["bounds_lo"]), np.array(meta["bounds_hi"])))
    model.load_param_arrays({k: v for k, v in arrays.items()
                             if not k.startswith("adam.")})
    train_cfg = TrainConfig(**meta["train"]) if meta["train"] is not None else None
    opt_arrays = {k: v for k, v in arrays.items() if k.startswith("adam.")}
    return Checkpoint(model=model, epoch=int(meta["epoch"]),
                      adam_t=int(meta["adam_t"]), opt_arrays=opt_arrays,
                      train=train_cfg)


def restore_optimizer(ck: Checkpoint) -> nd.Adam:
    """Adam instance over the rebuilt model, moments restored bitwise."""
    opt = nd.Adam(ck.model.params)
    opt.load_state_arrays(ck.opt_arrays, ck.adam_t)
    return opt
