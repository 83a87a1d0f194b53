"""Optimization loop: Adam, geometric step-decay schedule, checkpointing.

Checkpoints use the SDLC container: magic, version, iteration counter, then
named parameter tensors followed by the optimizer moments in the same layout.
Round-trips are byte-exact, so a reloaded model reproduces forward passes
bit for bit.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import data as datamod
from . import ops
from .losses import LossConfig, default_extractor, total_loss
from .metrics import psnr, ssim
from .model import ModelConfig, SdlModel
from .tensor import Tape, Tensor, backward

SDLC_MAGIC = b"SDLC"
SDLC_VERSION = 1


@dataclass
class TrainConfig:
    batch_size: int = 8
    base_lr: float = 2e-4
    decay_factor: float = 0.8
    decay_every: int = 0  # 0: total_iters // 6
    total_iters: int = 20000
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    checkpoint_every: int = 2000
    log_every: int = 50
    crop: int = 64
    val_fraction: float = 0.05
    val_samples: int = 4
    flip: bool = True  # off for single-clip overfit runs

    def __post_init__(self):
        if self.decay_every == 0:
            self.decay_every = max(1, self.total_iters // 6)
        for name in ("batch_size", "base_lr", "decay_factor", "total_iters",
                     "decay_every", "checkpoint_every", "log_every", "crop"):
            if getattr(self, name) <= 0:
                raise ValueError(f"TrainConfig.{name} must be positive")
        if self.decay_every > self.total_iters:
            raise ValueError("decay_every must not exceed total_iters")


def lr_at(iteration: int, cfg: TrainConfig) -> float:
    """base_lr * decay_factor ** floor(iteration / decay_every)."""
    if iteration < 0:
        raise ValueError(f"iteration must be >= 0, got {iteration}")
    return cfg.base_lr * cfg.decay_factor ** (iteration // cfg.decay_every)


class Adam:
    """Standard bias-corrected Adam over a model's parameter store."""

    def __init__(self, params, cfg: TrainConfig):
        self.params = params
        self.cfg = cfg
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self, lr: float) -> None:
        cfg = self.cfg
        self.step_count += 1
        bc1 = 1.0 - cfg.beta1 ** self.step_count
        bc2 = 1.0 - cfg.beta2 ** self.step_count
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"NaN gradient in parameter {name!r}")
            m = self.m[name]
            v = self.v[name]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * (g * g)
            mhat = m / bc1
            vhat = v / bc2
            p.data -= (lr * mhat / (np.sqrt(vhat) + cfg.adam_eps)).astype(p.data.dtype)
            p.zero_grad()


# ---------------------------------------------------------------------------
# SDLC checkpoint container


def _write_entry(f, name: str, arr: np.ndarray) -> None:
    encoded = name.encode()
    f.write(struct.pack("<H", len(encoded)))
    f.write(encoded)
    f.write(struct.pack("<4I", *arr.shape))
    f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_entry(buf: bytes, pos: int) -> tuple[str, np.ndarray, int]:
    if pos + 2 > len(buf):
        raise ValueError(f"truncated checkpoint at byte {pos}")
    (nlen,) = struct.unpack_from("<H", buf, pos)
    pos += 2
    name = buf[pos : pos + nlen].decode()
    pos += nlen
    if pos + 16 > len(buf):
        raise ValueError(f"truncated checkpoint at byte {pos}")
    shape = struct.unpack_from("<4I", buf, pos)
    pos += 16
    count = int(np.prod(shape))
    payload = buf[pos : pos + 4 * count]
    if len(payload) != 4 * count:
        raise ValueError(f"truncated checkpoint payload at byte {pos}")
    pos += 4 * count
    arr = np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)
    return name, arr, pos


def save_checkpoint(path, model: SdlModel, optimizer: Optional[Adam],
                    iteration: int) -> None:
    """Atomic write (temp + rename) of parameters and optimizer moments."""
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(SDLC_MAGIC)
        f.write(struct.pack("<I", SDLC_VERSION))
        f.write(struct.pack("<Q", iteration))
        f.write(struct.pack("<I", len(model.params)))
        for name, p in model.params.items():
            _write_entry(f, name, p.data)
        if optimizer is None:
            f.write(struct.pack("<I", 0))
            f.write(struct.pack("<Q", 0))
        else:
            f.write(struct.pack("<I", 2 * len(model.params)))
            for name in model.params.names():
                _write_entry(f, f"{name}.m", optimizer.m[name])
            for name in model.params.names():
                _write_entry(f, f"{name}.v", optimizer.v[name])
            f.write(struct.pack("<Q", optimizer.step_count))
    os.replace(tmp, path)


def load_checkpoint(path, model: SdlModel,
                    optimizer: Optional[Adam] = None) -> int:
    """Load parameters (and moments) into an already-constructed model.

    The checkpoint's parameter name set must match the model's exactly;
    returns the stored iteration counter.
    """
    buf = Path(path).read_bytes()
    if buf[:4] != SDLC_MAGIC:
        raise ValueError(f"{path}: not an SDLC checkpoint (magic {buf[:4]!r})")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != SDLC_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    (iteration,) = struct.unpack_from("<Q", buf, 8)
    (count,) = struct.unpack_from("<I", buf, 16)
    pos = 20
    loaded: dict[str, np.ndarray] = {}
    for _ in range(count):
        name, arr, pos = _read_entry(buf, pos)
        loaded[name] = arr
    expected = set(model.params.names())
    if set(loaded) != expected:
        missing = sorted(expected - set(loaded))[:3]
        extra = sorted(set(loaded) - expected)[:3]
        raise ValueError(
            f"{path}: parameter name set mismatch (missing {missing}, unknown {extra})"
        )
    for name, p in model.params.items():
        if loaded[name].shape != p.data.shape:
            raise ValueError(
                f"{path}: parameter {name!r} shape {loaded[name].shape} != {p.data.shape}"
            )
        p.data = loaded[name]
        p.zero_grad()
    (mcount,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    moments: dict[str, np.ndarray] = {}
    for _ in range(mcount):
        name, arr, pos = _read_entry(buf, pos)
        moments[name] = arr
    (step_count,) = struct.unpack_from("<Q", buf, pos)
    if optimizer is not None and mcount:
        for name in model.params.names():
            optimizer.m[name] = moments[f"{name}.m"]
            optimizer.v[name] = moments[f"{name}.v"]
        optimizer.step_count = step_count
    return int(iteration)


# ---------------------------------------------------------------------------
# training loop


def _stack(images: Sequence[np.ndarray]) -> Tensor:
    return Tensor(np.stack(images).astype(np.float32))


def split_train_val(groups: list[datamod.FrameGroup],
                    val_fraction: float) -> tuple[list, list]:
    """Hold out ~val_fraction of groups; a single group validates on itself."""
    if len(groups) == 1:
        return groups, groups
    n_val = max(1, int(round(val_fraction * len(groups))))
    return groups[:-n_val], groups[-n_val:]


def _batch_rng(seed: int, iteration: int) -> np.random.Generator:
    # Keyed per iteration so a resumed run replays the same sample stream.
    return np.random.default_rng([seed, iteration])


def draw_batch(groups, cfg: TrainConfig, iteration: int):
    rng = _batch_rng(cfg.seed, iteration)
    samples = []
    for _ in range(cfg.batch_size):
        g = groups[rng.integers(0, len(groups))]
        samples.append(datamod.sample(g, rng, crop=cfg.crop, flip=cfg.flip))
    return samples


def validate_midframe(model: SdlModel, groups, crop: int,
                      max_samples: int = 4) -> tuple[float, float]:
    """PSNR/SSIM at t=0.5 on (first, mid, last) crops of validation groups."""
    psnrs, ssims = [], []
    for g in groups[:max_samples]:
        n = len(g)
        i0, it, i1 = g.frames[0], g.frames[(n - 1) // 2], g.frames[n - 1]
        tmid = ((n - 1) // 2) / (n - 1)
        i0, it, i1 = (f[:, :crop, :crop] for f in (i0, it, i1))
        pred = model.infer(_stack([i0]), _stack([i1]), tmid)
        psnrs.append(psnr(pred.data[0], it))
        ssims.append(ssim(pred.data[0], it))
    return float(np.mean(psnrs)), float(np.mean(ssims))


def validate_multi_t(model: SdlModel, groups, crop: int,
                     steps: int = 10, max_groups: int = 4) -> float:
    """Mean PSNR over the interior t grid i/(n-1) against rendered truth."""
    values = []
    for g in groups[:max_groups]:
        n = len(g)
        i0 = _stack([g.frames[0][:, :crop, :crop]])
        i1 = _stack([g.frames[n - 1][:, :crop, :crop]])
        for b in range(1, n - 1):
            t = b / (n - 1)
            pred = model.infer(i0, i1, t)
            values.append(psnr(pred.data[0], g.frames[b][:, :crop, :crop]))
    return float(np.mean(values))


def train(model: SdlModel, train_cfg: TrainConfig, loss_cfg: LossConfig,
          groups: list[datamod.FrameGroup], out_dir,
          resume: Optional[str] = None, quiet: bool = False) -> Path:
    """Run the optimization; writes checkpoints and train_log.csv in out_dir.

    Returns the path of the final checkpoint.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_groups, val_groups = split_train_val(groups, train_cfg.val_fraction)
    optimizer = Adam(model.params, train_cfg)
    extractor = default_extractor(model.config.out_channels) if loss_cfg.beta > 0 else None

    start = 0
    log_path = out_dir / "train_log.csv"
    if resume is not None:
        start = load_checkpoint(resume, model, optimizer)
        log_f = open(log_path, "a")
    else:
        log_f = open(log_path, "w")
        log_f.write("iter,lr,loss,charbonnier,feature,val_psnr,val_ssim\n")

    final = out_dir / "model_final.sdlc"
    try:
        for it in range(start, train_cfg.total_iters):
            batch = draw_batch(train_groups, train_cfg, it)
            # Each sample carries its own t, so forwards run per sample and
            # the scalar losses are averaged.
            with Tape() as tape:
                loss = None
                charb_value = feat_value = 0.0
                for s in batch:
                    pred = model.forward(_stack([s.i0]), _stack([s.i1]), s.t)
                    sample_loss, cv, fv = total_loss(pred, _stack([s.it_gt]), loss_cfg, extractor)
                    charb_value += cv / len(batch)
                    feat_value += fv / len(batch)
                    loss = sample_loss if loss is None else ops.add(loss, sample_loss)
                loss = ops.scalar_mul(1.0 / len(batch), loss)
                loss_value = loss.item()
                if not np.isfinite(loss_value):
                    raise FloatingPointError(f"NaN loss at iteration {it}")
                backward(loss, tape)
            lr = lr_at(it, train_cfg)
            optimizer.step(lr)

            if (it + 1) % train_cfg.log_every == 0 or it + 1 == train_cfg.total_iters:
                val_psnr, val_ssim = validate_midframe(
                    model, val_groups, train_cfg.crop, train_cfg.val_samples)
                log_f.write(
                    f"{it + 1},{lr:.8g},{loss_value:.8g},{charb_value:.8g},"
                    f"{feat_value:.8g},{val_psnr:.6f},{val_ssim:.6f}\n"
                )
                log_f.flush()
                if not quiet:
                    print(
                        f"iter {it + 1}/{train_cfg.total_iters} lr={lr:.3g} "
                        f"loss={loss_value:.5f} val_psnr={val_psnr:.2f}"
                    )
            if (it + 1) % train_cfg.checkpoint_every == 0:
                save_checkpoint(out_dir / f"model_{it + 1:06d}.sdlc", model, optimizer, it + 1)
        save_checkpoint(final, model, optimizer, train_cfg.total_iters)
    finally:
        log_f.close()
    return final
