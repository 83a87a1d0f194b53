"""Synthetic clip generation, real clip ingestion, sampling, and P6 image I/O.

Frames are numpy arrays of shape (3, H, W) with values in [0,1].  A clip is
a :class:`FrameGroup`; training triples (I0, I1, It, t) are drawn from it by
:func:`sample`.  The synthetic generator renders constant-velocity objects
with 4x supersampling, so exact intermediate frames are known by construction.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

SUPERSAMPLE = 4
OBJECT_KINDS = ("rectangle", "disk", "textured")
BACKGROUND_KINDS = ("flat", "gradient", "noise")


# ---------------------------------------------------------------------------
# PPM (binary P6, maxval 255)


def load_ppm(path) -> np.ndarray:
    """Load a binary P6 file into a (3,H,W) float array in [0,1]."""
    raw = Path(path).read_bytes()
    pos = 0

    def token() -> bytes:
        nonlocal pos
        while pos < len(raw):
            if raw[pos : pos + 1].isspace():
                pos += 1
            elif raw[pos : pos + 1] == b"#":
                while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                    pos += 1
            else:
                break
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: malformed PPM header at byte {start}")
        return raw[start:pos]

    magic = token()
    if magic != b"P6":
        raise ValueError(f"{path}: not a binary P6 file (magic {magic!r})")
    try:
        w, h, maxval = int(token()), int(token()), int(token())
    except ValueError as exc:
        raise ValueError(f"{path}: malformed PPM header at byte {pos}") from exc
    if maxval != 255:
        raise ValueError(f"{path}: maxval {maxval} not supported, expected 255")
    pos += 1  # single whitespace byte after maxval
    payload = raw[pos : pos + 3 * w * h]
    if len(payload) != 3 * w * h:
        raise ValueError(
            f"{path}: truncated pixel payload at byte {pos + len(payload)} "
            f"(need {3 * w * h} bytes)"
        )
    img = np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3)
    return np.ascontiguousarray(img.transpose(2, 0, 1)).astype(np.float32) / 255.0


def save_ppm(img: np.ndarray, path) -> None:
    """Write a (3,H,W) [0,1] image as canonical binary P6."""
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"save_ppm expects a (3,H,W) image, got shape {img.shape}")
    _, h, w = img.shape
    bytes_img = np.clip(np.round(np.asarray(img, np.float64) * 255.0), 0, 255).astype(np.uint8)
    header = f"P6\n{w} {h}\n255\n".encode()
    Path(path).write_bytes(header + bytes_img.transpose(1, 2, 0).tobytes())


def save_pgm(img: np.ndarray, path) -> None:
    """Write a (H,W) uint8 grayscale map as binary P5."""
    if img.ndim != 2:
        raise ValueError(f"save_pgm expects a (H,W) image, got shape {img.shape}")
    h, w = img.shape
    header = f"P5\n{w} {h}\n255\n".encode()
    Path(path).write_bytes(header + np.asarray(img, np.uint8).tobytes())


# ---------------------------------------------------------------------------
# frame groups


@dataclass
class FrameGroup:
    frames: list[np.ndarray]
    group_id: str

    def __post_init__(self):
        if len(self.frames) < 3:
            raise ValueError(f"group {self.group_id!r} needs >= 3 frames, got {len(self.frames)}")
        shape = self.frames[0].shape
        for i, f in enumerate(self.frames):
            if f.shape != shape:
                raise ValueError(
                    f"group {self.group_id!r}: frame {i} has shape {f.shape}, expected {shape}"
                )

    def __len__(self) -> int:
        return len(self.frames)


@dataclass
class TrainingSample:
    i0: np.ndarray
    i1: np.ndarray
    it_gt: np.ndarray
    t: float


# ---------------------------------------------------------------------------
# synthetic clips


@dataclass
class MovingObject:
    kind: str
    center: tuple[float, float]  # (y, x) at frame 0, canvas px
    velocity: tuple[float, float]  # (vy, vx) px/frame
    half_size: tuple[float, float]  # (hy, hx); disk uses hy as radius
    color: tuple[float, float, float]
    texture: Optional[np.ndarray] = None  # (3, th, tw) at supersampled res


@dataclass
class SynthConfig:
    canvas: tuple[int, int] = (64, 64)
    num_objects: int = 2
    velocity_range: tuple[float, float] = (0.5, 3.0)
    object_kinds: tuple[str, ...] = OBJECT_KINDS
    background_kind: Optional[str] = None  # None: drawn per group
    frames_per_group: int = 12
    seed: int = 0
    max_retries: int = 200

    def __post_init__(self):
        for k in self.object_kinds:
            if k not in OBJECT_KINDS:
                raise ValueError(f"unknown object kind {k!r}")
        if self.background_kind is not None and self.background_kind not in BACKGROUND_KINDS:
            raise ValueError(f"unknown background kind {self.background_kind!r}")
        if self.frames_per_group < 3:
            raise ValueError("frames_per_group must be >= 3")


def _render_background(kind: str, h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    s = SUPERSAMPLE
    if kind == "flat":
        color = rng.uniform(0.1, 0.9, size=3)
        return np.broadcast_to(color[:, None, None], (3, h * s, w * s)).copy()
    if kind == "gradient":
        c0 = rng.uniform(0.0, 1.0, size=3)
        c1 = rng.uniform(0.0, 1.0, size=3)
        axis = rng.integers(0, 2)
        n = (h if axis == 0 else w) * s
        ramp = np.linspace(0.0, 1.0, n)
        ramp = ramp[:, None] if axis == 0 else ramp[None, :]
        grad = c0[:, None, None] + (c1 - c0)[:, None, None] * ramp
        return np.broadcast_to(grad, (3, h * s, w * s)).copy()
    # noise texture, static across the clip
    return rng.uniform(0.0, 1.0, size=(3, h * s, w * s))


def _object_mask(obj: MovingObject, frame_idx: int, h: int, w: int) -> np.ndarray:
    s = SUPERSAMPLE
    cy = obj.center[0] + frame_idx * obj.velocity[0]
    cx = obj.center[1] + frame_idx * obj.velocity[1]
    ys = (np.arange(h * s) + 0.5) / s
    xs = (np.arange(w * s) + 0.5) / s
    if obj.kind == "disk":
        r = obj.half_size[0]
        return ((ys - cy)[:, None] ** 2 + (xs - cx)[None, :] ** 2) <= r * r
    hy, hx = obj.half_size
    return (np.abs(ys - cy)[:, None] <= hy) & (np.abs(xs - cx)[None, :] <= hx)


def render_frame(background_hi: np.ndarray, objects: Sequence[MovingObject],
                 frame_idx: int, canvas: tuple[int, int]) -> np.ndarray:
    """Composite one supersampled frame and box-average it down to canvas size."""
    h, w = canvas
    s = SUPERSAMPLE
    frame = background_hi.copy()
    for obj in objects:
        mask = _object_mask(obj, frame_idx, h, w)
        if obj.kind == "textured" and obj.texture is not None:
            cy = obj.center[0] + frame_idx * obj.velocity[0]
            cx = obj.center[1] + frame_idx * obj.velocity[1]
            oy = int(round((cy - obj.half_size[0]) * s))
            ox = int(round((cx - obj.half_size[1]) * s))
            yy, xx = np.nonzero(mask)
            ty = np.clip(yy - oy, 0, obj.texture.shape[1] - 1)
            tx = np.clip(xx - ox, 0, obj.texture.shape[2] - 1)
            frame[:, yy, xx] = obj.texture[:, ty, tx]
        else:
            frame[:, mask] = np.asarray(obj.color, np.float64)[:, None]
    down = frame.reshape(3, h, s, w, s).mean(axis=(2, 4))
    return np.clip(down, 0.0, 1.0).astype(np.float32)


def render_clip(cfg: SynthConfig, background_hi: np.ndarray,
                objects: Sequence[MovingObject], group_id: str) -> FrameGroup:
    frames = [
        render_frame(background_hi, objects, i, cfg.canvas)
        for i in range(cfg.frames_per_group)
    ]
    return FrameGroup(frames, group_id)


def _sample_object(cfg: SynthConfig, rng: np.random.Generator) -> MovingObject:
    h, w = cfg.canvas
    kind = cfg.object_kinds[rng.integers(0, len(cfg.object_kinds))]
    hy = rng.uniform(0.06, 0.18) * h
    hx = rng.uniform(0.06, 0.18) * w
    if kind == "disk":
        hx = hy
    last = cfg.frames_per_group - 1
    for _ in range(cfg.max_retries):
        speed = rng.uniform(*cfg.velocity_range)
        angle = rng.uniform(0.0, 2.0 * np.pi)
        vy, vx = speed * np.sin(angle), speed * np.cos(angle)
        cy = rng.uniform(hy, h - hy)
        cx = rng.uniform(hx, w - hx)
        if (hy <= cy + last * vy <= h - hy) and (hx <= cx + last * vx <= w - hx):
            break
    else:
        raise RuntimeError(
            f"could not place an in-canvas object after {cfg.max_retries} retries"
        )
    texture = None
    color = tuple(rng.uniform(0.0, 1.0, size=3))
    if kind == "textured":
        s = SUPERSAMPLE
        th = int(2 * hy * s) + 1
        tw = int(2 * hx * s) + 1
        texture = rng.uniform(0.0, 1.0, size=(3, th, tw))
    return MovingObject(kind, (cy, cx), (vy, vx), (hy, hx), color, texture)


def generate_group(cfg: SynthConfig, group_id: str = "g0000") -> FrameGroup:
    """Render one fully seed-determined constant-velocity clip."""
    rng = np.random.default_rng([cfg.seed, int(re.sub(r"\D", "", group_id) or 0)])
    h, w = cfg.canvas
    bg_kind = cfg.background_kind or BACKGROUND_KINDS[rng.integers(0, len(BACKGROUND_KINDS))]
    background = _render_background(bg_kind, h, w, rng)
    objects = [_sample_object(cfg, rng) for _ in range(cfg.num_objects)]
    return render_clip(cfg, background, objects, group_id)


# ---------------------------------------------------------------------------
# sampling (index triple -> supervised transition instance)


def sample(group: FrameGroup, rng: np.random.Generator,
           crop: Optional[int] = 64, flip: bool = True) -> TrainingSample:
    """Draw a<b<c uniformly, derive t=(b-a)/(c-a), reverse with prob 0.5,
    then apply one shared random crop and horizontal flip."""
    n = len(group)
    a, b, c = np.sort(rng.choice(n, size=3, replace=False))
    t = (b - a) / (c - a)
    i0, it, i1 = group.frames[a], group.frames[b], group.frames[c]
    if flip and rng.random() < 0.5:
        i0, i1 = i1, i0
        t = 1.0 - t
    if crop is not None:
        _, h, w = i0.shape
        if crop > h or crop > w:
            raise ValueError(f"crop {crop} larger than frame ({h},{w})")
        y = int(rng.integers(0, h - crop + 1))
        x = int(rng.integers(0, w - crop + 1))
        i0 = i0[:, y : y + crop, x : x + crop]
        it = it[:, y : y + crop, x : x + crop]
        i1 = i1[:, y : y + crop, x : x + crop]
    if flip and rng.random() < 0.5:
        i0 = i0[:, :, ::-1].copy()
        it = it[:, :, ::-1].copy()
        i1 = i1[:, :, ::-1].copy()
    return TrainingSample(np.ascontiguousarray(i0), np.ascontiguousarray(i1),
                          np.ascontiguousarray(it), float(t))


def enumerate_t_distribution(n_frames: int) -> dict[float, float]:
    """Exact t-distribution over all index triples with direction reversal."""
    weights: dict[float, float] = {}
    count = 0
    for a in range(n_frames):
        for b in range(a + 1, n_frames):
            for c in range(b + 1, n_frames):
                t = (b - a) / (c - a)
                weights[t] = weights.get(t, 0.0) + 0.5
                weights[1.0 - t] = weights.get(1.0 - t, 0.0) + 0.5
                count += 1
    return {t: wgt / count for t, wgt in sorted(weights.items())}


# ---------------------------------------------------------------------------
# dataset layout: root/<group_id>/NN.ppm plus a groups.txt manifest


def load_group_dir(path) -> FrameGroup:
    path = Path(path)
    files = sorted(p for p in path.iterdir() if p.suffix == ".ppm")
    if len(files) < 3:
        raise ValueError(f"{path}: a group needs >= 3 frames, found {len(files)}")
    frames = [load_ppm(p) for p in files]
    shape = frames[0].shape
    for p, f in zip(files, frames):
        if f.shape != shape:
            raise ValueError(
                f"{p}: frame size {f.shape[1:]} differs from {files[0].name} {shape[1:]}"
            )
    return FrameGroup(frames, path.name)


def resize_shorter_side(img: np.ndarray, target: int = 360) -> np.ndarray:
    """Bilinear resize so min(H,W) == target; used only for ingested real frames."""
    _, h, w = img.shape
    scale = target / min(h, w)
    nh, nw = int(round(h * scale)), int(round(w * scale))
    ys = (np.arange(nh) + 0.5) / scale - 0.5
    xs = (np.arange(nw) + 0.5) / scale - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    fy = np.clip(ys - y0, 0.0, 1.0)[None, :, None]
    fx = np.clip(xs - x0, 0.0, 1.0)[None, None, :]
    top = img[:, y0][:, :, x0] * (1 - fx) + img[:, y0][:, :, x1] * fx
    bot = img[:, y1][:, :, x0] * (1 - fx) + img[:, y1][:, :, x1] * fx
    return (top * (1 - fy) + bot * fy).astype(np.float32)


def write_dataset(root, groups: Sequence[FrameGroup]) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for g in groups:
        gdir = root / g.group_id
        gdir.mkdir(exist_ok=True)
        for i, frame in enumerate(g.frames):
            save_ppm(frame, gdir / f"{i:02d}.ppm")
    manifest = "".join(f"{g.group_id}\n" for g in groups)
    (root / "groups.txt").write_text(manifest)


def load_dataset(root) -> list[FrameGroup]:
    root = Path(root)
    manifest = root / "groups.txt"
    if not manifest.exists():
        raise FileNotFoundError(f"dataset manifest {manifest} not found")
    ids = [line.strip() for line in manifest.read_text().splitlines() if line.strip()]
    return [load_group_dir(root / gid) for gid in ids]
