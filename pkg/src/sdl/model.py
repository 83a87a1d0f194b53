"""The space-decoupled interpolation network.

A U-shaped encoder/decoder whose skip connections pass through SDL units:
features are split into a translatable part P (scaled linearly by the
control parameter t) and a synthesized part Q, then re-concatenated.  A
3-row grid synthesis head refines the decoded multi-scale features into the
output frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import ops
from .tensor import Parameter, Tensor


@dataclass
class ModelConfig:
    num_scales: int = 4
    channels: tuple[int, ...] = (32, 64, 128, 256)
    ratio_s: float = 0.5
    grid_rows: int = 3
    grid_cols: int = 6
    in_channels: int = 6
    out_channels: int = 3
    use_synthesis: bool = True

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if not 0.0 <= self.ratio_s <= 1.0:
            raise ValueError(f"ratio_s must be in [0,1], got {self.ratio_s}")
        if self.num_scales != len(self.channels):
            raise ValueError(
                f"num_scales={self.num_scales} but {len(self.channels)} channel widths given"
            )
        if self.grid_rows < 1:
            raise ValueError("grid_rows must be >= 1")
        if self.grid_cols % 2:
            raise ValueError(f"grid_cols must be even, got {self.grid_cols}")
        if self.use_synthesis and self.num_scales < self.grid_rows + 1:
            raise ValueError(
                f"synthesis needs num_scales >= grid_rows+1 "
                f"({self.num_scales} < {self.grid_rows + 1})"
            )

    def split_channels(self, c: int) -> int:
        """Channel count of the translatable side for a width-c layer."""
        if self.ratio_s == 0.0:
            return 0
        if self.ratio_s == 1.0:
            return c
        return min(max(int(math.floor(self.ratio_s * c)), 1), c - 1)


@dataclass
class FeatureSplit:
    """The decoupled pair: translatable P and non-translatable Q."""

    p: Tensor
    q: Tensor


class ParamStore:
    """Insertion-ordered registry of uniquely named parameters."""

    def __init__(self):
        self._params: dict[str, Parameter] = {}

    def create(self, name: str, data) -> Parameter:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        p = Parameter(name, data)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def names(self) -> list[str]:
        return list(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.zero_grad()

    def count(self) -> int:
        return sum(p.data.size for p in self._params.values())

    def astype(self, dtype) -> None:
        for p in self._params.values():
            p.data = p.data.astype(dtype)
            p.grad = None


class ConvLayer:
    """3x3 conv (+optional per-channel prelu), fan-in normal init, zero bias."""

    def __init__(self, store: ParamStore, name: str, cin: int, cout: int,
                 rng: np.random.Generator, k: int = 3, stride: int = 1,
                 act: bool = True):
        fan_in = cin * k * k
        std = math.sqrt(2.0 / fan_in)
        w = rng.normal(0.0, std, size=(cout, cin, k, k)).astype(np.float32)
        self.weight = store.create(f"{name}.weight", w)
        self.bias = store.create(f"{name}.bias", np.zeros((1, cout, 1, 1), np.float32))
        self.slope: Optional[Parameter] = None
        if act:
            self.slope = store.create(
                f"{name}.slope", np.full((1, cout, 1, 1), 0.25, np.float32)
            )
        self.stride = stride
        self.padding = k // 2

    def __call__(self, x: Tensor) -> Tensor:
        y = ops.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)
        if self.slope is not None:
            y = ops.prelu(y, self.slope)
        return y


class ConvBlock:
    """Two ConvLayers in sequence."""

    def __init__(self, store, name, cin, cmid, cout, rng):
        self.c1 = ConvLayer(store, f"{name}.conv1", cin, cmid, rng)
        self.c2 = ConvLayer(store, f"{name}.conv2", cmid, cout, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.c2(self.c1(x))


class ResBlock:
    """Channel-preserving residual refinement used inside the grid rows."""

    def __init__(self, store, name, c, rng):
        self.c1 = ConvLayer(store, f"{name}.conv1", c, c, rng)
        self.c2 = ConvLayer(store, f"{name}.conv2", c, c, rng, act=False)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.add(x, self.c2(self.c1(x)))


class GridSynthesis:
    """Grid head: rows are resolutions, columns alternate down- then up-links.

    The first half of the columns carries downsampling lateral connections,
    the second half bilinear-upsampling ones (no transposed convs).
    """

    def __init__(self, store, name, in_widths, rows, cols, out_channels, rng):
        self.rows = rows
        self.cols = cols
        self.row_ch = [32 * (r + 1) for r in range(rows)]
        self.in_convs = [
            ConvLayer(store, f"{name}.in{r}", in_widths[r], self.row_ch[r], rng)
            for r in range(rows)
        ]
        self.down_convs: dict[tuple[int, int], ConvLayer] = {}
        self.up_convs: dict[tuple[int, int], ConvLayer] = {}
        self.blocks: dict[tuple[int, int], ResBlock] = {}
        half = cols // 2
        for col in range(cols):
            if col > 0:
                for r in range(rows):
                    self.blocks[(r, col)] = ResBlock(store, f"{name}.r{r}c{col}", self.row_ch[r], rng)
            if col < half:
                for r in range(1, rows):
                    self.down_convs[(r, col)] = ConvLayer(
                        store, f"{name}.down{r}c{col}", self.row_ch[r - 1], self.row_ch[r], rng
                    )
            else:
                for r in range(rows - 1):
                    self.up_convs[(r, col)] = ConvLayer(
                        store, f"{name}.up{r}c{col}", self.row_ch[r + 1], self.row_ch[r], rng
                    )
        self.out_conv = ConvLayer(store, f"{name}.out", self.row_ch[0], out_channels, rng, act=False)

    def __call__(self, features: list[Tensor]) -> Tensor:
        if len(features) != self.rows:
            raise ValueError(
                f"synthesis expects {self.rows} input scales, got {len(features)}"
            )
        half = self.cols // 2
        state: list[Tensor] = [None] * self.rows  # type: ignore[list-item]
        for col in range(self.cols):
            nxt: list[Tensor] = [None] * self.rows  # type: ignore[list-item]
            if col < half:
                for r in range(self.rows):
                    if col == 0:
                        cur = self.in_convs[r](features[r])
                    else:
                        cur = self.blocks[(r, col)](state[r])
                    if r > 0:
                        cur = ops.add(cur, self.down_convs[(r, col)](ops.down2(nxt[r - 1])))
                    nxt[r] = cur
            else:
                for r in range(self.rows - 1, -1, -1):
                    cur = self.blocks[(r, col)](state[r])
                    if r < self.rows - 1:
                        cur = ops.add(cur, self.up_convs[(r, col)](ops.up2(nxt[r + 1])))
                    nxt[r] = cur
            state = nxt
        return self.out_conv(state[0])


def blend(p: Tensor, t: float) -> Tensor:
    """Linear interpolation in the translatable space: t * P."""
    if math.isnan(t):
        raise ValueError("blend: t is NaN")
    if not -1.0 <= t <= 1.0:
        raise ValueError(f"blend: t={t} outside [-1, 1]")
    return ops.scalar_mul(t, p)


class SdlModel:
    """Encoder, per-scale decoupling, t-blended skips, merge decoder, synthesis."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.params = ParamStore()
        rng = np.random.default_rng(seed)
        ch = config.channels
        k = config.num_scales

        self.enc = []
        prev = config.in_channels
        for s in range(k):
            self.enc.append(ConvBlock(self.params, f"enc.{s}", prev, ch[s], ch[s], rng))
            prev = ch[s]

        self.decouple_blocks = [
            ConvBlock(self.params, f"decouple.{s}", ch[s], ch[s], ch[s], rng) for s in range(k)
        ]
        self.bottleneck = ConvBlock(self.params, "bottleneck", ch[-1], ch[-1], ch[-1], rng)
        self.up_convs = [
            ConvLayer(self.params, f"up.{s}", ch[s + 1], ch[s], rng) for s in range(k - 1)
        ]
        self.merge_blocks = [
            ConvBlock(self.params, f"merge.{s}", 2 * ch[s], ch[s], ch[s], rng)
            for s in range(k - 1)
        ]
        if config.use_synthesis:
            widths = [ch[r] for r in range(config.grid_rows)]
            self.synthesis = GridSynthesis(
                self.params, "syn", widths, config.grid_rows, config.grid_cols,
                config.out_channels, rng,
            )
            self.head = None
        else:
            self.synthesis = None
            self.head = ConvLayer(self.params, "head", ch[0], config.out_channels, rng, act=False)

    # -- pieces -----------------------------------------------------------

    def encode(self, i0: Tensor, i1: Tensor) -> list[Tensor]:
        if i0.shape != i1.shape:
            raise ValueError(f"encode: frame shapes differ, {i0.shape} vs {i1.shape}")
        _, c, h, w = i0.shape
        div = 2 ** (self.config.num_scales - 1)
        if h % div or w % div:
            raise ValueError(
                f"encode: spatial extents ({h},{w}) must be divisible by {div}; "
                f"pad the inputs first"
            )
        x = ops.channel_concat(i0, i1)
        feats = []
        for s, block in enumerate(self.enc):
            if s > 0:
                x = ops.down2(x)
            x = block(x)
            feats.append(x)
        return feats

    def decouple(self, features: Tensor, scale: int) -> FeatureSplit:
        c = self.config.channels[scale]
        if features.shape[1] != c:
            raise ValueError(
                f"decouple: scale {scale} expects C={c}, got {features.shape[1]}"
            )
        x = self.decouple_blocks[scale](features)
        cp = self.config.split_channels(c)
        if cp == 0:
            return FeatureSplit(ops.empty_like(x), x)
        if cp == c:
            return FeatureSplit(x, ops.empty_like(x))
        p, q = ops.channel_split(x, cp)
        return FeatureSplit(p, q)

    def sdl_unit(self, features: Tensor, t: float, scale: int) -> Tensor:
        split = self.decouple(features, scale)
        return ops.channel_concat(blend(split.p, t), split.q)

    def merge(self, decoder_features: Tensor, skip_unit_output: Tensor, scale: int) -> Tensor:
        if decoder_features.shape[2:] != skip_unit_output.shape[2:]:
            raise ValueError(
                f"merge: resolution mismatch {decoder_features.shape} vs {skip_unit_output.shape}"
            )
        return self.merge_blocks[scale](ops.channel_concat(decoder_features, skip_unit_output))

    def synthesize(self, features: list[Tensor]) -> Tensor:
        if self.synthesis is None:
            return self.head(features[0])
        return self.synthesis(features)

    # -- full passes ------------------------------------------------------

    def forward(self, i0: Tensor, i1: Tensor, t: float) -> Tensor:
        feats = self.encode(i0, i1)
        k = self.config.num_scales
        dec = [None] * k
        d = self.bottleneck(self.sdl_unit(feats[k - 1], t, k - 1))
        dec[k - 1] = d
        for s in range(k - 2, -1, -1):
            upped = self.up_convs[s](ops.up2(d))
            skip = self.sdl_unit(feats[s], t, s)
            d = self.merge(upped, skip, s)
            dec[s] = d
        rows = self.config.grid_rows if self.synthesis is not None else 1
        return self.synthesize(dec[:rows])

    def infer(self, i0: Tensor, i1: Tensor, t: float) -> Tensor:
        """Forward pass with the output clamped to [0,1] (inference only)."""
        out = self.forward(i0, i1, t)
        return Tensor(np.clip(out.data, 0.0, 1.0))

    def flow_space(self, i0: Tensor, i1: Tensor) -> Tensor:
        """Finest-scale translatable features P (pre-blend), for visualization."""
        feats = self.encode(i0, i1)
        return self.decouple(feats[0], 0).p

    def export_flow_space(self, i0: Tensor, i1: Tensor) -> list[np.ndarray]:
        """Each channel of finest-scale P, min-max normalized to uint8 maps.

        Constant channels map to mid-gray 128.  Returns [] for an s=0 model.
        """
        p = self.flow_space(i0, i1)
        maps = []
        for c in range(p.shape[1]):
            chan = p.data[0, c]
            lo, hi = float(chan.min()), float(chan.max())
            if hi - lo < 1e-12:
                img = np.full(chan.shape, 128, dtype=np.uint8)
            else:
                img = np.round((chan - lo) / (hi - lo) * 255.0).astype(np.uint8)
            maps.append(img)
        return maps

    def astype(self, dtype) -> "SdlModel":
        self.params.astype(dtype)
        return self
