"""Dense rank-4 tensors with a recording tape for reverse-mode differentiation.

Every value in this package is a (N, C, H, W) float array.  Operations in
:mod:`sdl.ops` record an entry on the active :class:`Tape`; :func:`backward`
replays the tape in reverse to populate gradients.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

SDLT_MAGIC = b"SDLT"
SDLT_VERSION = 1

_FLOAT_DTYPES = (np.float32, np.float64)


class Tensor:
    """A rank-4 array with an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        if arr.ndim != 4:
            raise ValueError(f"Tensor must be rank 4 (N,C,H,W), got shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape  # type: ignore[return-value]

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if g.shape != self.data.shape:
            raise ValueError(
                f"gradient shape {g.shape} does not match tensor shape {self.data.shape}"
            )
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() requires a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """A named, trainable tensor; names are path-like and unique per model."""

    __slots__ = ("name",)

    def __init__(self, name: str, data):
        super().__init__(data, requires_grad=True)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


@dataclass
class TapeEntry:
    """One recorded op: inputs, output, and its vector-Jacobian rule.

    ``backward(grad_out, need)`` returns one gradient array (or None) per
    input; entries where ``need`` is False may be skipped by the rule.
    """

    name: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray, tuple[bool, ...]], Sequence[Optional[np.ndarray]]]


@dataclass
class Tape:
    """Ordered record of operations; inputs always precede their consumers."""

    entries: list[TapeEntry] = field(default_factory=list)

    def record(self, name, inputs, output, backward_fn) -> None:
        self.entries.append(TapeEntry(name, tuple(inputs), output, backward_fn))

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPE_STACK.pop()

    def __len__(self) -> int:
        return len(self.entries)


_TAPE_STACK: list[Tape] = []


def active_tape() -> Optional[Tape]:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate ``grad`` on every requires_grad tensor reachable from ``loss``.

    Gradients accumulate (+=) across fan-out and across repeated calls;
    callers zero them between optimization steps.
    """
    if loss.data.shape != (1, 1, 1, 1):
        raise ValueError(f"backward requires a scalar (1,1,1,1) loss, got {loss.shape}")
    if not tape.entries:
        raise ValueError("backward on an empty tape")

    # A tensor needs a gradient if it is trainable or feeds one that is.
    needs: dict[int, bool] = {}
    for entry in tape.entries:
        out_needs = any(
            inp.requires_grad or needs.get(id(inp), False) for inp in entry.inputs
        )
        needs[id(entry.output)] = out_needs

    grads: dict[int, np.ndarray] = {id(loss): np.ones((1, 1, 1, 1), dtype=loss.dtype)}
    for entry in reversed(tape.entries):
        gout = grads.pop(id(entry.output), None)
        if gout is None:
            continue
        need = tuple(
            inp.requires_grad or needs.get(id(inp), False) for inp in entry.inputs
        )
        if not any(need):
            continue
        gins = entry.backward(gout, need)
        for inp, gin, n in zip(entry.inputs, gins, need):
            if not n or gin is None:
                continue
            key = id(inp)
            if key in grads:
                grads[key] += gin
            else:
                grads[key] = np.array(gin, dtype=inp.dtype, copy=True)
            if not np.all(np.isfinite(gin)):
                raise FloatingPointError(f"non-finite gradient produced by op {entry.name!r}")

    for entry in tape.entries:
        for inp in entry.inputs:
            if inp.requires_grad and id(inp) in grads:
                inp.accumulate_grad(grads.pop(id(inp)))


def save_sdlt(tensor: Tensor, path) -> None:
    """Write the raw SDLT dump: magic, version, four u32 extents, f32 LE payload."""
    with open(path, "wb") as f:
        f.write(SDLT_MAGIC)
        f.write(struct.pack("<I", SDLT_VERSION))
        f.write(struct.pack("<4I", *tensor.shape))
        f.write(np.ascontiguousarray(tensor.data, dtype="<f4").tobytes())


def load_sdlt(path) -> Tensor:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != SDLT_MAGIC:
        raise ValueError(f"not an SDLT file: bad magic {raw[:4]!r}")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != SDLT_VERSION:
        raise ValueError(f"unsupported SDLT version {version}")
    shape = struct.unpack_from("<4I", raw, 8)
    count = int(np.prod(shape))
    payload = raw[24:]
    if len(payload) != 4 * count:
        raise ValueError(
            f"truncated SDLT payload at byte {24 + len(payload)}: "
            f"expected {4 * count} payload bytes, got {len(payload)}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(shape)
    return Tensor(data.astype(np.float32))
