"""Gradient-integrity suite: every op plus the full model vs finite differences.

Used by the ``sdl gradcheck`` command and by the acceptance tests.  The
negative control corrupts a backward rule on purpose and must be detected.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .gradcheck import gradcheck
from .losses import charbonnier
from .model import ModelConfig, SdlModel
from .tensor import Parameter, Tape, Tensor, active_tape, backward


@dataclass
class CheckResult:
    name: str
    error: float
    threshold: float
    want_failure: bool = False  # negative controls must EXCEED the threshold

    @property
    def passed(self) -> bool:
        if self.want_failure:
            return self.error > self.threshold
        return self.error < self.threshold

    def describe(self) -> str:
        rel = ">" if self.want_failure else "<"
        verdict = "ok" if self.passed else "FAIL"
        return f"{self.name:28s} err={self.error:.3e} (want {rel} {self.threshold:g}) {verdict}"


def _rand(rng, shape, dtype, requires_grad=True, lo=-1.0, hi=1.0):
    return Tensor(rng.uniform(lo, hi, size=shape).astype(dtype), requires_grad=requires_grad)


def _corrupted_scalar_mul(x: Tensor, s: float) -> Tensor:
    # Forward is s*x but the recorded rule returns 1.5x the true gradient.
    out = Tensor(x.data * x.dtype.type(s))

    def bwd(gout, need):
        return (gout * x.dtype.type(1.5 * s) if need[0] else None,)

    tape = active_tape()
    if tape is not None:
        tape.record("corrupted_scalar_mul", (x,), out, bwd)
    return out


def run_op_checks(dtype=np.float64, threshold: float = 1e-4,
                  seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []

    x = _rand(rng, (2, 4, 8, 8), dtype)
    w = _rand(rng, (6, 4, 3, 3), dtype, lo=-0.5, hi=0.5)
    b = _rand(rng, (1, 6, 1, 1), dtype, lo=-0.1, hi=0.1)
    err = gradcheck(lambda: ops.reduce_sum(ops.conv2d(x, w, b, stride=1, padding=1)),
                    [x, w, b], seed=seed)
    results.append(CheckResult("conv2d", err, threshold))

    xs = _rand(rng, (1, 3, 8, 8), dtype)
    w2 = _rand(rng, (5, 3, 3, 3), dtype)
    b2 = _rand(rng, (1, 5, 1, 1), dtype)
    err = gradcheck(lambda: ops.reduce_sum(ops.conv2d(xs, w2, b2, stride=2, padding=1)),
                    [xs, w2, b2], seed=seed)
    results.append(CheckResult("conv2d.stride2", err, threshold))

    xd = _rand(rng, (1, 2, 6, 6), dtype)
    results.append(CheckResult(
        "down2", gradcheck(lambda: ops.reduce_sum(ops.down2(xd)), [xd], seed=seed), threshold))
    results.append(CheckResult(
        "up2", gradcheck(lambda: ops.reduce_sum(ops.up2(xd)), [xd], seed=seed), threshold))

    a = _rand(rng, (1, 2, 4, 4), dtype)
    c = _rand(rng, (1, 2, 4, 4), dtype)
    results.append(CheckResult(
        "add", gradcheck(lambda: ops.reduce_sum(ops.add(a, c)), [a, c], seed=seed), threshold))
    results.append(CheckResult(
        "mul", gradcheck(lambda: ops.reduce_mean(ops.mul(a, c)), [a, c], seed=seed), threshold))
    results.append(CheckResult(
        "scalar_mul",
        gradcheck(lambda: ops.reduce_sum(ops.scalar_mul(0.37, a)), [a], seed=seed), threshold))

    # activations probed away from their kinks
    raw = rng.uniform(-1.0, 1.0, (1, 2, 4, 4))
    xr = Tensor(np.where(np.abs(raw) < 0.05, 0.5, raw).astype(dtype), requires_grad=True)
    slope = Parameter("check.slope", np.full((1, 2, 1, 1), 0.25, dtype))
    results.append(CheckResult(
        "prelu", gradcheck(lambda: ops.reduce_sum(ops.prelu(xr, slope)), [xr, slope], seed=seed),
        threshold))
    results.append(CheckResult(
        "relu", gradcheck(lambda: ops.reduce_sum(ops.relu(xr)), [xr], seed=seed), threshold))

    eps = 1e-6
    mag = rng.uniform(10 * eps, 1.0, (1, 2, 4, 4))
    sign = rng.choice([-1.0, 1.0], (1, 2, 4, 4))
    xc = Tensor((mag * sign).astype(dtype), requires_grad=True)
    results.append(CheckResult(
        "charb_atom",
        gradcheck(lambda: ops.reduce_mean(ops.charb_atom(xc, eps)), [xc], seed=seed), threshold))

    def split_concat_loss():
        joined = ops.channel_concat(a, c)
        p, q = ops.channel_split(joined, 2)
        return ops.reduce_sum(ops.add(ops.scalar_mul(2.0, p), q))

    results.append(CheckResult(
        "split_concat", gradcheck(split_concat_loss, [a, c], seed=seed), threshold))

    gtc = _rand(rng, (1, 3, 16, 16), dtype, requires_grad=False)
    xl = _rand(rng, (1, 3, 16, 16), dtype)
    results.append(CheckResult(
        "charbonnier_loss", gradcheck(lambda: charbonnier(xl, gtc, eps), [xl], seed=seed),
        threshold))

    return results


def run_negative_control(dtype=np.float64, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    x = _rand(rng, (1, 2, 4, 4), dtype)
    err = gradcheck(lambda: ops.reduce_sum(_corrupted_scalar_mul(x, 0.5)), [x], seed=seed)
    return CheckResult("negative_control", err, 1e-1, want_failure=True)


def run_model_checks(seed: int = 0, coords_per_param: int = 3,
                     config: ModelConfig | None = None,
                     h: float = 1e-6) -> list[CheckResult]:
    """Full forward + Charbonnier loss on 16x16 inputs, every parameter probed.

    The finite-difference oracle always runs in 64-bit with a step small
    enough that prelu kink crossings are negligible; analytic gradients are
    checked against it both in 64-bit (tight) and 32-bit (looser) mode.
    """
    config = config or ModelConfig()
    model64 = SdlModel(config, seed=seed).astype(np.float64)
    model32 = SdlModel(config, seed=seed)  # identical init values, float32
    rng = np.random.default_rng(seed + 10)
    frames = [rng.uniform(0, 1, (1, 3, 16, 16)) for _ in range(3)]
    t = 0.4
    eps = 1e-6

    analytic: dict[str, dict[str, np.ndarray]] = {}
    for tag, model in (("64bit", model64), ("32bit", model32)):
        dt = np.float64 if tag == "64bit" else np.float32
        i0, i1, gt = (Tensor(f.astype(dt)) for f in frames)
        model.params.zero_grad()
        with Tape() as tape:
            loss = charbonnier(model.forward(i0, i1, t), gt, eps)
        backward(loss, tape)
        analytic[tag] = {name: np.array(p.grad, np.float64)
                         for name, p in model.params.items()}

    i0, i1, gt = (Tensor(f) for f in frames)

    def loss64() -> float:
        return charbonnier(model64.forward(i0, i1, t), gt, eps).item()

    probe_rng = np.random.default_rng(seed + 20)
    err = {"64bit": 0.0, "32bit": 0.0}
    for name, p in model64.params.items():
        flat = p.data.reshape(-1)
        n = flat.size
        idx = (np.arange(n) if n <= coords_per_param
               else probe_rng.choice(n, size=coords_per_param, replace=False))
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            fp = loss64()
            flat[i] = orig - h
            fm = loss64()
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * h)
            for tag in ("64bit", "32bit"):
                a = float(analytic[tag][name].reshape(-1)[i])
                rel = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
                err[tag] = max(err[tag], rel)
    return [CheckResult("full_model_64bit", err["64bit"], 1e-4),
            CheckResult("full_model_32bit", err["32bit"], 1e-3)]


def run_all(dtype=np.float64, threshold: float = 1e-4,
            model_coords: int = 3) -> list[CheckResult]:
    results = run_op_checks(dtype=dtype, threshold=threshold)
    results.append(run_negative_control(dtype=dtype))
    results.extend(run_model_checks(coords_per_param=model_coords))
    return results
