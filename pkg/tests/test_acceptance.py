"""Acceptance gate: the eight release criteria, one pass/fail line each.

Criteria 4 and 5 need multi-hour training runs and only execute when
SDL_NIGHTLY=1 is set; criterion 3 trains for ~20 minutes and is marked slow.
"""

import os

import numpy as np
import pytest
import scipy.stats

from sdl import data
from sdl.checks import run_model_checks, run_negative_control, run_op_checks
from sdl.data import (FrameGroup, MovingObject, SynthConfig, generate_group,
                      load_ppm, render_clip, sample, save_ppm,
                      enumerate_t_distribution)
from sdl.losses import LossConfig, charbonnier
from sdl.metrics import psnr, ssim
from sdl.model import ModelConfig, SdlModel, blend
from sdl.tensor import Tensor
from sdl.training import (TrainConfig, load_checkpoint, save_checkpoint,
                          train, validate_midframe, validate_multi_t)

nightly = pytest.mark.skipif(
    os.environ.get("SDL_NIGHTLY") != "1",
    reason="multi-hour training criterion; set SDL_NIGHTLY=1 to run",
)


def report(num: int, name: str, ok: bool, detail: str = "") -> None:
    verdict = "PASS" if ok else "FAIL"
    suffix = f" ({detail})" if detail else ""
    print(f"[{verdict}] criterion {num}: {name}{suffix}")


# ---------------------------------------------------------------------------


def test_criterion_1_gradient_integrity():
    """Every op and the full 16x16 model agree with finite differences."""
    results = run_op_checks(dtype=np.float64, threshold=1e-4)
    results.append(run_negative_control(dtype=np.float64))
    results.extend(run_model_checks())
    ok = all(r.passed for r in results)
    worst = max(r.error for r in results if not r.want_failure)
    report(1, "gradient integrity", ok, f"worst op/model err {worst:.2e}")
    for r in results:
        assert r.passed, r.describe()


def test_criterion_2_sdl_unit_algebra():
    """Channel conservation, blend linearity, s=0 invariance, s=1 zero-skip,
    exhaustively over C in {2,...,64} x s in {0, 0.1, ..., 1}."""
    rng = np.random.default_rng(0)
    failures = []
    for c in (2, 4, 8, 16, 32, 64):
        x = Tensor(rng.uniform(-1, 1, (1, c, 8, 8)).astype(np.float32))
        for s10 in range(11):
            s = s10 / 10.0
            cfg = ModelConfig(num_scales=1, channels=(c,), ratio_s=s,
                              use_synthesis=False)
            model = SdlModel(cfg, seed=1)
            tag = f"C={c} s={s:g}"

            unit = model.sdl_unit(x, 0.4, 0)
            if unit.shape != x.shape:
                failures.append(f"{tag}: channel conservation")

            split = model.decouple(x, 0)
            if split.p.shape[1] + split.q.shape[1] != c:
                failures.append(f"{tag}: split widths")
            if split.p.shape[1]:
                lhs = blend(split.p, 0.6).data
                rhs = 2.0 * blend(split.p, 0.3).data
                if not np.array_equal(lhs, rhs):
                    failures.append(f"{tag}: blend linearity")

            if s == 0.0:
                a = model.sdl_unit(x, 0.2, 0)
                b = model.sdl_unit(x, 0.9, 0)
                if not np.array_equal(a.data, b.data):
                    failures.append(f"{tag}: t-invariance")
            if s == 1.0:
                z = model.sdl_unit(x, 0.0, 0)
                if np.any(z.data):
                    failures.append(f"{tag}: zero-skip at t=0")
    report(2, "sdl-unit algebra (66 configurations)", not failures,
           "; ".join(failures[:3]))
    assert failures == []


@pytest.mark.slow
def test_criterion_3_overfit_single_group(tmp_path):
    """Default model overfits one 12-frame 64x64 clip to >30 dB in 2K iters."""
    group = generate_group(SynthConfig(canvas=(64, 64), num_objects=2, seed=11),
                           "g0000")
    model = SdlModel(ModelConfig(), seed=0)
    # overfit recipe frozen after calibration: the best found within the
    # 2K-iteration budget is 32px crops in batches of 4 (same cost per
    # iteration as one full frame, 4x less gradient noise), no flip
    # augmentation, reconstruction loss only, and the largest stable
    # learning rate (2e-3 diverges)
    cfg = TrainConfig(batch_size=4, total_iters=2000, checkpoint_every=2000,
                      base_lr=1e-3, log_every=500, crop=32, seed=0, flip=False)
    train(model, cfg, LossConfig(beta=0.0), [group], tmp_path / "overfit",
          quiet=True)
    mid_psnr, _ = validate_midframe(model, [group], crop=64)
    ok = mid_psnr > 30.0
    report(3, "single-group overfit", ok, f"mid-frame PSNR {mid_psnr:.2f} dB")
    assert ok, f"mid-frame PSNR {mid_psnr:.2f} dB <= 30 dB"


def _held_out_clip(velocity, seed):
    """Single bright rectangle on a dark flat background, 12 frames."""
    scfg = SynthConfig(canvas=(64, 64), frames_per_group=12, seed=seed)
    s = data.SUPERSAMPLE
    bg = np.full((3, 64 * s, 64 * s), 0.1)
    last = scfg.frames_per_group - 1
    start = (32.0 - last * velocity[0] / 2.0, 32.0 - last * velocity[1] / 2.0)
    obj = MovingObject("rectangle", start, velocity, (5.0, 5.0),
                       (0.95, 0.9, 0.85))
    return render_clip(scfg, bg, [obj], f"held{seed}"), obj


def _centroid(frame, background):
    # pixel i covers [i, i+1), so its center sits at i + 0.5
    mass = np.abs(frame - background).sum(axis=0)
    total = mass.sum()
    ys = (mass.sum(axis=1) * (np.arange(mass.shape[0]) + 0.5)).sum() / total
    xs = (mass.sum(axis=0) * (np.arange(mass.shape[1]) + 0.5)).sum() / total
    return np.array([ys, xs])


@nightly
@pytest.mark.nightly
def test_criterion_4_continuity(tmp_path):
    """After a 20K-iteration run, predicted centroids are monotone in t and
    within 1.5 px of the analytic constant-velocity position."""
    groups = [generate_group(SynthConfig(canvas=(64, 64), seed=0), f"g{i:04d}")
              for i in range(20)]
    model = SdlModel(ModelConfig(), seed=0)
    cfg = TrainConfig(batch_size=1, total_iters=20000, checkpoint_every=5000,
                      log_every=500, crop=64, seed=0)
    train(model, cfg, LossConfig(), groups, tmp_path / "run", quiet=True)

    failures = []
    for seed, velocity in ((101, (0.6, 1.4)), (102, (-1.0, 0.8))):
        clip, obj = _held_out_clip(velocity, seed)
        bg_frame = data.render_frame(
            np.full((3, 64 * data.SUPERSAMPLE, 64 * data.SUPERSAMPLE), 0.1),
            [], 0, (64, 64))
        i0 = Tensor(clip.frames[0][None])
        i1 = Tensor(clip.frames[11][None])
        vdir = np.array(velocity) / np.hypot(*velocity)
        prev_proj = None
        for k in range(1, 11):
            t = k / 11.0
            pred = model.infer(i0, i1, t)
            cen = _centroid(pred.data[0], bg_frame)
            analytic = np.array(obj.center) + k * np.array(velocity)
            err = float(np.hypot(*(cen - analytic)))
            if err > 1.5:
                failures.append(f"clip {seed} t={t:.2f}: {err:.2f} px off")
            proj = float(cen @ vdir)
            if prev_proj is not None and proj <= prev_proj:
                failures.append(f"clip {seed} t={t:.2f}: not monotone")
            prev_proj = proj
    report(4, "continuity on held-out clips", not failures,
           "; ".join(failures[:3]))
    assert failures == []


@nightly
@pytest.mark.nightly
def test_criterion_5_ablation_trend(tmp_path):
    """Under an equal 10K-iteration budget, s=0.5 beats both s=0 and s=1."""
    groups = [generate_group(SynthConfig(canvas=(64, 64), seed=1), f"g{i:04d}")
              for i in range(20)]
    val = groups[-2:]
    scores = {}
    for s in (0.0, 0.5, 1.0):
        model = SdlModel(ModelConfig(ratio_s=s), seed=0)
        cfg = TrainConfig(batch_size=1, total_iters=10000, checkpoint_every=10000,
                          log_every=500, crop=64, seed=0)
        train(model, cfg, LossConfig(), groups[:-2], tmp_path / f"s{s:g}",
              quiet=True)
        scores[s] = validate_multi_t(model, val, crop=64)
    ok = scores[0.5] > scores[1.0] and scores[0.5] > scores[0.0]
    detail = " ".join(f"s={s:g}:{p:.2f}dB" for s, p in scores.items())
    report(5, "decoupling-ratio ablation trend", ok, detail)
    assert ok, detail


def test_criterion_6_sampler_distribution():
    """Empirical t over 1e5 draws matches triple enumeration (chi-square)."""
    frame = np.zeros((3, 4, 4), np.float32)
    group = FrameGroup([frame.copy() for _ in range(12)], "g")
    rng = np.random.default_rng(0)
    n = 100_000
    counts: dict[float, int] = {}
    boundary_hits = 0
    for _ in range(n):
        t = sample(group, rng, crop=None).t
        if t in (0.0, 1.0):
            boundary_hits += 1
        counts[round(t, 9)] = counts.get(round(t, 9), 0) + 1
    expected: dict[float, float] = {}
    for t, w in enumerate_t_distribution(12).items():
        expected[round(t, 9)] = expected.get(round(t, 9), 0.0) + w
    assert set(counts) <= set(expected), "sampler emitted an unexpected t"
    obs = np.array([counts.get(k, 0) for k in expected], float)
    exp = np.array([w * n for w in expected.values()])
    _, p_value = scipy.stats.chisquare(obs, exp)
    ok = p_value > 0.01 and boundary_hits == 0
    report(6, "sampler t-distribution", ok,
           f"chi-square p={p_value:.3f}, boundary draws {boundary_hits}")
    assert boundary_hits == 0
    assert p_value > 0.01


def test_criterion_7_metric_closed_forms():
    rng = np.random.default_rng(0)
    a = rng.uniform(0, 1, (3, 16, 16)).astype(np.float32)
    b = np.zeros((3, 16, 16))
    c = np.full((3, 16, 16), 10.0 / 255.0)
    p = psnr(b, c)
    x = Tensor(rng.uniform(0, 1, (1, 3, 16, 16)).astype(np.float32))
    charb = charbonnier(x, x, 1e-6).item()
    s = ssim(a, a)

    psnr_ok = abs(p - 28.1308) < 1e-3
    ssim_ok = s == 1.0
    charb_ok = charb == float(np.float32(1e-6))
    ok = psnr_ok and ssim_ok and charb_ok
    report(7, "metric closed forms", ok,
           f"psnr {p:.4f}, ssim {s}, charbonnier {charb:.3e}")
    assert psnr_ok and ssim_ok and charb_ok


def test_criterion_8_persistence_and_determinism(tmp_path):
    # checkpoint round-trip is byte-exact
    cfg = ModelConfig(num_scales=2, channels=(4, 8), use_synthesis=False)
    model = SdlModel(cfg, seed=0)
    p1 = tmp_path / "a.sdlc"
    p2 = tmp_path / "b.sdlc"
    save_checkpoint(p1, model, None, 42)
    clone = SdlModel(cfg, seed=9)
    load_checkpoint(p1, clone)
    save_checkpoint(p2, clone, None, 42)
    ckpt_ok = p1.read_bytes() == p2.read_bytes()

    # two seeded runs produce identical loss logs over 100 iterations
    scfg = SynthConfig(canvas=(16, 16), num_objects=1, seed=2, frames_per_group=4)
    groups = [generate_group(scfg, f"g{i:04d}") for i in range(2)]
    tcfg = TrainConfig(batch_size=2, total_iters=100, decay_every=30,
                       checkpoint_every=100, log_every=10, crop=12, seed=0)
    logs = []
    for run in ("r1", "r2"):
        m = SdlModel(cfg, seed=3)
        train(m, tcfg, LossConfig(beta=0.0), groups, tmp_path / run, quiet=True)
        logs.append((tmp_path / run / "train_log.csv").read_text())
    log_ok = logs[0] == logs[1] and logs[0].count("\n") == 11

    # P6 round-trip is byte-identical
    rng = np.random.default_rng(5)
    img = rng.uniform(0, 1, (3, 9, 7)).astype(np.float32)
    f1 = tmp_path / "a.ppm"
    f2 = tmp_path / "b.ppm"
    save_ppm(img, f1)
    save_ppm(load_ppm(f1), f2)
    ppm_ok = f1.read_bytes() == f2.read_bytes()

    ok = ckpt_ok and log_ok and ppm_ok
    report(8, "persistence and determinism", ok,
           f"ckpt {ckpt_ok}, log {log_ok}, ppm {ppm_ok}")
    assert ckpt_ok and log_ok and ppm_ok
