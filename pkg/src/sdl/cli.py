"""Command-line surface: datagen, train, infer, eval, ablate, dump-flowspace,
gradcheck.

Exit codes: 0 success, 1 runtime failure, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import checks, data
from .config import ConfigError, RunConfig, parse_config
from .metrics import psnr, ssim
from .model import SdlModel
from .tensor import Tensor, save_sdlt
from .training import (load_checkpoint, train, validate_multi_t)

USAGE_ERROR = 2
RUNTIME_ERROR = 1


def _collect_overrides(rest: list[str]) -> dict[str, str]:
    overrides = {}
    i = 0
    while i < len(rest):
        key = rest[i]
        if not key.startswith("--") or i + 1 >= len(rest):
            raise ConfigError(f"expected --key value pairs, got {rest[i:]}")
        overrides[key[2:]] = rest[i + 1]
        i += 2
    return overrides


def _load_config(args, rest) -> RunConfig:
    cfg = parse_config(args.config, _collect_overrides(rest))
    if cfg.threads > 0:
        _limit_threads(cfg.threads)
    print("# resolved configuration")
    print(cfg.echo())
    return cfg


def _limit_threads(n: int) -> None:
    try:
        from threadpoolctl import threadpool_limits

        threadpool_limits(limits=n)
    except ImportError:
        print(f"# threadpoolctl unavailable; set OMP_NUM_THREADS={n} before launch",
              file=sys.stderr)


def _load_model(cfg: RunConfig, ckpt: str) -> SdlModel:
    model = SdlModel(cfg.model_config(), seed=cfg.seed)
    load_checkpoint(ckpt, model)
    return model


def _pad_to_multiple(img: np.ndarray, multiple: int) -> tuple[np.ndarray, int, int]:
    _, h, w = img.shape
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph or pw:
        img = np.pad(img, ((0, 0), (0, ph), (0, pw)), mode="edge")
    return img, h, w


def cmd_datagen(args, rest) -> int:
    cfg = _load_config(args, rest)
    groups = []
    for i in range(cfg.num_groups):
        gid = f"g{i:04d}"
        scfg = cfg.synth_config()
        groups.append(data.generate_group(scfg, gid))
    data.write_dataset(args.out, groups)
    print(f"wrote {len(groups)} groups to {args.out}")
    return 0


def cmd_train(args, rest) -> int:
    cfg = _load_config(args, rest)
    groups = data.load_dataset(args.data)
    model = SdlModel(cfg.model_config(), seed=cfg.seed)
    final = train(model, cfg.train_config(), cfg.loss_config(), groups,
                  args.out, resume=args.resume)
    print(f"final checkpoint: {final}")
    return 0


def _parse_t_values(args) -> list[float]:
    if args.steps is not None:
        return [i / (args.steps + 1) for i in range(1, args.steps + 1)]
    if args.t:
        return [float(v) for v in args.t.split(",")]
    raise ConfigError("infer: provide --t t1,t2,... or --steps N")


def cmd_infer(args, rest) -> int:
    cfg = _load_config(args, rest)
    ts = _parse_t_values(args)
    model = _load_model(cfg, args.ckpt)
    div = 2 ** (cfg.num_scales - 1)
    raw0, h, w = _pad_to_multiple(data.load_ppm(args.i0), div)
    raw1, _, _ = _pad_to_multiple(data.load_ppm(args.i1), div)
    i0 = Tensor(raw0[None])
    i1 = Tensor(raw1[None])
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for _ in range(2):  # warm-up
        model.infer(i0, i1, ts[0])
    times = []
    for _ in range(10):
        start = time.perf_counter()
        model.infer(i0, i1, ts[0])
        times.append(time.perf_counter() - start)
    for idx, t in enumerate(ts):
        pred = model.infer(i0, i1, t)
        data.save_ppm(pred.data[0, :, :h, :w], out_dir / f"frame_{idx:03d}_t{t:.4f}.ppm")
    print(f"wrote {len(ts)} frames to {out_dir}")
    print(f"mean forward time: {1000 * float(np.mean(times)):.1f} ms "
          f"(10 runs after 2 warm-ups, forward pass only)")
    return 0


def cmd_eval(args, rest) -> int:
    cfg = _load_config(args, rest)
    model = _load_model(cfg, args.ckpt)
    groups = data.load_dataset(args.data)
    rows = []
    times = []
    for g in groups:
        n = len(g)
        i0 = Tensor(g.frames[0][None])
        i1 = Tensor(g.frames[n - 1][None])
        for b in range(1, n - 1):
            t = b / (n - 1)
            start = time.perf_counter()
            pred = model.infer(i0, i1, t)
            times.append(time.perf_counter() - start)
            rows.append((g.group_id, b, t,
                         psnr(pred.data[0], g.frames[b]),
                         ssim(pred.data[0], g.frames[b])))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    finite = [r[3] for r in rows if np.isfinite(r[3])]
    mean_psnr = float(np.mean(finite)) if finite else float("inf")
    mean_ssim = float(np.mean([r[4] for r in rows]))
    with open(out, "w") as f:
        f.write("# timing covers the forward pass only (no image encode/decode)\n")
        f.write("group,frame,t,psnr,ssim\n")
        for gid, b, t, p, s in rows:
            f.write(f"{gid},{b},{t:.6f},{p:.4f},{s:.6f}\n")
        f.write(f"aggregate,,,{mean_psnr:.4f},{mean_ssim:.6f}\n")
    print(f"samples: {len(rows)}  mean PSNR: {mean_psnr:.3f} dB  "
          f"mean SSIM: {mean_ssim:.4f}  mean runtime: {1000 * float(np.mean(times)):.1f} ms")
    print(f"per-sample results: {out}")
    return 0


def cmd_ablate(args, rest) -> int:
    cfg = _load_config(args, rest)
    s_values = [float(v) for v in args.s_list.split(",")]
    groups = data.load_dataset(args.data)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    results = []
    from .training import split_train_val

    for s in s_values:
        mcfg = cfg.model_config()
        mcfg.ratio_s = s
        model = SdlModel(mcfg, seed=cfg.seed)
        run_dir = out_dir / f"s_{s:g}"
        train(model, cfg.train_config(), cfg.loss_config(), groups, run_dir, quiet=True)
        _, val_groups = split_train_val(groups, cfg.val_fraction)
        val_psnr = validate_multi_t(model, val_groups, cfg.crop)
        val_ssims = []
        for g in val_groups[:4]:
            n = len(g)
            i0 = Tensor(g.frames[0][None, :, : cfg.crop, : cfg.crop])
            i1 = Tensor(g.frames[n - 1][None, :, : cfg.crop, : cfg.crop])
            for b in range(1, n - 1):
                pred = model.infer(i0, i1, b / (n - 1))
                val_ssims.append(ssim(pred.data[0], g.frames[b][:, : cfg.crop, : cfg.crop]))
        results.append((s, val_psnr, float(np.mean(val_ssims))))
        print(f"s={s:g}: multi-t PSNR {val_psnr:.3f} dB")
    with open(out_dir / "ablation.csv", "w") as f:
        f.write("s,psnr,ssim\n")
        for s, p, sm in results:
            f.write(f"{s:g},{p:.4f},{sm:.6f}\n")
    print(f"ablation table: {out_dir / 'ablation.csv'}")
    return 0


def cmd_dump_flowspace(args, rest) -> int:
    cfg = _load_config(args, rest)
    model = _load_model(cfg, args.ckpt)
    div = 2 ** (cfg.num_scales - 1)
    raw0, _, _ = _pad_to_multiple(data.load_ppm(args.i0), div)
    raw1, _, _ = _pad_to_multiple(data.load_ppm(args.i1), div)
    i0, i1 = Tensor(raw0[None]), Tensor(raw1[None])
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    maps = model.export_flow_space(i0, i1)
    if not maps:
        print("warning: ratio_s=0 model has no translatable flow space; nothing to dump",
              file=sys.stderr)
        return 0
    for i, m in enumerate(maps):
        data.save_pgm(m, out_dir / f"flow_{i:03d}.pgm")
    save_sdlt(model.flow_space(i0, i1), out_dir / "flow_space.sdlt")
    print(f"wrote {len(maps)} flow maps and flow_space.sdlt to {out_dir}")
    return 0


def cmd_gradcheck(args, rest) -> int:
    _load_config(args, rest)
    results = checks.run_all(dtype=np.float64, threshold=1e-4)
    ok = True
    for r in results:
        print(r.describe())
        ok = ok and r.passed
    return 0 if ok else RUNTIME_ERROR


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sdl",
                                     description="space-decoupled frame interpolation")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="key=value config file")

    p = sub.add_parser("datagen", help="render a synthetic dataset")
    common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_datagen)

    p = sub.add_parser("train", help="train a model")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("infer", help="interpolate frames between two images")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--i0", required=True)
    p.add_argument("--i1", required=True)
    p.add_argument("--t", default=None, help="comma-separated t values")
    p.add_argument("--steps", type=int, default=None,
                   help="N uniform steps t=1/(N+1)..N/(N+1)")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="per-sample CSV path")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="train one model per s and tabulate PSNR")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--s-list", required=True, help="comma-separated s values")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("dump-flowspace", help="visualize the translatable flow space")
    common(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--i0", required=True)
    p.add_argument("--i1", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_dump_flowspace)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    common(p)
    p.set_defaults(fn=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args, rest = parser.parse_known_args(argv)
    try:
        return args.fn(args, rest)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except FileNotFoundError as exc:
        print(f"missing input: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except Exception as exc:  # runtime failure contract
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
