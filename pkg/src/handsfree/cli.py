"""Command-line interface.

Subcommands cover the batch pipeline: synth, enhance, baseline, eval,
schedule, train-toy, bench, plus init-weights to materialize a random
model file. Config precedence everywhere: explicit CLI flag > config-file
value > built-in default. Exit codes: 0 success, 2 configuration error,
3 data error, 4 numeric divergence. With --json, errors are emitted as a
JSON object on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from handsfree.adaptive import (
    FdkfConfig,
    compensate_delay,
    fdkf_cancel,
    gcc_phat_delay,
    nlms_cancel,
)
from handsfree.diffusion import NoiseSchedule, SamplerConfig, sigma_at
from handsfree.dsp import Waveform, read_wav, write_wav
from handsfree.errors import ConfigError, DataError, DivergenceError, HandsfreeError
from handsfree.losses import ToyPipelineConfig, LossConfig, save_run_report, toy_pipeline_train
from handsfree.metrics import (
    evaluate_scene,
    merge_external_metrics,
    rank_methods,
    write_metrics_csv,
    write_metrics_json,
)
from handsfree.pipeline import DiffusionEnhancer
from handsfree.scenes import (
    NonlinearitySpec,
    SceneRanges,
    generate_dataset,
    make_synthetic_pool,
    read_manifest,
)
from handsfree.unet import BASE_CHANNELS, SMALL_CHANNELS, init_model_container
from handsfree.weights import load_weights, save_weights

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGENCE = 4


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as f:
            return json.load(f)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc


def _pool_from_config(cfg: dict, key: str, out_dir: Path, seed: int) -> list:
    spec = cfg.get(key)
    if spec is None:
        raise ConfigError(f"synth config needs a {key!r} entry (paths or synthetic recipe)")
    if isinstance(spec, list):
        missing = [p for p in spec if not os.path.exists(p)]
        if missing:
            raise DataError(f"{key}: missing files {missing}")
        return spec
    if isinstance(spec, dict) and "synthetic" in spec:
        recipe = spec["synthetic"]
        kind = recipe.get("kind", "speech" if key == "speech_pool" else "pink")
        return make_synthetic_pool(
            out_dir / f"pool_{key}",
            int(recipe.get("n", 8)),
            kind,
            float(recipe.get("duration_s", 8.0)),
            seed + (17 if key == "noise_pool" else 0),
        )
    raise ConfigError(f"{key} must be a list of paths or {{'synthetic': {{...}}}}")


def cmd_synth(args) -> int:
    cfg = _load_config(args.config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rcfg = cfg.get("ranges", {})
    nl = (
        NonlinearitySpec.from_json(cfg["nonlinearity"])
        if "nonlinearity" in cfg
        else NonlinearitySpec()
    )
    ranges = SceneRanges(
        ser_db=tuple(rcfg.get("ser_db", (-10.0, 10.0))),
        snr_db=tuple(rcfg.get("snr_db", (0.0, 30.0))),
        rt60_s=tuple(rcfg.get("rt60_s", (0.2, 0.7))),
        duration_s=float(rcfg.get("duration_s", 30.0)),
        nonlinearity=nl,
    )
    speech = _pool_from_config(cfg, "speech_pool", out_dir, args.seed)
    noise = _pool_from_config(cfg, "noise_pool", out_dir, args.seed)
    manifest = generate_dataset(
        args.scenes, ranges, out_dir, args.seed, speech, noise, jobs=args.jobs
    )
    print(f"wrote {args.scenes} scenes to {manifest}")
    return 0


def _scene_paths(manifest_path, rec) -> dict:
    base = Path(manifest_path).parent
    return {k: base / v for k, v in rec["paths"].items()}


def cmd_enhance(args) -> int:
    records = read_manifest(args.manifest)
    if not records:
        raise DataError(f"empty manifest {args.manifest}")
    container = load_weights(args.weights)
    enhancer = DiffusionEnhancer(container)
    sched = NoiseSchedule(args.sigma_min, args.sigma_max, args.t_max)
    sampler = SamplerConfig(n_steps=args.steps, epsilon=args.epsilon, seed=args.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    def run(idx_rec):
        idx, rec = idx_rec
        paths = _scene_paths(args.manifest, rec)
        mic = read_wav(paths["mic"])
        far = read_wav(paths["farend"])
        rng = np.random.default_rng([args.seed, idx])
        res = enhancer.enhance(mic, far, sampler, sched, rng, mode=args.mode)
        out_path = out_dir / f"{rec['id']}.wav"
        write_wav(out_path, res.enhanced)
        return rec["id"], str(out_path)

    with ThreadPoolExecutor(max_workers=args.jobs) as pool:
        results = list(pool.map(run, enumerate(records)))
    run_manifest = {
        "mode": args.mode,
        "sampler": sampler.to_json(),
        "schedule": sched.to_json(),
        "weights": str(args.weights),
        "outputs": {sid: p for sid, p in sorted(results)},
    }
    with open(out_dir / "run_manifest.json", "w") as f:
        json.dump(run_manifest, f, indent=2, sort_keys=True)
    print(f"enhanced {len(results)} scenes -> {out_dir}")
    return 0


def cmd_baseline(args) -> int:
    records = read_manifest(args.manifest)
    if not records:
        raise DataError(f"empty manifest {args.manifest}")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    def run(rec):
        paths = _scene_paths(args.manifest, rec)
        mic = read_wav(paths["mic"])
        far = read_wav(paths["farend"])
        if args.align:
            lag = gcc_phat_delay(mic, far, max_lag=args.max_lag)
            mic, far = compensate_delay(mic, far, lag)
        if args.method == "nlms":
            _, residual = nlms_cancel(mic, far, taps=args.taps, mu=args.mu)
        else:
            _, residual = fdkf_cancel(mic, far, FdkfConfig())
        out_path = out_dir / f"{rec['id']}.wav"
        write_wav(out_path, residual)
        return rec["id"]

    with ThreadPoolExecutor(max_workers=args.jobs) as pool:
        done = list(pool.map(run, records))
    print(f"{args.method} processed {len(done)} scenes -> {out_dir}")
    return 0


def cmd_eval(args) -> int:
    records = read_manifest(args.manifest)
    if not records:
        raise DataError(f"empty manifest {args.manifest}")
    enhanced_dir = Path(args.enhanced)
    out_dir = Path(args.out) if args.out else enhanced_dir

    def run(rec):
        paths = _scene_paths(args.manifest, rec)
        mic = read_wav(paths["mic"])
        target = read_wav(paths["target"])
        echo = read_wav(paths["echo"])
        enh_path = enhanced_dir / f"{rec['id']}.wav"
        if not enh_path.exists():
            raise DataError(f"missing enhanced file {enh_path}")
        enhanced = read_wav(enh_path)
        if len(enhanced) != len(mic):
            raise DataError(f"{enh_path}: length {len(enhanced)} != scene {len(mic)}")
        rows = [
            evaluate_scene(rec["id"], args.method_name, mic, target, echo, enhanced,
                           rec.get("augmentation", "none")),
            evaluate_scene(rec["id"], "unprocessed", mic, target, echo, mic,
                           rec.get("augmentation", "none")),
        ]
        return rows

    with ThreadPoolExecutor(max_workers=args.jobs) as pool:
        rows = [r for pair in pool.map(run, records) for r in pair]
    if args.merge_external:
        merged = merge_external_metrics(rows, args.merge_external)
        print(f"merged {merged} external metric values")
    out_dir.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(rows, out_dir / "metrics.csv")
    write_metrics_json(rows, out_dir / "metrics.json")
    ranking = rank_methods(rows)
    with open(out_dir / "ranks.json", "w") as f:
        json.dump(ranking, f, indent=2, sort_keys=True, default=float)
    for method, rank in sorted(ranking["average_rank"].items()):
        print(f"avg rank {method}: {rank:.2f}")
    print(f"metric tables -> {out_dir}")
    return 0


def cmd_schedule(args) -> int:
    sched = NoiseSchedule(args.sigma_min, args.sigma_max, args.t_max)
    sampler = SamplerConfig(n_steps=args.steps, epsilon=args.epsilon)
    co = sampler.coefficients(sched)
    print(f"sigma(0) = {sigma_at(sched, 0.0):.6f}")
    print(f"sigma(T) = {sigma_at(sched, sched.t_max):.6f}  (T = {sched.t_max})")
    print(f"dt = {co['dt']:.6f}  gamma = {co['gamma']:.6f}  "
          f"eta = {co['eta']:.6f}  beta = {co['beta']:.6f}")
    print("step  t         sigma(t)")
    for k in range(args.steps + 1):
        t = sched.t_max - k * co["dt"]
        print(f"{k:4d}  {t:8.6f}  {sigma_at(sched, max(t, 0.0)):.6f}")
    return 0


def cmd_train_toy(args) -> int:
    cfg = _load_config(args.config)
    if "manifest" not in cfg:
        raise ConfigError("train-toy config needs a 'manifest' path")
    pcfg = ToyPipelineConfig(
        steps=int(cfg.get("steps", 2000)),
        peak_lr=float(cfg.get("peak_lr", 5e-3)),
        frames_per_step=int(cfg.get("frames_per_step", 24)),
        holdout_fraction=float(cfg.get("holdout_fraction", 0.25)),
        seed=int(cfg.get("seed", args.seed)),
        loss=LossConfig(**cfg.get("loss", {})),
        schedule=NoiseSchedule(**cfg.get("schedule", {})),
    )
    report = toy_pipeline_train(cfg["manifest"], pcfg)
    out = Path(args.out or "toy_run_report.json")
    save_run_report(report, out)
    print(f"holdout loss {report['holdout_loss_before']:.4f} -> "
          f"{report['holdout_loss_after']:.4f} ({out})")
    return 0


def cmd_bench(args) -> int:
    container = load_weights(args.weights)
    enhancer = DiffusionEnhancer(container)
    rng = np.random.default_rng(args.seed)
    n = int(args.seconds * 16000)
    mic = Waveform(rng.standard_normal(n) * 0.05)
    far = Waveform(rng.standard_normal(n) * 0.05)
    sched = NoiseSchedule()
    sampler = SamplerConfig(n_steps=1, epsilon=1.0, seed=args.seed)
    t0 = time.perf_counter()
    enhancer.enhance(mic, far, sampler, sched, np.random.default_rng(0), mode="single")
    elapsed = time.perf_counter() - t0
    report = {
        "audio_seconds": args.seconds,
        "wall_seconds": elapsed,
        "rtf": elapsed / args.seconds,
        "throughput_x_realtime": args.seconds / elapsed,
    }
    print(json.dumps(report, indent=2, sort_keys=True))
    if args.out:
        with open(args.out, "w") as f:
            json.dump(report, f, indent=2, sort_keys=True)
    return 0


def cmd_init_weights(args) -> int:
    channels = SMALL_CHANNELS if args.size == "small" else BASE_CHANNELS
    container = init_model_container(channels, seed=args.seed, sigma_data=args.sigma_data)
    save_weights(container, args.out)
    print(f"wrote {container.total_parameters()} parameters -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="handsfree",
        description="Hands-free echo/noise enhancement toolkit",
    )
    parser.add_argument("--json", action="store_true", help="machine-readable errors on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene dataset")
    p.add_argument("--config", help="JSON config (pools, ranges, nonlinearity)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scenes", type=int, required=True)
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("enhance", help="run the diffusion enhancer over a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("single", "multi"), default="single")
    p.add_argument("--steps", type=int, default=1)
    p.add_argument("--epsilon", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sigma-min", dest="sigma_min", type=float, default=0.01)
    p.add_argument("--sigma-max", dest="sigma_max", type=float, default=5.0)
    p.add_argument("--t-max", dest="t_max", type=float, default=0.3)
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("baseline", help="classical echo cancellers")
    p.add_argument("--method", choices=("nlms", "fdkf"), required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--align", action="store_true", help="GCC-PHAT pre-alignment")
    p.add_argument("--max-lag", dest="max_lag", type=int, default=1600)
    p.add_argument("--taps", type=int, default=1024)
    p.add_argument("--mu", type=float, default=0.3)
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("eval", help="objective metrics over enhanced outputs")
    p.add_argument("--manifest", required=True)
    p.add_argument("--enhanced", required=True)
    p.add_argument("--out")
    p.add_argument("--method-name", dest="method_name", default="enhanced")
    p.add_argument("--merge-external", dest="merge_external")
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("schedule", help="print the sigma grid and sampler coefficients")
    p.add_argument("--sigma-min", dest="sigma_min", type=float, default=0.01)
    p.add_argument("--sigma-max", dest="sigma_max", type=float, default=5.0)
    p.add_argument("--t-max", dest="t_max", type=float, default=0.3)
    p.add_argument("--steps", type=int, default=1)
    p.add_argument("--epsilon", type=float, default=1.0)
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("train-toy", help="desk-scale toy training run")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("bench", help="forward-path throughput / real-time factor")
    p.add_argument("--weights", required=True)
    p.add_argument("--seconds", type=float, default=8.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("init-weights", help="write a random-initialized model file")
    p.add_argument("--out", required=True)
    p.add_argument("--size", choices=("base", "small"), default="base")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sigma-data", dest="sigma_data", type=float, default=0.5)
    p.set_defaults(func=cmd_init_weights)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except HandsfreeError as exc:
        if isinstance(exc, ConfigError):
            code = EXIT_CONFIG
        elif isinstance(exc, DivergenceError):
            code = EXIT_DIVERGENCE
        else:
            code = EXIT_DATA
        if args.json:
            print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
                  file=sys.stderr)
        else:
            print(f"error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
