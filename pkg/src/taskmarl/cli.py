"""``taskmarl`` command line: train, eval, baseline, scale-sweep, fov-sweep, gradcheck.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Every command writes its artifacts plus a ``manifest.json`` into ``--out``.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from taskmarl import numcore as nc
from taskmarl.config import ConfigError, RunConfig, parse_config
from taskmarl.envs import PursuitConfig, SpreadConfig
from taskmarl.evaluation import (
    evaluate_policy,
    fov_sweep,
    improvement,
    run_random_baseline,
    scalability_sweep,
    write_report,
)
from taskmarl.policy import PolicyConfig, forward, init_params, pad_tasksets
from taskmarl.tasks import TaskSet
from taskmarl.trainer import CheckpointError, task_dim, train

COMMANDS = ("train", "eval", "baseline", "scale-sweep", "fov-sweep", "gradcheck")


class UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="taskmarl", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="YAML run configuration (default: all defaults)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--checkpoint", help="checkpoint to evaluate or resume from")
    p.add_argument("--out", help="output directory (default: config out_dir)")
    p.add_argument("--episodes", type=int, help="override evaluation episodes")
    return p


# ------------------------------------------------------------------ manifest

def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def emit_manifest(out_dir: Path, command: str, cfg: RunConfig, seed: int, paths) -> Path:
    """List every artifact of the run with its hash and the run's config fingerprint."""
    out_dir = Path(out_dir)
    entries = []
    for p in sorted({Path(p) for p in paths}):
        entries.append({"path": str(p.relative_to(out_dir)) if p.is_relative_to(out_dir) else str(p),
                        "sha256": _sha256(p), "config_hash": cfg.fingerprint()})
    doc = {"command": command, "seed": seed, "config_hash": cfg.fingerprint(),
           "config": cfg.canonical(), "artifacts": entries}
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


# ------------------------------------------------------------------ commands

def _require_checkpoint(args) -> str:
    if not args.checkpoint:
        raise UsageError(f"{args.command}: checkpoint required (--checkpoint PATH)")
    if not Path(args.checkpoint).is_file():
        raise UsageError(f"{args.command}: checkpoint {args.checkpoint} does not exist")
    return args.checkpoint


def cmd_train(args, cfg: RunConfig, seed: int, out: Path) -> list[Path]:
    def progress(row):
        mean = "" if row["mean_reward"] is None else f" eval {row['mean_reward']:.3f}"
        print(f"iter {row['iteration']:4d} steps {row['env_steps']}{mean} ({row['wall_s']:.1f}s)", flush=True)

    result = train(cfg.env_config(), cfg.train_config(), seed, out, resume_from=args.checkpoint,
                   progress=progress)
    paths = [result.log_path, *result.checkpoints]
    if result.best_checkpoint is not None:
        paths.append(result.best_checkpoint)
    return paths


def cmd_baseline(args, cfg: RunConfig, seed: int, out: Path) -> list[Path]:
    env = cfg.env_config()
    episodes = args.episodes or cfg.eval.episodes
    rep = run_random_baseline(env, cfg.eval.repetitions, episodes, seed, cfg.eval.resamples)
    print(f"{rep.env} random baseline: mean {rep.mean_reward:.3f} "
          f"CI ({rep.ci_lo:.3f}, {rep.ci_hi:.3f}) over {len(rep.returns)} episodes")
    return write_report(rep, out / "baseline.csv", scenario=f"{rep.env}-random")


def cmd_eval(args, cfg: RunConfig, seed: int, out: Path) -> list[Path]:
    ckpt = _require_checkpoint(args)
    env = cfg.env_config()
    rep = evaluate_policy(ckpt, env, args.episodes or cfg.eval.episodes, seed, cfg.eval.resamples,
                          cfg.eval.mode)
    print(f"{rep.env} {cfg.eval.mode} policy: mean {rep.mean_reward:.3f} CI ({rep.ci_lo:.3f}, {rep.ci_hi:.3f})")
    return write_report(rep, out / "eval.csv", scenario=rep.env)


def _print_sweep(result, label: str) -> None:
    for e in result.entries:
        gain = improvement(e.policy.adjusted_mean, e.baseline.adjusted_mean)
        print(f"{label}={e.param}: policy {e.policy.mean_reward:.3f} (adj {e.policy.adjusted_mean:.3f}) "
              f"random {e.baseline.mean_reward:.3f} (adj {e.baseline.adjusted_mean:.3f}) gain {gain:+.1%}")


def cmd_scale_sweep(args, cfg: RunConfig, seed: int, out: Path) -> list[Path]:
    ckpt = _require_checkpoint(args)
    base = cfg.env_config() if cfg.env == "spread" else SpreadConfig()
    episodes = args.episodes or cfg.eval.episodes
    res = scalability_sweep(ckpt, cfg.eval.scale_ns, episodes, seed, base,
                            cfg.eval.repetitions, episodes, cfg.eval.mode)
    _print_sweep(res, "N")
    return write_report(res, out / "scale_sweep.csv")


def cmd_fov_sweep(args, cfg: RunConfig, seed: int, out: Path) -> list[Path]:
    ckpt = _require_checkpoint(args)
    base = cfg.env_config() if cfg.env == "pursuit" else PursuitConfig()
    episodes = args.episodes or cfg.eval.episodes
    res = fov_sweep(ckpt, cfg.eval.fov_ranges, episodes, seed, base, cfg.eval.repetitions, episodes,
                    cfg.eval.mode)
    _print_sweep(res, "obs_range")
    return write_report(res, out / "fov_sweep.csv")


def gradcheck_policy(d_task: int = 8, seed: int = 0, set_sizes=(3, 2)) -> nc.GradCheckReport:
    """Finite-difference check of every policy parameter through scores and value.

    The loss mixes random weights over a padded batch of task sets, so masking,
    both attention blocks, the score head and the value head are all exercised.
    """
    rng = np.random.default_rng(seed)
    params = init_params(PolicyConfig(d_task=d_task), seed)
    for _, t in params.items():  # non-zero biases and gains: a non-degenerate point
        t.data += rng.normal(0.0, 0.1, t.shape)
    tasksets = [TaskSet(rng.normal(size=(n, d_task)), (0,) * n, (None,) * n) for n in set_sizes]
    x, mask = pad_tasksets(tasksets, d_task)
    w_score = rng.normal(size=mask.shape) * mask
    w_value = rng.normal(size=len(set_sizes))
    pcfg = PolicyConfig(d_task=d_task)

    def loss():
        scores, value = forward(params, pcfg, x, mask)
        return nc.sum_(scores * w_score) + nc.sum_(value * w_value)

    return nc.grad_check(loss, params)


def cmd_gradcheck(args, cfg: RunConfig, seed: int, out: Path) -> list[Path]:
    t0 = time.perf_counter()
    report = gradcheck_policy(task_dim(cfg.env_config()), seed)
    worst = max(report.per_param, key=report.per_param.get)
    print(f"max relative error {report.max_rel_error:.3e} (worst {worst}) over {len(report.per_param)} "
          f"parameter tensors in {time.perf_counter() - t0:.1f}s")
    path = out / "gradcheck.json"
    path.write_text(json.dumps({"max_rel_error": report.max_rel_error, "tolerance": report.tolerance,
                                "per_param": report.per_param}, indent=2, sort_keys=True) + "\n")
    if not report.ok:
        raise RuntimeError(f"gradient check failed for {', '.join(report.failures)}")
    return [path]


HANDLERS = {"train": cmd_train, "eval": cmd_eval, "baseline": cmd_baseline,
            "scale-sweep": cmd_scale_sweep, "fov-sweep": cmd_fov_sweep, "gradcheck": cmd_gradcheck}


def dispatch(args: argparse.Namespace) -> int:
    try:
        cfg = parse_config(args.config)
        seed = cfg.seed if args.seed is None else args.seed
        if seed < 0:
            raise ConfigError(f"seed: must be >= 0, got {seed}")
        if args.episodes is not None and args.episodes < 2:
            raise ConfigError(f"episodes: must be >= 2, got {args.episodes}")
        out = Path(args.out or cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = HANDLERS[args.command](args, cfg, seed, out)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CheckpointError as exc:
        print(f"error: checkpoint: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - any runtime failure maps to exit 1
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    emit_manifest(out, args.command, cfg, seed, paths)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return dispatch(args)


if __name__ == "__main__":
    sys.exit(main())
