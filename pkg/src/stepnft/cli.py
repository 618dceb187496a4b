"""Command-line entry point: train, ablate, verify, eval, sample.

Every command resolves its config from an optional INI file plus repeatable
--set section.key=value overrides (overrides win), creates a fresh run
directory under --out, the STEPNFT_OUT environment variable, or ./runs,
and writes a manifest.json recording the command, the canonical config
echo with its hash, the seeds, timestamps, and artifact paths. Run
directories are named <utc-stamp>-<hash prefix> with a numeric suffix on
collision; nothing is ever overwritten.

Exit codes: 0 on success, 1 on runtime failures (failed checks, corrupt
checkpoints, aborted training), 2 on configuration and usage errors.
"""

import argparse
import math
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import verify as verify_mod
from .config import build_manifest, config_hash, parse_config, write_manifest
from .errors import ConfigurationError, StepNFTError
from .policy import load_checkpoint
from .rng import stream
from .solver import dump_chain, run_chain
from .training import evaluate_field, make_sft_field, run_training

ABLATION_AXES = ("alpha", "beta", "credit", "objective", "sampler",
                 "sigma", "step_select", "target")
COMPARISON_COLUMNS = ("axis", "arm", "seed", "sft_success_rate",
                      "final_success_rate")
EVAL_COLUMNS = ("episode", "reward", "success")


def _utc_now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _out_root(arg):
    return Path(arg or os.environ.get("STEPNFT_OUT") or "runs")


def make_run_dir(root, tag):
    root = Path(root)
    stamp = datetime.now(timezone.utc).strftime("%Y%m%d-%H%M%S")
    base = f"{stamp}-{tag}"
    candidate = root / base
    counter = 1
    while candidate.exists():
        candidate = root / f"{base}-{counter}"
        counter += 1
    candidate.mkdir(parents=True)
    return candidate


def _resolve_config(args):
    cfg = parse_config(args.config, args.set or [])
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def cmd_train(args):
    started = _utc_now()
    cfg = _resolve_config(args)
    run_dir = make_run_dir(_out_root(args.out), config_hash(cfg)[:8])
    result = run_training(cfg, out_dir=run_dir)
    artifacts = {
        "metrics": "metrics.csv",
        "checkpoint": "checkpoint.ckpt",
        "sft_init": "sft_init.ckpt",
    }
    manifest = build_manifest("train", cfg, [cfg.seed], artifacts,
                              started, _utc_now())
    write_manifest(manifest, run_dir / "manifest.json")
    print(f"run directory: {run_dir}")
    print(f"pretrained success_rate: {result.sft_success_rate:.4f}")
    print(f"final success_rate: {result.final_success_rate:.4f}")
    return 0


def axis_arms(axis, base):
    """Named config variants for one ablation axis.

    Arms within an axis differ only along that axis, so runs sharing a
    seed can also share the pretrained init.
    """
    if axis == "sampler":
        return [
            ("ode_terminal", base.replace(sampler="ode", target="terminal",
                                          terminal_correction=False)),
            ("sde_naive", base.replace(sampler="sde", target="terminal",
                                       terminal_correction=False)),
            ("sde_corrected", base.replace(sampler="sde", target="terminal",
                                           terminal_correction=True)),
            ("sde_stepwise", base.replace(sampler="sde", target="stepwise")),
        ]
    if axis == "target":
        return [
            ("stepwise", base.replace(target="stepwise")),
            ("terminal", base.replace(target="terminal",
                                      terminal_correction=True)),
        ]
    if axis == "objective":
        return [(kind, base.replace(objective=kind))
                for kind in ("ranking", "wmse", "positive_only", "negative_only")]
    if axis == "credit":
        return [
            ("naive", base.replace(target="terminal",
                                   terminal_correction=False)),
            ("corrected", base.replace(target="terminal",
                                       terminal_correction=True)),
        ]
    if axis == "sigma":
        return [(f"sigma_{value}", base.replace(sigma=value))
                for value in (0.05, 0.2, 0.5)]
    if axis == "beta":
        return [(f"beta_{value}", base.replace(beta=value))
                for value in (0.5, 1.0, 2.0)]
    if axis == "alpha":
        return [
            ("constant_low", base.replace(alpha_kind="constant",
                                          alpha_start=0.1, alpha_end=0.995)),
            ("constant_high", base.replace(alpha_kind="constant",
                                           alpha_start=0.995, alpha_end=0.995)),
            ("linear", base.replace(alpha_kind="linear",
                                    alpha_start=0.1, alpha_end=0.995)),
        ]
    if axis == "step_select":
        arms = [("uniform", base.replace(selector="uniform"))]
        arms += [(f"fixed_{j}", base.replace(selector="fixed", fixed_step=j))
                 for j in range(base.n_steps)]
        return arms
    raise ConfigurationError(f"unknown ablation axis {axis!r}")


def write_comparison(rows, path):
    lines = [",".join(COMPARISON_COLUMNS)]
    for axis, arm, seed, sft_rate, final_rate in rows:
        lines.append(",".join([
            axis, arm, str(seed),
            repr(float(sft_rate)), repr(float(final_rate)),
        ]))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def cmd_ablate(args):
    started = _utc_now()
    base = _resolve_config(args)
    arms = axis_arms(args.axis, base)
    seeds = [base.seed + offset for offset in range(args.seeds)]
    run_dir = make_run_dir(_out_root(args.out),
                           f"ablate-{args.axis}-{config_hash(base)[:8]}")
    rows = []
    for seed in seeds:
        shared_init = make_sft_field(base.replace(seed=seed))
        for arm_name, arm_cfg in arms:
            arm_dir = run_dir / f"{arm_name}-seed{seed}"
            arm_dir.mkdir()
            result = run_training(arm_cfg.replace(seed=seed), out_dir=arm_dir,
                                  init_field_override=shared_init)
            rows.append((args.axis, arm_name, seed,
                         result.sft_success_rate, result.final_success_rate))
    write_comparison(rows, run_dir / "comparison.csv")
    artifacts = {"comparison": "comparison.csv"}
    artifacts.update({f"arm_{arm}_seed{seed}": f"{arm}-seed{seed}"
                      for _, arm, seed, _, _ in rows})
    manifest = build_manifest(f"ablate {args.axis}", base, seeds, artifacts,
                              started, _utc_now())
    write_manifest(manifest, run_dir / "manifest.json")
    print(f"run directory: {run_dir}")
    for arm_name, _ in arms:
        finals = [row[4] for row in rows if row[1] == arm_name]
        print(f"{args.axis}/{arm_name}: "
              f"mean final success_rate {float(np.mean(finals)):.4f} "
              f"over {len(finals)} seeds")
    return 0


def cmd_verify(args):
    started = _utc_now()
    seed = args.seed if args.seed is not None else 0
    trials = args.trials
    if trials < 1:
        print("usage error: --trials must be positive", file=sys.stderr)
        return 2
    instances = min(100, trials)
    samples = trials * 100
    reports = verify_mod.run_all(seed=seed, trials=trials,
                                 instances=instances, samples=samples)
    print(verify_mod.summarize(reports))
    run_dir = make_run_dir(_out_root(args.out), f"verify-{seed}")
    verify_mod.write_report(reports, run_dir / "checks.csv")
    manifest = build_manifest("verify", parse_config(), [seed],
                              {"checks": "checks.csv"}, started, _utc_now())
    write_manifest(manifest, run_dir / "manifest.json")
    print(f"run directory: {run_dir}")
    if verify_mod.all_passed(reports):
        return 0
    print("verification failed", file=sys.stderr)
    return 1


def cmd_eval(args):
    started = _utc_now()
    if args.episodes < 1:
        print("usage error: --episodes must be positive", file=sys.stderr)
        return 2
    cfg = _resolve_config(args).replace(eval_episodes=args.episodes)
    field = load_checkpoint(args.checkpoint)
    seed = args.seed if args.seed is not None else cfg.seed
    report = evaluate_field(field, cfg, seed)
    n = args.episodes
    rate = report.success_rate
    half = 1.96 * math.sqrt(max(rate * (1.0 - rate), 0.0) / n)
    lo, hi = max(0.0, rate - half), min(1.0, rate + half)
    run_dir = make_run_dir(_out_root(args.out), f"eval-{config_hash(cfg)[:8]}")
    lines = [",".join(EVAL_COLUMNS)]
    for episode in range(n):
        lines.append(",".join([
            str(episode),
            repr(float(report.rewards[episode])),
            str(int(report.successes[episode])),
        ]))
    with open(run_dir / "eval.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    manifest = build_manifest("eval", cfg, [seed], {"eval": "eval.csv"},
                              started, _utc_now())
    write_manifest(manifest, run_dir / "manifest.json")
    print(f"run directory: {run_dir}")
    print(f"success_rate {rate:.4f} "
          f"(95% CI [{lo:.4f}, {hi:.4f}], episodes={n})")
    return 0


def cmd_sample(args):
    started = _utc_now()
    if args.chains < 1:
        print("usage error: --chains must be positive", file=sys.stderr)
        return 2
    cfg = _resolve_config(args)
    field = load_checkpoint(args.checkpoint)
    seed = args.seed if args.seed is not None else cfg.seed
    factory = cfg.env_factory()
    schedule = cfg.schedule()
    run_dir = make_run_dir(_out_root(args.out), f"sample-{config_hash(cfg)[:8]}")
    paths = []
    for index in range(args.chains):
        env = factory()
        env_seed = int(stream(seed, "sample-env-seed", index).integers(0, 2 ** 62))
        observation, context = env.reset(env_seed)
        chain_stream = stream(seed, "sample", index)
        x_start = chain_stream.standard_normal(env.action_dim)

        def velocity(x, t, ctx, obs):
            return field.forward(x, t, ctx, obs)

        chain = run_chain(velocity, schedule, x_start, context, observation,
                          cfg.sampler, noise_stream=chain_stream,
                          last_step_noise=cfg.last_step_noise)
        path = run_dir / f"chain_{index:03d}.txt"
        dump_chain(chain, path, seed=env_seed)
        paths.append(path.name)
    manifest = build_manifest("sample", cfg, [seed],
                              {f"chain_{i:03d}": name
                               for i, name in enumerate(paths)},
                              started, _utc_now())
    write_manifest(manifest, run_dir / "manifest.json")
    print(f"run directory: {run_dir}")
    print(f"wrote {len(paths)} {cfg.sampler} chains")
    return 0


def _add_common(parser):
    parser.add_argument("--config", default=None, help="INI config file")
    parser.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override one config value; repeatable")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    parser.add_argument("--out", default=None,
                        help="output root (default: $STEPNFT_OUT or ./runs)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="stepnft",
        description="Critic-free online RL for flow-matching policies",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="run one training job")
    _add_common(train)
    train.set_defaults(func=cmd_train)

    ablate = sub.add_parser("ablate", help="run one ablation axis")
    ablate.add_argument("axis", choices=ABLATION_AXES)
    _add_common(ablate)
    ablate.add_argument("--seeds", type=int, default=5,
                        help="number of consecutive seeds per arm")
    ablate.set_defaults(func=cmd_ablate)

    ver = sub.add_parser("verify", help="run the identity check suite")
    ver.add_argument("--trials", type=int, default=10000,
                     help="trials per identity check; Monte-Carlo sample and"
                          " instance counts scale with this")
    ver.add_argument("--seed", type=int, default=None)
    ver.add_argument("--out", default=None)
    ver.set_defaults(func=cmd_verify)

    evaluate = sub.add_parser("eval", help="evaluate a checkpoint greedily")
    evaluate.add_argument("checkpoint")
    _add_common(evaluate)
    evaluate.add_argument("--episodes", type=int, default=512)
    evaluate.set_defaults(func=cmd_eval)

    sample = sub.add_parser("sample", help="dump sampler chains from a checkpoint")
    sample.add_argument("checkpoint")
    _add_common(sample)
    sample.add_argument("--chains", type=int, default=4)
    sample.set_defaults(func=cmd_sample)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        location = f" [{exc.field}]" if exc.field else ""
        print(f"config error{location}: {exc}", file=sys.stderr)
        return 2
    except StepNFTError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
