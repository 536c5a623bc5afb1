"""Command-line entry point: train / eval / compare / demo.

Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
stdout carries data; diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, maps
from . import netcore as nc
from .arbiter import CombinedAgent, PolicyAgent
from .evalkit import compare, run_episodes
from .minidoom import ACTION_PROFILE, MiniDoomEnv, ascii_render
from .trainer import ConfigError, ROLE_PROFILES, config_to_dict, parse_train_config, train

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


class UsageError(Exception):
    """Bad invocation, config, or input files (exit code 2)."""


def _default_out_root() -> Path:
    return Path(os.environ.get("UNREALDC_OUT", "runs"))


def _pick_out_dir(explicit, label: str) -> Path:
    if explicit:
        return Path(explicit)
    root = _default_out_root()
    k = 0
    while True:
        candidate = root / f"{label}-{k:03d}"
        if not candidate.exists():
            return candidate
        k += 1


def _write_manifest(out_dir: Path, config_dict: dict, seed: int):
    manifest = {
        "version": __version__,
        "seed": seed,
        "config": config_dict,
        "layout": {
            "manifest": "manifest.json",
            "log": "train_log.csv",
            "checkpoints": "checkpoint_*.npz",
        },
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_train(args) -> int:
    if not args.config:
        raise UsageError("train requires --config")
    overrides = {
        "seed": args.seed,
        "workers": args.workers,
        "steps": args.steps,
    }
    try:
        cfg = parse_train_config(args.config, overrides)
    except (ConfigError, OSError) as exc:
        raise UsageError(str(exc)) from exc
    try:
        map_specs = [maps.resolve(m, cfg.episode_step_limit) for m in cfg.maps]
    except (OSError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    out_dir = _pick_out_dir(args.out, "train")
    _write_manifest(out_dir, config_to_dict(cfg), cfg.seed)
    print(f"training: role={cfg.role} steps={cfg.total_steps} workers={cfg.workers} "
          f"out={out_dir}", file=sys.stderr)
    result = train(cfg, map_specs, out_dir=out_dir)
    if result.errors:
        for worker_id, tb in result.errors:
            print(f"worker {worker_id} aborted:\n{tb}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"done: {result.global_steps} steps, {result.applied_updates} updates, "
          f"{len(result.log_rows)} episodes, checkpoint {out_dir / 'checkpoint_final.npz'}",
          file=sys.stderr)
    return EXIT_OK


def _load_agent_for_eval(ckpt_path, greedy: bool):
    try:
        params = nc.load_params(ckpt_path)
    except (OSError, nc.CheckpointError) as exc:
        raise UsageError(str(exc)) from exc
    n_actions = params.config.n_actions
    role = {5: "action", 3: "navigation"}.get(n_actions)
    if role is None:
        raise UsageError(f"checkpoint has unsupported action count {n_actions}")
    return PolicyAgent(params, role, greedy=greedy), role


def cmd_eval(args) -> int:
    agent, role = _load_agent_for_eval(args.ckpt, args.greedy)
    try:
        map_specs = {m: maps.resolve(m, args.step_limit) for m in args.maps}
    except (OSError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    profile = ROLE_PROFILES[role]
    lines = ["map,episode,kills,deaths,objects,steps,reward"]
    for name, spec in map_specs.items():
        stats = run_episodes(agent, spec, args.episodes, mode=args.mode,
                             seed=args.seed or 0, profile=profile)
        for i, s in enumerate(stats):
            lines.append(f"{name},{i},{s.kills},{s.deaths},{s.objects},{s.steps},{s.reward:.4f}")
    payload = "\n".join(lines) + "\n"
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "episodes.csv").write_text(payload)
    sys.stdout.write(payload)
    return EXIT_OK


def cmd_compare(args) -> int:
    try:
        action_params = nc.load_params(args.action_ckpt)
        nav_params = nc.load_params(args.nav_ckpt)
        combined = CombinedAgent(action_params, nav_params, greedy=args.greedy)
        action_only = PolicyAgent(action_params, "action", greedy=args.greedy)
    except (OSError, nc.CheckpointError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    try:
        map_specs = {m: maps.resolve(m, args.step_limit) for m in args.maps}
    except (OSError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    report = compare(
        {"action": action_only, "combined": combined},
        map_specs,
        n=args.episodes,
        mode=args.mode,
        seed=args.seed or 0,
        profile=ACTION_PROFILE,
    )
    out_dir = _pick_out_dir(args.out, "compare")
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "metrics.csv").write_text(report.metrics_csv())
    (out_dir / "pvalues.csv").write_text(report.pvalues_csv())
    sys.stdout.write(report.pretty())
    print(f"wrote {out_dir / 'metrics.csv'} and {out_dir / 'pvalues.csv'}", file=sys.stderr)
    return EXIT_OK


def cmd_demo(args) -> int:
    greedy = args.greedy
    if args.nav_ckpt:
        try:
            agent = CombinedAgent.from_checkpoints(args.ckpt, args.nav_ckpt, greedy=greedy)
        except (OSError, nc.CheckpointError, ValueError) as exc:
            raise UsageError(str(exc)) from exc
        profile = ACTION_PROFILE
        combined = True
    else:
        agent, role = _load_agent_for_eval(args.ckpt, greedy)
        profile = ROLE_PROFILES[role]
        combined = False
    try:
        map_spec = maps.resolve(args.map, args.step_limit)
    except (OSError, ValueError) as exc:
        raise UsageError(str(exc)) from exc

    seed = args.seed or 0
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xDE30)))
    env = MiniDoomEnv(map_spec, profile,
                      obs_dims=_demo_obs_dims(agent))
    agent.begin_episode()
    obs = env.reset(seed)
    total = 0.0
    while True:
        action = agent.act(obs, rng)
        outcome = env.step(action)
        total += outcome.reward
        events = "+".join(sorted(outcome.events.elements())) or "-"
        cols = [f"tick={env.state.tick:4d}"]
        if combined:
            choice = agent.last_choice
            cols.append(f"agent={choice.controller.value:<10}")
        cols.append(f"action={action.name:<13}")
        cols.append(f"reward={outcome.reward:+.2f}")
        cols.append(f"events={events}")
        print("  ".join(cols))
        print(ascii_render(env.state))
        obs = outcome.observation
        if outcome.done:
            break
    print(f"episode finished: ticks={env.state.tick} return={total:+.2f}")
    return EXIT_OK


def _demo_obs_dims(agent):
    params = getattr(agent, "params", None) or getattr(agent, "nav_params", None)
    return (params.config.input_h, params.config.input_w)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="unrealdc",
        description="Train and evaluate divide-and-conquer actor-critic agents "
                    "on the grid FPS simulator.",
    )
    parser.add_argument("--version", action="version", version=f"unrealdc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="path to the INI config file")
        p.add_argument("--seed", type=int, default=None, help="override the seed")
        p.add_argument("--out", help="output directory (default: under $UNREALDC_OUT)")
        p.add_argument("--workers", type=int, default=None, help="override worker count")
        p.add_argument("--steps", type=int, default=None, help="override global step budget")

    p_train = sub.add_parser("train", help="run asynchronous training")
    add_common(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate one checkpoint on maps")
    add_common(p_eval)
    p_eval.add_argument("--ckpt", required=True, help="parameter checkpoint")
    p_eval.add_argument("--maps", nargs="+", required=True, help="map names or paths")
    p_eval.add_argument("--episodes", type=int, default=30)
    p_eval.add_argument("--mode", choices=("timed", "until_death"), default="timed")
    p_eval.add_argument("--greedy", action="store_true", help="argmax instead of sampling")
    p_eval.add_argument("--step-limit", type=int, default=2100)
    p_eval.set_defaults(func=cmd_eval)

    p_cmp = sub.add_parser("compare", help="action-only vs combined agent cross table")
    add_common(p_cmp)
    p_cmp.add_argument("--action-ckpt", required=True)
    p_cmp.add_argument("--nav-ckpt", required=True)
    p_cmp.add_argument("--maps", nargs="+", required=True)
    p_cmp.add_argument("--episodes", type=int, default=30)
    p_cmp.add_argument("--mode", choices=("timed", "until_death"), default="timed")
    p_cmp.add_argument("--greedy", action="store_true")
    p_cmp.add_argument("--step-limit", type=int, default=2100)
    p_cmp.set_defaults(func=cmd_compare)

    p_demo = sub.add_parser("demo", help="trace one episode with ASCII rendering")
    add_common(p_demo)
    p_demo.add_argument("--ckpt", required=True, help="agent checkpoint (action or navigation)")
    p_demo.add_argument("--nav-ckpt", help="navigation checkpoint (enables the combined agent)")
    p_demo.add_argument("--map", required=True)
    p_demo.add_argument("--greedy", action="store_true")
    p_demo.add_argument("--step-limit", type=int, default=2100)
    p_demo.set_defaults(func=cmd_demo)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except KeyboardInterrupt:
        return EXIT_RUNTIME
    except Exception as exc:  # runtime failure contract
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
