"""Command line: gen-tasks, run, iterate, collect-critiques, mix, eval.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import logging
import shutil
import sys
import threading
from pathlib import Path
from typing import Sequence

from . import forge, metrics
from .config import ConfigError, RunConfig, apply_overrides, dumps_snapshot, load_config, load_task_file
from .craftsim.generator import GenerationOverflow, dumps_tasks, generate_tasks
from .orchestrator import (
    EnvSpec,
    EpisodeConfig,
    HookFailed,
    MixSettings,
    TrainerHook,
    hash64,
    run_exploration,
    run_iterations,
)
from .policy.actors import ActorConfig
from .policy.chat import BackendUnavailable

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("cgiagent")


class UsageError(Exception):
    pass


# -- helpers -------------------------------------------------------------------


def _prepare_dir(path: Path, force: bool) -> Path:
    if path.exists():
        if not force:
            raise UsageError(f"{path} already exists (use --force to overwrite)")
        if path.is_dir():
            shutil.rmtree(path)
        else:
            path.unlink()
    path.mkdir(parents=True)
    return path


def _prepare_file(path: Path, force: bool) -> Path:
    if path.exists() and not force:
        raise UsageError(f"{path} already exists (use --force to overwrite)")
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _run_config(args: argparse.Namespace) -> RunConfig:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc
    apply_overrides(
        cfg,
        {
            "tasks": args.tasks,
            "env": args.env,
            "endpoint": args.endpoint,
            "actor": args.actor,
            "m": args.m,
            "fidelity": args.fidelity,
            "tracking": args.tracking,
            "critic": args.critic,
            "critic_noise": args.critic_noise,
            "max_steps": args.max_steps,
            "seed": args.seed,
            "workers": args.workers,
            "output": args.out,
            "run_id": args.run_id,
        },
    )
    for name in ("rounds", "trainer_hook", "beta", "general", "mix_total", "mix_seed"):
        if hasattr(args, name):
            apply_overrides(cfg, {name: getattr(args, name)})
    if getattr(args, "only_revised", False):
        cfg.only_revised = True
    if cfg.critic == "off":
        cfg.critic = "none"
    if cfg.critic == "none":
        cfg.critique_mode = "off"
    if cfg.tasks is None:
        raise UsageError("no task file given (--tasks or [env] tasks)")
    try:
        cfg.validate()
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc
    if cfg.run_id is None:
        cfg.run_id = f"run-{hash64(dumps_snapshot(cfg)):016x}"[:12]
    return cfg


def _episode_config(cfg: RunConfig, expert: bool = False) -> EpisodeConfig:
    endpoint = cfg.endpoint
    return EpisodeConfig(
        env=EnvSpec(cfg.env, endpoint),
        actor=ActorConfig(
            backend=cfg.actor,
            m_candidates=cfg.m,
            temperature=cfg.temperature,
            fidelity=cfg.fidelity,
            seed=cfg.seed,
            dedup=cfg.dedup,
            model=cfg.model,
            tracking=cfg.tracking,
        ),
        critic=cfg.critic,
        critic_noise=cfg.critic_noise,
        expert_critic=expert or cfg.critic_expert,
        max_steps=cfg.max_steps,
        seed=cfg.seed,
        critique_mode=cfg.critique_mode,
        workers=cfg.workers,
    )


def _start_run(cfg: RunConfig, force: bool) -> tuple[Path, list]:
    tasks = load_task_file(cfg.tasks)
    run_dir = _prepare_dir(Path(cfg.output) / cfg.run_id, force)
    (run_dir / "config.json").write_text(dumps_snapshot(cfg), encoding="utf-8")
    return run_dir, tasks


def _backend_down(trajs) -> bool:
    return any(t.aborted and (t.error or "").startswith("BackendUnavailable") for t in trajs)


def _write_run_report(run_dir: Path) -> dict:
    trajs, corrupt = metrics.load_logs(metrics.run_logs(run_dir))
    report = metrics.build_report(trajs, corrupt)
    metrics.write_report(report, run_dir)
    return report


def _fmt(x) -> str:
    return "n/a" if x is None else f"{x:.4f}"


# -- commands ------------------------------------------------------------------


def cmd_gen_tasks(args: argparse.Namespace) -> int:
    for name in ("depth", "branching", "count"):
        if getattr(args, name) < 1:
            raise UsageError(f"--{name} must be >= 1")
    if not 0 <= args.tag_prob <= 1:
        raise UsageError("--tag-prob must lie in [0, 1]")
    out = _prepare_file(Path(args.out), args.force)
    try:
        tasks = generate_tasks(args.depth, args.branching, args.count, args.seed, tag_prob=args.tag_prob)
    except GenerationOverflow as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    out.write_text(dumps_tasks(tasks), encoding="utf-8")
    print(f"wrote {len(tasks)} tasks to {out}")
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _run_config(args)
    run_dir, tasks = _start_run(cfg, args.force)
    h = run_exploration(1, tasks, _episode_config(cfg), run_dir=run_dir, run_id=cfg.run_id, stop=args.stop)
    report = _write_run_report(run_dir)
    o = report["overall"]
    print(f"{run_dir}: {o['n_episodes']} episodes, success_rate {_fmt(o['success_rate'])}, aborted {o['abort_count']}")
    if _backend_down(h.trajectories):
        print("error: backend unavailable after retries", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_iterate(args: argparse.Namespace) -> int:
    cfg = _run_config(args)
    beta = cfg.beta_fraction
    if beta < 1 and cfg.general is None:
        raise UsageError("beta < 1 needs a general corpus (--general or [mix] general)")
    run_dir, tasks = _start_run(cfg, args.force)
    hook = TrainerHook(cfg.trainer_hook) if cfg.trainer_hook else None
    mix = MixSettings(
        beta=beta,
        general=Path(cfg.general) if cfg.general else None,
        total=cfg.mix_total,
        seed=cfg.mix_seed,
        only_revised=cfg.only_revised,
    )
    status = EXIT_OK
    try:
        result = run_iterations(
            cfg.rounds, tasks, _episode_config(cfg), run_dir=run_dir, run_id=cfg.run_id, trainer_hook=hook, mix=mix, stop=args.stop
        )
        harvests = result.harvests
    except HookFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        status = EXIT_RUNTIME
        harvests = []
    except forge.EmptyPool as exc:
        print(f"error: {exc}", file=sys.stderr)
        status = EXIT_RUNTIME
        harvests = []
    report = _write_run_report(run_dir)
    print("round  episodes  correct  aborted  success_rate")
    for k, stats in _round_stats(run_dir):
        print(f"{k:>5}  {stats['episodes']:>8}  {stats['correct']:>7}  {stats['aborted']:>7}  {_fmt(stats['success_rate'])}")
    print(f"overall success_rate {_fmt(report['overall']['success_rate'])}")
    if status == EXIT_OK and any(_backend_down(h.trajectories) for h in harvests):
        status = EXIT_RUNTIME
    return status


def _round_stats(run_dir: Path):
    import json

    for path in sorted(run_dir.glob("round_*/harvest_stats.json"), key=lambda p: int(p.parent.name[6:])):
        k = int(path.parent.name[6:])
        if k >= 1:
            yield k, json.loads(path.read_text(encoding="utf-8"))


def cmd_collect_critiques(args: argparse.Namespace) -> int:
    cfg = _run_config(args)
    if cfg.critic == "none":
        raise UsageError("critique collection needs a critic (oracle or remote)")
    run_dir, tasks = _start_run(cfg, args.force)
    ecfg = _episode_config(cfg, expert=True)
    total = 0
    down = False
    for k in range(1, cfg.rounds + 1):
        h = run_exploration(k, tasks, ecfg, run_dir=run_dir, run_id=cfg.run_id, stop=args.stop)
        down |= _backend_down(h.trajectories)
        ds = run_dir / f"round_{k}" / "datasets"
        path = forge.write_records(ds / "critique.json", forge.build_critique_records(h))
        forge.write_manifest(ds / f"manifest_round{k}.json", forge.build_manifest(k, None, [path]))
        n = forge.count_record_lines(path)
        total += n
        print(f"round {k}: {h.stats['correct']}/{h.stats['episodes']} successful episodes, {n} critique records")
    _write_run_report(run_dir)
    print(f"{total} critique records under {run_dir}")
    return EXIT_RUNTIME if down else EXIT_OK


def cmd_mix(args: argparse.Namespace) -> int:
    try:
        spec = forge.MixSpec(
            beta=args.beta,
            agentic=tuple(Path(p) for p in args.agentic),
            general=Path(args.general) if args.general else None,
            total=args.n,
            seed=args.seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    for p in [*spec.agentic, *([spec.general] if spec.general else [])]:
        if not p.exists():
            raise UsageError(f"file not found: {p}")
    if spec.beta < 1 and spec.general is None:
        raise UsageError("beta < 1 needs --general")
    out = _prepare_file(Path(args.out), args.force)
    manifest_path = _prepare_file(out.with_name(f"manifest_{out.stem}.json"), args.force)
    try:
        _, manifest = forge.mix_datasets(spec, out, manifest_path)
    except forge.EmptyPool as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    mix = manifest["mix"]
    print(f"wrote {out}: {mix['agentic']} agentic + {mix['general']} general" + (" (capped)" if mix["capped"] else ""))
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    paths = []
    for run in args.runs:
        run = Path(run)
        if not run.is_dir():
            raise UsageError(f"not a run directory: {run}")
        paths.extend(metrics.run_logs(run))
    out = _prepare_dir(Path(args.out), args.force)
    trajs, corrupt = metrics.load_logs(paths)
    report = metrics.build_report(trajs, corrupt)
    metrics.write_report(report, out)
    o = report["overall"]
    print(
        f"{o['n_episodes']} episodes, avg_final_score {_fmt(o['avg_final_score'])}, "
        f"success_rate {_fmt(o['success_rate'])}, aborted {o['abort_count']}, corrupt {corrupt}"
    )
    return EXIT_OK


# -- parser --------------------------------------------------------------------


def _run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--tasks", help="task set JSON")
    p.add_argument("--env", choices=("craftsim", "bridge"))
    p.add_argument("--endpoint", help="bridge endpoint: tcp://host:port or stdio:<command>")
    p.add_argument("--actor", choices=("scripted", "remote"))
    p.add_argument("--m", "--candidates", dest="m", type=int, help="candidates per step (M)")
    p.add_argument("--fidelity", type=float, help="scripted actor: probability of the gold action")
    p.add_argument("--tracking", choices=("open-loop", "closed-loop"))
    p.add_argument("--critic", choices=("oracle", "remote", "none", "off"))
    p.add_argument("--critic-noise", type=float, help="probability of replacing a grade at random")
    p.add_argument("--max-steps", type=int, help="step limit T (default max(10, 4 x oracle length))")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", help="output root (default runs)")
    p.add_argument("--run-id")
    p.add_argument("--force", action="store_true", help="overwrite an existing run directory")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cgiagent", description="Critique-guided agent runs, datasets and metrics.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-tasks", help="generate a craftsim task set")
    p.add_argument("--depth", type=int, required=True)
    p.add_argument("--branching", type=int, default=1)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tag-prob", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_gen_tasks)

    p = sub.add_parser("run", help="one critique-guided pass over a task set")
    _run_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("iterate", help="K rounds of exploration and dataset emission")
    _run_flags(p)
    p.add_argument("--rounds", type=int, help="K (default 3)")
    p.add_argument("--trainer-hook", help="command template with {mixed_dataset}, {round}, {base_endpoint}")
    p.add_argument("--beta", help="agentic share of the mixed dataset (default 0.8)")
    p.add_argument("--general", help="general corpus file")
    p.add_argument("--mix-total", type=int)
    p.add_argument("--mix-seed", type=int)
    p.add_argument("--only-revised", action="store_true", help="keep only refine steps that changed candidate 0")
    p.set_defaults(func=cmd_iterate)

    p = sub.add_parser("collect-critiques", help="harvest expert critiques from successful episodes")
    _run_flags(p)
    p.add_argument("--rounds", type=int, help="exploration passes (default 3)")
    p.set_defaults(func=cmd_collect_critiques)

    p = sub.add_parser("mix", help="beta-weighted mix of agentic and general records")
    p.add_argument("--beta", required=True)
    p.add_argument("--agentic", nargs="+", required=True)
    p.add_argument("--general")
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_mix)

    p = sub.add_parser("eval", help="aggregate metrics over run directories")
    p.add_argument("runs", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_eval)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(name)s: %(message)s")
    args.stop = threading.Event()
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"{ap.prog} {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BackendUnavailable as exc:
        print(f"error: backend unavailable: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        args.stop.set()
        print("interrupted; partial logs were flushed", file=sys.stderr)
        return EXIT_RUNTIME
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(main())
