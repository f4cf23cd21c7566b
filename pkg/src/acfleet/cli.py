"""Command-line entry point: ``acfleet <subcommand> [options]``.

Exit codes: 0 success, 2 configuration or usage error, 3 numeric divergence.
"""

from __future__ import annotations

import argparse
import functools
import json
import logging
import sys
import warnings
from dataclasses import asdict
from pathlib import Path

from . import ConfigError, NonFiniteResult, __version__
from .agents.policies import IncompatibleCheckpoint
from .agents.ppo import DivergenceDetected
from .bench.config import ExperimentConfig, load_config, parse_seeds
from .bench.io import write_csv, write_jsonl
from .signal import BaseSignalTable, TableClampWarning, TableGrid, build_base_table

log = logging.getLogger("acfleet")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 2, 3


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI file with [environment], [agent] and [experiment] sections")
    p.add_argument("--seed", help="seed, list (1,3,7) or inclusive range (1..10)")
    p.add_argument("--out-dir", default=".", help="directory for CSV/JSONL/checkpoint outputs")
    p.add_argument("--jobs", type=int, help="parallel worker processes for independent seeds")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="acfleet", description="AC fleet frequency-regulation simulator")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-table", help="generate the base-demand lookup table")
    _common(p)
    p.add_argument("--coarse", action="store_true", help="small grid for quick experiments")
    p.add_argument("--validate", type=int, default=200, help="random off-grid checks against simulation")

    p = sub.add_parser("simulate", help="roll out a baseline or checkpoint; writes trajectory JSONL and metrics CSV")
    _common(p)
    p.add_argument("--controller", help="bbc, greedy, greedy-available, mpc or checkpoint")
    p.add_argument("--checkpoint")
    p.add_argument("--horizon", type=int)
    p.add_argument("--record-stride", type=int, default=1)

    p = sub.add_parser("train", help="train a learning agent")
    _common(p)
    p.add_argument("--agent", choices=("ppo-he", "ppo-nc", "tarmac", "dqn"))
    p.add_argument("--episodes", type=int)
    p.add_argument("--episode-steps", type=int)

    p = sub.add_parser("evaluate", help="benchmark a controller over seeds; writes a metrics CSV")
    _common(p)
    p.add_argument("--controller")
    p.add_argument("--checkpoint")
    p.add_argument("--horizon", type=int)

    p = sub.add_parser("scaling", help="per-agent RMSE vs fleet size plus the independent-groups law")
    _common(p)
    p.add_argument("--controller")
    p.add_argument("--checkpoint")
    p.add_argument("--sizes", help="comma list of fleet sizes")
    p.add_argument("--horizon", type=int)

    p = sub.add_parser("robustness", help="communication faults, heterogeneity and environment shifts")
    _common(p)
    p.add_argument("--controller")
    p.add_argument("--checkpoint")
    p.add_argument("--horizon", type=int)

    p = sub.add_parser("timing", help="wall time of action selection")
    _common(p)
    p.add_argument("--controller", action="append", help="repeatable; defaults to bbc and greedy")
    p.add_argument("--checkpoint")
    p.add_argument("--sizes", default="10,1000")
    p.add_argument("--steps", type=int, default=25)
    return parser


# ---------------------------------------------------------------------------- helpers


def _experiment(args) -> ExperimentConfig:
    exp = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        exp.seeds = parse_seeds(args.seed)
    if args.jobs is not None:
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        exp.jobs = args.jobs
    for name in ("controller", "checkpoint"):
        if getattr(args, name, None):
            exp.agent[name] = getattr(args, name)
    ckpt = exp.agent.get("checkpoint")
    if ckpt and Path(ckpt).is_file():
        from .agents.deploy import env_config_for

        # observation scaling is part of the policy, not of the scenario
        exp.env = env_config_for(ckpt, exp.env)
    if getattr(args, "horizon", None):
        exp.horizon = args.horizon
        if exp.horizon <= exp.warmup:
            exp.warmup = 0
    return exp


def _table(exp: ExperimentConfig):
    if not exp.table:
        return None
    path = Path(exp.table)
    if not path.is_file():
        raise ConfigError(f"table file not found: {path}")
    return BaseSignalTable.load(path)


def controller_factory(exp: ExperimentConfig, name: str | None = None):
    """Picklable zero-argument factory for the configured controller."""
    from .baselines import BangBang, Greedy, Mpc
    from .agents.deploy import LearnedController

    name = name or exp.controller
    if name == "bbc":
        return BangBang
    if name == "greedy":
        return Greedy
    if name == "greedy-available":
        return functools.partial(Greedy, count_locked=False)
    if name == "mpc":
        return functools.partial(Mpc, horizon=exp.agent.get("mpc_horizon", 4))
    if name == "checkpoint":
        path = exp.agent.get("checkpoint")
        if not path or not Path(path).is_file():
            raise ConfigError(f"checkpoint not found: {path}")
        return functools.partial(LearnedController, path, exp.agent.get("Nc_de"))
    raise ConfigError(f"unknown controller {name!r}")


def _summary_rows(report) -> list[dict]:
    rows = []
    for m in report.per_seed:
        rows.append({"controller": report.controller, "seed": m["seed"], "signal_rmse": m["signal_rmse"],
                     "temp_rmse": m["temp_rmse"], "max_temp_rmse": m["max_temp_rmse"], "diverged": m["diverged"]})
    summary = report.summary()
    for stat in ("mean", "std"):
        rows.append({"controller": report.controller, "seed": stat,
                     **{k: summary[f"{k}_{stat}"] for k in ("signal_rmse", "temp_rmse", "max_temp_rmse")}})
    return rows


# ---------------------------------------------------------------------------- subcommands


def cmd_gen_table(args, out: Path) -> int:
    exp = _experiment(args)
    grid = TableGrid()
    if args.coarse:
        grid = TableGrid(outdoor=(22.0, 32.0, 42.0), th_gaps=(-1.0, 0.0, 1.0, 10.0), tm_gaps=(-1.0, 0.0, 10.0),
                         ka_values=(15000.0,), presets=grid.presets[:1])
    table = build_base_table(grid, validate=args.validate, seed=exp.seeds[0])
    table.save(out / "base_table.acbt")
    rows = []
    g = table.grid
    for p in range(len(g.presets)):
        for k, ka in enumerate(g.ka_values):
            for o, To in enumerate(g.outdoor):
                for h, th in enumerate(g.th_gaps):
                    for m, tm in enumerate(g.tm_gaps):
                        rows.append({"preset": p, "Ka": ka, "outdoor": To, "th_gap": th, "tm_gap": tm,
                                     "power": table.values[p, k, o, h, m]})
    write_csv(out / "base_table.csv", rows)
    print(f"wrote {out / 'base_table.acbt'} ({table.values.size} nodes)")
    return EXIT_OK


def cmd_simulate(args, out: Path) -> int:
    from .bench.metrics import run_episode
    from .env import FleetEnv

    exp = _experiment(args)
    factory = controller_factory(exp)
    seed = exp.seeds[0]
    env = FleetEnv(exp.env, _table(exp))
    records, metrics = run_episode(factory(), exp.env, seed=seed, horizon=exp.horizon, warmup=exp.warmup,
                                   record_stride=max(1, args.record_stride), env=env)
    write_jsonl(out / "trajectory.jsonl", records)
    write_csv(out / "metrics.csv", [{"controller": exp.controller, "seed": seed, **metrics}])
    print(json.dumps({"seed": seed, **metrics}))
    return EXIT_DIVERGED if metrics["diverged"] else EXIT_OK


def cmd_train(args, out: Path) -> int:
    from .agents.dqn import DqnConfig, dqn_train
    from .agents.ppo import PpoConfig, ppo_train

    exp = _experiment(args)
    agent = args.agent or exp.agent.get("algorithm", "ppo-he")
    episodes = args.episodes or exp.agent.get("episodes") or exp.agent.get("epochs") or 200
    steps = args.episode_steps or exp.agent.get("episode_steps") or 16000
    seed = exp.seeds[0]
    env_cfg = exp.env.with_(seed=seed)
    log_path = out / "train_log.jsonl"
    if agent == "dqn":
        kw = {k: exp.agent[k] for k in ("lr", "minibatch", "gamma", "random_start") if k in exp.agent}
        ck = dqn_train(env_cfg, DqnConfig(episodes=episodes, episode_steps=steps, seed=seed, **kw), log_path)
    else:
        kw = {k: exp.agent[k] for k in ("lr", "minibatch", "updates", "gamma", "gae_lambda", "random_start",
                                          "lr_final_factor", "validate_every") if k in exp.agent}
        make = PpoConfig.tarmac_defaults if agent == "tarmac" else PpoConfig
        cfg = make(epochs=episodes, episode_steps=steps, seed=seed, **kw)
        ck = ppo_train(env_cfg, cfg, {"ppo-he": "he", "ppo-nc": "nc", "tarmac": "tarmac"}[agent], log_path)
    path = out / f"{agent}.acck"
    ck.save(path)
    tail = ck.metadata.get("history_tail", [])
    last = {k: v for k, v in (tail[-1] if tail else {}).items() if k != "validation"}
    write_csv(out / "train_summary.csv", [{"agent": agent, "seed": seed, "episodes": episodes,
                                           "episode_steps": steps, **last,
                                           "selected_epoch": ck.metadata.get("selected_epoch", "")}])
    print(f"wrote {path}")
    return EXIT_OK


def cmd_evaluate(args, out: Path) -> int:
    from .bench.metrics import evaluate

    exp = _experiment(args)
    report = evaluate(controller_factory(exp), exp.env, exp.seeds, exp.horizon, exp.warmup, exp.jobs,
                      name=exp.controller, table=_table(exp))
    write_csv(out / "metrics.csv", _summary_rows(report))
    print(json.dumps(report.summary()))
    return EXIT_DIVERGED if any(m["diverged"] for m in report.per_seed) else EXIT_OK


def cmd_scaling(args, out: Path) -> int:
    from .bench.scaling import group_ratio_table, scaling_study

    exp = _experiment(args)
    sizes = tuple(int(v) for v in args.sizes.split(",")) if args.sizes else exp.sizes
    rows = scaling_study(controller_factory(exp), exp.env, sizes, exp.seeds, exp.horizon, exp.warmup, exp.jobs,
                         table=_table(exp))
    write_csv(out / "scaling.csv", rows)
    write_csv(out / "group_law.csv", [asdict(r) | {"relative_error": r.relative_error}
                                      for r in group_ratio_table(seed=exp.seeds[0])])
    for r in rows:
        print(f"N={r['N']}: signal RMSE {r['signal_rmse_mean']:.1f} W")
    return EXIT_OK


def cmd_robustness(args, out: Path) -> int:
    from .bench.robustness import RobustnessSpec, robustness_suite

    exp = _experiment(args)
    spec = RobustnessSpec(p_d=tuple(exp.p_d_values))
    rows = robustness_suite(controller_factory(exp), exp.env, spec, exp.seeds, exp.horizon, exp.warmup, exp.jobs,
                            table=_table(exp))
    write_csv(out / "robustness.csv", rows)
    for r in rows:
        print(f"{r['variant']}: signal RMSE {r['signal_rmse_mean']:.1f} W (x{r['signal_ratio']:.2f})")
    return EXIT_OK


def cmd_timing(args, out: Path) -> int:
    from .bench.timing import timing_report

    exp = _experiment(args)
    names = args.controller or (["bbc", "greedy"] + (["checkpoint"] if exp.agent.get("checkpoint") else []))
    factories = {n: controller_factory(exp, n) for n in names}
    sizes = tuple(int(v) for v in args.sizes.split(","))
    rows = timing_report(factories, sizes, args.steps, exp.seeds[0], base_config=exp.env)
    # wall-clock figures are inherently run-dependent; this is the one non-reproducible table
    write_csv(out / "timing.csv", rows)
    for r in rows:
        print(f"{r['controller']} N={r['N']}: {r['selection_seconds']:.3g} s per selection")
    return EXIT_OK


COMMANDS = {
    "gen-table": cmd_gen_table, "simulate": cmd_simulate, "train": cmd_train, "evaluate": cmd_evaluate,
    "scaling": cmd_scaling, "robustness": cmd_robustness, "timing": cmd_timing,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if not args.verbose:
        warnings.simplefilter("ignore", TableClampWarning)
    out = Path(args.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args, out)
    except (ConfigError, IncompatibleCheckpoint) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonFiniteResult, DivergenceDetected) as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
