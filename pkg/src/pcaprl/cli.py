"""Command-line entry point.

Subcommands: fit, train, run, sweep, compare, repeat, daemon, workload.
Every experiment takes a root seed and writes CSV/JSON/.dat outputs that are
byte-identical across re-runs with the same seed (no wall-clock fields).
"""

from __future__ import annotations

import argparse
import json
from dataclasses import replace
from pathlib import Path

from . import config as cfgmod
from . import controllers, harness, nrmd, ppo, sysid
from .simenv import RewardWeights, run_episode


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _sections(args) -> dict:
    return cfgmod.load_config(args.config) if args.config else {}


def cmd_fit(args) -> int:
    sections = _sections(args)
    out = _out_dir(args)
    if args.simulate:
        model = cfgmod.model_from_config(sections)
        levels = sysid.default_pcap_levels(model.pcap_min, model.pcap_max, args.levels)
        pairs = sysid.run_step_experiment(model, levels, noise_sd=args.noise_sd,
                                          seed=args.seed)
        input_path = out / "steps.csv"
        sysid.save_pairs(pairs, input_path)
    elif args.input:
        input_path = Path(args.input)
        pairs = sysid.load_pairs(input_path)
    else:
        raise SystemExit("fit needs --input steps.csv or --simulate")

    fit = sysid.fit_static_model(pairs, known_a=args.a, known_b=args.b)
    if not fit.converged:
        print("fit did not converge")
        return 1
    model = sysid.derive_linear_model(fit, tau=args.tau)
    model.save_json(args.out or out / "model.json")
    harness.save_dat(out / "fig_static.dat", "pcap_w progress_hz fitted_hz",
                     [(p.pcap, p.steady_progress, model.static_progress(p.pcap))
                      for p in pairs])
    print(f"fitted alpha={model.alpha:.6g} beta={model.beta:.6g} "
          f"k_l={model.k_l:.6g} (residual {fit.residual_norm:.3g}, "
          f"{fit.iterations} iterations)")
    return 0


def cmd_train(args) -> int:
    sections = _sections(args)
    out = _out_dir(args)
    env_cfg = cfgmod.env_from_config(sections, seed=args.seed)
    if args.c1 is not None or args.c2 is not None:
        weights = RewardWeights(c1=args.c1 if args.c1 is not None else env_cfg.weights.c1,
                                c2=args.c2 if args.c2 is not None else env_cfg.weights.c2)
        env_cfg = replace(env_cfg, weights=weights)
    if args.pcap_max is not None:
        env_cfg = replace(env_cfg, model=env_cfg.model.with_range(
            env_cfg.model.pcap_min, args.pcap_max))
    ppo_cfg = cfgmod.ppo_from_config(sections, seed=args.seed)
    if args.updates is not None:
        ppo_cfg = replace(ppo_cfg, total_updates=args.updates)

    policy, curve = ppo.train(env_cfg, ppo_cfg)
    policy_path = Path(args.out) if args.out else out / "policy.json"
    ppo.save_policy(policy, policy_path, config=ppo_cfg)
    ppo.save_learning_curve(curve, out / "learning_curve.csv")
    record = ppo.evaluate_policy(policy, replace(env_cfg, noise_sd=0.0))
    print(f"trained policy -> {policy_path}; deterministic episode: "
          f"{record.execution_time_s:.1f} s, {record.energy_kj:.2f} kJ")
    return 0


def cmd_run(args) -> int:
    sections = _sections(args)
    out = _out_dir(args)
    env_cfg = cfgmod.env_from_config(sections, seed=args.seed)
    if args.noise_sd is not None:
        env_cfg = replace(env_cfg, noise_sd=args.noise_sd)
    spec = cfgmod.controller_from_config(sections, {
        "controller": args.controller, "policy_path": args.policy_path,
        "epsilon": args.epsilon, "const_pcap_w": args.const_pcap_w,
    })
    controller = controllers.build_controller(spec, env_cfg.model, env_cfg.dt)
    record = run_episode(env_cfg, controller, label=spec.kind)
    record.save_trace_csv(out / "trace.csv")
    record.save_summary_json(out / "summary.json")
    print(f"{spec.kind}: {record.execution_time_s:.1f} s, "
          f"{record.energy_kj:.2f} kJ, truncated={record.truncated}")
    return 0


def cmd_sweep(args) -> int:
    sections = _sections(args)
    out = _out_dir(args)
    env_cfg = cfgmod.env_from_config(sections, seed=args.seed)
    ppo_cfg = cfgmod.ppo_from_config(sections, seed=args.seed)
    if args.updates is not None:
        ppo_cfg = replace(ppo_cfg, total_updates=args.updates)
    if args.cells:
        cells = []
        for cell in args.cells.split(","):
            c1, c2 = cell.split(":")
            cells.append((float(c1), float(c2)))
    else:
        step = 0.1 if args.full else cfgmod.experiment_from_config(sections)["sweep_step"]
        cells = harness.grid_cells(step=step)
    rows = harness.sweep_rewards(env_cfg, cells, ppo_cfg, root_seed=args.seed)
    harness.save_pareto_csv(rows, out / "pareto.csv")
    harness.save_dat(out / "fig_pareto.dat",
                     "energy_kj execution_time_s c1 c2 on_frontier",
                     [(r.energy_kj, r.execution_time_s, r.c1, r.c2, int(r.on_frontier))
                      for r in rows if not r.diverged])
    frontier = [r for r in rows if r.on_frontier]
    print(f"swept {len(rows)} cells; {len(frontier)} on the frontier")
    return 0


def cmd_compare(args) -> int:
    sections = _sections(args)
    out = _out_dir(args)
    exp = cfgmod.experiment_from_config(sections)
    env_cfg = cfgmod.env_from_config(sections, seed=args.seed)
    epsilons = [float(e) for e in args.epsilons.split(",")] if args.epsilons \
        else exp["epsilons"]
    policies = args.policies.split(",") if args.policies else []
    rows = harness.compare_pi_rl(epsilons, policies, env_cfg, root_seed=args.seed,
                                 noise_sd=args.noise_sd or 0.0)
    harness.save_compare_csv(rows, out / "compare.csv")
    harness.save_dat(out / "fig_compare.dat",
                     "energy_kj execution_time_s family epsilon",
                     [(r.energy_kj, r.execution_time_s, r.family,
                       -1.0 if r.epsilon is None else r.epsilon) for r in rows])
    for r in rows:
        print(f"{r.label}: {r.execution_time_s:.1f} s, {r.energy_kj:.2f} kJ")
    return 0


def cmd_repeat(args) -> int:
    sections = _sections(args)
    out = _out_dir(args)
    exp = cfgmod.experiment_from_config(sections)
    env_cfg = cfgmod.env_from_config(sections, seed=args.seed)
    specs = {
        "min": controllers.min_spec(),
        "max": controllers.max_spec(),
    }
    if args.policy:
        specs["rl"] = controllers.spec_with_policy(args.policy)
    nodes = args.nodes if args.nodes is not None else exp["nodes"]
    records, stats = harness.repeatability(
        specs, env_cfg, args.n or exp["n_per_controller"], root_seed=args.seed,
        noise_sd=exp["eval_noise_sd"], nodes=nodes,
        node_jitter=exp["node_jitter"],
        executions_per_node=args.per_node or exp["executions_per_node"])
    harness.save_records_csv(records, out / "records.csv")
    harness.save_stats_json(stats, out / "stats.json")
    harness.save_dat(out / "fig_repeat.dat", "energy_kj execution_time_s label",
                     [(r.energy_kj, r.execution_time_s, label)
                      for label, runs in records.items() for r in runs])
    power_rows = []
    for label, runs in records.items():
        for t, p in zip(runs[0].t_s, runs[0].power_w):
            power_rows.append((t, p, label))
    harness.save_dat(out / "fig_power.dat", "t_s power_w label", power_rows)
    for label, s in stats.items():
        print(f"{label}: time {s.mean_time_s:.2f} +/- {s.sd_time_s:.2f} s, "
              f"energy {s.mean_energy_kj:.2f} +/- {s.sd_energy_kj:.2f} kJ (n={s.n})")
    return 0


def cmd_daemon(args) -> int:
    sections = _sections(args)
    env_cfg = cfgmod.env_from_config(sections, seed=args.seed)
    spec = cfgmod.controller_from_config(sections, {
        "controller": args.controller, "policy_path": args.policy_path,
        "epsilon": args.epsilon, "const_pcap_w": args.const_pcap_w,
    })
    out = _out_dir(args)
    summary = nrmd.serve(args.socket, spec, env_cfg.model, env_cfg.weights,
                         dt=env_cfg.dt,
                         time_mode="wallclock" if args.wallclock else "simulated",
                         trace_path=out / "trace.csv",
                         summary_path=out / "summary.json")
    print(f"episode served: {summary['execution_time_s']:.1f} s, "
          f"{summary['energy_kj']:.2f} kJ, truncated={summary['truncated']}")
    return 0


def cmd_workload(args) -> int:
    sections = _sections(args)
    env_cfg = cfgmod.env_from_config(sections, seed=args.seed)
    try:
        summary = nrmd.workload_client(
            args.socket, env_cfg.model,
            args.total or env_cfg.total_heartbeats, seed=args.seed,
            dt=env_cfg.dt, noise_sd=args.noise_sd or 0.0, emission=args.emission)
    except nrmd.DaemonUnreachable as exc:
        print(exc)
        return 1
    print(json.dumps(summary, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI or JSON run configuration")
    common.add_argument("--seed", type=int, default=0, help="root seed")
    common.add_argument("--out-dir", default="out", help="output directory")

    parser = argparse.ArgumentParser(
        prog="pcaprl",
        description="Power-cap control experiments on a simulated compute node")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", parents=[common],
                       help="fit the static model from step-response pairs")
    p.add_argument("--input", help="CSV of pcap_w,progress_hz pairs")
    p.add_argument("--simulate", action="store_true",
                   help="generate pairs from the configured model first")
    p.add_argument("--levels", type=int, default=sysid.DEFAULT_LEVEL_COUNT)
    p.add_argument("--noise-sd", type=float, default=0.0)
    p.add_argument("--a", type=float, default=1.0, help="actuator slope calibration")
    p.add_argument("--b", type=float, default=0.0, help="actuator offset calibration (W)")
    p.add_argument("--tau", type=float, default=sysid.DEFAULT_TAU_S)
    p.add_argument("--out", help="model JSON path")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("train", parents=[common], help="train a PPO policy")
    p.add_argument("--c1", type=float)
    p.add_argument("--c2", type=float)
    p.add_argument("--updates", type=int)
    p.add_argument("--pcap-max", type=float,
                   help="cap the agent's actuator range during training")
    p.add_argument("--out", help="policy JSON path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("run", parents=[common], help="run one controlled episode")
    p.add_argument("--controller", default="max",
                   choices=["rl", "pi", "max", "min", "const"])
    p.add_argument("--policy-path")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--const-pcap-w", type=float)
    p.add_argument("--noise-sd", type=float)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", parents=[common],
                       help="reward-weight Pareto sweep")
    p.add_argument("--cells", help="explicit cells as c1:c2,c1:c2,...")
    p.add_argument("--full", action="store_true",
                   help="full-resolution 0.1 grid instead of the default 0.5")
    p.add_argument("--updates", type=int, help="training updates per cell")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare", parents=[common],
                       help="PI setpoint sweep vs trained policies")
    p.add_argument("--epsilons", help="comma-separated degradation factors")
    p.add_argument("--policies", help="comma-separated policy JSON paths")
    p.add_argument("--noise-sd", type=float)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("repeat", parents=[common],
                       help="repeatability statistics for min/max/rl")
    p.add_argument("--n", type=int, help="episodes per controller")
    p.add_argument("--policy", help="trained policy for the rl controller")
    p.add_argument("--nodes", type=int, help="number of simulated nodes")
    p.add_argument("--per-node", type=int)
    p.set_defaults(func=cmd_repeat)

    p = sub.add_parser("daemon", parents=[common],
                       help="serve one control episode over a local socket")
    p.add_argument("--socket", required=True)
    p.add_argument("--controller", default="max",
                   choices=["rl", "pi", "max", "min", "const"])
    p.add_argument("--policy-path")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--const-pcap-w", type=float)
    p.add_argument("--wallclock", action="store_true",
                   help="tick on wall time instead of heartbeat timestamps")
    p.set_defaults(func=cmd_daemon)

    p = sub.add_parser("workload", parents=[common],
                       help="synthetic workload client for the daemon")
    p.add_argument("--socket", required=True)
    p.add_argument("--total", type=int, help="heartbeats to complete")
    p.add_argument("--noise-sd", type=float)
    p.add_argument("--emission", default="uniform", choices=["uniform", "poisson"])
    p.set_defaults(func=cmd_workload)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
