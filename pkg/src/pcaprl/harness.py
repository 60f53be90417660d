"""Experiment orchestration: reward-weight Pareto sweep, PI-vs-RL
comparison, same-node and cross-node repeatability, summary statistics and
plot-data emission.

All randomness flows from one root seed through numpy SeedSequence spawning:
root -> one child per experiment cell -> one grandchild per episode.  Tables
carry the seeds they were produced from, so any row can be reproduced.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace, asdict
from pathlib import Path

import numpy as np

from .model import ModelParams
from .simenv import EnvConfig, RewardWeights, ExperimentRecord, run_episode, \
    DEFAULT_EVAL_NOISE_SD_HZ
from .controllers import ControllerSpec, build_controller
from . import ppo


@dataclass(frozen=True)
class SummaryStats:
    mean_time_s: float
    sd_time_s: float
    mean_energy_kj: float
    sd_energy_kj: float
    n: int


def summarize(records) -> SummaryStats:
    """Arithmetic mean and sample (n-1) standard deviation; sd is 0 for n=1."""
    if not records:
        raise ValueError("need at least one record")
    times = [r.execution_time_s for r in records]
    energies = [r.energy_kj for r in records]
    n = len(records)
    if n == 1:
        return SummaryStats(times[0], 0.0, energies[0], 0.0, 1)
    return SummaryStats(float(np.mean(times)), float(np.std(times, ddof=1)),
                        float(np.mean(energies)), float(np.std(energies, ddof=1)), n)


def spawn_seeds(root_seed: int, count: int) -> list[int]:
    """Deterministic child seeds: one spawn per experiment or episode."""
    children = np.random.SeedSequence(root_seed).spawn(count)
    return [int(c.generate_state(1)[0]) for c in children]


def perturb_model(model: ModelParams, rel_jitter: float,
                  rng: np.random.Generator) -> ModelParams:
    """Simulated "different hardware": jitter (alpha, beta, k_l) by a
    uniform relative amount, leaving the actuator calibration alone."""
    def jit(x):
        return x * (1.0 + rng.uniform(-rel_jitter, rel_jitter))
    return replace(model, alpha=jit(model.alpha), beta=jit(model.beta),
                   k_l=jit(model.k_l))


# -- Pareto sweep -------------------------------------------------------------

@dataclass
class ParetoRow:
    c1: float
    c2: float
    execution_time_s: float
    energy_kj: float
    diverged: bool = False
    on_frontier: bool = False
    seed: int = 0


def grid_cells(c_max: float = 10.0, step: float = 0.5,
               include: tuple = ((0.0, 4.44), (1.052, 2.22))) -> list[tuple[float, float]]:
    """(c1, c2) grid from 0 to c_max in the given step, minus (0, 0), plus
    any explicitly included cells."""
    if step <= 0:
        raise ValueError("step must be positive")
    ticks = np.arange(0.0, c_max + step / 2.0, step)
    cells = [(float(c1), float(c2)) for c1 in ticks for c2 in ticks
             if not (c1 == 0.0 and c2 == 0.0)]
    for cell in include:
        if cell not in cells:
            cells.append((float(cell[0]), float(cell[1])))
    return cells


def pareto_frontier(rows: list[ParetoRow]) -> None:
    """Mark rows not dominated on (time, energy) by any other row."""
    for row in rows:
        if row.diverged:
            row.on_frontier = False
            continue
        dominated = any(
            other is not row and not other.diverged
            and other.execution_time_s <= row.execution_time_s
            and other.energy_kj <= row.energy_kj
            and (other.execution_time_s < row.execution_time_s
                 or other.energy_kj < row.energy_kj)
            for other in rows)
        row.on_frontier = not dominated


def sweep_rewards(env_cfg: EnvConfig, cells: list[tuple[float, float]],
                  ppo_cfg: ppo.PpoConfig, root_seed: int = 0) -> list[ParetoRow]:
    """Train one policy per (c1, c2) cell and evaluate it deterministically.

    Evaluation runs with zero noise on the training model; a cell whose
    training diverges is flagged and the sweep continues.
    """
    seeds = spawn_seeds(root_seed, len(cells))
    rows = []
    for (c1, c2), seed in zip(cells, seeds):
        cell_cfg = replace(env_cfg, weights=RewardWeights(c1, c2), noise_sd=0.0,
                           seed=seed)
        row = ParetoRow(c1=c1, c2=c2, execution_time_s=float("nan"),
                        energy_kj=float("nan"), seed=seed)
        try:
            policy, _ = ppo.train(cell_cfg, replace(ppo_cfg, seed=seed))
            if not policy.finite():
                raise ppo.TrainingDiverged("non-finite weights")
            record = ppo.evaluate_policy(policy, cell_cfg)
            row.execution_time_s = record.execution_time_s
            row.energy_kj = record.energy_kj
        except (ppo.TrainingDiverged, FloatingPointError):
            row.diverged = True
        rows.append(row)
    pareto_frontier(rows)
    return rows


# -- repeatability ------------------------------------------------------------

def run_controller_episodes(spec: ControllerSpec, env_cfg: EnvConfig, seeds,
                            label: str, model: ModelParams | None = None) -> list[ExperimentRecord]:
    model = model if model is not None else env_cfg.model
    records = []
    for seed in seeds:
        cfg = replace(env_cfg, model=model, seed=seed)
        controller = build_controller(spec, model, cfg.dt)
        records.append(run_episode(cfg, controller, label=label))
    return records


def repeatability(specs: dict[str, ControllerSpec], env_cfg: EnvConfig,
                  n_per_controller: int, root_seed: int = 0,
                  noise_sd: float = DEFAULT_EVAL_NOISE_SD_HZ,
                  nodes: int = 1, node_jitter: float = 0.05,
                  executions_per_node: int = 3):
    """Seeded repeatability experiment.

    Single-node mode runs n_per_controller noisy episodes per controller on
    env_cfg.model.  With nodes > 1, each node is a jittered model and every
    controller runs executions_per_node episodes per node.
    """
    if n_per_controller < 2 and nodes == 1:
        raise ValueError("need at least 2 executions per controller")
    env_cfg = replace(env_cfg, noise_sd=noise_sd)
    exp_seeds = spawn_seeds(root_seed, len(specs) + 1)
    node_rng = np.random.default_rng(exp_seeds[-1])
    if nodes > 1:
        node_models = [perturb_model(env_cfg.model, node_jitter, node_rng)
                       for _ in range(nodes)]
    else:
        node_models = [env_cfg.model]

    records: dict[str, list[ExperimentRecord]] = {}
    for (label, spec), exp_seed in zip(specs.items(), exp_seeds):
        runs = []
        if nodes > 1:
            node_seeds = spawn_seeds(exp_seed, nodes)
            for node_model, node_seed in zip(node_models, node_seeds):
                ep_seeds = spawn_seeds(node_seed, executions_per_node)
                runs.extend(run_controller_episodes(spec, env_cfg, ep_seeds,
                                                    label, model=node_model))
        else:
            ep_seeds = spawn_seeds(exp_seed, n_per_controller)
            runs = run_controller_episodes(spec, env_cfg, ep_seeds, label)
        records[label] = runs
    stats = {label: summarize(runs) for label, runs in records.items()}
    return records, stats


# -- PI vs RL comparison --------------------------------------------------------

@dataclass
class CompareRow:
    family: str
    label: str
    epsilon: float | None
    execution_time_s: float
    energy_kj: float
    seed: int


def compare_pi_rl(epsilons, policy_paths, env_cfg: EnvConfig, root_seed: int = 0,
                  noise_sd: float = 0.0) -> list[CompareRow]:
    """Evaluate PI at each degradation factor and each trained policy on
    identical seeds; rows are tagged by controller family for plotting."""
    if not epsilons and not policy_paths:
        raise ValueError("nothing to compare")
    env_cfg = replace(env_cfg, noise_sd=noise_sd)
    seed = spawn_seeds(root_seed, 1)[0]
    rows = []
    for eps in epsilons:
        spec = ControllerSpec(kind="pi", epsilon=eps)
        rec = run_controller_episodes(spec, env_cfg, [seed], f"pi(eps={eps})")[0]
        rows.append(CompareRow("pi", rec.label, eps, rec.execution_time_s,
                               rec.energy_kj, seed))
    for path in policy_paths:
        spec = ControllerSpec(kind="rl", policy_path=str(path))
        rec = run_controller_episodes(spec, env_cfg, [seed], f"rl({Path(path).stem})")[0]
        rows.append(CompareRow("rl", rec.label, None, rec.execution_time_s,
                               rec.energy_kj, seed))
    return rows


# -- table emission -------------------------------------------------------------

def save_pareto_csv(rows: list[ParetoRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["c1", "c2", "execution_time_s", "energy_kj",
                         "diverged", "on_frontier", "seed"])
        for r in rows:
            writer.writerow([repr(r.c1), repr(r.c2), repr(r.execution_time_s),
                             repr(r.energy_kj), int(r.diverged),
                             int(r.on_frontier), r.seed])


def save_compare_csv(rows: list[CompareRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["family", "label", "epsilon", "execution_time_s",
                         "energy_kj", "seed"])
        for r in rows:
            writer.writerow([r.family, r.label,
                             "" if r.epsilon is None else repr(r.epsilon),
                             repr(r.execution_time_s), repr(r.energy_kj), r.seed])


def save_records_csv(records: dict[str, list[ExperimentRecord]], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "seed", "execution_time_s", "energy_kj", "truncated"])
        for label, runs in records.items():
            for r in runs:
                writer.writerow([label, r.seed, repr(r.execution_time_s),
                                 repr(r.energy_kj), int(r.truncated)])


def save_stats_json(stats: dict[str, SummaryStats], path) -> None:
    doc = {label: asdict(s) for label, s in stats.items()}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def save_dat(path, header: str, rows) -> None:
    """Gnuplot-ready whitespace table with a # comment header."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# {header}\n")
        for row in rows:
            fh.write(" ".join(repr(v) if isinstance(v, float) else str(v)
                              for v in row) + "\n")
