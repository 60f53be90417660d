"""Harness tests: statistics, Pareto frontier marking, seed derivation and
the repeatability/compare experiment plumbing."""

from types import SimpleNamespace

import numpy as np
import pytest

from pcaprl.model import ModelParams
from pcaprl.simenv import EnvConfig, RewardWeights
from pcaprl.controllers import ControllerSpec, min_spec, max_spec
from pcaprl.harness import (SummaryStats, summarize, spawn_seeds, perturb_model,
                            ParetoRow, pareto_frontier, grid_cells,
                            repeatability, compare_pi_rl, run_controller_episodes)

NODE = ModelParams.default()


def rec(time_s, energy_kj):
    return SimpleNamespace(execution_time_s=time_s, energy_kj=energy_kj)


def env_cfg(**kwargs):
    defaults = dict(model=NODE, weights=RewardWeights(1.052, 2.22),
                    total_heartbeats=2000, horizon_cap=1200, seed=0)
    defaults.update(kwargs)
    return EnvConfig(**defaults)


class TestSummarize:
    def test_hand_arithmetic(self):
        stats = summarize([rec(2.0, 2.0), rec(4.0, 4.0)])
        assert stats.mean_time_s == 3.0
        assert stats.sd_time_s == pytest.approx(np.sqrt(2.0))
        assert stats.n == 2

    def test_single_record_sd_zero(self):
        stats = summarize([rec(5.0, 1.0)])
        assert stats == SummaryStats(5.0, 0.0, 1.0, 0.0, 1)

    def test_permutation_invariance(self):
        records = [rec(float(t), float(t) / 3) for t in (9, 1, 5, 7, 3)]
        fwd = summarize(records)
        rev = summarize(list(reversed(records)))
        assert fwd.mean_time_s == pytest.approx(rev.mean_time_s, abs=1e-12)
        assert fwd.sd_time_s == pytest.approx(rev.sd_time_s, abs=1e-12)

    def test_matches_two_pass_oracle(self):
        rng = np.random.default_rng(0)
        times = rng.uniform(100, 500, 40)
        energies = rng.uniform(10, 60, 40)
        stats = summarize([rec(t, e) for t, e in zip(times, energies)])
        mean_t = sum(times) / len(times)
        var_t = sum((t - mean_t) ** 2 for t in times) / (len(times) - 1)
        assert stats.mean_time_s == pytest.approx(mean_t, abs=1e-12)
        assert stats.sd_time_s == pytest.approx(np.sqrt(var_t), abs=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            summarize([])


class TestSeeds:
    def test_spawn_deterministic(self):
        assert spawn_seeds(7, 5) == spawn_seeds(7, 5)
        assert spawn_seeds(7, 5) != spawn_seeds(8, 5)

    def test_children_distinct(self):
        seeds = spawn_seeds(0, 50)
        assert len(set(seeds)) == 50


class TestPerturbModel:
    def test_jitter_bounds(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            node = perturb_model(NODE, 0.05, rng)
            assert abs(node.alpha / NODE.alpha - 1) <= 0.05
            assert abs(node.beta / NODE.beta - 1) <= 0.05
            assert abs(node.k_l / NODE.k_l - 1) <= 0.05
            assert (node.a, node.b) == (NODE.a, NODE.b)


class TestParetoFrontier:
    def test_marks_non_dominated(self):
        rows = [ParetoRow(0, 1, 200.0, 25.0), ParetoRow(1, 1, 480.0, 18.0),
                ParetoRow(2, 1, 300.0, 26.0), ParetoRow(3, 1, 250.0, 22.0)]
        pareto_frontier(rows)
        flags = [r.on_frontier for r in rows]
        assert flags == [True, True, False, True]

    def test_frontier_contains_extremes(self):
        rng = np.random.default_rng(2)
        rows = [ParetoRow(0, 0, float(t), float(e))
                for t, e in zip(rng.uniform(200, 500, 30), rng.uniform(15, 30, 30))]
        pareto_frontier(rows)
        fastest = min(rows, key=lambda r: r.execution_time_s)
        leanest = min(rows, key=lambda r: r.energy_kj)
        assert fastest.on_frontier and leanest.on_frontier

    def test_no_frontier_row_is_dominated(self):
        rng = np.random.default_rng(3)
        rows = [ParetoRow(0, 0, float(t), float(e))
                for t, e in zip(rng.uniform(200, 500, 50), rng.uniform(15, 30, 50))]
        pareto_frontier(rows)
        for row in rows:
            if not row.on_frontier:
                continue
            for other in rows:
                if other is row:
                    continue
                assert not (other.execution_time_s <= row.execution_time_s
                            and other.energy_kj <= row.energy_kj
                            and (other.execution_time_s < row.execution_time_s
                                 or other.energy_kj < row.energy_kj))

    def test_diverged_rows_excluded(self):
        rows = [ParetoRow(0, 1, 200.0, 25.0),
                ParetoRow(1, 1, float("nan"), float("nan"), diverged=True)]
        pareto_frontier(rows)
        assert rows[0].on_frontier and not rows[1].on_frontier

    def test_grid_cells_shape(self):
        cells = grid_cells(c_max=10.0, step=5.0, include=())
        assert len(cells) == 8  # 3x3 grid minus the origin
        assert (0.0, 0.0) not in cells
        with_extra = grid_cells(c_max=10.0, step=5.0)
        assert (0.0, 4.44) in with_extra and (1.052, 2.22) in with_extra


class TestRepeatability:
    def test_zero_noise_gives_zero_sd(self):
        specs = {"min": min_spec(), "max": max_spec()}
        _, stats = repeatability(specs, env_cfg(), n_per_controller=3,
                                 root_seed=0, noise_sd=0.0)
        assert stats["min"].sd_time_s == 0.0
        assert stats["max"].sd_time_s == 0.0

    def test_min_max_ordering(self):
        specs = {"min": min_spec(), "max": max_spec()}
        _, stats = repeatability(specs, env_cfg(), n_per_controller=3,
                                 root_seed=0, noise_sd=0.5)
        assert stats["min"].mean_time_s > stats["max"].mean_time_s
        assert stats["max"].mean_energy_kj > stats["min"].mean_energy_kj

    def test_reproducible_given_root_seed(self):
        specs = {"max": max_spec()}
        recs_a, _ = repeatability(specs, env_cfg(), 3, root_seed=5, noise_sd=0.5)
        recs_b, _ = repeatability(specs, env_cfg(), 3, root_seed=5, noise_sd=0.5)
        assert [r.execution_time_s for r in recs_a["max"]] == \
            [r.execution_time_s for r in recs_b["max"]]
        assert [r.seed for r in recs_a["max"]] == [r.seed for r in recs_b["max"]]

    def test_cross_node_mode_runs_per_node(self):
        specs = {"max": max_spec()}
        recs, stats = repeatability(specs, env_cfg(), 0, root_seed=1,
                                    noise_sd=0.5, nodes=3, executions_per_node=2)
        assert stats["max"].n == 6
        assert len(recs["max"]) == 6

    def test_needs_two_runs(self):
        with pytest.raises(ValueError):
            repeatability({"max": max_spec()}, env_cfg(), 1, root_seed=0)


class TestComparePiRl:
    def test_seven_pi_rows(self):
        epsilons = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6]
        rows = compare_pi_rl(epsilons, [], env_cfg(), root_seed=0)
        assert len(rows) == 7
        assert all(r.family == "pi" for r in rows)
        assert [r.epsilon for r in rows] == epsilons

    def test_identical_seed_across_rows(self):
        rows = compare_pi_rl([0.0, 0.1], [], env_cfg(), root_seed=3)
        assert len({r.seed for r in rows}) == 1

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError):
            compare_pi_rl([], [], env_cfg())

    def test_larger_epsilon_runs_slower(self):
        rows = compare_pi_rl([0.1, 0.5], [], env_cfg(total_heartbeats=5000),
                             root_seed=0)
        assert rows[1].execution_time_s > rows[0].execution_time_s


def test_run_controller_episodes_labels_and_seeds():
    recs = run_controller_episodes(max_spec(), env_cfg(), [11, 22], "max")
    assert [r.seed for r in recs] == [11, 22]
    assert all(r.label == "max" for r in recs)
