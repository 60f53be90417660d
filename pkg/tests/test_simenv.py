"""Environment tests: step semantics, reward bookkeeping, energy accounting
and closed-form execution-time oracles for constant-cap policies."""

import math

import numpy as np
import pytest

from pcaprl.model import ModelParams
from pcaprl.simenv import (EnvConfig, RewardWeights, SimEnv, run_episode,
                           ExperimentRecord)

NODE = ModelParams.default()
W_PERF = RewardWeights(c1=0.0, c2=4.44)
W_MIXED = RewardWeights(c1=1.052, c2=2.22)


def make_cfg(**kwargs):
    defaults = dict(model=NODE, weights=W_MIXED, dt=1.0, total_heartbeats=10_000,
                    horizon_cap=1200, noise_sd=0.0, seed=0)
    defaults.update(kwargs)
    return EnvConfig(**defaults)


def constant_time_oracle(model, pcap, dt, total):
    """Independent execution-time oracle from the geometric closed form of
    the dynamics: progress after k steps is S*(1 - r**k)."""
    r = model.tau / (dt + model.tau)
    steady = model.k_l * model.linearize_pcap(pcap)
    cumulative, steps = 0.0, 0
    while cumulative < total:
        steps += 1
        cumulative += steady * (1.0 - r ** steps) * dt
    return steps * dt


class TestRewardWeights:
    def test_accepts_published_pairs(self):
        assert RewardWeights(0.0, 4.44).c2 == 4.44
        assert RewardWeights(1.052, 2.22).c1 == 1.052

    def test_rejects_negative_or_empty(self):
        with pytest.raises(ValueError):
            RewardWeights(-1.0, 2.0)
        with pytest.raises(ValueError):
            RewardWeights(0.0, 0.0)


class TestReset:
    def test_zeroed(self):
        env = SimEnv(make_cfg())
        state = env.reset()
        assert (state.progress, state.elapsed, state.energy_j) == (0.0, 0.0, 0.0)
        assert state.heartbeats_done == 0 and not state.done

    def test_same_seed_identical_streams(self):
        cfg = make_cfg(noise_sd=0.5, seed=123)
        streams = []
        for _ in range(2):
            env = SimEnv(cfg)
            state = env.reset()
            trace = []
            for _ in range(50):
                out = env.step(state, 90.0)
                state = out.next_state
                trace.append((state.progress, out.reward))
            streams.append(trace)
        assert streams[0] == streams[1]

    def test_horizon_cap_one(self):
        env = SimEnv(make_cfg(horizon_cap=1))
        out = env.step(env.reset(), 100.0)
        assert out.next_state.done


class TestStep:
    def test_steady_reward_performance_weights(self):
        # constant 100 W with (c1=0, c2=4.44) settles at c2*S/M
        env = SimEnv(make_cfg(weights=W_PERF))
        state = env.reset()
        for _ in range(60):
            out = env.step(state, 100.0)
            state = out.next_state
        expected = 4.44 * NODE.static_progress(100.0) / NODE.measured_power_reward(100.0)
        assert expected == pytest.approx(3.67e3, rel=1e-3)
        assert out.reward == pytest.approx(expected, rel=1e-6)

    def test_mixed_weights_applied(self):
        env = SimEnv(make_cfg(weights=W_MIXED))
        out = env.step(env.reset(), 100.0)
        progress = out.next_state.progress
        expected = -1.052 * 100.0 + 2.22 * progress / NODE.measured_power_reward(100.0)
        assert out.reward == pytest.approx(expected, abs=1e-9)

    def test_completion_rate_bound(self):
        # even at the saturation progress the workload needs ~209 s
        assert 10_000 / NODE.k_l == pytest.approx(208.8, abs=0.1)

    def test_step_after_done_raises(self):
        env = SimEnv(make_cfg(horizon_cap=1))
        state = env.step(env.reset(), 100.0).next_state
        with pytest.raises(RuntimeError):
            env.step(state, 100.0)

    def test_rejects_out_of_range_action(self):
        env = SimEnv(make_cfg())
        with pytest.raises(ValueError):
            env.step(env.reset(), 20.0)

    def test_energy_monotone(self):
        env = SimEnv(make_cfg())
        state = env.reset()
        last = 0.0
        for _ in range(20):
            state = env.step(state, 60.0).next_state
            assert state.energy_j > last
            last = state.energy_j


class TestRunEpisode:
    def test_min_slower_than_max(self):
        rec_min = run_episode(make_cfg(noise_sd=0.5, seed=3), lambda o: NODE.pcap_min)
        rec_max = run_episode(make_cfg(noise_sd=0.5, seed=3), lambda o: NODE.pcap_max)
        assert rec_min.execution_time_s > rec_max.execution_time_s

    def test_max_uses_most_energy_on_physical_accounting(self):
        rec_min = run_episode(make_cfg(noise_sd=0.5, seed=3), lambda o: NODE.pcap_min)
        rec_max = run_episode(make_cfg(noise_sd=0.5, seed=3), lambda o: NODE.pcap_max)
        assert rec_max.energy_kj > rec_min.energy_kj

    @pytest.mark.parametrize("pcap", [40.0, 70.0, 100.0, 120.0])
    def test_execution_time_matches_closed_form(self, pcap):
        record = run_episode(make_cfg(), lambda o: pcap)
        expected = constant_time_oracle(NODE, pcap, 1.0, 10_000)
        assert record.execution_time_s == expected
        # the coarse anchor: completion near total/static_progress
        anchor = 10_000 / NODE.static_progress(pcap)
        assert abs(record.execution_time_s - anchor) <= 2.0

    def test_energy_additivity(self):
        record = run_episode(make_cfg(), lambda o: 90.0)
        expected = NODE.physical_power(90.0) * record.execution_time_s / 1000.0
        assert record.energy_kj == pytest.approx(expected, abs=1e-9)

    def test_truncation_flag(self):
        record = run_episode(make_cfg(horizon_cap=10), lambda o: 100.0)
        assert record.truncated
        assert record.execution_time_s == 10.0

    def test_reward_recomputable_from_trace(self):
        record = run_episode(make_cfg(weights=W_MIXED, noise_sd=0.5, seed=9),
                             lambda o: 85.0)
        for pcap, progress, reward in zip(record.pcap_w, record.progress_hz,
                                          record.reward):
            expected = -1.052 * pcap + 2.22 * progress / NODE.measured_power_reward(pcap)
            assert reward == pytest.approx(expected, abs=1e-9)

    def test_bit_identical_records(self):
        make = lambda: run_episode(make_cfg(noise_sd=0.5, seed=77), lambda o: 95.0)
        a, b = make(), make()
        assert a.t_s == b.t_s and a.progress_hz == b.progress_hz
        assert a.reward == b.reward and a.energy_kj == b.energy_kj

    def test_monotone_dominance_of_constant_policies(self):
        times = [run_episode(make_cfg(), lambda o, p=p: p).execution_time_s
                 for p in (40.0, 60.0, 80.0, 100.0, 120.0)]
        assert all(b <= a for a, b in zip(times, times[1:]))


def test_trace_and_summary_files(tmp_path):
    record = run_episode(make_cfg(total_heartbeats=500), lambda o: 100.0, label="demo")
    trace = tmp_path / "trace.csv"
    summary = tmp_path / "summary.json"
    record.save_trace_csv(trace)
    record.save_summary_json(summary)
    header = trace.read_text().splitlines()[0]
    assert header == "t_s,pcap_w,progress_hz,power_w,reward"
    import json
    doc = json.loads(summary.read_text())
    assert doc["truncated"] is False
    assert doc["weights"] == {"c1": 1.052, "c2": 2.22}
