"""MDP environment wrapping the node model for training and evaluation.

State is the previous interval's progress (Hz).  An action is a power cap;
one step advances the first-order dynamics by dt, accrues heartbeats toward
workload completion, accumulates physical energy, and pays the reward

    r = -c1 * pcap + c2 * progress_next / measured_power_surrogate(pcap)

Heartbeats accumulate through a fractional carry (the exposed count is the
floor of the running total), which keeps completion times consistent with
the closed-form dynamics and with the socket workload client, which can only
emit whole heartbeats.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from .model import ModelParams
from .progress import ProgressSample

DEFAULT_TOTAL_HEARTBEATS = 10_000
DEFAULT_HORIZON_CAP = 1200
DEFAULT_EVAL_NOISE_SD_HZ = 0.5


@dataclass(frozen=True)
class RewardWeights:
    """Reward scaling: c1 penalizes the cap (per watt), c2 scales
    progress per unit of the exponential power surrogate."""

    c1: float
    c2: float

    def __post_init__(self):
        if self.c1 < 0 or self.c2 < 0:
            raise ValueError("reward weights must be nonnegative")
        if self.c1 == 0 and self.c2 == 0:
            raise ValueError("reward weights cannot both be zero")


@dataclass(frozen=True)
class EnvConfig:
    model: ModelParams
    weights: RewardWeights
    dt: float = 1.0
    total_heartbeats: int = DEFAULT_TOTAL_HEARTBEATS
    horizon_cap: int = DEFAULT_HORIZON_CAP
    noise_sd: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.total_heartbeats < 1:
            raise ValueError("total_heartbeats must be >= 1")
        if self.horizon_cap < 1:
            raise ValueError("horizon_cap must be >= 1")
        if self.noise_sd < 0:
            raise ValueError("noise_sd cannot be negative")


@dataclass(frozen=True)
class EnvState:
    progress: float
    heartbeats_done: int
    elapsed: float
    energy_j: float
    done: bool
    steps: int = 0
    hb_carry: float = 0.0  # fractional heartbeats not yet counted


@dataclass(frozen=True)
class StepOutcome:
    next_state: EnvState
    reward: float
    info: dict


class Controller(Protocol):
    def next_action(self, obs: ProgressSample) -> float: ...


class SimEnv:
    """Single-threaded environment instance; reseed by calling reset()."""

    def __init__(self, cfg: EnvConfig):
        self.cfg = cfg
        self._rng = np.random.default_rng(cfg.seed)

    def reset(self) -> EnvState:
        self._rng = np.random.default_rng(self.cfg.seed)
        return EnvState(progress=0.0, heartbeats_done=0, elapsed=0.0,
                        energy_j=0.0, done=False)

    def step(self, state: EnvState, action_pcap: float) -> StepOutcome:
        if state.done:
            raise RuntimeError("cannot step a finished episode")
        cfg = self.cfg
        model = cfg.model
        if not model.in_range(action_pcap):
            raise ValueError(f"pcap {action_pcap} outside actuator range")

        progress_next = model.linear_step(state.progress,
                                          model.linearize_pcap(action_pcap), cfg.dt)
        if cfg.noise_sd > 0:
            progress_next += self._rng.normal(0.0, cfg.noise_sd)
        progress_next = max(0.0, progress_next)

        carry = state.hb_carry + progress_next * cfg.dt
        emitted = math.floor(carry)
        carry -= emitted
        heartbeats = min(state.heartbeats_done + emitted, cfg.total_heartbeats)

        power_w = model.physical_power(action_pcap)
        surrogate = model.measured_power_reward(action_pcap)
        reward = -cfg.weights.c1 * action_pcap + cfg.weights.c2 * progress_next / surrogate

        steps = state.steps + 1
        done = heartbeats >= cfg.total_heartbeats or steps >= cfg.horizon_cap
        next_state = EnvState(progress=progress_next, heartbeats_done=heartbeats,
                              elapsed=state.elapsed + cfg.dt,
                              energy_j=state.energy_j + power_w * cfg.dt,
                              done=done, steps=steps, hb_carry=carry)
        info = {"measured_power_surrogate": surrogate, "physical_power_w": power_w}
        return StepOutcome(next_state=next_state, reward=reward, info=info)


@dataclass
class ExperimentRecord:
    """One episode: per-step trace plus the summary used by the experiment
    tables.  Energy accounting is physical (a*pcap + b), labeled as such."""

    label: str
    seed: int
    controller: str
    execution_time_s: float
    energy_kj: float
    truncated: bool
    weights: RewardWeights
    t_s: list[float] = field(default_factory=list)
    pcap_w: list[float] = field(default_factory=list)
    progress_hz: list[float] = field(default_factory=list)
    power_w: list[float] = field(default_factory=list)
    reward: list[float] = field(default_factory=list)

    @property
    def total_reward(self) -> float:
        return float(sum(self.reward))

    def save_trace_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t_s", "pcap_w", "progress_hz", "power_w", "reward"])
            for row in zip(self.t_s, self.pcap_w, self.progress_hz,
                           self.power_w, self.reward):
                writer.writerow([repr(v) for v in row])

    def save_summary_json(self, path) -> None:
        doc = {
            "execution_time_s": self.execution_time_s,
            "energy_kj": self.energy_kj,
            "truncated": self.truncated,
            "seed": self.seed,
            "weights": {"c1": self.weights.c1, "c2": self.weights.c2},
            "power_accounting": "physical",
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")


def run_episode(cfg: EnvConfig, controller: Controller | Callable[[ProgressSample], float],
                label: str = "") -> ExperimentRecord:
    """Run a full episode, querying the controller once per interval."""
    act = controller.next_action if hasattr(controller, "next_action") else controller
    if hasattr(controller, "reset"):
        controller.reset()
    env = SimEnv(cfg)
    state = env.reset()
    record = ExperimentRecord(label=label, seed=cfg.seed,
                              controller=getattr(controller, "name", label),
                              execution_time_s=0.0, energy_kj=0.0,
                              truncated=False, weights=cfg.weights)
    obs = ProgressSample(window_end=0.0, value=state.progress)
    while not state.done:
        pcap = act(obs)
        outcome = env.step(state, pcap)
        state = outcome.next_state
        record.t_s.append(state.elapsed)
        record.pcap_w.append(pcap)
        record.progress_hz.append(state.progress)
        record.power_w.append(outcome.info["physical_power_w"])
        record.reward.append(outcome.reward)
        obs = ProgressSample(window_end=state.elapsed, value=state.progress)
    record.execution_time_s = state.elapsed
    record.energy_kj = state.energy_j / 1000.0
    record.truncated = state.heartbeats_done < cfg.total_heartbeats
    return record
