"""Power-performance model of a compute node under a RAPL-style power cap.

The node is described by a static map from power cap (PCAP, watts) to
steady-state progress (heartbeats per second)

    progress = k_l * (1 - exp(-alpha * (a*pcap + b - beta)))

plus first-order linear dynamics in a transformed input variable.  The
transform pcap_l = 1 - exp(-alpha*(a*pcap + b - beta)) is chosen so that the
linear model's steady state k_l*pcap_l coincides exactly with the static map.

Two power figures are exposed on purpose: the dimensionless exponential
surrogate used inside the training reward, and the physical estimate
a*pcap + b (watts) used for energy accounting.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict, replace

DEFAULT_PCAP_MIN_W = 40.0
DEFAULT_PCAP_MAX_W = 120.0


@dataclass(frozen=True)
class ModelParams:
    """Identified node model.

    a, b: actuator accuracy (slope, offset in watts), so the power actually
    applied for a requested cap is a*pcap + b.  alpha (1/W) and beta (W)
    shape the power-to-progress profile, k_l (Hz) is the progress gain and
    tau (s) the time constant of the first-order dynamics.  pcap_min/pcap_max
    bound the actuator knob.
    """

    a: float
    b: float
    alpha: float
    beta: float
    k_l: float
    tau: float
    pcap_min: float = DEFAULT_PCAP_MIN_W
    pcap_max: float = DEFAULT_PCAP_MAX_W

    def __post_init__(self):
        if not (self.a > 0 and self.alpha > 0 and self.k_l > 0 and self.tau > 0):
            raise ValueError("a, alpha, k_l and tau must all be positive")
        if not self.beta > self.b:
            raise ValueError("beta must exceed b (zero-progress pcap must be positive)")
        if not self.pcap_min < self.pcap_max:
            raise ValueError("pcap_min must be below pcap_max")

    @classmethod
    def default(cls) -> "ModelParams":
        """Static characterization of an Intel Xeon Gold 6126 node running a
        memory-bound streaming workload with one heartbeat per loop iteration."""
        return cls(a=0.95, b=0.15, alpha=0.041, beta=24.3, k_l=47.9, tau=1.0 / 3.0)

    @property
    def knee_pcap(self) -> float:
        """Cap at which the static map crosses zero progress: (beta - b) / a."""
        return (self.beta - self.b) / self.a

    def clamp_pcap(self, pcap: float) -> float:
        return min(max(pcap, self.pcap_min), self.pcap_max)

    def in_range(self, pcap: float) -> bool:
        return self.pcap_min <= pcap <= self.pcap_max

    # -- static model -------------------------------------------------------

    def static_progress(self, pcap: float) -> float:
        """Steady-state progress (Hz) at a constant cap, clamped below at 0."""
        return max(0.0, self.k_l * self.linearize_pcap(pcap))

    def measured_power_reward(self, pcap: float) -> float:
        """Dimensionless power surrogate exp(-alpha*(a*pcap + b - beta)).

        This is the quantity substituted for measured power inside the
        training reward; it is not in watts (see physical_power for that).
        """
        return math.exp(-self.alpha * (self.a * pcap + self.b - self.beta))

    def physical_power(self, pcap: float) -> float:
        """Power actually applied for a requested cap, in watts: a*pcap + b."""
        return self.a * pcap + self.b

    # -- linearizing transform and dynamics ----------------------------------

    def linearize_pcap(self, pcap: float) -> float:
        """Transformed input 1 - exp(-alpha*(a*pcap + b - beta)).

        Makes the linear dynamics' steady state k_l * pcap_l equal the static
        map exactly.  Negative below the knee; in [0, 1) above it.
        """
        return 1.0 - self.measured_power_reward(pcap)

    def delinearize_pcap(self, u_l: float) -> float:
        """Inverse of linearize_pcap, clamped to the actuator range.

        Raises ValueError for u_l >= 1 (steady state unreachable at any cap).
        """
        if u_l >= 1.0:
            raise ValueError(f"linearized input {u_l} >= 1 has no finite pcap")
        pcap = (self.beta - self.b - math.log(1.0 - u_l) / self.alpha) / self.a
        return self.clamp_pcap(pcap)

    def linear_step(self, progress_l: float, pcap_l: float, dt: float) -> float:
        """One control interval of the first-order dynamics.

        next = (k_l*dt/(dt+tau)) * pcap_l + (tau/(dt+tau)) * progress_l
        """
        if dt <= 0:
            raise ValueError("dt must be positive")
        return (self.k_l * dt / (dt + self.tau)) * pcap_l + (self.tau / (dt + self.tau)) * progress_l

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelParams":
        known = {f: doc[f] for f in (
            "a", "b", "alpha", "beta", "k_l", "tau") if f in doc}
        missing = {"a", "b", "alpha", "beta", "k_l", "tau"} - set(known)
        if missing:
            raise ValueError(f"model document missing fields: {sorted(missing)}")
        for f in ("pcap_min", "pcap_max"):
            if f in doc:
                known[f] = doc[f]
        return cls(**{k: float(v) for k, v in known.items()})

    def save_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load_json(cls, path) -> "ModelParams":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def with_range(self, pcap_min: float, pcap_max: float) -> "ModelParams":
        return replace(self, pcap_min=pcap_min, pcap_max=pcap_max)
