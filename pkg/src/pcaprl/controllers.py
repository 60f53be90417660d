"""Deployment controllers sharing one next_action interface.

Available kinds: trained-policy RL controller (deterministic), a PI
controller tracking a degradation-factor setpoint in linearized-input space,
and constant min/max/fixed caps.  Every controller holds its previous action
through empty observation windows.
"""

from __future__ import annotations

from dataclasses import dataclass

from .model import ModelParams
from .progress import ProgressSample
from . import ppo

DEFAULT_TAU_CL_S = 5.0
MAX_EPSILON = 0.6  # tested degradation-factor range

CONTROLLER_KINDS = ("rl", "pi", "const_min", "const_max", "const")


@dataclass(frozen=True)
class ControllerSpec:
    kind: str
    const_pcap_w: float | None = None
    epsilon: float | None = None
    tau_cl: float = DEFAULT_TAU_CL_S
    policy_path: str | None = None

    def __post_init__(self):
        if self.kind not in CONTROLLER_KINDS:
            raise ValueError(f"unknown controller kind {self.kind!r}")
        if self.kind == "const" and self.const_pcap_w is None:
            raise ValueError("const controller needs const_pcap_w")
        if self.kind == "pi":
            eps = self.epsilon
            if eps is None or not 0.0 <= eps <= MAX_EPSILON:
                raise ValueError(f"pi controller needs epsilon in [0, {MAX_EPSILON}]")
        if self.kind == "rl" and self.policy_path is None:
            raise ValueError("rl controller needs policy_path")


@dataclass(frozen=True)
class PiState:
    """Integral accumulator in linearized-input units plus previous error."""

    u_l: float = 0.0
    prev_error: float = 0.0


def pi_setpoint(model: ModelParams, epsilon: float) -> float:
    """Target progress (1 - epsilon) * k_l for a tolerated loss epsilon."""
    if not 0.0 <= epsilon < 1.0:
        raise ValueError("epsilon must be in [0, 1)")
    return (1.0 - epsilon) * model.k_l


def pi_gains(model: ModelParams, dt: float, tau_cl: float = DEFAULT_TAU_CL_S):
    """Pole-placement gains on the linearized first-order model.

    ki = (dt + tau) / (k_l * tau_cl * dt) and kp = tau * ki place the
    discrete closed-loop pole at 1 - (dt + tau)/tau_cl while cancelling the
    plant pole, so tau_cl must exceed (dt + tau)/2 for stability.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if tau_cl <= (dt + model.tau) / 2.0:
        raise ValueError(f"tau_cl must exceed {(dt + model.tau) / 2.0} s for stability")
    ki = (dt + model.tau) / (model.k_l * tau_cl * dt)
    return model.tau * ki, ki


def pi_step(state: PiState, setpoint: float, obs: float, kp: float, ki: float,
            dt: float, model: ModelParams) -> tuple[float, PiState]:
    """Velocity-form PI update in linearized-input space.

    Anti-windup clamps the accumulator to [0, linearize(pcap_max)] before
    mapping through the inverse transform.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    error = setpoint - obs
    u_l = state.u_l + kp * (error - state.prev_error) + ki * dt * error
    u_l = min(max(u_l, 0.0), model.linearize_pcap(model.pcap_max))
    return model.delinearize_pcap(u_l), PiState(u_l=u_l, prev_error=error)


class _HoldsLastAction:
    def __init__(self):
        self._last: float | None = None

    def _hold_or(self, obs: ProgressSample, compute) -> float:
        if obs.empty and self._last is not None:
            return self._last
        action = compute(obs)
        self._last = action
        return action


class ConstController(_HoldsLastAction):
    def __init__(self, pcap: float, name: str = "const"):
        super().__init__()
        self.pcap = pcap
        self.name = name

    def reset(self):
        self._last = None

    def next_action(self, obs: ProgressSample) -> float:
        return self._hold_or(obs, lambda _: self.pcap)


class PiController(_HoldsLastAction):
    def __init__(self, model: ModelParams, epsilon: float, dt: float,
                 tau_cl: float = DEFAULT_TAU_CL_S,
                 gains: tuple[float, float] | None = None):
        super().__init__()
        self.model = model
        self.dt = dt
        self.setpoint = pi_setpoint(model, epsilon)
        self.kp, self.ki = gains if gains is not None else pi_gains(model, dt, tau_cl)
        self.state = PiState()
        self.name = f"pi(eps={epsilon})"

    def reset(self):
        self._last = None
        self.state = PiState()

    def next_action(self, obs: ProgressSample) -> float:
        def compute(sample):
            action, self.state = pi_step(self.state, self.setpoint, sample.value,
                                         self.kp, self.ki, self.dt, self.model)
            return action
        return self._hold_or(obs, compute)


class RlController(_HoldsLastAction):
    """Deterministic wrapper around a trained policy; pure in the observation."""

    def __init__(self, policy: ppo.PolicyParams, name: str = "rl"):
        super().__init__()
        self.policy = policy
        self.name = name

    @classmethod
    def from_file(cls, path) -> "RlController":
        return cls(ppo.load_policy(path), name=f"rl({path})")

    def reset(self):
        self._last = None

    def next_action(self, obs: ProgressSample) -> float:
        return self._hold_or(
            obs, lambda sample: ppo.act(self.policy, sample.value, stochastic=False).pcap)


def build_controller(spec: ControllerSpec, model: ModelParams, dt: float):
    """Instantiate a controller for one control loop.

    Policy files are loaded here so an invalid file fails at construction,
    never mid-run.
    """
    if spec.kind == "const_min":
        return ConstController(model.pcap_min, name="min")
    if spec.kind == "const_max":
        return ConstController(model.pcap_max, name="max")
    if spec.kind == "const":
        if not model.in_range(spec.const_pcap_w):
            raise ValueError(f"const pcap {spec.const_pcap_w} outside actuator range")
        return ConstController(spec.const_pcap_w, name=f"const({spec.const_pcap_w})")
    if spec.kind == "pi":
        return PiController(model, spec.epsilon, dt, tau_cl=spec.tau_cl)
    return RlController.from_file(spec.policy_path)


def spec_with_policy(path) -> ControllerSpec:
    return ControllerSpec(kind="rl", policy_path=str(path))


def min_spec() -> ControllerSpec:
    return ControllerSpec(kind="const_min")


def max_spec() -> ControllerSpec:
    return ControllerSpec(kind="const_max")


def pi_spec(epsilon: float, tau_cl: float = DEFAULT_TAU_CL_S) -> ControllerSpec:
    return ControllerSpec(kind="pi", epsilon=epsilon, tau_cl=tau_cl)
