"""Static characterization: step-response experiments and model fitting.

Step experiments hold a constant cap until the first-order dynamics settle
and record (pcap, steady progress) pairs.  The exponential static map is then
fitted to the pairs by damped Gauss-Newton (Levenberg-Marquardt) over
(alpha, beta, k_l) with a central finite-difference Jacobian and a small
multi-start grid; the actuator calibration (a, b) comes from a separate
measurement and is passed in, defaulting to the identity a=1, b=0.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .model import ModelParams, DEFAULT_PCAP_MIN_W, DEFAULT_PCAP_MAX_W

DEFAULT_TAU_S = 1.0 / 3.0
DEFAULT_LEVEL_COUNT = 17

MAX_ITERATIONS = 200
GRAD_TOL = 1e-10


@dataclass(frozen=True)
class StepResponsePair:
    pcap: float
    steady_progress: float

    def __post_init__(self):
        if self.steady_progress < 0:
            raise ValueError("steady progress cannot be negative")


@dataclass(frozen=True)
class FitResult:
    params: ModelParams
    residual_norm: float
    iterations: int
    converged: bool
    residual_history: tuple[float, ...] = ()


def default_pcap_levels(pcap_min: float = DEFAULT_PCAP_MIN_W,
                        pcap_max: float = DEFAULT_PCAP_MAX_W,
                        count: int = DEFAULT_LEVEL_COUNT) -> list[float]:
    """Evenly spaced step levels across the actuator range (default 17)."""
    if count < 2:
        raise ValueError("need at least 2 levels")
    return [float(x) for x in np.linspace(pcap_min, pcap_max, count)]


def run_step_experiment(true_model: ModelParams, pcap_levels: Sequence[float],
                        settle_steps: int | None = None, noise_sd: float = 0.0,
                        seed: int | None = None, dt: float = 1.0) -> list[StepResponsePair]:
    """Drive step caps on the simulated node and record settled pairs.

    Each level iterates the linear dynamics for settle_steps intervals
    (default and minimum ceil(10*tau/dt)) and averages the last quarter of
    the progress samples, with optional additive Gaussian noise per sample.
    """
    if not pcap_levels:
        raise ValueError("pcap_levels must be non-empty")
    for level in pcap_levels:
        if not true_model.in_range(level):
            raise ValueError(f"pcap level {level} outside actuator range")
    min_steps = math.ceil(10.0 * true_model.tau / dt)
    if settle_steps is None:
        settle_steps = max(min_steps, 40)
    if settle_steps < min_steps:
        raise ValueError(f"settle_steps must be >= {min_steps}")
    rng = np.random.default_rng(seed)
    pairs = []
    for level in pcap_levels:
        u = true_model.linearize_pcap(level)
        prog = 0.0
        samples = []
        for _ in range(settle_steps):
            prog = true_model.linear_step(prog, u, dt)
            samples.append(prog + (rng.normal(0.0, noise_sd) if noise_sd > 0 else 0.0))
        tail = samples[-max(1, settle_steps // 4):]
        pairs.append(StepResponsePair(level, max(0.0, float(np.mean(tail)))))
    return pairs


def _levenberg_marquardt(residual_fn, theta0: np.ndarray,
                         max_iterations: int = MAX_ITERATIONS,
                         grad_tol: float = GRAD_TOL):
    """Tiny damped Gauss-Newton minimizer of sum(residual_fn(theta)**2).

    Central finite-difference Jacobian with step 1e-6*max(1, |theta_i|).
    Returns (theta, cost_history, iterations, converged); the history only
    records accepted steps, so it is nonincreasing.
    """
    theta = np.asarray(theta0, dtype=float).copy()
    r = residual_fn(theta)
    cost = float(r @ r)
    history = [cost]
    lam = 1e-3
    converged = False
    stagnant = 0
    it = 0
    for it in range(1, max_iterations + 1):
        jac = np.empty((r.size, theta.size))
        for j in range(theta.size):
            h = 1e-6 * max(1.0, abs(theta[j]))
            tp, tm = theta.copy(), theta.copy()
            tp[j] += h
            tm[j] -= h
            jac[:, j] = (residual_fn(tp) - residual_fn(tm)) / (2.0 * h)
        grad = 2.0 * jac.T @ r
        if np.linalg.norm(grad) < grad_tol:
            converged = True
            break
        jtj = jac.T @ jac
        accepted = False
        for _ in range(50):
            try:
                step = np.linalg.solve(jtj + lam * np.diag(np.maximum(np.diag(jtj), 1e-12)),
                                       -jac.T @ r)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            trial = theta + step
            r_trial = residual_fn(trial)
            cost_trial = float(r_trial @ r_trial)
            if np.isfinite(cost_trial) and cost_trial <= cost:
                improvement = cost - cost_trial
                theta, r, cost = trial, r_trial, cost_trial
                history.append(cost)
                lam = max(lam / 3.0, 1e-12)
                accepted = True
                # at the finite-difference noise floor further iterations
                # cannot improve: call that converged to working precision
                stagnant = stagnant + 1 if improvement <= 1e-13 * max(cost, 1.0) else 0
                break
            lam *= 10.0
        if not accepted or stagnant >= 2:
            converged = accepted or np.linalg.norm(grad) < 1e-6 or cost < 1e-20
            break
    else:
        it = max_iterations
    return theta, history, it, converged


def fit_static_model(pairs: Sequence[StepResponsePair], known_a: float = 1.0,
                     known_b: float = 0.0, init: ModelParams | None = None,
                     pcap_min: float = DEFAULT_PCAP_MIN_W,
                     pcap_max: float = DEFAULT_PCAP_MAX_W) -> FitResult:
    """Nonlinear least squares fit of (alpha, beta, k_l) to step pairs.

    Requires at least 4 pairs spanning a 2:1 cap ratio.  Multi-start over a
    small (alpha, beta) grid; ties broken on lower residual then lower alpha.
    """
    if len(pairs) < 4:
        raise ValueError("need at least 4 step-response pairs")
    caps = np.array([p.pcap for p in pairs], dtype=float)
    obs = np.array([p.steady_progress for p in pairs], dtype=float)
    if np.ptp(caps) == 0:
        raise ValueError("degenerate data: all pcap levels equal")
    if caps.max() < 2.0 * caps.min():
        raise ValueError("pcap levels must span at least a 2:1 ratio")

    def residual(theta: np.ndarray) -> np.ndarray:
        alpha, beta, k_l = theta
        pred = k_l * (1.0 - np.exp(-alpha * (known_a * caps + known_b - beta)))
        return pred - obs

    min_power = known_a * caps.min() + known_b
    k_start = max(obs.max(), 1e-6)
    starts = [np.array([alpha0, beta0, k_start])
              for alpha0 in (0.01, 0.05, 0.1)
              for beta0 in (min_power - 20.0, min_power - 10.0, min_power - 2.0)]
    if init is not None:
        starts.insert(0, np.array([init.alpha, init.beta, init.k_l]))

    best = None  # (sort key, theta, history, iterations, converged)
    for theta0 in starts:
        theta, history, iterations, converged = _levenberg_marquardt(residual, theta0)
        alpha, beta, k_l = theta
        if not (alpha > 0 and k_l > 0 and beta > known_b):
            continue
        key = (not converged, history[-1], alpha)
        if best is None or key < best[0]:
            best = (key, theta, history, iterations, converged)
    if best is None:
        fallback = ModelParams(a=known_a, b=known_b, alpha=0.05,
                               beta=min_power - 10.0, k_l=k_start, tau=DEFAULT_TAU_S,
                               pcap_min=pcap_min, pcap_max=pcap_max)
        return FitResult(fallback, float("inf"), MAX_ITERATIONS, False)

    _, theta, history, iterations, converged = best
    params = ModelParams(a=known_a, b=known_b, alpha=float(theta[0]),
                         beta=float(theta[1]), k_l=float(theta[2]), tau=DEFAULT_TAU_S,
                         pcap_min=pcap_min, pcap_max=pcap_max)
    return FitResult(params=params, residual_norm=math.sqrt(history[-1]),
                     iterations=iterations, converged=converged,
                     residual_history=tuple(history))


def derive_linear_model(fit: FitResult, tau: float = DEFAULT_TAU_S,
                        dt: float = 1.0) -> ModelParams:
    """Attach the time constant to fitted statics, giving the full model."""
    if not fit.converged:
        raise ValueError("cannot derive dynamics from an unconverged fit")
    if tau <= 0:
        raise ValueError("tau must be positive")
    if dt <= 0:
        raise ValueError("dt must be positive")
    return replace(fit.params, tau=tau)


# -- CSV interchange ---------------------------------------------------------

def save_pairs(pairs: Sequence[StepResponsePair], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["pcap_w", "progress_hz"])
        for p in pairs:
            writer.writerow([repr(p.pcap), repr(p.steady_progress)])


def load_pairs(path) -> list[StepResponsePair]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        return [StepResponsePair(float(row["pcap_w"]), float(row["progress_hz"]))
                for row in reader]
