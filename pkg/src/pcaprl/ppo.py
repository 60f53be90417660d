"""Self-contained PPO actor-critic for the 1-state/1-action power-cap MDP.

The networks are small enough that backpropagation is implemented here
directly on numpy arrays; correctness is enforced by finite-difference
property tests rather than an autodiff dependency.  Actions are sampled from
a Gaussian in an unbounded raw space, squashed through tanh and mapped
affinely onto the actuator range, with the corresponding change-of-variables
terms included in the log-probability so it is a proper density over pcap.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .simenv import EnvConfig, SimEnv, run_episode
from .progress import ProgressSample

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
OBS_CLIP = 10.0
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)

POLICY_FORMAT = "pcaprl-policy"
POLICY_VERSION = 1


class PolicyFormatError(ValueError):
    """Raised when a policy file cannot be decoded into a usable policy."""


@dataclass(frozen=True)
class PpoConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_ratio: float = 0.2
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    learning_rate: float = 3e-4
    rollout_steps: int = 2048
    minibatch_size: int = 64
    epochs: int = 10
    total_updates: int = 60
    hidden_width: int = 64
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must be in (0, 1]")
        if not 0 <= self.gae_lambda <= 1:
            raise ValueError("gae_lambda must be in [0, 1]")
        if self.clip_ratio <= 0:
            raise ValueError("clip_ratio must be positive")
        if self.rollout_steps < self.minibatch_size:
            raise ValueError("rollout must be at least one minibatch long")


class Mlp:
    """Fully connected net with tanh hidden activations and linear output."""

    def __init__(self, sizes, rng=None, out_scale=1.0):
        self.sizes = list(sizes)
        self.weights = []
        self.biases = []
        for i, (n_in, n_out) in enumerate(zip(sizes, sizes[1:])):
            if rng is None:
                w = np.zeros((n_in, n_out))
            else:
                w = rng.normal(0.0, 1.0 / math.sqrt(n_in), size=(n_in, n_out))
                if i == len(sizes) - 2:
                    w *= out_scale
            self.weights.append(w)
            self.biases.append(np.zeros(n_out))

    def forward(self, x: np.ndarray):
        """Returns (output, cache); x has shape (batch, sizes[0])."""
        h = x
        cache = [h]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            h = z if i == last else np.tanh(z)
            cache.append(h)
        return h, cache

    def backward(self, cache, dout: np.ndarray):
        """Gradients of a scalar loss wrt parameters, given d(loss)/d(output)."""
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.biases)
        dh = dout
        for i in range(len(self.weights) - 1, -1, -1):
            h_in, h_out = cache[i], cache[i + 1]
            dz = dh if i == len(self.weights) - 1 else dh * (1.0 - h_out ** 2)
            grads_w[i] = h_in.T @ dz
            grads_b[i] = dz.sum(axis=0)
            dh = dz @ self.weights[i].T
        return grads_w, grads_b

    def parameters(self):
        return self.weights + self.biases

    def copy(self) -> "Mlp":
        out = Mlp(self.sizes)
        out.weights = [w.copy() for w in self.weights]
        out.biases = [b.copy() for b in self.biases]
        return out


@dataclass
class RunningNorm:
    """Welford running mean/variance of the observation stream."""

    count: float = 0.0
    mean: float = 0.0
    m2: float = 0.0

    def update(self, x: float) -> None:
        self.count += 1.0
        delta = x - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (x - self.mean)

    @property
    def var(self) -> float:
        return self.m2 / self.count if self.count >= 2 else 1.0

    def normalize(self, x):
        return np.clip((x - self.mean) / math.sqrt(self.var + 1e-8),
                       -OBS_CLIP, OBS_CLIP)


class PolicyParams:
    """Actor, critic, exploration log-stddev and observation normalizer."""

    def __init__(self, pcap_min: float, pcap_max: float, hidden_width: int = 64,
                 rng: np.random.Generator | None = None):
        if rng is None:
            rng = np.random.default_rng(0)
        self.pcap_min = float(pcap_min)
        self.pcap_max = float(pcap_max)
        self.hidden_width = int(hidden_width)
        sizes = [1, hidden_width, hidden_width, 1]
        self.actor = Mlp(sizes, rng, out_scale=0.01)
        self.critic = Mlp(sizes, rng)
        # unit initial stddev: the squashed action needs wide raw-space
        # exploration to reach the saturated ends of the tanh
        self.log_std = np.array([0.0])
        self.obs_norm = RunningNorm()

    @property
    def span(self) -> float:
        return self.pcap_max - self.pcap_min

    def parameters(self):
        return self.actor.parameters() + [self.log_std] + self.critic.parameters()

    def finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.parameters())

    def squash(self, raw):
        t = np.tanh(raw)
        return self.pcap_min + 0.5 * (t + 1.0) * self.span

    def unsquash(self, pcap):
        t = np.clip(2.0 * (pcap - self.pcap_min) / self.span - 1.0,
                    -1.0 + 1e-12, 1.0 - 1e-12)
        return np.arctanh(t)

    def std(self) -> float:
        return float(np.exp(np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX))[0])


def _gauss_log_pdf(x, mean, std):
    return -0.5 * ((x - mean) / std) ** 2 - np.log(std) - _HALF_LOG_2PI


def _squash_correction(raw, span):
    # density change through tanh then the affine map onto [pcap_min, pcap_max]
    t = np.tanh(raw)
    return np.log(1.0 - t ** 2 + 1e-12) + math.log(span / 2.0)


@dataclass(frozen=True)
class ActOutcome:
    pcap: float
    log_prob: float
    value: float
    raw_action: float


def act(policy: PolicyParams, obs: float, stochastic: bool = True,
        rng: np.random.Generator | None = None) -> ActOutcome:
    """Policy action for one observation.

    Stochastic mode samples the Gaussian; deterministic mode takes the mean.
    The returned log_prob is the density of the emitted pcap (including the
    tanh and affine corrections).
    """
    obs_n = policy.obs_norm.normalize(float(obs))
    x = np.array([[obs_n]])
    mean, _ = policy.actor.forward(x)
    mean = float(mean[0, 0])
    std = policy.std()
    if stochastic:
        if rng is None:
            raise ValueError("stochastic action sampling needs an rng")
        raw = mean + std * rng.standard_normal()
    else:
        raw = mean
    pcap = float(policy.squash(raw))
    log_prob = float(_gauss_log_pdf(raw, mean, std) - _squash_correction(raw, policy.span))
    value, _ = policy.critic.forward(x)
    return ActOutcome(pcap=pcap, log_prob=log_prob, value=float(value[0, 0]), raw_action=raw)


def action_log_prob(policy: PolicyParams, obs: float, pcap: float) -> float:
    """Density of a given pcap under the policy at obs (for verification)."""
    obs_n = policy.obs_norm.normalize(float(obs))
    mean, _ = policy.actor.forward(np.array([[obs_n]]))
    raw = float(policy.unsquash(pcap))
    return float(_gauss_log_pdf(raw, float(mean[0, 0]), policy.std())
                 - _squash_correction(raw, policy.span))


@dataclass
class Trajectory:
    """Rollout storage; all arrays share one length."""

    obs: list[float] = field(default_factory=list)
    raw_actions: list[float] = field(default_factory=list)
    pcaps: list[float] = field(default_factory=list)
    log_probs: list[float] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    values: list[float] = field(default_factory=list)
    dones: list[bool] = field(default_factory=list)
    bootstrap_value: float = 0.0
    episode_rewards: list[float] = field(default_factory=list)

    def __len__(self):
        return len(self.obs)

    def arrays(self):
        fields = (self.obs, self.raw_actions, self.log_probs, self.rewards,
                  self.values, self.dones)
        if len({len(f) for f in fields}) != 1:
            raise ValueError("trajectory fields have inconsistent lengths")
        return (np.asarray(self.obs), np.asarray(self.raw_actions),
                np.asarray(self.log_probs), np.asarray(self.rewards),
                np.asarray(self.values), np.asarray(self.dones, dtype=bool))


def compute_gae(traj: Trajectory, gamma: float, lam: float):
    """Generalized advantage estimation; returns raw (advantages, returns).

    returns = advantages + values.  Normalization is a separate step so the
    raw advantages stay comparable with direct discounted-sum computation.
    """
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    rewards = np.asarray(traj.rewards)
    values = np.asarray(traj.values)
    dones = np.asarray(traj.dones, dtype=bool)
    n = len(rewards)
    advantages = np.zeros(n)
    last_adv = 0.0
    for t in range(n - 1, -1, -1):
        next_value = traj.bootstrap_value if t == n - 1 else values[t + 1]
        nonterminal = 0.0 if dones[t] else 1.0
        delta = rewards[t] + gamma * next_value * nonterminal - values[t]
        last_adv = delta + gamma * lam * nonterminal * last_adv
        advantages[t] = last_adv
    return advantages, advantages + values


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    sd = adv.std()
    if sd == 0:
        return np.zeros_like(adv)
    return (adv - adv.mean()) / (sd + 1e-8)


def _loss_and_grads(policy: PolicyParams, obs_n, raw_actions, old_log_probs,
                    advantages, returns, cfg: PpoConfig):
    """Total PPO loss (to minimize) and its gradient wrt every parameter.

    The tanh/affine log-prob corrections are constants wrt the parameters
    (the raw actions are fixed), so gradients flow only through the actor
    mean, the log-stddev and the critic.
    """
    n = obs_n.shape[0]
    x = obs_n.reshape(-1, 1)

    mean, actor_cache = policy.actor.forward(x)
    mean = mean[:, 0]
    std = policy.std()
    log_std = float(np.clip(policy.log_std, LOG_STD_MIN, LOG_STD_MAX)[0])

    z = (raw_actions - mean) / std
    corrections = _squash_correction(raw_actions, policy.span)
    new_log_probs = -0.5 * z ** 2 - log_std - _HALF_LOG_2PI - corrections
    ratio = np.exp(new_log_probs - old_log_probs)

    lo, hi = 1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio
    surr1 = ratio * advantages
    surr2 = np.clip(ratio, lo, hi) * advantages
    pg_loss = -np.mean(np.minimum(surr1, surr2))

    values, critic_cache = policy.critic.forward(x)
    values = values[:, 0]
    v_err = values - returns
    v_loss = float(np.mean(v_err ** 2))

    entropy = log_std + 0.5 * math.log(2.0 * math.pi * math.e)
    loss = float(pg_loss + cfg.value_coef * v_loss - cfg.entropy_coef * entropy)

    # d(pg_loss)/d(ratio): the min picks the unclipped branch, or the clipped
    # branch whose gradient vanishes outside the clip interval
    unclipped = surr1 <= surr2
    inside = (ratio > lo) & (ratio < hi)
    dmin_dratio = np.where(unclipped | inside, advantages, 0.0)
    dloss_dlogp = (-dmin_dratio / n) * ratio

    dloss_dmean = dloss_dlogp * z / std
    dloss_dlogstd = float(np.sum(dloss_dlogp * (z ** 2 - 1.0))) - cfg.entropy_coef

    actor_gw, actor_gb = policy.actor.backward(actor_cache, dloss_dmean.reshape(-1, 1))
    dloss_dv = cfg.value_coef * 2.0 * v_err / n
    critic_gw, critic_gb = policy.critic.backward(critic_cache, dloss_dv.reshape(-1, 1))

    grads = actor_gw + actor_gb + [np.array([dloss_dlogstd])] + critic_gw + critic_gb
    diag = {
        "policy_loss": float(pg_loss),
        "value_loss": v_loss,
        "entropy": float(entropy),
        "approx_kl": float(np.mean(old_log_probs - new_log_probs)),
    }
    return loss, grads, diag


class Adam:
    def __init__(self, params, lr):
        self.lr = lr
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        b1, b2, eps = 0.9, 0.999, 1e-8
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m[:] = b1 * m + (1 - b1) * g
            v[:] = b2 * v + (1 - b2) * g ** 2
            mhat = m / (1 - b1 ** self.t)
            vhat = v / (1 - b2 ** self.t)
            p -= self.lr * mhat / (np.sqrt(vhat) + eps)


def update(policy: PolicyParams, rollout: Trajectory, cfg: PpoConfig,
           rng: np.random.Generator, optimizer: Adam | None = None) -> dict:
    """One PPO update over the rollout; mutates the policy in place.

    A non-finite loss aborts the remaining minibatches and reports the
    diagnostics gathered so far with an `aborted` flag.
    """
    if len(rollout) < cfg.minibatch_size:
        raise ValueError("rollout shorter than one minibatch")
    if optimizer is None:
        optimizer = Adam(policy.parameters(), cfg.learning_rate)

    obs, raw_actions, old_log_probs, _, _, _ = rollout.arrays()
    obs_n = policy.obs_norm.normalize(obs)
    advantages, returns = compute_gae(rollout, cfg.gamma, cfg.gae_lambda)
    advantages = normalize_advantages(advantages)

    n = len(rollout)
    diag_acc: dict[str, float] = {}
    batches = 0
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.minibatch_size):
            idx = perm[start:start + cfg.minibatch_size]
            loss, grads, diag = _loss_and_grads(
                policy, obs_n[idx], raw_actions[idx], old_log_probs[idx],
                advantages[idx], returns[idx], cfg)
            if not math.isfinite(loss):
                diag["aborted"] = True
                return diag
            optimizer.step(policy.parameters(), grads)
            policy.log_std[:] = np.clip(policy.log_std, LOG_STD_MIN, LOG_STD_MAX)
            for k, v in diag.items():
                diag_acc[k] = diag_acc.get(k, 0.0) + v
            batches += 1
    out = {k: v / batches for k, v in diag_acc.items()}
    out["aborted"] = False
    return out


def collect_rollout(env: SimEnv, state, obs: float, policy: PolicyParams,
                    steps: int, rng: np.random.Generator):
    """Gather `steps` transitions, resetting the env across episode ends."""
    traj = Trajectory()
    ep_reward = 0.0
    for _ in range(steps):
        policy.obs_norm.update(obs)
        outcome = act(policy, obs, stochastic=True, rng=rng)
        step_out = env.step(state, outcome.pcap)
        traj.obs.append(obs)
        traj.raw_actions.append(outcome.raw_action)
        traj.pcaps.append(outcome.pcap)
        traj.log_probs.append(outcome.log_prob)
        traj.rewards.append(step_out.reward)
        traj.values.append(outcome.value)
        traj.dones.append(step_out.next_state.done)
        ep_reward += step_out.reward
        if step_out.next_state.done:
            traj.episode_rewards.append(ep_reward)
            ep_reward = 0.0
            state = env.reset()
            obs = state.progress
        else:
            state = step_out.next_state
            obs = state.progress
    if traj.dones[-1]:
        traj.bootstrap_value = 0.0
    else:
        traj.bootstrap_value = act(policy, obs, stochastic=False).value
    return traj, state, obs


class TrainingDiverged(RuntimeError):
    pass


def train(env_cfg: EnvConfig, ppo_cfg: PpoConfig):
    """Train a policy against the model-based environment.

    Returns (policy, curve) where curve has one row per update with the mean
    episodic reward and loss diagnostics.  Divergence (non-finite weights)
    stops training early and returns the partial curve.
    """
    rng = np.random.default_rng(ppo_cfg.seed)
    policy = PolicyParams(env_cfg.model.pcap_min, env_cfg.model.pcap_max,
                          hidden_width=ppo_cfg.hidden_width, rng=rng)
    optimizer = Adam(policy.parameters(), ppo_cfg.learning_rate)
    env = SimEnv(env_cfg)
    state = env.reset()
    obs = state.progress
    curve = []
    last_mean_ep = float("nan")
    for update_idx in range(ppo_cfg.total_updates):
        traj, state, obs = collect_rollout(env, state, obs, policy,
                                           ppo_cfg.rollout_steps, rng)
        diag = update(policy, traj, ppo_cfg, rng, optimizer)
        if traj.episode_rewards:
            last_mean_ep = float(np.mean(traj.episode_rewards))
        row = {"update": update_idx, "mean_ep_reward": last_mean_ep}
        row.update({k: diag.get(k, float("nan"))
                    for k in ("policy_loss", "value_loss", "entropy", "approx_kl")})
        curve.append(row)
        if diag.get("aborted") or not policy.finite():
            break
    return policy, curve


def save_learning_curve(curve, path) -> None:
    import csv
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["update", "mean_ep_reward", "policy_loss",
                         "value_loss", "entropy", "approx_kl"])
        for row in curve:
            writer.writerow([row["update"], repr(row["mean_ep_reward"]),
                             repr(row["policy_loss"]), repr(row["value_loss"]),
                             repr(row["entropy"]), repr(row["approx_kl"])])


def evaluate_policy(policy: PolicyParams, env_cfg: EnvConfig, label: str = "rl"):
    """Deterministic evaluation episode of a trained policy."""
    controller = lambda obs: act(policy, obs.value, stochastic=False).pcap
    return run_episode(env_cfg, controller, label=label)


# -- persistence --------------------------------------------------------------

def _mlp_to_doc(net: Mlp) -> dict:
    return {
        "sizes": net.sizes,
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }


def _mlp_from_doc(doc: dict) -> Mlp:
    net = Mlp(doc["sizes"])
    weights = [np.asarray(w, dtype=float) for w in doc["weights"]]
    biases = [np.asarray(b, dtype=float) for b in doc["biases"]]
    if len(weights) != len(net.weights) or len(biases) != len(net.biases):
        raise PolicyFormatError("layer count mismatch")
    for i, (w, b) in enumerate(zip(weights, biases)):
        if w.shape != net.weights[i].shape or b.shape != net.biases[i].shape:
            raise PolicyFormatError(
                f"layer {i} shape mismatch: {w.shape} vs {net.weights[i].shape}")
    net.weights = weights
    net.biases = biases
    return net


def save_policy(policy: PolicyParams, path, config: PpoConfig | None = None) -> None:
    doc = {
        "format": POLICY_FORMAT,
        "version": POLICY_VERSION,
        "pcap_min": policy.pcap_min,
        "pcap_max": policy.pcap_max,
        "hidden_width": policy.hidden_width,
        "actor": _mlp_to_doc(policy.actor),
        "critic": _mlp_to_doc(policy.critic),
        "log_std": policy.log_std.tolist(),
        "obs_norm": {"count": policy.obs_norm.count, "mean": policy.obs_norm.mean,
                     "m2": policy.obs_norm.m2},
        "config": asdict(config) if config is not None else None,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_policy(path) -> PolicyParams:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise PolicyFormatError(f"unreadable policy file: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != POLICY_FORMAT:
        raise PolicyFormatError("not a policy document")
    if doc.get("version") != POLICY_VERSION:
        raise PolicyFormatError(f"unsupported policy version {doc.get('version')}")
    try:
        policy = PolicyParams(doc["pcap_min"], doc["pcap_max"],
                              hidden_width=doc["hidden_width"])
        expected_sizes = [1, policy.hidden_width, policy.hidden_width, 1]
        policy.actor = _mlp_from_doc(doc["actor"])
        policy.critic = _mlp_from_doc(doc["critic"])
        if policy.actor.sizes != expected_sizes or policy.critic.sizes != expected_sizes:
            raise PolicyFormatError("network sizes disagree with declared hidden width")
        log_std = np.asarray(doc["log_std"], dtype=float)
        if log_std.shape != (1,):
            raise PolicyFormatError("log_std must be a single value")
        policy.log_std = log_std
        norm = doc["obs_norm"]
        policy.obs_norm = RunningNorm(count=float(norm["count"]),
                                      mean=float(norm["mean"]), m2=float(norm["m2"]))
    except (KeyError, TypeError) as exc:
        raise PolicyFormatError(f"malformed policy document: {exc}") from exc
    if not policy.finite():
        raise PolicyFormatError("policy contains non-finite weights")
    return policy
