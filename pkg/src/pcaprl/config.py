"""Run configuration: flat key-value sections in INI form (or a JSON
document with the same section names) mapped onto the typed configs.

Sections and keys:

  [model]      a b alpha beta k_l tau pcap_min pcap_max   (or model_path)
  [env]        dt total_heartbeats horizon_cap noise_sd c1 c2
  [ppo]        gamma gae_lambda clip_ratio entropy_coef value_coef
               learning_rate rollout_steps minibatch_size epochs
               total_updates hidden_width
  [controller] controller policy_path epsilon tau_cl const_pcap_w
  [experiment] n_per_controller nodes executions_per_node node_jitter
               eval_noise_sd epsilons sweep_step
"""

from __future__ import annotations

import configparser
import json
from pathlib import Path

from .model import ModelParams
from .simenv import EnvConfig, RewardWeights, DEFAULT_EVAL_NOISE_SD_HZ
from .ppo import PpoConfig
from .controllers import ControllerSpec, DEFAULT_TAU_CL_S

_KIND_ALIASES = {"max": "const_max", "min": "const_min"}


def load_config(path) -> dict[str, dict]:
    """Parse an INI or JSON config file into {section: {key: value}}."""
    text = Path(path).read_text(encoding="utf-8")
    stripped = text.lstrip()
    if stripped.startswith("{"):
        doc = json.loads(text)
        if not isinstance(doc, dict):
            raise ValueError("JSON config must be an object of sections")
        return {str(k): dict(v) for k, v in doc.items()}
    parser = configparser.ConfigParser()
    parser.read_string(text)
    return {name: dict(parser[name]) for name in parser.sections()}


def _get(section: dict, key: str, cast, default):
    if key not in section or section[key] == "":
        return default
    return cast(section[key])


def model_from_config(sections: dict) -> ModelParams:
    sec = sections.get("model", {})
    if "model_path" in sec:
        return ModelParams.load_json(sec["model_path"])
    base = ModelParams.default()
    return ModelParams(
        a=_get(sec, "a", float, base.a),
        b=_get(sec, "b", float, base.b),
        alpha=_get(sec, "alpha", float, base.alpha),
        beta=_get(sec, "beta", float, base.beta),
        k_l=_get(sec, "k_l", float, base.k_l),
        tau=_get(sec, "tau", float, base.tau),
        pcap_min=_get(sec, "pcap_min", float, base.pcap_min),
        pcap_max=_get(sec, "pcap_max", float, base.pcap_max),
    )


def env_from_config(sections: dict, model: ModelParams | None = None,
                    seed: int = 0) -> EnvConfig:
    sec = sections.get("env", {})
    model = model if model is not None else model_from_config(sections)
    weights = RewardWeights(c1=_get(sec, "c1", float, 1.052),
                            c2=_get(sec, "c2", float, 2.22))
    return EnvConfig(
        model=model,
        weights=weights,
        dt=_get(sec, "dt", float, 1.0),
        total_heartbeats=_get(sec, "total_heartbeats", int, 10_000),
        horizon_cap=_get(sec, "horizon_cap", int, 1200),
        noise_sd=_get(sec, "noise_sd", float, 0.0),
        seed=seed,
    )


def ppo_from_config(sections: dict, seed: int = 0) -> PpoConfig:
    sec = sections.get("ppo", {})
    base = PpoConfig()
    return PpoConfig(
        gamma=_get(sec, "gamma", float, base.gamma),
        gae_lambda=_get(sec, "gae_lambda", float, base.gae_lambda),
        clip_ratio=_get(sec, "clip_ratio", float, base.clip_ratio),
        entropy_coef=_get(sec, "entropy_coef", float, base.entropy_coef),
        value_coef=_get(sec, "value_coef", float, base.value_coef),
        learning_rate=_get(sec, "learning_rate", float, base.learning_rate),
        rollout_steps=_get(sec, "rollout_steps", int, base.rollout_steps),
        minibatch_size=_get(sec, "minibatch_size", int, base.minibatch_size),
        epochs=_get(sec, "epochs", int, base.epochs),
        total_updates=_get(sec, "total_updates", int, base.total_updates),
        hidden_width=_get(sec, "hidden_width", int, base.hidden_width),
        seed=seed,
    )


def controller_from_config(sections: dict, overrides: dict | None = None) -> ControllerSpec:
    sec = dict(sections.get("controller", {}))
    if overrides:
        sec.update({k: v for k, v in overrides.items() if v is not None})
    kind = str(sec.get("controller", "const_max"))
    kind = _KIND_ALIASES.get(kind, kind)
    return ControllerSpec(
        kind=kind,
        const_pcap_w=_get(sec, "const_pcap_w", float, None),
        epsilon=_get(sec, "epsilon", float, None),
        tau_cl=_get(sec, "tau_cl", float, DEFAULT_TAU_CL_S),
        policy_path=sec.get("policy_path"),
    )


def experiment_from_config(sections: dict) -> dict:
    sec = sections.get("experiment", {})
    epsilons = _get(sec, "epsilons", str, "0,0.1,0.2,0.3,0.4,0.5,0.6")
    return {
        "n_per_controller": _get(sec, "n_per_controller", int, 10),
        "nodes": _get(sec, "nodes", int, 1),
        "executions_per_node": _get(sec, "executions_per_node", int, 3),
        "node_jitter": _get(sec, "node_jitter", float, 0.05),
        "eval_noise_sd": _get(sec, "eval_noise_sd", float, DEFAULT_EVAL_NOISE_SD_HZ),
        "epsilons": [float(e) for e in epsilons.split(",") if e != ""],
        "sweep_step": _get(sec, "sweep_step", float, 0.5),
    }
