"""Run configuration: strict JSON parsing with documented defaults.

Configs are the single source of truth for experiments; unknown keys are
rejected rather than ignored so typos cannot silently change a run. Each
algorithm tag owns a hyperparameter schema; a few tags are aliases that pin
specific values (e.g. onpolicy_dop fixes kappa = 0).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import ConfigError

STOCHASTIC_HPARAMS: dict[str, object] = {
    # networks
    "hidden": 64,               # utility/actor hidden width (two layers)
    "window": 1,                # observation history length fed to actors
    "shared_utility": True,     # one utility net with agent-id one-hot input
    "normalize_weights": True,  # divide mixing weights by their sum
    # optimization
    "critic_lr": 1e-4,
    "actor_lr": 5e-4,
    "rms_alpha": 0.99,
    "rms_eps": 1e-8,
    # mixed critic loss
    "kappa": 0.5,               # off-policy share of the critic loss
    "tb_steps": 5,              # k-step backup horizon
    "lambda_tb": 1.0,           # lambda inside the backup coefficients
    "lambda_on": 0.8,           # TD(lambda) for the on-policy target
    "target_period": 200,       # critic updates between hard target syncs
    # buffers and batches
    "buffer_off": 5000,         # episodes
    "buffer_on": 32,            # episodes
    "batch_off": 32,
    "batch_on": 16,
    "actor_batch": 16,          # fresh episodes per actor update
    # exploration
    "eps_start": 1.0,
    "eps_end": 0.05,
    "eps_anneal": 500_000,      # env steps to anneal over
    # harness
    "n_envs": 1,                # episodes collected per iteration
    "eval_episodes": 4,
    "advantage_actor": False,   # center local values by their policy mean
    "offpolicy_actor": False,   # importance-weighted actor updates from the off buffer
    "ratio_clip": 10.0,
    "expectation_mode": "decomposed",  # decomposed | sampled | exhaustive
    "expectation_samples": 200,
}

DETERMINISTIC_HPARAMS: dict[str, object] = {
    "hidden": 64,
    "window": 1,
    "shared_utility": True,
    "normalize_weights": True,
    "critic_lr": 5e-3,
    "actor_lr": 5e-3,
    "rms_alpha": 0.99,
    "rms_eps": 1e-8,
    "buffer_size": 10_000,      # transitions
    "batch_size": 1250,
    "warmup_steps": 1000,       # uniform-random steps to seed the buffer
    "train_every": 1,           # env steps per critic update
    "actor_delay": 2,           # critic updates per actor/target update
    "soft_alpha": 0.01,
    "noise_kind": "gaussian",   # gaussian | ou
    "noise_sigma": 0.1,
    "ou_theta": 0.15,
    "eval_episodes": 4,
}

MADDPG_HPARAMS: dict[str, object] = {
    **DETERMINISTIC_HPARAMS,
    "gumbel_temperature": 1.0,
    "straight_through": False,
    "discrete_relaxation": False,  # must be set to run on a discrete env
}

ALGORITHMS: dict[str, tuple[str, dict[str, object], dict[str, object]]] = {
    # tag -> (family, schema, forced overrides)
    "stochastic_dop": ("stochastic", STOCHASTIC_HPARAMS, {}),
    "onpolicy_dop": ("stochastic", STOCHASTIC_HPARAMS, {"kappa": 0.0}),
    "offpolicy_dop": ("stochastic", STOCHASTIC_HPARAMS, {"kappa": 1.0}),
    "common_tb_dop": ("stochastic", STOCHASTIC_HPARAMS,
                      {"expectation_mode": "sampled"}),
    "coma": ("coma", STOCHASTIC_HPARAMS, {}),
    "deterministic_dop": ("deterministic", DETERMINISTIC_HPARAMS, {}),
    "maddpg": ("maddpg", MADDPG_HPARAMS, {}),
}

ENV_PARAM_KEYS = {
    "matrix_game": {"gamma"},
    "aggregation": {"gamma", "start_box"},
    "mill": {"gamma"},
}

_TOP_LEVEL = {"algorithm", "env", "env_params", "seeds", "total_steps",
              "metric_period", "out_dir", "record_wall_clock", "hparams"}


@dataclass
class RunConfig:
    algorithm: str
    env: str
    seeds: list[int]
    total_steps: int
    metric_period: int
    env_params: dict = field(default_factory=dict)
    out_dir: str = "runs"
    record_wall_clock: bool = False
    hparams: dict = field(default_factory=dict)

    @property
    def family(self) -> str:
        return ALGORITHMS[self.algorithm][0]

    def to_dict(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "env": self.env,
            "env_params": dict(sorted(self.env_params.items())),
            "seeds": list(self.seeds),
            "total_steps": self.total_steps,
            "metric_period": self.metric_period,
            "out_dir": self.out_dir,
            "record_wall_clock": self.record_wall_clock,
            "hparams": dict(sorted(self.hparams.items())),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def validate_config(raw: dict) -> RunConfig:
    unknown = set(raw) - _TOP_LEVEL
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for key in ("algorithm", "env", "seeds", "total_steps", "metric_period"):
        if key not in raw:
            raise ConfigError(f"missing required config key {key!r}")

    algorithm = raw["algorithm"]
    if algorithm not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {algorithm!r}; "
                          f"choose from {sorted(ALGORITHMS)}")
    env = raw["env"]
    if env not in ENV_PARAM_KEYS:
        raise ConfigError(f"unknown env {env!r}; choose from {sorted(ENV_PARAM_KEYS)}")

    env_params = dict(raw.get("env_params", {}))
    bad = set(env_params) - ENV_PARAM_KEYS[env]
    if bad:
        raise ConfigError(f"unknown env_params for {env}: {sorted(bad)}")

    seeds = list(raw["seeds"])
    if not seeds or not all(isinstance(s, int) for s in seeds):
        raise ConfigError("seeds must be a non-empty list of integers")
    total_steps = int(raw["total_steps"])
    metric_period = int(raw["metric_period"])
    if total_steps < 1 or metric_period < 1:
        raise ConfigError("total_steps and metric_period must be positive")

    _, schema, forced = ALGORITHMS[algorithm]
    user_hp = dict(raw.get("hparams", {}))
    bad = set(user_hp) - set(schema)
    if bad:
        raise ConfigError(f"unknown hparams for {algorithm}: {sorted(bad)}")
    pinned = set(user_hp) & set(forced)
    if pinned:
        raise ConfigError(f"{algorithm} pins {sorted(pinned)}; remove from hparams")
    hparams = {**schema, **user_hp, **forced}

    return RunConfig(algorithm=algorithm, env=env, seeds=seeds,
                     total_steps=total_steps, metric_period=metric_period,
                     env_params=env_params, out_dir=raw.get("out_dir", "runs"),
                     record_wall_clock=bool(raw.get("record_wall_clock", False)),
                     hparams=hparams)


def load_config(path) -> RunConfig:
    with open(path) as fh:
        text = fh.read()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: "
                          f"{exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    return validate_config(raw)


def parse_config_json(text: str) -> RunConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: "
                          f"{exc.msg}") from exc
    return validate_config(raw)
