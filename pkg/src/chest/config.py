"""Experiment configuration: a single strict-schema JSON document.

Unknown keys are rejected everywhere so a stale or typo'd config fails fast
instead of silently running a different experiment.  ``config_hash`` ties
every output row back to the exact document that produced it.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .channelgen import ChannelModelSpec

__all__ = ["ExperimentConfig", "EnvironmentConfig", "load_config", "config_hash"]


def _take(d: dict, context: str, required: dict, optional: dict) -> dict:
    """Extract fields with defaults, rejecting unknown keys."""
    unknown = set(d) - set(required) - set(optional)
    if unknown:
        raise ValueError(f"{context}: unknown keys {sorted(unknown)}")
    missing = set(required) - set(d)
    if missing:
        raise ValueError(f"{context}: missing required keys {sorted(missing)}")
    out = {}
    for key, conv in required.items():
        out[key] = conv(d[key])
    for key, (conv, default) in optional.items():
        out[key] = conv(d[key]) if key in d else default
    return out


@dataclass(frozen=True)
class EnvironmentConfig:
    name: str
    channel: ChannelModelSpec
    train_samples: int


@dataclass(frozen=True)
class NetworkConfig:
    s_init: int = 32
    widths: tuple[int, ...] = (16, 32, 16, 8)


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 12
    batch_size: int = 128
    learning_rate: float = 1e-4
    aggregated_epochs: int | None = None  # defaults to `epochs`


@dataclass(frozen=True)
class ScheduleConfig:
    steps: int = 100
    beta_start: float = 1e-4
    beta_end: float = 0.2


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    seed: int
    nr: int
    nt: int
    snr_db: tuple[float, ...]
    pilot_density: tuple[float, ...]
    environments: tuple[EnvironmentConfig, ...]
    test_samples: int
    schedule: ScheduleConfig
    expert_network: NetworkConfig
    aggregated_network: NetworkConfig
    training: TrainingConfig
    estimators: tuple[dict, ...]
    base_dir: Path
    data_dir: Path
    weights_dir: Path
    record_wall_time: bool
    raw: dict = field(repr=False, compare=False, default_factory=dict)

    def n_pilots(self, alpha: float) -> int:
        np_exact = alpha * self.nt
        n = round(np_exact)
        if abs(np_exact - n) > 1e-9 or n < 1:
            raise ValueError(
                f"pilot density {alpha} times nt={self.nt} must be a positive integer"
            )
        return n

    def environment(self, name: str) -> EnvironmentConfig:
        for env in self.environments:
            if env.name == name:
                return env
        raise KeyError(f"no environment named {name!r}")


def config_hash(raw: dict) -> str:
    """Stable 12-hex-digit digest of the canonicalized raw document."""
    blob = json.dumps(raw, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:12]


def load_config(path) -> ExperimentConfig:
    """Parse and validate an experiment JSON file."""
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    return parse_config(raw, base_dir=path.parent)


def parse_config(raw: dict, base_dir: Path | None = None) -> ExperimentConfig:
    base_dir = Path(base_dir) if base_dir is not None else Path(".")
    top = _take(
        raw, "config",
        required={
            "name": str,
            "seed": int,
            "dims": dict,
            "snr_db": list,
            "pilot_density": list,
            "environments": list,
            "estimators": list,
        },
        optional={
            "test_samples": (int, 100),
            "schedule": (dict, {}),
            "expert_network": (dict, {}),
            "aggregated_network": (dict, {}),
            "training": (dict, {}),
            "paths": (dict, {}),
            "record_wall_time": (bool, True),
        },
    )
    dims = _take(top["dims"], "dims", {"nr": int, "nt": int}, {})
    sched = _take(
        top["schedule"], "schedule", {},
        {"steps": (int, 100), "beta_start": (float, 1e-4), "beta_end": (float, 0.2)},
    )
    expert_net = _take(
        top["expert_network"], "expert_network", {},
        {"s_init": (int, 32), "widths": (tuple, (16, 32, 16, 8))},
    )
    agg_net = _take(
        top["aggregated_network"], "aggregated_network", {},
        {"s_init": (int, 32), "widths": (tuple, (36, 68, 36, 18))},
    )
    training = _take(
        top["training"], "training", {},
        {
            "epochs": (int, 12),
            "batch_size": (int, 128),
            "learning_rate": (float, 1e-4),
            "aggregated_epochs": (int, None),
        },
    )
    paths = _take(
        top["paths"], "paths", {},
        {"data_dir": (str, "data"), "weights_dir": (str, "weights")},
    )

    snr_grid = tuple(float(v) for v in top["snr_db"])
    if not snr_grid:
        raise ValueError("snr_db grid must be nonempty")
    alpha_grid = tuple(float(v) for v in top["pilot_density"])
    if not alpha_grid:
        raise ValueError("pilot_density grid must be nonempty")
    if top["test_samples"] < 1:
        raise ValueError("test_samples must be >= 1")

    envs = []
    for i, env_raw in enumerate(top["environments"]):
        env = _take(
            env_raw, f"environments[{i}]",
            {"name": str, "channel": dict, "train_samples": int},
            {},
        )
        spec = ChannelModelSpec.from_json_dict(
            {**env["channel"], "nr": dims["nr"], "nt": dims["nt"]}
        )
        if env["train_samples"] < 1:
            raise ValueError(f"environments[{i}]: train_samples must be >= 1")
        envs.append(EnvironmentConfig(env["name"], spec, env["train_samples"]))
    names = [e.name for e in envs]
    if len(set(names)) != len(names):
        raise ValueError("environment names must be unique")

    known_methods = {"rls", "lasso", "dm", "dmvb", "langevin"}
    estimators = []
    for i, est in enumerate(top["estimators"]):
        if "method" not in est:
            raise ValueError(f"estimators[{i}]: missing 'method'")
        if est["method"] not in known_methods:
            raise ValueError(
                f"estimators[{i}]: unknown method {est['method']!r} "
                f"(expected one of {sorted(known_methods)})"
            )
        estimators.append(dict(est))

    config = ExperimentConfig(
        name=top["name"],
        seed=top["seed"],
        nr=dims["nr"],
        nt=dims["nt"],
        snr_db=snr_grid,
        pilot_density=alpha_grid,
        environments=tuple(envs),
        test_samples=top["test_samples"],
        schedule=ScheduleConfig(**sched),
        expert_network=NetworkConfig(
            s_init=expert_net["s_init"], widths=tuple(expert_net["widths"])
        ),
        aggregated_network=NetworkConfig(
            s_init=agg_net["s_init"], widths=tuple(agg_net["widths"])
        ),
        training=TrainingConfig(**training),
        estimators=tuple(estimators),
        base_dir=base_dir,
        data_dir=base_dir / paths["data_dir"],
        weights_dir=base_dir / paths["weights_dir"],
        record_wall_time=top["record_wall_time"],
        raw=raw,
    )
    for alpha in alpha_grid:
        config.n_pilots(alpha)  # validates integrality
    return config
