"""Run configuration: flat TOML sections covering data, model and training.

The shipped defaults are the crowd-pedestrian profile: 8 observed / 12
predicted steps, 10 flow layers with 8 bins on support 15, noise scales
alpha=10, beta=0.2, gamma=0.02, truncated-normal augmentation on [0.3, 1.7],
Adam at 1e-3 with batch 128 for 150 epochs and a 10% validation split.

Values round-trip losslessly through `dump_config` / `load_config`: floats
are emitted with `repr`, strings as JSON-escaped basic strings. Unknown
sections or keys raise `ConfigError` naming the offender.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

import tomli

from trajflow.data import AugmentConfig
from trajflow.errors import ConfigError
from trajflow.flows import FlowConfig
from trajflow.training import NoiseConfig, TrainConfig


@dataclass(frozen=True)
class DataConfig:
    train_path: str = ""
    eval_path: str = ""
    format: str = "eth-ucy-text"
    scale: float = 1.0
    t_obs: int = 8
    t_pred: int = 12
    step: int = 1
    min_future: int = 2


@dataclass(frozen=True)
class FlowSettings:
    """Flow hyperparameters; the dimensionality is 2 * t_pred, so not stored."""

    n_layers: int = 10
    k_bins: int = 8
    support_b: float = 15.0
    cond_dim: int = 16
    conditioner_hidden: int = 32
    conditioner_depth: int = 5


@dataclass(frozen=True)
class AugmentSettings:
    enabled: bool = True
    mu: float = 1.0
    sigma: float = 0.5
    s_min: float = 0.3
    s_max: float = 1.7

    def to_augment_config(self) -> AugmentConfig | None:
        if not self.enabled:
            return None
        return AugmentConfig(self.mu, self.sigma, self.s_min, self.s_max)


@dataclass(frozen=True)
class OutputConfig:
    out_dir: str = "runs/out"


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    flow: FlowSettings = field(default_factory=FlowSettings)
    noise: NoiseConfig = field(default_factory=lambda: NoiseConfig(10.0, 0.2, 0.02))
    augment: AugmentSettings = field(default_factory=AugmentSettings)
    train: TrainConfig = field(default_factory=TrainConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def flow_config(self) -> FlowConfig:
        return FlowConfig(dim=2 * self.data.t_pred, **asdict(self.flow))

    def as_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        canonical = json.dumps(self.as_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()[:12]


_SECTIONS = {
    "data": DataConfig,
    "flow": FlowSettings,
    "noise": NoiseConfig,
    "augment": AugmentSettings,
    "train": TrainConfig,
    "output": OutputConfig,
}


def parse_config(text: str) -> RunConfig:
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from exc
    kwargs = {}
    for section, payload in raw.items():
        cls = _SECTIONS.get(section)
        if cls is None:
            raise ConfigError(f"unknown config section {section!r}")
        if not isinstance(payload, dict):
            raise ConfigError(f"section {section!r} must be a table")
        known = {f.name for f in fields(cls)}
        for key in payload:
            if key not in known:
                raise ConfigError(f"unknown config key {section}.{key}")
        try:
            kwargs[section] = cls(**payload)
        except Exception as exc:
            raise ConfigError(f"invalid [{section}] values: {exc}") from exc
    return RunConfig(**kwargs)


def load_config(path) -> RunConfig:
    with open(path, "r") as fh:
        return parse_config(fh.read())


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, str):
        return json.dumps(value)
    raise ConfigError(f"cannot serialize config value {value!r}")


def dump_config(cfg: RunConfig, comment: str = "") -> str:
    lines = []
    if comment:
        lines.extend(f"# {row}" for row in comment.splitlines())
    for section, payload in cfg.as_dict().items():
        lines.append(f"[{section}]")
        for key, value in payload.items():
            lines.append(f"{key} = {_format_value(value)}")
        lines.append("")
    return "\n".join(lines)


def save_config(cfg: RunConfig, path, comment: str = "") -> None:
    with open(path, "w") as fh:
        fh.write(dump_config(cfg, comment))
