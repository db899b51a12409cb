"""Plain-text run configuration: `key = value` lines, strictly validated.

Unknown keys are rejected (silent typos in experiment configs are worse
than hard failures), and every command writes the fully-resolved
configuration next to its outputs so a run can be reproduced from its
artifacts alone.
"""

from dataclasses import dataclass, fields

from .nets import NetworkSpec
from .train import TrainConfig


class ConfigError(ValueError):
    """Raised for unreadable, unknown, or ill-typed configuration."""


def _parse_bool(text):
    lowered = text.strip().lower()
    if lowered in ("true", "yes", "1"):
        return True
    if lowered in ("false", "no", "0"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


@dataclass
class RunConfig:
    stage: str = "static"
    dataset: str = "synth"
    resolution: int = 64
    flatten_gt: bool = False
    encoder_blocks: str = "2x16,2x32,2x64,2x128,2x128"
    nl_after_block: int = 5
    nl_count: int = 3
    embed_activation: str = "linear"
    learning_rate: float = 1e-3
    momentum: float = 0.9
    iterations: int = 200
    loss_clamp_eps: float = 1e-7
    checkpoint_every: int = 0
    seed: int = 0
    out_dir: str = "run_out"
    synth_frames: int = 20
    synth_size: int = 64
    synth_motion: int = 2
    synth_sequences: int = 1
    synth_distractor: bool = False
    ablate_size: int = 96
    ablate_reps: int = 3

    def network_spec(self, input_channels=3):
        try:
            return NetworkSpec.from_config(
                {
                    "input_channels": str(input_channels),
                    "encoder_blocks": self.encoder_blocks,
                    "nl_after_block": str(self.nl_after_block),
                    "nl_count": str(self.nl_count),
                    "embed_activation": self.embed_activation,
                }
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def train_config(self, stage):
        try:
            return TrainConfig(
                learning_rate=self.learning_rate,
                momentum=self.momentum,
                iterations=self.iterations,
                loss_clamp_eps=self.loss_clamp_eps,
                stage=stage,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def validate(self):
        if self.stage not in ("static", "dynamic", "both"):
            raise ConfigError(f"stage must be static, dynamic or both, got {self.stage!r}")
        if self.resolution < 1:
            raise ConfigError(f"resolution must be positive, got {self.resolution}")
        self.network_spec()
        self.train_config("static")
        return self


_FIELDS = {f.name: f.type for f in fields(RunConfig)}
_PARSERS = {int: int, float: float, str: str.strip, bool: _parse_bool}


def parse_config_text(text, base=None, origin="<config>"):
    cfg = base or RunConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{origin}:{lineno}: expected key=value, got {raw!r}")
        key = key.strip()
        if key not in _FIELDS:
            raise ConfigError(f"{origin}:{lineno}: unknown key {key!r}")
        try:
            parsed = _PARSERS[_FIELDS[key]](value.strip())
        except (ValueError, ConfigError) as exc:
            raise ConfigError(f"{origin}:{lineno}: bad value for {key}: {exc}") from None
        setattr(cfg, key, parsed)
    return cfg


def load_config(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text, origin=str(path))


def write_resolved(path, cfg):
    with open(path, "w") as fh:
        for f in fields(RunConfig):
            fh.write(f"{f.name} = {_fmt(getattr(cfg, f.name))}\n")
