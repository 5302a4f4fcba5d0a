"""Layered run configuration: defaults < environment < config file < flags.

Every tunable lives under a section (``encoder.*``, ``train.*``,
``index.*``, ``search.*``, ``analysis.*``, ``synth.*``). Unknown keys are
rejected at merge time, and the effective config is JSON round-trippable.
Environment variables use the ``VIEWROUTE_SECTION_KEY`` form.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from .encoder import EncoderConfig
from .synth import SynthConfig
from .trainer import TrainConfig

ENV_PREFIX = "VIEWROUTE_"


class ConfigError(ValueError):
    pass


def _defaults() -> dict:
    synth = dict(vars(SynthConfig()))
    synth["query_views"] = None  # None tracks views_per_doc at build time
    return {
        "encoder": EncoderConfig().to_dict(),
        "train": TrainConfig().to_dict(),
        "index": {"kind": "flat", "k": 64, "seed": 0},
        "search": {"scorer": "routed", "top_k": 10, "nprobe": 8},
        "analysis": {"threshold": 0.95, "linkage": "average"},
        "synth": synth,
    }


def _coerce(raw, default):
    """Parse a string override against the default's type."""
    if not isinstance(raw, str):
        return raw
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {raw!r}")
    if isinstance(default, int) and not isinstance(default, bool):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if default is None:
        try:
            return json.loads(raw)
        except json.JSONDecodeError:
            return raw
    return raw


@dataclass
class RunConfig:
    values: dict = field(default_factory=_defaults)

    def apply(self, dotted: str, value, source: str = "override"):
        section, _, key = dotted.partition(".")
        if not key or section not in self.values:
            raise ConfigError(f"unknown config key {dotted!r} (from {source})")
        if key not in self.values[section]:
            raise ConfigError(f"unknown config key {dotted!r} (from {source})")
        self.values[section][key] = _coerce(value, self.values[section][key])

    def apply_env(self, environ=None):
        env = os.environ if environ is None else environ
        for name, raw in sorted(env.items()):
            if not name.startswith(ENV_PREFIX):
                continue
            rest = name[len(ENV_PREFIX):].lower()
            section, _, key = rest.partition("_")
            self.apply(f"{section}.{key}", raw, source=f"env {name}")

    def apply_file(self, path):
        with open(path, encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as e:
                raise ConfigError(f"{path}: malformed JSON ({e.msg})")
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config root must be an object")
        for section, body in data.items():
            if not isinstance(body, dict):
                raise ConfigError(f"{path}: section {section!r} must be an object")
            for key, value in body.items():
                self.apply(f"{section}.{key}", value, source=str(path))

    def apply_sets(self, pairs):
        for pair in pairs or ():
            key, sep, value = pair.partition("=")
            if not sep:
                raise ConfigError(f"--set expects key=value, got {pair!r}")
            self.apply(key.strip(), value.strip(), source="--set")

    def get(self, dotted: str):
        section, _, key = dotted.partition(".")
        return self.values[section][key]

    def to_json(self) -> str:
        return json.dumps(self.values, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        cfg = cls()
        data = json.loads(text)
        for section, body in data.items():
            for key, value in body.items():
                cfg.apply(f"{section}.{key}", value, source="json")
        return cfg

    # typed section views -----------------------------------------------

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig.from_dict(dict(self.values["encoder"]))

    def train_config(self) -> TrainConfig:
        return TrainConfig(**self.values["train"])

    def synth_config(self) -> SynthConfig:
        return SynthConfig(**self.values["synth"])


def load_run_config(config_file=None, sets=None, environ=None) -> RunConfig:
    """Merge with precedence: flags (--set) > config file > environment."""
    cfg = RunConfig()
    cfg.apply_env(environ)
    if config_file:
        cfg.apply_file(config_file)
    cfg.apply_sets(sets)
    return cfg
