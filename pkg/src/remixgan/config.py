"""Experiment configuration: schema, defaults, validation and parsing.

Config files are flat YAML mappings. Nested keys are written dotted
(``loss_weights.content: 2.0``). Unknown keys are rejected.
"""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import yaml

from .interpolation import SCHEMES
from .losses import MARGIN_RULES
from .models import PHI_MODES

OUTPUT_ENV = "REMIXGAN_OUTPUT_DIR"
MIX_POINTS = ("feature", "input")
CONTENT_TARGETS = ("self", "paired")


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending entry."""

    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


# key -> (attribute, type, help, provenance)
SCHEMA = {
    "seed": ("seed", int, "master seed for every random stream", None),
    "scheme": ("scheme", str, f"augmentation scheme, one of {SCHEMES}", "ReMix vs. mixup / WM / LSR baselines"),
    "data_fraction": ("data_fraction", float, "fraction of the training set kept, in (0, 1]", "10% / 100% data settings"),
    "n_train": ("n_train", int, "training samples generated per domain", None),
    "n_test": ("n_test", int, "held-out samples per domain", None),
    "alpha": ("alpha", float, "Beta(alpha, alpha) parameter of the mixing weight", "alpha = 0.2"),
    "augment_probability": ("augment_probability", float, "probability an iteration is augmented", "p = 0.25"),
    "momentum": ("momentum", float, "margin momentum m, in [0, 1)", "m = 0.99"),
    "margin_rule": ("margin_rule", str, f"margin update rule, one of {MARGIN_RULES}", "momentum update of the margin"),
    "mix_at": ("mix_at", str, f"where inputs are mixed, one of {MIX_POINTS}", "features of the encoder; raw input as special case"),
    "lambda_per_item": ("lambda_per_item", bool, "draw one mixing weight per item instead of per batch", None),
    "lsr_lo": ("lsr_lo", float, "lower clamp of the mixing weight for scheme lsr", "clamped weight range"),
    "lsr_hi": ("lsr_hi", float, "upper clamp of the mixing weight for scheme lsr", "clamped weight range"),
    "phi": ("phi", str, f"content extractor, one of {PHI_MODES}", "content representation function"),
    "phi_seed": ("phi_seed", int, "seed of the frozen random content extractor", None),
    "content_target": ("content_target", str, f"content target, one of {CONTENT_TARGETS}", "t identical to x"),
    "loss_weights.gan": ("w_gan", float, "weight of the adversarial loss", None),
    "loss_weights.content": ("w_content", float, "weight of the content loss", None),
    "width": ("width", int, "base channel width of G and D", None),
    "lr": ("lr", float, "Adam learning rate", None),
    "beta1": ("beta1", float, "Adam first-moment decay", None),
    "beta2": ("beta2", float, "Adam second-moment decay", None),
    "batch_size": ("batch_size", int, "batch size n", None),
    "iterations": ("iterations", int, "training iterations", None),
    "eval_every": ("eval_every", int, "evaluate every this many iterations (0: only at the end)", None),
    "checkpoint_every": ("checkpoint_every", int, "write a resumable checkpoint every this many iterations (0: final only)", None),
    "output_dir": ("output_dir", str, f"run output directory (env {OUTPUT_ENV} overrides the default)", None),
}


@dataclass
class ExperimentConfig:
    seed: int = 0
    scheme: str = "remix"
    data_fraction: float = 1.0
    n_train: int = 640
    n_test: int = 256
    alpha: float = 0.2
    augment_probability: float = 0.25
    momentum: float = 0.99
    margin_rule: str = "paper"
    mix_at: str = "feature"
    lambda_per_item: bool = False
    lsr_lo: float = 0.1
    lsr_hi: float = 0.9
    phi: str = "fixed_random_features"
    phi_seed: int = 0
    content_target: str = "self"
    w_gan: float = 1.0
    w_content: float = 1.0
    width: int = 8
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    batch_size: int = 16
    iterations: int = 2000
    eval_every: int = 500
    checkpoint_every: int = 0
    output_dir: str = "runs/default"

    def validate(self):
        def need(ok, key, msg):
            if not ok:
                raise ConfigError(key, msg)

        need(self.scheme in SCHEMES, "scheme", f"must be one of {SCHEMES}, got {self.scheme!r}")
        need(0.0 < self.data_fraction <= 1.0, "data_fraction", f"must lie in (0, 1], got {self.data_fraction}")
        need(self.n_train >= 2, "n_train", f"must be at least 2, got {self.n_train}")
        need(self.n_test >= 2, "n_test", f"must be at least 2, got {self.n_test}")
        need(self.alpha > 0, "alpha", f"must be positive, got {self.alpha}")
        need(0.0 <= self.augment_probability <= 1.0, "augment_probability",
             f"must lie in [0, 1], got {self.augment_probability}")
        need(0.0 <= self.momentum < 1.0, "momentum", f"must lie in [0, 1), got {self.momentum}")
        need(self.margin_rule in MARGIN_RULES, "margin_rule", f"must be one of {MARGIN_RULES}, got {self.margin_rule!r}")
        need(self.mix_at in MIX_POINTS, "mix_at", f"must be one of {MIX_POINTS}, got {self.mix_at!r}")
        need(0.0 <= self.lsr_lo <= self.lsr_hi <= 1.0, "lsr_lo",
             f"need 0 <= lsr_lo <= lsr_hi <= 1, got [{self.lsr_lo}, {self.lsr_hi}]")
        need(self.phi in PHI_MODES, "phi", f"must be one of {PHI_MODES}, got {self.phi!r}")
        need(self.content_target in CONTENT_TARGETS, "content_target",
             f"must be one of {CONTENT_TARGETS}, got {self.content_target!r}")
        need(self.w_gan >= 0, "loss_weights.gan", f"must be nonnegative, got {self.w_gan}")
        need(self.w_content >= 0, "loss_weights.content", f"must be nonnegative, got {self.w_content}")
        need(self.width >= 1, "width", f"must be at least 1, got {self.width}")
        need(self.lr > 0, "lr", f"must be positive, got {self.lr}")
        need(0.0 <= self.beta1 < 1.0, "beta1", f"must lie in [0, 1), got {self.beta1}")
        need(0.0 <= self.beta2 < 1.0, "beta2", f"must lie in [0, 1), got {self.beta2}")
        need(self.batch_size >= 1, "batch_size", f"must be at least 1, got {self.batch_size}")
        if self.scheme != "none":
            need(self.batch_size >= 2, "batch_size",
                 f"must be at least 2 when augmentation is active, got {self.batch_size}")
        need(self.iterations >= 0, "iterations", f"must be nonnegative, got {self.iterations}")
        need(self.eval_every >= 0, "eval_every", f"must be nonnegative, got {self.eval_every}")
        need(self.checkpoint_every >= 0, "checkpoint_every", f"must be nonnegative, got {self.checkpoint_every}")
        n_kept = int(round(self.data_fraction * self.n_train))
        need(n_kept >= max(self.batch_size, 2), "data_fraction",
             f"keeps {n_kept} training samples, fewer than the batch size {self.batch_size}")
        return self

    def to_flat(self):
        """Config as a flat mapping keyed like the config file."""
        values = asdict(self)
        return {key: values[attr] for key, (attr, *_rest) in SCHEMA.items()}

    def replace(self, **overrides):
        values = asdict(self)
        values.update(overrides)
        return ExperimentConfig(**values).validate()


_DEFAULTS = ExperimentConfig()


def _coerce(key, typ, value):
    if isinstance(value, str) and typ is not str:
        text = value.strip()
        if typ is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ConfigError(key, f"expected a boolean, got {value!r}")
        try:
            return typ(float(text)) if typ is int and "e" in text.lower() else typ(text)
        except ValueError:
            raise ConfigError(key, f"expected {typ.__name__}, got {value!r}") from None
    if typ is bool:
        if isinstance(value, bool):
            return value
        raise ConfigError(key, f"expected a boolean, got {value!r}")
    if typ is int:
        if isinstance(value, bool) or not float(value).is_integer():
            raise ConfigError(key, f"expected an integer, got {value!r}")
        return int(value)
    if typ is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(key, f"expected a number, got {value!r}")
        return float(value)
    if typ is str and not isinstance(value, str):
        raise ConfigError(key, f"expected a string, got {value!r}")
    return value


def _flatten(mapping, prefix=""):
    out = {}
    for k, v in mapping.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def load_config_file(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError("config", f"file not found: {path}")
    raw = yaml.safe_load(path.read_text()) or {}
    if not isinstance(raw, dict):
        raise ConfigError("config", f"{path} must contain a key-value mapping")
    return _flatten(raw)


def parse_config(path=None, overrides=None):
    """Build a validated config from an optional file plus flag overrides.

    ``overrides`` maps config keys to values (strings are coerced); they win
    over the file, which wins over the defaults.
    """
    values = {}
    if path is not None:
        values.update(load_config_file(path))
    values.update(overrides or {})
    kwargs = {}
    for key, value in values.items():
        if key not in SCHEMA:
            raise ConfigError(key, "unknown config key")
        attr, typ, _, _ = SCHEMA[key]
        kwargs[attr] = _coerce(key, typ, value)
    if "output_dir" not in kwargs and os.environ.get(OUTPUT_ENV):
        kwargs["output_dir"] = os.environ[OUTPUT_ENV]
    return ExperimentConfig(**kwargs).validate()


def schema_help():
    """One line per key with its default and provenance, for ``--help``."""
    lines = []
    defaults = _DEFAULTS.to_flat()
    for key, (_, _, text, source) in SCHEMA.items():
        line = f"  {key} (default {defaults[key]!r}): {text}"
        if source:
            line += f" [from the method: {source}]"
        lines.append(line)
    return "\n".join(lines)


def config_fields():
    return [f.name for f in fields(ExperimentConfig)]
