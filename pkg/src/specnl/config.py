"""Experiment configuration: strict JSON schema with typed dataclasses.

Unknown keys are rejected (typo safety) and every numeric range is checked
at parse time, so a config that parses is a config that runs. All parse
failures raise :class:`ConfigError` naming the offending key; JSON syntax
errors carry the line number.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

VARIANT_CHOICES = ("none", "NL", "NS", "A2", "CGNL", "CC", "SNL")
KERNEL_CHOICES = ("dot", "gaussian", "embedded-gaussian")


class ConfigError(ValueError):
    """Malformed experiment configuration."""


@dataclass(frozen=True)
class TaskSpec:
    """Synthetic long-range task: two motif stamps far apart; the label is a
    function of the motif pair (graded mismatch), never of either stamp alone."""

    image_size: int = 32
    classes: int = 10
    motif_size: int = 4
    noise: float = 0.1
    amplitude: float = 2.0
    train_size: int = 8000
    test_size: int = 2000
    pattern_seed: int = 7


@dataclass(frozen=True)
class OptimSpec:
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4
    decay_epochs: tuple[int, ...] = (15, 25)
    decay_factor: float = 0.1
    batch_size: int = 32
    epochs: int = 30


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    output_dir: str
    variant: str = "none"
    c1: int | None = None
    cs: int | None = None
    kernel: str = "embedded-gaussian"
    kernel_scale: float = 1.0
    k_order: int = 2
    insertion_stage: int = 1
    allow_indefinite: bool = False
    strict_deterministic: bool = False
    task: TaskSpec = field(default_factory=TaskSpec)
    optimizer: OptimSpec = field(default_factory=OptimSpec)


_TASK_FIELDS = {
    "image_size": (int, lambda v: v >= 8),
    "classes": (int, lambda v: v >= 2),
    "motif_size": (int, lambda v: v >= 1),
    "noise": (float, lambda v: v >= 0),
    "amplitude": (float, lambda v: v > 0),
    "train_size": (int, lambda v: v >= 1),
    "test_size": (int, lambda v: v >= 1),
    "pattern_seed": (int, lambda v: v >= 0),
}

_OPTIM_FIELDS = {
    "lr": (float, lambda v: v > 0),
    "momentum": (float, lambda v: 0 <= v < 1),
    "weight_decay": (float, lambda v: v >= 0),
    "decay_epochs": (list, lambda v: all(isinstance(e, int) and e >= 1 for e in v)),
    "decay_factor": (float, lambda v: 0 < v <= 1),
    "batch_size": (int, lambda v: v >= 1),
    "epochs": (int, lambda v: v >= 0),
}

_TOP_FIELDS = {
    "seed": (int, lambda v: v >= 0),
    "output_dir": (str, lambda v: len(v) > 0),
    "variant": (str, lambda v: v in VARIANT_CHOICES),
    "c1": (int, lambda v: v >= 1),
    "cs": (int, lambda v: v >= 1),
    "kernel": (str, lambda v: v in KERNEL_CHOICES),
    "kernel_scale": (float, lambda v: v > 0),
    "k_order": (int, lambda v: v >= 1),
    "insertion_stage": (int, lambda v: v in (1, 2, 3)),
    "allow_indefinite": (bool, lambda v: True),
    "strict_deterministic": (bool, lambda v: True),
    "task": (dict, lambda v: True),
    "optimizer": (dict, lambda v: True),
}

_REQUIRED = ("seed", "output_dir")


def _check_section(doc: dict, fields: dict, where: str) -> dict:
    out = {}
    for key, value in doc.items():
        if key not in fields:
            raise ConfigError(f"unknown key {where}{key!r}")
        want, ok = fields[key]
        if want is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if not isinstance(value, want) or isinstance(value, bool) and want is not bool:
            raise ConfigError(
                f"key {where}{key!r} must be {want.__name__}, got {type(value).__name__}"
            )
        if not ok(value):
            raise ConfigError(f"key {where}{key!r} has out-of-range value {value!r}")
        out[key] = value
    return out


def config_from_dict(doc: dict) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError(f"config root must be an object, got {type(doc).__name__}")
    top = _check_section(doc, _TOP_FIELDS, "")
    for req in _REQUIRED:
        if req not in top:
            raise ConfigError(f"missing required key {req!r}")
    task = TaskSpec(**_check_section(top.pop("task", {}), _TASK_FIELDS, "task."))
    opt_doc = _check_section(top.pop("optimizer", {}), _OPTIM_FIELDS, "optimizer.")
    if "decay_epochs" in opt_doc:
        opt_doc["decay_epochs"] = tuple(opt_doc["decay_epochs"])
    optimizer = OptimSpec(**opt_doc)
    cfg = ExperimentConfig(task=task, optimizer=optimizer, **top)

    if cfg.variant != "none":
        if cfg.c1 is None or cfg.cs is None:
            raise ConfigError("keys 'c1' and 'cs' are required when a block variant is set")
        if cfg.cs > cfg.c1:
            raise ConfigError(f"key 'cs' must be <= c1, got cs={cfg.cs}, c1={cfg.c1}")
        if cfg.variant == "SNL" and cfg.kernel == "dot" and not cfg.allow_indefinite:
            raise ConfigError(
                "key 'kernel': dot kernel with SNL requires allow_indefinite=true"
            )
    return cfg


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e.msg} at line {e.lineno}")
    return config_from_dict(doc)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    doc = asdict(cfg)
    doc["optimizer"]["decay_epochs"] = list(cfg.optimizer.decay_epochs)
    for key in ("c1", "cs"):
        if doc[key] is None:
            del doc[key]
    return doc
