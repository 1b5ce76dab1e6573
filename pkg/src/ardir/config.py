"""Experiment configuration: validated schema, YAML I/O, hashing, overrides.

A single config file fully determines a run together with its seed. Unknown
keys are rejected, the schema is versioned, and the canonical dump round-trips
through parse -> serialize -> parse unchanged.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from ardir.attacks import PerturbationBudget
from ardir.distill import ArdirLossConfig
from ardir.errors import ConfigurationError
from ardir.optim import TrainingSchedule

SCHEMA_VERSION = 1

DATA_DIR_ENV = "ARDIR_DATA_DIR"


class _StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DatasetConfig(_StrictModel):
    name: Literal["toy-shapes", "cifar10", "svhn"] = "toy-shapes"
    resolution: int = 8
    channels: int = 1
    num_classes: int = 2
    train_size: Optional[int] = 2000
    test_size: Optional[int] = 500
    noise: float = 0.15
    jitter: int = 1
    seed: int = 1234
    normalization: Literal["none"] = "none"


class ModelConfig(_StrictModel):
    arch: Literal["small-cnn"] = "small-cnn"
    channels: list[int] = Field(default_factory=lambda: [16, 32, 64])
    taps: Optional[list[int]] = None


class BudgetConfig(_StrictModel):
    epsilon: float = 0.1
    step_size: float = 0.025
    steps: int = 10
    random_init: bool = True

    def to_budget(self) -> PerturbationBudget:
        return PerturbationBudget(
            epsilon=self.epsilon,
            step_size=self.step_size,
            steps=self.steps,
            random_init=self.random_init,
        )


class ScheduleConfig(_StrictModel):
    epochs: int = 30
    batch_size: int = 128
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5.0e-4
    milestones: list[tuple[int, float]] = Field(default_factory=list)

    def to_schedule(self) -> TrainingSchedule:
        return TrainingSchedule(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            milestones=tuple((int(e), float(d)) for e, d in self.milestones),
        )


class LossConfig(_StrictModel):
    variant: Literal["sat", "ard", "ardir"] = "sat"
    beta: float = 0.0
    temperature: float = 1.0
    alpha: float = 1.0
    student_lpips_input: Literal["adversarial", "clean"] = "adversarial"
    representation_distance: Literal["lpips", "raw-l2"] = "lpips"

    def to_loss_config(self) -> ArdirLossConfig:
        return ArdirLossConfig(
            variant=self.variant,
            beta=self.beta,
            temperature=self.temperature,
            alpha=self.alpha,
            student_lpips_input=self.student_lpips_input,
            representation_distance=self.representation_distance,
        )


class TeacherSpec(_StrictModel):
    kind: Literal["clean", "robust"] = "robust"
    data: Literal["clean", "adversarial"] = "clean"
    checkpoint: Optional[str] = None

    @model_validator(mode="after")
    def _reject_clean_adversarial(self):
        if self.kind == "clean" and self.data == "adversarial":
            raise ValueError(
                "the clean-model + adversarial-data teacher combination is rejected: "
                "a clean teacher cannot label adversarial inputs"
            )
        return self

    @property
    def combo(self) -> str:
        return {"clean": "C", "robust": "R"}[self.kind] + {
            "clean": "C",
            "adversarial": "A",
        }[self.data]


class EvalConfig(_StrictModel):
    attacks: list[Literal["fgsm", "pgd", "pgd_mr"]] = Field(
        default_factory=lambda: ["fgsm", "pgd", "pgd_mr"]
    )
    restarts: int = 5
    train_eval_size: Optional[int] = 512
    batch_size: int = 256


class ExperimentConfig(_StrictModel):
    schema_version: int = SCHEMA_VERSION
    name: Optional[str] = None
    output_dir: str = "runs"
    seeds: list[int] = Field(default_factory=lambda: [0, 1, 2])
    dataset: DatasetConfig = Field(default_factory=DatasetConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    train_budget: BudgetConfig = Field(default_factory=BudgetConfig)
    eval_budget: BudgetConfig = Field(
        default_factory=lambda: BudgetConfig(steps=20)
    )
    schedule: ScheduleConfig = Field(default_factory=ScheduleConfig)
    loss: LossConfig = Field(default_factory=LossConfig)
    teacher: Optional[TeacherSpec] = None
    eval: EvalConfig = Field(default_factory=EvalConfig)
    log_batch_metrics: bool = False

    @model_validator(mode="after")
    def _check(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ValueError(
                f"unsupported schema_version {self.schema_version}; this build reads {SCHEMA_VERSION}"
            )
        if not self.seeds:
            raise ValueError("seeds list must be nonempty")
        if self.loss.variant != "sat" and self.teacher is None:
            raise ValueError(f"loss variant {self.loss.variant!r} requires a teacher section")
        return self

    def method_label(self) -> str:
        """Row label in the style 'ARDIR (RC)(beta=0.6,t=1)'."""
        variant = self.loss.variant.upper()
        if self.loss.variant == "sat":
            return "SAT" if self.train_budget.epsilon > 0 else "Clean"
        combo = self.teacher.combo if self.teacher else "?"
        t = format_num(self.loss.temperature)
        if self.loss.variant == "ard":
            return f"ARD ({combo})(t={t})"
        return f"ARDIR ({combo})(beta={format_num(self.loss.beta)},t={t})"


class SweepSpec(_StrictModel):
    base: ExperimentConfig
    parameter: str = "loss.beta"
    values: list[float]
    seeds: Optional[list[int]] = None

    @model_validator(mode="after")
    def _check(self):
        if not self.values:
            raise ValueError("sweep value list must be nonempty")
        return self

    def sweep_seeds(self) -> list[int]:
        return self.seeds if self.seeds is not None else self.base.seeds


def format_num(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else str(v)


def config_hash(config: ExperimentConfig) -> str:
    """Hash of the experiment content: excludes name and output location."""
    payload = config.model_dump(mode="json", exclude={"name", "output_dir"})
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


def load_config(path) -> ExperimentConfig:
    return parse_config(_read_yaml(path))


def parse_config(raw: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigurationError(_format_validation_error(exc)) from exc


def load_sweep(path) -> SweepSpec:
    try:
        return SweepSpec.model_validate(_read_yaml(path))
    except ValidationError as exc:
        raise ConfigurationError(_format_validation_error(exc)) from exc


def save_config(config: ExperimentConfig, path) -> None:
    Path(path).write_text(
        yaml.safe_dump(config.model_dump(mode="json"), sort_keys=False)
    )


def apply_override(config: ExperimentConfig, dotted_path: str, value) -> ExperimentConfig:
    """Return a copy of the config with one dotted-path field replaced."""
    data = config.model_dump(mode="json")
    node = data
    keys = dotted_path.split(".")
    for key in keys[:-1]:
        if not isinstance(node, dict) or key not in node:
            raise ConfigurationError(f"unknown config path: {dotted_path!r}")
        node = node[key]
    if not isinstance(node, dict) or keys[-1] not in node:
        raise ConfigurationError(f"unknown config path: {dotted_path!r}")
    node[keys[-1]] = value
    return parse_config(data)


def _read_yaml(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file not found: {path}")
    raw = yaml.safe_load(path.read_text())
    if not isinstance(raw, dict):
        raise ConfigurationError(f"config file {path} must contain a mapping")
    return raw


def _format_validation_error(exc: ValidationError) -> str:
    lines = ["invalid configuration:"]
    for err in exc.errors():
        where = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"  {where}: {err['msg']}")
    return "\n".join(lines)
