"""Run configuration: one JSON file, dotted-path overrides, full validation
before any work starts, and a resolved echo for the run manifest."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .data import TaskSpec
from .errors import ConfigError
from .model import ModelConfig
from .training import TrainSchedule

OUT_ROOT_ENV = "CONFLAB_OUT_ROOT"

DEFAULT_EXPERIMENT = {
    "noise_rates": [0.2, 0.4, 0.6, 0.8],
    "word_rate": 0.5,
    "corpus_size": 2000,
    "n_test": 150,
    "beam_size": 4,
    "alpha": 0.6,
    "mc_passes": 10,
    "train_noise": 0.3,
    "test_noise": 0.5,
    "gradcheck_points": 20,
}


@dataclass
class RunConfig:
    task: TaskSpec
    model: ModelConfig
    schedule: TrainSchedule
    experiment: dict = field(default_factory=dict)
    out_dir: str | None = None
    seed: int = 0

    def echo(self) -> dict:
        """Fully resolved config for the run manifest."""
        return {
            "task": _spec_dict(self.task),
            "model": self.model.to_dict(),
            "schedule": self.schedule.to_dict(),
            "experiment": self.experiment,
            "out_dir": self.out_dir,
            "seed": self.seed,
        }


def _spec_dict(spec: TaskSpec) -> dict:
    from dataclasses import asdict

    d = asdict(spec)
    d["length_range"] = list(spec.length_range)
    if spec.content_range is not None:
        d["content_range"] = list(spec.content_range)
    return d


def parse_override(text: str) -> tuple[list[str], object]:
    """"a.b.c=value" -> (path, parsed value). Values parse as JSON when possible."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like key.path=value")
    key, raw = text.split("=", 1)
    path = [p for p in key.strip().split(".") if p]
    if not path:
        raise ConfigError(f"override {text!r} has an empty key path")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return path, value


def apply_overrides(tree: dict, overrides: list[str]) -> dict:
    for text in overrides or []:
        path, value = parse_override(text)
        node = tree
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override path {text!r} crosses a non-object")
        node[path[-1]] = value
    return tree


def load_config(path=None, overrides: list[str] | None = None) -> RunConfig:
    """Build a validated RunConfig from a JSON file plus overrides.

    Every section is optional; defaults mirror the documented schedule
    (lambda0=30, epsilon0=0.1, hint fraction 1/2, beta0=total/3.3).
    """
    tree: dict = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            tree = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from e
        if not isinstance(tree, dict):
            raise ConfigError("config root must be a JSON object")
    apply_overrides(tree, overrides or [])
    return build_config(tree)


def build_config(tree: dict) -> RunConfig:
    known = {"task", "model", "schedule", "experiment", "out_dir", "seed"}
    unknown = set(tree) - known
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    seed = int(tree.get("seed", 0))

    task_d = dict(tree.get("task", {}))
    task_d.setdefault("seed", seed)
    if "length_range" in task_d:
        task_d["length_range"] = tuple(task_d["length_range"])
    if task_d.get("content_range") is not None:
        task_d["content_range"] = tuple(task_d["content_range"])
    task = _build(TaskSpec, task_d, "task")

    model_d = dict(tree.get("model", {}))
    model_d.setdefault("vocab_size", task.vocab_size)
    model_d.setdefault("seed", seed)
    if "conf_layers" in model_d:
        model_d["conf_layers"] = tuple(model_d["conf_layers"])
    model = _build(ModelConfig, model_d, "model")
    if model.vocab_size != task.vocab_size:
        raise ConfigError(
            f"model vocab_size {model.vocab_size} != task vocab_size {task.vocab_size}"
        )

    sched_d = dict(tree.get("schedule", {}))
    sched_d.setdefault("total_steps", 2000)
    sched_d.setdefault("seed", seed)
    schedule = _build(TrainSchedule, sched_d, "schedule")

    experiment = dict(DEFAULT_EXPERIMENT)
    exp_d = tree.get("experiment", {})
    unknown = set(exp_d) - set(experiment)
    if unknown:
        raise ConfigError(f"unknown experiment keys: {sorted(unknown)}")
    experiment.update(exp_d)

    return RunConfig(
        task=task,
        model=model,
        schedule=schedule,
        experiment=experiment,
        out_dir=tree.get("out_dir"),
        seed=seed,
    )


def _build(cls, kwargs: dict, section: str):
    import inspect

    valid = set(inspect.signature(cls).parameters)
    unknown = set(kwargs) - valid
    if unknown:
        raise ConfigError(f"unknown {section} fields: {sorted(unknown)}")
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ConfigError(f"bad {section} config: {e}") from e


def resolve_out_dir(explicit: str | None, config_out: str | None, default_name: str) -> Path:
    if explicit:
        return Path(explicit)
    if config_out:
        return Path(config_out)
    root = os.environ.get(OUT_ROOT_ENV, "runs")
    return Path(root) / default_name
