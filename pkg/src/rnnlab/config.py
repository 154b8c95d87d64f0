"""YAML experiment configs mapped onto the library's spec dataclasses.

A config file has up to five sections::

    task:       {kind: next_item, vocab: 1000, ...}        # TaskSpec fields
    model:      {cell: minimal, d_h: 32, ...}              # TrainSettings fields
    optimizer:  {kind: adam, lr: 0.001, ...}               # OptimizerSpec fields
    probe:      {lookbacks: [0, 5, 10, 25], ...}           # ProbeConfig fields
    cells:      [minimal, gru]        # optional sweep over cell kinds
    seeds:      [0, 1, 2]             # optional sweep over seeds

Unknown fields and invalid values raise :class:`ConfigError` with the dotted
field path, so a typo in ``optimizer.lr`` is reported as such.  ``cells`` and
``seeds`` default to the single cell/seed named in the model section.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import yaml

from .cells import CELL_KINDS
from .optim import OptimizerSpec
from .probe import ProbeConfig
from .tasks import TaskSpec
from .train import TrainSettings


class ConfigError(ValueError):
    """Invalid experiment config; the message names the offending field."""


_SECTIONS = ("task", "model", "optimizer", "probe", "cells", "seeds")
_TUPLE_FIELDS = {"lookbacks"}


def _build(cls, data: dict, path: str):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(data).__name__}")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{path}: unknown field(s) {unknown}")
    kwargs = {}
    for key, value in data.items():
        if key in _TUPLE_FIELDS:
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"{path}.{key}: expected a list")
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as e:
        raise ConfigError(f"{path}: {e}") from None


@dataclass
class ExperimentConfig:
    task: TaskSpec
    model: TrainSettings
    optimizer: OptimizerSpec
    probe: ProbeConfig | None
    cells: tuple[str, ...]
    seeds: tuple[int, ...]

    def runs(self):
        """Yield (cell, seed, TrainSettings) for every configured run."""
        for cell in self.cells:
            for seed in self.seeds:
                yield cell, seed, dataclasses.replace(self.model, cell=cell, seed=seed)


def from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError(f"top level: expected a mapping, got {type(data).__name__}")
    unknown = sorted(set(data) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"top level: unknown section(s) {unknown}")

    task = _build(TaskSpec, data.get("task", {}), "task")
    model = _build(TrainSettings, data.get("model", {}), "model")
    optimizer = _build(OptimizerSpec, data.get("optimizer", {}), "optimizer")
    probe = None
    if data.get("probe") is not None:
        probe = _build(ProbeConfig, data["probe"], "probe")

    cells = data.get("cells", [model.cell])
    if not isinstance(cells, (list, tuple)) or not cells:
        raise ConfigError("cells: expected a non-empty list of cell kinds")
    for c in cells:
        if c not in CELL_KINDS:
            raise ConfigError(f"cells: unknown cell {c!r}, expected one of {CELL_KINDS}")

    seeds = data.get("seeds", [model.seed])
    if not isinstance(seeds, (list, tuple)) or not seeds:
        raise ConfigError("seeds: expected a non-empty list of integers")
    for s in seeds:
        if not isinstance(s, int) or isinstance(s, bool):
            raise ConfigError(f"seeds: expected integers, got {s!r}")

    return ExperimentConfig(task=task, model=model, optimizer=optimizer, probe=probe,
                            cells=tuple(cells), seeds=tuple(seeds))


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: invalid YAML: {e}") from None
    if data is None:
        data = {}
    return from_dict(data)
