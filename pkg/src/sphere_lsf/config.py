"""Experiment specs and frozen calibration constants.

A spec file is flat ``key = value`` lines with ``#`` comments; every field of
:class:`ExperimentSpec` can appear. Writing a spec and reading it back gives
an equal spec, so a CSV can always be regenerated from its spec file.
"""

from __future__ import annotations

import configparser
import dataclasses
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import DomainError
from .index import KINDS, TENSOR

# Calibration record. Desk-scale floors are calibration targets, frozen after
# the oracle run with the seed below (n=1024, d=64, alpha=0.5, beta=0.1).
CALIBRATION_SEED = 20240611
RECALL_FLOOR = 0.6
SANDWICH_CLOSE_FRACTION = 0.6
SANDWICH_PROBABILITY = 2.0 / 3.0
CONCOMITANT_TOLERANCE = 0.15
SIGMA_RULE = 3.0

# Monte-Carlo trial counts used by the acceptance suite.
TRIALS = {
    "envelope_cases": 100_000,
    "zeroing_draws": 1_000_000,
    "neighbour_pairs": 1_000,
    "coherence_cases": 10_000,
    "tensor_queries": 1_000,
    "sandwich_trials": 300,
    "recall_trials": 200,
    "concomitant_trials": 500,
    "drop_points": 10_000,
    "collision_trials": 10_000,
    "embedding_pairs": 10_000,
    "pipeline_trials": 100,
}


@dataclass(frozen=True)
class ExperimentSpec:
    structure: str = "closetop1"
    n: int = 1024
    d: int = 64
    alpha: float = 0.5
    beta: float = 0.1
    epsilon: float | None = None
    delta: float | None = None
    planted: int = 1
    queries: int = 1
    trials: int = 200
    seed: int = 0
    output: str = ""
    t: int | None = None
    eta_override: float | None = None
    m_sweep: tuple[int, ...] = field(default=(16, 64, 256, 1024))

    def __post_init__(self) -> None:
        if self.structure not in KINDS:
            raise DomainError(f"structure must be one of {KINDS}, got {self.structure!r}")
        if self.n < 2 or self.d < 2:
            raise DomainError(f"need n >= 2 and d >= 2, got n={self.n}, d={self.d}")
        if not 0.0 <= self.beta < self.alpha < 1.0:
            raise DomainError(f"need 0 <= beta < alpha < 1, got alpha={self.alpha}, beta={self.beta}")
        if not 0 <= self.planted <= self.n:
            raise DomainError(f"need 0 <= planted <= n, got {self.planted}")
        if self.trials < 1 or self.queries < 1:
            raise DomainError("trials and queries must be positive")
        if (self.epsilon is None) != (self.delta is None):
            raise DomainError("epsilon and delta must be given together")
        if self.t is not None and self.structure != TENSOR:
            raise DomainError("t applies only to the tensor structure")

    @property
    def private(self) -> bool:
        return self.epsilon is not None

    def replace(self, **changes) -> ExperimentSpec:
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if value is None:
                continue
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"


def _coerce(name: str, text: str):
    text = text.strip()
    if name == "structure" or name == "output":
        return text
    if name == "m_sweep":
        return tuple(int(v) for v in text.split(",") if v.strip())
    if name in ("n", "d", "planted", "queries", "trials", "seed", "t"):
        return int(text)
    if name == "eta_override" and text.lower() in ("-inf", "-infinity"):
        return -math.inf
    return float(text)


def parse_spec(text: str, **overrides) -> ExperimentSpec:
    """Parse flat ``key = value`` text; unknown keys are an error."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    parser.optionxform = str
    parser.read_string("[spec]\n" + text)
    known = {f.name for f in fields(ExperimentSpec)}
    values = {}
    for key, raw in parser["spec"].items():
        if key not in known:
            raise DomainError(f"unknown spec key {key!r}")
        values[key] = _coerce(key, raw)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentSpec(**values)


def load_spec(path: str | Path, **overrides) -> ExperimentSpec:
    return parse_spec(Path(path).read_text(), **overrides)


def save_spec(spec: ExperimentSpec, path: str | Path) -> None:
    Path(path).write_text(spec.to_text())
