"""Run configuration: defaults, JSON file, environment and flag overrides."""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field
from typing import Optional

ENV_PREFIX = "CONICAL_"


@dataclass
class RunConfig:
    construction: str = "en"
    M: int = 3
    N: int = 2
    alpha: float = math.pi / 4
    p: float = 1.0
    beta_c: float = 0.5
    depth_cap: int = 1 << 15
    budget: int = 5_000_000
    seed: int = 0
    out: str = "out"
    threads: int = 1
    # quadrature and certification
    grid_ratio: float = 2.0 ** 0.25
    tol: float = 1e-3
    r_min: Optional[float] = None
    # graph and set sweeps
    graph_pairs: list = field(default_factory=lambda: [[3, 2], [3, 3], [4, 2]])
    N_values: list = field(default_factory=lambda: [2, 3, 4, 5])
    stability_N: list = field(default_factory=lambda: [2, 3, 4])
    energy_points: int = 50
    theta_step: float = math.pi / 64
    stability_samples: int = 1000
    bilipschitz_pairs: int = 10_000
    displacement_samples: int = 10_000
    cone_lemma_samples: int = 100_000
    # ball tree
    K_values: list = field(default_factory=lambda: [1024, 2048, 4096, 8192])
    jm_thetas: list = field(default_factory=lambda: [0.0, math.pi / 8, math.pi / 3])
    jm_levels: int = 6
    audit_depth: int = 6
    engine_cones: int = 1000
    engine_depth: int = 6
    # build and export
    export_depth: int = 2

    def validate(self) -> "RunConfig":
        if self.construction not in ("en", "jm"):
            raise ValueError(f"construction must be 'en' or 'jm', got {self.construction!r}")
        if not 0.0 < self.alpha < math.pi / 2:
            raise ValueError(f"alpha must lie in (0, pi/2), got {self.alpha}")
        if self.M < 3:
            raise ValueError("M must be >= 3")
        if self.N < 1 or any(n < 1 for n in self.N_values + self.stability_N):
            raise ValueError("N must be >= 1")
        if not self.p >= 1:
            raise ValueError("p must be >= 1")
        if not 0.0 < self.beta_c < 1.0:
            raise ValueError("beta_c must lie in (0, 1)")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if not self.grid_ratio > 1.0 or not self.tol > 0.0:
            raise ValueError("grid_ratio must exceed 1 and tol must be positive")
        if self.theta_step > self.alpha / 8 + 1e-15:
            raise ValueError("theta_step must be at most alpha/8")
        if not 0 <= self.export_depth <= 3:
            raise ValueError("export_depth must lie in 0..3")
        if max(self.K_values, default=0) > self.depth_cap:
            raise ValueError("K_values exceed depth_cap")
        for name in ("energy_points", "stability_samples", "bilipschitz_pairs",
                     "displacement_samples", "cone_lemma_samples", "engine_cones"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def field_names(cls) -> list:
        return [f.name for f in dataclasses.fields(cls)]


def _coerce(name: str, value, current):
    """Parse a string override into the type of the current value."""
    if not isinstance(value, str):
        return value
    if isinstance(current, bool):
        return value.lower() in ("1", "true", "yes")
    if isinstance(current, int):
        return int(value)
    if isinstance(current, float) or current is None and name == "r_min":
        return float(value)
    if isinstance(current, list):
        return json.loads(value)
    return value


def load_config(path: Optional[str] = None, env: Optional[dict] = None, **overrides) -> RunConfig:
    """Defaults, then the JSON file, then ``CONICAL_*`` variables, then ``overrides``."""
    cfg = RunConfig()
    names = set(RunConfig.field_names())
    layers = []
    if path:
        with open(path) as fh:
            doc = json.load(fh)
        unknown = set(doc) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        layers.append(doc)
    env = os.environ if env is None else env
    folded = {n.lower(): n for n in names}
    layers.append({folded.get(k[len(ENV_PREFIX):].lower(), k): v
                   for k, v in env.items() if k.startswith(ENV_PREFIX)})
    layers.append({k: v for k, v in overrides.items() if v is not None})
    for layer in layers:
        for k, v in layer.items():
            if k not in names:
                continue
            setattr(cfg, k, _coerce(k, v, getattr(cfg, k)))
    return cfg.validate()
