"""
Experiment configuration: a flat dataclass loaded from TOML or JSON.

Thresholds live here rather than in the experiment code so that every
pass/fail decision can be audited from the config file alone.
"""
from __future__ import annotations

import json
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

__all__ = ["ExperimentConfig", "DEFAULT_THRESHOLDS", "load_config"]

DEFAULT_THRESHOLDS = {
    "se_mult": 3.0,            # Monte Carlo acceptance in standard errors
    "coeff_rel_tol": 0.01,     # period / area / divergence cross-checks
    "logfit_residual": 0.05,
    "smoke_decrease": 0.25,    # SPDE smoke: required relative drop per rung
    "quad_budget": 1e-3,       # absolute quadrature allowance for graph averages
}


@dataclass
class ExperimentConfig:
    hamiltonian: str = "twowell"
    hamiltonian_params: dict = field(default_factory=lambda: {"r_max": 6.6})
    z_max: float = 20.0
    atlas_resolution: int = 500
    h_target: float = 0.02
    eps_ladder: list = field(default_factory=lambda: [0.2, 0.05, 0.0125])
    tau: float = 0.25
    t_end: float = 1.0
    n_times: int = 4
    test_functions: list = field(default_factory=lambda: ["mix", "x1sq", "bump_left"])
    starts: list = field(default_factory=lambda: [[-1.0, 0.6], [0.0, 0.2]])
    probe_starts: list = field(default_factory=lambda: [[-1.0, 0.6], [1.0, 0.4]])
    spectral_measure: list = field(default_factory=lambda: [
        {"lambda": [0.8, 0.3], "weight": 0.1},
        {"lambda": [-0.2, 1.1], "weight": 0.1},
        {"lambda": [0.0, 0.0], "weight": 0.05},
    ])
    n_paths: int = 100000
    n_replicas: int = 16
    seed: int = 20240601
    output_dir: str = "reebflow_out"
    weight_lam: float = 1.0
    # 2D grids (H_gamma and SPDE runs)
    spde_half_width: float = 2.5
    spde_grid: int = 128
    spde_dt: float = 0.01
    spde_z_max: float = 3.0
    cell_budget: int = 262144
    hgamma_grid: int = 12
    hgamma_paths: int = 2000
    thresholds: dict = field(default_factory=lambda: dict(DEFAULT_THRESHOLDS))

    def __post_init__(self):
        self.validate()

    def validate(self):
        lad = [float(e) for e in self.eps_ladder]
        if not lad or any(e <= 0 for e in lad):
            raise ConfigError("eps ladder must hold positive values")
        if any(b >= a for a, b in zip(lad, lad[1:])):
            raise ConfigError("eps ladder must be strictly decreasing")
        if not (0 < self.tau < self.t_end):
            raise ConfigError("need 0 < tau < t_end")
        if self.n_times < 1 or self.n_paths < 2 or self.n_replicas < 1:
            raise ConfigError("n_times, n_paths and n_replicas must be positive (n_paths >= 2)")
        unknown = set(self.thresholds) - set(DEFAULT_THRESHOLDS)
        if unknown:
            raise ConfigError(f"unknown thresholds {sorted(unknown)}")
        self.thresholds = {**DEFAULT_THRESHOLDS, **self.thresholds}
        self.eps_ladder = lad

    @property
    def t_grid(self) -> list:
        if self.n_times == 1:
            return [self.t_end]
        step = (self.t_end - self.tau) / (self.n_times - 1)
        return [self.tau + i * step for i in range(self.n_times)]

    def thr(self, key: str) -> float:
        return float(self.thresholds[key])

    def with_overrides(self, **kw) -> "ExperimentConfig":
        names = {f.name for f in fields(self)}
        bad = set(kw) - names
        if bad:
            raise ConfigError(f"unknown config keys {sorted(bad)}")
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    def to_dict(self) -> dict:
        return asdict(self)


def load_config(path: str | Path | None = None, **overrides) -> ExperimentConfig:
    """Read a ``.toml`` or ``.json`` file (or defaults) and apply overrides."""
    data = {}
    if path is not None:
        p = Path(path)
        try:
            if p.suffix == ".toml":
                with open(p, "rb") as fh:
                    data = tomllib.load(fh)
            elif p.suffix == ".json":
                data = json.loads(p.read_text())
            else:
                raise ConfigError(f"config must be .toml or .json, got {p.suffix!r}")
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config {p}: {exc}") from None
    names = {f.name for f in fields(ExperimentConfig)}
    bad = set(data) - names
    if bad:
        raise ConfigError(f"unknown config keys {sorted(bad)}")
    cfg = ExperimentConfig(**data)
    return cfg.with_overrides(**overrides) if overrides else cfg
