"""Pipeline configuration: one flat key=value TOML file, flag-overridable.

Zeros on voxel_cell / seg_step / exclude_radius mean "derive from the data"
(4x median point spacing, cell/2, and one cell respectively).
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .field import FieldParams


@dataclass
class Config:
    ply: str = ""
    cameras: str = ""
    out: str = "out"
    step: float = 1.0
    band_lo: float = 0.1
    band_hi: float = 0.6
    voxel_cell: float = 0.0
    seg_step: float = 0.0
    exclude_radius: float = 0.0
    min_clearance: float = 0.5
    hpr_gamma: float = 100.0
    table_hpr: bool = True
    splat_radius: int = 1
    pair_cap: int = 32
    seed: int = 0
    threads: int = 1
    cells: str = ""  # comma-separated meters for the resolution sweep
    ratio: str = ""  # test:train ratio for splits, e.g. "1:7"

    def validate(self) -> None:
        if not 0.0 <= self.band_lo <= self.band_hi <= 1.0:
            raise ValueError(f"band must satisfy 0 <= lo <= hi <= 1, got [{self.band_lo}, {self.band_hi}]")
        for name in ("step", "min_clearance", "hpr_gamma"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("voxel_cell", "seg_step", "exclude_radius"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0 (0 means auto), got {getattr(self, name)}")
        if self.splat_radius < 0:
            raise ValueError(f"splat_radius must be >= 0, got {self.splat_radius}")
        if self.pair_cap < 2:
            raise ValueError(f"pair_cap must be >= 2, got {self.pair_cap}")
        if self.threads < 1:
            raise ValueError(f"threads must be >= 1, got {self.threads}")

    def field_params(self) -> FieldParams:
        return FieldParams(
            step=self.step,
            hpr_gamma=self.hpr_gamma,
            voxel_cell=self.voxel_cell or None,
            seg_step=self.seg_step or None,
            exclude_radius=self.exclude_radius or None,
            min_clearance=self.min_clearance,
            pair_cap=self.pair_cap,
            seed=self.seed,
            table_hpr=self.table_hpr,
            threads=self.threads,
        )

    def sweep_cells(self) -> list[float]:
        if not self.cells.strip():
            return []
        return [float(tok) for tok in self.cells.split(",") if tok.strip()]


def load_config(path) -> Config:
    data = tomllib.loads(Path(path).read_text())
    known = {f.name for f in dataclasses.fields(Config)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"{path}: unknown config keys: {sorted(unknown)}")
    return Config(**data)


def dump_config(config: Config, path) -> None:
    lines = []
    for f in dataclasses.fields(Config):
        value = getattr(config, f.name)
        if isinstance(value, bool):
            rendered = "true" if value else "false"
        elif isinstance(value, str):
            rendered = json.dumps(value)
        else:
            rendered = repr(value)
        lines.append(f"{f.name} = {rendered}")
    Path(path).write_text("\n".join(lines) + "\n")
