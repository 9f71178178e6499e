"""Flat key=value run configuration shared by every CLI command.

A config file holds one `key = value` pair per line (# comments and blank
lines allowed). Unknown keys are rejected. Command-line flags override file
values, which override the defaults below.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields, replace

from .datagen import (MAX_GRASPS_PER_CLASS, PACKED, PILE, REGIME_FIXED_TOP,
                      REGIME_HARD, REGIME_RANDOM)
from .errors import ConfigError
from .pipeline import DetectorConfig
from .training import TrainConfig

_KINDS = (PACKED, PILE)
_REGIMES = (REGIME_FIXED_TOP, REGIME_RANDOM, REGIME_HARD)


@dataclass(frozen=True)
class RunConfig:
    """Every tunable the pipeline exposes, with its default.

    Scene/data: `seed` roots all randomness; `workspace_size` (m) and
    `support_z` (m) define the cube and table; `scene_kind` is packed or
    pile; `view_regime` is fixed_top, random, or hard; `n_scenes` sizes a
    generated dataset; `max_grasps_per_class` caps balanced labels per
    scene; `workers` parallelizes scene builds (0 = all cores).

    Detection: `tsdf_resolution` voxels per side; sampler budgets
    `budget_points` / `max_grasps`; `local_image_size` pixels per local
    render camera.

    Training: `learning_rate`, `batch_size`, `epochs`, `occ_batch`
    occupancy samples per step, loss weights `w_occ` / `w_quality` /
    `w_local`, and `deterministic` for byte-identical checkpoints.

    Evaluation: `eval_rounds` declutter rounds per seed and `eval_seeds`
    as comma-separated integers.

    Ablations: `no_scene_render` samples grasps on the partial cloud,
    `no_local_render` crops cloud patches instead of rendering them,
    `no_rendering` switches both at once, `no_local_occ` drops the local
    occupancy loss at training time.
    """

    seed: int = 0
    workspace_size: float = 0.30
    support_z: float = 0.05
    scene_kind: str = PACKED
    view_regime: str = REGIME_RANDOM
    n_scenes: int = 200
    max_grasps_per_class: int = MAX_GRASPS_PER_CLASS
    workers: int = 0
    tsdf_resolution: int = 64
    budget_points: int = 240
    max_grasps: int = 60
    local_image_size: int = 64
    learning_rate: float = 1e-4
    batch_size: int = 32
    epochs: int = 10
    occ_batch: int = 1024
    w_occ: float = 2.0
    w_quality: float = 1.0
    w_local: float = 1.0
    deterministic: bool = True
    eval_rounds: int = 20
    eval_seeds: str = "1,2,3"
    no_scene_render: bool = False
    no_local_render: bool = False
    no_rendering: bool = False
    no_local_occ: bool = False

    def __post_init__(self):
        if self.scene_kind not in _KINDS:
            raise ConfigError(f"scene_kind must be one of {_KINDS}, "
                              f"got {self.scene_kind!r}")
        if self.view_regime not in _REGIMES:
            raise ConfigError(f"view_regime must be one of {_REGIMES}, "
                              f"got {self.view_regime!r}")
        for key in ("n_scenes", "tsdf_resolution", "budget_points",
                    "max_grasps", "local_image_size", "batch_size", "epochs",
                    "occ_batch", "eval_rounds", "max_grasps_per_class"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1")
        if self.workers < 0:
            raise ConfigError("workers must be >= 0")
        if self.learning_rate <= 0.0:
            raise ConfigError("learning_rate must be positive")
        if min(self.w_occ, self.w_quality, self.w_local) < 0.0:
            raise ConfigError("loss weights must be >= 0")
        self.seed_list()  # validates eval_seeds

    def seed_list(self) -> list[int]:
        try:
            seeds = [int(tok) for tok in self.eval_seeds.split(",") if tok.strip()]
        except ValueError as exc:
            raise ConfigError(f"eval_seeds must be comma-separated integers, "
                              f"got {self.eval_seeds!r}") from exc
        if not seeds:
            raise ConfigError("eval_seeds must name at least one seed")
        return seeds

    def resolved_workers(self) -> int:
        return self.workers if self.workers > 0 else (os.cpu_count() or 1)

    def detector_config(self) -> DetectorConfig:
        return DetectorConfig(
            workspace_size=self.workspace_size,
            support_z=self.support_z,
            tsdf_resolution=self.tsdf_resolution,
            budget_points=self.budget_points,
            max_grasps=self.max_grasps,
            local_image_size=self.local_image_size,
            no_scene_render=self.no_scene_render or self.no_rendering,
            no_local_render=self.no_local_render or self.no_rendering)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            w_occ=self.w_occ,
            w_quality=self.w_quality,
            w_local=0.0 if self.no_local_occ else self.w_local,
            epochs=self.epochs,
            seed=self.seed,
            deterministic=self.deterministic,
            occ_samples_per_batch=self.occ_batch)


_FIELDS = {f.name: f for f in fields(RunConfig)}
_TRUE = ("1", "true", "yes", "on")
_FALSE = ("0", "false", "no", "off")


def parse_value(key: str, raw: str):
    """Convert a raw string to the key's declared type."""
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    kind = _FIELDS[key].type
    raw = raw.strip()
    try:
        if kind == "bool":
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"config key {key!r} expects {kind}, "
                          f"got {raw!r}") from exc


def parse_config_text(text: str, source: str = "config") -> dict:
    """key=value lines -> {key: typed value}; rejects unknown keys."""
    out: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected key = value, "
                              f"got {stripped!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = parse_value(key, raw)
    return out


def load_config(path: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then file values, then overrides; later wins."""
    merged: dict = {}
    if path is not None:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        merged.update(parse_config_text(text, source=path))
    for key, value in (overrides or {}).items():
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
        merged[key] = value
    return RunConfig(**merged)


def config_lines(cfg: RunConfig) -> list[str]:
    """Resolved config as canonical key = value lines, field order."""
    return [f"{f.name} = {getattr(cfg, f.name)}" for f in fields(RunConfig)]


def describe_keys() -> list[tuple[str, str, str]]:
    """(key, type, default) rows for help text, field order."""
    return [(f.name, f.type, str(f.default)) for f in fields(RunConfig)]
