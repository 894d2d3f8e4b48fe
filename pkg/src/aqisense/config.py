"""Configuration file support: [section] headers with flat key = value pairs.

Values mirror each stage's defaults; command-line flags override whatever the
file provides.  The environment variable AQISENSE_CONFIG names a default file.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field, fields

from .errors import InputError

ENV_VAR = "AQISENSE_CONFIG"


@dataclass
class Config:
    # features
    feature_size: int = 128
    patch: int = 15
    inner: int = 5
    gf_radius: int = 40
    gf_epsilon: float = 1e-3
    light_fraction: float = 0.001
    # cnn
    epochs: int = 200
    batch_size: int = 8
    learning_rate: float = 0.01
    momentum: float = 0.9
    num_classes: int = 10
    # graph
    bin_width: float = 10.0
    history_depth: int = 5
    radius: float = 300.0
    learn_iters: int = 50
    learn_rate: float = 0.05
    cube_x: float = 20.0
    cube_y: float = 20.0
    cube_z: float = 10.0
    # regions
    grid_cols: int = 50
    grid_rows: int = 50
    resolution: float = 20.0
    lloyd_iters: int = 0
    # wakeup
    je: float = 0.5
    sigma: float = 50.0
    wake_radius: float = 300.0
    # energy
    e_sense: float = 0.5
    e_upload: float = 1.5
    e_sleep: float = 0.01
    e_fly: float = 80.0
    e_loiter: float = 50.0
    load_factor: float = 1.5
    # simulate
    seeds: int = 1
    seed: int = 0


_SECTIONS = {
    "features": ("feature_size", "patch", "inner", "gf_radius", "gf_epsilon", "light_fraction"),
    "cnn": ("epochs", "batch_size", "learning_rate", "momentum", "num_classes"),
    "graph": (
        "bin_width",
        "history_depth",
        "radius",
        "learn_iters",
        "learn_rate",
        "cube_x",
        "cube_y",
        "cube_z",
    ),
    "regions": ("grid_cols", "grid_rows", "resolution", "lloyd_iters"),
    "wakeup": ("je", "sigma", "wake_radius"),
    "energy": ("e_sense", "e_upload", "e_sleep", "e_fly", "e_loiter", "load_factor"),
    "simulate": ("seeds", "seed"),
}


def _validate(cfg: Config) -> Config:
    if cfg.patch % 2 == 0 or cfg.inner % 2 == 0 or not (cfg.patch >= cfg.inner >= 1):
        raise InputError(f"patch sizes must be odd with patch >= inner, got {cfg.patch}/{cfg.inner}")
    if cfg.gf_radius < 1 or cfg.gf_epsilon <= 0:
        raise InputError("guided filter needs radius >= 1 and epsilon > 0")
    if not (0 < cfg.light_fraction <= 1):
        raise InputError(f"light fraction {cfg.light_fraction} not in (0, 1]")
    if cfg.epochs < 1 or cfg.batch_size < 1 or cfg.num_classes < 2:
        raise InputError("cnn settings out of range")
    if cfg.bin_width <= 0 or cfg.history_depth < 1 or cfg.radius <= 0:
        raise InputError("graph settings out of range")
    if min(cfg.cube_x, cfg.cube_y, cfg.cube_z) <= 0:
        raise InputError("cube sizes must be positive")
    if cfg.grid_cols < 1 or cfg.grid_rows < 1 or cfg.resolution <= 0 or cfg.lloyd_iters < 0:
        raise InputError("region settings out of range")
    if not (0.0 <= cfg.je <= 1.0) or not (0.0 <= cfg.sigma <= 500.0) or cfg.wake_radius <= 0:
        raise InputError("wakeup settings out of range")
    if min(cfg.e_sense, cfg.e_upload, cfg.e_sleep, cfg.e_fly, cfg.e_loiter) < 0:
        raise InputError("energy constants must be nonnegative")
    if cfg.load_factor < 1.0:
        raise InputError(f"load factor {cfg.load_factor} must be >= 1")
    if cfg.seeds < 1:
        raise InputError("need at least one seed")
    return cfg


def load_config(path=None) -> Config:
    """Load a config file (explicit path, else $AQISENSE_CONFIG, else defaults)."""
    cfg = Config()
    if path is None:
        path = os.environ.get(ENV_VAR)
    if path is None:
        return _validate(cfg)
    if not os.path.exists(path):
        raise InputError(f"config file {path} does not exist")
    parser = configparser.ConfigParser()
    parser.read(path)
    types = {f.name: f.type for f in fields(Config)}
    for section, keys in _SECTIONS.items():
        if not parser.has_section(section):
            continue
        for key in parser.options(section):
            if key not in keys:
                raise InputError(f"{path}: unknown key {key!r} in [{section}]")
            raw = parser.get(section, key)
            kind = types[key]
            try:
                value = int(raw) if kind == "int" else float(raw)
            except ValueError:
                raise InputError(f"{path}: bad value {raw!r} for {section}.{key}") from None
            setattr(cfg, key, value)
    return _validate(cfg)
