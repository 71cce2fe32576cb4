"""Experiment configuration and seeded synthetic workload generation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import csd
from .compiler import ArchConfig
from .errors import ConfigError

CONFIG_VERSION = 1

_WEIGHT_MODES = ("uniform", "threshold_planted")
_INPUT_MODES = ("uniform", "zero_bit_planted")


@dataclass
class ExperimentConfig:
    seed: int = 0
    sparsity: float = 0.0
    arch: ArchConfig = field(default_factory=ArchConfig)
    workload: dict = field(default_factory=dict)
    cost_table_path: str | None = None
    output_dir: str | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {"version", "seed", "sparsity", "arch", "workload", "cost_table_path", "output_dir"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if d.get("version") != CONFIG_VERSION:
            raise ConfigError(f"config version must be {CONFIG_VERSION}, got {d.get('version')}")
        sparsity = float(d.get("sparsity", 0.0))
        if not 0 <= sparsity < 1:
            raise ConfigError(f"sparsity {sparsity} not in [0, 1)")
        return cls(
            seed=int(d.get("seed", 0)),
            sparsity=sparsity,
            arch=ArchConfig.from_dict(d.get("arch", {})),
            workload=d.get("workload", {}),
            cost_table_path=d.get("cost_table_path"),
            output_dir=d.get("output_dir"),
        )

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _planted_weights(rng: np.random.Generator, k: int, n: int, phi: int) -> np.ndarray:
    members = np.array(csd.query_table(phi).members, dtype=np.int64)
    members = members[members != 0]
    if members.size == 0:
        raise ConfigError(f"no non-zero members for threshold {phi}")
    return members[rng.integers(0, members.size, size=(k, n))].astype(np.int8)


def _planted_inputs(rng: np.random.Generator, m: int, k: int, zero_fraction: float) -> np.ndarray:
    """Inputs whose every group of 16 reduction positions has exactly
    8 * (1 - zero_fraction) active bit columns."""
    nbits = round(8 * (1 - zero_fraction))
    if not 0 <= nbits <= 8:
        raise ConfigError(f"zero_fraction {zero_fraction} out of range")
    if nbits == 0:
        return np.zeros((m, k), dtype=np.int8)
    bit_mask = (1 << nbits) - 1
    raw = rng.integers(0, 256, size=(m, k)).astype(np.int64) & bit_mask
    raw[:, ::16] = bit_mask  # anchor: every group of 16 ORs to the full planted mask
    return raw.astype(np.uint8).view(np.int8).reshape(m, k)


def generate_synthetic(spec: dict, seed: int) -> dict:
    """Reproducible weights and inputs for one layer.

    spec keys: m, k, n; weights: {"mode": "uniform" | "threshold_planted",
    "phi": int}; inputs: {"mode": "uniform" | "zero_bit_planted",
    "zero_fraction": float}.
    """
    known = {"m", "k", "n", "weights", "inputs", "kind"}
    unknown = set(spec) - known
    if unknown:
        raise ConfigError(f"unknown workload keys: {sorted(unknown)}")
    try:
        m, k, n = int(spec["m"]), int(spec["k"]), int(spec["n"])
    except KeyError as exc:
        raise ConfigError(f"workload spec missing {exc.args[0]!r}") from exc
    if min(m, k, n) < 1:
        raise ConfigError("workload dims must be positive")
    rng = np.random.default_rng(seed)

    wspec = spec.get("weights", {"mode": "uniform"})
    mode = wspec.get("mode", "uniform")
    if mode == "uniform":
        weights = rng.integers(-128, 128, size=(k, n)).astype(np.int8)
    elif mode == "threshold_planted":
        weights = _planted_weights(rng, k, n, int(wspec.get("phi", 2)))
    else:
        raise ConfigError(f"unknown weight mode {mode!r} (expected one of {_WEIGHT_MODES})")

    ispec = spec.get("inputs", {"mode": "uniform"})
    mode = ispec.get("mode", "uniform")
    if mode == "uniform":
        inputs = rng.integers(-128, 128, size=(m, k)).astype(np.int8)
    elif mode == "zero_bit_planted":
        inputs = _planted_inputs(rng, m, k, float(ispec.get("zero_fraction", 0.0)))
    else:
        raise ConfigError(f"unknown input mode {mode!r} (expected one of {_INPUT_MODES})")

    return {"weights": weights, "inputs": inputs}
