"""Evaluation quantities derived from simulation statistics.

Energy is relative-only: the cost table assigns unitless per-event costs
(defaults encode cell_op < register-file read < buffer access) and totals
are reported normalized against the dense baseline on the same workload.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict, field

from .errors import ConfigError, ShapeError
from .simulator import SimStats


@dataclass(frozen=True)
class CostTable:
    cell_op: float = 1.0
    adder_tree_op: float = 2.0
    meta_rf_read: float = 2.0
    buffer_read: float = 6.0
    buffer_write: float = 6.0
    network_switch: float = 1.5
    simd_op: float = 4.0
    tile_load: float = 20.0
    writeback: float = 10.0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value < 0:
                raise ConfigError(f"cost {name} must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CostTable":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown cost keys: {sorted(unknown)}")
        return cls(**d)


DEFAULT_COSTS = CostTable()


def utilization(stats: SimStats) -> float | None:
    """Effective cell operations over total engaged cell operations.

    Padding columns and idle compartment slots in partial tiles count in the
    denominator only. A zero-work layer has no defined utilization.
    """
    if stats.total_cell_ops == 0:
        return None
    return stats.effective_cell_ops / stats.total_cell_ops


def _same_workload(a: SimStats, b: SimStats) -> bool:
    ka = {k: a.workload.get(k) for k in ("m", "n", "k")}
    kb = {k: b.workload.get(k) for k in ("m", "n", "k")}
    return ka == kb


def speedup(db: SimStats, base: SimStats) -> float:
    if not _same_workload(db, base):
        raise ShapeError(f"workload mismatch: {db.workload} vs {base.workload}")
    if db.cycles <= 0:
        raise ShapeError("cannot compute speedup of a zero-cycle run")
    return base.cycles / db.cycles


def energy(stats: SimStats, costs: CostTable = DEFAULT_COSTS) -> tuple[float, dict]:
    """Total event-weighted energy and the per-event breakdown."""
    cost_map = costs.to_dict()
    breakdown = {}
    for name, count in stats.events.items():
        breakdown[name] = count * cost_map.get(name, 0.0)
    return sum(breakdown.values()), breakdown


@dataclass
class Report:
    u_act: float | None
    speedup: float
    normalized_energy: float
    db_cycles: int
    base_cycles: int
    cycle_breakdown: dict = field(default_factory=dict)
    energy_breakdown: dict = field(default_factory=dict)
    base_energy_breakdown: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def render_table(self) -> str:
        rows = [
            ("actual utilization", "-" if self.u_act is None else f"{self.u_act:.4f}"),
            ("speedup", f"{self.speedup:.4f}"),
            ("normalized energy", f"{self.normalized_energy:.4f}"),
            ("cycles (sparse)", str(self.db_cycles)),
            ("cycles (dense baseline)", str(self.base_cycles)),
        ]
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{name:<{width}}  {value}" for name, value in rows)

    def to_csv(self) -> str:
        head = ["u_act", "speedup", "normalized_energy", "db_cycles", "base_cycles"]
        vals = [
            "" if self.u_act is None else f"{self.u_act:.6f}",
            f"{self.speedup:.6f}",
            f"{self.normalized_energy:.6f}",
            str(self.db_cycles),
            str(self.base_cycles),
        ]
        return ",".join(head) + "\n" + ",".join(vals) + "\n"


def build_report(db: SimStats, base: SimStats, costs: CostTable = DEFAULT_COSTS) -> Report:
    db_energy, db_break = energy(db, costs)
    base_energy, base_break = energy(base, costs)
    return Report(
        u_act=utilization(db),
        speedup=speedup(db, base),
        normalized_energy=(db_energy / base_energy) if base_energy > 0 else 0.0,
        db_cycles=db.cycles,
        base_cycles=base.cycles,
        cycle_breakdown={
            "db_rowpass": db.rowpass_cycles,
            "db_overhead": db.overhead_cycles,
            "db_simd": db.simd_cycles,
            "base_rowpass": base.rowpass_cycles,
            "base_overhead": base.overhead_cycles,
        },
        energy_breakdown=db_break,
        base_energy_breakdown=base_break,
    )
