"""Static instruction-count analysis and the Knights Corner cycle model.

Instruction profiles ship as a data file (``data/instruction_profiles.json``)
so counts from other kernels can be pushed through the same functions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources

PARTS = ("part1", "part2", "part3", "other")
CLASSES = ("memory", "shuffle", "arithmetic", "other")
CACHE_LINE_BYTES = 64


def load_data(name: str) -> dict:
    return json.loads(resources.files("voxelbench.data").joinpath(name).read_text())


@dataclass(frozen=True)
class InstructionProfile:
    isa_name: str
    voxels_per_loop: int
    counts: dict = field(hash=False)  # part -> class -> count

    def __post_init__(self):
        for part, by_class in self.counts.items():
            if part not in PARTS:
                raise ValueError(f"unknown part {part!r}")
            for cls, n in by_class.items():
                if cls not in CLASSES:
                    raise ValueError(f"unknown instruction class {cls!r}")
                if n < 0:
                    raise ValueError(f"negative count for {part}/{cls}")

    def part_total(self, part: str) -> int:
        return sum(self.counts.get(part, {}).values())

    def class_total(self, cls: str) -> int:
        return sum(by_class.get(cls, 0) for by_class in self.counts.values())

    @property
    def total(self) -> int:
        return sum(self.part_total(p) for p in PARTS)


def load_profiles(path=None) -> dict[str, InstructionProfile]:
    data = load_data("instruction_profiles.json") if path is None else json.load(open(path))
    return {
        name: InstructionProfile(name, int(d["voxelsPerLoop"]), d["parts"])
        for name, d in data["profiles"].items()
    }


def instruction_count_efficiency(scalar_per_voxel: float, simd_per_loop: float, lanes: int) -> float:
    """Scalar instructions for ``lanes`` voxels over SIMD instructions for the same voxels, per lane."""
    if simd_per_loop <= 0 or lanes <= 0:
        raise ZeroDivisionError("simd_per_loop and lanes must be positive")
    return scalar_per_voxel * lanes / simd_per_loop / lanes


def simd_runtime_efficiency(speedup: float, lanes: int) -> float:
    if not speedup > 0:
        raise ValueError("speedup must be positive")
    return speedup / lanes


def effective_l2_bandwidth(lat_l2: float, lat_l1: float, line_bytes: float = CACHE_LINE_BYTES) -> float:
    """Bytes per cycle when the L2-over-L1 latency difference is charged to one line transfer."""
    diff = lat_l2 - lat_l1
    if not diff > 0:
        raise ValueError(f"L2 latency must exceed L1 latency (difference {diff})")
    return line_bytes / diff


@dataclass(frozen=True)
class CycleModelInputs:
    base_cycles_per_iter: float
    gathers_per_iter: float
    latency_per_gather_l1: float
    l1_hit_fraction: float
    bytes_per_missed_line: float = CACHE_LINE_BYTES
    effective_l2_bandwidth: float = 11.85

    def __post_init__(self):
        if not 0.0 <= self.l1_hit_fraction <= 1.0:
            raise ValueError("l1_hit_fraction must lie in [0, 1]")
        for name in ("base_cycles_per_iter", "latency_per_gather_l1", "bytes_per_missed_line",
                     "effective_l2_bandwidth"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.gathers_per_iter < 0:
            raise ValueError("gathers_per_iter must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> "CycleModelInputs":
        keys = {"baseCyclesPerIter": "base_cycles_per_iter", "gathersPerIter": "gathers_per_iter",
                "latencyPerGatherL1": "latency_per_gather_l1", "l1HitFraction": "l1_hit_fraction",
                "bytesPerMissedLine": "bytes_per_missed_line",
                "effectiveL2Bandwidth": "effective_l2_bandwidth"}
        unknown = set(d) - set(keys) - set(keys.values())
        if unknown:
            raise ValueError(f"unknown cycle model inputs: {sorted(unknown)}")
        return cls(**{keys.get(k, k): float(v) for k, v in d.items()})

    @classmethod
    def knc_published(cls) -> "CycleModelInputs":
        return cls.from_dict(load_data("reference_numbers.json")["kncCycleModel"]["inputs"])


@dataclass(frozen=True)
class CycleBreakdown:
    base_cycles: float
    gather_cycles: float
    l2_penalty_cycles: float

    @property
    def total_cycles(self) -> float:
        return self.base_cycles + self.gather_cycles + self.l2_penalty_cycles

    @property
    def gather_share(self) -> float:
        return (self.gather_cycles + self.l2_penalty_cycles) / self.total_cycles

    def as_dict(self) -> dict:
        return {"baseCycles": self.base_cycles, "gatherCycles": self.gather_cycles,
                "l2PenaltyCycles": self.l2_penalty_cycles, "totalCycles": self.total_cycles,
                "gatherShare": self.gather_share}


def knc_cycle_model(m: CycleModelInputs) -> CycleBreakdown:
    """Cycles per kernel iteration: gather-free base + L1 gather latency + L2 refill cost."""
    gather = m.gathers_per_iter * m.latency_per_gather_l1
    missed_bytes = m.gathers_per_iter * m.bytes_per_missed_line * (1.0 - m.l1_hit_fraction)
    return CycleBreakdown(m.base_cycles_per_iter, gather, missed_bytes / m.effective_l2_bandwidth)


def table_rows(path=None) -> list[dict]:
    """Reproduce the per-ISA instruction table and the scalar-vs-SIMD comparison."""
    data = load_data("instruction_profiles.json") if path is None else json.load(open(path))
    profiles = load_profiles(path)
    rows = []
    for name, prof in profiles.items():
        row = {"isa": name, "voxelsPerLoop": prof.voxels_per_loop,
               **{p: prof.part_total(p) for p in PARTS}, "total": prof.total,
               "publishedTotal": data["profiles"][name].get("publishedTotal")}
        base = data.get("scalarBaseline", {}).get(name)
        if base is not None:
            row["scalarPerVoxel"] = base["instructionsPerVoxel"]
            row["countEfficiency"] = instruction_count_efficiency(
                base["instructionsPerVoxel"], prof.total, prof.voxels_per_loop)
            row["publishedCountEfficiency"] = base["publishedCountEfficiency"]
            row["publishedRuntimeEfficiency"] = base["publishedRuntimeEfficiency"]
        rows.append(row)
    return rows


def format_tables(rows) -> str:
    lines = [f"{'ISA':<10}{'lanes':>6}{'part1':>7}{'part2':>7}{'part3':>7}{'other':>7}{'total':>7}"
             f"{'scalar':>8}{'count eff':>11}{'runtime eff':>13}"]
    for r in rows:
        eff = f"{r['countEfficiency']:.0%}" if "countEfficiency" in r else "-"
        rt = f"{r['publishedRuntimeEfficiency']:.0%}" if "publishedRuntimeEfficiency" in r else "-"
        lines.append(f"{r['isa']:<10}{r['voxelsPerLoop']:>6}{r['part1']:>7}{r['part2']:>7}"
                     f"{r['part3']:>7}{r['other']:>7}{r['total']:>7}{r.get('scalarPerVoxel', '-'):>8}"
                     f"{eff:>11}{rt:>13}")
    return "\n".join(lines)
