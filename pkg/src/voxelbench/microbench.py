"""Gather-latency and streaming-update microbenchmarks.

The gather benchmark emulates a cache-line-wise gather: the elements of one
gather are fetched line by line, and each line's fetch address depends on the
values returned by the previous one, as with a gather loop that retires one
cache line per invocation.  Successive gathers are chained the same way, so
the timing reflects latency rather than throughput.  The buffer holds zeros,
which keeps every dependent offset at zero without the compiler knowing it.
"""

from __future__ import annotations

import functools
import math
import os
import statistics
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np
from numba import njit

CACHE_LINE_BYTES = 64
FLOATS_PER_LINE = CACHE_LINE_BYTES // 4
ELEMENTS_PER_LINE = (1, 2, 4, 8, 16)
NOISE_TOLERANCE = 0.10


class MeasurementUnreliable(RuntimeError):
    pass


@dataclass(frozen=True)
class GatherPattern:
    elements_per_line: int
    gather_width: int
    working_set_bytes: int
    index_table: np.ndarray = field(repr=False, compare=False)  # (gathers, width) element indices

    @property
    def per_line(self) -> int:
        return min(self.elements_per_line, self.gather_width)

    @property
    def lines_per_gather(self) -> int:
        return math.ceil(self.gather_width / self.elements_per_line)


@dataclass(frozen=True)
class BenchResult:
    kind: str
    config: dict
    clock_hz: float
    reps: int
    warmup_reps: int
    cycles_per_instruction: float | None = None
    cycles_per_full_gather: float | None = None
    ns_per_full_gather: float | None = None
    bandwidth_bytes_per_sec: float | None = None
    noisy: bool = False
    timestamp: str = ""

    def __post_init__(self):
        if not self.reps > self.warmup_reps:
            raise ValueError("reps must exceed warmup_reps")

    def to_json(self) -> dict:
        return {"kind": self.kind, "config": self.config,
                "cyclesPerInstruction": self.cycles_per_instruction,
                "cyclesPerFullGather": self.cycles_per_full_gather,
                "nsPerFullGather": self.ns_per_full_gather,
                "bandwidth": self.bandwidth_bytes_per_sec, "clockHz": self.clock_hz,
                "noisy": self.noisy, "timestamp": self.timestamp}


def cache_size(level: int, default: int) -> int:
    """Data/unified cache size of cpu0 at ``level`` from sysfs, else ``default``."""
    base = "/sys/devices/system/cpu/cpu0/cache"
    try:
        for entry in sorted(os.listdir(base)):
            d = os.path.join(base, entry)
            lvl = int(open(os.path.join(d, "level")).read())
            kind = open(os.path.join(d, "type")).read().strip()
            if lvl == level and kind in ("Data", "Unified"):
                text = open(os.path.join(d, "size")).read().strip()
                mult = {"K": 1024, "M": 1024**2, "G": 1024**3}.get(text[-1], 1)
                return int(text.rstrip("KMG")) * mult
    except (OSError, ValueError):
        pass
    return default


def default_working_set(level: str) -> int:
    """Working set that stays resident in L1, in L2 (and misses L1), or in memory."""
    l1 = cache_size(1, 32 * 1024)
    l2 = cache_size(2, 256 * 1024)
    if level == "L1":
        return l1 // 3
    if level == "L2":
        return max(l2 // 2, 4 * l1)
    if level == "memory":
        return min(max(4 * cache_size(3, 32 * 1024**2), 64 * 1024**2), 512 * 1024**2)
    raise ValueError(f"unknown cache level {level!r}")


def gen_gather_pattern(k: int, width: int, working_set: int, seed: int = 0) -> GatherPattern:
    """Index table where each gather of ``width`` floats touches ceil(width / k) lines.

    Lines are visited in a seeded random order covering the whole working set
    so hardware stream prefetchers cannot hide the cache level.
    """
    if k not in ELEMENTS_PER_LINE:
        raise ValueError(f"elements per line must be one of {ELEMENTS_PER_LINE}, got {k}")
    if width < 1 or (k < width and width % k):
        raise ValueError(f"k={k} must divide width={width} or be >= it")
    lines_per_gather = math.ceil(width / k)
    per_line = min(k, width)
    n_lines = working_set // CACHE_LINE_BYTES
    if n_lines < lines_per_gather:
        raise ValueError(f"working set of {working_set} bytes holds fewer than {lines_per_gather} lines")
    n_gathers = n_lines // lines_per_gather
    order = np.random.default_rng(seed).permutation(n_lines)[:n_gathers * lines_per_gather]
    spacing = FLOATS_PER_LINE // per_line
    offsets = np.arange(per_line) * spacing
    table = (order.reshape(n_gathers, lines_per_gather, 1) * FLOATS_PER_LINE + offsets).reshape(n_gathers, width)
    return GatherPattern(k, width, working_set, table.astype(np.int32))


def lines_touched(pattern: GatherPattern) -> np.ndarray:
    """Distinct 64-byte lines per gather row, counted directly from byte addresses."""
    byte_addr = pattern.index_table * 4
    return np.array([len(np.unique(row // CACHE_LINE_BYTES)) for row in byte_addr])


@functools.lru_cache(maxsize=None)
def _gather_chain(per_line: int):
    """Compiled chain for a fixed number of elements per cache line.

    The constant trip count lets LLVM fully unroll the per-line loads instead
    of loop-vectorising them into a hardware gather.
    """

    @njit(nogil=True)
    def chain(data, table, lines_per_gather, n_gathers):
        off = 0
        n_rows = table.shape[0]
        for g in range(n_gathers):
            row = table[g % n_rows]
            for j in range(lines_per_gather):
                part = 0
                for e in range(per_line):
                    part |= data[row[j * per_line + e] + off]
                off = part
        return off

    return chain


@njit(nogil=True, cache=True)
def _spin(n, seed):
    # two dependent single-cycle ALU ops per iteration on the critical path
    x = seed
    for i in range(n):
        x = (x ^ i) + (x >> 3)
    return x


SPIN_CYCLES_PER_ITER = 2


@functools.lru_cache(maxsize=1)
def calibrate_clock(iterations: int = 50_000_000, trials: int = 5) -> float:
    """Core clock estimate in Hz from a timed dependent integer chain (best of ``trials``)."""
    _spin(1000, 1)
    best = math.inf
    for _ in range(trials):
        t0 = time.perf_counter_ns()
        _spin(iterations, 1)
        best = min(best, time.perf_counter_ns() - t0)
    return SPIN_CYCLES_PER_ITER * iterations / (best * 1e-9)


def _check_resolution(elapsed_ns: float):
    res_ns = time.get_clock_info("perf_counter").resolution * 1e9
    if elapsed_ns < 1000 * max(res_ns, 1.0):
        raise MeasurementUnreliable(
            f"rep took {elapsed_ns:.0f} ns, under 1000x the {res_ns:.0f} ns timer resolution")


def _halves_disagree(samples) -> bool:
    h = len(samples) // 2
    if h == 0:
        return False
    a, b = statistics.median(samples[:h]), statistics.median(samples[h:])
    return abs(a - b) > NOISE_TOLERANCE * min(a, b)


def run_gather_bench(pat: GatherPattern, reps: int = 11, warmup: int = 2,
                     gathers_per_rep: int | None = None, clock_hz: float | None = None) -> BenchResult:
    """Median latency of one full gather and of one cache-line fetch within it."""
    if reps < 1:
        raise ValueError("reps must be >= 1")
    warmup = min(warmup, reps - 1)
    # written explicitly: untouched np.zeros memory can alias the kernel's shared zero page,
    # which would shrink the physical working set to a few KiB
    data = np.empty(pat.working_set_bytes // 4 + FLOATS_PER_LINE, dtype=np.int32)
    data.fill(0)
    n = gathers_per_rep or max(pat.index_table.shape[0], 200_000 // pat.lines_per_gather)
    chain = _gather_chain(pat.per_line)
    chain(data, pat.index_table, pat.lines_per_gather, 1)
    hz = clock_hz or calibrate_clock()
    samples = []
    for r in range(reps):
        t0 = time.perf_counter_ns()
        chain(data, pat.index_table, pat.lines_per_gather, n)
        elapsed = time.perf_counter_ns() - t0
        _check_resolution(elapsed)
        if r >= warmup:
            samples.append(elapsed / n)
    ns = statistics.median(samples)
    cycles = ns * 1e-9 * hz
    return BenchResult(
        kind="gather",
        config={"elementsPerLine": pat.elements_per_line, "lanes": pat.gather_width,
                "workingSet": pat.working_set_bytes},
        clock_hz=hz, reps=reps, warmup_reps=warmup,
        cycles_per_instruction=cycles / pat.lines_per_gather, cycles_per_full_gather=cycles,
        ns_per_full_gather=ns, noisy=_halves_disagree(samples),
        timestamp=datetime.now(timezone.utc).isoformat(),
    )


@njit(nogil=True, cache=True)
def _update_sweeps(a, sweeps):
    s = np.float32(0.5)
    t = np.float32(1.0)
    for _ in range(sweeps):
        for i in range(a.shape[0]):
            a[i] = a[i] * s + t


def run_update_bench(working_set: int, threads: int = 1, reps: int = 5, warmup: int = 1,
                     min_bytes_per_rep: int = 512 * 1024**2) -> BenchResult:
    """Multi-threaded read-modify-write sweep; bandwidth counts one read and one write per byte."""
    if threads < 1:
        raise ValueError("threads must be >= 1")
    if reps < 1:
        raise ValueError("reps must be >= 1")
    warmup = min(warmup, reps - 1)
    n = max(working_set // 4, threads)
    arr = np.zeros(n, dtype=np.float32)
    chunks = [arr[a:b] for a, b in zip(np.linspace(0, n, threads + 1).astype(int)[:-1],
                                        np.linspace(0, n, threads + 1).astype(int)[1:])]
    sweeps = max(1, min_bytes_per_rep // (2 * arr.nbytes))
    _update_sweeps(chunks[0][:1], 1)

    samples = []
    for r in range(reps):
        starts = [0] * threads
        ends = [0] * threads
        barrier = threading.Barrier(threads)

        def work(i):
            barrier.wait()
            starts[i] = time.perf_counter_ns()
            _update_sweeps(chunks[i], sweeps)
            ends[i] = time.perf_counter_ns()

        workers = [threading.Thread(target=work, args=(i,)) for i in range(threads)]
        for w in workers:
            w.start()
        for w in workers:
            w.join()
        elapsed = max(ends) - min(starts)
        _check_resolution(elapsed)
        if r >= warmup:
            samples.append(2 * arr.nbytes * sweeps / (elapsed * 1e-9))
    return BenchResult(
        kind="update",
        config={"workingSet": int(arr.nbytes), "threads": threads, "sweeps": int(sweeps)},
        clock_hz=calibrate_clock(), reps=reps, warmup_reps=warmup,
        bandwidth_bytes_per_sec=statistics.median(samples), noisy=_halves_disagree(samples),
        timestamp=datetime.now(timezone.utc).isoformat(),
    )


def gather_sweep(width: int = 16, levels=("L1", "L2"), reps: int = 11, rounds: int = 3) -> list[dict]:
    """Full table of host latencies over every valid elements-per-line value and cache level.

    Points are measured round-robin ``rounds`` times and the per-point median is
    reported, so a transient slowdown of the host hits every point instead of
    bending the shape of one curve.
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    ks = [k for k in ELEMENTS_PER_LINE if not (k < width and width % k)]
    patterns = {(lv, k): gen_gather_pattern(k, width, default_working_set(lv)) for lv in levels for k in ks}
    hz = calibrate_clock()
    runs = {key: [] for key in patterns}
    for _ in range(rounds):
        for key, pat in patterns.items():
            runs[key].append(run_gather_bench(pat, reps, clock_hz=hz))
    rows = []
    for k in ks:
        row = {"elementsPerLine": k}
        for lv in levels:
            rs = runs[(lv, k)]
            loops = [r.cycles_per_full_gather for r in rs]
            row[lv] = {"instruction": statistics.median(r.cycles_per_instruction for r in rs),
                       "loop": statistics.median(loops),
                       "noisy": any(r.noisy for r in rs) or max(loops) > (1 + NOISE_TOLERANCE) * min(loops)}
        rows.append(row)
    return rows
