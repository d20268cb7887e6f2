"""End-to-end reconstruction benchmark.

Datasets are either read from a VXB1 file or synthesised from a sphere
phantom.  The volume is split into contiguous z-plane ranges, one per worker;
workers never share voxels, so results do not depend on the thread count.
Only the back projection loop is timed: padding and clip masks are prepared
before the clock starts.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone

import numpy as np

from .backproject import (
    KernelConfig,
    ProjectionImage,
    Volume,
    backproject_kernel,
    backproject_reference,
    compute_clip_mask,
    pad_image,
)
from .geometry import ReconParams, ScanGeometry, forward_splat, make_centered_params, make_circular_trajectory
from .io import ProjectionSet, read_projection_set, write_projection_set

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Sphere:
    center: tuple  # mm
    radius: float  # mm
    value: float


@dataclass(frozen=True)
class SynthSpec:
    geometry: ScanGeometry
    params: ReconParams
    spheres: tuple = ()


def default_synth_spec(L: int = 64, num_projections: int = 60) -> SynthSpec:
    """Three-sphere phantom in a 64^3 volume; the detector clips roughly a tenth of the voxels."""
    params = make_centered_params(L, 64.0 / L, 88, 72)
    geom = ScanGeometry(num_projections=num_projections, source_detector_distance=1000.0,
                        source_iso_distance=500.0, detector_pixel_pitch=1.6)
    spheres = (
        Sphere((0.0, 0.0, 0.0), 22.0, 1.0),
        Sphere((8.0, -6.0, 5.0), 7.0, 1.5),
        Sphere((-10.0, 9.0, -8.0), 4.0, -0.5),
    )
    return SynthSpec(geom, params, spheres)


def rasterize_phantom(spheres, params: ReconParams) -> Volume:
    """Sum of sphere values over voxels whose centres lie inside each sphere."""
    c = params.O + params.MM * np.arange(params.L)
    z, y, x = np.meshgrid(c, c, c, indexing="ij")
    vol = np.zeros((params.L,) * 3, dtype=np.float32)
    for s in spheres:
        cx, cy, cz = s.center
        inside = (x - cx) ** 2 + (y - cy) ** 2 + (z - cz) ** 2 <= s.radius ** 2
        vol[inside] += np.float32(s.value)
    return Volume(vol)


def synthesize_dataset(spec: SynthSpec, path=None) -> ProjectionSet:
    """Forward-splat the phantom for every view; optionally write a VXB1 file."""
    phantom = rasterize_phantom(spec.spheres, spec.params)
    matrices = make_circular_trajectory(spec.geometry, spec.params)
    images = [forward_splat(phantom, A, spec.params) for A in matrices]
    ps = ProjectionSet(spec.params, matrices, images)
    if path is not None:
        write_projection_set(path, ps)
    return ps


@dataclass
class RunConfig:
    kernel: KernelConfig = field(default_factory=KernelConfig)
    dataset: str | None = None
    synth: SynthSpec | None = None
    threads: int = 1
    repetitions: int = 3
    output_volume: str | None = None
    results_path: str | None = None

    def __post_init__(self):
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")

    def describe(self, ps: ProjectionSet | None = None) -> dict:
        """Config summary for result records; ``ps`` is the data actually used, if known."""
        d = {"kernel": str(self.kernel), "threads": self.threads, "repetitions": self.repetitions}
        if self.dataset is not None:
            d["dataset"] = os.fspath(self.dataset)
        elif ps is None or self.synth is not None:
            spec = self.synth or default_synth_spec()
            d["synth"] = {"L": spec.params.L, "projections": spec.geometry.num_projections,
                          "width": spec.params.width, "height": spec.params.height,
                          "spheres": len(spec.spheres)}
        if ps is not None:
            d["data"] = {"L": ps.params.L, "projections": len(ps), "width": ps.params.width,
                         "height": ps.params.height}
        return d


@dataclass
class RunResult:
    gups_per_sec: float
    wall_time_sec: float
    L: int
    num_projections: int
    threads: int
    kernel_label: str
    rmse: float
    psnr: float
    per_thread_scaling: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    timestamp: str = ""
    volume: Volume | None = field(default=None, repr=False, compare=False)

    def recomputed_gups(self) -> float:
        return gups(self.L, self.num_projections, self.wall_time_sec)

    def to_record(self) -> dict:
        return {
            "timestamp": self.timestamp,
            "config": self.config,
            "gupsPerSec": self.gups_per_sec,
            "wallTimeSec": self.wall_time_sec,
            "rmse": self.rmse,
            # JSON has no infinity; identical volumes report null
            "psnr": self.psnr if math.isfinite(self.psnr) else None,
            "L": self.L,
            "numProjections": self.num_projections,
            "threads": self.threads,
            "kernel": self.kernel_label,
            "perThreadScaling": self.per_thread_scaling,
        }


def gups(L: int, num_projections: int, wall_time_sec: float) -> float:
    """Billions of voxel updates per second, counting every voxel of every projection."""
    return L**3 * num_projections / wall_time_sec / 1e9


def quality(vol: np.ndarray, ref: np.ndarray) -> tuple[float, float]:
    """(RMSE, PSNR in dB) of ``vol`` against ``ref``; PSNR peak is max |ref|."""
    diff = vol.astype(np.float64) - ref.astype(np.float64)
    rmse = float(np.sqrt(np.mean(diff * diff)))
    peak = float(np.abs(ref).max())
    if rmse == 0.0:
        return 0.0, math.inf
    if peak == 0.0:
        return rmse, -math.inf
    return rmse, 20.0 * math.log10(peak / rmse)


def plane_ranges(L: int, workers: int) -> list[tuple[int, int]]:
    bounds = np.linspace(0, L, workers + 1).round().astype(int)
    return [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def load_dataset(cfg: RunConfig) -> ProjectionSet:
    if cfg.dataset is not None:
        return read_projection_set(cfg.dataset)
    return synthesize_dataset(cfg.synth or default_synth_spec())


def _parallel_pass(pool, fn, ranges):
    if pool is None:
        for r in ranges:
            fn(r)
        return
    for fut in [pool.submit(fn, r) for r in ranges]:
        fut.result()


def reconstruct(ps: ProjectionSet, kernel: KernelConfig, threads: int = 1, pool=None,
                prepared=None) -> Volume:
    p = ps.params
    images, masks = prepared if prepared is not None else prepare(ps, kernel)
    ranges = plane_ranges(p.L, threads)
    vol = Volume.zeros(p.L)
    for A, img, mask in zip(ps.matrices, images, masks):
        # barrier between projections: every range finishes before the next view starts
        _parallel_pass(pool, lambda r: backproject_kernel(vol, img, A, p, kernel, mask, r), ranges)
    return vol


def reconstruct_reference(ps: ProjectionSet, threads: int = 1, pool=None) -> Volume:
    p = ps.params
    vol = Volume.zeros(p.L)
    ranges = plane_ranges(p.L, threads)
    for A, img in zip(ps.matrices, ps.images):
        _parallel_pass(pool, lambda r: backproject_reference(vol, img, A, p, r), ranges)
    return vol


def prepare(ps: ProjectionSet, kernel: KernelConfig):
    """Padded images and clip masks for every view, built outside the timed region."""
    images = [pad_image(img) if kernel.strategy.padded else img for img in ps.images]
    if kernel.use_clip_mask:
        masks = [compute_clip_mask(A, ps.params, kernel.reciprocal) for A in ps.matrices]
    else:
        masks = [None] * len(ps)
    return images, masks


def run_benchmark(cfg: RunConfig, dataset: ProjectionSet | None = None,
                  reference: Volume | None = None) -> RunResult:
    """Time the configured kernel (best of ``repetitions``) and score it against the reference."""
    ps = dataset if dataset is not None else load_dataset(cfg)
    p = ps.params
    if cfg.threads > p.L:
        raise ValueError(f"cannot split {p.L} planes over {cfg.threads} threads")
    if any(img.pad for img in ps.images):
        raise ValueError("dataset images must be stored unpadded")
    prepared = prepare(ps, cfg.kernel)

    pool = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else None
    try:
        best = math.inf
        vol = None
        for _ in range(cfg.repetitions):
            t0 = time.perf_counter()
            vol = reconstruct(ps, cfg.kernel, cfg.threads, pool, prepared)
            best = min(best, time.perf_counter() - t0)
        if reference is None:
            reference = reconstruct_reference(ps, cfg.threads, pool)
    finally:
        if pool is not None:
            pool.shutdown()

    rmse, psnr = quality(vol.data, reference.data)
    g = gups(p.L, len(ps), best)
    result = RunResult(
        gups_per_sec=g, wall_time_sec=best, L=p.L, num_projections=len(ps), threads=cfg.threads,
        kernel_label=str(cfg.kernel), rmse=rmse, psnr=psnr,
        per_thread_scaling=[{"threads": cfg.threads, "gupsPerSec": g}],
        config=cfg.describe(ps), timestamp=datetime.now(timezone.utc).isoformat(), volume=vol,
    )
    log.info("%s threads=%d: %.4f GUP/s, rmse=%.3g", result.kernel_label, cfg.threads, g, rmse)
    if cfg.output_volume:
        from .io import write_volume
        write_volume(cfg.output_volume, vol)
    if cfg.results_path:
        append_results(cfg.results_path, [result])
    return result


def scaling_sweep(cfg: RunConfig, max_threads: int) -> list[RunResult]:
    """Run at 1..max_threads workers; efficiency(t) = speedup(t) / t."""
    cores = os.cpu_count() or 1
    if not 1 <= max_threads <= cores:
        raise ValueError(f"max_threads must be in [1, {cores}] on this host, got {max_threads}")
    ps = load_dataset(cfg)
    reference = reconstruct_reference(ps)
    results = []
    for t in range(1, max_threads + 1):
        sub = RunConfig(cfg.kernel, cfg.dataset, cfg.synth, t, cfg.repetitions)
        results.append(run_benchmark(sub, ps, reference))
    base = results[0].gups_per_sec
    scaling = [{"threads": r.threads, "gupsPerSec": r.gups_per_sec,
                "efficiency": r.gups_per_sec / base / r.threads} for r in results]
    for r in results:
        r.per_thread_scaling = scaling
    if cfg.results_path:
        append_results(cfg.results_path, results)
    return results


def append_results(path, results):
    with open(path, "a") as fh:
        for r in results:
            fh.write(json.dumps(r.to_record()) + "\n")


CSV_FIELDS = ["kernel", "threads", "L", "numProjections", "wallTimeSec", "gupsPerSec", "efficiency",
              "rmse", "psnr"]


def write_csv(path, results):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        w.writeheader()
        for r in results:
            eff = next((s.get("efficiency") for s in r.per_thread_scaling
                        if s["threads"] == r.threads), None)
            w.writerow({"kernel": r.kernel_label, "threads": r.threads, "L": r.L,
                        "numProjections": r.num_projections, "wallTimeSec": r.wall_time_sec,
                        "gupsPerSec": r.gups_per_sec, "efficiency": eff, "rmse": r.rmse,
                        "psnr": r.psnr})


def synth_spec_from_dict(d: dict) -> SynthSpec:
    base = default_synth_spec(d.get("L", 64), d.get("projections", 60))
    g, p = base.geometry, base.params
    L = d.get("L", p.L)
    params = make_centered_params(L, d.get("spacing", p.MM), d.get("width", p.width),
                                  d.get("height", p.height))
    geom = ScanGeometry(
        num_projections=d.get("projections", g.num_projections),
        source_detector_distance=d.get("sdd", g.source_detector_distance),
        source_iso_distance=d.get("sid", g.source_iso_distance),
        detector_pixel_pitch=d.get("pitch", g.detector_pixel_pitch),
        angular_range=d.get("angular_range", g.angular_range),
    )
    if "spheres" in d:
        spheres = tuple(Sphere(tuple(s["center"]), s["radius"], s["value"]) for s in d["spheres"])
    else:
        spheres = base.spheres
    return SynthSpec(geom, params, spheres)


def load_run_config(path) -> RunConfig:
    """Read a run file (``.toml`` or ``.json``).

    Keys: ``kernel`` (kernel string), ``dataset`` or ``synth`` table,
    ``threads``, ``repetitions``, ``output_volume``, ``results``.
    """
    path = os.fspath(path)
    with open(path, "rb") as fh:
        d = tomllib.load(fh) if path.endswith(".toml") else json.load(fh)
    return RunConfig(
        kernel=KernelConfig.parse(d.get("kernel", "")),
        dataset=d.get("dataset"),
        synth=synth_spec_from_dict(d["synth"]) if "synth" in d else None,
        threads=d.get("threads", 1),
        repetitions=d.get("repetitions", 3),
        output_volume=d.get("output_volume"),
        results_path=d.get("results"),
    )


def spec_to_dict(spec: SynthSpec) -> dict:
    g, p = spec.geometry, spec.params
    return {"L": p.L, "projections": g.num_projections, "width": p.width, "height": p.height,
            "spacing": p.MM, "sdd": g.source_detector_distance, "sid": g.source_iso_distance,
            "pitch": g.detector_pixel_pitch, "angular_range": g.angular_range,
            "spheres": [asdict(s) for s in spec.spheres]}
