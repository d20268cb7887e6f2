"""``voxelbench`` command line: synth | run | sweep | microbench | model."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys

from . import costmodel, harness, microbench
from .backproject import KernelConfig, Reciprocal, Strategy

log = logging.getLogger("voxelbench")

EXIT_INVARIANT = 1
EXIT_USAGE = 2


def _size(text: str) -> int:
    """Byte count with optional K/M/G suffix, or a cache level name (L1, L2, memory)."""
    if text in ("L1", "L2", "memory"):
        return microbench.default_working_set(text)
    mult = {"K": 1024, "M": 1024**2, "G": 1024**3}.get(text[-1:].upper(), 1)
    return int(float(text.rstrip("kKmMgG")) * mult)


def _add_dataset_args(p):
    p.add_argument("--config", help="run file (.json or .toml)")
    p.add_argument("--dataset", help="VXB1 projection set; default is the built-in synthetic set")
    p.add_argument("--L", type=int, help="synthetic volume edge")
    p.add_argument("--projections", type=int, help="synthetic projection count")
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)


def _add_kernel_args(p, multiple=False):
    if multiple:
        p.add_argument("--kernel", action="append",
                       help='kernel string, e.g. "lanes=8 strategy=padded-gather recip=exact clip=on"; '
                            "repeat to compare several kernels")
    else:
        p.add_argument("--kernel", help="kernel string")
    p.add_argument("--lanes", type=int, choices=(1, 4, 8, 16))
    p.add_argument("--strategy", choices=[s.value for s in Strategy])
    p.add_argument("--recip", choices=[r.value for r in Reciprocal])
    p.add_argument("--clip", choices=("on", "off"))
    p.add_argument("--threads", type=int)
    p.add_argument("--repetitions", type=int)
    p.add_argument("--results", help="append JSON lines here")
    p.add_argument("--csv", help="write a CSV table here")
    p.add_argument("--figure", help="write a figure here (.png, .pdf, .svg)")


def _synth_overrides(args) -> dict:
    return {k: v for k, v in (("L", args.L), ("projections", args.projections),
                              ("width", args.width), ("height", args.height)) if v is not None}


def _kernel_from_args(args, text):
    k = KernelConfig.parse(text or "")
    over = {}
    if args.lanes is not None:
        over["lanes"] = args.lanes
    if args.strategy is not None:
        over["strategy"] = Strategy(args.strategy)
    if args.recip is not None:
        over["reciprocal"] = Reciprocal(args.recip)
    if args.clip is not None:
        over["use_clip_mask"] = args.clip == "on"
    if over:
        k = KernelConfig(**{**k.__dict__, **over})
    return k


def _run_configs(args) -> tuple[list[harness.RunConfig], str | None]:
    base = harness.load_run_config(args.config) if args.config else harness.RunConfig()
    synth = base.synth
    over = _synth_overrides(args)
    if over:
        d = harness.spec_to_dict(synth) if synth else {}
        synth = harness.synth_spec_from_dict({**d, **over})
    texts = args.kernel if isinstance(args.kernel, list) else [args.kernel]
    texts = [t for t in texts if t] or [str(base.kernel)]
    configs = [
        harness.RunConfig(
            kernel=_kernel_from_args(args, text),
            dataset=args.dataset or base.dataset,
            synth=synth,
            threads=args.threads or base.threads,
            repetitions=args.repetitions or base.repetitions,
            output_volume=getattr(args, "output_volume", None) or base.output_volume,
        )
        for text in texts
    ]
    results_path = args.results or base.results_path
    return configs, results_path


def _print_results(results):
    w = csv.writer(sys.stdout, delimiter="\t")
    w.writerow(["kernel", "threads", "wallTimeSec", "gupsPerSec", "efficiency", "rmse", "psnr"])
    for r in results:
        eff = next((s.get("efficiency") for s in r.per_thread_scaling if s["threads"] == r.threads), None)
        w.writerow([r.kernel_label, r.threads, f"{r.wall_time_sec:.6f}", f"{r.gups_per_sec:.6f}",
                    "" if eff is None else f"{eff:.3f}", f"{r.rmse:.6g}",
                    "inf" if math.isinf(r.psnr) else f"{r.psnr:.2f}"])


def _check_invariants(results, min_psnr) -> bool:
    ok = True
    for r in results:
        if not math.isclose(r.recomputed_gups(), r.gups_per_sec, rel_tol=1e-12):
            log.error("%s: stored GUP/s %.6g disagrees with recomputed %.6g",
                      r.kernel_label, r.gups_per_sec, r.recomputed_gups())
            ok = False
        if r.psnr < min_psnr:
            log.error("%s: PSNR %.2f dB below threshold %.2f dB (rmse %.3g)",
                      r.kernel_label, r.psnr, min_psnr, r.rmse)
            ok = False
    return ok


def cmd_synth(args):
    d = {}
    if args.config:
        cfg = harness.load_run_config(args.config)
        if cfg.synth is not None:
            d = harness.spec_to_dict(cfg.synth)
    for key in ("spacing", "sdd", "sid", "pitch"):
        if getattr(args, key) is not None:
            d[key] = getattr(args, key)
    d.update(_synth_overrides(args))
    if args.phantom:
        with open(args.phantom) as fh:
            d["spheres"] = json.load(fh)
    spec = harness.synth_spec_from_dict(d)
    ps = harness.synthesize_dataset(spec, args.out)
    print(f"wrote {len(ps)} projections of {spec.params.width}x{spec.params.height} "
          f"for L={spec.params.L} to {args.out}")
    return 0


def cmd_run(args):
    configs, results_path = _run_configs(args)
    results = []
    dataset = harness.load_dataset(configs[0])
    reference = harness.reconstruct_reference(dataset)
    for cfg in configs:
        results.append(harness.run_benchmark(cfg, dataset, reference))
    _emit(results, args, results_path)
    if args.figure:
        from .report import plot_kernel_comparison
        plot_kernel_comparison(results, args.figure)
    return 0 if _check_invariants(results, args.min_psnr) else EXIT_INVARIANT


def cmd_sweep(args):
    configs, results_path = _run_configs(args)
    results = harness.scaling_sweep(configs[0], args.max_threads)
    _emit(results, args, results_path)
    if args.figure:
        from .report import plot_scaling
        ref = costmodel.load_data("reference_numbers.json")["parallelEfficiency"]["IvyBridge-EP"]
        plot_scaling(results, args.figure, reference_efficiency=ref)
    return 0 if _check_invariants(results, args.min_psnr) else EXIT_INVARIANT


def _emit(results, args, results_path):
    _print_results(results)
    if results_path:
        harness.append_results(results_path, results)
    if args.csv:
        harness.write_csv(args.csv, results)


def cmd_microbench(args):
    if args.kind == "update":
        res = microbench.run_update_bench(_size(args.working_set or "memory"), args.threads, args.reps)
        print(f"update\tworkingSet={res.config['workingSet']}\tthreads={args.threads}\t"
              f"{res.bandwidth_bytes_per_sec / 1e9:.3f} GB/s" + ("\tNOISY" if res.noisy else ""))
        records = [res.to_json()]
    elif args.elements_per_line == "all":
        rows = microbench.gather_sweep(args.lanes, reps=args.reps)
        w = csv.writer(sys.stdout, delimiter="\t")
        w.writerow(["elementsPerLine", "L1 instruction", "L1 loop", "L2 instruction", "L2 loop", "noisy"])
        for r in rows:
            w.writerow([r["elementsPerLine"]] + [f"{r[lv][k]:.2f}" for lv in ("L1", "L2")
                                                 for k in ("instruction", "loop")]
                       + [",".join(lv for lv in ("L1", "L2") if r[lv]["noisy"])])
        records = [{"kind": "gather-sweep", "config": {"lanes": args.lanes},
                    "clockHz": microbench.calibrate_clock(), "rows": rows}]
        if args.figure:
            from .report import plot_gather_latency
            ref = costmodel.load_data("reference_numbers.json")["gatherLatency"]["KnightsCorner"]
            plot_gather_latency(rows, args.figure, ref["rows"] if args.lanes == 16 else None)
    else:
        pat = microbench.gen_gather_pattern(int(args.elements_per_line), args.lanes,
                                            _size(args.working_set or "L1"))
        res = microbench.run_gather_bench(pat, args.reps)
        print(f"gather\tk={pat.elements_per_line}\tlanes={pat.gather_width}\t"
              f"workingSet={pat.working_set_bytes}\t{res.cycles_per_instruction:.2f} cyc/instr\t"
              f"{res.cycles_per_full_gather:.2f} cyc/gather\tclock={res.clock_hz / 1e9:.2f} GHz"
              + ("\tNOISY" if res.noisy else ""))
        records = [res.to_json()]
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(records[0] if len(records) == 1 else records, fh, indent=2)
    return 0


def cmd_model(args):
    if args.tables:
        rows = costmodel.table_rows()
        print(costmodel.format_tables(rows))
        if args.figure:
            from .report import plot_instruction_profiles
            plot_instruction_profiles(costmodel.load_profiles(), args.figure)
        if args.json:
            with open(args.json, "w") as fh:
                json.dump(rows, fh, indent=2)
        return 0
    if args.inputs:
        with open(args.inputs) as fh:
            inputs = costmodel.CycleModelInputs.from_dict(json.load(fh))
    else:
        inputs = costmodel.CycleModelInputs.knc_published()
    b = costmodel.knc_cycle_model(inputs)
    out = b.as_dict()
    w = csv.writer(sys.stdout, delimiter="\t")
    for k, v in out.items():
        w.writerow([k, f"{v:.4f}"])
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(out, fh, indent=2)
    if args.figure:
        from .report import plot_cycle_breakdown
        pub = costmodel.load_data("reference_numbers.json")["kncCycleModel"]["publishedTotal"]
        plot_cycle_breakdown(b, args.figure, pub if not args.inputs else None)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="voxelbench", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic VXB1 projection set")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--L", type=int)
    p.add_argument("--projections", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--spacing", type=float, help="voxel spacing in mm")
    p.add_argument("--sdd", type=float, help="source-detector distance (mm)")
    p.add_argument("--sid", type=float, help="source-isocentre distance (mm)")
    p.add_argument("--pitch", type=float, help="detector pixel pitch (mm)")
    p.add_argument("--phantom", help='JSON list of {"center": [x,y,z], "radius": r, "value": v}')
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("run", help="benchmark one or more kernels")
    _add_dataset_args(p)
    _add_kernel_args(p, multiple=True)
    p.add_argument("--output-volume", dest="output_volume")
    p.add_argument("--min-psnr", type=float, default=60.0,
                   help="fail (exit 1) when PSNR against the reference drops below this")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="thread scaling sweep")
    _add_dataset_args(p)
    _add_kernel_args(p)
    p.add_argument("--max-threads", type=int, required=True)
    p.add_argument("--min-psnr", type=float, default=60.0)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("microbench", help="gather latency or streaming update bandwidth")
    p.add_argument("--kind", choices=("gather", "update"), default="gather")
    p.add_argument("--elements-per-line", default="16", help="1, 2, 4, 8, 16 or 'all'")
    p.add_argument("--lanes", type=int, default=16)
    p.add_argument("--working-set", help="bytes (K/M/G suffix) or L1, L2, memory")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--reps", type=int, default=11)
    p.add_argument("--json")
    p.add_argument("--figure")
    p.set_defaults(func=cmd_microbench)

    p = sub.add_parser("model", help="cycle model and static instruction tables")
    p.add_argument("inputs", nargs="?", help="JSON cycle model inputs; default is the published KNC set")
    p.add_argument("--tables", action="store_true", help="print the instruction-count tables")
    p.add_argument("--json")
    p.add_argument("--figure")
    p.set_defaults(func=cmd_model)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError, microbench.MeasurementUnreliable) as exc:
        log.error("%s", exc)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
