from voxelbench import report
from voxelbench.costmodel import CycleModelInputs, knc_cycle_model, load_data, load_profiles
from voxelbench.harness import RunResult


def _result(threads, g):
    return RunResult(gups_per_sec=g, wall_time_sec=1.0, L=8, num_projections=1, threads=threads,
                     kernel_label="lanes=8 strategy=padded-gather recip=exact clip=on", rmse=0.0,
                     psnr=float("inf"))


def test_every_figure_is_written(tmp_path):
    results = [_result(1, 1.0), _result(2, 1.9)]
    report.plot_scaling(results, tmp_path / "a.png", reference_efficiency=0.93)
    report.plot_kernel_comparison(results, tmp_path / "b.png")
    rows = load_data("reference_numbers.json")["gatherLatency"]["KnightsCorner"]["rows"]
    report.plot_gather_latency(rows, tmp_path / "c.png", rows)
    report.plot_cycle_breakdown(knc_cycle_model(CycleModelInputs.knc_published()), tmp_path / "d.svg", 107)
    report.plot_instruction_profiles(load_profiles(), tmp_path / "e.pdf")
    for name in ("a.png", "b.png", "c.png", "d.svg", "e.pdf"):
        assert (tmp_path / name).stat().st_size > 0
