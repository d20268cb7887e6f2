"""Figures for the CLI report paths.  Every function writes one image file."""

from __future__ import annotations

import contextlib

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

RC = {
    "figure.figsize": (6.0, 3.8),
    "figure.dpi": 120,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
    "font.size": 10,
    "axes.labelsize": 10,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
}


@contextlib.contextmanager
def _figure(path, **subplots_kw):
    with plt.rc_context(RC):
        fig, ax = plt.subplots(**subplots_kw)
        try:
            yield fig, ax
            fig.savefig(path)
        finally:
            plt.close(fig)


def plot_scaling(results, path, reference_efficiency=None):
    """GUP/s and parallel efficiency against worker count."""
    threads = [r.threads for r in results]
    g = [r.gups_per_sec for r in results]
    eff = [r.gups_per_sec / results[0].gups_per_sec / r.threads for r in results]
    with _figure(path) as (fig, ax):
        ax.plot(threads, g, "o-", label="GUP/s")
        ax.plot(threads, [g[0] * t for t in threads], ":", color="gray", label="linear")
        ax.set_xlabel("threads")
        ax.set_ylabel("GUP/s")
        ax2 = ax.twinx()
        ax2.plot(threads, eff, "s--", color="C1", label="efficiency")
        if reference_efficiency is not None:
            ax2.axhline(reference_efficiency, color="C1", alpha=0.4, lw=1,
                        label=f"published ({reference_efficiency:.0%})")
        ax2.set_ylim(0, 1.1)
        ax2.set_ylabel("parallel efficiency")
        ax2.grid(False)
        lines = ax.get_lines() + ax2.get_lines()
        ax.legend(lines, [ln.get_label() for ln in lines], loc="lower right")
        ax.set_title(results[0].kernel_label)


def plot_kernel_comparison(results, path):
    labels = ["\n".join(r.kernel_label.split()) for r in results]
    with _figure(path, figsize=(max(4.0, 2.0 * len(results)), 3.8)) as (fig, ax):
        ax.bar(range(len(results)), [r.gups_per_sec for r in results], color="C0")
        ax.set_xticks(range(len(results)), labels, fontsize=7)
        ax.grid(axis="x", visible=False)
        ax.set_ylabel("GUP/s")


def plot_gather_latency(rows, path, reference_rows=None):
    """Cycles per full gather against elements per cache line, host and published."""
    ks = [r["elementsPerLine"] for r in rows]
    with _figure(path) as (fig, ax):
        for i, level in enumerate(("L1", "L2")):
            if level in rows[0]:
                ax.plot(ks, [r[level]["loop"] for r in rows], "o-", color=f"C{i}", label=f"host {level}")
        if reference_rows:
            rk = [r["elementsPerLine"] for r in reference_rows]
            for i, level in enumerate(("L1", "L2")):
                vals = [r[level].get("loop") for r in reference_rows]
                if all(v is not None for v in vals):
                    ax.plot(rk, vals, "x--", color=f"C{i}", alpha=0.6, label=f"published KNC {level}")
        ax.set_xscale("log", base=2)
        ax.set_xticks(ks, [str(k) for k in ks])
        ax.set_xlabel("elements per cache line")
        ax.set_ylabel("cycles per full gather")
        ax.legend()


def plot_cycle_breakdown(breakdown, path, published_total=None):
    parts = [("base", breakdown.base_cycles), ("gather (L1)", breakdown.gather_cycles),
             ("L2 refill", breakdown.l2_penalty_cycles)]
    with _figure(path, figsize=(3.6, 4.2)) as (fig, ax):
        bottom = 0.0
        for i, (name, v) in enumerate(parts):
            ax.bar(0, v, bottom=bottom, color=f"C{i}", label=f"{name}: {v:.1f}")
            bottom += v
        if published_total is not None:
            ax.axhline(published_total, color="k", ls="--", lw=1, label=f"published {published_total}")
        ax.set_xticks([])
        ax.set_ylabel("cycles per iteration")
        ax.legend(loc="lower right")


def plot_instruction_profiles(profiles, path):
    from .costmodel import PARTS

    names = list(profiles)
    with _figure(path) as (fig, ax):
        bottom = [0] * len(names)
        for i, part in enumerate(PARTS):
            vals = [profiles[n].part_total(part) for n in names]
            ax.bar(names, vals, bottom=bottom, color=f"C{i}", label=part)
            bottom = [b + v for b, v in zip(bottom, vals)]
        ax.set_ylabel("instructions per vectorized loop")
        ax.legend()
