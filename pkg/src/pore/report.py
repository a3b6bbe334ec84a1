"""Figure rendering for the report command.

Produces, in an output directory, matching CSV + PNG pairs:

* profile.csv / profile.png — mean attention vs index, the fitted bias
  curve, and the reweighted mean (all normalized to mean 1)
* summary.csv — fit parameters and relative slope before/after reweighting
* heatmap.csv / heatmap.png — the mean profile on its patch grid, when a
  grid is known

Everything else in the package emits plot-ready CSV only; matplotlib is
imported here and nowhere else.
"""

from __future__ import annotations

import csv
import os

import numpy as np

from . import bias_model, eval_metrics, trace_io
from .errors import SchemaError


def _figure_modules():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _save_png(fig, path) -> None:
    # Strip the Software tag so identical inputs give identical bytes.
    fig.savefig(path, metadata={"Software": None})


def render_report(traces_path, out_dir, form: str = bias_model.FORM_EXP2,
                  grid: tuple[int, int] | None = None) -> list[str]:
    """Render all report files; returns the paths written."""
    plt = _figure_modules()
    os.makedirs(out_dir, exist_ok=True)

    first_grid: list[tuple[int, int] | None] = [None]

    def traces():
        for trace in trace_io.read_traces(traces_path):
            if first_grid[0] is None:
                first_grid[0] = trace.grid
            yield trace

    profile = bias_model.mean_attention_profile(traces())
    fitted = bias_model.fit_bias(profile, form=form)
    n = profile.n
    idx = np.arange(n)
    mean_norm = profile.mean_scores / profile.mean_scores.mean()
    curve = fitted.curve()
    reweighted = mean_norm / curve
    reweighted_norm = reweighted / reweighted.mean()
    slope_raw = eval_metrics.positional_slope(profile)
    slope_reweighted = eval_metrics.positional_slope(reweighted_norm)

    written = []

    path = os.path.join(out_dir, "profile.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("index", "mean_norm", "fit", "reweighted_norm"))
        for i in range(n):
            writer.writerow((i, repr(float(mean_norm[i])), repr(float(curve[i])),
                             repr(float(reweighted_norm[i]))))
    written.append(path)

    path = os.path.join(out_dir, "summary.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("key", "value"))
        for key, value in (
            ("samples", profile.m_samples),
            ("n", n),
            ("form", fitted.form),
            ("a", repr(fitted.a)),
            ("b", repr(fitted.b)),
            ("c", repr(fitted.c)),
            ("residual", repr(fitted.residual)),
            ("relative_slope_raw", repr(slope_raw)),
            ("relative_slope_reweighted", repr(slope_reweighted)),
        ):
            writer.writerow((key, value))
    written.append(path)

    fig, (ax_top, ax_bottom) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    ax_top.plot(idx, mean_norm, label="mean attention", lw=0.8)
    ax_top.plot(idx, curve, label=f"{fitted.form} fit", lw=1.6)
    ax_top.set_ylabel("mean / overall mean")
    ax_top.legend()
    ax_top.set_title(f"positional profile (relative slope {slope_raw:.3f})")
    ax_bottom.plot(idx, reweighted_norm, color="tab:green", lw=0.8)
    ax_bottom.axhline(1.0, color="gray", lw=0.8, ls="--")
    ax_bottom.set_ylabel("reweighted / mean")
    ax_bottom.set_xlabel("visual token index")
    ax_bottom.set_title(f"after reweighting (relative slope {slope_reweighted:.3f})")
    fig.tight_layout()
    path = os.path.join(out_dir, "profile.png")
    _save_png(fig, path)
    plt.close(fig)
    written.append(path)

    use_grid = grid if grid is not None else first_grid[0]
    if use_grid is not None:
        rows, cols = use_grid
        if rows * cols != n:
            raise SchemaError(f"grid {rows}x{cols} does not tile a profile of length {n}")
        path = os.path.join(out_dir, "heatmap.csv")
        eval_metrics.grid_heatmap_export(profile, use_grid, path)
        written.append(path)
        fig, ax = plt.subplots(figsize=(5, 5))
        im = ax.imshow(mean_norm.reshape(rows, cols), cmap="viridis")
        ax.set_xlabel("patch column")
        ax.set_ylabel("patch row")
        ax.set_title("mean attention on the patch grid")
        fig.colorbar(im, ax=ax, shrink=0.8)
        fig.tight_layout()
        path = os.path.join(out_dir, "heatmap.png")
        _save_png(fig, path)
        plt.close(fig)
        written.append(path)

    return written
