"""Render the four figure kinds from monoflow CSV exports.

Output is vector SVG with deterministic ids and no timestamps, so repeated
renders of the same inputs are structurally identical.  All statistics
(means, quantiles, band edges) come from the CSVs; nothing is recomputed.
"""

from __future__ import annotations

import numpy as np

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .schemas import FigureSpec, SchemaError

_RC = {
    "svg.hashsalt": "monoflow-plots",
    "svg.fonttype": "none",
    "figure.figsize": (6.0, 4.0),
    "axes.spines.top": False,
    "axes.spines.right": False,
}

_DATA_STYLE = dict(color="0.35", marker="o", linestyle="none", markersize=3,
                   alpha=0.7, label="data")
_MEAN_COLOR = "#c44e52"
_SAMPLE_COLOR = "#4c72b0"
_BAND_COLOR = "#55a868"


def render(spec: FigureSpec) -> None:
    """Write the figure described by ``spec`` to its SVG output path."""
    with matplotlib.rc_context(_RC):
        fig = _RENDERERS[spec.kind](spec)
        try:
            fig.savefig(spec.output, format="svg", metadata={"Date": None})
        finally:
            plt.close(fig)


def _render_fit(spec: FigureSpec):
    predict = spec.inputs["predict"]
    data = spec.inputs["data"]
    x = predict.numeric("x")
    mean = predict.numeric("mean")
    fig, ax = plt.subplots()
    _draw_samples(ax, spec, max_default=10)
    ax.plot(data.numeric("x"), data.numeric("y"), **_DATA_STYLE)
    ax.plot(x, mean, color=_MEAN_COLOR, linewidth=1.8, label="mean fit")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_title(spec.style.get("title", "fit"))
    ax.legend(loc="upper left", frameon=False)
    return fig


def _render_intervals(spec: FigureSpec):
    predict = spec.inputs["predict"]
    data = spec.inputs["data"]
    x = predict.numeric("x")
    fig, ax = plt.subplots()
    ax.fill_between(x, predict.numeric("q2.5"), predict.numeric("q97.5"),
                    color=_BAND_COLOR, alpha=0.35, linewidth=0,
                    label="2.5-97.5%")
    _draw_samples(ax, spec, max_default=20)
    ax.plot(x, predict.numeric("mean"), color=_MEAN_COLOR, linewidth=1.8,
            label="mean")
    ax.plot(data.numeric("x"), data.numeric("y"), **_DATA_STYLE)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_title(spec.style.get("title", "confidence intervals"))
    ax.legend(loc="upper left", frameon=False)
    return fig


def _draw_samples(ax, spec: FigureSpec, max_default):
    samples = spec.inputs.get("samples")
    if samples is None:
        return
    limit = int(spec.style.get("max_samples", max_default))
    ids = samples.numeric("sample").astype(int)
    x = samples.numeric("x")
    value = samples.numeric("value")
    shown = 0
    for s in np.unique(ids):
        if shown >= limit:
            break
        mask = ids == s
        order = np.argsort(x[mask], kind="stable")
        ax.plot(x[mask][order], value[mask][order], color=_SAMPLE_COLOR,
                alpha=0.25, linewidth=0.8,
                label="samples" if shown == 0 else None)
        shown += 1


def _render_streamlines(spec: FigureSpec):
    table = spec.inputs["streamlines"]
    draw = table.numeric("draw").astype(int)
    step = table.numeric("step").astype(int)
    particle = table.numeric("particle").astype(int)
    position = table.numeric("position")
    time = table.numeric("time")
    draws = np.unique(draw)
    fig, axes = plt.subplots(
        len(draws), 1, squeeze=False,
        figsize=(6.0, 2.2 * len(draws) + 0.8), sharex=True)
    for ax, d in zip(axes[:, 0], draws):
        in_draw = draw == d
        for p in np.unique(particle[in_draw]):
            mask = in_draw & (particle == p)
            order = np.argsort(step[mask], kind="stable")
            ax.plot(time[mask][order], position[mask][order],
                    color=_SAMPLE_COLOR, alpha=0.8, linewidth=0.9)
        _draw_inducing_markers(ax, spec)
        ax.set_ylabel(f"draw {d}")
    axes[-1, 0].set_xlabel("time")
    axes[0, 0].set_title(spec.style.get("title", "streamlines"))
    return fig


def _draw_inducing_markers(ax, spec: FigureSpec):
    inducing = spec.inputs.get("inducing")
    if inducing is None:
        return
    variance = inducing.numeric("variance")
    vmax = float(variance.max()) if len(variance) else 1.0
    sizes = 10.0 + 60.0 * variance / max(vmax, 1e-300)
    ax.scatter(inducing.numeric("time"), inducing.numeric("space"),
               s=sizes, facecolors="none", edgecolors="0.3", linewidths=0.8)


def _render_sweep(spec: FigureSpec):
    table = spec.inputs["sweep"]
    sweeps = table.strings("sweep")
    values = table.numeric("value")
    x = table.numeric("x")
    mean = table.numeric("mean")
    lo = table.numeric("lo")
    hi = table.numeric("hi")
    labels = list(dict.fromkeys(sweeps))
    fig, axes = plt.subplots(len(labels), 1, squeeze=False,
                             figsize=(6.0, 3.0 * len(labels)))
    cmap = plt.get_cmap("viridis")
    for ax, label in zip(axes[:, 0], labels):
        mask0 = np.array([s == label for s in sweeps])
        settings = np.unique(values[mask0])
        for i, v in enumerate(settings):
            mask = mask0 & (values == v)
            order = np.argsort(x[mask], kind="stable")
            color = cmap(0.15 + 0.7 * i / max(len(settings) - 1, 1))
            ax.fill_between(x[mask][order], lo[mask][order], hi[mask][order],
                            color=color, alpha=0.25, linewidth=0)
            ax.plot(x[mask][order], mean[mask][order], color=color,
                    linewidth=1.2, label=f"{label}={v:g}")
        ax.set_ylabel("y")
        ax.legend(loc="upper left", frameon=False)
    axes[-1, 0].set_xlabel("x")
    axes[0, 0].set_title(spec.style.get("title", "uncertainty sweep"))
    return fig


_RENDERERS = {
    "fit": _render_fit,
    "intervals": _render_intervals,
    "streamlines": _render_streamlines,
    "sweep": _render_sweep,
}
