"""Figure rendering for evaluation reports."""
from __future__ import annotations

import os
from pathlib import Path
from typing import List, Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .datasets import CALO, POINTS2D, ConditionedDataset, group_by_condition  # noqa: E402
from .evaluation import CHANNELS, EvalReport, extract_channels_batch, metrics_table  # noqa: E402

STYLE = {
    "figure.dpi": 100,
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.bbox": "tight",
}
REAL_COLOR = "0.35"
GEN_COLOR = "tab:orange"


def _save(fig, path: Path) -> Path:
    fig.savefig(path)
    plt.close(fig)
    return path


def scatter_by_spread(real: ConditionedDataset, generated: ConditionedDataset, spread: bool, path) -> Path:
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(8, 4), sharex=True, sharey=True)
        for ax, ds, title in ((axes[0], real, "real"), (axes[1], generated, "generated")):
            sel = ds.conditions[:, 1] == float(spread)
            pts, cls = ds.samples[sel], ds.conditions[sel, 0]
            ax.scatter(pts[:, 0], pts[:, 1], c=cls, cmap="tab10", s=2, alpha=0.5, vmin=1, vmax=10)
            ax.set_title(f"{title}, spread={int(spread)}")
            ax.set_aspect("equal")
        return _save(fig, path)


def channel_histogram(real_ch: np.ndarray, gen_ch: np.ndarray, name: str, path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        lo = min(real_ch.min(), gen_ch.min())
        hi = max(real_ch.max(), gen_ch.max())
        bins = np.linspace(lo, hi if hi > lo else lo + 1, 50)
        ax.hist(real_ch, bins=bins, density=True, histtype="stepfilled", color=REAL_COLOR, alpha=0.4, label="real")
        ax.hist(gen_ch, bins=bins, density=True, histtype="step", color=GEN_COLOR, lw=1.5, label="generated")
        ax.set_xlabel(name)
        ax.legend(frameon=False)
        return _save(fig, path)


def sample_grid(dataset: ConditionedDataset, path, n_conditions: int = 4, per_condition: int = 4, title: str = "") -> Path:
    """First ``per_condition`` images of the first ``n_conditions`` groups."""
    ds = dataset if dataset.is_grouped else group_by_condition(dataset)
    groups = list(ds.groups.values())[:n_conditions]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(
            len(groups), per_condition, figsize=(1.6 * per_condition, 1.6 * len(groups)), squeeze=False
        )
        for row, idx in zip(axes, groups):
            for ax, i in zip(row, list(idx[:per_condition]) + [None] * per_condition):
                ax.set_xticks([])
                ax.set_yticks([])
                if i is not None:
                    ax.imshow(ds.samples[i], cmap="magma", interpolation="nearest")
        if title:
            fig.suptitle(title)
        return _save(fig, path)


def render_report(
    report: EvalReport,
    out_dir,
    real: Optional[ConditionedDataset] = None,
    generated: Optional[ConditionedDataset] = None,
) -> List[Path]:
    """Write the metrics table, the JSON report and the report's figures."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise PermissionError(f"{out} is not writable")
    written = []
    table = out / "metrics.tsv"
    table.write_text(metrics_table(report), encoding="utf-8")
    written.append(table)
    js = out / "report.json"
    js.write_text(report.to_json(), encoding="utf-8")
    written.append(js)
    if real is None or generated is None:
        return written

    if report.kind == POINTS2D:
        for spread in (False, True):
            written.append(scatter_by_spread(real, generated, spread, out / f"scatter_spread{int(spread)}.png"))
    elif report.kind == CALO:
        rc = extract_channels_batch(real.samples)
        gc = extract_channels_batch(generated.samples)
        for j, name in enumerate(CHANNELS):
            written.append(channel_histogram(rc[:, j], gc[:, j], name, out / f"hist_{name}.png"))
        written.append(sample_grid(real, out / "grid_real.png", title="real"))
        written.append(sample_grid(generated, out / "grid_generated.png", title="generated"))
    return written
