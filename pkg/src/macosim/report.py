"""Text table, plot data file and figure for a results table."""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .harness import ResultTable  # noqa: E402

NA = "NA"


def _cell(value: float | None) -> str:
    return NA if value is None or math.isnan(value) else f"{value:.2f}"


def text_table(table: ResultTable) -> str:
    """Vehicle counts as rows, series as columns; missing cells read ``NA``."""
    agg = table.aggregate()
    labels = table.labels()
    header = ["vehicles"] + labels
    body = [[str(n)] + [_cell(agg.get((s, n))) for s in labels] for n in table.counts()]
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in [header] + body]
    return "\n".join(lines) + "\n"


def data_file(table: ResultTable) -> str:
    """Whitespace matrix for gnuplot; counts with no data at all are left out."""
    agg = table.aggregate()
    labels = table.labels()
    out = ["# mean travel time (s) by vehicle count",
           f'# gnuplot: set datafile missing "{NA}"',
           "# vehicles " + " ".join(labels)]
    for n in table.counts():
        cells = [_cell(agg.get((s, n))) for s in labels]
        if all(c == NA for c in cells):
            continue
        out.append(" ".join([str(n)] + cells))
    return "\n".join(out) + "\n"


def plot(table: ResultTable, path: str | Path) -> None:
    agg = table.aggregate()
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for s in table.labels():
        pts = sorted((n, v) for (label, n), v in agg.items() if label == s)
        if pts:
            xs, ys = zip(*pts)
            ax.plot(xs, ys, marker="o", markersize=3, label=s)
    ax.set_xlabel("number of vehicles")
    ax.set_ylabel("mean travel time (s)")
    ax.grid(alpha=0.3)
    if ax.get_legend_handles_labels()[0]:
        ax.legend(fontsize=8, ncol=2)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def emit_report(table: ResultTable, out_dir: str | Path, stem: str = "travel_time") -> dict[str, Path]:
    """Write ``<stem>.txt``, ``<stem>.dat`` and ``<stem>.png`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"text": out / f"{stem}.txt", "data": out / f"{stem}.dat", "figure": out / f"{stem}.png"}
    paths["text"].write_text(text_table(table))
    paths["data"].write_text(data_file(table))
    plot(table, paths["figure"])
    return paths
