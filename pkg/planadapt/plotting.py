from __future__ import annotations

import io
from collections.abc import Sequence
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

from planadapt.logger import get_logger  # noqa: E402

logger = get_logger(__name__)

FIGURE_WIDTH = 8.0
PANEL_HEIGHT = 2.2


def emit_plot(
    csv_path: str | Path,
    columns: Sequence[str],
    x: str | None = None,
) -> str:
    """Render ``columns`` of a CSV as stacked line panels and return SVG text.

    ``x`` defaults to the first CSV column. Every curve carries the SVG id
    ``series-<column>``. The same input always produces the same bytes.

    Test cases:
    - a requested column missing from the CSV
    - a CSV with a single row
    """
    frame = pd.read_csv(csv_path)
    if not columns:
        raise ValueError("at least one column must be plotted")
    x = x or frame.columns[0]
    missing = [c for c in [x, *columns] if c not in frame.columns]
    if missing:
        raise ValueError(f"columns {missing} not in {csv_path}")

    with plt.rc_context({"svg.hashsalt": "planadapt", "svg.fonttype": "path"}):
        fig, axes = plt.subplots(
            len(columns),
            1,
            sharex=True,
            squeeze=False,
            figsize=(FIGURE_WIDTH, PANEL_HEIGHT * len(columns)),
        )
        for ax, column in zip(axes[:, 0], columns):
            (line,) = ax.plot(
                frame[x], pd.to_numeric(frame[column], errors="coerce"),
                marker="." if len(frame) < 2 else None, label=column,
            )
            line.set_gid(f"series-{column}")
            ax.set_ylabel(column)
            ax.grid(True, alpha=0.3)
            ax.legend(loc="upper right")
        axes[-1, 0].set_xlabel(x)
        fig.tight_layout()
        buffer = io.StringIO()
        fig.savefig(buffer, format="svg", metadata={"Date": None})
        plt.close(fig)
    logger.debug(f"emit_plot returned with {len(columns)} series from {csv_path}")
    return buffer.getvalue()


def write_plot(
    csv_path: str | Path,
    columns: Sequence[str],
    svg_path: str | Path | None = None,
    x: str | None = None,
) -> Path:
    """Write ``emit_plot`` output next to the CSV unless ``svg_path`` is given."""
    svg_path = Path(svg_path) if svg_path else Path(csv_path).with_suffix(".svg")
    svg_path.write_text(emit_plot(csv_path, columns, x))
    return svg_path
