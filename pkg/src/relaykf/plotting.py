"""Render result curves to image files next to the delimited output."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

__all__ = ["plot_results"]

_MARKERS = ("o", "s", "^", "d", "v", "x", "*", "+")


def plot_results(rows: list[dict], path, title: str | None = None) -> Path:
    """Plot expected estimation error against average sum power, one
    curve per scheme, from parsed result rows; returns the output path."""
    path = Path(path)
    schemes = []
    for r in rows:
        if r["scheme"] not in schemes:
            schemes.append(r["scheme"])

    fig, ax = plt.subplots(figsize=(6.2, 4.2))
    for k, scheme in enumerate(schemes):
        pts = sorted(
            ((r["avg_power"], r["emp_err_trace"]) for r in rows if r["scheme"] == scheme),
            key=lambda p: p[0],
        )
        xs = [p[0] for p in pts]
        ys = [p[1] for p in pts]
        ax.plot(xs, ys, marker=_MARKERS[k % len(_MARKERS)], label=scheme)
    ax.set_xlabel("average sum transmit power")
    ax.set_ylabel("expected error covariance (trace)")
    if title:
        ax.set_title(title)
    ax.grid(True, alpha=0.4)
    if schemes:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
