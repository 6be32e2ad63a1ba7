"""Static SVG figures (decay curves, angle traces, before/after scatter, iteration ledger)."""

from __future__ import annotations

import io
from pathlib import Path
from typing import Optional, Sequence, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from unrect.core.models import FavardRow, LedgerRow, MeasureRow  # noqa: E402
from unrect.storage import atomic_write_bytes  # noqa: E402

# fixed ids and no timestamp, so reruns give byte-identical files
matplotlib.rcParams["svg.hashsalt"] = "unrect"
matplotlib.rcParams["svg.fonttype"] = "none"


def _save(fig, path: Union[str, Path]) -> Path:
    buf = io.BytesIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    return atomic_write_bytes(path, buf.getvalue())


def favard_decay(rows: Sequence[FavardRow], path: Union[str, Path], title: str = "Favard length") -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    if rows:
        ax.semilogy([r.depth for r in rows], [max(r.value, 1e-300) for r in rows], marker="o")
    ax.set_xlabel("depth")
    ax.set_ylabel("Favard length")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)


def angle_trace(rows: Sequence[MeasureRow], path: Union[str, Path], title: str = "projected length") -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    if rows:
        ax.plot([r.angle for r in rows], [r.value for r in rows], lw=1)
    ax.set_xlabel("angle")
    ax.set_ylabel("length")
    ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def cloud_scatter(
    before: np.ndarray,
    after: Optional[np.ndarray],
    path: Union[str, Path],
    title: str = "cloud",
) -> Path:
    fig, ax = plt.subplots(figsize=(5, 5))
    if len(before):
        ax.scatter(before[:, 0], before[:, 1], s=1, c="tab:blue", label="before", linewidths=0)
    if after is not None and len(after):
        ax.scatter(after[:, 0], after[:, 1], s=1, c="tab:red", label="after", linewidths=0)
        ax.legend(loc="upper right", markerscale=6)
    ax.set_aspect("equal")
    ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def ledger_plot(rows: Sequence[LedgerRow], path: Union[str, Path], sigma: float) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    steps = [r.step for r in rows]
    ax.plot(steps, [r.image_measure for r in rows], marker="o", label="image measure")
    ax.plot(steps, [sigma / 2.0**s for s in steps], ls="--", label="sigma / 2^n")
    ax.plot(steps, [r.collar_mass for r in rows], marker="s", label="collar mass")
    ax.plot(steps, [sigma / 3.0**s for s in steps], ls=":", label="sigma / 3^n")
    ax.set_xlabel("step")
    ax.legend()
    fig.tight_layout()
    return _save(fig, path)


def ledger_path(svg: Union[str, Path]) -> Path:
    """Where ``iterate --svg`` puts the ledger figure: next to the scatter, ``<stem>-ledger.svg``."""
    svg = Path(svg)
    return svg.with_name(f"{svg.stem}-ledger.svg")
