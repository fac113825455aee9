"""Artifact writers shared by the command-line front end.

All text formats are pinned down to the byte: CSV files carry
'#'-prefixed metadata lines, comma separators, LF endings, and UTF-8;
images are ASCII PGM (P2); charts are static SVG rendered through the
Agg backend with text converted to paths and a fixed hash salt, so a
rerun with the same config and seed reproduces the same files.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import __version__
from .rng import RNG_ID


def format_cell(x) -> str:
    """Canonical text for one CSV cell.

    Floats go through repr, which is the shortest string that parses
    back to the same double, so formatting never loses precision and
    never depends on locale.
    """
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        v = float(x)
        if np.isnan(v):
            return "nan"
        if np.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    s = str(x)
    if any(c in s for c in ",\n\r"):
        raise ValueError(f"cell text {s!r} would break the CSV dialect")
    return s


def csv_bytes(columns: Sequence[str], rows: Sequence[Sequence],
              meta: Mapping | None = None) -> bytes:
    lines = []
    for k, v in (meta or {}).items():
        lines.append(f"# {k} = {format_cell(v)}")
    lines.append(",".join(columns))
    for row in rows:
        row = list(row)
        if len(row) != len(columns):
            raise ValueError("row width does not match the header")
        lines.append(",".join(format_cell(c) for c in row))
    return ("\n".join(lines) + "\n").encode("utf-8")


def csv_write(path, columns: Sequence[str], rows: Sequence[Sequence],
              meta: Mapping | None = None) -> bytes:
    """Write a metadata-headed CSV and return the exact bytes written."""
    payload = csv_bytes(columns, rows, meta)
    Path(path).write_bytes(payload)
    return payload


def pgm_bytes(image: np.ndarray, maxval: int = 255) -> bytes:
    arr = np.asarray(image)
    if arr.ndim != 2:
        raise ValueError("PGM image must be 2D")
    arr = np.rint(arr).astype(np.int64)
    if arr.min() < 0 or arr.max() > maxval:
        raise ValueError("pixel values outside [0, maxval]")
    lines = ["P2", f"{arr.shape[1]} {arr.shape[0]}", str(int(maxval))]
    lines.extend(" ".join(str(v) for v in row) for row in arr)
    return ("\n".join(lines) + "\n").encode("ascii")


def pgm_write(path, image: np.ndarray, maxval: int = 255) -> bytes:
    """Write a plain (P2, ASCII) grayscale PGM and return its bytes."""
    payload = pgm_bytes(image, maxval)
    Path(path).write_bytes(payload)
    return payload


_MPL_CONFIGURED = False


def _pyplot():
    global _MPL_CONFIGURED
    import matplotlib
    if not _MPL_CONFIGURED:
        matplotlib.use("Agg")
        matplotlib.rcParams["svg.fonttype"] = "path"
        matplotlib.rcParams["svg.hashsalt"] = "cutoff-lab"
        _MPL_CONFIGURED = True
    import matplotlib.pyplot as plt
    return plt


@dataclass
class LineSeries:
    """One curve for an SVG chart, with optional symmetric error bars."""

    x: np.ndarray
    y: np.ndarray
    label: str = ""
    yerr: np.ndarray | None = None


def svg_line_chart(path, series: Sequence[LineSeries], title: str = "",
                   xlabel: str = "", ylabel: str = "",
                   logy: bool = False) -> bytes:
    """Render line/errorbar series to a self-contained static SVG.

    Text is emitted as paths and the SVG Date field is suppressed, so
    the output depends only on the data.
    """
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    try:
        for s in series:
            x = np.asarray(s.x, float)
            y = np.asarray(s.y, float)
            if logy:
                keep = y > 0
                x, y = x[keep], y[keep]
                yerr = None if s.yerr is None else np.asarray(s.yerr)[keep]
            else:
                yerr = s.yerr
            if yerr is not None:
                ax.errorbar(x, y, yerr=yerr, label=s.label, lw=1.4,
                            capsize=2.0, elinewidth=0.8)
            else:
                ax.plot(x, y, label=s.label, lw=1.4)
        if logy:
            ax.set_yscale("log")
        if title:
            ax.set_title(title)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if any(s.label for s in series):
            ax.legend(frameon=False, fontsize=9)
        ax.grid(True, alpha=0.3, lw=0.5)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
    finally:
        plt.close(fig)
    return Path(path).read_bytes()


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


@dataclass
class RunManifest:
    """Provenance record emitted next to every run's outputs."""

    subcommand: str
    config: dict
    version: str = __version__
    rng_id: str = RNG_ID
    started_utc: str = ""
    wall_seconds: float = 0.0
    outputs: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def to_json(self) -> str:
        body = {
            "subcommand": self.subcommand,
            "version": self.version,
            "rng_id": self.rng_id,
            "started_utc": self.started_utc,
            "wall_seconds": round(self.wall_seconds, 3),
            "config": self.config,
            "outputs": self.outputs,
            "notes": self.notes,
        }
        return json.dumps(body, indent=2, sort_keys=True) + "\n"


class ArtifactDir:
    """Collects outputs under one directory and digests them for a manifest.

    Every write goes through this object, which is how the command
    layer keeps the promise that nothing lands outside the output
    directory.
    """

    def __init__(self, out_dir, subcommand: str, config: dict):
        self.root = Path(out_dir)
        self.root.mkdir(parents=True, exist_ok=True)
        self.manifest = RunManifest(subcommand=subcommand, config=config)
        self.manifest.started_utc = datetime.now(timezone.utc).isoformat(
            timespec="seconds")
        self._t0 = time.monotonic()

    def path(self, name: str) -> Path:
        if Path(name).is_absolute() or ".." in Path(name).parts:
            raise ValueError(f"artifact name {name!r} escapes the output dir")
        return self.root / name

    def _record(self, name: str, payload: bytes) -> Path:
        self.manifest.outputs[name] = {
            "sha256": sha256_hex(payload), "bytes": len(payload)}
        return self.path(name)

    def csv(self, name: str, columns, rows, meta=None) -> Path:
        payload = csv_write(self.path(name), columns, rows, meta)
        return self._record(name, payload)

    def pgm(self, name: str, image, maxval: int = 255) -> Path:
        payload = pgm_write(self.path(name), image, maxval)
        return self._record(name, payload)

    def svg(self, name: str, series, **kwargs) -> Path:
        payload = svg_line_chart(self.path(name), series, **kwargs)
        return self._record(name, payload)

    def text(self, name: str, content: str) -> Path:
        payload = content.encode("utf-8")
        self.path(name).write_bytes(payload)
        return self._record(name, payload)

    def note(self, message: str) -> None:
        self.manifest.notes.append(message)

    def finalize(self) -> Path:
        """Write the manifest (last, so it can digest every output)."""
        self.manifest.wall_seconds = time.monotonic() - self._t0
        target = self.path("manifest.json")
        target.write_text(self.manifest.to_json(), encoding="utf-8")
        return target
