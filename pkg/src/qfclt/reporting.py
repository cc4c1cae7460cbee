"""Deterministic CSV/plot-data emission and figure rendering.

Every output file starts with a header block (version, config hash, seed,
command) and contains no timestamps, so identical configs produce identical
bytes. Figures are rendered with the Agg backend; the PNG metadata is pinned
for the same reason.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

ARTIFACT_VERSION = "0.1.0"


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _format(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def header_lines(command: str, cfg_hash: str, seed: int) -> list[str]:
    return [
        f"# qfclt-version: {ARTIFACT_VERSION}",
        f"# command: {command}",
        f"# config-hash: {cfg_hash}",
        f"# seed: {seed}",
    ]


def write_table(path: Path, command: str, cfg_hash: str, seed: int,
                columns: list[str], rows) -> None:
    lines = header_lines(command, cfg_hash, seed)
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(_format(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_plotdata(path: Path, command: str, cfg_hash: str, seed: int,
                   xs, ys, errs=None) -> None:
    errs = [0.0] * len(xs) if errs is None else errs
    rows = list(zip(xs, ys, errs))
    write_table(path, command, cfg_hash, seed, ["x", "y", "err"], rows)


def render_figure(path: Path, xs, ys, errs=None, *, xlabel: str = "x",
                  ylabel: str = "y", title: str = "", loglog: bool = False) -> None:
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    if errs is not None:
        ax.errorbar(xs, ys, yerr=errs, fmt="o-", capsize=3, lw=1.2, ms=4)
    else:
        ax.plot(xs, ys, "o-", lw=1.2, ms=4)
    if loglog:
        ax.set_xscale("log")
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": "qfclt"})
    plt.close(fig)
