"""PNG figures for the CLI ``--plot`` option.

Figures are written with the Agg backend and without software/date metadata
so repeated runs give identical files.
"""

from __future__ import annotations

import io
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .io import atomic_write  # noqa: E402

plt.rcParams["figure.dpi"] = 100
plt.rcParams["font.size"] = 9
plt.rcParams["axes.linewidth"] = 0.6


def _save(fig, path) -> Path:
    buf = io.BytesIO()
    fig.savefig(buf, format="png", metadata={"Software": None}, bbox_inches="tight")
    plt.close(fig)
    return atomic_write(path, buf.getvalue())


def plot_spectra(spectra: Sequence, path) -> Path:
    """One panel per species, Lorentzian traces with stick positions."""
    fig, axes = plt.subplots(len(spectra), 1, figsize=(7, 2.4 * len(spectra)), squeeze=False)
    for ax, spec in zip(axes[:, 0], spectra):
        x, y = spec.render()
        ax.plot(x, y, lw=0.7, color="k")
        ax.axhline(0, lw=0.4, color="0.6")
        ax.set_title(f"{spec.species} spectrum", fontsize=9)
        ax.set_ylabel("amplitude")
        ax.invert_xaxis()
    axes[-1, 0].set_xlabel("frequency offset (Hz)")
    fig.tight_layout()
    return _save(fig, path)


def plot_peaks(peaks, path) -> Path:
    """2D peak map: filled markers positive, open markers negative, area by magnitude."""
    fig, ax = plt.subplots(figsize=(5.5, 5.5))
    pts = list(peaks.entries)
    if pts:
        top = max(abs(p.amplitude) for p in pts) or 1.0
        for sign, face in ((1, "k"), (-1, "none")):
            sel = [p for p in pts if (p.amplitude > 0) == (sign > 0)]
            ax.scatter([p.omega2 for p in sel], [p.omega1 for p in sel],
                       s=[4 + 60 * abs(p.amplitude) / top for p in sel],
                       facecolors=face, edgecolors="k", linewidths=0.5)
    ax.set_xlabel("omega2 (Hz)")
    ax.set_ylabel("omega1 (Hz)")
    ax.invert_xaxis()
    ax.invert_yaxis()
    fig.tight_layout()
    return _save(fig, path)


def plot_levels(diagram, path) -> Path:
    """Levels as horizontal bars placed by total M step count, edges as thin lines."""
    m = {}
    for comp in diagram.components:
        m[comp[0]] = 0
        stack = [comp[0]]
        while stack:
            k = stack.pop()
            for u, l in diagram.edges.values():
                for a, b, step in ((u, l, -1), (l, u, 1)):
                    if a == k and b not in m:
                        m[b] = m[k] + step
                        stack.append(b)
    cols: dict[int, list[int]] = {}
    for k in sorted(diagram.energies, key=lambda k: (diagram.energies[k], k)):
        cols.setdefault(m.get(k, 0), []).append(k)
    xpos = {}
    for level_m, ks in cols.items():
        for r, k in enumerate(ks):
            xpos[k] = -level_m * 2.0 + 0.3 * (r % 3)
    fig, ax = plt.subplots(figsize=(7, 6))
    for u, l in diagram.edges.values():
        ax.plot([xpos[u], xpos[l]], [diagram.energies[u], diagram.energies[l]], lw=0.3, color="0.6")
    for k, e in diagram.energies.items():
        ax.plot([xpos[k] - 0.25, xpos[k] + 0.25], [e, e], lw=1.2, color="k")
    ax.set_ylabel("relative energy (Hz)")
    ax.set_xticks([])
    fig.tight_layout()
    return _save(fig, path)


def plot_fidelities(series: dict[str, dict[str, float]], path) -> Path:
    """Stage fidelities, one line per run label."""
    fig, ax = plt.subplots(figsize=(5, 3))
    for label, fids in series.items():
        ax.plot(list(fids), list(fids.values()), marker="o", lw=0.8, label=label)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("fidelity")
    if len(series) > 1:
        ax.legend(frameon=False)
    fig.tight_layout()
    return _save(fig, path)


def plot_populations(populations: dict[str, float], path, title: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(8, 3))
    labels = list(populations)
    ax.bar(range(len(labels)), list(populations.values()), color="0.3")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=90, fontsize=6)
    ax.axhline(0, lw=0.4, color="k")
    ax.set_ylabel("deviation population")
    if title:
        ax.set_title(title, fontsize=9)
    fig.tight_layout()
    return _save(fig, path)
