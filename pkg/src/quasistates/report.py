"""SVG figures: state timeline, distance series, potential grid, Delta(t).

Figures are byte-stable across runs: the SVG id salt is fixed and the
date metadata is omitted.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import clustering as cl  # noqa: E402

STYLE = {"svg.hashsalt": "quasistates", "svg.fonttype": "path", "font.size": 8}
MAX_PANELS = 6


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _center_lines(ax, model, ref, prefix):
    mu = model.center(ref)
    for j in model.leaves:
        x = float(np.linalg.norm(model.center(j) - mu))
        ax.axvline(x, linestyle=":", color="0.4", linewidth=0.8, gid=f"{prefix}center-{j}")


def _draw_potential(ax, x, phi, model, ref, prefix, title):
    ax.plot(x, phi, color="C0")
    _center_lines(ax, model, ref, prefix)
    ax.set_title(title)
    ax.set_xlabel(f"X_{ref}")
    ax.set_ylabel("Phi")


def window_figure(path, curve, model, ref):
    """One potential with dotted verticals at every live center's distance from ``ref``."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4, 3))
        t1, t2 = curve.window
        _draw_potential(ax, curve.grid, curve.phi, model, ref, "", f"[{t1}, {t2}]")
        fig.tight_layout()
        _save(fig, path)


def timeline_figure(path, timeline):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(8, 2.5))
        ax.scatter(timeline.times, timeline.states, s=1, marker="s", color="k", linewidths=0)
        ax.set_yticks(sorted(set(timeline.states.tolist())))
        ax.set_xlabel("t")
        ax.set_ylabel("state")
        fig.tight_layout()
        _save(fig, path)


def distances_figure(path, table, refs):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(8, 3))
        for r in refs:
            ax.plot(table["t"], table[f"X_{r}"], linewidth=0.6, label=f"X_{r}")
        ax.set_xlabel("t")
        ax.set_ylabel("distance to center")
        ax.legend(loc="upper right", ncol=min(len(refs), 6))
        fig.tight_layout()
        _save(fig, path)


def potentials_figure(path, panels, model, ref):
    """``panels``: list of (k, t1, t2, table) for one reference."""
    n = len(panels)
    cols = min(n, 3)
    rows = max(1, -(-n // 3))
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(rows, cols, figsize=(3.2 * cols, 2.6 * rows), squeeze=False)
        for ax in axes.flat[n:]:
            ax.set_visible(False)
        for ax, (k, t1, t2, tab) in zip(axes.flat, panels):
            _draw_potential(ax, tab["x"], tab["Phi"], model, ref, f"w{k:04d}-", f"[{t1}, {t2}]")
        fig.tight_layout()
        _save(fig, path)


def _runs(mask):
    edges = np.diff(np.concatenate([[0], mask.astype(int), [0]]))
    return zip(np.flatnonzero(edges == 1), np.flatnonzero(edges == -1) - 1)


def delta_figure(path, times, delta, states, target):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(8, 3))
        for a, b in _runs(states == target):
            ax.axvspan(times[a], times[b], color="0.85", linewidth=0)
        ax.plot(times, delta, color="k", linewidth=0.6)
        ax.axhline(0.0, color="0.3", linewidth=0.5)
        ax.set_xlabel("t")
        ax.set_ylabel("Delta(t)")
        ax.set_title(f"shaded: state {target}")
        fig.tight_layout()
        _save(fig, path)


def _read_table(path):
    data = np.genfromtxt(path, delimiter=",", names=True, dtype=float)
    return {name: np.atleast_1d(data[name]) for name in data.dtype.names}


def write_figures(ws) -> list:
    from .pipeline import potential_references, read_potential, read_windows

    out = ws.path("figures")
    out.mkdir(exist_ok=True)
    model = cl.load_model(ws.path("model.json"))
    timeline = cl.read_timeline(ws.path("merged_timeline.csv"))
    refs = potential_references(ws)
    paths = [out / n for n in ("timeline.svg", "distances.svg", "potentials.svg", "delta.svg")]

    timeline_figure(paths[0], timeline)
    distances_figure(paths[1], _read_table(ws.path("distances.csv")), refs)

    # first reference with at least one estimated window
    for ref in refs:
        ok = [w for w in read_windows(ws.path("potentials", f"windows_r{ref}.csv")) if w[3] == "ok"]
        if ok:
            break
    pick = sorted(set(np.linspace(0, len(ok) - 1, min(MAX_PANELS, len(ok))).round().astype(int)))
    panels = []
    for i in pick:
        k, t1, t2, _, _ = ok[i]
        panels.append((k, t1, t2, read_potential(ws.path("potentials", f"r{ref}", f"w{k:04d}.csv"))))
    potentials_figure(paths[2], panels, model, ref)

    fixed = Path(ws.path("fixed_point.csv")).read_text(encoding="utf-8").splitlines()
    header = fixed[0].split(",")
    target = int(fixed[1].split(",")[header.index("target_id")])
    delta = np.loadtxt(ws.path("delta.csv"), delimiter=",", skiprows=1, ndmin=2)
    delta_figure(paths[3], delta[:, 0], delta[:, 1], delta[:, 2].astype(int), target)
    return paths
