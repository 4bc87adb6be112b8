"""Delimited output and figure rendering for the command-line reports.

CSV cells are written with shortest round-trip float formatting, and PNG
metadata is stripped of dates, so reruns of the same scenario produce
byte-identical artifacts.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_STYLE = {
    "figure.figsize": (6.4, 4.0),
    "figure.dpi": 110,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "lines.linewidth": 1.4,
}


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (np.floating, float)):
        return repr(float(value))
    if isinstance(value, (np.integer, int)):
        return str(int(value))
    return str(value)


def write_csv(path, header, rows) -> str:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return str(path)


def write_manifest(path, manifest: dict) -> str:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return str(path)


def write_keyvalues(path, items) -> str:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(f"{k}={_fmt(v)}\n" for k, v in items), encoding="utf-8")
    return str(path)


def _save(fig, path) -> str:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)
    return str(path)


def trajectory_rows(times, states, space, kind="state"):
    rows = []
    for k, t in enumerate(times):
        for i in range(space.n_modes):
            rows.append((kind, t, int(space.js[i]), int(space.ks[i]), states[k, i]))
    return rows


def norm_series_figure(path, times, series: dict, title: str, logy=True) -> str:
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        for label, values in series.items():
            ax.plot(times, values, label=label)
        ax.set_xlabel("time")
        ax.set_ylabel("norm")
        if logy and all(np.all(np.asarray(v) > 0) for v in series.values()):
            ax.set_yscale("log")
        ax.set_title(title)
        ax.legend(loc="best", fontsize=8)
        return _save(fig, path)


def descent_figure(path, history) -> str:
    with plt.rc_context(_STYLE):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.0, 3.6))
        its = [h.iteration for h in history]
        ax1.plot(its, [h.cost for h in history], marker=".")
        ax1.set_xlabel("iteration")
        ax1.set_ylabel("cost")
        if all(h.cost > 0 for h in history):
            ax1.set_yscale("log")
        ax1.set_title("descent history")
        ax2.plot(its, [max(h.grad_norm, 1e-300) for h in history], marker=".", color="tab:red")
        ax2.set_xlabel("iteration")
        ax2.set_ylabel("gradient norm")
        ax2.set_yscale("log")
        ax2.set_title("gradient norm")
        fig.tight_layout()
        return _save(fig, path)


def decay_figure(path, xs, series: dict, xlabel, ylabel, title) -> str:
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        for label, ys in series.items():
            ax.loglog(xs, ys, marker="o", label=label)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        ax.legend(loc="best", fontsize=8)
        return _save(fig, path)


def verify_figure(path, rows) -> str:
    """Bar chart of measured value / threshold per check (log scale < 1 passes)."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(8.0, 0.42 * max(6, len(rows))))
        names = [r.name for r in rows]
        ratios = []
        colors = []
        for r in rows:
            if r.threshold and r.threshold > 0 and r.value is not None and r.value >= 0:
                ratios.append(max(r.value / r.threshold, 1e-18))
            else:
                ratios.append(1e-18 if r.passed else 10.0)
            colors.append("tab:green" if r.passed else "tab:red")
        y = np.arange(len(rows))
        ax.barh(y, ratios, color=colors)
        ax.set_yticks(y, names, fontsize=7)
        ax.set_xscale("log")
        ax.axvline(1.0, color="k", lw=1.0)
        ax.set_xlabel("measured / threshold (pass left of 1)")
        ax.invert_yaxis()
        fig.tight_layout()
        return _save(fig, path)


def adjoint_figure(path, times, p_norms, duality) -> str:
    with plt.rc_context(_STYLE):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.0, 3.6))
        ax1.plot(times, p_norms)
        ax1.set_xlabel("time")
        ax1.set_ylabel("mean costate V-norm")
        ax1.set_title("costate profile")
        labels = ["lhs running", "lhs terminal", "rhs"]
        vals = [duality.lhs_running, duality.lhs_terminal, duality.rhs]
        ax2.bar(labels, vals, color=["tab:blue", "tab:cyan", "tab:orange"])
        ax2.set_title(f"duality gap {duality.gap:.3e}")
        fig.tight_layout()
        return _save(fig, path)


def ensure_outdir(out_dir) -> Path:
    path = Path(out_dir)
    path.mkdir(parents=True, exist_ok=True)
    if not os.access(path, os.W_OK):
        raise PermissionError(f"output directory {path} is not writable")
    return path
