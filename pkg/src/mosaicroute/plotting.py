"""Matplotlib figures written next to the CSV/JSON outputs.

All functions draw with the Agg backend and return the written path.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# PNG metadata would otherwise embed the matplotlib version
_SAVE = dict(dpi=120, bbox_inches="tight", metadata={"Software": None})

MODE_STYLE = {
    "profile": dict(color="tab:blue", marker="o", label="profile-aware"),
    "l1-baseline": dict(color="tab:red", marker="s", label="L1 only"),
    "global": dict(color="tab:green", marker="^", label="global DeepR"),
}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, **_SAVE)
    plt.close(fig)
    return path


def plot_occupancy(report, path, title: str = "") -> Path:
    """Load / capacity per lattice site; NTs show fan-in, routers show axon rows."""
    occ = report.occupancy
    cfg = occ.config
    w, h = cfg.lattice_shape
    util = np.full((h, w), np.nan)
    for y in range(h):
        for x in range(w):
            if x % 2 == 0 and y % 2 == 0:
                util[y, x] = occ.nt_fanin[(y // 2) * cfg.nt_cols + x // 2] / cfg.nt_input_size
            else:
                util[y, x] = occ.rt_load[y, x] / cfg.rt_size
    fig, ax = plt.subplots(figsize=(1.0 + 0.55 * w, 0.8 + 0.55 * h))
    im = ax.imshow(util, cmap="viridis", vmin=0, vmax=max(1.0, np.nanmax(util)), origin="upper")
    for v in report.violations:
        ax.add_patch(plt.Rectangle((v.tile.x - 0.5, v.tile.y - 0.5), 1, 1, fill=False,
                                   edgecolor="red", linewidth=2))
    ax.set_xticks(range(w))
    ax.set_yticks(range(h))
    ax.set_xlabel("lattice x")
    ax.set_ylabel("lattice y")
    verdict = "mappable" if report.mappable else f"{len(report.violations)} violations"
    ax.set_title(title or f"tile utilisation ({verdict})")
    fig.colorbar(im, ax=ax, label="load / capacity")
    return _save(fig, path)


def plot_estimate(rows, path) -> Path:
    """Mean and spread of the required tile size per profile and tile kind."""
    kinds = ["NT", "RT0", "RT1"]
    idx = sorted({r["profile_index"] for r in rows})
    fig, ax = plt.subplots(figsize=(max(4.0, 1.2 * len(idx) + 2), 3.2))
    width = 0.8 / len(kinds)
    for k, kind in enumerate(kinds):
        sel = [next(r for r in rows if r["profile_index"] == i and r["tile_kind"] == kind) for i in idx]
        xs = np.arange(len(idx)) + (k - 1) * width
        ax.bar(xs, [r["mean"] for r in sel], width, yerr=[r["std"] for r in sel], label=kind,
               capsize=3)
    caps = {r["tile_kind"]: r["capacity"] for r in rows}
    ax.axhline(caps.get("NT", np.nan), color="k", ls="--", lw=0.8, label="NT capacity")
    ax.axhline(caps.get("RT0", np.nan), color="gray", ls=":", lw=0.8, label="RT capacity")
    ax.set_xticks(np.arange(len(idx)))
    ax.set_xticklabels([f"P{i}" for i in idx])
    ax.set_ylabel("required input rows")
    ax.set_title("minimum tile size per target profile")
    ax.legend(fontsize=7, ncol=2)
    return _save(fig, path)


def plot_sweep(rows, path) -> Path:
    """Mean test accuracy over the (p_1, p_3) grid, std in each cell."""
    p1 = sorted({r["p1"] for r in rows})
    p3 = sorted({r["p3"] for r in rows})
    acc = np.full((len(p3), len(p1)), np.nan)
    std = np.full_like(acc, np.nan)
    for r in rows:
        i, j = p3.index(r["p3"]), p1.index(r["p1"])
        acc[i, j], std[i, j] = r["acc_mean"], r["acc_std"]
    fig, ax = plt.subplots(figsize=(1.5 + 1.1 * len(p1), 1.2 + 0.9 * len(p3)))
    im = ax.imshow(100 * acc, cmap="magma", origin="lower", aspect="auto")
    for i in range(len(p3)):
        for j in range(len(p1)):
            if np.isfinite(acc[i, j]):
                ax.text(j, i, f"{100 * acc[i, j]:.1f}\n±{100 * std[i, j]:.1f}", ha="center",
                        va="center", fontsize=7, color="w" if acc[i, j] < np.nanmax(acc) else "k")
    ax.set_xticks(range(len(p1)))
    ax.set_xticklabels([f"{v:g}" for v in p1])
    ax.set_yticks(range(len(p3)))
    ax.set_yticklabels([f"{v:g}" for v in p3])
    ax.set_xlabel("$p_1$")
    ax.set_ylabel("$p_3$")
    ax.set_title("test accuracy (%)")
    fig.colorbar(im, ax=ax)
    return _save(fig, path)


def plot_accuracy_vs_memory(rows, path) -> Path:
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    for mode in sorted({r["mode"] for r in rows}):
        sel = sorted((r for r in rows if r["mode"] == mode), key=lambda r: r["memory_mean"])
        style = MODE_STYLE.get(mode, dict(label=mode))
        ax.errorbar([r["memory_mean"] for r in sel], [100 * r["acc_mean"] for r in sel],
                    yerr=[100 * r["acc_std"] for r in sel], capsize=3, lw=1, **style)
    mem = [r["memory_mean"] for r in rows if r["memory_mean"] > 0]
    if mem and max(mem) > 3 * min(mem):
        ax.set_xscale("log")
    elif mem:
        # matched memories sit close together; show them on a +-10% window at least
        lo, hi = min(mem), max(mem)
        pad = max(0.3 * (hi - lo), 0.1 * (lo + hi) / 2)
        ax.set_xlim(lo - pad, hi + pad)
    ax.set_xlabel("memory elements (occupied input rows)")
    ax.set_ylabel("test accuracy (%)")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_training(logs: dict, path) -> Path:
    """Test accuracy per epoch, one line per seed."""
    fig, ax = plt.subplots(figsize=(4.5, 3.0))
    for seed, rows in sorted(logs.items()):
        ax.plot([int(r["epoch"]) for r in rows], [100 * float(r["test_acc"]) for r in rows],
                lw=1, label=f"seed {seed}")
    ax.set_xlabel("epoch")
    ax.set_ylabel("test accuracy (%)")
    if len(logs) <= 10:
        ax.legend(fontsize=7)
    ax.grid(alpha=0.3)
    return _save(fig, path)
