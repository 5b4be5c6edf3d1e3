"""CSV and SVG outputs of a run log.

Every CSV starts with a ``t[s]`` column; the remaining headers carry their
unit in brackets and use 1-based robot labels, e.g. ``x_3[m]`` or
``k_1_4[-]`` for the gain of edge (1, 4).
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .simulate import RunLog

FMT = "%.17g"


def _fmt(v) -> str:
    v = float(v)
    if math.isnan(v):
        return "nan"
    return FMT % v


def signal_groups(log: RunLog) -> dict:
    """Column headers and (T, C) data for every CSV group present in the log."""
    n = log.n
    R = range(1, n + 1)
    lab = [f"{i + 1}_{j + 1}" for i, j in log.edges]
    groups = {}
    st = log.states.reshape(len(log.t), -1)
    groups["states"] = ([h for i in R for h in (f"x_{i}[m]", f"y_{i}[m]", f"theta_{i}[rad]")], st)
    groups["gains"] = ([f"k_{e}[-]" for e in lab], log.gains)
    cost = np.column_stack([log.F_robot, log.F, log.V, log.Vdot])
    groups["costs"] = ([f"F_{i}[m2/s2]" for i in R] + ["F[m2/s2]", "V[-]", "Vdot[1/s]"], cost)
    groups["distances"] = ([f"d_{i + 1}_{j + 1}[m]" for i, j in log.pairs], log.distances)
    if log.e is not None:
        T = len(log.t)
        data = np.column_stack(
            [
                log.e.reshape(T, -1),
                np.linalg.norm(log.e, axis=2),
                log.p_hat.reshape(T, -1),
                log.delta_hat.reshape(T, -1),
            ]
        )
        head = (
            [h for i in R for h in (f"ex_{i}[m]", f"ey_{i}[m]")]
            + [f"norm_e_{i}[m]" for i in R]
            + [h for i in R for h in (f"phat_x_{i}[m]", f"phat_y_{i}[m]")]
            + [h for i in R for h in (f"dhat_x_{i}[m]", f"dhat_y_{i}[m]")]
        )
        groups["observer"] = (head, data)
    if log.pe_min is not None:
        data = np.column_stack([log.pe_min, log.pe_max, log.rls_residual])
        head = [f"pe_min_{i}[-]" for i in R] + [f"pe_max_{i}[-]" for i in R] + [f"rls_residual_{i}[-]" for i in R]
        groups["learning"] = (head, data)
    return groups


def write_csv(path, t, header, data, stride: int = 1):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t[s]", *header])
        for r in range(0, len(t), stride):
            w.writerow([_fmt(t[r]), *(_fmt(v) for v in data[r])])


def read_csv(path):
    """Inverse of ``write_csv``: ``(header, array)`` including the time column."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array([[float(v) for v in r] for r in rows[1:]])


def _plots(log: RunLog, out: Path, groups: dict) -> list:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    # text as text keeps labels searchable; fixed salt and no date keep files reproducible
    plt.rcParams.update({"svg.fonttype": "none", "svg.hashsalt": "fovtopo"})
    t = log.t
    written = []

    def save(fig, name):
        path = out / f"{name}.svg"
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        written.append(path)

    def lines(ax, data, labels, ylabel):
        for c, lab in enumerate(labels):
            ax.plot(t, data[:, c], lw=1, label=lab)
        ax.set_xlabel("time [s]")
        ax.set_ylabel(ylabel)
        ax.legend(fontsize=7, ncol=2)
        ax.grid(alpha=0.3)

    edge_lab = [f"k{i + 1}{j + 1}" for i, j in log.edges]
    fig, ax = plt.subplots(figsize=(7, 4))
    lines(ax, log.gains, edge_lab, "gain")
    save(fig, "gains")

    fig, ax = plt.subplots(figsize=(7, 4))
    lines(ax, np.column_stack([log.F_robot, log.F]), [f"F{i + 1}" for i in range(log.n)] + ["F"], "deviation cost")
    save(fig, "costs")

    fig, ax = plt.subplots(figsize=(7, 4))
    lines(ax, log.distances, [f"d{i + 1}{j + 1}" for i, j in log.pairs], "distance [m]")
    save(fig, "distances")

    fig, ax = plt.subplots(figsize=(5, 5))
    for i in range(log.n):
        ax.plot(log.states[:, i, 0], log.states[:, i, 1], lw=1, label=f"robot {i + 1}")
    ax.set_aspect("equal", "datalim")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.legend(fontsize=7)
    save(fig, "trajectories")

    if log.e is not None:
        fig, ax = plt.subplots(figsize=(7, 4))
        lines(ax, np.linalg.norm(log.e, axis=2), [f"e{i + 1}" for i in range(log.n)], "observer error [m]")
        save(fig, "errors")
    if log.pe_min is not None:
        robots = [i for i in range(log.n) if not np.all(np.isnan(log.pe_min[:, i]))]
        fig, ax = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
        for i in robots:
            ax[0].plot(t, log.pe_min[:, i], lw=1, label=f"min {i + 1}")
            ax[0].plot(t, log.pe_max[:, i], lw=1, ls="--", label=f"max {i + 1}")
            ax[1].plot(t, log.rls_residual[:, i], lw=1, label=f"robot {i + 1}")
        ax[0].set_ylabel("PE eigenvalues")
        ax[1].set_ylabel("RLS residual")
        ax[1].set_xlabel("time [s]")
        for a in ax:
            a.legend(fontsize=7, ncol=3)
            a.grid(alpha=0.3)
        save(fig, "pe")
    return written


def emit_outputs(log: RunLog, out_dir, formats=("csv", "svg"), stride: int = 1) -> list:
    """Write CSV groups, ``metadata.json``/``events.json`` and (optionally) SVG plots."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc.strerror}") from exc
    written = []
    groups = signal_groups(log)
    if "csv" in formats:
        for name, (head, data) in groups.items():
            path = out / f"{name}.csv"
            write_csv(path, log.t, head, data, stride)
            written.append(path)
    meta = dict(log.metadata)
    meta["complete"] = log.complete
    meta["error"] = log.error
    meta["steps"] = int(len(log.t))
    meta["csv_stride"] = stride
    for name, obj in (("metadata", meta), ("events", log.events)):
        path = out / f"{name}.json"
        path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
        written.append(path)
    if "svg" in formats and len(log.t):
        written += _plots(log, out, groups)
    return written
