"""Matplotlib figures written next to the CSV/JSON outputs of a run."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    # fixed metadata keeps repeated renders byte-stable
    fig.savefig(path, dpi=110, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_wall_encounters(encounters, wall: tuple[float, float], path: Path) -> Path:
    """Trajectories of charges fired at a wall occupying [x0, x0 + w]."""
    fig, ax = plt.subplots(figsize=(6, 4))
    x0, w = wall
    if w > 0:
        ax.axvspan(x0, x0 + w, color="tab:blue", alpha=0.15, label="field")
    else:
        ax.axvline(x0, color="tab:blue", lw=2, label="sheet")
    for enc in encounters:
        s = enc.trajectory.states
        ax.plot(s[:, 0], s[:, 1], color="tab:red" if enc.reflected else "tab:green", lw=0.8)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_title("red: reflected, green: crossed")
    ax.legend(loc="upper right")
    return _save(fig, path)


def plot_trajectory(traj, path: Path, walls=(), channel=None) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for xw in walls:
        ax.axvline(xw, color="tab:blue", lw=1)
    if channel is not None:
        for yw in channel:
            ax.axhline(yw, color="k", lw=1)
    ax.plot(traj.states[:, 0], traj.states[:, 1], lw=0.6)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    return _save(fig, path)


def plot_transmission(k, T, T_oracle, threshold, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(5.5, 4))
    kk = np.linspace(0, max(k) * 1.1, 400)
    ax.plot(kk, T_oracle(kk), "k-", lw=1, label="step oracle")
    ax.plot(k, T, "o", label="lattice")
    ax.axvline(threshold, color="gray", ls="--", lw=0.8, label="|q phi_B|")
    ax.set_xlabel("k_x")
    ax.set_ylabel("transmission")
    ax.legend()
    return _save(fig, path)


def plot_density(psi, grid, path: Path, title: str = "", marks=()) -> Path:
    fig, ax = plt.subplots(figsize=(7, 2.6))
    x_lo, x_hi, y_lo, y_hi = grid.extent
    ax.imshow(np.abs(psi.T) ** 2, origin="lower", extent=(x_lo, x_hi, y_lo, y_hi), aspect="auto",
              cmap="magma")
    for x, y in marks:
        ax.plot(x, y, "c+", ms=8)
    ax.set_title(title)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    return _save(fig, path)


def plot_diffraction(spectra: dict, comb, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    for i, (label, spec) in enumerate(spectra.items()):
        off = 0.12 * spec.bin_width * (i - 0.5 * (len(spectra) - 1))
        ax.bar(spec.dp + off, spec.weight, width=0.2 * spec.bin_width, label=label)
    for c in comb:
        ax.axvline(c, color="gray", lw=0.5, ls=":")
    ax.set_xlabel("transverse momentum transfer")
    ax.set_ylabel("probability")
    ax.legend()
    return _save(fig, path)


def plot_levels(eigenvalues, reference, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ax.plot(np.arange(len(eigenvalues)), eigenvalues, ".", ms=4)
    for e in reference:
        ax.axhline(e, color="gray", lw=0.8, ls="--")
    ax.set_xlabel("index")
    ax.set_ylabel("energy")
    return _save(fig, path)


def plot_emergence(report, path: Path) -> Path:
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 4))
    ax1.plot(report.r[:, 0], report.r[:, 1], lw=1, label="<r>(t)")
    if report.fitted_radius is not None:
        th = np.linspace(0, 2 * np.pi, 200)
        cx, cy = report.fitted_center
        ax1.plot(cx + report.fitted_radius * np.cos(th), cy + report.fitted_radius * np.sin(th),
                 "k--", lw=0.8, label="fit")
    ax1.set_aspect("equal")
    ax1.legend()
    ax1.set_xlabel("x")
    ax1.set_ylabel("y")
    for c, name in ((0, "x"), (1, "y")):
        ax2.plot(report.t_mid, report.force[:, c], label=f"d<p_{name}>/dt")
        ax2.plot(report.t_mid, report.lorentz[:, c], "--", label=f"q(<v> x B)_{name}")
    ax2.set_xlabel("t")
    ax2.legend(fontsize=8)
    return _save(fig, path)
