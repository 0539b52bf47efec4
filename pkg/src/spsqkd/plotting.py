"""Optional matplotlib figures written next to the CSV/JSON outputs.

matplotlib is only imported when a figure is requested; install the
``plot`` extra to enable it.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np


def _pyplot():
    try:
        import matplotlib
    except ImportError:
        return None
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def available() -> bool:
    try:
        import matplotlib  # noqa: F401
    except ImportError:
        return False
    return True


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.stem}.tmp{path.suffix}")
    fig.savefig(tmp, dpi=150, bbox_inches="tight")
    tmp.replace(path)
    return path


def plot_sweep(rows, path):
    """K versus d on a log axis, one trace per repetition rate."""
    plt = _pyplot()
    if plt is None:
        return None
    rows = np.asarray(rows, dtype=float)
    fig, ax = plt.subplots(figsize=(6, 4))
    for r_s in np.unique(rows[:, 1]):
        sel = (rows[:, 1] == r_s) & (rows[:, 7] > 0)
        ax.semilogy(rows[sel, 0], rows[sel, 7], label=f"$R_s$ = {r_s / 1e6:g} MHz")
    ax.set_xlabel("fibre length d (km)")
    ax.set_ylabel("secret key rate K (bits/s)")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(frameon=False)
    out = _save(fig, path)
    plt.close(fig)
    return out


def plot_g2(hist, fit, path):
    plt = _pyplot()
    if plt is None:
        return None
    from .photophysics import lorentzian
    t = hist.bin_centers
    model = np.full_like(t, fit.baseline)
    for p in fit.peaks:
        model += lorentzian(t, p.amplitude, p.half_width, p.center)
    norm = np.mean([p.amplitude for p in fit.peaks if p.order != 0]) or 1.0
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.plot(t, hist.counts / norm, ".", ms=2, color="0.4", label="data")
    ax.plot(t, model / norm, "-", lw=1, color="C0", label="Lorentzian comb")
    ax.set_xlabel(r"delay $\tau$ (ns)")
    ax.set_ylabel(r"$g^{(2)}(\tau)$ (norm.)")
    ax.set_title(rf"$g^{{(2)}}(0)$ = {fit.g2_zero:.3f} $\pm$ {fit.g2_uncertainty:.3f}")
    ax.legend(frameon=False)
    out = _save(fig, path)
    plt.close(fig)
    return out


def plot_saturation(datasets, fits, labels, path):
    plt = _pyplot()
    if plt is None:
        return None
    fig, ax = plt.subplots(figsize=(5, 4))
    for i, (data, fit, label) in enumerate(zip(datasets, fits, labels)):
        pp = np.linspace(0, data.powers.max(), 200)
        ax.plot(data.powers, data.rates, "o", ms=4, color=f"C{i}", label=label)
        ax.plot(pp, fit.model(pp), "-", color=f"C{i}")
    ax.set_xlabel(r"excitation power ($\mu$W)")
    ax.set_ylabel("count rate (counts/s)")
    ax.legend(frameon=False)
    out = _save(fig, path)
    plt.close(fig)
    return out


def plot_stability(trace, report, path):
    plt = _pyplot()
    if plt is None:
        return None
    fig, ax = plt.subplots(figsize=(7, 3))
    ax.plot(trace.timestamps / 3600.0, trace.intensities, lw=0.5, color="C0")
    ax.axhline(report.mean, color="k", lw=0.8)
    for k in (1 - report.threshold, 1 + report.threshold):
        ax.axhline(report.mean * k, color="C3", lw=0.6, ls="--")
    ax.set_xlabel("time (h)")
    ax.set_ylabel("PL intensity (counts/s)")
    ax.set_ylim(bottom=0)
    out = _save(fig, path)
    plt.close(fig)
    return out
