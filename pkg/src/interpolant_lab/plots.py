"""Static figures rendered next to the CSV output.

All figures are pure views of already-computed rows; emitting them never
changes the numbers that go into the CSV.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_STYLES = {"euler": dict(color="tab:blue", marker="o"),
           "heun": dict(color="tab:red", marker="s")}


def _style(name: str) -> dict:
    return _STYLES.get(name, dict(marker="^"))


def convergence_figure(rows, fits, path: str | Path, title: str = "") -> None:
    """Log-log TV vs h, one series per integrator, fitted slope annotated."""
    fig, ax = plt.subplots(figsize=(5.0, 3.8))
    for name in sorted({r.integrator for r in rows}):
        sub = sorted((r for r in rows if r.integrator == name), key=lambda r: r.h)
        h = np.array([r.h for r in sub])
        tv = np.array([r.tv for r in sub])
        err = np.array([r.tv_stderr for r in sub])
        fit = fits.get(name)
        label = name if fit is None else f"{name} (slope {fit.slope:.2f})"
        ax.errorbar(h, np.maximum(tv, 1e-300), yerr=err, label=label,
                    linestyle="-", **_style(name))
        if fit is not None:
            hh = np.array([h.min(), h.max()])
            ax.plot(hh, np.exp(fit.intercept) * hh**fit.slope,
                    linestyle="--", alpha=0.5, color=_style(name).get("color"))
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("step scale h")
    ax.set_ylabel("TV error")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8)
    ax.grid(True, which="both", alpha=0.3)
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)


def dim_sweep_figure(rows, fits, path: str | Path, title: str = "") -> None:
    """Log-log TV vs dimension at fixed h, growth exponent annotated."""
    fig, ax = plt.subplots(figsize=(5.0, 3.8))
    for name in sorted({r.integrator for r in rows}):
        sub = sorted((r for r in rows if r.integrator == name), key=lambda r: r.d)
        d = np.array([r.d for r in sub])
        tv = np.array([r.tv for r in sub])
        err = np.array([r.tv_stderr for r in sub])
        fit = fits.get(name)
        label = name if fit is None else f"{name} (TV ~ d^{fit.slope:.2f})"
        ax.errorbar(d, np.maximum(tv, 1e-300), yerr=err, label=label,
                    linestyle="-", **_style(name))
    ax.set_xscale("log", base=2)
    ax.set_yscale("log")
    ax.set_xlabel("dimension d")
    ax.set_ylabel("TV error")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8)
    ax.grid(True, which="both", alpha=0.3)
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)


def sample_figure(pushed: np.ndarray, target: np.ndarray, path: str | Path,
                  title: str = "") -> None:
    """Side-by-side view of pushed vs exact terminal samples (1-d or 2-d)."""
    d = pushed.shape[1]
    fig, ax = plt.subplots(figsize=(5.0, 3.8))
    if d == 1:
        bins = np.histogram_bin_edges(target[:, 0], bins=80)
        ax.hist(target[:, 0], bins=bins, density=True, alpha=0.45,
                label="exact", color="tab:gray")
        ax.hist(pushed[:, 0], bins=bins, density=True, alpha=0.45,
                label="pushed", color="tab:blue")
        ax.set_xlabel("x")
        ax.set_ylabel("density")
    else:
        m = min(len(pushed), len(target), 4000)
        ax.scatter(target[:m, 0], target[:m, 1], s=3, alpha=0.3,
                   label="exact", color="tab:gray")
        ax.scatter(pushed[:m, 0], pushed[:m, 1], s=3, alpha=0.3,
                   label="pushed", color="tab:blue")
        ax.set_xlabel("x1")
        ax.set_ylabel("x2")
        ax.set_aspect("equal", adjustable="datalim")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8)
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)
