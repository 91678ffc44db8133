"""Figures for the CLI report paths (matplotlib, non-interactive backend)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from ._io import atomic_path  # noqa: E402


def _save(fig, path) -> None:
    try:
        meta = {"Software": None} if str(path).lower().endswith(".png") else None
        with atomic_path(path) as tmp:
            fig.savefig(tmp, dpi=120, bbox_inches="tight", metadata=meta)
    finally:
        plt.close(fig)


def plot_metrics(rows: list[dict], path, title: str = "") -> None:
    """chi metrics against the process count (log2 axis)."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    nps = [r["N_p"] for r in rows]
    for key, style in (("chi1", "o-"), ("chi2", "s--"), ("chi3", "^:")):
        ax.plot(nps, [r[key] for r in rows], style, label=key)
    ax.set_xscale("log", base=2)
    ax.set_xlabel("N_p")
    ax.set_ylabel("communication metric")
    ax.set_title(title)
    ax.legend()
    ax.grid(alpha=0.3)
    _save(fig, path)


def plot_model(rows: list[dict], path, title: str = "") -> None:
    """Inverse filter-iteration time against N_p with the perfect-scaling line."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    nps = [r["N_p"] for r in rows]
    inv = [1.0 / r["T"] for r in rows]
    ax.plot(nps, inv, "o-", label="model")
    base = inv[0] / nps[0]
    ax.plot(nps, [base * n for n in nps], "k--", lw=0.8, label="perfect scaling")
    ax.set_xscale("log", base=2)
    ax.set_yscale("log")
    ax.set_xlabel("N_p")
    ax.set_ylabel("1/T [1/s]")
    ax.set_title(title)
    ax.legend()
    ax.grid(alpha=0.3)
    _save(fig, path)


def plot_plan(rows: list[dict], degrees: list[int], path, title: str = "") -> None:
    """Amortized speedup S(n) per panel shape."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for r in rows:
        ax.plot(degrees, [r["S"][n] for n in degrees], "o-", label=f"N_col={r['N_col']}")
    ax.axhline(1.0, color="k", lw=0.8)
    ax.set_xlabel("filter degree n")
    ax.set_ylabel("speedup S")
    ax.set_title(title)
    ax.legend(fontsize="small")
    ax.grid(alpha=0.3)
    _save(fig, path)


def plot_fd(report: dict, path, title: str = "") -> None:
    """Filter degree per iteration and final Ritz residuals."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3.2))
    hist = report["history"]
    ax1.plot([h["iteration"] for h in hist], [h["degree"] for h in hist], "o-")
    ax1.set_xlabel("iteration")
    ax1.set_ylabel("degree n")
    ax2.semilogy(report["eigenvalues"], [max(r, 1e-17) for r in report["residuals"]], "o")
    ax2.set_xlabel("eigenvalue")
    ax2.set_ylabel("residual")
    fig.suptitle(title)
    for ax in (ax1, ax2):
        ax.grid(alpha=0.3)
    _save(fig, path)
