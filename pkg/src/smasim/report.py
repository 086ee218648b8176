"""Matplotlib figures rendered next to the trace CSV."""

from __future__ import annotations

import pathlib

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

__all__ = ["render_figures"]


def render_figures(rows, outdir):
    """Render the standard run report from trace rows.

    Writes energies.png, dissipation.png and certificates.png into
    outdir and returns the paths.
    """
    outdir = pathlib.Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    t = [r["t"] for r in rows]
    paths = []

    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for key, label in (("E_bulk", "bulk"), ("E_int", "interface"),
                       ("W_ext", "external work"), ("E_spring", "spring"),
                       ("E_total", "total")):
        ax.plot(t, [r[key] for r in rows], marker="o", ms=3, label=label)
    ax.set_xlabel("time")
    ax.set_ylabel("energy")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    p = outdir / "energies.png"
    fig.savefig(p, dpi=150)
    plt.close(fig)
    paths.append(p)

    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    if len(t) > 1:
        width = 0.6 * min(b - a for a, b in zip(t, t[1:]))
    else:
        width = 0.1
    ax.bar(t, [r["D_step"] for r in rows], width=width, alpha=0.5,
           label="step dissipation")
    ax.plot(t, [r["Diss_cum"] for r in rows], color="k", marker="o", ms=3,
            label="cumulative")
    ax.set_xlabel("time")
    ax.set_ylabel("dissipation")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    p = outdir / "dissipation.png"
    fig.savefig(p, dpi=150)
    plt.close(fig)
    paths.append(p)

    fig, axes = plt.subplots(3, 1, figsize=(6.4, 7.5), sharex=True)
    steps = rows[1:]
    ts = [r["t"] for r in steps]
    if steps:
        value = [cur["E_total"] + cur["D_step"] - prev["E_total"]
                 for prev, cur in zip(rows, steps)]
        axes[0].fill_between(ts, [r["lower_2sided"] for r in steps],
                             [r["upper_2sided"] for r in steps],
                             alpha=0.3, label="work-integral bracket")
        axes[0].plot(ts, value, "ko-", ms=3, label="energy change + dissipation")
    axes[0].set_ylabel("two-sided bound")
    axes[0].legend(fontsize=8)
    axes[0].grid(alpha=0.3)
    axes[1].plot(t, [r["balance_residual"] for r in rows], "o-", ms=3)
    axes[1].set_ylabel("balance residual")
    axes[1].grid(alpha=0.3)
    axes[2].plot(t, [r["min_detF"] for r in rows], "o-", ms=3)
    axes[2].axhline(0.0, color="r", lw=0.8)
    axes[2].set_ylabel("min det F")
    axes[2].set_xlabel("time")
    axes[2].grid(alpha=0.3)
    fig.tight_layout()
    p = outdir / "certificates.png"
    fig.savefig(p, dpi=150)
    plt.close(fig)
    paths.append(p)

    return paths
