"""Report figures written next to the tabular outputs.

Everything renders through the Agg backend with fixed sizes and without
timestamped metadata, so the same inputs give byte-identical PNG files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "svg.hashsalt": "tunnelgp",
}
METHOD_STYLE = {"GMM": ("tab:blue", "o"), "mGMM": ("tab:orange", "s"), "TGP": ("tab:green", "^")}


def save(fig, path, dpi=120):
    fig.savefig(path, dpi=dpi, metadata={"Software": None})
    plt.close(fig)
    return path


def rmse_ladder(reports, path):
    """Aggregate RMSE against R, one panel per structure, one line per method."""
    structures = sorted({r.structure for r in reports})
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(structures), figsize=(3.2 * len(structures), 2.8), squeeze=False)
        for ax, s in zip(axes[0], structures):
            for method, (color, marker) in METHOD_STYLE.items():
                rows = sorted((r.R, r.aggregate_rmse) for r in reports if r.structure == s and r.method == method)
                if rows:
                    R, v = zip(*rows)
                    ax.plot(R, v, color=color, marker=marker, label=method)
            ax.set_xscale("log", base=2)
            ax.set_xlabel("R")
            ax.set_title(s)
        axes[0][0].set_ylabel("RMSE")
        axes[0][0].legend(frameon=False)
        fig.tight_layout()
        return save(fig, path)


def tunnel_sections(surface, path, n_sections=4):
    """Inner and outer boundaries at a few evenly spaced ``l`` rows of a mesh."""
    n_l, n_t = surface["shape"]
    rows = np.unique(np.linspace(0, n_l - 1, min(n_sections, n_l)).round().astype(int))
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(rows), figsize=(2.6 * len(rows), 2.6), squeeze=False)
        for ax, i in zip(axes[0], rows):
            sl = slice(i * n_t, (i + 1) * n_t)
            for name, color in (("inner", "tab:blue"), ("outer", "tab:red")):
                ax.plot(surface[f"x_{name}"][sl], surface[f"y_{name}"][sl], ".", ms=2, color=color, label=name)
            ax.set_aspect("equal", adjustable="datalim")
            ax.set_title(f"l = {surface['l'][i * n_t]:.3g}")
        axes[0][0].legend(frameon=False, markerscale=4)
        fig.tight_layout()
        return save(fig, path)


def conformance_trace(records, path, thresholds=(2.0, 3.0)):
    """Scores along a track with the alert bands drawn in."""
    recs = [r for r in records if not r.out_of_domain]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 2.8))
        if recs:
            l = np.array([r.l for r in recs])
            for key in ("p", "sx", "sy", "sh"):
                z = np.array([r.z.get(key, np.nan) for r in recs], dtype=float)
                if np.isfinite(z).any():
                    ax.plot(l, z, lw=1, label=f"z_{key}")
        for t in thresholds:
            ax.axhline(t, color="0.5", lw=0.6, ls="--")
            ax.axhline(-t, color="0.5", lw=0.6, ls="--")
        ax.set_xlabel("l")
        ax.set_ylabel("z")
        if recs:
            ax.legend(frameon=False, ncol=4)
        fig.tight_layout()
        return save(fig, path)
