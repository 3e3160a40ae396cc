"""Static SVG charts. Output bytes are deterministic: fixed hash salt, no date stamp."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .standards import BHS_THRESHOLDS, MEASURES  # noqa: E402

_RC = {"svg.hashsalt": "vitalconv", "svg.fonttype": "none", "font.size": 9}


def _save(fig, path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)


def similarity_chart(rows: dict[str, tuple[float, float, str]], path) -> None:
    """Bar chart of MAE per direction, one panel per unit (normalized vs mmHg)."""
    with plt.rc_context(_RC):
        units = sorted({u for _, _, u in rows.values()})
        fig, axes = plt.subplots(1, len(units), figsize=(4 * len(units), 3), squeeze=False)
        for ax, unit in zip(axes[0], units):
            names = [k for k, v in rows.items() if v[2] == unit]
            means = [rows[k][0] for k in names]
            sds = [rows[k][1] for k in names]
            ax.bar(range(len(names)), means, yerr=sds, color="#4c72b0", capsize=3)
            ax.set_xticks(range(len(names)), names, rotation=30, ha="right")
            ax.set_ylabel(f"MAE ({unit})")
        fig.tight_layout()
        _save(fig, path)


def bhs_chart(rows: dict, path) -> None:
    """Cumulative |error| percentages within 5/10/15 mmHg per measure, grade-A lines dashed."""
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(1, len(rows), figsize=(4 * len(rows), 3), squeeze=False)
        width = 0.25
        for ax, (name, res) in zip(axes[0], rows.items()):
            x = np.arange(len(MEASURES))
            for k, lim in enumerate((5, 10, 15)):
                ax.bar(x + (k - 1) * width, [res.cumulative[m][k] for m in MEASURES], width, label=f"<= {lim} mmHg")
                ax.axhline(BHS_THRESHOLDS["A"][k], color="grey", lw=0.6, ls="--")
            ax.set_xticks(x, [f"{m} ({res.grades[m]})" for m in MEASURES])
            ax.set_ylim(0, 100)
            ax.set_title(f"{name}: overall {res.overall}")
            ax.set_ylabel("cumulative %")
        axes[0][0].legend(loc="lower right", fontsize=7)
        fig.tight_layout()
        _save(fig, path)


def comparison_chart(table: dict[str, dict[str, tuple[float, float]]], path, ylabel: str = "MAE") -> None:
    """Grouped bars: rows are categories, inner keys the compared variants (mean, sd)."""
    with plt.rc_context(_RC):
        cats = list(table)
        variants = list(next(iter(table.values())))
        width = 0.8 / len(variants)
        fig, ax = plt.subplots(figsize=(max(4, 1.2 * len(cats)), 3))
        for k, var in enumerate(variants):
            vals = [table[c].get(var, (np.nan, 0.0)) for c in cats]
            ax.bar(np.arange(len(cats)) + (k - (len(variants) - 1) / 2) * width, [v[0] for v in vals], width,
                   yerr=[v[1] for v in vals], capsize=2, label=var)
        ax.set_xticks(range(len(cats)), cats, rotation=30, ha="right")
        ax.set_ylabel(ylabel)
        ax.legend(fontsize=7)
        fig.tight_layout()
        _save(fig, path)
