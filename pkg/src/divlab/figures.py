"""Errorbar figures for experiment sweeps, rendered alongside the CSV.

Figures are a display convenience; the CSV stays the artifact of record.
PNG metadata is stripped so rendering the same rows twice produces identical
bytes.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .experiments import ResultRow


def _numeric(value: str) -> float:
    try:
        return float(value)
    except ValueError:
        return float(value.split("/")[0])


def render_rows(rows: list[ResultRow], path: str | Path, title: str = "") -> None:
    """One errorbar chart: swept value on x, mean MSE with std bars on y.

    Experiment (a) rows encode two swept values as "n_so/n_ta"; they are
    split into one series per n_ta.  Baseline rows render as dashed lines.
    """
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    transfer = [r for r in rows if not r.baseline]
    baselines = [r for r in rows if r.baseline]

    if transfer and "/" in transfer[0].value:
        by_second: dict[str, list[ResultRow]] = {}
        for row in transfer:
            by_second.setdefault(row.value.split("/")[1], []).append(row)
        for second, group in sorted(by_second.items(), key=lambda kv: float(kv[0])):
            xs = [_numeric(r.value) for r in group]
            ax.errorbar(xs, [r.mean for r in group], yerr=[r.std for r in group],
                        marker="o", capsize=3, label=f"n_ta={second}")
        ax.set_xscale("log")
        ax.set_xlabel(transfer[0].param.split("/")[0])
        for row in baselines:
            second = row.value.split("/")[1]
            ax.axhline(row.mean, linestyle="--", linewidth=1,
                       label=f"baseline n_ta={second}")
    else:
        if transfer:
            xs = [_numeric(r.value) for r in transfer]
            ax.errorbar(xs, [r.mean for r in transfer],
                        yerr=[r.std for r in transfer],
                        marker="o", capsize=3, label="transfer")
            ax.set_xlabel(transfer[0].param)
        for row in baselines:
            ax.axhline(row.mean, linestyle="--", linewidth=1, label="baseline")

    ax.set_ylabel("mean MSE")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
