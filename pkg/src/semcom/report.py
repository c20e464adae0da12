"""Figure rendering for sweep outputs.

Figures are a convenience layer next to the CSV records; the CSV stays
the canonical, byte-reproducible artifact. All plots use the Agg backend
and write PNG files.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .harness import RunRecord  # noqa: E402

_SCHEME_STYLE = {
    "jscc_coop": ("tab:blue", "o", "learned, cooperative"),
    "jscc_single": ("tab:orange", "s", "learned, single user"),
    "jscc_voting": ("tab:green", "^", "local vote"),
    "digital_baseline": ("tab:red", "x", "codec+FEC+QPSK"),
}


def _series(records: list[RunRecord], scheme: str, metric: str):
    """Mean metric per SNR across seeds."""
    by_snr: dict[float, list[float]] = {}
    for r in records:
        if r.scheme == scheme and r.metric == metric:
            by_snr.setdefault(r.snr_db, []).append(r.value)
    snrs = sorted(by_snr)
    return snrs, [sum(by_snr[s]) / len(by_snr[s]) for s in snrs]


def _plot_metric(ax, records, metric, ylabel):
    for scheme, (color, marker, label) in _SCHEME_STYLE.items():
        snrs, vals = _series(records, scheme, metric)
        if snrs:
            ax.plot(snrs, vals, color=color, marker=marker, label=label)
    ax.set_xlabel("SNR (dB, per complex symbol)")
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)


def plot_classification(records: list[RunRecord], path) -> Path:
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.6))
    _plot_metric(axes[0], records, "f1_weighted", "weighted F1")
    _plot_metric(axes[1], records, "accuracy", "accuracy")
    axes[0].set_ylim(0, 1.02)
    axes[1].set_ylim(0, 1.02)
    fig.suptitle("Multi-user target classification vs channel SNR")
    fig.tight_layout()
    return _save(fig, path)


def plot_detection(records: list[RunRecord], path) -> Path:
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.6))
    for ax, metric, label in ((axes[0], "recall", "recall"),
                              (axes[1], "ap50", "AP@0.5")):
        for scheme, nice in (("jscc_coop", "composed 3-view"),
                             ("jscc_single", "best single view")):
            snrs, vals = _series(records, scheme, metric)
            if snrs:
                ax.plot(snrs, vals, marker="o", label=nice)
        ax.set_xlabel("SNR (dB)")
        ax.set_ylabel(label)
        ax.set_ylim(0, 1.02)
        ax.grid(True, alpha=0.3)
        ax.legend(fontsize=8)
    fig.suptitle("Multi-view detection gain from composed perspectives")
    fig.tight_layout()
    return _save(fig, path)


def plot_bench(records: list[RunRecord], path) -> Path:
    fig, ax = plt.subplots(figsize=(4.5, 3.4))
    labels, values = [], []
    for r in records:
        if r.metric == "wall_ms":
            labels.append(_SCHEME_STYLE.get(r.scheme, (None, None, r.scheme))[2])
            values.append(r.value)
    ax.bar(labels, values, color=["tab:blue", "tab:red"][: len(labels)])
    ax.set_ylabel("median per-image encode+decode (ms)")
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)


def plot_history(history: dict[str, list[float]], path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.4))
    for phase in sorted(history):
        ax.plot(history[phase], label=phase)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss")
    ax.set_yscale("log")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path
