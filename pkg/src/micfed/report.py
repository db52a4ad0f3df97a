"""Render a finished batch into tables, delimited files, and figures.

Works purely from the JSON documents a run writes, so reports can be
regenerated or shipped without the original audio or model.  Figures are
written with the Agg backend and stripped metadata; rerendering an
unchanged results directory reproduces identical files.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

FIGURE_DPI = 120


class EmptyResultsError(RuntimeError):
    """Results directory holds no scenario outcomes."""


def load_results(results_dir):
    """(summary dict, outcome dicts ascending by seed) from a results dir."""
    results_dir = Path(results_dir)
    summary_path = results_dir / "summary.json"
    if not summary_path.exists():
        raise EmptyResultsError(f"no summary.json under {results_dir}")
    with open(summary_path) as fh:
        summary = json.load(fh)
    outcomes = []
    for path in sorted(results_dir.glob("result_*.json")):
        with open(path) as fh:
            outcomes.append(json.load(fh))
    if not outcomes:
        raise EmptyResultsError(f"no scenario outcomes under {results_dir}")
    outcomes.sort(key=lambda doc: doc["seed"])
    return summary, outcomes


def format_distance_table(summary: dict) -> str:
    """Two-by-two mean normalized distance block, clusters by dominant source."""
    matrix = np.asarray(summary["distance"]["matrix"], dtype=np.float64)
    counts = summary["distance"]["counts"]
    lines = ["Normalized cluster-to-source distance (mean over split scenarios)",
             f"{'':>12}{'source 1':>12}{'source 2':>12}{'scenarios':>12}"]
    for ci in range(2):
        cells = [f"{matrix[ci, sj]:12.3f}" if np.isfinite(matrix[ci, sj])
                 else f"{'-':>12}" for sj in range(2)]
        lines.append(f"{f'cluster {ci + 1}':>12}" + "".join(cells)
                     + f"{counts[ci][0]:>12}")
    lines.append(f"mean own {summary['distance']['own']:.3f}, "
                 f"mean opposing {summary['distance']['opposing']:.3f}")
    return "\n".join(lines)


_FUSION_ORDER = ("plain", "mv@0", "mv@0.5", "mv@0.9")


def _fusion_rows(summary: dict):
    rows = []
    seen = set()
    for mode in _FUSION_ORDER:
        if mode in summary["fusion"]:
            rows.append((mode, summary["fusion"][mode]))
            seen.add(mode)
    for mode in sorted(summary["fusion"]):
        if mode not in seen:
            rows.append((mode, summary["fusion"][mode]))
    return rows


def format_fusion_table(summary: dict) -> str:
    """Per-mode macro accuracy / F1 grid for the downstream fusion task."""
    lines = ["Cluster label fusion (macro over scenarios)",
             f"{'mode':>10}{'accuracy':>12}{'F1':>12}"]
    for mode, scores in _fusion_rows(summary):
        lines.append(f"{mode:>10}{scores['accuracy']:>12.3f}{scores['f1']:>12.3f}")
    return "\n".join(lines)


def format_overview(summary: dict) -> str:
    split = summary["split_rounds"]
    mean_round = f"{np.mean(split):.1f}" if split else "-"
    return (f"Scenarios: {summary['n_scenarios']}, split: {summary['n_split']}, "
            f"mean split round: {mean_round}, "
            f"mean assignment accuracy: {summary['mean_assignment_accuracy']:.4f}")


def write_mu_csv(outcomes, path):
    """Per-node membership rows across all scenarios."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scenario_seed", "node", "cluster", "mu", "zeroed"])
        for doc in outcomes:
            ms = doc.get("membership")
            if ms is None:
                continue
            zeroed = set(ms["zeroed"])
            for ci, cluster in enumerate(ms["clusters"]):
                for node in cluster:
                    writer.writerow([doc["seed"], node, ci,
                                     repr(ms["mu"][str(node)]),
                                     int(node in zeroed)])


def write_distance_csv(summary: dict, path):
    matrix = summary["distance"]["matrix"]
    counts = summary["distance"]["counts"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cluster", "source", "mean_distance", "n"])
        for ci in range(2):
            for sj in range(2):
                writer.writerow([ci, sj, repr(matrix[ci][sj]), counts[ci][sj]])


def write_fusion_csv(summary: dict, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mode", "accuracy", "f1"])
        for mode, scores in _fusion_rows(summary):
            writer.writerow([mode, repr(scores["accuracy"]), repr(scores["f1"])])


def _save_figure(fig, path):
    fig.savefig(path, dpi=FIGURE_DPI, metadata={"Software": None})


def render_figures(summary: dict, outcomes, fig_dir):
    """Distance heatmap, fusion trend, and per-scenario accuracy figures.

    Returns the written paths.
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig_dir = Path(fig_dir)
    fig_dir.mkdir(parents=True, exist_ok=True)
    written = []

    matrix = np.asarray(summary["distance"]["matrix"], dtype=np.float64)
    fig, ax = plt.subplots(figsize=(4.2, 3.6))
    shown = np.where(np.isfinite(matrix), matrix, np.nan)
    im = ax.imshow(shown, vmin=0.0, vmax=1.0, cmap="viridis")
    for ci in range(2):
        for sj in range(2):
            text = f"{matrix[ci, sj]:.2f}" if np.isfinite(matrix[ci, sj]) else "n/a"
            ax.text(sj, ci, text, ha="center", va="center", color="white")
    ax.set_xticks([0, 1], ["source 1", "source 2"])
    ax.set_yticks([0, 1], ["cluster 1", "cluster 2"])
    ax.set_title("Mean normalized cluster-to-source distance")
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    path = fig_dir / "distance_matrix.png"
    _save_figure(fig, path)
    plt.close(fig)
    written.append(path)

    rows = _fusion_rows(summary)
    fig, ax = plt.subplots(figsize=(5.4, 3.6))
    labels = [mode for mode, _ in rows]
    accs = [scores["accuracy"] for _, scores in rows]
    f1s = [scores["f1"] for _, scores in rows]
    x = np.arange(len(rows))
    ax.bar(x - 0.18, accs, width=0.36, label="accuracy")
    ax.bar(x + 0.18, f1s, width=0.36, label="F1")
    ax.set_xticks(x, labels)
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("macro score")
    ax.set_title("Label fusion by membership weighting")
    ax.legend(loc="lower right")
    fig.tight_layout()
    path = fig_dir / "fusion_scores.png"
    _save_figure(fig, path)
    plt.close(fig)
    written.append(path)

    seeds = [doc["seed"] for doc in outcomes]
    accs = [doc["evaluation"]["assignment_accuracy"] for doc in outcomes]
    rounds = [doc["split_round"] for doc in outcomes]
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(6.4, 4.8), sharex=True)
    ax1.bar(seeds, accs, color="#3465a4")
    ax1.axhline(0.5, color="grey", linewidth=0.8, linestyle="--")
    ax1.set_ylabel("assignment accuracy")
    ax1.set_ylim(0.0, 1.05)
    ax2.bar(seeds, [r if r is not None else 0 for r in rounds],
            color=["#73d216" if r is not None else "#cc0000" for r in rounds])
    ax2.set_ylabel("split round")
    ax2.set_xlabel("scenario seed")
    fig.suptitle("Per-scenario clustering outcome")
    fig.tight_layout()
    path = fig_dir / "per_scenario.png"
    _save_figure(fig, path)
    plt.close(fig)
    written.append(path)
    return written


def write_report(results_dir, out_dir) -> str:
    """Emit tables, CSVs, and figures; return the printable summary text."""
    summary, outcomes = load_results(results_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_mu_csv(outcomes, out_dir / "membership.csv")
    write_distance_csv(summary, out_dir / "distance_matrix.csv")
    write_fusion_csv(summary, out_dir / "fusion_scores.csv")
    render_figures(summary, outcomes, out_dir)
    text = "\n\n".join([format_overview(summary),
                        format_distance_table(summary),
                        format_fusion_table(summary)])
    with open(out_dir / "report.txt", "w") as fh:
        fh.write(text + "\n")
    return text
