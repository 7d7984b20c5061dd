"""Delimited report output and the figures rendered next to it.

CSV files use a deterministic column order and round-trip byte-exactly
through `read_csv`/`write_csv`. Figures are rendered with matplotlib to
SVG so the output stays a plain, parseable vector file.
"""

from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .errors import EmptyInputError


def write_csv(rows: list[dict], path, columns: list[str] | None = None) -> None:
    if not rows:
        raise EmptyInputError("no rows to write")
    if columns is None:
        columns = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _format(row.get(k, "")) for k in columns})


def _format(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def line_chart(series: dict, x_label: str, y_label: str, title: str, path) -> None:
    """One line per entry of `series`: name -> (x values, y values)."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, (xs, ys) in sorted(series.items()):
        ax.plot(xs, ys, marker="o", label=name)
    ax.set_xlabel(x_label)
    ax.set_ylabel(y_label)
    ax.set_title(title)
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def aggregate_runs(rows: list[dict]) -> list[dict]:
    """Mean/std/median of `value` grouped by (split, corruption, metric)."""
    groups: dict[tuple, list[float]] = {}
    for row in rows:
        key = (row["split"], row["corruption"], row["metric"])
        groups.setdefault(key, []).append(float(row["value"]))
    out = []
    for (split, corruption, metric), values in sorted(groups.items()):
        arr = np.asarray(values)
        out.append(
            {
                "split": split,
                "corruption": corruption,
                "metric": metric,
                "runs": len(values),
                "mean": float(arr.mean()),
                "std": float(arr.std(ddof=0)),
                "median": float(np.median(arr)),
            }
        )
    return out


def summarize_dir(run_dir, out_dir) -> dict:
    """Aggregate every metrics CSV under `run_dir`; emit CSV, charts, text."""
    csv_paths = sorted(
        os.path.join(run_dir, name)
        for name in os.listdir(run_dir)
        if name.endswith(".csv")
    )
    rows: list[dict] = []
    for path in csv_paths:
        rows.extend(read_csv(path))
    if not rows:
        raise EmptyInputError(f"no metric CSVs under {run_dir}")
    os.makedirs(out_dir, exist_ok=True)
    summary = aggregate_runs(rows)
    combined_path = os.path.join(out_dir, "summary.csv")
    write_csv(
        summary,
        combined_path,
        ["split", "corruption", "metric", "runs", "mean", "std", "median"],
    )
    charts = []
    nr_rows = [r for r in rows if r["corruption"] not in ("none", "")]
    if nr_rows:
        series: dict = {}
        for r in nr_rows:
            if r["metric"] != "mae":
                continue
            kind, _, nr = r["corruption"].partition("@")
            series.setdefault(kind, []).append((float(nr), float(r["value"])))
        chart_series = {
            kind: tuple(zip(*sorted(points))) for kind, points in series.items()
        }
        if chart_series:
            chart_path = os.path.join(out_dir, "mae_vs_noise_rate.svg")
            line_chart(
                chart_series, "noise rate", "MAE", "MAE under corruption", chart_path
            )
            charts.append(chart_path)
    text_path = os.path.join(out_dir, "summary.txt")
    with open(text_path, "w") as fh:
        fh.write(f"aggregated {len(rows)} metric rows from {len(csv_paths)} files\n")
        for entry in summary:
            fh.write(
                "{split:>8} {corruption:>16} {metric:>6} "
                "mean={mean:.6f} std={std:.6f} median={median:.6f} "
                "(n={runs})\n".format(**entry)
            )
    return {"summary_csv": combined_path, "summary_txt": text_path, "charts": charts}
