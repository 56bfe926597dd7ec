"""Report assembly: summary tables and SVG/CSV curve pairs.

Consumes metrics CSVs and solution records, groups results by forward
model and prior usage, and emits every curve twice — as a rendered SVG
and as the CSV holding exactly the plotted numbers.
"""

from __future__ import annotations

import os

import numpy as np

from . import inverse
from . import util
from .svgplot import Series, line_chart


def summarize(rows: list[inverse.Metrics]) -> list[dict]:
    """Mean metrics per (forward_model, with_prior) group."""
    groups: dict[tuple, list[inverse.Metrics]] = {}
    for m in rows:
        groups.setdefault((m.forward_model, m.with_prior), []).append(m)
    out = []
    for (fwd, wp) in sorted(groups):
        ms = groups[(fwd, wp)]
        out.append({
            "forward_model": fwd,
            "with_prior": wp,
            "n": len(ms),
            "field_mse": float(np.mean([m.field_mse for m in ms])),
            "traj_mse": float(np.mean([m.traj_mse for m in ms])),
            "seconds_per_iter": float(np.mean([m.seconds_per_iter
                                               for m in ms])),
        })
    return out


def summary_text(groups: list[dict]) -> str:
    header = (f"{'forward':<12}{'prior':<8}{'n':>4}{'field_mse':>14}"
              f"{'traj_mse':>14}{'s/iter':>10}")
    lines = [header, "-" * len(header)]
    for g in groups:
        lines.append(f"{g['forward_model']:<12}"
                     f"{'with' if g['with_prior'] else 'without':<8}"
                     f"{g['n']:>4}{g['field_mse']:>14.4e}"
                     f"{g['traj_mse']:>14.4e}{g['seconds_per_iter']:>10.4f}")
    return "\n".join(lines) + "\n"


def summary_csv(groups: list[dict]) -> str:
    lines = ["forward_model,with_prior,n,field_mse,traj_mse,seconds_per_iter"]
    for g in groups:
        lines.append("%s,%d,%d,%.17g,%.17g,%.17g" % (
            g["forward_model"], int(g["with_prior"]), g["n"],
            g["field_mse"], g["traj_mse"], g["seconds_per_iter"]))
    return "\n".join(lines) + "\n"


def curve_csv(columns: dict[str, np.ndarray]) -> str:
    """Column-major CSV; shorter columns are padded with empty cells."""
    names = list(columns)
    length = max(len(v) for v in columns.values())
    lines = [",".join(names)]
    for i in range(length):
        row = []
        for name in names:
            col = columns[name]
            row.append("%.17g" % col[i] if i < len(col) else "")
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def make_report(out_dir: str, metrics_files: list[str],
                solution_files: list[str],
                curve_files: list[str] | None = None) -> list[str]:
    """Write summary + plots under out_dir; returns the artifact paths."""
    os.makedirs(out_dir, exist_ok=True)
    artifacts = []

    rows: list[inverse.Metrics] = []
    for path in metrics_files:
        rows.extend(inverse.read_metrics_csv(path))
    groups = summarize(rows)
    txt = os.path.join(out_dir, "summary.txt")
    util.atomic_write_text(txt, summary_text(groups))
    csv = os.path.join(out_dir, "summary.csv")
    util.atomic_write_text(csv, summary_csv(groups))
    artifacts += [txt, csv]

    # observation objective vs iteration, fine-tune window shaded
    series, columns = [], {}
    vspan = None
    for path in sorted(solution_files):
        sol = inverse.load_solution(path)
        label = os.path.splitext(os.path.basename(path))[0]
        trace = sol["loss_trace"]
        if trace.size == 0:
            continue
        series.append(Series(label, list(range(trace.size)), list(trace)))
        columns[label] = trace
        if vspan is None and sol["fine_tune"] is not None:
            vspan = tuple(float(v) for v in sol["fine_tune"])
    if series:
        length = max(len(s.xs) for s in series)
        columns = {"iteration": np.arange(length), **columns}
        svg = os.path.join(out_dir, "objective.svg")
        util.atomic_write_text(svg, line_chart(
            series, title="observation objective", xlabel="iteration",
            ylabel="objective", log_y=True, vspan=vspan))
        csv2 = os.path.join(out_dir, "objective.csv")
        util.atomic_write_text(csv2, curve_csv(columns))
        artifacts += [svg, csv2]

    # rollout error curves passed through from evaluation
    for path in curve_files or []:
        with open(path, "r", encoding="utf-8") as f:
            header, *data = f.read().splitlines()
        names = header.split(",")
        cols = {n: [] for n in names}
        for line in data:
            for name, cell in zip(names, line.split(",")):
                if cell:
                    cols[name].append(float(cell))
        xs = cols[names[0]]
        series = [Series(n, xs[:len(cols[n])], cols[n]) for n in names[1:]]
        base = os.path.splitext(os.path.basename(path))[0]
        svg = os.path.join(out_dir, f"{base}.svg")
        util.atomic_write_text(svg, line_chart(
            series, title="accumulated relative rollout error",
            xlabel=names[0], ylabel="relative error"))
        csv3 = os.path.join(out_dir, f"{base}.csv")
        util.atomic_write_text(csv3, curve_csv(
            {n: np.asarray(v) for n, v in cols.items()}))
        artifacts += [svg, csv3]

    return artifacts
