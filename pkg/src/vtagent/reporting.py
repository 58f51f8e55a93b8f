"""Scoring of trajectory logs and report emission (text, CSV, JSONL, SVG)."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Optional, Sequence

from .data_model import DatasetManifest
from .errors import MalformedRecord
from .grammar import KeyframeSet
from .metrics import (MetricReport, SampleScore, aggregate, anls, exact_accuracy, hit)
from .oracle import SubsetRow


def score_records(manifest: DatasetManifest, records: Sequence[dict]) -> list[SampleScore]:
    """Score run_batch records against manifest golds. Errored records score 0;
    hit is defined only when the sample has pseudo keyframes and a selection exists."""
    by_id = {s.sample_id: s for s in manifest.samples}
    scores: list[SampleScore] = []
    for rec in records:
        sample = by_id.get(rec["sample_id"])
        if sample is None:
            continue
        if "error" in rec:
            scores.append(SampleScore(sample_id=sample.sample_id, accuracy=0, anls=0.0))
            continue
        pred = rec.get("answer", "")
        acc = exact_accuracy(pred, sample.gold_answers)
        score_anls = anls(pred, sample.gold_answers)
        hit_val: Optional[bool] = None
        ids = rec.get("keyframe_ids") or []
        if sample.pseudo_keyframes and ids:
            hit_val = hit(KeyframeSet(ids=tuple(ids)), sample.pseudo_keyframes)
        scores.append(SampleScore(sample_id=sample.sample_id, accuracy=acc,
                                  anls=score_anls, hit=hit_val))
    return scores


def write_score_log(scores: Sequence[SampleScore], report: MetricReport,
                    path: str | Path) -> None:
    """Per-sample records plus one trailing summary record, full precision."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for s in scores:
            fh.write(json.dumps({"sample_id": s.sample_id, "accuracy": s.accuracy,
                                 "anls": s.anls, "hit": s.hit},
                                ensure_ascii=False) + "\n")
        fh.write(json.dumps({"summary": True, "split": report.split_tag, "n": report.n,
                             "mean_accuracy": report.mean_accuracy,
                             "mean_anls": report.mean_anls,
                             "hit_rate": report.hit_rate},
                            ensure_ascii=False) + "\n")


def read_score_log(path: str | Path) -> tuple[list[SampleScore], Optional[dict]]:
    scores: list[SampleScore] = []
    summary: Optional[dict] = None
    with Path(path).open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise MalformedRecord(line_no, f"invalid JSON in {path}: {e}") from e
            if obj.get("summary"):
                summary = obj
            else:
                try:
                    scores.append(SampleScore(sample_id=obj["sample_id"],
                                              accuracy=int(obj["accuracy"]),
                                              anls=float(obj["anls"]),
                                              hit=obj.get("hit")))
                except (KeyError, TypeError, ValueError) as e:
                    raise MalformedRecord(line_no, f"bad score record in {path}: {e}") from e
    return scores, summary


def side_by_side_table(reports: dict[str, MetricReport]) -> str:
    """Two or more systems' aggregates with a delta column against the first."""
    names = list(reports)
    lines = [f"{'system':<24} {'n':>6} {'ACC.':>8} {'ANLS':>8} {'dACC':>8} {'dANLS':>8}"]
    base = reports[names[0]]
    for name in names:
        r = reports[name]
        d_acc = r.mean_accuracy - base.mean_accuracy
        d_anls = r.mean_anls - base.mean_anls
        lines.append(f"{name:<24} {r.n:>6} {r.mean_accuracy:8.2f} {r.mean_anls:8.2f} "
                     f"{d_acc:+8.2f} {d_anls:+8.2f}")
    return "\n".join(lines)


def subset_table(rows_by_system: dict[str, Sequence[SubsetRow]]) -> str:
    lines = [f"{'system':<24} {'subset':<8} {'n':>6} {'ACC.':>8} {'Hit%':>8}"]
    for name, rows in rows_by_system.items():
        for row in rows:
            acc = f"{row.accuracy:8.2f}" if row.accuracy is not None else "       -"
            hr = f"{row.hit_rate:8.2f}" if row.hit_rate is not None else "       -"
            lines.append(f"{name:<24} {row.subset:<8} {row.n:>6} {acc} {hr}")
    return "\n".join(lines)


def write_csv_table(rows: Sequence[dict], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not rows:
        path.write_text("", encoding="utf-8")
        return
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)


def write_svg_lines(path: str | Path, series: dict[str, Sequence[float]],
                    title: str = "", width: int = 640, height: int = 360) -> None:
    """Minimal multi-series line plot; no display server or plotting stack needed."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pad = 40
    all_vals = [v for vals in series.values() for v in vals] or [0.0]
    lo, hi = min(all_vals), max(all_vals)
    if hi == lo:
        hi = lo + 1.0
    n = max(len(vals) for vals in series.values()) or 1
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b"]
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<text x="{width // 2}" y="20" text-anchor="middle" font-size="14">{title}</text>']
    for k, (name, vals) in enumerate(series.items()):
        pts = []
        for i, v in enumerate(vals):
            x = pad + (width - 2 * pad) * (i / max(n - 1, 1))
            y = height - pad - (height - 2 * pad) * ((v - lo) / (hi - lo))
            pts.append(f"{x:.1f},{y:.1f}")
        color = colors[k % len(colors)]
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                     f'points="{" ".join(pts)}"/>')
        parts.append(f'<text x="{pad}" y="{pad + 16 * k}" fill="{color}" '
                     f'font-size="12">{name}</text>')
    parts.append("</svg>")
    path.write_text("\n".join(parts), encoding="utf-8")


def write_svg_bars(path: str | Path, bars: dict[str, float], title: str = "",
                   width: int = 640, height: int = 360) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pad = 40
    hi = max(list(bars.values()) + [1.0])
    n = len(bars) or 1
    slot = (width - 2 * pad) / n
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<text x="{width // 2}" y="20" text-anchor="middle" font-size="14">{title}</text>']
    for i, (name, val) in enumerate(bars.items()):
        h = (height - 2 * pad) * (val / hi)
        x = pad + i * slot + slot * 0.15
        y = height - pad - h
        parts.append(f'<rect x="{x:.1f}" y="{y:.1f}" width="{slot * 0.7:.1f}" '
                     f'height="{h:.1f}" fill="#1f77b4"/>')
        parts.append(f'<text x="{x + slot * 0.35:.1f}" y="{height - pad + 14}" '
                     f'text-anchor="middle" font-size="11">{name}</text>')
        parts.append(f'<text x="{x + slot * 0.35:.1f}" y="{y - 4:.1f}" '
                     f'text-anchor="middle" font-size="11">{val:.2f}</text>')
    parts.append("</svg>")
    path.write_text("\n".join(parts), encoding="utf-8")
