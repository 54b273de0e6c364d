"""Benchmark metrics: confusion counts, precision-recall curves, power-law fits.

All metrics cumulate counts across conditions, treating every (edge,
condition) cell as one prediction, so a K-condition run is scored as a single
detection problem.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError

logger = logging.getLogger(__name__)


def confusion(predicted: np.ndarray, truth: np.ndarray) -> dict:
    """TP/FP/FN/TN counts pooled over all cells of matching boolean arrays."""
    predicted = np.asarray(predicted, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if predicted.shape != truth.shape:
        raise ValidationError(
            f"prediction shape {predicted.shape} does not match truth {truth.shape}"
        )
    tp = int((predicted & truth).sum())
    fp = int((predicted & ~truth).sum())
    fn = int((~predicted & truth).sum())
    tn = int((~predicted & ~truth).sum())
    return {"tp": tp, "fp": fp, "fn": fn, "tn": tn}


def confusion_by_condition(predicted: np.ndarray, truth: np.ndarray,
                           labels: list[str]) -> dict:
    """Confusion counts per condition column plus their elementwise sum."""
    predicted = np.asarray(predicted, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if predicted.shape != truth.shape or predicted.shape[1] != len(labels):
        raise ValidationError(
            f"prediction {predicted.shape}, truth {truth.shape} and "
            f"{len(labels)} labels do not line up"
        )
    per = {lab: confusion(predicted[:, k], truth[:, k])
           for k, lab in enumerate(labels)}
    total = confusion(predicted, truth)
    return {"per_condition": per, "cumulated": total}


@dataclass
class PrCurve:
    thresholds: np.ndarray
    recall: np.ndarray
    precision: np.ndarray
    degenerate: bool = False


def pr_curve(scores: np.ndarray, truth: np.ndarray, grid="auto") -> PrCurve:
    """Precision-recall over |score| thresholds, cells pooled across conditions.

    grid="auto" sweeps every distinct score magnitude. An integer grid picks
    that many evenly spaced magnitude quantiles; an explicit sequence is used
    as-is. Predictions at threshold t are the cells with |score| >= t.
    """
    s = np.abs(np.asarray(scores, dtype=float)).ravel()
    t = np.asarray(truth, dtype=bool).ravel()
    if s.shape != t.shape:
        raise ValidationError(
            f"score shape {scores.shape} does not match truth {truth.shape}"
        )
    positives = int(t.sum())
    if positives == 0 or positives == t.size:
        raise ValidationError(
            f"degenerate truth: {positives} positives of {t.size} cells"
        )
    order = np.argsort(-s, kind="stable")
    sorted_s = s[order]
    tp_cum = np.cumsum(t[order])
    counts = np.arange(1, s.size + 1)

    if isinstance(grid, str):
        if grid != "auto":
            raise ValidationError(f"unknown grid spec {grid!r}")
        # last index of each distinct magnitude = full prediction set at that cut
        last = np.flatnonzero(np.diff(sorted_s) != 0)
        idx = np.concatenate([last, [s.size - 1]])
        thresholds = sorted_s[idx]
    else:
        if np.isscalar(grid):
            qs = np.linspace(0, 1, int(grid))
            thresholds = np.unique(np.quantile(s, qs))[::-1]
        else:
            thresholds = np.asarray(grid, dtype=float)
            if thresholds.ndim != 1 or thresholds.size == 0:
                raise ValidationError("threshold grid must be a non-empty 1-d sequence")
            thresholds = np.sort(thresholds)[::-1]
        # number of cells with |score| >= t, via the descending sorted magnitudes
        idx = np.searchsorted(-sorted_s, -thresholds, side="right") - 1
        keep = idx >= 0
        thresholds, idx = thresholds[keep], idx[keep]
        if thresholds.size == 0:
            raise ValidationError("no threshold in the grid captures any cell")

    recall = tp_cum[idx] / positives
    precision = tp_cum[idx] / counts[idx]
    degenerate = thresholds.size < 2
    if degenerate:
        logger.warning("PR curve is a single point, flagging as degenerate")
    order = np.argsort(recall, kind="stable")
    return PrCurve(
        thresholds=thresholds[order],
        recall=recall[order],
        precision=precision[order],
        degenerate=degenerate,
    )


def pr_curve_alpha(scores: np.ndarray, truth: np.ndarray, alphas,
                   method: str | None = None) -> PrCurve:
    """PR curve swept over detection levels instead of score thresholds.

    Each grid point reruns the pooled multiple test at that level, which is
    slower than thresholding but mirrors how the detector is actually tuned.
    The threshold column of the result holds the level.
    """
    from . import detection

    s = np.asarray(scores, dtype=float).ravel()
    t = np.asarray(truth, dtype=bool).ravel()
    if s.shape != t.shape:
        raise ValidationError(
            f"score shape {scores.shape} does not match truth {truth.shape}"
        )
    positives = int(t.sum())
    if positives == 0 or positives == t.size:
        raise ValidationError(
            f"degenerate truth: {positives} positives of {t.size} cells"
        )
    alphas = np.asarray(list(alphas), dtype=float)
    if alphas.size == 0 or ((alphas <= 0) | (alphas >= 1)).any():
        raise ValidationError("detection levels must be a non-empty grid in (0,1)")
    method = method or detection.METHOD_EB
    recall, precision = [], []
    for alpha in np.sort(alphas):
        result = detection.multiple_test(s, float(alpha), method)
        n_sel = int(result.reject.sum())
        tp = int((result.reject & t).sum())
        recall.append(tp / positives)
        precision.append(tp / n_sel if n_sel else 1.0)
    recall = np.asarray(recall)
    precision = np.asarray(precision)
    order = np.argsort(recall, kind="stable")
    degenerate = alphas.size < 2
    if degenerate:
        logger.warning("PR curve is a single point, flagging as degenerate")
    return PrCurve(
        thresholds=np.sort(alphas)[order],
        recall=recall[order],
        precision=precision[order],
        degenerate=degenerate,
    )


def auprc(curve: PrCurve) -> float:
    """Area under the PR curve by trapezoid over recall.

    The recall=0 endpoint carries the precision of the smallest-recall point.
    """
    recall = np.concatenate([[0.0], curve.recall])
    precision = np.concatenate([[curve.precision[0]], curve.precision])
    return float(np.trapezoid(precision, recall))


def auprc_summary(values) -> dict:
    """Mean with spread (sd) and precision of the mean (se) across replicates."""
    arr = np.asarray(list(values), dtype=float)
    if arr.size == 0:
        raise ValidationError("no AUPRC values to summarize")
    sd = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return {
        "n": int(arr.size),
        "mean": float(arr.mean()),
        "sd": sd,
        "se": sd / math.sqrt(arr.size) if arr.size > 1 else 0.0,
    }


def write_pr_csv(curve: PrCurve, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["threshold", "recall", "precision"])
        for t, r, p in zip(curve.thresholds, curve.recall, curve.precision):
            writer.writerow([f"{t:.17g}", f"{r:.17g}", f"{p:.17g}"])


def write_pr_svg(curve: PrCurve, path: str | Path, title: str = "precision-recall") -> None:
    """Self-contained SVG line plot of the PR curve, no external assets."""
    width, height, margin = 480, 360, 50
    span_w, span_h = width - 2 * margin, height - 2 * margin

    def sx(r: float) -> float:
        return margin + r * span_w

    def sy(p: float) -> float:
        return height - margin - p * span_h

    points = " ".join(
        f"{sx(r):.2f},{sy(p):.2f}" for r, p in zip(curve.recall, curve.precision)
    )
    ticks = []
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        x, y = sx(frac), sy(frac)
        ticks.append(
            f'<line x1="{x:.1f}" y1="{height - margin}" x2="{x:.1f}" '
            f'y2="{height - margin + 5}" stroke="black"/>'
            f'<text x="{x:.1f}" y="{height - margin + 18}" font-size="10" '
            f'text-anchor="middle">{frac:g}</text>'
            f'<line x1="{margin - 5}" y1="{y:.1f}" x2="{margin}" y2="{y:.1f}" '
            f'stroke="black"/>'
            f'<text x="{margin - 8}" y="{y + 3:.1f}" font-size="10" '
            f'text-anchor="end">{frac:g}</text>'
        )
    svg = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">'
        f'<rect width="{width}" height="{height}" fill="white"/>'
        f'<text x="{width / 2}" y="20" font-size="13" text-anchor="middle">{title}</text>'
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="black"/>'
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" '
        f'stroke="black"/>'
        + "".join(ticks)
        + f'<text x="{width / 2}" y="{height - 10}" font-size="11" '
          f'text-anchor="middle">recall</text>'
        f'<text x="14" y="{height / 2}" font-size="11" text-anchor="middle" '
        f'transform="rotate(-90 14 {height / 2})">precision</text>'
        f'<polyline points="{points}" fill="none" stroke="#1f6fb2" stroke-width="1.5"/>'
        "</svg>\n"
    )
    Path(path).write_text(svg)


@dataclass
class PowerLawFit:
    exponent: float
    r_squared: float
    n_degrees: int


def powerlaw_fit(degrees) -> PowerLawFit:
    """Least-squares slope of log frequency against log degree.

    Fits freq(d) ~ d^(-exponent) over the distinct positive degrees in the
    multiset; at least three are required for a meaningful line.
    """
    degrees = np.asarray(list(degrees), dtype=float)
    degrees = degrees[degrees > 0]
    values, counts = np.unique(degrees, return_counts=True)
    if values.size < 3:
        raise ValidationError(
            f"power-law fit needs at least 3 distinct positive degrees, "
            f"got {values.size}"
        )
    x = np.log(values)
    y = np.log(counts.astype(float))
    slope, intercept = np.polyfit(x, y, 1)
    fitted = slope * x + intercept
    ss_res = float(((y - fitted) ** 2).sum())
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return PowerLawFit(exponent=float(-slope), r_squared=r2, n_degrees=int(values.size))


def load_score_csv(path: str | Path) -> tuple[list[str], np.ndarray]:
    """Read a per-edge score CSV back into (labels, (N, K) array).

    Works for both integrated and raw score files; bookkeeping columns
    (i, j and the sep_* widths) are skipped.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:2] != ["i", "j"]:
            raise ValidationError(f"{path}: expected an edge score CSV")
        keep = [c for c, name in enumerate(header[2:], start=2)
                if not name.startswith("sep_")]
        labels = [header[c] for c in keep]
        rows = []
        for row in reader:
            rows.append([float(row[c]) for c in keep])
    if not rows:
        raise ValidationError(f"{path}: no score rows")
    return labels, np.asarray(rows, dtype=float)


def load_truth_masks(manifest_path: str | Path) -> tuple[list[str], np.ndarray]:
    """Read a simulation manifest and return (labels, truth bool (N, K)).

    Edges come from the truth_edges CSVs, indices 1-based in the files.
    """
    manifest_path = Path(manifest_path)
    spec = json.loads(manifest_path.read_text())
    p = int(spec["p"])
    n_pairs = p * (p - 1) // 2
    labels = []
    columns = []
    for cond in spec["conditions"]:
        labels.append(cond["label"])
        mask = np.zeros(n_pairs, dtype=bool)
        path = manifest_path.parent / cond["truth_edges"]
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            for row in reader:
                i, j = int(row["i"]) - 1, int(row["j"]) - 1
                mask[i * (2 * p - i - 1) // 2 + (j - i - 1)] = True
        columns.append(mask)
    return labels, np.column_stack(columns)
