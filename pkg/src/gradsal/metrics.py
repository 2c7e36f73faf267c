"""Precision/recall evaluation of saliency maps and binary segmentations.

Maps are max-rescaled to 8-bit and swept over all 256 cutoffs with a
strictly-greater comparator, so cutoff 255 predicts nothing and cutoff 0
predicts every nonzero pixel. Cutoffs with no predicted positives are
flagged invalid (precision recorded as 0) and excluded from the best
F-measure along the curve.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

DEFAULT_BETA2 = 0.3


class EvalError(ValueError):
    pass


@dataclass
class PRCurve:
    """256 (cutoff, precision, recall) points plus the confusion counts."""

    precision: np.ndarray  # (256,)
    recall: np.ndarray  # (256,)
    valid: np.ndarray  # (256,) bool: any predicted positives at this cutoff
    tp: np.ndarray  # (256,) int
    fp: np.ndarray
    fn: np.ndarray

    @property
    def cutoffs(self) -> np.ndarray:
        return np.arange(256)

    def __len__(self) -> int:
        return 256


def quantize(values: np.ndarray) -> np.ndarray:
    """Max-rescale a nonnegative map to uint8 levels, round half up."""
    v = np.asarray(values, dtype=np.float64)
    if v.size and float(v.min()) < 0:
        raise EvalError("map values must be nonnegative")
    mx = float(v.max()) if v.size else 0.0
    if mx <= 0.0:
        return np.zeros(v.shape, dtype=np.uint8)
    return np.floor(v / mx * 255.0 + 0.5).astype(np.uint8)


def pr_curve(map_values: np.ndarray, truth: np.ndarray) -> PRCurve:
    """Sweep all 256 cutoffs of the quantized map against the truth mask."""
    truth = np.asarray(truth, dtype=bool)
    if map_values.shape != truth.shape:
        raise EvalError(
            f"map {map_values.shape} and truth {truth.shape} disagree"
        )
    n_pos = int(np.count_nonzero(truth))
    if n_pos == 0:
        raise EvalError("empty ground truth mask: recall is undefined")
    q = map_values if map_values.dtype == np.uint8 else quantize(map_values)
    # histogram the 8-bit levels once; counts above each cutoff are
    # suffix sums, since "predicted at cutoff c" means level > c
    pos_hist = np.bincount(q[truth].ravel(), minlength=256)
    all_hist = np.bincount(q.ravel(), minlength=256)
    tp = np.cumsum(pos_hist[::-1])[::-1] - pos_hist  # sum of levels > c
    predicted = np.cumsum(all_hist[::-1])[::-1] - all_hist
    fp = predicted - tp
    fn = n_pos - tp
    valid = predicted > 0
    precision = np.where(valid, tp / np.maximum(predicted, 1), 0.0)
    recall = tp / n_pos
    return PRCurve(precision=precision, recall=recall, valid=valid,
                   tp=tp.astype(np.int64), fp=fp.astype(np.int64),
                   fn=fn.astype(np.int64))


def f_beta(prec: float, rec: float, beta2: float = DEFAULT_BETA2) -> float:
    """Weighted precision/recall combination; 0 when the blend is empty."""
    if beta2 < 0:
        raise EvalError("beta2 must be nonnegative")
    denom = beta2 * prec + rec
    if denom == 0.0:
        return 0.0
    return (1.0 + beta2) * prec * rec / denom


def max_f_beta(curve: PRCurve, beta2: float = DEFAULT_BETA2) -> float:
    """Best F-measure along the curve, over valid points only.

    Returns 0.0 if every point is invalid (all-zero map).
    """
    best = 0.0
    found = False
    for i in range(256):
        if not curve.valid[i]:
            continue
        found = True
        best = max(best, f_beta(float(curve.precision[i]),
                                float(curve.recall[i]), beta2))
    return best if found else 0.0


def segmentation_f_beta(pred: np.ndarray, truth: np.ndarray,
                        beta2: float = DEFAULT_BETA2) -> float:
    """Single F-measure of one binary mask against the truth."""
    pred = np.asarray(pred, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if pred.shape != truth.shape:
        raise EvalError(f"mask {pred.shape} and truth {truth.shape} disagree")
    n_pos = int(np.count_nonzero(truth))
    if n_pos == 0:
        raise EvalError("empty ground truth mask")
    tp = int(np.count_nonzero(pred & truth))
    n_pred = int(np.count_nonzero(pred))
    prec = tp / n_pred if n_pred else 0.0
    rec = tp / n_pos
    return f_beta(prec, rec, beta2)


def gaussian_baseline(height: int, width: int) -> np.ndarray:
    """Fixed centered Gaussian map (sigma = size/4 per axis)."""
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    cy, cx = (height - 1) / 2.0, (width - 1) / 2.0
    sy, sx = height / 4.0, width / 4.0
    return np.exp(-((yy - cy) ** 2 / (2 * sy * sy)
                    + (xx - cx) ** 2 / (2 * sx * sx)))


@dataclass
class EvalReport:
    beta2: float
    per_image_max_f: Dict[str, float]
    mean_precision: np.ndarray  # (256,)
    mean_recall: np.ndarray  # (256,)
    per_image_seg_f: Dict[str, float] = field(default_factory=dict)

    @property
    def mean_max_f(self) -> float:
        return float(np.mean(list(self.per_image_max_f.values())))

    @property
    def mean_seg_f(self) -> Optional[float]:
        if not self.per_image_seg_f:
            return None
        return float(np.mean(list(self.per_image_seg_f.values())))


def aggregate(curves: Dict[str, PRCurve], beta2: float = DEFAULT_BETA2,
              seg_scores: Optional[Dict[str, float]] = None) -> EvalReport:
    """Mean PR curve and mean best-F over a batch of per-image curves.

    Invalid points enter the precision mean as their recorded 0.
    """
    if not curves:
        raise EvalError("nothing to aggregate")
    per_image = {name: max_f_beta(c, beta2) for name, c in curves.items()}
    mean_p = np.mean([c.precision for c in curves.values()], axis=0)
    mean_r = np.mean([c.recall for c in curves.values()], axis=0)
    return EvalReport(beta2=beta2, per_image_max_f=per_image,
                      mean_precision=mean_p, mean_recall=mean_r,
                      per_image_seg_f=dict(seg_scores or {}))


def curve_csv(curve: PRCurve, beta2: float = DEFAULT_BETA2) -> str:
    lines = ["cutoff,precision,recall,f_beta"]
    for c in range(256):
        p, r = float(curve.precision[c]), float(curve.recall[c])
        lines.append(f"{c},{p!r},{r!r},{f_beta(p, r, beta2)!r}")
    return "\n".join(lines) + "\n"


def mean_curve_csv(report: EvalReport) -> str:
    lines = ["cutoff,mean_precision,mean_recall"]
    for c in range(256):
        lines.append(f"{c},{float(report.mean_precision[c])!r},"
                     f"{float(report.mean_recall[c])!r}")
    return "\n".join(lines) + "\n"


def summary_csv(report: EvalReport) -> str:
    lines = ["image,max_f_beta" + (",seg_f_beta" if report.per_image_seg_f else "")]
    for name in sorted(report.per_image_max_f):
        row = f"{name},{report.per_image_max_f[name]!r}"
        if report.per_image_seg_f:
            seg = report.per_image_seg_f.get(name)
            row += f",{seg!r}" if seg is not None else ","
        lines.append(row)
    return "\n".join(lines) + "\n"


def _svg_header(width: int, height: int) -> List[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def pr_curves_svg(reports: Dict[str, EvalReport], width: int = 480,
                  height: int = 400) -> str:
    """Static SVG line plot of mean PR curves (recall on x, precision on y)."""
    pad = 50
    plot_w, plot_h = width - 2 * pad, height - 2 * pad
    parts = _svg_header(width, height)
    parts.append(
        f'<rect x="{pad}" y="{pad}" width="{plot_w}" height="{plot_h}" '
        'fill="none" stroke="#888"/>'
    )
    parts.append(f'<text x="{width // 2}" y="{height - 12}" font-size="13" '
                 'text-anchor="middle">recall</text>')
    parts.append(f'<text x="14" y="{height // 2}" font-size="13" '
                 f'text-anchor="middle" transform="rotate(-90 14 {height // 2})">'
                 'precision</text>')
    for k, (name, report) in enumerate(sorted(reports.items())):
        color = _PALETTE[k % len(_PALETTE)]
        pts = []
        for c in range(256):
            x = pad + float(report.mean_recall[c]) * plot_w
            y = pad + (1.0 - float(report.mean_precision[c])) * plot_h
            pts.append(f"{x:.2f},{y:.2f}")
        parts.append(f'<polyline points="{" ".join(pts)}" fill="none" '
                     f'stroke="{color}" stroke-width="1.5"/>')
        parts.append(f'<text x="{pad + 8}" y="{pad + 16 + 15 * k}" '
                     f'font-size="12" fill="{color}">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def fbeta_bars_svg(scores: Dict[str, float], width: int = 480,
                   height: int = 320) -> str:
    """Static SVG bar chart of mean F-measure per method."""
    pad = 50
    plot_w, plot_h = width - 2 * pad, height - 2 * pad
    parts = _svg_header(width, height)
    names = sorted(scores)
    n = max(len(names), 1)
    slot = plot_w / n
    for k, name in enumerate(names):
        value = max(0.0, min(1.0, scores[name]))
        bar_h = value * plot_h
        x = pad + k * slot + slot * 0.15
        y = pad + plot_h - bar_h
        color = _PALETTE[k % len(_PALETTE)]
        parts.append(f'<rect x="{x:.2f}" y="{y:.2f}" width="{slot * 0.7:.2f}" '
                     f'height="{bar_h:.2f}" fill="{color}"/>')
        parts.append(f'<text x="{x + slot * 0.35:.2f}" y="{height - 28}" '
                     f'font-size="11" text-anchor="middle">{name}</text>')
        parts.append(f'<text x="{x + slot * 0.35:.2f}" y="{y - 4:.2f}" '
                     f'font-size="11" text-anchor="middle">{scores[name]:.3f}</text>')
    parts.append(f'<line x1="{pad}" y1="{pad + plot_h}" x2="{pad + plot_w}" '
                 f'y2="{pad + plot_h}" stroke="#444"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
