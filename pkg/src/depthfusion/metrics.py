"""Depth-evaluation metrics: RMSE, relative errors, threshold accuracies.

ARD/SRD support two divisor conventions. The groundtruth divisor is the
default (it matches the wider depth-estimation literature); the prediction
divisor is available behind a flag for literal comparison runs.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, asdict
from enum import Enum

import numpy as np

THRESHOLDS = (1.25, 1.25 ** 2, 1.25 ** 3)


class Divisor(Enum):
    GROUNDTRUTH = "gt"
    PREDICTION = "pred"


@dataclass
class MetricsReport:
    rmse: float
    ard: float
    srd: float
    delta1: float
    delta2: float
    delta3: float
    n_pixels: int
    divisor_convention: str

    def as_dict(self):
        return asdict(self)


def compute_metrics(pred: np.ndarray, gt: np.ndarray,
                    mask: np.ndarray | None = None,
                    divisor: Divisor = Divisor.GROUNDTRUTH) -> MetricsReport:
    """Evaluate a predicted depth map against groundtruth over masked pixels."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    if mask is None:
        mask = np.ones(pred.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != pred.shape:
        raise ValueError(f"mask shape {mask.shape} does not match {pred.shape}")
    if not mask.any():
        raise ValueError("evaluation mask selects no pixels")
    p = pred[mask]
    g = gt[mask]
    if (p <= 0).any() or (g <= 0).any():
        raise ValueError("masked depths must be strictly positive")

    err = p - g
    rmse = float(np.sqrt(np.mean(err * err)))
    div = g if divisor is Divisor.GROUNDTRUTH else p
    ard = float(np.mean(np.abs(err) / div))
    srd = float(np.mean(err * err / div))
    ratio = np.maximum(p / g, g / p)
    deltas = [float(np.mean(ratio < t)) for t in THRESHOLDS]
    return MetricsReport(rmse=rmse, ard=ard, srd=srd,
                         delta1=deltas[0], delta2=deltas[1], delta3=deltas[2],
                         n_pixels=int(mask.sum()),
                         divisor_convention=divisor.value)


def bilinear_resize(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel centers (align_corners=False), edge clamped."""
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape
    if (h, w) == (out_h, out_w):
        return img.copy()

    def axis_coords(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        i0 = np.floor(src).astype(np.int64)
        frac = src - i0
        i0c = np.clip(i0, 0, n_in - 1)
        i1c = np.clip(i0 + 1, 0, n_in - 1)
        return i0c, i1c, frac

    y0, y1, fy = axis_coords(h, out_h)
    x0, x1, fx = axis_coords(w, out_w)
    fy = fy[:, None]
    fx = fx[None, :]
    top = img[np.ix_(y0, x0)] * (1 - fx) + img[np.ix_(y0, x1)] * fx
    bot = img[np.ix_(y1, x0)] * (1 - fx) + img[np.ix_(y1, x1)] * fx
    return top * (1 - fy) + bot * fy


def evaluate_with_resize(pred_lowres: np.ndarray, gt_fullres: np.ndarray,
                         mask: np.ndarray | None = None,
                         divisor: Divisor = Divisor.GROUNDTRUTH) -> MetricsReport:
    """Upscale a low-resolution prediction to the groundtruth grid, then evaluate."""
    gt = np.asarray(gt_fullres, dtype=np.float64)
    resized = bilinear_resize(pred_lowres, gt.shape[0], gt.shape[1])
    return compute_metrics(resized, gt, mask, divisor)


def reference_metrics(pred, gt, mask=None,
                      divisor: Divisor = Divisor.GROUNDTRUTH) -> MetricsReport:
    """Scalar-loop reference implementation, kept independent of compute_metrics."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if mask is None:
        mask = np.ones(pred.shape, dtype=bool)
    sq = 0.0
    ab = 0.0
    sr = 0.0
    hits = [0, 0, 0]
    n = 0
    for idx in np.ndindex(pred.shape):
        if not mask[idx]:
            continue
        p = float(pred[idx])
        g = float(gt[idx])
        if p <= 0 or g <= 0:
            raise ValueError("masked depths must be strictly positive")
        e = p - g
        sq += e * e
        d = g if divisor is Divisor.GROUNDTRUTH else p
        ab += abs(e) / d
        sr += e * e / d
        ratio = max(p / g, g / p)
        for i, t in enumerate(THRESHOLDS):
            if ratio < t:
                hits[i] += 1
        n += 1
    if n == 0:
        raise ValueError("evaluation mask selects no pixels")
    return MetricsReport(rmse=(sq / n) ** 0.5, ard=ab / n, srd=sr / n,
                         delta1=hits[0] / n, delta2=hits[1] / n,
                         delta3=hits[2] / n, n_pixels=n,
                         divisor_convention=divisor.value)


def mean_report(reports: list[MetricsReport]) -> MetricsReport:
    """Per-image average of metric reports (each image weighted equally)."""
    if not reports:
        raise ValueError("no reports to aggregate")
    return MetricsReport(
        rmse=float(np.mean([r.rmse for r in reports])),
        ard=float(np.mean([r.ard for r in reports])),
        srd=float(np.mean([r.srd for r in reports])),
        delta1=float(np.mean([r.delta1 for r in reports])),
        delta2=float(np.mean([r.delta2 for r in reports])),
        delta3=float(np.mean([r.delta3 for r in reports])),
        n_pixels=int(sum(r.n_pixels for r in reports)),
        divisor_convention=reports[0].divisor_convention)


def write_reports(reports: dict[str, MetricsReport], jsonl_path, csv_path):
    """Emit one JSON-lines record per sample and a CSV summary."""
    with open(jsonl_path, "w", encoding="utf-8") as f:
        for sample_id, rep in reports.items():
            rec = {"sample_id": sample_id}
            rec.update(rep.as_dict())
            f.write(json.dumps(rec, sort_keys=True) + "\n")
    with open(csv_path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["sample_id", "rmse", "ard", "srd", "d1", "d2", "d3"])
        for sample_id, rep in reports.items():
            writer.writerow([sample_id, repr(rep.rmse), repr(rep.ard),
                             repr(rep.srd), repr(rep.delta1), repr(rep.delta2),
                             repr(rep.delta3)])
