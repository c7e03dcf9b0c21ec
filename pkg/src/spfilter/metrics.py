"""Depth and segmentation metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .io import write_csv


def _masked(pred, truth, mask):
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    mask = np.ones(pred.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if not np.any(mask):
        raise ValueError("metric mask selects no elements")
    return pred[mask], truth[mask]


def compute_rmse(pred, truth, mask=None) -> float:
    p, t = _masked(pred, truth, mask)
    return float(np.sqrt(np.mean((t - p) ** 2)))


def compute_rel(pred, truth, mask=None) -> float:
    p, t = _masked(pred, truth, mask)
    if np.any(t == 0):
        raise ValueError("relative error undefined where truth is zero")
    return float(np.mean(np.abs(t - p) / t))


def compute_miou(pred_mask, true_mask, n_classes: int = 2) -> float:
    """Mean IoU over classes; a class absent from both masks scores 1."""
    p = np.asarray(pred_mask)
    t = np.asarray(true_mask)
    if p.shape != t.shape:
        raise ValueError("masks differ in shape")
    ious = []
    for c in range(n_classes):
        inter = np.count_nonzero((p == c) & (t == c))
        union = np.count_nonzero((p == c) | (t == c))
        ious.append(1.0 if union == 0 else inter / union)
    return float(np.mean(ious))


@dataclass
class MetricReport:
    rmse: float = float("nan")
    rel: float = float("nan")
    miou: float = float("nan")
    n_pixels: int = 0
    distance_bins: list = field(default_factory=list)
    name: str = ""

    def summary(self) -> str:
        lines = [f"{self.name or 'report'}: RMSE {self.rmse:.4f} m  REL {self.rel:.4f}  "
                 f"mIoU {self.miou:.4f}  n={self.n_pixels}"]
        for lo, hi, rmse, n in self.distance_bins:
            lines.append(f"  [{lo:.1f}, {hi:.1f}) m: RMSE {rmse:.4f} (n={n})")
        return "\n".join(lines)


def binned_rmse(pred, truth, distance, edges) -> list[tuple[float, float, float, int]]:
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    distance = np.asarray(distance, dtype=float)
    out = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        sel = (distance >= lo) & (distance < hi)
        n = int(np.count_nonzero(sel))
        rmse = compute_rmse(pred, truth, sel) if n else float("nan")
        out.append((float(lo), float(hi), rmse, n))
    return out


def depth_report(pred, truth, valid, distance=None, max_distance: float = 5.0,
                 bin_width: float = 0.5, pred_mask=None, true_mask=None, name: str = "") -> MetricReport:
    """RMSE/REL over valid pixels whose true depth lies within ``max_distance``."""
    truth = np.asarray(truth, dtype=float)
    dist = truth if distance is None else np.asarray(distance, dtype=float)
    with np.errstate(invalid="ignore"):
        sel = np.asarray(valid, dtype=bool) & (dist < max_distance) & (truth > 0)
    rep = MetricReport(name=name, n_pixels=int(np.count_nonzero(sel)))
    if rep.n_pixels:
        rep.rmse = compute_rmse(pred, truth, sel)
        rep.rel = compute_rel(pred, truth, sel)
        edges = np.arange(0.0, max_distance + 1e-9, bin_width)
        rep.distance_bins = binned_rmse(np.asarray(pred)[sel], truth[sel], dist[sel], edges)
    if pred_mask is not None and true_mask is not None:
        rep.miou = compute_miou(pred_mask, true_mask)
    return rep


def write_reports(path, reports) -> None:
    write_csv(path, ["name", "rmse", "rel", "miou", "n_pixels"],
              [[r.name, repr(r.rmse), repr(r.rel), repr(r.miou), r.n_pixels] for r in reports])
