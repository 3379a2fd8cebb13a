"""Affine alignment protocols and depth error metrics.

Predictions are aligned to ground truth by least-squares affine fits in
disparity and/or depth space before the metrics are computed over the valid
mask. Aligned depths that come out non-positive are clamped to a small floor
and counted rather than silently dropped.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields

import numpy as np

from .errors import ParameterError, ShapeError
from .grids import MaskGrid, ScalarGrid

LS_DISP = "ls-disp"
LS_DISP_DEPTH = "ls-disp-depth"
LS_DEPTH = "ls-depth"
LS_DEPTH_DISP = "ls-depth-disp"
PROTOCOLS = (LS_DISP, LS_DISP_DEPTH, LS_DEPTH, LS_DEPTH_DISP)

DEPTH_FLOOR = 1e-6
_RECIP_FLOOR = 1e-12


@dataclass(frozen=True)
class AffineFit:
    """Scale and shift minimizing the masked squared residual."""

    a: float
    b: float
    degenerate: bool = False

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.a * x + self.b


def _fit_raw(p: np.ndarray, g: np.ndarray) -> AffineFit:
    n = p.size
    if n < 2:
        raise ParameterError("affine fit needs at least 2 masked pixels")
    sp, sg = p.sum(), g.sum()
    spp, spg = (p * p).sum(), (p * g).sum()
    det = n * spp - sp * sp
    # det = n^2 var(p); a (near-)constant prediction has no usable scale.
    if not np.isfinite(det) or det <= 1e-12 * max(1.0, n * spp):
        return AffineFit(1.0, float((g - p).mean()), degenerate=True)
    a = (n * spg - sp * sg) / det
    b = (spp * sg - sp * spg) / det
    return AffineFit(float(a), float(b))


def affine_fit_lstsq(pred: ScalarGrid, gt: ScalarGrid,
                     mask: MaskGrid) -> AffineFit:
    if pred.shape != gt.shape or pred.shape != mask.shape:
        raise ShapeError("prediction, target and mask shapes must match")
    sel = mask.values
    return _fit_raw(pred.values[sel], gt.values[sel])


def _as_depth(values: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, int]:
    """Clamp non-positive depths to the floor, counting masked offenders."""
    clamped = int(((values <= 0.0) & mask).sum())
    return np.maximum(values, DEPTH_FLOOR), clamped


def _reciprocal(values: np.ndarray) -> np.ndarray:
    return 1.0 / np.maximum(values, _RECIP_FLOOR)


def align(pred: ScalarGrid, gt_depth: ScalarGrid, mask: MaskGrid,
          protocol: str) -> tuple[ScalarGrid, int]:
    """Aligned depth under the named protocol plus the clamp count.

    ls-disp / ls-disp-depth interpret the prediction as disparity and fit it
    to the ground-truth disparity first; ls-depth / ls-depth-disp interpret
    it as depth. The -depth / -disp suffixes add a second fit in the other
    space.
    """
    if protocol not in PROTOCOLS:
        raise ParameterError(
            f"unknown protocol {protocol!r}; valid: {', '.join(PROTOCOLS)}")
    if pred.shape != gt_depth.shape or pred.shape != mask.shape:
        raise ShapeError("prediction, target and mask shapes must match")
    sel = mask.values
    if gt_depth.values[sel].min() <= 0:
        raise ParameterError("ground-truth depth must be positive on mask")
    g_depth = gt_depth.values
    g_disp = _reciprocal(g_depth)
    p = pred.values
    clamped = 0

    if protocol in (LS_DISP, LS_DISP_DEPTH):
        fit = _fit_raw(p[sel], g_disp[sel])
        disp = fit.apply(p)
        clamped += int(((disp <= 0.0) & sel).sum())
        depth = _reciprocal(disp)
        if protocol == LS_DISP_DEPTH:
            fit2 = _fit_raw(depth[sel], g_depth[sel])
            depth = fit2.apply(depth)
    else:
        fit = _fit_raw(p[sel], g_depth[sel])
        depth = fit.apply(p)
        if protocol == LS_DEPTH_DISP:
            depth, c = _as_depth(depth, sel)
            clamped += c
            disp = _reciprocal(depth)
            fit2 = _fit_raw(disp[sel], g_disp[sel])
            disp = fit2.apply(disp)
            clamped += int(((disp <= 0.0) & sel).sum())
            depth = _reciprocal(disp)

    depth, c = _as_depth(depth, sel)
    return ScalarGrid(depth), clamped + c


@dataclass(frozen=True)
class MetricsReport:
    """The nine depth error metrics over the valid masked pixels."""

    delta1: float
    delta2: float
    delta3: float
    abs_rel: float
    rmse: float
    log10: float
    rmse_log: float
    si_log: float
    sq_rel: float
    valid_pixel_count: int

    def as_row(self) -> list:
        return [getattr(self, f.name) for f in fields(self)]


CSV_COLUMNS = [f.name for f in fields(MetricsReport)]


def compute_metrics(pred_depth: ScalarGrid, gt_depth: ScalarGrid,
                    mask: MaskGrid) -> MetricsReport:
    if pred_depth.shape != gt_depth.shape or pred_depth.shape != mask.shape:
        raise ShapeError("prediction, target and mask shapes must match")
    sel = mask.values
    p = pred_depth.values[sel]
    g = gt_depth.values[sel]
    valid = (p > 0) & (g > 0)
    p, g = p[valid], g[valid]
    if p.size == 0:
        raise ParameterError("no valid positive pixels under the mask")

    ratio = np.maximum(p / g, g / p)
    d = np.log(p) - np.log(g)
    mean_d2 = float(np.mean(d * d))
    mean_d = float(np.mean(d))
    return MetricsReport(
        delta1=float(np.mean(ratio < 1.25)),
        delta2=float(np.mean(ratio < 1.25 ** 2)),
        delta3=float(np.mean(ratio < 1.25 ** 3)),
        abs_rel=float(np.mean(np.abs(p - g) / g)),
        rmse=float(np.sqrt(np.mean((p - g) ** 2))),
        log10=float(np.mean(np.abs(np.log10(p) - np.log10(g)))),
        rmse_log=float(np.sqrt(mean_d2)),
        si_log=100.0 * float(np.sqrt(max(mean_d2 - mean_d ** 2, 0.0))),
        sq_rel=float(np.mean((p - g) ** 2 / g)),
        valid_pixel_count=int(p.size),
    )


def relative_delta(base: float, ours: float) -> float:
    """Percent error reduction of ours relative to base."""
    if base <= 0:
        raise ParameterError("baseline value must be positive")
    return 100.0 * (base - ours) / base


def delta_histogram(per_sample_deltas, bins: int
                    ) -> tuple[np.ndarray, np.ndarray, float]:
    """Equal-width histogram over the data range plus the mean marker."""
    data = np.asarray(list(per_sample_deltas), dtype=np.float64)
    if data.size == 0:
        raise ParameterError("histogram needs at least one sample")
    counts, edges = np.histogram(data, bins=bins)
    return counts, edges, float(data.mean())


def metrics_csv(rows: list[tuple[str, MetricsReport]]) -> str:
    """One line per sample, columns in report order, UTF-8 text."""
    lines = ["sample," + ",".join(CSV_COLUMNS)]
    for name, report in rows:
        cells = [name] + [repr(v) if isinstance(v, float) else str(v)
                          for v in report.as_row()]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def metrics_summary(per_protocol: dict[str, list[tuple[str, MetricsReport]]],
                    clamped: dict[str, int] | None = None) -> str:
    """JSON document with per-protocol sample counts and mean metrics."""
    doc = {}
    for protocol, rows in per_protocol.items():
        table = np.array([r.as_row() for _, r in rows], dtype=np.float64)
        entry = {
            "samples": len(rows),
            "mean": dict(zip(CSV_COLUMNS, table.mean(axis=0).tolist())),
        }
        if clamped is not None and protocol in clamped:
            entry["clamped_nonpositive"] = clamped[protocol]
        doc[protocol] = entry
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"
