"""Evaluation criteria for uncertainty fields: coverage, rank correlation,
sparsification curves and their area under curve.

Coverage and the rank correlation pool the u and v components; the
sparsification curve ranks pixels by the product sigma_u * sigma_v against
the endpoint error.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, DimensionError, ParameterError
from .flowdata import ErrorField, FlowField, UncertaintyField, error_field


@dataclass(frozen=True)
class MetricsReport:
    """One evaluation of an (error, uncertainty) field pair."""

    coverage: float
    cc: float
    auc: float
    n_points: int
    k_sigma: float
    coverage_u: float = float("nan")
    coverage_v: float = float("nan")

    def to_dict(self) -> dict:
        return {
            "coverage": self.coverage,
            "cc": self.cc,
            "auc": self.auc,
            "n_points": self.n_points,
            "k_sigma": self.k_sigma,
            "coverage_u": self.coverage_u,
            "coverage_v": self.coverage_v,
        }


@dataclass(frozen=True)
class SparsificationCurve:
    """Normalized remaining error as low-uncertainty pixels are kept first."""

    fractions: np.ndarray
    normalized_error: np.ndarray
    oracle_error: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.fractions, dtype=np.float64)
        ne = np.asarray(self.normalized_error, dtype=np.float64)
        oe = np.asarray(self.oracle_error, dtype=np.float64)
        if not (f.ndim == ne.ndim == oe.ndim == 1 and len(f) == len(ne) == len(oe) >= 1):
            raise DimensionError("curve arrays must be 1-D and of equal length")
        if np.any(np.diff(f) <= 0) or f[0] <= 0 or abs(f[-1] - 1.0) > 1e-12:
            raise ParameterError("fractions must ascend within (0, 1] and end at 1.0")
        if np.any(ne < 0) or np.any(oe < 0):
            raise ParameterError("curve errors must be nonnegative")
        if abs(ne[-1] - 1.0) > 1e-9 or abs(oe[-1] - 1.0) > 1e-9:
            raise ParameterError("normalized error at fraction 1.0 must equal 1.0")
        object.__setattr__(self, "fractions", f)
        object.__setattr__(self, "normalized_error", ne)
        object.__setattr__(self, "oracle_error", oe)

    @property
    def n_fractions(self) -> int:
        return len(self.fractions)


def coverage(err: ErrorField, unc: UncertaintyField, k: float = 2.0) -> float:
    """Fraction of (pixel, component) points with |e| < k * sigma, pooled over u and v."""
    if err.shape != unc.shape:
        raise DimensionError(f"error shape {err.shape} != uncertainty shape {unc.shape}")
    if k <= 0:
        raise ParameterError(f"coverage multiplier k must be positive, got {k}")
    hits_u = np.abs(err.e_u) < k * unc.sigma_u
    hits_v = np.abs(err.e_v) < k * unc.sigma_v
    return float((hits_u.sum() + hits_v.sum()) / (2 * err.e_u.size))


def coverage_per_component(err: ErrorField, unc: UncertaintyField, k: float = 2.0) -> tuple[float, float]:
    """Coverage of the u and v components separately."""
    if err.shape != unc.shape:
        raise DimensionError(f"error shape {err.shape} != uncertainty shape {unc.shape}")
    if k <= 0:
        raise ParameterError(f"coverage multiplier k must be positive, got {k}")
    return (
        float(np.mean(np.abs(err.e_u) < k * unc.sigma_u)),
        float(np.mean(np.abs(err.e_v) < k * unc.sigma_v)),
    )


def average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned the mean rank of their run."""
    values = np.asarray(values).ravel()
    order = np.argsort(values, kind="stable")
    sorted_vals = values[order]
    starts = np.flatnonzero(np.r_[True, sorted_vals[1:] != sorted_vals[:-1]])
    ends = np.r_[starts[1:], len(values)]
    mean_rank = (starts + ends - 1) / 2.0 + 1.0
    ranks = np.empty(len(values), dtype=np.float64)
    ranks[order] = np.repeat(mean_rank, ends - starts)
    return ranks


def spearman_cc(err_mag, unc_score) -> float:
    """Spearman rank correlation as the Pearson correlation of average ranks.

    Tie-robust; equals the closed form 1 - 6 sum(d^2) / (N (N^2 - 1)) when
    there are no ties.
    """
    x = np.asarray(err_mag, dtype=np.float64).ravel()
    y = np.asarray(unc_score, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise DimensionError(f"rank inputs disagree in size: {x.shape} vs {y.shape}")
    if len(x) < 2:
        raise ParameterError("spearman_cc needs at least 2 points")
    rx = average_ranks(x)
    ry = average_ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = math.sqrt(float(np.dot(rx, rx)) * float(np.dot(ry, ry)))
    if denom == 0.0:
        raise DegenerateInputError("rank variance is zero; correlation undefined")
    return float(np.dot(rx, ry) / denom)


def sparsification(epe, unc_score, n_fractions: int = 50) -> SparsificationCurve:
    """Keep-lowest-uncertainty curve plus its error-sorted oracle counterpart.

    For each fraction f in {1/K, ..., 1} the first ceil(f*N) pixels in
    ascending uncertainty order are kept and their mean endpoint error,
    normalized by the overall mean, is recorded. Ties break by pixel index.
    """
    epe = np.asarray(epe, dtype=np.float64).ravel()
    unc_score = np.asarray(unc_score, dtype=np.float64).ravel()
    if epe.shape != unc_score.shape:
        raise DimensionError(f"epe size {epe.shape} != score size {unc_score.shape}")
    if n_fractions < 1:
        raise ParameterError(f"n_fractions must be >= 1, got {n_fractions}")
    n = len(epe)
    if n < n_fractions:
        raise ParameterError(f"need at least {n_fractions} points, got {n}")
    mean_all = epe.mean()
    if mean_all <= 0.0:
        raise DegenerateInputError("mean endpoint error is zero; curve undefined")

    prefix_pred = np.cumsum(epe[np.argsort(unc_score, kind="stable")])
    prefix_oracle = np.cumsum(epe[np.argsort(epe, kind="stable")])
    kept = np.ceil(np.arange(1, n_fractions + 1) / n_fractions * n).astype(np.int64)
    fractions = np.arange(1, n_fractions + 1, dtype=np.float64) / n_fractions
    pred = prefix_pred[kept - 1] / kept / mean_all
    oracle = prefix_oracle[kept - 1] / kept / mean_all
    return SparsificationCurve(fractions=fractions, normalized_error=pred, oracle_error=oracle)


def _trapezoid(ys: np.ndarray, xs: np.ndarray) -> float:
    return float(np.sum(0.5 * (ys[1:] + ys[:-1]) * np.diff(xs)))


def auc(curve: SparsificationCurve) -> float:
    """Trapezoidal area of the predicted curve over [0, 1].

    The curve is extended to f = 0 with its first value, so a constant
    curve of 1.0 integrates to exactly 1.0. Lower is better.
    """
    xs = np.r_[0.0, curve.fractions]
    ys = np.r_[curve.normalized_error[0], curve.normalized_error]
    return _trapezoid(ys, xs)


def oracle_auc(curve: SparsificationCurve) -> float:
    """Trapezoidal area of the oracle (error-sorted) curve over [0, 1]."""
    xs = np.r_[0.0, curve.fractions]
    ys = np.r_[curve.oracle_error[0], curve.oracle_error]
    return _trapezoid(ys, xs)


def ause(curve: SparsificationCurve) -> float:
    """Area between the predicted and oracle curves (internal diagnostic)."""
    return auc(curve) - oracle_auc(curve)


def evaluate_fields(
    pred: FlowField,
    gt: FlowField,
    unc: UncertaintyField,
    k_sigma: float = 2.0,
    n_fractions: int = 50,
) -> tuple[MetricsReport, SparsificationCurve]:
    """All three criteria of a predicted flow against ground truth."""
    err = error_field(pred, gt)
    if err.shape != unc.shape:
        raise DimensionError(f"flow shape {err.shape} != uncertainty shape {unc.shape}")
    cov = coverage(err, unc, k_sigma)
    cov_u, cov_v = coverage_per_component(err, unc, k_sigma)
    pooled_err = np.concatenate([np.abs(err.e_u).ravel(), np.abs(err.e_v).ravel()])
    pooled_sigma = np.concatenate([unc.sigma_u.ravel(), unc.sigma_v.ravel()])
    cc = spearman_cc(pooled_err, pooled_sigma)
    curve = sparsification(err.epe, unc.sigma_u * unc.sigma_v, n_fractions)
    report = MetricsReport(
        coverage=cov,
        cc=cc,
        auc=auc(curve),
        n_points=2 * err.e_u.size,
        k_sigma=k_sigma,
        coverage_u=cov_u,
        coverage_v=cov_v,
    )
    return report, curve


# ---------------------------------------------------------------------------
# Exports
# ---------------------------------------------------------------------------


def curve_to_csv(curve: SparsificationCurve, path) -> None:
    lines = ["fraction,normalized_error,oracle_error"]
    for f, ne, oe in zip(curve.fractions, curve.normalized_error, curve.oracle_error):
        lines.append(f"{f:.6f},{ne:.6f},{oe:.6f}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def report_to_json(report: MetricsReport, path=None) -> str:
    text = json.dumps(report.to_dict(), indent=2, sort_keys=True)
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    return text


def curve_to_svg(curve: SparsificationCurve, path, title: str = "sparsification") -> None:
    """Self-contained SVG plot of the predicted and oracle curves."""
    width, height, margin = 480, 360, 48
    y_max = max(1.05, float(curve.normalized_error.max()), float(curve.oracle_error.max()))

    def sx(f: float) -> float:
        return margin + f * (width - 2 * margin)

    def sy(e: float) -> float:
        return height - margin - (e / y_max) * (height - 2 * margin)

    def polyline(values, color: str) -> str:
        pts = " ".join(
            f"{sx(f):.2f},{sy(v):.2f}" for f, v in zip(curve.fractions, values)
        )
        return f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>'

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" stroke="black"/>',
        f'<text x="{width / 2:.0f}" y="{height - 12}" text-anchor="middle" '
        f'font-size="12">fraction of pixels kept (low sigma first)</text>',
        f'<text x="14" y="{height / 2:.0f}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {height / 2:.0f})">normalized mean EPE</text>',
        f'<text x="{width / 2:.0f}" y="20" text-anchor="middle" font-size="13">{title}</text>',
        polyline(curve.normalized_error, "#c0392b"),
        polyline(curve.oracle_error, "#2471a3"),
        f'<text x="{width - margin}" y="{margin}" text-anchor="end" font-size="11" '
        f'fill="#c0392b">predicted</text>',
        f'<text x="{width - margin}" y="{margin + 14}" text-anchor="end" font-size="11" '
        f'fill="#2471a3">oracle</text>',
        "</svg>",
    ]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")
