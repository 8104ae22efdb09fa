"""Window cross-correlation flow estimation with subpixel peak fitting.

Each interrogation window yields one displacement vector from the peak of the
zero-normalized linear cross-correlation between the frame-A and frame-B
windows (with one integer re-centering pass for full-overlap peaks); the
window-grid vectors are then interpolated to a dense per-pixel field. Windows
are always placed fully inside the image and the outermost vectors extend to
the borders, so the output shape equals the input shape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, EstimationError, ParameterError
from .flowdata import FlowField, ImagePair

PEAK_FITS = ("gaussian3", "parabolic3")
CORRELATION_MODES = ("direct", "fft")

# Windows whose intensity standard deviation falls below this are flagged
# as invalid (no texture to correlate).
_VARIANCE_EPS = 1e-10


@dataclass(frozen=True)
class EstimatorConfig:
    """One cross-correlation estimator variant."""

    window_size: int = 32
    overlap: float = 0.5
    peak_fit: str = "gaussian3"
    correlation: str = "fft"
    instance_id: int = 0

    def __post_init__(self):
        if self.window_size < 8 or self.window_size % 2 != 0:
            raise ParameterError(f"window_size must be an even integer >= 8, got {self.window_size}")
        if not 0.0 <= self.overlap <= 0.75:
            raise ParameterError(f"overlap {self.overlap} outside [0, 0.75]")
        if self.peak_fit not in PEAK_FITS:
            raise ParameterError(f"peak_fit must be one of {PEAK_FITS}, got {self.peak_fit!r}")
        if self.correlation not in CORRELATION_MODES:
            raise ParameterError(
                f"correlation must be one of {CORRELATION_MODES}, got {self.correlation!r}"
            )


@dataclass(frozen=True)
class CorrelationMap:
    """Square correlation surface with displacement zero at index side//2."""

    scores: np.ndarray
    peak_y: int
    peak_x: int
    peak_value: float

    @classmethod
    def from_scores(cls, scores: np.ndarray) -> "CorrelationMap":
        scores = np.asarray(scores, dtype=np.float64)
        if scores.ndim != 2 or scores.shape[0] != scores.shape[1] or scores.shape[0] < 3:
            raise DimensionError(f"correlation map must be square and >= 3x3, got {scores.shape}")
        if not np.all(np.isfinite(scores)):
            raise ParameterError("correlation map contains non-finite scores")
        flat_peak = int(np.argmax(scores))  # first occurrence: deterministic tie-break
        py, px = divmod(flat_peak, scores.shape[1])
        return cls(scores=scores, peak_y=py, peak_x=px, peak_value=float(scores[py, px]))

    @property
    def side(self) -> int:
        return self.scores.shape[0]


@dataclass(frozen=True)
class SubpixelPeak:
    dx: float
    dy: float
    refined: bool  # False when the integer peak sits on the map border


def _standardize(window: np.ndarray):
    mean = window.mean()
    std = window.std()
    if std < _VARIANCE_EPS:
        return None
    return (window - mean) / std


def _overlap_counts(side: int) -> np.ndarray:
    # pixels contributing to each displacement of the linear correlation,
    # for displacements in [-side/2, side/2)
    d = np.abs(np.arange(-(side // 2), side // 2))
    return np.outer(side - d, side - d).astype(np.float64)


def correlate_windows(win_a: np.ndarray, win_b: np.ndarray, mode: str = "fft"):
    """Zero-normalized linear cross-correlation of two equal square windows.

    Both windows are standardized over their full extent; scores are the
    overlap-averaged products (no wrap-around), reported for displacements
    in [-side/2, side/2). Index (side//2 + dy, side//2 + dx) holds the score
    for displacement (dx, dy). Returns None when either window has no
    intensity variance.
    """
    win_a = np.asarray(win_a, dtype=np.float64)
    win_b = np.asarray(win_b, dtype=np.float64)
    if win_a.shape != win_b.shape or win_a.ndim != 2 or win_a.shape[0] != win_a.shape[1]:
        raise DimensionError(f"windows must be equal squares, got {win_a.shape} and {win_b.shape}")
    if mode not in CORRELATION_MODES:
        raise ParameterError(f"unknown correlation mode {mode!r}")
    a = _standardize(win_a)
    b = _standardize(win_b)
    if a is None or b is None:
        return None
    side = a.shape[0]
    half = side // 2
    if mode == "fft":
        # zero-padding to twice the side makes the circular product linear
        fa = np.fft.rfft2(a, s=(2 * side, 2 * side))
        fb = np.fft.rfft2(b, s=(2 * side, 2 * side))
        full = np.fft.fftshift(np.fft.irfft2(np.conj(fa) * fb, s=(2 * side, 2 * side)))
        corr = full[side - half : side + half, side - half : side + half]
    else:
        corr = np.empty((side, side))
        for ky in range(-half, half):
            for kx in range(-half, half):
                a_sl = a[max(0, -ky) : side - max(0, ky), max(0, -kx) : side - max(0, kx)]
                b_sl = b[max(0, ky) : side + min(0, ky), max(0, kx) : side + min(0, kx)]
                corr[ky + half, kx + half] = np.sum(a_sl * b_sl)
    return CorrelationMap.from_scores(corr / _overlap_counts(side))


def _axis_delta(c_minus: float, c_zero: float, c_plus: float, fit: str) -> float:
    if fit == "gaussian3" and min(c_minus, c_zero, c_plus) > 0.0:
        c_minus, c_zero, c_plus = math.log(c_minus), math.log(c_zero), math.log(c_plus)
    denom = 2.0 * (c_minus - 2.0 * c_zero + c_plus)
    if denom == 0.0:
        return 0.0
    return (c_minus - c_plus) / denom


def subpixel_peak(corr: CorrelationMap, fit: str = "gaussian3") -> SubpixelPeak:
    """Refine the integer correlation peak with a 3-point fit per axis.

    gaussian3 fits a parabola to the log scores (exact for Gaussian peaks)
    and falls back to parabolic3 on any nonpositive sample. A peak on the
    map border is returned unrefined.
    """
    if fit not in PEAK_FITS:
        raise ParameterError(f"peak_fit must be one of {PEAK_FITS}, got {fit!r}")
    side = corr.side
    half = side // 2
    py, px = corr.peak_y, corr.peak_x
    if px == 0 or px == side - 1 or py == 0 or py == side - 1:
        return SubpixelPeak(dx=float(px - half), dy=float(py - half), refined=False)
    s = corr.scores
    delta_x = _axis_delta(s[py, px - 1], s[py, px], s[py, px + 1], fit)
    delta_y = _axis_delta(s[py - 1, px], s[py, px], s[py + 1, px], fit)
    return SubpixelPeak(dx=px - half + delta_x, dy=py - half + delta_y, refined=True)


def _window_centers(extent: int, window: int, step: int) -> np.ndarray:
    lo = window // 2
    hi = extent - window // 2
    centers = list(range(lo, hi + 1, step))
    if centers[-1] != hi:
        centers.append(hi)
    return np.asarray(centers, dtype=np.int64)


def _fill_invalid(u: np.ndarray, v: np.ndarray, valid: np.ndarray) -> None:
    # Iterative fill from the 8-neighborhood; deterministic sweep order.
    while not valid.all():
        nb_count = np.zeros_like(u)
        nb_u = np.zeros_like(u)
        nb_v = np.zeros_like(v)
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if dy == 0 and dx == 0:
                    continue
                src_y = slice(max(dy, 0), u.shape[0] + min(dy, 0))
                src_x = slice(max(dx, 0), u.shape[1] + min(dx, 0))
                dst_y = slice(max(-dy, 0), u.shape[0] + min(-dy, 0))
                dst_x = slice(max(-dx, 0), u.shape[1] + min(-dx, 0))
                mask = valid[src_y, src_x]
                nb_count[dst_y, dst_x] += mask
                nb_u[dst_y, dst_x] += np.where(mask, u[src_y, src_x], 0.0)
                nb_v[dst_y, dst_x] += np.where(mask, v[src_y, src_x], 0.0)
        fillable = ~valid & (nb_count > 0)
        if not fillable.any():
            raise EstimationError("cannot fill invalid windows: no valid neighbors")
        u[fillable] = nb_u[fillable] / nb_count[fillable]
        v[fillable] = nb_v[fillable] / nb_count[fillable]
        valid |= fillable


def _median_validate(u: np.ndarray, v: np.ndarray, threshold: float = 2.0) -> np.ndarray:
    """Normalized-median outlier test over the 8-neighborhood.

    Returns the mask of vectors consistent with their neighbors. A vector is
    rejected when, for either component, its residual against the neighbor
    median exceeds `threshold` times the median neighbor residual (plus a
    0.1 px noise floor).
    """
    gy, gx = u.shape
    keep = np.ones((gy, gx), dtype=bool)
    for comp in (u, v):
        padded = np.pad(comp, 1, mode="constant", constant_values=np.nan)
        stacks = []
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if dy == 0 and dx == 0:
                    continue
                stacks.append(padded[1 + dy : 1 + dy + gy, 1 + dx : 1 + dx + gx])
        neighbors = np.stack(stacks)
        med = np.nanmedian(neighbors, axis=0)
        resid = np.nanmedian(np.abs(neighbors - med), axis=0)
        keep &= np.abs(comp - med) <= threshold * (resid + 0.1)
    return keep


def _interp_axis(centers: np.ndarray, size: int):
    # Pixels beyond the outermost window centers extrapolate linearly from
    # the edge segment (exact for uniform and linear flows).
    pos = np.arange(size, dtype=np.float64)
    idx = np.clip(np.searchsorted(centers, pos, side="right") - 1, 0, len(centers) - 2)
    frac = (pos - centers[idx]) / (centers[idx + 1] - centers[idx])
    return idx, frac


def _bilinear_dense(cys, cxs, values, height, width) -> np.ndarray:
    jy, ty = _interp_axis(cys, height)
    jx, tx = _interp_axis(cxs, width)
    v00 = values[np.ix_(jy, jx)]
    v01 = values[np.ix_(jy, jx + 1)]
    v10 = values[np.ix_(jy + 1, jx)]
    v11 = values[np.ix_(jy + 1, jx + 1)]
    ty = ty[:, None]
    tx = tx[None, :]
    return (1 - ty) * ((1 - tx) * v00 + tx * v01) + ty * ((1 - tx) * v10 + tx * v11)


def _window_vector(frame_a, frame_b_padded, pad, cy, cx, cfg):
    """Displacement of one window, or None when it has no usable texture.

    After the first correlation the frame-B window is re-extracted at the
    integer peak offset and correlated again, so the subpixel fit always
    sees a full-overlap peak near the map center (integer re-centering).
    """
    w = cfg.window_size
    half = w // 2
    win_a = frame_a[cy - half : cy + half, cx - half : cx + half]
    win_b = frame_b_padded[pad + cy - half : pad + cy + half, pad + cx - half : pad + cx + half]
    corr = correlate_windows(win_a, win_b, cfg.correlation)
    if corr is None:
        return None
    off_y = corr.peak_y - half
    off_x = corr.peak_x - half
    if off_y or off_x:
        oy = pad + cy + off_y
        ox = pad + cx + off_x
        win_b_off = frame_b_padded[oy - half : oy + half, ox - half : ox + half]
        recentered = correlate_windows(win_a, win_b_off, cfg.correlation)
        if recentered is not None:
            peak = subpixel_peak(recentered, cfg.peak_fit)
            return off_x + peak.dx, off_y + peak.dy
    peak = subpixel_peak(corr, cfg.peak_fit)
    return peak.dx, peak.dy


def estimate(pair: ImagePair, cfg: EstimatorConfig) -> FlowField:
    """Dense displacement field from windowed cross-correlation.

    Windows with no intensity variance are filled from their neighbors;
    fewer than four correlatable windows raises EstimationError.
    """
    height, width = pair.shape
    w = cfg.window_size
    if w > min(height, width) // 2:
        raise ParameterError(
            f"window_size {w} exceeds half the smaller image extent ({min(height, width)})"
        )
    step = max(1, int(round(w * (1.0 - cfg.overlap))))
    cys = _window_centers(height, w, step)
    cxs = _window_centers(width, w, step)
    if len(cys) < 2 or len(cxs) < 2:
        raise EstimationError("image too small for a 2x2 grid of interrogation windows")

    # reflect padding keeps integer-offset window extraction in bounds
    pad = w
    frame_b_padded = np.pad(pair.frame_b, pad, mode="reflect")

    grid_u = np.zeros((len(cys), len(cxs)))
    grid_v = np.zeros((len(cys), len(cxs)))
    valid = np.zeros((len(cys), len(cxs)), dtype=bool)
    for gy, cy in enumerate(cys):
        for gx, cx in enumerate(cxs):
            vec = _window_vector(pair.frame_a, frame_b_padded, pad, cy, cx, cfg)
            if vec is None:
                continue
            grid_u[gy, gx], grid_v[gy, gx] = vec
            valid[gy, gx] = True

    if valid.sum() < 4:
        raise EstimationError(f"only {int(valid.sum())} valid windows; need at least 4")
    _fill_invalid(grid_u, grid_v, valid)

    # reject vectors wildly inconsistent with their neighborhood and refill
    keep = _median_validate(grid_u, grid_v)
    if keep.sum() >= 4:
        _fill_invalid(grid_u, grid_v, keep)

    u = _bilinear_dense(cys, cxs, grid_u, height, width)
    v = _bilinear_dense(cys, cxs, grid_v, height, width)
    return FlowField(u=u, v=v)
