"""Sliding-window local Lyapunov exponents from ensembles of scalar series.

For a window ending at ``t_end`` every run contributes a micro-series of
length ``look_back + h_max``. A k-nearest-neighbour regressor forecasts the
value ``h`` steps past the look-back segment; the growth of the geometric
mean absolute forecast error with ``h`` gives the local exponent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .ensemble import EnsembleMatrix, Observable
from .errors import CsvParseError, InsufficientDataError
from .numeric import format_real

TWO_SEGMENT_GAIN = 0.95
SSE_RTOL = 1e-12


@dataclass(frozen=True)
class LleParams:
    look_back: int = 5
    h_min: int = 1
    h_max: int = 5
    h_step: int = 1
    k_neighbors: int = 3
    test_fraction: float = 0.4
    split_seed: int = 0
    gmae_floor: float = 1e-30
    shared_split: bool = True

    def __post_init__(self):
        if self.look_back < 1 or self.h_min < 1 or self.h_step < 1 or self.k_neighbors < 1:
            raise ValueError("look_back, h_min, h_step and k_neighbors must be >= 1")
        if self.h_max < self.h_min:
            raise ValueError("h_max must be >= h_min")
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError("test_fraction must lie in (0, 1)")
        if not self.gmae_floor > 0:
            raise ValueError("gmae_floor must be > 0")

    @property
    def micro_length(self) -> int:
        return self.look_back + self.h_max

    @property
    def horizons(self) -> list[int]:
        return list(range(self.h_min, self.h_max + 1, self.h_step))

    @property
    def min_rows(self) -> int:
        return math.ceil(1.0 / (1.0 - self.test_fraction)) + self.k_neighbors


@dataclass(frozen=True)
class SlopeFit:
    lambda1: float
    sse: float
    segments: int = 1
    lambda2: Optional[float] = None
    h_split: Optional[int] = None
    intercept1: float = 0.0
    intercept2: Optional[float] = None

    def predict(self, h: float) -> float:
        if self.segments == 2 and h > self.h_split:
            return self.lambda2 * h + self.intercept2
        return self.lambda1 * h + self.intercept1


@dataclass
class LyapunovProfile:
    entries: list[tuple[int, SlopeFit]]
    observable: Observable = Observable.STEP_NORM
    case_label: str = ""
    alpha: float = float("nan")
    curves: dict = field(default_factory=dict, repr=False)

    @property
    def t_end(self) -> np.ndarray:
        return np.array([t for t, _ in self.entries])

    @property
    def lambda1(self) -> np.ndarray:
        return np.array([fit.lambda1 for _, fit in self.entries])

    def __len__(self):
        return len(self.entries)


def make_batch(X, t_end: int, params: LleParams) -> np.ndarray:
    """Columns ``t_end - L .. t_end - 1`` of every run."""
    values = X.values if isinstance(X, EnsembleMatrix) else np.asarray(X, dtype=float)
    L = params.micro_length
    if not L <= t_end <= values.shape[1]:
        raise IndexError(f"t_end={t_end} outside [{L}, {values.shape[1]}]")
    return values[:, t_end - L : t_end]


def split_indices(n_rows: int, test_fraction: float, seed) -> tuple[np.ndarray, np.ndarray]:
    """Seeded permutation; the first ``ceil((1 - test_fraction) * n)`` rows train.

    Both index sets are returned sorted so neighbour ties resolve to the
    lower row index.
    """
    n_train = math.ceil((1.0 - test_fraction) * n_rows)
    perm = np.random.default_rng(seed).permutation(n_rows)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def neighbour_mask(train_x: np.ndarray, test_x: np.ndarray, k: int) -> np.ndarray:
    """Boolean ``(n_test, n_train)`` mask selecting exactly ``k`` nearest training rows.

    Distances are squared Euclidean; ties at the k-th distance go to the
    lower training index.
    """
    diff = test_x[:, None, :] - train_x[None, :, :]
    d2 = np.sum(diff * diff, axis=-1)
    kth = np.partition(d2, k - 1, axis=1)[:, k - 1 : k]
    less = d2 < kth
    tie = d2 == kth
    need = k - less.sum(axis=1, keepdims=True)
    return less | (tie & (np.cumsum(tie, axis=1) <= need))


def _predict(mask: np.ndarray, train_y: np.ndarray, k: int) -> np.ndarray:
    return np.where(mask, train_y[None, :], 0.0).sum(axis=1) / k


def geometric_mean_error(errors: np.ndarray, floor: float) -> float:
    e = np.abs(np.asarray(errors, dtype=float))
    if e.size == 0 or np.any(e == 0):
        return floor
    return max(float(np.exp(np.mean(np.log(e)))), floor)


def knn_gmae(U, h: int, params: LleParams, split=None) -> float:
    """Geometric mean absolute test error of the horizon-``h`` kNN forecast.

    ``split`` is an optional ``(train_idx, test_idx)`` pair; by default it is
    drawn from ``params.split_seed``.
    """
    U = np.asarray(U, dtype=float)
    if not params.h_min <= h <= params.h_max:
        raise ValueError(f"horizon {h} outside [{params.h_min}, {params.h_max}]")
    lb = params.look_back
    if U.shape[1] < lb + h:
        raise ValueError(f"micro-series of length {U.shape[1]} too short for horizon {h}")
    if split is None:
        if U.shape[0] < params.min_rows:
            raise InsufficientDataError(
                f"{U.shape[0]} rows; need at least {params.min_rows} for a train/test split"
            )
        split = split_indices(U.shape[0], params.test_fraction, params.split_seed)
    train, test = _check_split(split, params)
    mask = neighbour_mask(U[train, :lb], U[test, :lb], params.k_neighbors)
    return _gmae_from_mask(U, h, train, test, mask, params)


def _check_split(split, params):
    train, test = (np.asarray(s, dtype=int) for s in split)
    if len(train) < params.k_neighbors or len(test) == 0:
        raise InsufficientDataError(
            f"{len(train)} training and {len(test)} test rows for k={params.k_neighbors}"
        )
    return train, test


def _gmae_from_mask(U, h, train, test, mask, params) -> float:
    target = U[:, params.look_back - 1 + h]
    pred = _predict(mask, target[train], params.k_neighbors)
    return geometric_mean_error(pred - target[test], params.gmae_floor)


def log_gmae_curve(U, params: LleParams, seed=None) -> list[tuple[int, float]]:
    """``(h, ln GMAE(h))`` over the horizon grid.

    With ``params.shared_split`` one split (seeded by ``seed``, default
    ``params.split_seed``) serves every horizon; otherwise each horizon draws
    its own from ``(seed, h)``.
    """
    U = np.asarray(U, dtype=float)
    if U.shape[0] < params.min_rows:
        raise InsufficientDataError(
            f"{U.shape[0]} rows; need at least {params.min_rows} for a train/test split"
        )
    seed = params.split_seed if seed is None else seed
    lb, k = params.look_back, params.k_neighbors
    if U.shape[1] < lb + params.h_max:
        raise ValueError(f"micro-series of length {U.shape[1]} shorter than {lb + params.h_max}")
    out = []
    mask = None
    for h in params.horizons:
        if params.shared_split:
            if mask is None:
                train, test = _check_split(split_indices(U.shape[0], params.test_fraction, seed), params)
                mask = neighbour_mask(U[train, :lb], U[test, :lb], k)
            m = mask
        else:
            split = split_indices(U.shape[0], params.test_fraction, _as_entropy(seed) + [h])
            train, test = _check_split(split, params)
            m = neighbour_mask(U[train, :lb], U[test, :lb], k)
        out.append((h, math.log(_gmae_from_mask(U, h, train, test, m, params))))
    return out


def _as_entropy(seed) -> list[int]:
    return list(seed) if isinstance(seed, (list, tuple)) else [int(seed)]


def _line(h: np.ndarray, y: np.ndarray):
    hm, ym = h.mean(), y.mean()
    dh = h - hm
    slope = float(np.dot(dh, y - ym) / np.dot(dh, dh))
    intercept = float(ym - slope * hm)
    resid = y - (slope * h + intercept)
    return slope, intercept, float(np.dot(resid, resid))


def fit_best_slope(points: Sequence[tuple[float, float]], params: LleParams | None = None) -> SlopeFit:
    """One- or two-segment least-squares fit of ``y`` against ``h``.

    Two segments (each with at least two points, split strictly inside the
    horizon range) replace the single line only when they cut the total SSE
    below 95% of the single-line SSE by more than round-off. Among splits
    with equal SSE the later one wins, keeping the first segment long.
    """
    pts = sorted((float(h), float(y)) for h, y in points)
    if len(pts) < 2:
        raise InsufficientDataError("need at least two points for a slope")
    h = np.array([p[0] for p in pts])
    y = np.array([p[1] for p in pts])
    if np.ptp(h) == 0:
        raise InsufficientDataError("all points share one horizon")
    a1, b1, sse1 = _line(h, y)
    best = SlopeFit(lambda1=a1, sse=sse1, intercept1=b1)
    # SSE differences below this are round-off, not structure
    noise = SSE_RTOL * (1.0 + float(np.dot(y - y.mean(), y - y.mean())))

    best_two = None
    for cut in range(2, len(h) - 1):
        left, right = slice(0, cut), slice(cut, None)
        split_h = h[cut - 1]
        if not h[0] < split_h < h[-1] or h[cut] == split_h:
            continue
        la, lb_, ls = _line(h[left], y[left])
        ra, rb, rs = _line(h[right], y[right])
        total = ls + rs
        if best_two is None or total <= best_two.sse + noise:
            best_two = SlopeFit(la, total, 2, ra, int(round(split_h)), lb_, rb)
    if best_two is not None and best_two.sse < TWO_SEGMENT_GAIN * sse1 and sse1 - best_two.sse > noise:
        return best_two
    return best


def lyapunov_profile(X: EnsembleMatrix, params: LleParams, keep_curves: bool = False) -> LyapunovProfile:
    """lambda_1 for every window end ``t_end = L .. n_iters``."""
    values = X.values
    L = params.micro_length
    if L > values.shape[1]:
        raise InsufficientDataError(f"micro length {L} exceeds {values.shape[1]} iterations")
    entries, curves = [], {}
    for t_end in range(L, values.shape[1] + 1):
        U = make_batch(values, t_end, params)
        curve = log_gmae_curve(U, params, seed=[params.split_seed, t_end])
        entries.append((t_end, fit_best_slope(curve, params)))
        if keep_curves:
            curves[t_end] = curve
    return LyapunovProfile(entries, X.observable, X.case_label, X.alpha, curves)


PROFILE_HEADER = "t_end,lambda1,lambda2,h_split,segments,sse"


def _opt(v) -> str:
    return "" if v is None else format_real(v) if isinstance(v, float) else str(v)


def write_profile_csv(profile: LyapunovProfile, path) -> Path:
    lines = [PROFILE_HEADER]
    for t_end, fit in profile.entries:
        lines.append(
            f"{t_end},{format_real(fit.lambda1)},{_opt(fit.lambda2)},"
            f"{_opt(fit.h_split)},{fit.segments},{format_real(fit.sse)}"
        )
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path


def read_profile_csv(path, observable=Observable.STEP_NORM, case_label="", alpha=float("nan")) -> LyapunovProfile:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines or lines[0].strip() != PROFILE_HEADER:
        raise CsvParseError(path, 1, f"expected header {PROFILE_HEADER!r}")
    entries = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 6:
            raise CsvParseError(path, lineno, f"expected 6 fields, found {len(parts)}")
        try:
            t_end, l1, l2, hs, seg, sse = parts
            fit = SlopeFit(
                lambda1=float(l1),
                sse=float(sse),
                segments=int(seg),
                lambda2=float(l2) if l2 else None,
                h_split=int(hs) if hs else None,
            )
            entries.append((int(t_end), fit))
        except ValueError:
            raise CsvParseError(path, lineno, "malformed field") from None
    if not entries:
        raise CsvParseError(path, 1, "profile has no rows")
    return LyapunovProfile(entries, Observable(observable), case_label, alpha)


def write_curves_csv(profile: LyapunovProfile, path) -> Path:
    """Per-window ``(h, y(h))`` points with the selected fit evaluated at each ``h``."""
    lines = ["t_end,h,y,y_fit"]
    fits = dict(profile.entries)
    for t_end, curve in sorted(profile.curves.items()):
        for h, y in curve:
            lines.append(f"{t_end},{h},{format_real(y)},{format_real(fits[t_end].predict(h))}")
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path


def write_log_error_csv(profile: LyapunovProfile, path) -> Path:
    """``y(h_min)`` per window: the log forecast error at the shortest horizon."""
    lines = ["t_end,y_hmin"]
    for t_end, curve in sorted(profile.curves.items()):
        lines.append(f"{t_end},{format_real(curve[0][1])}")
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path
