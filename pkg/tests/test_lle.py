from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from invm_lyap.ensemble import EnsembleMatrix, Observable
from invm_lyap.errors import CsvParseError, InsufficientDataError
from invm_lyap.lle import (
    PROFILE_HEADER,
    LleParams,
    fit_best_slope,
    knn_gmae,
    log_gmae_curve,
    lyapunov_profile,
    make_batch,
    read_profile_csv,
    split_indices,
    write_curves_csv,
    write_log_error_csv,
    write_profile_csv,
)

from oracles import knn_gmae_oracle

P = LleParams()


# -- independent oracles


def split_candidates(points):
    """One-line fit plus every admissible two-segment fit, via numpy.polyfit."""
    h = np.array([p[0] for p in points], dtype=float)
    y = np.array([p[1] for p in points], dtype=float)

    def fit(hh, yy):
        coef = np.polyfit(hh, yy, 1)
        return coef[0], float(np.sum((np.polyval(coef, hh) - yy) ** 2))

    one = fit(h, y)
    two = {}
    for cut in range(2, len(h) - 1):
        a, sa = fit(h[:cut], y[:cut])
        b, sb = fit(h[cut:], y[cut:])
        two[int(h[cut - 1])] = (sa + sb, a, b)
    return one, two


# -- batching and splits


def test_make_batch_windows():
    X = np.arange(50.0)[None, :].repeat(4, axis=0)
    assert np.array_equal(make_batch(X, 10, P), X[:, :10])
    assert np.array_equal(make_batch(X, 50, P), X[:, 40:])
    valid = [t for t in range(0, 60) if P.micro_length <= t <= 50]
    assert valid == list(range(10, 51)) and len(valid) == 41
    for bad in (9, 51):
        with pytest.raises(IndexError):
            make_batch(X, bad, P)


@given(st.integers(5, 200), st.floats(0.05, 0.95), st.integers(0, 2**31))
def test_split_partitions_rows(n, frac, seed):
    train, test = split_indices(n, frac, seed)
    assert len(train) == math.ceil((1 - frac) * n)
    assert sorted(np.concatenate([train, test]).tolist()) == list(range(n))
    again = split_indices(n, frac, seed)
    assert np.array_equal(train, again[0]) and np.array_equal(test, again[1])


def test_params_validation():
    for kw in ({"look_back": 0}, {"h_max": 0}, {"test_fraction": 1.0}, {"k_neighbors": 0}, {"gmae_floor": 0}):
        with pytest.raises(ValueError):
            LleParams(**kw)
    assert P.micro_length == 10 and P.horizons == [1, 2, 3, 4, 5]


# -- kNN GMAE


def test_hand_example():
    params = LleParams(look_back=2, h_min=1, h_max=1, k_neighbors=1)
    U = np.array([[0, 0, 0], [1, 1, 1], [10, 10, 10], [2, 2, 2]], dtype=float)
    assert knn_gmae(U, 1, params, split=([0, 1, 2], [3])) == 1.0


def test_identical_rows_hit_the_floor():
    U = np.ones((20, 10))
    assert knn_gmae(U, 3, P) == P.gmae_floor
    assert all(y == math.log(P.gmae_floor) for _, y in log_gmae_curve(U, P))


@given(st.integers(8, 20), st.integers(1, 4), st.integers(1, 5), st.integers(0, 10**6), st.data())
@settings(max_examples=50, deadline=None)
def test_knn_matches_brute_force(n, k, h, seed, data):
    params = LleParams(k_neighbors=k, split_seed=seed)
    rng = np.random.default_rng(data.draw(st.integers(0, 2**32 - 1)))
    U = rng.standard_normal((n, params.micro_length)) * rng.uniform(0.1, 10)
    if n < params.min_rows:
        with pytest.raises(InsufficientDataError):
            knn_gmae(U, h, params)
        return
    train, test = split_indices(n, params.test_fraction, seed)
    want = knn_gmae_oracle(U, h, params.look_back, k, train.tolist(), test.tolist(), params.gmae_floor)
    assert knn_gmae(U, h, params) == pytest.approx(want, rel=1e-12)


def test_distance_ties_go_to_lower_index():
    params = LleParams(look_back=1, h_min=1, h_max=1, k_neighbors=1)
    # both training inputs are at distance 1 from the test input
    U = np.array([[-1.0, 5.0], [1.0, 7.0], [0.0, 0.0]])
    assert knn_gmae(U, 1, params, split=([0, 1], [2])) == pytest.approx(5.0, rel=1e-15)


def test_too_few_rows():
    with pytest.raises(InsufficientDataError):
        knn_gmae(np.zeros((4, 10)), 1, P)
    with pytest.raises(InsufficientDataError):
        log_gmae_curve(np.zeros((4, 10)), P)


def test_constructed_growth_curve():
    # identical inputs make every prediction the mean of three zero targets,
    # so each test error at horizon h is exactly 2 * 3**h
    n = 30
    train, test = split_indices(n, P.test_fraction, P.split_seed)
    U = np.zeros((n, P.micro_length))
    for h in P.horizons:
        U[test, P.look_back - 1 + h] = 2.0 * 3.0**h
    for h, y in log_gmae_curve(U, P):
        assert y == pytest.approx(math.log(2) + h * math.log(3), rel=1e-12)
    fit = fit_best_slope(log_gmae_curve(U, P))
    assert fit.segments == 1 and fit.lambda1 == pytest.approx(math.log(3), rel=1e-12)


@given(st.floats(0.01, 100), st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_scale_covariance(c, seed):
    U = np.random.default_rng(seed).standard_normal((40, 10))
    base = log_gmae_curve(U, P)
    scaled = log_gmae_curve(c * U, P)
    for (h, y), (_, ys) in zip(base, scaled):
        assert ys == pytest.approx(y + math.log(c), abs=1e-9)
    assert fit_best_slope(scaled).lambda1 == pytest.approx(fit_best_slope(base).lambda1, abs=1e-9)


def test_per_horizon_split_differs_from_shared():
    U = np.random.default_rng(1).standard_normal((40, 10))
    shared = log_gmae_curve(U, P, seed=[0, 10])
    fresh = log_gmae_curve(U, LleParams(shared_split=False), seed=[0, 10])
    assert [h for h, _ in shared] == [h for h, _ in fresh]
    assert shared != fresh


# -- slope fitting


def test_collinear_points():
    fit = fit_best_slope([(h, 1.0 * h) for h in range(1, 6)])
    assert (fit.lambda1, fit.segments) == (1.0, 1) and fit.sse == 0.0


def test_two_segment_hand_case():
    fit = fit_best_slope([(1, 0), (2, 0), (3, 0), (4, 2), (5, 4)])
    assert fit.segments == 2 and fit.h_split == 3
    assert fit.lambda1 == pytest.approx(0.0, abs=1e-15)
    assert fit.lambda2 == pytest.approx(2.0)


def test_near_exact_line():
    rng = np.random.default_rng(0)
    pts = [(h, -0.5 * h + 1e-9 * rng.uniform(-1, 1)) for h in range(1, 6)]
    assert fit_best_slope(pts).lambda1 == pytest.approx(-0.5, abs=1e-6)


def test_fit_needs_two_points():
    with pytest.raises(InsufficientDataError):
        fit_best_slope([(1, 0.0)])


@given(st.lists(st.floats(-50, 50), min_size=5, max_size=9))
@settings(max_examples=200)
def test_fit_matches_exhaustive_oracle(ys):
    pts = list(zip(range(1, len(ys) + 1), ys))
    fit = fit_best_slope(pts)
    (slope, sse1), two = split_candidates(pts)
    best = min(v[0] for v in two.values())
    tol = 1e-9 * (1.0 + float(np.var(ys)) * len(ys))
    if fit.segments == 2:
        assert best < 0.95 * sse1 + tol
        sse, a, b = two[fit.h_split]
        assert fit.sse == pytest.approx(best, abs=tol) and sse == pytest.approx(best, abs=tol)
        assert (fit.lambda1, fit.lambda2) == (pytest.approx(a, abs=1e-7), pytest.approx(b, abs=1e-7))
    else:
        assert not best < 0.95 * sse1 - tol
        assert fit.lambda1 == pytest.approx(slope, abs=1e-7)
        assert fit.sse == pytest.approx(sse1, abs=tol)


def test_equal_sse_splits_prefer_the_later_one():
    # splitting after h=2 or after h=3 both fit exactly
    fit = fit_best_slope([(1, 0), (2, 0), (3, 0), (4, 2), (5, 4)])
    assert fit.h_split == 3


@given(st.floats(-5, 5), st.floats(-5, 5))
def test_collinear_never_two_segments(a, b):
    fit = fit_best_slope([(h, a * h + b) for h in range(1, 6)])
    assert fit.segments == 1
    assert fit.lambda1 == pytest.approx(a, abs=1e-12)
    assert fit.sse <= 1e-18 * max(1.0, a * a + b * b)


# -- profiles


def _matrix(values, obs=Observable.STEP_NORM):
    return EnsembleMatrix(np.asarray(values, dtype=float), obs, "1", 3.0)


def test_constant_rows_give_flat_profile():
    prof = lyapunov_profile(_matrix(np.full((30, 50), 2.5)), P)
    assert len(prof) == 41
    assert list(prof.t_end) == list(range(10, 51))
    assert np.all(prof.lambda1 == 0.0)


def test_profile_is_deterministic():
    X = _matrix(np.random.default_rng(4).lognormal(size=(60, 20)))
    a, b = lyapunov_profile(X, P), lyapunov_profile(X, P)
    assert a.entries == b.entries
    assert len(a) == 11


def test_profile_needs_enough_iterations():
    with pytest.raises(InsufficientDataError):
        lyapunov_profile(_matrix(np.ones((30, 8))), P)


def test_synthetic_decay_is_contractive():
    rng = np.random.default_rng(0)
    a = rng.uniform(0.5, 1.5, size=(1000, 1))
    X = a * 0.8 ** np.arange(50) * (1 + 0.01 * rng.standard_normal((1000, 50)))
    lam = lyapunov_profile(_matrix(X), P).lambda1
    assert abs(np.median(lam) - math.log(0.8)) <= 0.05
    assert np.mean(lam < 0) >= 0.8


# -- files


def test_profile_csv_roundtrip(tmp_path):
    X = _matrix(np.random.default_rng(5).lognormal(size=(40, 14)))
    prof = lyapunov_profile(X, P, keep_curves=True)
    path = write_profile_csv(prof, tmp_path / "p.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == PROFILE_HEADER and len(lines) == 1 + len(prof)
    back = read_profile_csv(path, Observable.STEP_NORM, "1", 3.0)
    assert [t for t, _ in back.entries] == list(prof.t_end)
    assert np.array_equal(back.lambda1, prof.lambda1)
    for (_, f1), (_, f2) in zip(prof.entries, back.entries):
        assert (f1.segments, f1.h_split, f1.lambda2, f1.sse) == (f2.segments, f2.h_split, f2.lambda2, f2.sse)

    curves = write_curves_csv(prof, tmp_path / "c.csv").read_text().splitlines()
    assert curves[0] == "t_end,h,y,y_fit" and len(curves) == 1 + 5 * len(prof)
    logerr = write_log_error_csv(prof, tmp_path / "l.csv").read_text().splitlines()
    assert logerr[0] == "t_end,y_hmin" and len(logerr) == 1 + len(prof)


def test_one_segment_rows_have_empty_fields(tmp_path):
    prof = lyapunov_profile(_matrix(np.full((30, 12), 1.0)), P)
    row = write_profile_csv(prof, tmp_path / "p.csv").read_text().splitlines()[1]
    assert row == "10,0,,,1,0"


@pytest.mark.parametrize("text", ["", "t,l\n1,2\n", PROFILE_HEADER + "\n10,x,,,1,0\n", PROFILE_HEADER + "\n"])
def test_profile_parse_errors(tmp_path, text):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    with pytest.raises(CsvParseError):
        read_profile_csv(p)
