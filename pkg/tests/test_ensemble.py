from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from invm_lyap.ensemble import (
    EnsembleConfig,
    EnsembleMatrix,
    Observable,
    generate_initials,
    initials_filename,
    matrix_filename,
    parameter_scan,
    parse_matrix_filename,
    read_initials_csv,
    read_matrix_csv,
    run_ensemble,
    write_initials_csv,
    write_matrix_csv,
)
from invm_lyap.errors import CsvParseError
from invm_lyap.presets import get_example
from invm_lyap.solvers import DIVERGENCE_CAP, SolverParams, Status, run_batch

EX1 = get_example(1)
CUBIC = EX1.polynomial


def _cfg(**kw):
    base = dict(base_vector=EX1.bases["2"], n_runs=20, n_iters=12, master_seed=2, case_label="2")
    base.update(kw)
    return EnsembleConfig(**base)


# -- initials


def test_zero_jitter_gives_base():
    X = generate_initials(_cfg(jitter_frac=0.0))
    assert np.all(X == np.array(EX1.bases["2"]))


@given(st.floats(1e-4, 0.5), st.integers(0, 2**32 - 1), st.text(min_size=1, max_size=5))
@settings(max_examples=30, deadline=None)
def test_perturbation_radius(jitter, seed, label):
    cfg = _cfg(jitter_frac=jitter, master_seed=seed, case_label=label, n_runs=8)
    base = np.array(cfg.base_vector)
    delta = jitter * np.linalg.norm(base)
    dist = np.linalg.norm(generate_initials(cfg) - base, axis=1)
    assert np.allclose(dist, delta, rtol=1e-12, atol=0)


def test_initials_deterministic_and_seed_sensitive():
    a = generate_initials(_cfg())
    assert np.array_equal(a, generate_initials(_cfg()))
    assert not np.array_equal(a, generate_initials(_cfg(master_seed=3)))
    assert not np.array_equal(a, generate_initials(_cfg(case_label="1")))


def test_initials_prefix_stable():
    # each run has its own stream, so a shorter ensemble is a prefix of a longer one
    short = generate_initials(_cfg(n_runs=5))
    long = generate_initials(_cfg(n_runs=50))
    assert np.array_equal(short, long[:5])


def test_config_validation():
    for kw in ({"n_runs": 0}, {"n_iters": 0}, {"jitter_frac": -0.1}, {"master_seed": -1}):
        with pytest.raises(ValueError):
            _cfg(**kw)


# -- runs


def test_shapes_and_entries():
    S, R = run_ensemble(CUBIC, _cfg(n_runs=3, n_iters=5), 3.0)
    for m in (S, R):
        assert m.shape == (3, 5)
        assert np.all(np.isfinite(m.values)) and np.all(m.values >= 0)
    assert S.observable == Observable.STEP_NORM and R.observable == Observable.RESIDUAL_NORM


def test_rows_at_roots_stay_at_roots():
    cfg = _cfg(base_vector=EX1.roots, jitter_frac=0.0, n_runs=4, n_iters=6)
    _, R = run_ensemble(CUBIC, cfg, 3.0)
    assert np.all(R.values <= 1e-12)


def test_rows_match_single_batches():
    cfg = _cfg(n_runs=6, n_iters=15)
    X0 = generate_initials(cfg)
    S, R = run_ensemble(CUBIC, cfg, 2.0)
    for j in range(len(X0)):
        one = run_batch(CUBIC, X0[j : j + 1], SolverParams(alpha=2.0, max_iters=15), early_stop=False)
        assert np.array_equal(S.values[j], one.step_norms[0])
        assert np.array_equal(R.values[j], one.residual_norms[0])


@pytest.mark.parametrize("chunk", [1, 4, 7])
def test_chunking_does_not_change_output(chunk):
    cfg = _cfg(n_runs=13)
    full = run_ensemble(CUBIC, cfg, 1.0)
    parts = run_ensemble(CUBIC, cfg, 1.0, chunk_size=chunk)
    for a, b in zip(full, parts):
        assert np.array_equal(a.values, b.values)


def test_diverged_rows_hold_the_cap():
    cfg = EnsembleConfig(EX1.bases["1"], n_runs=30, n_iters=50, master_seed=1, case_label="1")
    X0 = generate_initials(cfg)
    S, R = run_ensemble(CUBIC, cfg, 1.0, initials=X0)
    res = run_batch(CUBIC, X0, SolverParams(alpha=1.0, max_iters=50), early_stop=False)
    dead = [i for i, s in enumerate(res.status) if s == Status.DIVERGED]
    assert dead
    for i in dead:
        k = int(np.argmax(S.values[i] == DIVERGENCE_CAP))
        assert np.all(S.values[i, k:] == DIVERGENCE_CAP)
        assert np.all(R.values[i, k + 1 :] == DIVERGENCE_CAP)


def test_alpha_zero_early_decay_is_irregular():
    cfg = EnsembleConfig(EX1.bases["2"], n_runs=50, n_iters=50, master_seed=2, case_label="2")
    _, R = run_ensemble(CUBIC, cfg, 0.0)
    early = np.diff(R.values[:, :15], axis=1)
    assert np.mean(np.any(early > 0, axis=1)) > 0.5


def test_wrong_dimension_rejected():
    with pytest.raises(ValueError):
        run_ensemble(get_example(2).polynomial, _cfg(), 0.0)


def test_scan_reuses_initials():
    cfg = _cfg(n_runs=5, n_iters=6, alphas=(0.0, 3.0))
    scan = parameter_scan(CUBIC, cfg)
    assert len(scan.matrices) == 4
    assert np.array_equal(scan.initials, generate_initials(cfg))
    S3, _ = run_ensemble(CUBIC, cfg, 3.0)
    assert np.array_equal(scan.matrices[2].values, S3.values)


# -- files


def test_filenames():
    assert matrix_filename("1", 3.0, Observable.STEP_NORM) == "case1_alpha3_sk.csv"
    assert matrix_filename("2", 0.5, Observable.RESIDUAL_NORM) == "case2_alpha0.5_rk.csv"
    assert initials_filename("1") == "case1_initials.csv"
    assert parse_matrix_filename("case1_alpha3_sk.csv") == ("1", 3.0, Observable.STEP_NORM)
    assert parse_matrix_filename("case1_initials.csv") is None


def test_ones_matrix_text(tmp_path):
    m = EnsembleMatrix(np.ones((2, 3)), Observable.STEP_NORM, "1", 3.0)
    p = write_matrix_csv(m, tmp_path)
    assert p.name == "case1_alpha3_sk.csv"
    assert p.read_bytes() == b"1,1,1\n1,1,1\n"


reals = st.floats(0, 1e300, allow_nan=False, allow_infinity=False)


@given(st.integers(1, 5), st.integers(1, 6), st.data())
@settings(max_examples=40, deadline=None)
def test_matrix_roundtrip_bit_exact(tmp_path_factory, rows, cols, data):
    vals = np.array(data.draw(st.lists(reals, min_size=rows * cols, max_size=rows * cols))).reshape(rows, cols)
    d = tmp_path_factory.mktemp("m")
    m = EnsembleMatrix(vals, Observable.RESIDUAL_NORM, "7", 1.5)
    back = read_matrix_csv(write_matrix_csv(m, d))
    assert np.array_equal(back.values, vals)
    assert (back.case_label, back.alpha, back.observable) == ("7", 1.5, Observable.RESIDUAL_NORM)


def test_initials_row_layout(tmp_path):
    p = write_initials_csv([[1 + 2j, 3]], tmp_path / "i.csv")
    assert p.read_text() == "1,2,3,0\n"


def test_initials_roundtrip_and_base_columns(tmp_path):
    X = generate_initials(_cfg(base_vector=EX1.bases["1"], jitter_frac=0.0, n_runs=4))
    p = write_initials_csv(X, tmp_path / "i.csv")
    assert np.array_equal(read_initials_csv(p), X)
    rows = set(p.read_text().splitlines())
    assert rows == {"70008,0,-90005.5,0,17009.5,0"}
    X = generate_initials(_cfg())
    assert np.array_equal(read_initials_csv(write_initials_csv(X, tmp_path / "j.csv")), X)


@pytest.mark.parametrize(
    "text,line",
    [("", 1), ("1,2\n3\n", 2), ("1,2\n3,x\n", 2), ("1,2\n\n3,4\n5,6,7\n", 4)],
)
def test_parse_errors_carry_line(tmp_path, text, line):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    with pytest.raises(CsvParseError) as exc:
        read_matrix_csv(p)
    assert exc.value.line == line


def test_full_size_dimensions(tmp_path):
    m = EnsembleMatrix(np.full((1000, 50), 0.25), Observable.STEP_NORM, "1", 0.0)
    assert read_matrix_csv(write_matrix_csv(m, tmp_path)).shape == (1000, 50)
