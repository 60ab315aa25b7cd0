"""Perturbed initial-vector ensembles, parameter scans and their CSV files."""

from __future__ import annotations

import re
import zlib
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import CsvParseError
from .numeric import Polynomial, format_real
from .solvers import Method, SolverParams, run_batch


class Observable(str, Enum):
    STEP_NORM = "sk"
    RESIDUAL_NORM = "rk"


@dataclass(frozen=True)
class EnsembleConfig:
    base_vector: tuple
    n_runs: int = 1000
    n_iters: int = 50
    jitter_frac: float = 0.01
    alphas: tuple = (0.0, 1.0, 2.0, 3.0, 4.0, 5.0)
    beta: float = 1.0
    master_seed: int = 1
    case_label: str = "1"

    def __post_init__(self):
        object.__setattr__(self, "base_vector", tuple(complex(v) for v in self.base_vector))
        object.__setattr__(self, "alphas", tuple(float(a) for a in self.alphas))
        if self.n_runs < 1:
            raise ValueError("n_runs must be >= 1")
        if self.n_iters < 1:
            raise ValueError("n_iters must be >= 1")
        if not self.jitter_frac >= 0:
            raise ValueError("jitter_frac must be >= 0")
        if self.master_seed < 0:
            raise ValueError("master_seed must be unsigned")


@dataclass
class EnsembleMatrix:
    values: np.ndarray
    observable: Observable
    case_label: str = ""
    alpha: float = float("nan")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def filename(self) -> str:
        return matrix_filename(self.case_label, self.alpha, self.observable)


def matrix_filename(case_label: str, alpha: float, observable: Observable) -> str:
    return f"case{case_label}_alpha{format_real(alpha)}_{Observable(observable).value}.csv"


def initials_filename(case_label: str) -> str:
    return f"case{case_label}_initials.csv"


_NAME_RE = re.compile(r"^case(?P<case>.+)_alpha(?P<alpha>[^_]+)_(?P<obs>sk|rk)\.csv$")


def parse_matrix_filename(name: str):
    """``(case_label, alpha, observable)`` or ``None`` when the name does not match."""
    m = _NAME_RE.match(Path(name).name)
    if m is None:
        return None
    try:
        alpha = float(m["alpha"])
    except ValueError:
        return None
    return m["case"], alpha, Observable(m["obs"])


def run_stream(master_seed: int, case_label: str, run_index: int) -> np.random.Generator:
    """Independent RNG stream for one run, fixed by (seed, case, index)."""
    label_key = zlib.crc32(case_label.encode("utf-8"))
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(label_key, run_index))
    return np.random.default_rng(ss)


def generate_initials(config: EnsembleConfig) -> np.ndarray:
    """``n_runs`` starting vectors ``base + delta * v_j`` with unit complex directions ``v_j``.

    ``delta = jitter_frac * ||base||_2``. Each direction comes from 2d standard
    normals viewed as d complex numbers and normalised.
    """
    base = np.array(config.base_vector, dtype=complex)
    d = base.size
    delta = config.jitter_frac * float(np.linalg.norm(base))
    out = np.empty((config.n_runs, d), dtype=complex)
    for j in range(config.n_runs):
        g = run_stream(config.master_seed, config.case_label, j).standard_normal(2 * d)
        v = g[:d] + 1j * g[d:]
        out[j] = base + delta * (v / np.linalg.norm(v))
    return out


def run_ensemble(
    f: Polynomial,
    config: EnsembleConfig,
    alpha: float,
    initials: np.ndarray | None = None,
    method: Method = Method.INVM,
    chunk_size: int | None = None,
) -> tuple[EnsembleMatrix, EnsembleMatrix]:
    """Run every initial vector for exactly ``n_iters`` steps and collect S and R.

    Rows are independent, so ``chunk_size`` only bounds memory; the output
    does not depend on it.
    """
    if len(config.base_vector) != f.degree:
        raise ValueError(
            f"base vector has {len(config.base_vector)} components, polynomial degree is {f.degree}"
        )
    X0 = generate_initials(config) if initials is None else np.asarray(initials, dtype=complex)
    params = SolverParams(alpha=float(alpha), beta=config.beta, max_iters=config.n_iters)
    step = chunk_size or len(X0)
    S_parts, R_parts = [], []
    for start in range(0, len(X0), step):
        res = run_batch(f, X0[start : start + step], params, method, early_stop=False)
        S_parts.append(res.step_norms)
        R_parts.append(res.residual_norms)
    S = EnsembleMatrix(np.vstack(S_parts), Observable.STEP_NORM, config.case_label, float(alpha))
    R = EnsembleMatrix(np.vstack(R_parts), Observable.RESIDUAL_NORM, config.case_label, float(alpha))
    return S, R


def _write_rows(path: Path, rows) -> Path:
    text = "".join(",".join(format_real(v) for v in row) + "\n" for row in rows)
    try:
        with open(path, "w", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def write_matrix_csv(m: EnsembleMatrix, directory) -> Path:
    """Headerless CSV named ``case{c}_alpha{a}_{sk|rk}.csv``."""
    return _write_rows(Path(directory) / m.filename, m.values)


def write_initials_csv(vectors, path) -> Path:
    """One row per run: ``re_1,im_1,...,re_d,im_d``."""
    X = np.asarray(vectors, dtype=complex)
    if X.ndim != 2:
        raise ValueError("expected a sequence of equal-length vectors")
    flat = np.empty((X.shape[0], 2 * X.shape[1]))
    flat[:, 0::2] = X.real
    flat[:, 1::2] = X.imag
    return _write_rows(Path(path), flat)


def _read_rows(path: Path) -> np.ndarray:
    try:
        text = path.read_text()
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror or exc}") from exc
    rows = []
    width = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split(",")
        if width is None:
            width = len(fields)
        elif len(fields) != width:
            raise CsvParseError(path, lineno, f"expected {width} fields, found {len(fields)}")
        try:
            rows.append([float(v) for v in fields])
        except ValueError:
            raise CsvParseError(path, lineno, "non-numeric field") from None
    if not rows:
        raise CsvParseError(path, 1, "file contains no data")
    return np.array(rows, dtype=float)


def read_matrix_csv(path) -> EnsembleMatrix:
    path = Path(path)
    values = _read_rows(path)
    meta = parse_matrix_filename(path.name)
    if meta is None:
        return EnsembleMatrix(values, Observable.STEP_NORM)
    case, alpha, obs = meta
    return EnsembleMatrix(values, obs, case, alpha)


def read_initials_csv(path) -> np.ndarray:
    flat = _read_rows(Path(path))
    if flat.shape[1] % 2:
        raise CsvParseError(path, 1, "odd number of columns")
    return flat[:, 0::2] + 1j * flat[:, 1::2]


@dataclass
class ScanResult:
    initials: np.ndarray
    matrices: list[EnsembleMatrix] = field(default_factory=list)


def parameter_scan(
    f: Polynomial, config: EnsembleConfig, alphas: Sequence[float] | None = None
) -> ScanResult:
    """Run the same initials for every alpha of the grid."""
    initials = generate_initials(config)
    out = ScanResult(initials)
    for a in config.alphas if alphas is None else alphas:
        out.matrices.extend(run_ensemble(f, config, a, initials=initials))
    return out
