"""Simultaneous root-finding iterations: WDK, Nourein, ZHM and the inverse scheme INVM.

Every method is written once as a kernel on a batch of approximation vectors
of shape ``(m, n)``. The public ``*_step`` functions wrap a single vector and
raise on degenerate input; :func:`run_batch` drives whole ensembles and turns
the same failures into a ``diverged`` status instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from itertools import permutations
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (
    DegenerateDerivativeError,
    DegenerateInputError,
    InsufficientDataError,
    NonFiniteError,
)
from .numeric import Polynomial, caputo_values, format_real, gamma, poly_eval, principal_power

SEPARATION_FLOOR = 1e-13
ROOT_HIT = 1e-300
DIVERGENCE_CAP = 1e12
COC_FLOOR = 1e-14

_OK, _DEGENERATE, _DEGENERATE_DERIVATIVE = 0, 1, 2


class Method(str, Enum):
    WDK = "WDK"
    NOUREIN = "NOUREIN"
    ZHM = "ZHM"
    INVM = "INVM"


class Status(str, Enum):
    CONVERGED = "converged"
    MAX_ITERS = "max_iters_reached"
    DIVERGED = "diverged"


@dataclass(frozen=True)
class SolverParams:
    alpha: float = 0.0
    beta: float = 1.0
    max_iters: int = 50
    tol: float = 1e-12
    divergence_cap: float = DIVERGENCE_CAP

    def __post_init__(self):
        if not math.isfinite(self.alpha):
            raise ValueError("alpha must be finite")
        if not 0.0 < self.beta <= 1.0:
            raise ValueError(f"beta must lie in (0, 1], got {self.beta}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if not self.divergence_cap > self.tol:
            raise ValueError("divergence_cap must exceed tol")


@dataclass
class SolverTrace:
    """Iterate history of one run.

    ``step_norms[k]`` is ``||x[k+1] - x[k]||`` and ``residual_norms[k]`` is
    ``||f(x[k])||``. Once a run diverges its norms are held at the divergence
    cap. The offending iterate is not stored, so ``iterates`` ends at the last
    finite state.
    """

    iterates: list[np.ndarray]
    step_norms: np.ndarray
    residual_norms: np.ndarray
    status: Status
    iterations_used: int
    alphas: Optional[np.ndarray] = None

    @property
    def final(self) -> np.ndarray:
        return self.iterates[-1]

    def final_residual(self, f: Polynomial) -> float:
        return float(_norm(poly_eval(f, self.final)))

    def write_csv(self, path) -> Path:
        path = Path(path)
        lines = ["k,s_k,r_k"]
        for k, (s, r) in enumerate(zip(self.step_norms, self.residual_norms)):
            lines.append(f"{k},{format_real(s)},{format_real(r)}")
        path.write_text("\n".join(lines) + "\n")
        return path


def _norm(x: np.ndarray) -> np.ndarray:
    # explicit sum so a batch row and a lone vector reduce in the same order
    return np.sqrt(np.sum(x.real * x.real + x.imag * x.imag, axis=-1))


class _Guard:
    """Per-row separation floor and degeneracy bookkeeping for one kernel call."""

    def __init__(self, X: np.ndarray):
        with np.errstate(invalid="ignore"):
            self.floor = SEPARATION_FLOOR * (1.0 + np.max(np.abs(X), axis=-1))
        self.code = np.zeros(X.shape[0], dtype=np.int8)

    def _floor_like(self, d):
        return self.floor.reshape((-1,) + (1,) * (d.ndim - 1))

    def lift(self, d: np.ndarray) -> np.ndarray:
        """Push denominators smaller than the floor outward along their phase."""
        fl = self._floor_like(d)
        mag = np.abs(d)
        small = mag < fl
        if not small.any():
            return d
        phase = np.where(mag == 0, 1.0 + 0.0j, d / np.where(mag == 0, 1.0, mag))
        d = np.where(small, d + fl * phase, d)
        still = np.abs(d) < fl
        if still.any():
            rows = still.reshape(d.shape[0], -1).any(axis=1)
            self.code[rows] = np.maximum(self.code[rows], _DEGENERATE)
        return d

    def require(self, d: np.ndarray) -> np.ndarray:
        """Flag rows whose derivative vanished; returns a safe divisor."""
        small = np.abs(d) < self._floor_like(d)
        if small.any():
            rows = small.reshape(d.shape[0], -1).any(axis=1)
            self.code[rows] = _DEGENERATE_DERIVATIVE
            d = np.where(small, 1.0 + 0.0j, d)
        return d


def _offdiag_differences(X: np.ndarray, Y: np.ndarray, guard: _Guard) -> np.ndarray:
    """D[r, i, j] = X[r, i] - Y[r, j], floored off the diagonal, 1 on it."""
    n = X.shape[-1]
    D = X[:, :, None] - Y[:, None, :]
    eye = np.eye(n, dtype=bool)
    D = np.where(eye, 1.0 + 0.0j, D)
    D = guard.lift(D)
    return np.where(eye, 1.0 + 0.0j, D)


def _weierstrass(f: Polynomial, X: np.ndarray, guard: _Guard):
    fx = poly_eval(f, X)
    D = _offdiag_differences(X, X, guard)
    return fx / np.prod(D, axis=-1), D


def _sum_offdiag(A: np.ndarray) -> np.ndarray:
    n = A.shape[-1]
    return np.sum(np.where(np.eye(n, dtype=bool), 0.0 + 0.0j, A), axis=-1)


def _wdk(f, X, params, guard):
    W, _ = _weierstrass(f, X, guard)
    return X - W


def _nourein_inner(X, W, guard):
    # x_i - P(x_j) - x_j for every pair
    E = X[:, :, None] - W[:, None, :] - X[:, None, :]
    n = X.shape[-1]
    eye = np.eye(n, dtype=bool)
    E = guard.lift(np.where(eye, 1.0 + 0.0j, E))
    return np.where(eye, 1.0 + 0.0j, E)


def _nourein(f, X, params, guard):
    W, _ = _weierstrass(f, X, guard)
    E = _nourein_inner(X, W, guard)
    total = _sum_offdiag(W[:, None, :] / E)
    return X - W / guard.lift(1.0 + total)


def _zhm(f, X, params, guard):
    W, D = _weierstrass(f, X, guard)
    E = _nourein_inner(X, W, guard)
    G = W / guard.lift(_sum_offdiag(D))
    inner = _sum_offdiag(W[:, None, :] / (D * E))
    K = 1.0 + G * G + 4.0 * W * inner
    return X - W / guard.lift(1.0 + G + principal_power(K, 0.5))


def _invm_substeps(f, X, params, guard):
    beta = params.beta
    fx = poly_eval(f, X)
    dc = guard.require(caputo_values(f, beta, X))
    c = gamma(beta + 1.0) * fx / dc
    y = X - principal_power(c, 1.0 / beta)
    fy = poly_eval(f, y)
    hit = np.abs(fy) < ROOT_HIT
    u = fx / np.where(hit, 1.0 + 0.0j, fy)
    t = c * (1.0 + 2.0 * u / guard.lift(1.0 + params.alpha * u))
    z = np.where(hit, y, y - principal_power(t, 1.0 / beta))
    return y, z


def _shift_from_zero(X, guard):
    fl = guard._floor_like(X)
    small = np.abs(X) < fl
    if not small.any():
        return X
    mag = np.abs(X)
    phase = np.where(mag == 0, 1.0 + 0.0j, X / np.where(mag == 0, 1.0, mag))
    return np.where(small, X + fl * phase, X)


def _invm(f, X, params, guard, form="compact"):
    X = _shift_from_zero(X, guard)
    _, z = _invm_substeps(f, X, params, guard)
    fx = poly_eval(f, X)
    prod = np.prod(_offdiag_differences(X, z, guard), axis=-1)
    if form == "compact":
        p_star = fx / prod
        return X - p_star / guard.lift(1.0 + p_star / X)
    if form == "rational":
        return X * X * prod / guard.lift(X * prod + fx)
    raise ValueError(f"unknown form {form!r}")


_KERNELS = {
    Method.WDK: _wdk,
    Method.NOUREIN: _nourein,
    Method.ZHM: _zhm,
    Method.INVM: _invm,
}


def kernel(f: Polynomial, X: np.ndarray, params: SolverParams, method: Method):
    """One step of ``method`` on every row of ``X``.

    Returns ``(X_next, code)`` where ``code`` is 0 for clean rows, 1 for rows
    that hit the separation floor irrecoverably and 2 for rows whose
    derivative vanished.
    """
    X = np.asarray(X, dtype=complex)
    guard = _Guard(X)
    with np.errstate(all="ignore"):
        Xn = _KERNELS[Method(method)](f, X, params, guard)
    return Xn, guard.code


def _as_batch(f: Polynomial, x) -> np.ndarray:
    x = np.asarray(x, dtype=complex)
    if x.ndim != 1 or len(x) != f.degree:
        raise ValueError(f"expected a vector of length {f.degree}, got shape {x.shape}")
    return x[None, :]


def _raise_for(code: int, out: np.ndarray) -> np.ndarray:
    if code == _DEGENERATE_DERIVATIVE:
        raise DegenerateDerivativeError("derivative vanished at an approximation")
    if code == _DEGENERATE:
        raise DegenerateInputError("approximations coincide below the separation floor")
    if not np.all(np.isfinite(out)):
        raise NonFiniteError("step produced non-finite values")
    return out


def _step(f, x, params, method):
    Xn, code = kernel(f, _as_batch(f, x), params, method)
    return _raise_for(int(code[0]), Xn[0])


def wdk_step(f: Polynomial, x) -> np.ndarray:
    """Weierstrass-Durand-Kerner: ``x_i - f(x_i) / prod_{j != i}(x_i - x_j)``."""
    return _step(f, x, SolverParams(), Method.WDK)


def nourein_step(f: Polynomial, x) -> np.ndarray:
    return _step(f, x, SolverParams(), Method.NOUREIN)


def zhm_step(f: Polynomial, x) -> np.ndarray:
    return _step(f, x, SolverParams(), Method.ZHM)


def invm_substeps(f: Polynomial, x, params: SolverParams) -> tuple[np.ndarray, np.ndarray]:
    """The fractional Newton-type predictor ``y`` and corrector ``z`` for every component."""
    X = _as_batch(f, x)
    guard = _Guard(X)
    with np.errstate(all="ignore"):
        y, z = _invm_substeps(f, X, params, guard)
    _raise_for(int(guard.code[0]), np.concatenate([y[0], z[0]]))
    return y[0], z[0]


def invm_step(f: Polynomial, x, params: SolverParams, form: str = "compact") -> np.ndarray:
    """One INVM step.

    ``form="compact"`` uses ``x_i - P*/(1 + P*/x_i)``; ``form="rational"``
    evaluates ``x_i**2 prod / (x_i prod + f(x_i))`` directly. Both equal
    ``x_i**2 / (x_i + P*)`` with ``P* = f(x_i) / prod_{j != i}(x_i - z_j)``.
    """
    X = _as_batch(f, x)
    guard = _Guard(X)
    with np.errstate(all="ignore"):
        Xn = _invm(f, X, params, guard, form=form)
    return _raise_for(int(guard.code[0]), Xn[0])


STEPS = {
    Method.WDK: lambda f, x, params: wdk_step(f, x),
    Method.NOUREIN: lambda f, x, params: nourein_step(f, x),
    Method.ZHM: lambda f, x, params: zhm_step(f, x),
    Method.INVM: invm_step,
}


@dataclass
class BatchResult:
    step_norms: np.ndarray
    residual_norms: np.ndarray
    status: list[Status]
    iterations_used: np.ndarray
    final: np.ndarray
    history: list[np.ndarray] = field(default_factory=list)
    alphas: Optional[np.ndarray] = None


AlphaController = Callable[[int, Sequence[float]], float]


def run_batch(
    f: Polynomial,
    X0,
    params: SolverParams,
    method: Method = Method.INVM,
    early_stop: bool = True,
    keep_history: bool = False,
    alpha_controller: Optional[AlphaController] = None,
) -> BatchResult:
    """Iterate every row of ``X0`` for up to ``params.max_iters`` steps.

    With ``early_stop`` a row stops once the residual of its new iterate is
    at most ``tol`` (converged) or once it diverges. Without it every row
    produces exactly ``max_iters`` observations; diverged rows are frozen and
    their norms held at the cap.

    ``alpha_controller(k, step_norms)`` is consulted before step ``k`` and may
    change alpha; it is only meaningful for a single row.
    """
    X = np.array(X0, dtype=complex, copy=True)
    if X.ndim != 2 or X.shape[1] != f.degree:
        raise ValueError(f"expected shape (m, {f.degree}), got {X.shape}")
    m, K = X.shape[0], params.max_iters
    cap = params.divergence_cap
    S = np.full((m, K), cap)
    R = np.full((m, K), cap)
    status = [Status.MAX_ITERS] * m
    used = np.full(m, K, dtype=int)
    active = np.ones(m, dtype=bool)
    alive = np.ones(m, dtype=bool)
    history = [X.copy()] if keep_history else []
    current = params
    alphas = []

    for k in range(K):
        if alpha_controller is not None:
            a = float(alpha_controller(k, S[0, :k]))
            if a != current.alpha:
                current = SolverParams(a, params.beta, params.max_iters, params.tol, cap)
        alphas.append(current.alpha)
        with np.errstate(all="ignore"):
            r = _norm(poly_eval(f, X))
            Xn, code = kernel(f, X, current, method)
            s = _norm(Xn - X)
        blown = (
            (code != _OK)
            | ~np.all(np.isfinite(Xn), axis=1)
            | np.any(np.abs(Xn) > cap, axis=1)
            | ~np.isfinite(s)
        )
        rec = alive & active
        # live rows keep their true (finite) norms; only failures are pinned to the cap
        R[rec, k] = np.nan_to_num(r[rec], nan=cap, posinf=cap)
        S[rec, k] = np.nan_to_num(s[rec], nan=cap, posinf=cap)

        died = rec & blown
        if died.any():
            S[died, k] = cap
            for i in np.flatnonzero(died):
                status[i] = Status.DIVERGED
            alive[died] = False
            if early_stop:
                active[died] = False
                used[died] = k + 1
        ok = rec & ~blown
        X[ok] = Xn[ok]
        if early_stop and ok.any():
            with np.errstate(all="ignore"):
                done = ok & (_norm(poly_eval(f, X)) <= params.tol)
            for i in np.flatnonzero(done):
                status[i] = Status.CONVERGED
            used[done] = k + 1
            active[done] = False
        if keep_history:
            history.append(X.copy())
        if not active.any():
            break

    return BatchResult(S, R, status, used, X, history, np.array(alphas))


def run_solver(
    f: Polynomial,
    x0,
    params: SolverParams,
    method: Method = Method.INVM,
    early_stop: bool = True,
    alpha_controller: Optional[AlphaController] = None,
) -> SolverTrace:
    """Run one trajectory and record the step and residual norms of every iteration."""
    X0 = _as_batch(f, x0)
    res = run_batch(
        f, X0, params, method, early_stop=early_stop, keep_history=True,
        alpha_controller=alpha_controller,
    )
    n_used = int(res.iterations_used[0])
    status = res.status[0]
    n_states = n_used if status == Status.DIVERGED and early_stop else n_used + 1
    # frozen rows repeat their last state; keep only distinct history entries
    iterates = [h[0].copy() for h in res.history[:n_states]]
    if status == Status.DIVERGED and not early_stop:
        iterates = _trim_frozen(iterates)
    return SolverTrace(
        iterates=iterates,
        step_norms=res.step_norms[0, :n_used].copy(),
        residual_norms=res.residual_norms[0, :n_used].copy(),
        status=status,
        iterations_used=n_used,
        alphas=res.alphas[:n_used].copy(),
    )


def _trim_frozen(iterates):
    out = iterates[:1]
    for x in iterates[1:]:
        if not np.array_equal(x, out[-1]):
            out.append(x)
    return out


def computational_order(errors: Sequence[float], floor: float = 0.0) -> float:
    """Three-term estimate ``ln(e_k/e_{k-1}) / ln(e_{k-1}/e_{k-2})``.

    Uses the last three entries that are finite and above ``floor``; they
    must be strictly decreasing. For measured binary64 traces pass
    ``floor=COC_FLOOR`` so round-off plateaus are ignored.
    """
    e = [float(v) for v in errors if math.isfinite(v) and v > floor]
    if len(e) < 3:
        raise InsufficientDataError(f"need three errors above {floor:g}, got {len(e)}")
    e0, e1, e2 = e[-3:]
    if not e0 > e1 > e2:
        raise InsufficientDataError(f"errors not strictly decreasing: {e0:g}, {e1:g}, {e2:g}")
    return math.log(e2 / e1) / math.log(e1 / e0)


def root_errors(iterates: Sequence[np.ndarray], roots) -> np.ndarray:
    """Max-norm distance of each iterate to the nearest matching root set.

    Components are paired with roots by the assignment that is closest for
    the final iterate.
    """
    roots = np.asarray(roots, dtype=complex)
    last = iterates[-1]
    order = _match(last, roots)
    matched = roots[order]
    return np.array([np.max(np.abs(x - matched)) for x in iterates])


def _match(x, roots):
    n = len(roots)
    if n <= 7:
        best = min(permutations(range(n)), key=lambda p: np.sum(np.abs(x - roots[list(p)])))
        return list(best)
    return [int(np.argmin(np.abs(roots - xi))) for xi in x]
