"""Complex scalar primitives, polynomial evaluation and (fractional) derivatives.

All array-accepting functions broadcast elementwise so the same code serves a
single approximation vector and a whole ensemble of them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NonFiniteError

# math.gamma overflows just above this
GAMMA_MAX = 171.6


def gamma(x: float) -> float:
    """Gamma function for positive real arguments.

    Relative error is at the level of a few ulps on (0, 171); integer
    arguments up to 23 are returned as exact factorials.
    """
    x = float(x)
    if not x > 0.0:
        raise DomainError(f"gamma requires x > 0, got {x!r}")
    if x > GAMMA_MAX:
        raise NonFiniteError(f"gamma({x}) overflows binary64")
    return math.gamma(x)


def _canonical_zero_imag(z):
    # -0.0 imaginary parts would put the argument at -pi instead of +pi.
    return np.where(np.imag(z) == 0.0, np.real(z) + 0.0j, z)


def principal_power(z, p: float):
    """``exp(p * Log z)`` on the principal branch, argument in (-pi, pi].

    Works on scalars and arrays. ``0 ** p`` is 0 for ``p > 0``; ``p == 1``
    returns ``z`` unchanged.
    """
    p = float(p)
    if not math.isfinite(p):
        raise DomainError(f"exponent must be finite, got {p!r}")
    scalar = np.ndim(z) == 0
    z = np.asarray(z, dtype=complex)
    if p == 1.0:
        out = z.copy()
    else:
        zero = z == 0
        if p <= 0.0 and np.any(zero):
            raise DomainError(f"0 ** {p} is undefined")
        z = _canonical_zero_imag(z)
        safe = np.where(zero, 1.0 + 0.0j, z)
        if p == 0.5:
            out = np.sqrt(safe)
        else:
            out = np.exp(p * np.log(safe))
        out = np.where(zero, 0.0 + 0.0j, out)
    return complex(out) if scalar else out


@dataclass(frozen=True, eq=False)
class Polynomial:
    """Univariate polynomial with complex coefficients, lowest degree first.

    Trailing zero coefficients are trimmed on construction, so
    ``len(coeffs) == degree + 1`` and the leading coefficient is nonzero.
    """

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=complex).ravel()
        if c.size == 0 or not np.any(c != 0):
            raise DomainError("polynomial needs at least one nonzero coefficient")
        if not np.all(np.isfinite(c)):
            raise DomainError("polynomial coefficients must be finite")
        last = int(np.flatnonzero(c)[-1])
        c = c[: last + 1]
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    @classmethod
    def parse(cls, text: str) -> "Polynomial":
        """Parse ``"-1,0,0,1"`` style lists; coefficients may be ``re`` or ``re+imi``."""
        return cls(parse_complex_list(text))

    def format(self) -> str:
        return ",".join(format_complex(c) for c in self.coeffs)

    def __call__(self, x):
        return poly_eval(self, x)

    def __eq__(self, other):
        if not isinstance(other, Polynomial):
            return NotImplemented
        return np.array_equal(self.coeffs, other.coeffs)

    def __hash__(self):
        return hash(self.coeffs.tobytes())

    def __repr__(self):
        return f"Polynomial({self.format()!r})"


def parse_complex(token: str) -> complex:
    t = token.strip().replace(" ", "")
    if not t:
        raise ValueError("empty complex literal")
    if t.endswith("i"):
        t = t[:-1] + "j"
    try:
        return complex(t)
    except ValueError:
        raise ValueError(f"not a complex number: {token!r}") from None


def parse_complex_list(text: str) -> list[complex]:
    return [parse_complex(tok) for tok in text.split(",")]


def format_real(x: float) -> str:
    """Shortest decimal string that round-trips to the same binary64 value."""
    s = repr(float(x))
    if s.endswith(".0"):
        s = s[:-2]
    return s


def format_complex(z: complex) -> str:
    z = complex(z)
    if z.imag == 0.0:
        return format_real(z.real)
    im = format_real(z.imag)
    sign = "" if im.startswith("-") else "+"
    return f"{format_real(z.real)}{sign}{im}i"


def poly_eval(f: Polynomial, x):
    """Horner evaluation of ``f`` at ``x`` (scalar or array)."""
    scalar = np.ndim(x) == 0
    x = np.asarray(x, dtype=complex)
    acc = np.full(x.shape, f.coeffs[-1], dtype=complex)
    for c in f.coeffs[-2::-1]:
        acc = acc * x + c
    return complex(acc) if scalar else acc


def classical_derivative(f: Polynomial) -> Polynomial:
    if f.degree < 1:
        raise DomainError("derivative of a constant is the zero polynomial")
    n = np.arange(1, f.degree + 1)
    return Polynomial(f.coeffs[1:] * n)


def caputo_derivative(f: Polynomial, beta: float, x):
    """Caputo derivative of order ``beta`` in (0, 1] of ``f`` evaluated at ``x``.

    Term-wise rule ``D[x**n] = Gamma(n+1)/Gamma(n-beta+1) * x**(n-beta)``,
    continued to complex ``x`` with principal powers. ``beta == 1`` is the
    ordinary derivative.
    """
    beta = float(beta)
    if not 0.0 < beta <= 1.0:
        raise DomainError(f"beta must lie in (0, 1], got {beta!r}")
    scalar = np.ndim(x) == 0
    out = caputo_values(f, beta, np.asarray(x, dtype=complex))
    if not np.all(np.isfinite(out)):
        raise NonFiniteError("Caputo derivative overflowed")
    return complex(out) if scalar else out


def caputo_values(f: Polynomial, beta: float, x: np.ndarray) -> np.ndarray:
    # Unchecked array form used by the solver kernels; non-finite values pass through.
    if f.degree == 0:
        return np.zeros(x.shape, dtype=complex)
    if beta == 1.0:
        return poly_eval(classical_derivative(f), x)
    out = np.zeros(x.shape, dtype=complex)
    for n in range(1, f.degree + 1):
        c = f.coeffs[n]
        if c == 0:
            continue
        ratio = gamma(n + 1) / gamma(n - beta + 1)
        out = out + (c * ratio) * principal_power(x, n - beta)
    return out
