"""Built-in test problems: the cubic x^3 - 1 and the sextic x^6 + 30x^3 - 125x^2 - 5x + 120."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numeric import Polynomial


@dataclass(frozen=True)
class Example:
    number: int
    polynomial: Polynomial
    bases: dict  # case label -> base vector
    seeds: dict  # case label -> default master seed
    alphas: tuple
    roots: tuple | None = None


EXAMPLES = {
    1: Example(
        number=1,
        polynomial=Polynomial([-1, 0, 0, 1]),
        bases={
            "1": (70008.0, -90005.5, 17009.5),
            "2": (708.0, -905.5, 179.5 - 1j),
        },
        seeds={"1": 1, "2": 2},
        alphas=(0.0, 1.0, 2.0, 3.0, 4.0, 5.0),
        roots=tuple(np.exp(2j * np.pi * np.arange(3) / 3)),
    ),
    2: Example(
        number=2,
        polynomial=Polynomial([120, -5, -125, 30, 0, 0, 1]),
        bases={
            "1": (-15.0, -13.9, 30.8, -30.8, 10.7, 20.7),
            "2": (-10.0, -5.9, 15.8, 12.8, 5.7, 13.9),
        },
        seeds={"1": 1, "2": 2},
        alphas=(0.0, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0),
    ),
}


def get_example(number: int) -> Example:
    try:
        return EXAMPLES[int(number)]
    except KeyError:
        raise ValueError(f"unknown example {number}; choose from {sorted(EXAMPLES)}") from None


# A start for x^3 - 1 where fixed alpha = 0 oscillates and then breaks down,
# while switching to alpha = 3 recovers all three roots.
UNSTABLE_START = (-6.5 + 3j, -9.2 - 5.4j, 6.2 - 2.2j)
