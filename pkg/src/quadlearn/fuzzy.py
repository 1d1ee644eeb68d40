"""Expert correction signal from (e, de).

``fuzzy_mapping`` is the closed-form surrogate used in flight;
``mamdani_oracle`` evaluates the underlying 3x3 rule base explicitly and is
kept as an independent cross-check.

Both take errors in the convention e = y* - y, so a positive correction pushes
the axis output toward reducing the error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Output singletons
BIG_DECREASE, SMALL_DECREASE, NO_CHANGE, SMALL_INCREASE, BIG_INCREASE = -1.0, -0.5, 0.0, 0.5, 1.0

# RULES[e_set][de_set], sets ordered (negative, zero, positive)
RULES = (
    (BIG_DECREASE, SMALL_DECREASE, NO_CHANGE),
    (BIG_DECREASE, NO_CHANGE, BIG_INCREASE),
    (NO_CHANGE, SMALL_INCREASE, BIG_INCREASE),
)


@dataclass(frozen=True)
class FuzzyParams:
    """Per-axis rates (x/y in rad, z in m/s) and input normalizers.

    The defaults were tuned on the disturbed fast-circle and square flights:
    a wide error universe leaves the rate term dominant, which adds damping
    rather than stiffness to the learned policy.
    """

    alpha: tuple[float, float, float] = (0.003, 0.003, 0.05)
    e_scale: float = 8.0
    de_scale: float = 1.0

    def __post_init__(self) -> None:
        if min(self.alpha) < 0:
            raise ValueError("alpha must be non-negative")
        if self.e_scale <= 0 or self.de_scale <= 0:
            raise ValueError("normalizers must be positive")


def normalize(e, de, params: FuzzyParams) -> tuple[np.ndarray, np.ndarray]:
    en = np.clip(np.asarray(e, dtype=float) / params.e_scale, -1.0, 1.0)
    dn = np.clip(np.asarray(de, dtype=float) / params.de_scale, -1.0, 1.0)
    return en, dn


def fuzzy_mapping(e, de, params: FuzzyParams, alpha=None) -> np.ndarray:
    """alpha * (e/2 + de - |e| * de / 2) on normalized, clipped inputs.

    ``alpha`` defaults to the per-axis rates in ``params`` and broadcasts
    against the inputs.
    """
    en, dn = normalize(e, de, params)
    a = np.asarray(params.alpha if alpha is None else alpha, dtype=float)
    return a * (0.5 * en + dn - 0.5 * np.abs(en) * dn)


def memberships(x: float) -> tuple[float, float, float]:
    """Triangular (negative, zero, positive) grades on [-1, 1]."""
    return max(-x, 0.0), 1.0 - abs(x), max(x, 0.0)


def mamdani_oracle(e: float, de: float, params: FuzzyParams, alpha: float | None = None) -> float:
    """Rule-base evaluation: product t-norm, weighted average of singletons."""
    en, dn = (float(v) for v in normalize(e, de, params))
    a = params.alpha[0] if alpha is None else alpha
    me, md = memberships(en), memberships(dn)
    num = den = 0.0
    for i in range(3):
        for j in range(3):
            w = me[i] * md[j]
            num += w * RULES[i][j]
            den += w
    return a * num / den
