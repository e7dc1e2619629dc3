"""Effect sizes on the analysis scale, carried as (estimate, variance) pairs."""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class TwoByTwoTable:
    """Event counts and arm totals of a two-arm study.

    Counts may be fractional (e.g. derived from reported percentages).
    """

    events_trt: float
    total_trt: float
    events_ctl: float
    total_ctl: float

    def __post_init__(self):
        for name in ("total_trt", "total_ctl"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 <= self.events_trt <= self.total_trt:
            raise ValueError("events_trt must lie in [0, total_trt]")
        if not 0 <= self.events_ctl <= self.total_ctl:
            raise ValueError("events_ctl must lie in [0, total_ctl]")

    def cells(self) -> tuple[float, float, float, float]:
        return (
            self.events_trt,
            self.total_trt - self.events_trt,
            self.events_ctl,
            self.total_ctl - self.events_ctl,
        )


@dataclass(frozen=True)
class EffectEstimate:
    y: float
    variance: float
    label: str = ""

    def __post_init__(self):
        if not math.isfinite(self.y):
            raise ValueError(f"non-finite estimate for {self.label!r}")
        if not (math.isfinite(self.variance) and self.variance > 0):
            raise ValueError(f"variance must be positive and finite for {self.label!r}")

    @property
    def sigma(self) -> float:
        return math.sqrt(self.variance)


def log_odds_ratio(table: TwoByTwoTable, label: str = "") -> EffectEstimate:
    """Log odds ratio with Woolf variance.

    If any cell is zero, 0.5 is added to all four cells first.
    """
    a, b, c, d = table.cells()
    if min(a, b, c, d) == 0:
        a, b, c, d = a + 0.5, b + 0.5, c + 0.5, d + 0.5
    y = math.log(a * d / (b * c))
    variance = 1 / a + 1 / b + 1 / c + 1 / d
    if not (math.isfinite(y) and math.isfinite(variance)):
        raise ValueError(f"log odds ratio undefined for {label or table!r}")
    return EffectEstimate(y, variance, label)


def logit_proportion(events: float, n: float, label: str = "") -> EffectEstimate:
    """Log odds of a single proportion, ``ln(x / (n - x))``."""
    if not n > 0:
        raise ValueError("n must be positive")
    if not 0 < events < n:
        raise ValueError(f"events must lie strictly between 0 and n (got {events}, {n})")
    nonevents = n - events
    return EffectEstimate(
        math.log(events / nonevents), 1 / events + 1 / nonevents, label
    )


def ratio_of_means_moments(
    m1: float, sd1: float, n1: float, m2: float, sd2: float, n2: float
) -> tuple[float, float]:
    """Log ratio of means and its delta-method variance as a bare pair.

    Unlike :func:`log_ratio_of_means` this does not reject a zero variance.
    """
    if m1 <= 0 or m2 <= 0:
        raise ValueError("means must be positive for a ratio of means")
    if n1 < 1 or n2 < 1:
        raise ValueError("group sizes must be at least 1")
    if sd1 < 0 or sd2 < 0:
        raise ValueError("standard deviations must be non-negative")
    y = math.log(m1 / m2)
    variance = sd1**2 / (n1 * m1**2) + sd2**2 / (n2 * m2**2)
    return y, variance


def log_ratio_of_means(
    m1: float, sd1: float, n1: float, m2: float, sd2: float, n2: float, label: str = ""
) -> EffectEstimate:
    y, variance = ratio_of_means_moments(m1, sd1, n1, m2, sd2, n2)
    return EffectEstimate(y, variance, label)
