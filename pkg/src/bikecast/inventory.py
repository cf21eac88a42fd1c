"""Starting-inventory optimization via the user dissatisfaction function.

The expected number of dissatisfied users over a day, as a function of the
starting inventory ``s``, accumulates lost pickups while the station is empty
and lost returns while it is full:

    UDF(s) = integral over [0, T] of
             l_p * mu(t) * p(s, 0, t)  +  l_r * lam(t) * p(s, C, t)  dt

with ``p`` the transient occupancy probabilities from :mod:`.queueing`. The
optimal starting inventory minimizes UDF over s in {0, ..., C}; evaluation is
exhaustive, so the argmin is exact given the UDF values.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass

import numpy as np

from . import queueing
from .errors import DomainError
from .queueing import DEFAULT_SUBSTEPS, RateSeries


@dataclass(frozen=True)
class PenaltyConfig:
    """Unit penalties for a lost pickup and a lost return."""

    lost_pickup: float = 1.0
    lost_return: float = 1.0

    def __post_init__(self):
        if self.lost_pickup < 0 or self.lost_return < 0:
            raise DomainError("penalties must be non-negative")


@dataclass
class UdfCurve:
    """Dissatisfaction cost for every feasible starting inventory.

    ``values[s]`` is UDF(s); ``s_star`` is the smallest minimizer.
    """

    capacity: int
    values: np.ndarray
    s_star: int

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("s,udf_value\n")
        for s, v in enumerate(self.values):
            out.write(f"{s},{v:.12g}\n")
        return out.getvalue()

    def to_json(self, station: str | None = None, date: str | None = None) -> str:
        return json.dumps(
            {
                "station": station,
                "date": date,
                "s_star": int(self.s_star),
                "values": [float(v) for v in self.values],
            }
        )


def _interval_trapezoid(
    grid: np.ndarray,
    empty: np.ndarray,
    full: np.ndarray,
    rates: RateSeries,
    penalties: PenaltyConfig,
    substeps: int,
) -> np.ndarray:
    """Integrate the dissatisfaction rate over the RK4 grid, one interval at
    a time so the piecewise-constant rate factors stay exact at breakpoints.

    ``empty``/``full`` have one row per grid point; columns may be a single
    trajectory or one trajectory per start.
    """
    mu_h, lam_h = rates.hourly()
    h = rates.interval_hours / substeps
    total = np.zeros(empty.shape[1]) if empty.ndim == 2 else 0.0
    for i in range(len(rates)):
        lo = i * substeps
        hi = (i + 1) * substeps
        integrand = (
            penalties.lost_pickup * mu_h[i] * empty[lo : hi + 1]
            + penalties.lost_return * lam_h[i] * full[lo : hi + 1]
        )
        total = total + np.trapezoid(integrand, dx=h, axis=0)
    return total


def udf(
    rates: RateSeries,
    start: int,
    capacity: int,
    penalties: PenaltyConfig = PenaltyConfig(),
    substeps_per_interval: int = DEFAULT_SUBSTEPS,
) -> float:
    """Expected dissatisfied users over the horizon for one starting inventory."""
    traj = queueing.transient_probabilities(rates, start, capacity, substeps_per_interval)
    empty = traj.probs[:, 0:1]
    full = traj.probs[:, capacity : capacity + 1]
    value = _interval_trapezoid(traj.grid, empty, full, rates, penalties, substeps_per_interval)
    return float(value[0])


def udf_curve(
    rates: RateSeries,
    capacity: int,
    penalties: PenaltyConfig = PenaltyConfig(),
    substeps_per_interval: int = DEFAULT_SUBSTEPS,
) -> UdfCurve:
    """Evaluate the UDF for every start in {0, ..., C} and locate the argmin.

    All starts share one matrix-valued integration sweep; ties at the minimum
    go to the smallest inventory (fewer bikes tied up, deterministic tests).
    """
    if capacity < 1:
        raise DomainError(f"capacity must be >= 1, got {capacity}")
    grid, empty, full = queueing.empty_full_probabilities(rates, capacity, substeps_per_interval)
    values = _interval_trapezoid(grid, empty, full, rates, penalties, substeps_per_interval)
    values = np.maximum(values, 0.0)  # roundoff can leave -1e-18 on zero-rate days
    s_star = int(np.argmin(values))  # argmin returns the first (smallest) minimizer
    return UdfCurve(capacity=capacity, values=values, s_star=s_star)


def oracle_decision(
    day_counts,
    capacity: int,
    penalties: PenaltyConfig = PenaltyConfig(),
    substeps_per_interval: int = DEFAULT_SUBSTEPS,
) -> UdfCurve:
    """Decision curve under perfect information about one day's demand.

    ``day_counts`` is a single-day demand series; its realized interval counts
    are used directly as the rates (counts-as-rates).
    """
    n_per_day = 1440 // day_counts.interval_minutes
    if len(day_counts.pickups) != n_per_day:
        raise DomainError(
            f"oracle_decision expects exactly one day of counts, got "
            f"{len(day_counts.pickups)} intervals at {day_counts.interval_minutes} min"
        )
    rates = RateSeries(
        interval_minutes=day_counts.interval_minutes,
        pickup_rates=np.asarray(day_counts.pickups, dtype=float),
        return_rates=np.asarray(day_counts.returns, dtype=float),
    )
    return udf_curve(rates, capacity, penalties, substeps_per_interval)
