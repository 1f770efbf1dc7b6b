"""Deterministic and probabilistic forecast scoring with seasonal rollups.

Scores: MAPE on the point forecast (with a floor excluding near-zero
actuals), and per-level ACE / PIAW / Winkler on the interval bounds.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import PreconditionError

log = logging.getLogger(__name__)

SEASONS = ("spring", "summer", "autumn", "winter")
TOTAL = "Total"


def season_of(timestamp) -> str:
    """Meteorological season of a timestamp: Mar-May spring, Jun-Aug summer,
    Sep-Nov autumn, Dec-Feb winter."""
    month = timestamp.month
    if 3 <= month <= 5:
        return "spring"
    if 6 <= month <= 8:
        return "summer"
    if 9 <= month <= 11:
        return "autumn"
    return "winter"


@dataclass(frozen=True)
class EvalRecord:
    """One scored timestep: actual vs point forecast plus interval bounds
    per level, tagged with its season."""

    timestep: int
    actual: float
    point: float
    bounds: dict[float, tuple[float, float]]
    season: str

    def __post_init__(self) -> None:
        values = [self.actual, self.point]
        for lo, hi in self.bounds.values():
            values += [lo, hi]
            if lo > hi:
                raise PreconditionError(f"interval bounds inverted at timestep {self.timestep}")
        if not np.all(np.isfinite(values)):
            raise PreconditionError(f"non-finite values at timestep {self.timestep}")
        if self.season not in SEASONS:
            raise PreconditionError(f"unknown season tag {self.season!r}")


def excluded_count(actual: np.ndarray, floor: float) -> int:
    """Number of points MAPE would skip for the given floor."""
    return int(np.sum(np.abs(np.asarray(actual, dtype=np.float64)) < floor))


def mape(actual: np.ndarray, predicted: np.ndarray, floor: float) -> float:
    """Mean absolute percentage error over points with |actual| >= floor.

    Exclusions are counted and logged; an all-excluded input is an error.
    """
    actual = np.asarray(actual, dtype=np.float64)
    predicted = np.asarray(predicted, dtype=np.float64)
    if actual.shape != predicted.shape:
        raise PreconditionError(f"length mismatch {actual.shape} vs {predicted.shape}")
    if floor <= 0:
        raise PreconditionError(f"MAPE floor must be positive, got {floor}")
    keep = np.abs(actual) >= floor
    skipped = int(np.sum(~keep))
    if skipped:
        log.info("MAPE floor %.6g excluded %d of %d points", floor, skipped, len(actual))
    if not np.any(keep):
        raise PreconditionError("all points fall below the MAPE floor")
    return float(np.mean(np.abs(actual[keep] - predicted[keep]) / np.abs(actual[keep])) * 100.0)


def _bounds_for(records: list[EvalRecord], gamma: float) -> tuple[np.ndarray, ...]:
    if not records:
        raise PreconditionError("no records to score")
    try:
        pairs = [r.bounds[gamma] for r in records]
    except KeyError as e:
        raise PreconditionError(f"records carry no bounds for level {gamma}") from e
    lower = np.array([p[0] for p in pairs])
    upper = np.array([p[1] for p in pairs])
    actual = np.array([r.actual for r in records])
    return actual, lower, upper


def ace(records: list[EvalRecord], gamma: float) -> float:
    """Average coverage error in percent: (empirical closed-interval
    coverage - gamma) * 100."""
    actual, lower, upper = _bounds_for(records, gamma)
    coverage = float(np.mean((actual >= lower) & (actual <= upper)))
    return (coverage - gamma) * 100.0


def piaw(records: list[EvalRecord], gamma: float) -> float:
    """Mean interval width."""
    _, lower, upper = _bounds_for(records, gamma)
    return float(np.mean(upper - lower))


def winkler(records: list[EvalRecord], gamma: float) -> float:
    """Mean Winkler interval score with 2/alpha miss penalties,
    alpha = 1 - gamma."""
    alpha = 1.0 - gamma
    if alpha <= 0.0:
        raise PreconditionError(f"winkler needs gamma < 1, got {gamma}")
    actual, lower, upper = _bounds_for(records, gamma)
    width = upper - lower
    below = actual < lower
    above = actual > upper
    scores = width.copy()
    scores[below] += (2.0 / alpha) * (lower[below] - actual[below])
    scores[above] += (2.0 / alpha) * (actual[above] - upper[above])
    return float(np.mean(scores))


@dataclass(frozen=True)
class MetricReport:
    """Per-season and total metric table."""

    sections: dict[str, dict]  # season (or Total) -> metric dict
    gammas: list[float] = field(default_factory=list)
    mape_floor: float = 0.0

    def to_csv(self) -> str:
        cols = ["season", "count", "MAPE"]
        for g in self.gammas:
            tag = f"{int(round(g * 100))}"
            cols += [f"ACE_{tag}", f"PIAW_{tag}", f"Winkler_{tag}"]
        lines = [",".join(cols)]
        for name, sec in self.sections.items():
            row = [name, str(sec["count"]), f"{sec['mape']:.6f}"]
            for g in self.gammas:
                row += [
                    f"{sec['ace'][g]:.6f}",
                    f"{sec['piaw'][g]:.6f}",
                    f"{sec['winkler'][g]:.6f}",
                ]
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        payload = {
            "mape_floor": self.mape_floor,
            "gammas": self.gammas,
            "sections": {
                name: {
                    "count": sec["count"],
                    "mape": sec["mape"],
                    "ace": {str(g): sec["ace"][g] for g in self.gammas},
                    "piaw": {str(g): sec["piaw"][g] for g in self.gammas},
                    "winkler": {str(g): sec["winkler"][g] for g in self.gammas},
                }
                for name, sec in self.sections.items()
            },
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def _section(records: list[EvalRecord], gammas: list[float], floor: float) -> dict:
    actual = np.array([r.actual for r in records])
    point = np.array([r.point for r in records])
    return {
        "count": len(records),
        "mape": mape(actual, point, floor),
        "ace": {g: ace(records, g) for g in gammas},
        "piaw": {g: piaw(records, g) for g in gammas},
        "winkler": {g: winkler(records, g) for g in gammas},
    }


def seasonal_report(
    records: list[EvalRecord], gammas: list[float], floor: float | None = None
) -> MetricReport:
    """Score per season plus a Total row over everything.

    The MAPE floor defaults to 0.01 * mean(|actual|) over the whole
    evaluation set (net load can cross zero); empty season buckets are
    omitted with a warning.
    """
    if not records:
        raise PreconditionError("no records to report on")
    if floor is None:
        floor = 0.01 * float(np.mean(np.abs([r.actual for r in records])))
        if floor <= 0.0:
            floor = 1e-9
    sections: dict[str, dict] = {}
    for season in SEASONS:
        bucket = [r for r in records if r.season == season]
        if not bucket:
            log.warning("season %s has no records; omitted from the report", season)
            continue
        sections[season] = _section(bucket, gammas, floor)
    sections[TOTAL] = _section(records, gammas, floor)
    return MetricReport(sections=sections, gammas=list(gammas), mape_floor=floor)
