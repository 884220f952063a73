"""Evaluation metrics: capacity use, FC track error, ages and missed targets."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Region

ERROR_BIN_M = 0.5
CDF_THRESHOLDS_M = (10, 25, 50, 75, 100, 150, 200, 300, 400, 500)


@dataclass
class StepRecord:
    t: int
    selected_count: int
    mean_age: float
    peak_age_running: float
    mean_error_m: float
    tracked_count: int
    covered_untracked: int
    uncovered: int


@dataclass
class PeakAgeAccumulator:
    """Ages seen just before each reset (the first report of a track is not a reset)."""

    samples: list = field(default_factory=list)

    def add(self, ages) -> None:
        for a in np.atleast_1d(ages):
            if a < 1:
                raise ValueError("a pre-reset age is at least one step")
            self.samples.append(float(a))

    @property
    def count(self) -> int:
        return len(self.samples)


def peak_age(acc: PeakAgeAccumulator | list) -> float | None:
    """Mean pre-reset age; ``None`` when nothing was ever reset."""
    samples = acc.samples if isinstance(acc, PeakAgeAccumulator) else list(acc)
    if not samples:
        return None
    return float(np.mean(samples))


def error_cdf(errors, thresholds) -> np.ndarray:
    errors = np.asarray(errors, dtype=float)
    thresholds = np.asarray(thresholds, dtype=float)
    if errors.size == 0:
        return np.zeros(0)
    srt = np.sort(errors)
    return np.searchsorted(srt, thresholds, side="right") / errors.size


def hist_cdf(hist: np.ndarray, thresholds_m, bin_m: float = ERROR_BIN_M) -> np.ndarray:
    """``P(error <= x)`` from a histogram of errors binned at ``bin_m``.

    Thresholds should sit on bin edges for an exact answer.
    """
    total = hist.sum()
    if total == 0:
        return np.full(len(thresholds_m), np.nan)
    cum = np.concatenate([[0], np.cumsum(hist)])
    idx = np.clip(np.round(np.asarray(thresholds_m) / bin_m).astype(int), 0, len(hist))
    return cum[idx] / total


def hist_quantile(hist: np.ndarray, q: float, bin_m: float = ERROR_BIN_M) -> float:
    """Quantile of binned errors with linear interpolation inside the bin."""
    total = hist.sum()
    if total == 0:
        return float("nan")
    cum = np.cumsum(hist)
    target = q * total
    i = int(np.searchsorted(cum, target, side="left"))
    prev = cum[i - 1] if i > 0 else 0
    frac = (target - prev) / hist[i] if hist[i] else 0.0
    return float((i + frac) * bin_m)


@dataclass
class Scatter:
    slope: float | None
    intercept: float | None
    ci: tuple[float, float] | None = None


def ols(x, y) -> tuple[float | None, float | None]:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 2 or np.ptp(x) == 0.0:
        return None, None
    xm, ym = x.mean(), y.mean()
    slope = float(np.sum((x - xm) * (y - ym)) / np.sum((x - xm) ** 2))
    return slope, float(ym - slope * xm)


def entropy_update_scatter(entropy, rate, rng: np.random.Generator | None = None, n_boot: int = 2000, level: float = 0.95) -> Scatter:
    """Least-squares line of per-target update rate on entropy rate.

    With an ``rng`` a percentile bootstrap interval for the slope is added.
    """
    slope, icpt = ols(entropy, rate)
    if slope is None or rng is None:
        return Scatter(slope, icpt)
    x = np.asarray(entropy, dtype=float)
    y = np.asarray(rate, dtype=float)
    n = len(x)
    idx = rng.integers(0, n, size=(n_boot, n))
    xb, yb = x[idx], y[idx]
    xm = xb.mean(axis=1, keepdims=True)
    ym = yb.mean(axis=1, keepdims=True)
    den = np.sum((xb - xm) ** 2, axis=1)
    ok = den > 0
    slopes = np.sum((xb - xm) * (yb - ym), axis=1)[ok] / den[ok]
    lo, hi = np.quantile(slopes, [(1 - level) / 2, 1 - (1 - level) / 2])
    return Scatter(slope, icpt, (float(lo), float(hi)))


def missed_targets(covered: np.ndarray, alive: np.ndarray, tracked: np.ndarray) -> tuple[int, int]:
    """(covered but untracked, uncovered) counts over alive targets."""
    covered = covered & alive
    return int(np.sum(covered & ~tracked)), int(np.sum(alive & ~covered))


def match_tracks(fc_pos: np.ndarray, truth_pos: np.ndarray, radius_km: float, region: Region | None, wrap: bool):
    """Nearest truth index and distance (km) per FC track; -1 when beyond ``radius_km``."""
    if len(fc_pos) == 0 or len(truth_pos) == 0:
        return np.full(len(fc_pos), -1, dtype=np.int64), np.full(len(fc_pos), np.inf)
    d = fc_pos[:, None, :] - truth_pos[None, :, :]
    if wrap:
        size = region.size
        d -= size * np.round(d / size)
    dist = np.hypot(d[..., 0], d[..., 1])
    j = np.argmin(dist, axis=1)
    best = dist[np.arange(len(fc_pos)), j]
    return np.where(best <= radius_km, j, -1), best


class RunRecorder:
    """Accumulates the per-step record of one (replication, policy) run."""

    def __init__(self, n_targets: int, steps: int, match_radius_km: float, region: Region, wrap: bool):
        self.n_targets = n_targets
        self.match_radius = match_radius_km
        self.region = region
        self.wrap = wrap
        self.rows = np.zeros((steps, 7))
        self.k = 0
        n_bins = int(np.ceil(match_radius_km * 1000.0 / ERROR_BIN_M)) + 1
        self.hist = np.zeros(n_bins, dtype=np.int64)
        self.updates = np.zeros(n_targets, dtype=np.int64)
        self.tracked_steps = np.zeros(n_targets, dtype=np.int64)
        self.age_sum = 0.0
        self.age_n = 0

    def record(self, t, selected_count, ages, fc_pos, peak_running, truth_pos, alive, covered, updated_targets) -> StepRecord:
        alive_idx = np.flatnonzero(alive)
        j, dist = match_tracks(fc_pos, truth_pos[alive_idx], self.match_radius, self.region, self.wrap)
        ok = j >= 0
        err_m = dist[ok] * 1000.0
        if len(err_m):
            b = np.minimum((err_m / ERROR_BIN_M).astype(np.int64), len(self.hist) - 1)
            np.add.at(self.hist, b, 1)
        tracked = np.zeros(len(alive), dtype=bool)
        tracked[alive_idx[j[ok]]] = True
        self.tracked_steps += tracked
        if len(updated_targets):
            upd = np.zeros(len(alive), dtype=bool)
            upd[updated_targets] = True
            self.updates += upd & tracked
        cu, un = missed_targets(covered, alive, tracked)
        mean_age = float(np.mean(ages)) if len(ages) else float("nan")
        self.age_sum += float(np.sum(ages))
        self.age_n += len(ages)
        rec = StepRecord(
            t=t,
            selected_count=int(selected_count),
            mean_age=mean_age,
            peak_age_running=peak_running,
            mean_error_m=float(err_m.mean()) if len(err_m) else float("nan"),
            tracked_count=int(tracked.sum()),
            covered_untracked=cu,
            uncovered=un,
        )
        self.rows[self.k] = (
            rec.selected_count,
            rec.mean_age,
            rec.peak_age_running,
            rec.mean_error_m,
            rec.tracked_count,
            rec.covered_untracked,
            rec.uncovered,
        )
        self.k += 1
        return rec

    @property
    def mean_age(self) -> float:
        return self.age_sum / self.age_n if self.age_n else float("nan")
