"""Arrival timestamps: renewal processes shaped by time-varying rate profiles.

Non-homogeneous streams are produced by time change. Unit-mean IATs are
accumulated in "operational time" and mapped back through the cumulative
intensity of a piecewise-constant rate profile. Inside a segment this is
exactly a renewal process at the segment's rate. An IAT that straddles a
boundary has its remainder rescaled by the ratio of the two rates, so a rate
change never produces an artificial burst.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional, Sequence

import numpy as np

from . import statmodel as sm

CONSTANT = "piecewise-constant"
LINEAR = "piecewise-linear"
LINEAR_RESOLUTION = 60.0  # seconds per step when discretizing linear profiles
IAT_FAMILIES = ("Exponential", "Gamma", "Weibull", "Empirical")


class CoverageError(ValueError):
    """Rate profile does not cover the requested horizon."""


@dataclass(frozen=True)
class RateProfile:
    """Request rate over time.

    ``breakpoints`` are ``(t, rate)`` pairs starting at ``t = 0``. With
    ``period`` set, the pattern repeats (for example a 24 h diurnal cycle).
    ``end`` bounds the time the profile is defined for; ``None`` means the last
    rate holds forever.
    """

    breakpoints: tuple[tuple[float, float], ...]
    interpolation: str = CONSTANT
    period: Optional[float] = None
    end: Optional[float] = None

    def __post_init__(self):
        bps = tuple((float(t), float(r)) for t, r in self.breakpoints)
        if not bps:
            raise sm.ParameterError("rate profile needs at least one breakpoint")
        ts = [t for t, _ in bps]
        if ts[0] != 0.0:
            raise sm.ParameterError("first breakpoint must be at t = 0")
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise sm.ParameterError("breakpoints must be strictly increasing in t")
        if any(r < 0 or not math.isfinite(r) for _, r in bps):
            raise sm.ParameterError("rates must be finite and non-negative")
        if self.interpolation not in (CONSTANT, LINEAR):
            raise sm.ParameterError(f"unknown interpolation {self.interpolation!r}")
        if self.period is not None and not (self.period > ts[-1]):
            raise sm.ParameterError("period must exceed the last breakpoint time")
        object.__setattr__(self, "breakpoints", bps)

    @classmethod
    def constant(cls, rate: float) -> "RateProfile":
        return cls(((0.0, rate),))

    @property
    def _t(self) -> np.ndarray:
        return np.array([t for t, _ in self.breakpoints])

    @property
    def _r(self) -> np.ndarray:
        return np.array([r for _, r in self.breakpoints])

    def _base_points(self) -> tuple[np.ndarray, np.ndarray]:
        t, r = self._t, self._r
        if self.period is not None and self.interpolation == LINEAR:
            t = np.append(t, self.period)
            r = np.append(r, r[0])
        return t, r

    def _cum_base(self, x: np.ndarray) -> np.ndarray:
        """Integral of the rate over [0, x] within one period."""
        t, r = self._base_points()
        if self.interpolation == CONSTANT:
            seg = r[:-1] * np.diff(t)
            slope = np.zeros_like(r)
        else:
            slope = np.zeros_like(r)
            slope[:-1] = np.diff(r) / np.diff(t)
            seg = 0.5 * (r[:-1] + r[1:]) * np.diff(t)
        c = np.concatenate([[0.0], np.cumsum(seg)])
        i = np.searchsorted(t, x, side="right") - 1
        d = x - t[i]
        return c[i] + r[i] * d + 0.5 * slope[i] * d * d

    def cumulative(self, x) -> np.ndarray:
        """Expected number of arrivals in [0, x]."""
        x = np.asarray(x, dtype=float)
        if self.period is None:
            return self._cum_base(x)
        p = self.period
        per = float(self._cum_base(np.array([p]))[0])
        k = np.floor(x / p)
        return k * per + self._cum_base(x - k * p)

    def rate_at(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.period is not None:
            x = np.mod(x, self.period)
        t, r = self._base_points()
        if self.interpolation == CONSTANT:
            return r[np.searchsorted(t, x, side="right") - 1]
        return np.interp(x, t, r)

    def mean_rate(self, horizon: float) -> float:
        return float(self.cumulative(np.array([horizon]))[0]) / horizon

    def segments(self, horizon: float) -> tuple[np.ndarray, np.ndarray]:
        """Piecewise-constant view over [0, horizon): boundaries and rates.

        Linear profiles are averaged over fixed steps so each step keeps the
        exact expected count of the original profile.
        """
        self.check_covers(horizon)
        if self.interpolation == LINEAR:
            bounds = np.arange(0.0, horizon, LINEAR_RESOLUTION)
        elif self.period is None:
            bounds = self._t[self._t < horizon]
        else:
            reps = np.arange(math.ceil(horizon / self.period))[:, None] * self.period
            bounds = (reps + self._t[None, :]).ravel()
            bounds = bounds[bounds < horizon]
        bounds = np.append(bounds, horizon)
        cum = self.cumulative(bounds)
        rates = np.diff(cum) / np.diff(bounds)
        return bounds, np.maximum(rates, 0.0)

    def check_covers(self, horizon: float) -> None:
        if self.end is not None and self.end < horizon:
            raise CoverageError(f"rate profile ends at {self.end:g}s, before horizon {horizon:g}s")

    def scaled(self, factor: float) -> "RateProfile":
        return RateProfile(
            tuple((t, r * factor) for t, r in self.breakpoints), self.interpolation, self.period, self.end
        )

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "breakpoints": [[t, r] for t, r in self.breakpoints],
            "interpolation": self.interpolation,
        }
        if self.period is not None:
            out["period"] = self.period
        if self.end is not None:
            out["end"] = self.end
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RateProfile":
        try:
            return cls(
                tuple(tuple(bp) for bp in data["breakpoints"]),
                data.get("interpolation", CONSTANT),
                data.get("period"),
                data.get("end"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, sm.ParameterError):
                raise
            raise sm.ParameterError(f"bad rate profile: {exc}") from exc


@dataclass(frozen=True)
class ArrivalSpec:
    """IAT family of a renewal process.

    When ``target_cv`` is given, the shape of a Gamma or Weibull family is
    replaced by the one matching that coefficient of variation (the scale is
    irrelevant since IATs are always rescaled to the requested rate).
    """

    iat: sm.Distribution
    target_cv: Optional[float] = None

    def __post_init__(self):
        if self.iat.family not in IAT_FAMILIES:
            raise sm.ParameterError(f"IAT family must be one of {IAT_FAMILIES}, got {self.iat.family}")
        if not (math.isfinite(self.iat.mean()) and self.iat.mean() > 0):
            raise sm.ParameterError("IAT distribution needs a finite positive mean")
        if self.target_cv is None:
            return
        cv = float(self.target_cv)
        if self.iat.family == "Gamma":
            object.__setattr__(self, "iat", sm.Gamma(sm.gamma_shape_for_cv(cv), 1.0))
        elif self.iat.family == "Weibull":
            object.__setattr__(self, "iat", sm.Weibull(sm.weibull_shape_for_cv(cv), 1.0))
        elif self.iat.family == "Exponential":
            if abs(cv - 1.0) > 1e-9:
                raise sm.ParameterError("an Exponential IAT always has CV 1")
        else:
            raise sm.ParameterError("target_cv cannot reshape an Empirical IAT")

    @classmethod
    def poisson(cls) -> "ArrivalSpec":
        return cls(sm.Exponential(1.0))

    @classmethod
    def from_cv(cls, family: str, cv: float) -> "ArrivalSpec":
        seeds = {"Gamma": sm.Gamma(1.0, 1.0), "Weibull": sm.Weibull(1.0, 1.0), "Exponential": sm.Exponential(1.0)}
        if family not in seeds:
            raise sm.ParameterError(f"cannot build {family} from a CV")
        return cls(seeds[family], cv)

    def unit(self) -> sm.Distribution:
        """The IAT family rescaled to mean 1."""
        return self.iat.scaled(1.0 / self.iat.mean())

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"iat": self.iat.to_dict()}
        if self.target_cv is not None:
            out["target_cv"] = self.target_cv
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ArrivalSpec":
        return cls(sm.from_dict(data["iat"]), data.get("target_cv"))


@dataclass(frozen=True)
class TimestampStream:
    timestamps: np.ndarray
    horizon: float

    def __len__(self) -> int:
        return int(self.timestamps.size)

    def iats(self) -> np.ndarray:
        return np.diff(self.timestamps)


def _to_strict_microseconds(t: np.ndarray) -> np.ndarray:
    """Round to whole microseconds and push ties forward by 1 us each."""
    us = np.round(t * 1e6).astype(np.int64)
    steps = np.arange(us.size, dtype=np.int64)
    return np.maximum.accumulate(us - steps) + steps


def modulate(
    spec: ArrivalSpec, profile: RateProfile, horizon: float, stream: np.random.Generator
) -> TimestampStream:
    """Renewal arrivals whose rate follows ``profile`` over [0, horizon)."""
    if not horizon > 0:
        raise sm.ParameterError("horizon must be positive")
    bounds, rates = profile.segments(horizon)
    return modulate_segments(spec, bounds, rates, horizon, stream)


def modulate_segments(
    spec: ArrivalSpec, bounds: np.ndarray, rates: np.ndarray, horizon: float, stream: np.random.Generator
) -> TimestampStream:
    """:func:`modulate` on an already discretized profile.

    ``bounds`` has one more entry than ``rates`` and ends at ``horizon``.
    """
    cum = np.concatenate([[0.0], np.cumsum(rates * np.diff(bounds))])
    total = cum[-1]
    if total <= 0:
        return TimestampStream(np.empty(0), float(horizon))
    unit = spec.unit()

    chunks = []
    reached = 0.0
    batch = int(total + 6 * math.sqrt(total) + 16)
    while reached < total:
        draws = np.asarray(unit.sample(batch, stream), dtype=float)
        cs = reached + np.cumsum(draws)
        chunks.append(cs)
        reached = cs[-1]
        batch = max(16, int((total - reached) * 1.2) + 16)
    u = np.concatenate(chunks)
    u = u[u < total]

    # First segment whose cumulative end exceeds u; zero-rate segments have
    # an empty operational interval and are skipped automatically.
    seg = np.searchsorted(cum[1:], u, side="right")
    seg = np.minimum(seg, rates.size - 1)
    t = bounds[seg] + (u - cum[seg]) / rates[seg]

    us = _to_strict_microseconds(t)
    us = us[us < round(horizon * 1e6)]
    return TimestampStream(us / 1e6, float(horizon))


def sample_renewal(
    spec: ArrivalSpec, mean_rate: float, horizon: float, stream: np.random.Generator
) -> TimestampStream:
    """Stationary-rate renewal process with IAT mean ``1 / mean_rate``."""
    if not mean_rate > 0:
        raise sm.ParameterError("mean_rate must be positive")
    return modulate(spec, RateProfile.constant(mean_rate), horizon, stream)


@dataclass(frozen=True)
class WindowStats:
    """Per-window summary. Length means are filled in by the analyzer."""

    start: float
    window: float
    count: int
    rate: float
    cv: Optional[float]
    mean_input: Optional[float] = None
    mean_output: Optional[float] = None
    mean_answer_fraction: Optional[float] = None
    token_rates: dict = field(default_factory=dict)

    @property
    def end(self) -> float:
        return self.start + self.window


def window_index(timestamps, window: float) -> np.ndarray:
    return np.floor(np.asarray(timestamps, dtype=float) / window).astype(np.int64)


def windowed_cv(timestamps, window: float, n_windows: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-window IAT CV and arrival count; CV is NaN where count < 3."""
    ts = np.asarray(timestamps, dtype=float)
    counts = np.bincount(window_index(ts, window), minlength=n_windows)[:n_windows]
    cvs = np.full(n_windows, np.nan)
    if ts.size < 2:
        return cvs, counts
    iat = np.diff(ts)
    w = window_index(ts[:-1], window)
    keep = w < n_windows
    iat, w = iat[keep], w[keep]
    n = np.bincount(w, minlength=n_windows).astype(float)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.bincount(w, weights=iat, minlength=n_windows) / n
        dev = iat - mean[w]
        var = np.bincount(w, weights=dev * dev, minlength=n_windows) / n
        out = np.sqrt(var) / mean
    ok = (counts >= 3) & (n >= 2) & (mean > 0)
    cvs[ok] = out[ok]
    return cvs, counts


def windowed_stats(
    timestamps: Sequence[float] | TimestampStream, window: float, horizon: Optional[float] = None
) -> list[WindowStats]:
    """Rate and IAT CV per fixed window starting at t = 0.

    An IAT belongs to the window containing its left endpoint. Windows with
    fewer than three arrivals report ``cv=None``.
    """
    if not window > 0:
        raise sm.ParameterError("window must be positive")
    if isinstance(timestamps, TimestampStream):
        horizon = timestamps.horizon if horizon is None else horizon
        timestamps = timestamps.timestamps
    ts = np.asarray(timestamps, dtype=float)
    if ts.size == 0:
        return []
    if horizon is None:
        n_windows = int(ts[-1] // window) + 1
    else:
        n_windows = max(1, math.ceil(horizon / window - 1e-9))
    cvs, counts = windowed_cv(ts, window, n_windows)
    return [
        WindowStats(
            start=i * window,
            window=window,
            count=int(counts[i]),
            rate=counts[i] / window,
            cv=None if np.isnan(cvs[i]) else float(cvs[i]),
        )
        for i in range(n_windows)
    ]
