"""Workload statistics: windowed summaries, IAT fit reports, rate-vs-length
scatter and workload-to-workload divergence."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from . import statmodel as sm
from .arrival import WindowStats, window_index, windowed_cv
from .composer import Workload
from .datamodel import MODALITIES

RATE_WINDOW = 300.0
FIT_WINDOW = 1200.0
SCATTER_WINDOW = 3.0
MIN_FIT_IATS = 100
MIN_SCATTER_COUNT = 3
FIT_FAMILIES = ("Exponential", "Gamma", "Weibull")


def _n_windows(horizon: float, window: float) -> int:
    return max(1, math.ceil(horizon / window - 1e-9))


def _window_means(idx: np.ndarray, values: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    counts = np.bincount(idx, minlength=n)[:n]
    sums = np.bincount(idx, weights=values, minlength=n)[:n]
    return sums, counts


def summarize(workload: Workload, window: float = RATE_WINDOW) -> list[WindowStats]:
    """One :class:`WindowStats` per window covering [0, horizon)."""
    if not window > 0:
        raise sm.ParameterError("window must be positive")
    if not workload.records:
        return []
    ts = workload.timestamps()
    n = _n_windows(max(workload.horizon, ts[-1] + 1e-9), window)
    idx = np.minimum(window_index(ts, window), n - 1)
    cvs, counts = windowed_cv(ts, window, n)
    in_sum, _ = _window_means(idx, workload.column("input_tokens"), n)
    out_sum, _ = _window_means(idx, workload.column("output_tokens"), n)

    answer = workload.column("answer_tokens")
    has_answer = ~np.isnan(answer)
    if has_answer.any():
        frac = np.where(has_answer, answer / workload.column("output_tokens"), 0.0)
        frac_sum = np.bincount(idx, weights=frac, minlength=n)[:n]
        frac_n = np.bincount(idx, weights=has_answer.astype(float), minlength=n)[:n]
    modal_sums = {}
    if workload.category == "multimodal" or any(r.modal_items for r in workload.records):
        for m in MODALITIES:
            modal_sums[m] = np.bincount(idx, weights=workload.modal_tokens(m), minlength=n)[:n]

    stats = []
    for i in range(n):
        c = int(counts[i])
        rates = {"text": in_sum[i] / window}
        rates.update({m: s[i] / window for m, s in modal_sums.items()})
        stats.append(
            WindowStats(
                start=i * window,
                window=window,
                count=c,
                rate=c / window,
                cv=None if np.isnan(cvs[i]) else float(cvs[i]),
                mean_input=float(in_sum[i] / c) if c else None,
                mean_output=float(out_sum[i] / c) if c else None,
                mean_answer_fraction=(
                    float(frac_sum[i] / frac_n[i]) if has_answer.any() and frac_n[i] else None
                ),
                token_rates=rates,
            )
        )
    return stats


def stats_rows(stats: Sequence[WindowStats]) -> list[dict]:
    """Flat dictionaries (one per window) for tabular output."""
    rows = []
    for s in stats:
        row = asdict(s)
        rates = row.pop("token_rates")
        row.update({f"{k}_token_rate": v for k, v in rates.items()})
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# Fit report
# ---------------------------------------------------------------------------


@dataclass
class WindowFit:
    start: float
    n_iats: int
    fits: dict[str, sm.FitResult]
    ks: dict[str, sm.KsResult]
    best: str


@dataclass
class FitReport:
    windows: list[WindowFit]
    skipped: list[str] = field(default_factory=list)

    def win_fraction(self, family: str) -> float:
        if not self.windows:
            return 0.0
        return sum(w.best == family for w in self.windows) / len(self.windows)

    def to_dict(self) -> dict:
        return {
            "windows": [
                {
                    "start": w.start,
                    "n_iats": w.n_iats,
                    "best": w.best,
                    "families": {
                        f: {
                            "params": w.fits[f].spec.params(),
                            "log_likelihood": w.fits[f].log_likelihood,
                            "ks_statistic": w.ks[f].statistic,
                            "p_value": w.ks[f].p_value,
                        }
                        for f in w.fits
                    },
                }
                for w in self.windows
            ],
            "skipped": list(self.skipped),
        }


def fit_report(
    workload: Workload,
    families: Sequence[str] = FIT_FAMILIES,
    window: float = FIT_WINDOW,
    min_iats: int = MIN_FIT_IATS,
) -> FitReport:
    """Per-window MLE fit and KS test of the IATs for each family."""
    ts = workload.timestamps()
    report = FitReport([])
    if ts.size < 2:
        report.skipped.append("workload has fewer than two requests")
        return report
    iat = np.diff(ts)
    left = window_index(ts[:-1], window)
    n = _n_windows(max(workload.horizon, ts[-1] + 1e-9), window)
    for i in range(n):
        x = iat[left == i]
        x = x[x > 0]
        if x.size < min_iats:
            report.skipped.append(f"window at {i * window:g}s: {x.size} IATs (< {min_iats}), skipped")
            continue
        fits, ks = {}, {}
        for fam in families:
            try:
                fits[fam] = sm.fit_mle(fam, x)
            except sm.DegenerateDataError as exc:
                report.skipped.append(f"window at {i * window:g}s: {fam} fit failed ({exc})")
                continue
            ks[fam] = sm.ks_test(x, fits[fam].spec)
        if not ks:
            continue
        best = max(ks, key=lambda f: ks[f].p_value)
        report.windows.append(WindowFit(i * window, int(x.size), fits, ks, best))
    return report


# ---------------------------------------------------------------------------
# Rate vs. length scatter
# ---------------------------------------------------------------------------


class ScatterPoint(NamedTuple):
    rate: float
    mean_length: float
    count: int


def _length_field(workload: Workload, field_name: Optional[str]) -> np.ndarray:
    name = field_name or {"multimodal": "modal", "reasoning": "answer_fraction"}.get(workload.category, "input")
    if name == "input":
        return workload.column("input_tokens")
    if name == "output":
        return workload.column("output_tokens")
    if name == "modal":
        return workload.modal_tokens()
    if name == "answer_fraction":
        return workload.column("answer_tokens") / workload.column("output_tokens")
    raise sm.ParameterError(f"unknown scatter field {name!r}")


def rate_length_scatter(
    workload: Workload, window: float = SCATTER_WINDOW, field_name: Optional[str] = None
) -> list[ScatterPoint]:
    """(request rate, mean length) for every non-empty window.

    The length field defaults by category: input tokens (language), modal
    tokens (multimodal) or answer fraction (reasoning).
    """
    if not window > 0:
        raise sm.ParameterError("window must be positive")
    if not workload.records:
        return []
    ts = workload.timestamps()
    values = _length_field(workload, field_name)
    idx = window_index(ts, window)
    n = int(idx.max()) + 1
    sums, counts = _window_means(idx, values, n)
    return [
        ScatterPoint(counts[i] / window, sums[i] / counts[i], int(counts[i]))
        for i in np.flatnonzero(counts)
    ]


def scatter_correlation(points: Sequence[ScatterPoint], min_count: int = MIN_SCATTER_COUNT) -> float:
    """Pearson r between rate and mean length over windows with enough requests."""
    pts = [p for p in points if p.count >= min_count]
    if len(pts) < 3:
        return math.nan
    x = np.array([p.rate for p in pts])
    y = np.array([p.mean_length for p in pts])
    if x.std() == 0 or y.std() == 0:
        return 0.0
    return float(np.corrcoef(x, y)[0, 1])


def rate_span(points: Sequence[ScatterPoint], min_count: int = MIN_SCATTER_COUNT) -> float:
    """max / min windowed rate over windows with enough requests."""
    rates = [p.rate for p in points if p.count >= min_count]
    if not rates:
        return math.nan
    return max(rates) / min(rates)


# ---------------------------------------------------------------------------
# Comparison
# ---------------------------------------------------------------------------


@dataclass
class Divergence:
    ks_iat: float
    ks_input: float
    ks_output: float
    corr_a: float
    corr_b: float
    corr_diff: float
    span_a: float
    span_b: float
    span_diff: float

    def to_dict(self) -> dict:
        return asdict(self)


def _ks_d(a: np.ndarray, b: np.ndarray) -> float:
    if a.size == 0 or b.size == 0:
        return math.nan
    return sm.ks_two_sample(a, b).statistic


def _diff(a: float, b: float) -> float:
    if math.isnan(a) and math.isnan(b):
        return 0.0
    return abs(a - b)


def compare(a: Workload, b: Workload, window: float = SCATTER_WINDOW) -> Divergence:
    """Distance between two workloads on IATs, lengths and rate-length structure."""
    if a.category and b.category and a.category != b.category:
        raise sm.ParameterError(f"cannot compare {a.category} with {b.category} workloads")
    pa = rate_length_scatter(a, window)
    pb = rate_length_scatter(b, window)
    ca, cb = scatter_correlation(pa), scatter_correlation(pb)
    sa, sb = rate_span(pa), rate_span(pb)
    return Divergence(
        ks_iat=_ks_d(np.diff(a.timestamps()), np.diff(b.timestamps())),
        ks_input=_ks_d(a.column("input_tokens"), b.column("input_tokens")),
        ks_output=_ks_d(a.column("output_tokens"), b.column("output_tokens")),
        corr_a=ca,
        corr_b=cb,
        corr_diff=_diff(ca, cb),
        span_a=sa,
        span_b=sb,
        span_diff=_diff(sa, sb),
    )


# ---------------------------------------------------------------------------
# Histogram shape
# ---------------------------------------------------------------------------


@dataclass
class Modes:
    peaks: list[int]
    heights: list[int]
    trough: Optional[int]

    @property
    def count(self) -> int:
        return len(self.peaks)

    def trough_depth(self) -> float:
        """Fractional drop of the lowest bin between the first two peaks, below the lower peak."""
        if self.trough is None or len(self.heights) < 2:
            return 0.0
        return 1.0 - self.trough / min(self.heights[:2])


def histogram_modes(values, bins: int = 100, value_range: tuple[float, float] = (0.0, 1.0)) -> Modes:
    """Local maxima of a plain histogram.

    A maximum is a run of equal bins strictly higher than the bins on both
    sides of the run (the outside of the range counts as lower than zero).
    """
    counts, _ = np.histogram(np.asarray(values, dtype=float), bins=bins, range=value_range)
    padded = np.concatenate([[-1], counts, [-1]])
    peaks, heights = [], []
    i = 1
    while i < padded.size - 1:
        j = i
        while j + 1 < padded.size - 1 and padded[j + 1] == padded[i]:
            j += 1
        if padded[i] > padded[i - 1] and padded[i] > padded[j + 1]:
            peaks.append(i - 1)
            heights.append(int(padded[i]))
        i = j + 1
    trough = int(counts[peaks[0] : peaks[1] + 1].min()) if len(peaks) >= 2 else None
    return Modes(peaks, heights, trough)
