"""Univariate distribution families used for inter-arrival times and token lengths.

Each family is a small frozen dataclass exposing ``sample``, ``pdf``, ``cdf``
and ``ppf``. The module-level helpers (:func:`sample`, :func:`fit_mle`,
:func:`ks_test`, ...) are the public entry points used by the rest of the
package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, ClassVar, Mapping, Sequence

import numpy as np
from scipy import optimize, special

FAMILIES = (
    "Exponential",
    "Gamma",
    "Weibull",
    "Pareto",
    "LogNormal",
    "Empirical",
    "BodyTailMixture",
    "TwoComponentMixture",
)

_TINY = np.nextafter(0.0, 1.0)
_ONE_MINUS = np.nextafter(1.0, 0.0)


class ParameterError(ValueError):
    """Invalid distribution parameters."""


class DegenerateDataError(ValueError):
    """Data without the variance a family needs to be fitted."""


class InsufficientTailError(ValueError):
    """Too few samples above the body/tail split point."""


def _positive(name: str, value: float) -> float:
    value = float(value)
    if not (value > 0 and math.isfinite(value)):
        raise ParameterError(f"{name} must be a finite positive number, got {value!r}")
    return value


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=float)


def _unwrap(arr: np.ndarray, like):
    if np.ndim(like) == 0:
        return float(arr)
    return arr


class Distribution:
    """Common surface of all families."""

    family: ClassVar[str]

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def ppf(self, u):
        raise NotImplementedError

    def pdf(self, x):
        raise NotImplementedError

    def cdf(self, x):
        raise NotImplementedError

    def logpdf(self, x):
        with np.errstate(divide="ignore"):
            return np.log(self.pdf(x))

    def mean(self) -> float:
        raise NotImplementedError

    def scaled(self, factor: float) -> "Distribution":
        """Distribution of ``factor * X``."""
        raise NotImplementedError

    def params(self) -> dict[str, float]:
        raise NotImplementedError

    def to_dict(self) -> dict[str, Any]:
        return {"family": self.family, "params": self.params()}


@dataclass(frozen=True)
class Exponential(Distribution):
    rate: float
    family: ClassVar[str] = "Exponential"

    def __post_init__(self):
        _positive("rate", self.rate)

    def sample(self, n, rng):
        return np.maximum(rng.exponential(1.0 / self.rate, n), _TINY)

    def ppf(self, u):
        u = _as_array(u)
        return _unwrap(-np.log1p(-u) / self.rate, u)

    def pdf(self, x):
        x = _as_array(x)
        out = np.where(x >= 0, self.rate * np.exp(-self.rate * np.maximum(x, 0)), 0.0)
        return _unwrap(out, x)

    def cdf(self, x):
        x = _as_array(x)
        return _unwrap(np.where(x > 0, -np.expm1(-self.rate * np.maximum(x, 0)), 0.0), x)

    def logpdf(self, x):
        x = _as_array(x)
        return _unwrap(np.log(self.rate) - self.rate * x, x)

    def mean(self):
        return 1.0 / self.rate

    def scaled(self, factor):
        return Exponential(self.rate / factor)

    def params(self):
        return {"rate": self.rate}


@dataclass(frozen=True)
class Gamma(Distribution):
    shape: float
    scale: float
    family: ClassVar[str] = "Gamma"

    def __post_init__(self):
        _positive("shape", self.shape)
        _positive("scale", self.scale)

    def sample(self, n, rng):
        return np.maximum(rng.gamma(self.shape, self.scale, n), _TINY)

    def ppf(self, u):
        u = _as_array(u)
        return _unwrap(special.gammaincinv(self.shape, u) * self.scale, u)

    def logpdf(self, x):
        x = _as_array(x)
        k, th = self.shape, self.scale
        with np.errstate(divide="ignore", invalid="ignore"):
            lp = (k - 1) * np.log(x) - x / th - special.gammaln(k) - k * np.log(th)
        return _unwrap(np.where(x > 0, lp, -np.inf), x)

    def pdf(self, x):
        return _unwrap(np.exp(self.logpdf(_as_array(x))), x)

    def cdf(self, x):
        x = _as_array(x)
        return _unwrap(special.gammainc(self.shape, np.maximum(x, 0) / self.scale), x)

    def mean(self):
        return self.shape * self.scale

    def scaled(self, factor):
        return Gamma(self.shape, self.scale * factor)

    def params(self):
        return {"shape": self.shape, "scale": self.scale}


@dataclass(frozen=True)
class Weibull(Distribution):
    shape: float
    scale: float
    family: ClassVar[str] = "Weibull"

    def __post_init__(self):
        _positive("shape", self.shape)
        _positive("scale", self.scale)

    def sample(self, n, rng):
        return np.maximum(self.scale * rng.weibull(self.shape, n), _TINY)

    def ppf(self, u):
        u = _as_array(u)
        return _unwrap(self.scale * (-np.log1p(-u)) ** (1.0 / self.shape), u)

    def logpdf(self, x):
        x = _as_array(x)
        k, lam = self.shape, self.scale
        with np.errstate(divide="ignore", invalid="ignore"):
            z = x / lam
            lp = np.log(k / lam) + (k - 1) * np.log(z) - z**k
        return _unwrap(np.where(x > 0, lp, -np.inf), x)

    def pdf(self, x):
        x = _as_array(x)
        k, lam = self.shape, self.scale
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.maximum(x, 0) / lam
            out = (k / lam) * z ** (k - 1) * np.exp(-(z**k))
        return _unwrap(np.where(x > 0, out, 0.0), x)

    def cdf(self, x):
        x = _as_array(x)
        z = np.maximum(x, 0) / self.scale
        return _unwrap(-np.expm1(-(z**self.shape)), x)

    def mean(self):
        return self.scale * math.gamma(1 + 1 / self.shape)

    def scaled(self, factor):
        return Weibull(self.shape, self.scale * factor)

    def params(self):
        return {"shape": self.shape, "scale": self.scale}


@dataclass(frozen=True)
class Pareto(Distribution):
    alpha: float
    xm: float
    family: ClassVar[str] = "Pareto"

    def __post_init__(self):
        _positive("alpha", self.alpha)
        _positive("xm", self.xm)

    def sample(self, n, rng):
        return self.xm * np.exp(rng.standard_exponential(n) / self.alpha)

    def ppf(self, u):
        u = _as_array(u)
        return _unwrap(self.xm * np.exp(-np.log1p(-u) / self.alpha), u)

    def logpdf(self, x):
        x = _as_array(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            lp = np.log(self.alpha) + self.alpha * np.log(self.xm) - (self.alpha + 1) * np.log(x)
        return _unwrap(np.where(x >= self.xm, lp, -np.inf), x)

    def pdf(self, x):
        x = _as_array(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = self.alpha * self.xm**self.alpha / np.maximum(x, self.xm) ** (self.alpha + 1)
        return _unwrap(np.where(x >= self.xm, out, 0.0), x)

    def cdf(self, x):
        x = _as_array(x)
        out = 1.0 - (self.xm / np.maximum(x, self.xm)) ** self.alpha
        return _unwrap(np.where(x >= self.xm, out, 0.0), x)

    def mean(self):
        if self.alpha <= 1:
            return math.inf
        return self.alpha * self.xm / (self.alpha - 1)

    def scaled(self, factor):
        return Pareto(self.alpha, self.xm * factor)

    def params(self):
        return {"alpha": self.alpha, "xm": self.xm}


@dataclass(frozen=True)
class LogNormal(Distribution):
    mu: float
    sigma: float
    family: ClassVar[str] = "LogNormal"

    def __post_init__(self):
        if not math.isfinite(self.mu):
            raise ParameterError("mu must be finite")
        _positive("sigma", self.sigma)

    def sample(self, n, rng):
        return rng.lognormal(self.mu, self.sigma, n)

    def ppf(self, u):
        u = _as_array(u)
        return _unwrap(np.exp(self.mu + self.sigma * special.ndtri(u)), u)

    def logpdf(self, x):
        x = _as_array(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            lx = np.log(x)
            lp = (
                -lx
                - np.log(self.sigma)
                - 0.5 * np.log(2 * np.pi)
                - 0.5 * ((lx - self.mu) / self.sigma) ** 2
            )
        return _unwrap(np.where(x > 0, lp, -np.inf), x)

    def pdf(self, x):
        return _unwrap(np.exp(self.logpdf(_as_array(x))), x)

    def cdf(self, x):
        x = _as_array(x)
        with np.errstate(divide="ignore"):
            z = (np.log(np.maximum(x, 0)) - self.mu) / self.sigma
        return _unwrap(special.ndtr(z), x)

    def mean(self):
        return math.exp(self.mu + 0.5 * self.sigma**2)

    def scaled(self, factor):
        return LogNormal(self.mu + math.log(factor), self.sigma)

    def params(self):
        return {"mu": self.mu, "sigma": self.sigma}


@dataclass(frozen=True)
class Empirical(Distribution):
    """Uniform resampling (with replacement) from a fixed list of values.

    Values may include zero so that item counts can be expressed directly.
    ``pdf`` returns the point mass at ``x``.
    """

    samples: tuple[float, ...]
    family: ClassVar[str] = "Empirical"

    def __post_init__(self):
        values = tuple(float(v) for v in self.samples)
        if not values:
            raise ParameterError("Empirical needs at least one sample")
        if any(not math.isfinite(v) or v < 0 for v in values):
            raise ParameterError("Empirical samples must be finite and non-negative")
        object.__setattr__(self, "samples", tuple(sorted(values)))

    @property
    def _arr(self) -> np.ndarray:
        return np.asarray(self.samples)

    def sample(self, n, rng):
        return self._arr[rng.integers(0, len(self.samples), n)]

    def ppf(self, u):
        u = _as_array(u)
        n = len(self.samples)
        idx = np.minimum((u * n).astype(np.int64), n - 1)
        return _unwrap(self._arr[idx], u)

    def pdf(self, x):
        x = _as_array(x)
        arr = self._arr
        hits = np.searchsorted(arr, x, side="right") - np.searchsorted(arr, x, side="left")
        return _unwrap(hits / len(arr), x)

    def cdf(self, x):
        x = _as_array(x)
        return _unwrap(np.searchsorted(self._arr, x, side="right") / len(self.samples), x)

    def mean(self):
        return float(np.mean(self._arr))

    def scaled(self, factor):
        return Empirical(tuple(v * factor for v in self.samples))

    def params(self):
        return {}

    def to_dict(self):
        return {"family": self.family, "samples": list(self.samples)}


@dataclass(frozen=True)
class BodyTailMixture(Distribution):
    """Body below ``split`` (truncated) mixed with a tail above it.

    ``weight`` is the probability mass of the body.
    """

    body: Distribution
    tail: Distribution
    split: float
    weight: float
    family: ClassVar[str] = "BodyTailMixture"

    def __post_init__(self):
        _positive("split", self.split)
        if not 0.0 <= self.weight <= 1.0:
            raise ParameterError(f"weight must lie in [0, 1], got {self.weight}")
        if self.weight > 0 and self.body.cdf(self.split) <= 0:
            raise ParameterError("body has no mass below the split point")
        if self.weight < 1 and self.tail.cdf(self.split) >= 1:
            raise ParameterError("tail has no mass above the split point")

    def _body_mass(self) -> float:
        return float(self.body.cdf(self.split))

    def _tail_floor(self) -> float:
        return float(self.tail.cdf(self.split))

    def ppf(self, u):
        u = _as_array(u)
        w = self.weight
        out = np.empty_like(u)
        lo = u < w
        if np.any(lo):
            out[lo] = self.body.ppf(np.clip(u[lo] / w * self._body_mass(), _TINY, _ONE_MINUS))
            out[lo] = np.minimum(out[lo], self.split)
        hi = ~lo
        if np.any(hi):
            f0 = self._tail_floor()
            v = (u[hi] - w) / (1.0 - w)
            out[hi] = self.tail.ppf(np.clip(f0 + v * (1.0 - f0), _TINY, _ONE_MINUS))
            out[hi] = np.maximum(out[hi], self.split)
        return _unwrap(out, u)

    def sample(self, n, rng):
        return self.ppf(rng.random(n))

    def pdf(self, x):
        x = _as_array(x)
        body = self.weight * _as_array(self.body.pdf(x)) / self._body_mass() if self.weight > 0 else 0.0
        tail = (
            (1 - self.weight) * _as_array(self.tail.pdf(x)) / (1 - self._tail_floor())
            if self.weight < 1
            else 0.0
        )
        return _unwrap(np.where(x <= self.split, body, tail), x)

    def cdf(self, x):
        x = _as_array(x)
        w = self.weight
        body = np.minimum(_as_array(self.body.cdf(x)) / self._body_mass(), 1.0) if w > 0 else 1.0
        if w < 1:
            f0 = self._tail_floor()
            tail = np.clip((_as_array(self.tail.cdf(x)) - f0) / (1 - f0), 0.0, 1.0)
        else:
            tail = 0.0
        out = np.where(x <= self.split, w * body, w + (1 - w) * tail)
        return _unwrap(out, x)

    def mean(self):
        # Truncated means by quadrature over the quantile function.
        u = (np.arange(20000) + 0.5) / 20000
        return float(np.mean(self.ppf(u)))

    def scaled(self, factor):
        return BodyTailMixture(
            self.body.scaled(factor), self.tail.scaled(factor), self.split * factor, self.weight
        )

    def params(self):
        return {"split": self.split, "weight": self.weight}

    def to_dict(self):
        return {
            "family": self.family,
            "params": self.params(),
            "body": self.body.to_dict(),
            "tail": self.tail.to_dict(),
        }


@dataclass(frozen=True)
class TwoComponentMixture(Distribution):
    """``weight`` of ``first`` plus ``1 - weight`` of ``second``.

    ``ppf`` maps the lower ``weight`` of the unit interval onto ``first`` and the
    rest onto ``second``; it is monotone when ``first`` lies below ``second``.
    """

    first: Distribution
    second: Distribution
    weight: float
    family: ClassVar[str] = "TwoComponentMixture"

    def __post_init__(self):
        if not 0.0 <= self.weight <= 1.0:
            raise ParameterError(f"weight must lie in [0, 1], got {self.weight}")

    def ppf(self, u):
        u = _as_array(u)
        w = self.weight
        out = np.empty_like(u)
        lo = u < w
        if np.any(lo):
            out[lo] = self.first.ppf(np.clip(u[lo] / w, 0.0, _ONE_MINUS))
        hi = ~lo
        if np.any(hi):
            out[hi] = self.second.ppf(np.clip((u[hi] - w) / (1 - w), 0.0, _ONE_MINUS))
        return _unwrap(out, u)

    def sample(self, n, rng):
        return self.ppf(rng.random(n))

    def pdf(self, x):
        x = _as_array(x)
        w = self.weight
        return _unwrap(w * _as_array(self.first.pdf(x)) + (1 - w) * _as_array(self.second.pdf(x)), x)

    def cdf(self, x):
        x = _as_array(x)
        w = self.weight
        return _unwrap(w * _as_array(self.first.cdf(x)) + (1 - w) * _as_array(self.second.cdf(x)), x)

    def mean(self):
        return self.weight * self.first.mean() + (1 - self.weight) * self.second.mean()

    def scaled(self, factor):
        return TwoComponentMixture(self.first.scaled(factor), self.second.scaled(factor), self.weight)

    def params(self):
        return {"weight": self.weight}

    def to_dict(self):
        return {
            "family": self.family,
            "params": self.params(),
            "components": [self.first.to_dict(), self.second.to_dict()],
        }


_SIMPLE = {cls.family: cls for cls in (Exponential, Gamma, Weibull, Pareto, LogNormal)}


def from_dict(data: Mapping[str, Any]) -> Distribution:
    """Build a distribution from its tagged mapping form."""
    try:
        family = data["family"]
    except (KeyError, TypeError):
        raise ParameterError(f"distribution object needs a 'family' field: {data!r}") from None
    params = dict(data.get("params", {}))
    try:
        if family in _SIMPLE:
            return _SIMPLE[family](**params)
        if family == "Empirical":
            return Empirical(tuple(data["samples"]))
        if family == "BodyTailMixture":
            return BodyTailMixture(
                from_dict(data["body"]), from_dict(data["tail"]), params["split"], params["weight"]
            )
        if family == "TwoComponentMixture":
            first, second = data["components"]
            return TwoComponentMixture(from_dict(first), from_dict(second), params["weight"])
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ParameterError):
            raise
        raise ParameterError(f"bad parameters for {family}: {exc}") from exc
    raise ParameterError(f"unknown distribution family {family!r}")


def to_dict(spec: Distribution) -> dict[str, Any]:
    return spec.to_dict()


# ---------------------------------------------------------------------------
# Functional surface
# ---------------------------------------------------------------------------


def sample(spec: Distribution, n: int, stream: np.random.Generator) -> np.ndarray:
    """Draw ``n`` values from ``spec`` using ``stream``."""
    if n < 0:
        raise ParameterError("n must be non-negative")
    if n == 0:
        return np.empty(0)
    return np.asarray(spec.sample(int(n), stream), dtype=float)


def pdf(spec: Distribution, x):
    return spec.pdf(x)


def cdf(spec: Distribution, x):
    return spec.cdf(x)


def ppf(spec: Distribution, u):
    return spec.ppf(u)


def cv(values: Sequence[float]) -> float:
    """Coefficient of variation with the population standard deviation."""
    arr = _as_array(values)
    if arr.size < 2:
        raise ValueError("cv needs at least two values")
    m = arr.mean()
    if m <= 0:
        raise ValueError("cv needs a positive mean")
    return float(arr.std() / m)


# ---------------------------------------------------------------------------
# Maximum-likelihood fitting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FitResult:
    spec: Distribution
    log_likelihood: float
    n_samples: int


_REL_TOL = 1e-8


def _check_samples(samples, minimum: int = 2) -> np.ndarray:
    x = _as_array(samples).ravel()
    if x.size < minimum:
        raise ValueError(f"need at least {minimum} samples, got {x.size}")
    if not np.all(np.isfinite(x)) or np.any(x <= 0):
        raise ValueError("samples must be finite and positive")
    return x


def _solve_decreasing(f, fprime, x0: float, lo: float, hi: float) -> float:
    """Root of a decreasing function by Newton steps kept inside a bracket.

    Falls back to geometric bisection whenever a Newton step leaves the bracket.
    """
    while f(lo) <= 0:
        lo /= 10
    while f(hi) >= 0:
        hi *= 10
    x = min(max(x0, lo), hi)
    for _ in range(200):
        fx = f(x)
        if fx == 0:
            return x
        if fx > 0:
            lo = x
        else:
            hi = x
        d = fprime(x)
        step = x - fx / d if d != 0 else math.nan
        if not (lo < step < hi) or not math.isfinite(step):
            step = math.sqrt(lo * hi)
        if abs(step - x) <= _REL_TOL * x:
            return step
        x = step
    return x


def _fit_gamma(x: np.ndarray) -> Gamma:
    mean = x.mean()
    s = math.log(mean) - np.log(x).mean()
    if not s > 1e-14:
        raise DegenerateDataError("Gamma fit needs samples with positive variance")
    k0 = (3 - s + math.sqrt((s - 3) ** 2 + 24 * s)) / (12 * s)

    def f(k):
        return math.log(k) - special.digamma(k) - s

    def fprime(k):
        return 1.0 / k - special.polygamma(1, k)

    k = _solve_decreasing(f, fprime, k0, k0 / 4, k0 * 4)
    return Gamma(float(k), float(mean / k))


def _fit_weibull(x: np.ndarray) -> Weibull:
    lx = np.log(x)
    m = lx.mean()
    sd = lx.std()
    if not sd > 1e-12:
        raise DegenerateDataError("Weibull fit needs samples with positive variance")
    ly = lx - m  # work on x / geometric-mean for stability

    def g(k):
        # Profile score; increasing in k.
        z = k * ly
        z -= z.max()
        w = np.exp(z)
        return float((w * ly).sum() / w.sum()) - 1.0 / k

    def gprime(k):
        z = k * ly
        z -= z.max()
        w = np.exp(z)
        sw = w.sum()
        a = (w * ly).sum() / sw
        b = (w * ly * ly).sum() / sw
        return float(b - a * a) + 1.0 / k**2

    k0 = math.pi / (math.sqrt(6.0) * sd)
    k = _solve_decreasing(lambda k: -g(k), lambda k: -gprime(k), k0, k0 / 4, k0 * 4)
    z = k * ly
    zmax = z.max()
    scale = math.exp(m + (zmax + math.log(np.exp(z - zmax).mean())) / k)
    return Weibull(float(k), float(scale))


def _fit_pareto(x: np.ndarray) -> Pareto:
    xm = float(x.min())
    total = float(np.log(x / xm).sum())
    if not total > 0:
        raise DegenerateDataError("Pareto fit needs samples above the minimum")
    return Pareto(float(x.size / total), xm)


def _fit_lognormal(x: np.ndarray) -> LogNormal:
    lx = np.log(x)
    sd = lx.std()
    if not sd > 0:
        raise DegenerateDataError("LogNormal fit needs samples with positive variance")
    return LogNormal(float(lx.mean()), float(sd))


_FITTERS = {
    "Exponential": lambda x: Exponential(float(1.0 / x.mean())),
    "Gamma": _fit_gamma,
    "Weibull": _fit_weibull,
    "Pareto": _fit_pareto,
    "LogNormal": _fit_lognormal,
}


def fit_mle(family: str | type, samples) -> FitResult:
    """Maximum-likelihood fit of one parametric family.

    Gamma and Weibull shapes are found by safeguarded Newton iteration on the
    profile-likelihood equation (relative tolerance 1e-8); the other families
    have closed forms. Pareto uses ``xm = min(samples)``.
    """
    name = family if isinstance(family, str) else family.family
    if name not in _FITTERS:
        raise ParameterError(f"no MLE available for family {name!r}")
    x = _check_samples(samples)
    spec = _FITTERS[name](x)
    ll = float(np.sum(spec.logpdf(x)))
    return FitResult(spec, ll, int(x.size))


def _fit_truncated_lognormal(x: np.ndarray, upper: float) -> LogNormal:
    start = _fit_lognormal(x)
    lx = np.log(x)
    lu = math.log(upper)

    def nll(theta):
        mu, log_sigma = theta
        sigma = math.exp(log_sigma)
        z = (lx - mu) / sigma
        norm = special.log_ndtr((lu - mu) / sigma)
        return float(0.5 * (z * z).sum() + x.size * (log_sigma + norm))

    res = optimize.minimize(
        nll, x0=[start.mu, math.log(start.sigma)], method="Nelder-Mead",
        options={"xatol": 1e-8, "fatol": 1e-10, "maxiter": 2000},
    )
    mu, log_sigma = res.x if res.success else (start.mu, math.log(start.sigma))
    return LogNormal(float(mu), float(math.exp(log_sigma)))


def fit_body_tail(samples, tail_quantile: float = 0.95) -> BodyTailMixture:
    """Fit a Log-normal body and Pareto tail split at an empirical quantile."""
    if not 0.0 < tail_quantile < 1.0:
        raise ParameterError("tail_quantile must lie in (0, 1)")
    x = _check_samples(samples, minimum=100)
    split = float(np.quantile(x, tail_quantile))
    body = x[x <= split]
    tail = x[x > split]
    if tail.size < 10:
        raise InsufficientTailError(f"only {tail.size} samples above the split point {split:g}")
    if body.size < 2:
        raise DegenerateDataError("body has fewer than two samples")
    total = float(np.log(tail / split).sum())
    alpha = tail.size / total
    return BodyTailMixture(
        body=_fit_truncated_lognormal(body, split),
        tail=Pareto(float(alpha), split),
        split=split,
        weight=body.size / x.size,
    )


# ---------------------------------------------------------------------------
# Kolmogorov-Smirnov
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KsResult:
    statistic: float
    p_value: float
    n: int


def kolmogorov_sf(lam: float) -> float:
    """Survival function of the asymptotic Kolmogorov distribution.

    Uses the alternating series ``2 sum (-1)^(j-1) exp(-2 j^2 lam^2)`` for
    larger arguments and the Jacobi-theta form for small ones; both are
    truncated once terms drop below 1e-10.
    """
    if lam <= 0:
        return 1.0
    if lam < 1.0:
        # 1 - sqrt(2 pi)/lam * sum exp(-(2j-1)^2 pi^2 / (8 lam^2))
        total = 0.0
        j = 1
        while True:
            term = math.exp(-((2 * j - 1) ** 2) * math.pi**2 / (8 * lam * lam))
            total += term
            if term < 1e-10:
                break
            j += 1
        p = 1.0 - math.sqrt(2 * math.pi) / lam * total
    else:
        p = 0.0
        j = 1
        while True:
            term = math.exp(-2.0 * j * j * lam * lam)
            p += term if j % 2 else -term
            if term < 1e-10:
                break
            j += 1
        p *= 2.0
    return min(max(p, 0.0), 1.0)


def ks_statistic(samples, cdf_fn) -> float:
    x = np.sort(_as_array(samples).ravel())
    n = x.size
    f = _as_array(cdf_fn(x))
    i = np.arange(1, n + 1)
    d_plus = np.max(i / n - f)
    d_minus = np.max(f - (i - 1) / n)
    return float(min(max(d_plus, d_minus, 0.0), 1.0))


def ks_test(samples, spec: Distribution) -> KsResult:
    """One-sample KS test of ``samples`` against ``spec``."""
    x = _as_array(samples).ravel()
    if x.size < 2:
        raise ValueError("ks_test needs at least two samples")
    d = ks_statistic(x, spec.cdf)
    return KsResult(d, kolmogorov_sf(math.sqrt(x.size) * d), int(x.size))


def ks_two_sample(a, b) -> KsResult:
    """Two-sample KS test; ``n`` reports the effective sample size."""
    a = np.sort(_as_array(a).ravel())
    b = np.sort(_as_array(b).ravel())
    if a.size < 1 or b.size < 1:
        raise ValueError("ks_two_sample needs non-empty samples")
    both = np.concatenate([a, b])
    fa = np.searchsorted(a, both, side="right") / a.size
    fb = np.searchsorted(b, both, side="right") / b.size
    d = float(np.max(np.abs(fa - fb)))
    n_eff = a.size * b.size / (a.size + b.size)
    return KsResult(d, kolmogorov_sf(math.sqrt(n_eff) * d), int(round(n_eff)))


# ---------------------------------------------------------------------------
# Shape from coefficient of variation
# ---------------------------------------------------------------------------


def weibull_cv(shape: float) -> float:
    g1 = special.gammaln(1 + 1 / shape)
    g2 = special.gammaln(1 + 2 / shape)
    return math.sqrt(math.expm1(g2 - 2 * g1))


def weibull_shape_for_cv(target: float) -> float:
    """Weibull shape whose coefficient of variation equals ``target``."""
    _positive("cv", target)
    return float(optimize.brentq(lambda k: weibull_cv(k) - target, 0.02, 500.0, xtol=1e-12))


def gamma_shape_for_cv(target: float) -> float:
    return 1.0 / _positive("cv", target) ** 2
