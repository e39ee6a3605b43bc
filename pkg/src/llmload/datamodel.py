"""Request payload sizes for language, multimodal and reasoning requests.

Sampling is columnar: :func:`sample_batch` draws ``n`` requests at once and
returns a :class:`DataBatch`. The single-request helpers wrap it.

Dependence between two lengths is a Gaussian copula. Two correlated standard
normals are pushed through each marginal's quantile function, so the
marginals are untouched and one coefficient sets the rank coupling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional, Sequence, Union

import numpy as np
from scipy import special

from . import statmodel as sm

CATEGORIES = ("language", "multimodal", "reasoning")
MODALITIES = ("image", "audio", "video")
DEFAULT_OUTPUT_CAP = 32768
DEFAULT_INPUT_CAP = 131072

_U_LO = 1e-12
_U_HI = 1.0 - 1e-12


def round_tokens(x, cap: Optional[int] = None) -> np.ndarray:
    """Round half-up to whole tokens, clamp to >= 1 and optionally to ``cap``."""
    out = np.maximum(np.floor(np.asarray(x, dtype=float) + 0.5), 1.0)
    if cap is not None:
        out = np.minimum(out, cap)
    return out.astype(np.int64)


def _check_unit(name: str, value: float) -> float:
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise sm.ParameterError(f"{name} must lie in [0, 1], got {value}")
    return value


def copula_pair(
    first: sm.Distribution, second: sm.Distribution, rho: float, n: int, stream: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``n`` pairs with the given marginals and Gaussian-copula coefficient."""
    z1 = stream.standard_normal(n)
    z2 = stream.standard_normal(n)
    if rho:
        z2 = rho * z1 + math.sqrt(1.0 - rho * rho) * z2
    u1 = np.clip(special.ndtr(z1), _U_LO, _U_HI)
    u2 = np.clip(special.ndtr(z2), _U_LO, _U_HI)
    return np.asarray(first.ppf(u1), dtype=float), np.asarray(second.ppf(u2), dtype=float)


@dataclass(frozen=True)
class LanguageDataSpec:
    input: sm.Distribution
    output: sm.Distribution
    correlation: float = 0.0
    output_cap: int = DEFAULT_OUTPUT_CAP
    input_cap: int = DEFAULT_INPUT_CAP
    category: str = field(default="language", init=False)

    def __post_init__(self):
        _check_unit("correlation", self.correlation)
        if not self.input.mean() >= 1:
            raise sm.ParameterError("input mean must be at least one token")
        if not (0 < self.output.mean() < math.inf):
            raise sm.ParameterError("output distribution needs a finite positive mean")

    def to_dict(self) -> dict[str, Any]:
        return {
            "category": self.category,
            "input": self.input.to_dict(),
            "output": self.output.to_dict(),
            "correlation": self.correlation,
            "output_cap": self.output_cap,
            "input_cap": self.input_cap,
        }


@dataclass(frozen=True)
class ModalitySpec:
    modality: str
    count: sm.Distribution
    item_tokens: sm.Distribution

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise sm.ParameterError(f"unknown modality {self.modality!r}")

    def to_dict(self) -> dict[str, Any]:
        return {"modality": self.modality, "count": self.count.to_dict(), "item_tokens": self.item_tokens.to_dict()}


@dataclass(frozen=True)
class MultimodalDataSpec:
    text: LanguageDataSpec
    modalities: tuple[ModalitySpec, ...]
    category: str = field(default="multimodal", init=False)

    def __post_init__(self):
        object.__setattr__(self, "modalities", tuple(self.modalities))

    def to_dict(self) -> dict[str, Any]:
        text = self.text.to_dict()
        text.pop("category")
        return {"category": self.category, "text": text, "modalities": [m.to_dict() for m in self.modalities]}


@dataclass(frozen=True)
class ReasoningDataSpec:
    """Reasoning output split into reason and answer sections.

    ``ratio_mix`` is the distribution of the answer fraction
    ``answer / (reason + answer)``. ``reason_answer_corr`` couples that
    fraction to the total output length through a Gaussian copula. Longer
    responses then carry proportionally longer answers, which is what makes
    reason and answer lengths correlate.
    """

    input: sm.Distribution
    output: sm.Distribution
    ratio_mix: sm.Distribution
    reason_answer_corr: float = 0.5
    correlation: float = 0.0
    output_cap: int = DEFAULT_OUTPUT_CAP
    input_cap: int = DEFAULT_INPUT_CAP
    category: str = field(default="reasoning", init=False)

    def __post_init__(self):
        _check_unit("reason_answer_corr", self.reason_answer_corr)
        _check_unit("correlation", self.correlation)
        if not (0 < self.output.mean() < math.inf):
            raise sm.ParameterError("output distribution needs a finite positive mean")
        lo, hi = self.ratio_mix.ppf(np.array([_U_LO, _U_HI]))
        if lo < 0 or hi > 1:
            raise sm.ParameterError("answer fraction must be supported on [0, 1]")
        if isinstance(self.ratio_mix, sm.TwoComponentMixture):
            m1 = float(self.ratio_mix.first.ppf(0.5))
            m2 = float(self.ratio_mix.second.ppf(0.5))
            if not m1 < m2:
                raise sm.ParameterError("ratio mixture components must be ordered with distinct modes")

    def to_dict(self) -> dict[str, Any]:
        return {
            "category": self.category,
            "input": self.input.to_dict(),
            "output": self.output.to_dict(),
            "ratio_mix": self.ratio_mix.to_dict(),
            "reason_answer_corr": self.reason_answer_corr,
            "correlation": self.correlation,
            "output_cap": self.output_cap,
            "input_cap": self.input_cap,
        }


DataSpec = Union[LanguageDataSpec, MultimodalDataSpec, ReasoningDataSpec]


def _language_from_dict(data: Mapping[str, Any]) -> LanguageDataSpec:
    return LanguageDataSpec(
        input=sm.from_dict(data["input"]),
        output=sm.from_dict(data["output"]),
        correlation=data.get("correlation", 0.0),
        output_cap=int(data.get("output_cap", DEFAULT_OUTPUT_CAP)),
        input_cap=int(data.get("input_cap", DEFAULT_INPUT_CAP)),
    )


def data_spec_from_dict(data: Mapping[str, Any]) -> DataSpec:
    category = data.get("category")
    try:
        if category == "language":
            return _language_from_dict(data)
        if category == "multimodal":
            mods = tuple(
                ModalitySpec(m["modality"], sm.from_dict(m["count"]), sm.from_dict(m["item_tokens"]))
                for m in data.get("modalities", [])
            )
            return MultimodalDataSpec(_language_from_dict(data["text"]), mods)
        if category == "reasoning":
            return ReasoningDataSpec(
                input=sm.from_dict(data["input"]),
                output=sm.from_dict(data["output"]),
                ratio_mix=sm.from_dict(data["ratio_mix"]),
                reason_answer_corr=data.get("reason_answer_corr", 0.5),
                correlation=data.get("correlation", 0.0),
                output_cap=int(data.get("output_cap", DEFAULT_OUTPUT_CAP)),
                input_cap=int(data.get("input_cap", DEFAULT_INPUT_CAP)),
            )
    except KeyError as exc:
        raise sm.ParameterError(f"{category} data spec is missing {exc}") from None
    raise sm.ParameterError(f"unknown data category {category!r}")


@dataclass(frozen=True)
class RequestData:
    input_tokens: int
    output_tokens: int
    modal_items: tuple[tuple[str, int], ...] = ()
    reason_tokens: Optional[int] = None
    answer_tokens: Optional[int] = None

    @property
    def modal_tokens(self) -> int:
        return sum(tok for _, tok in self.modal_items)


@dataclass
class DataBatch:
    """Columnar payload sizes for ``n`` requests."""

    input: np.ndarray
    output: np.ndarray
    reason: Optional[np.ndarray] = None
    answer: Optional[np.ndarray] = None
    modal: Optional[list[tuple[tuple[str, int], ...]]] = None

    def __len__(self) -> int:
        return int(self.input.size)

    def row(self, i: int) -> RequestData:
        return RequestData(
            int(self.input[i]),
            int(self.output[i]),
            self.modal[i] if self.modal is not None else (),
            int(self.reason[i]) if self.reason is not None else None,
            int(self.answer[i]) if self.answer is not None else None,
        )

    def rows(self) -> list[RequestData]:
        return [self.row(i) for i in range(len(self))]

    def modal_totals(self) -> np.ndarray:
        if self.modal is None:
            return np.zeros(len(self), dtype=np.int64)
        return np.array([sum(t for _, t in items) for items in self.modal], dtype=np.int64)


def _sample_text(spec, n: int, stream: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    x_in, x_out = copula_pair(spec.input, spec.output, spec.correlation, n, stream)
    return round_tokens(x_in, spec.input_cap), round_tokens(x_out, spec.output_cap)


def _sample_modal_items(
    modalities: Sequence[ModalitySpec], n: int, stream: np.random.Generator
) -> list[tuple[tuple[str, int], ...]]:
    per_request: list[list[tuple[str, int]]] = [[] for _ in range(n)]
    for mod in modalities:
        counts = np.floor(np.asarray(mod.count.sample(n, stream), dtype=float) + 0.5).astype(np.int64)
        counts = np.maximum(counts, 0)
        total = int(counts.sum())
        if total == 0:
            continue
        tokens = round_tokens(mod.item_tokens.sample(total, stream))
        owner = np.repeat(np.arange(n), counts)
        for i, tok in zip(owner.tolist(), tokens.tolist()):
            per_request[i].append((mod.modality, tok))
    return [tuple(items) for items in per_request]


def split_reasoning(output: np.ndarray, fraction: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Reason and answer token counts for given outputs and answer fractions."""
    output = np.asarray(output, dtype=np.int64)
    answer = np.floor(np.asarray(fraction) * output + 0.5).astype(np.int64)
    answer = np.clip(answer, 1, np.maximum(output - 1, 1))
    return output - answer, answer


def sample_batch(spec: DataSpec, n: int, stream: np.random.Generator) -> DataBatch:
    """Draw payload sizes for ``n`` requests."""
    if n < 0:
        raise sm.ParameterError("n must be non-negative")
    if isinstance(spec, LanguageDataSpec):
        x_in, x_out = _sample_text(spec, n, stream)
        return DataBatch(x_in, x_out)
    if isinstance(spec, MultimodalDataSpec):
        x_in, x_out = _sample_text(spec.text, n, stream)
        return DataBatch(x_in, x_out, modal=_sample_modal_items(spec.modalities, n, stream))
    if isinstance(spec, ReasoningDataSpec):
        x_in = round_tokens(spec.input.sample(n, stream), spec.input_cap)
        out, frac = copula_pair(spec.output, spec.ratio_mix, spec.reason_answer_corr, n, stream)
        out = round_tokens(out, spec.output_cap)
        reason, answer = split_reasoning(out, np.clip(frac, 0.0, 1.0))
        return DataBatch(x_in, out, reason=reason, answer=answer)
    raise sm.ParameterError(f"unsupported data spec {type(spec).__name__}")


def sample_language(spec: LanguageDataSpec, stream: np.random.Generator) -> RequestData:
    return sample_batch(spec, 1, stream).row(0)


def sample_multimodal(spec: MultimodalDataSpec, stream: np.random.Generator) -> RequestData:
    return sample_batch(spec, 1, stream).row(0)


def sample_reasoning(spec: ReasoningDataSpec, stream: np.random.Generator) -> RequestData:
    return sample_batch(spec, 1, stream).row(0)


def modal_ratio(data: RequestData) -> float:
    """Share of a request's input that comes from modal items."""
    modal = data.modal_tokens
    return modal / (modal + data.input_tokens)


def expected_modal_ratio(spec: MultimodalDataSpec, stream: np.random.Generator, n: int = 20000) -> float:
    batch = sample_batch(spec, n, stream)
    modal = batch.modal_totals()
    return float(np.mean(modal / (modal + batch.input)))
