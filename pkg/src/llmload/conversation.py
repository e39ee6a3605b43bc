"""Multi-turn conversations: turn counts, inter-turn times and history growth.

An inter-turn time (ITT) is measured arrival to arrival. Each turn's prompt
repeats the whole conversation so far: the fresh content of every earlier
turn plus every earlier response, followed by its own fresh content.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Any, Callable, Iterable, Mapping, Optional, Sequence

import numpy as np

from . import statmodel as sm
from .arrival import TimestampStream
from .datamodel import DataBatch, RequestData

DataSampler = Callable[[int, np.random.Generator], DataBatch]


@dataclass(frozen=True)
class ConversationSpec:
    """How conversation starts expand into turns.

    ``multi_turn_share`` is the fraction of all requests that belong to
    conversations with two or more turns. A start becomes a candidate
    conversation with the probability that yields this share, and its length
    is then drawn from ``length_dist``. Any other start is a single request.
    """

    multi_turn_share: float
    length_dist: sm.Distribution
    itt_dist: sm.Distribution

    def __post_init__(self):
        if not 0.0 <= self.multi_turn_share <= 1.0:
            raise sm.ParameterError("multi_turn_share must lie in [0, 1]")
        if not self.length_dist.mean() >= 1:
            raise sm.ParameterError("length_dist mean must be at least 1")
        if float(self.itt_dist.ppf(1e-9)) <= 0 and self.itt_dist.family == "Empirical":
            raise sm.ParameterError("itt_dist must be supported on positive values")

    @cached_property
    def _length_moments(self) -> tuple[float, float]:
        """E[L] and E[L; L >= 2] of the rounded length distribution."""
        u = (np.arange(20000) + 0.5) / 20000
        lengths = _round_lengths(self.length_dist.ppf(u))
        return float(lengths.mean()), float(np.where(lengths >= 2, lengths, 0).mean())

    def gate_probability(self) -> float:
        """Probability that a start is expanded with ``length_dist``."""
        s = self.multi_turn_share
        if s == 0:
            return 0.0
        m, m2 = self._length_moments
        if m2 <= 0:
            # Every length is 1, so gating cannot change anything.
            return 1.0
        return min(1.0, s / (m2 - s * (m - 1)))

    def requests_per_start(self) -> float:
        """Expected number of requests generated by one conversation start."""
        p = self.gate_probability()
        m, _ = self._length_moments
        return (1 - p) + p * m

    def warmup(self) -> float:
        """Lead-in (whole seconds) after which turns of earlier starts have mostly arrived.

        Four times the mean span of a multi-turn conversation. Starting the
        start process this long before time zero makes the request rate
        stationary from the first second.
        """
        if self.gate_probability() == 0:
            return 0.0
        m, _ = self._length_moments
        itt = self.itt_dist.mean()
        if not math.isfinite(itt):
            itt = float(self.itt_dist.ppf(0.99))
        return float(math.ceil(4 * max(m - 1, 0) * itt))

    def to_dict(self) -> dict[str, Any]:
        return {
            "multi_turn_share": self.multi_turn_share,
            "length_dist": self.length_dist.to_dict(),
            "itt_dist": self.itt_dist.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ConversationSpec":
        try:
            return cls(
                float(data["multi_turn_share"]),
                sm.from_dict(data["length_dist"]),
                sm.from_dict(data["itt_dist"]),
            )
        except KeyError as exc:
            raise sm.ParameterError(f"conversation spec is missing {exc}") from None


def _round_lengths(x) -> np.ndarray:
    return np.maximum(np.floor(np.asarray(x, dtype=float) + 0.5), 1).astype(np.int64)


# Conversation lengths average 3.5 turns; ITTs peak near 100 s with a long tail.
PRESET_LENGTHS = (2,) * 16 + (3,) * 10 + (4,) * 6 + (5,) * 4 + (6,) * 2 + (8, 14)
PRESET_ITT_SIGMA = 1.2
PRESET_MULTI_TURN_SHARE = 188986 / 1964415


def preset_spec(multi_turn_share: float = PRESET_MULTI_TURN_SHARE) -> ConversationSpec:
    mu = math.log(100.0) + PRESET_ITT_SIGMA**2  # LogNormal mode = exp(mu - sigma^2)
    return ConversationSpec(
        multi_turn_share,
        sm.Empirical(tuple(float(v) for v in PRESET_LENGTHS)),
        sm.LogNormal(mu, PRESET_ITT_SIGMA),
    )


@dataclass(frozen=True)
class Turn:
    arrival: float
    data: RequestData
    turn_index: int
    fresh_input: int


@dataclass(frozen=True)
class Conversation:
    conversation_id: str
    turns: tuple[Turn, ...]

    def itts(self) -> np.ndarray:
        return np.diff([t.arrival for t in self.turns])


@dataclass(frozen=True)
class FlatRequest:
    arrival: float
    conversation_id: str
    turn: int
    data: RequestData


def _strictly_after(arrivals: np.ndarray, first: np.ndarray) -> np.ndarray:
    """Round to microseconds, keeping each conversation strictly increasing."""
    us = np.round(arrivals * 1e6).astype(np.int64)
    while True:
        prev = np.concatenate([[0], us[:-1]])
        bad = ~first & (us <= prev)
        if not bad.any():
            return us / 1e6
        us[bad] = prev[bad] + 1


def sample_conversations(
    spec: ConversationSpec,
    base_stream: TimestampStream | Sequence[float],
    data_sampler: DataSampler,
    stream: np.random.Generator,
    horizon: Optional[float] = None,
    id_prefix: str = "c",
) -> list[Conversation]:
    """Expand each start time into a conversation.

    Turns whose arrival falls at or beyond ``horizon`` are dropped; with a
    :class:`TimestampStream` the stream's own horizon is used by default.
    """
    if isinstance(base_stream, TimestampStream):
        horizon = base_stream.horizon if horizon is None else horizon
        starts = base_stream.timestamps
    else:
        starts = np.asarray(base_stream, dtype=float)
    n = starts.size
    if n == 0:
        return []

    p = spec.gate_probability()
    gated = stream.random(n) < p
    lengths = np.ones(n, dtype=np.int64)
    n_gated = int(gated.sum())
    if n_gated:
        lengths[gated] = _round_lengths(spec.length_dist.sample(n_gated, stream))

    total = int(lengths.sum())
    owner = np.repeat(np.arange(n), lengths)
    offsets = np.concatenate([[0], np.cumsum(lengths)[:-1]])
    turn_index = np.arange(total) - offsets[owner] + 1
    first = turn_index == 1

    gaps = np.zeros(total)
    n_follow = int((~first).sum())
    if n_follow:
        gaps[~first] = spec.itt_dist.sample(n_follow, stream)
    # Arrival = start + cumulative ITT within the conversation.
    cum = np.cumsum(gaps)
    arrivals = starts[owner] + cum - cum[offsets[owner]]
    arrivals = _strictly_after(arrivals, first)

    batch = data_sampler(total, stream)
    fresh = np.asarray(batch.input, dtype=np.int64)
    out = np.asarray(batch.output, dtype=np.int64)
    # History of turn i = sum of (fresh + output) over earlier turns of its conversation.
    before = np.cumsum(fresh + out) - (fresh + out)
    inputs = fresh + before - before[offsets[owner]]

    keep = np.ones(total, dtype=bool) if horizon is None else arrivals < horizon
    conversations = []
    for c in range(n):
        lo, hi = offsets[c], offsets[c] + lengths[c]
        turns = []
        for i in range(lo, hi):
            if not keep[i]:
                break
            row = batch.row(i)
            data = RequestData(
                int(inputs[i]), row.output_tokens, row.modal_items, row.reason_tokens, row.answer_tokens
            )
            turns.append(Turn(float(arrivals[i]), data, int(turn_index[i]), int(fresh[i])))
        if turns:
            conversations.append(Conversation(f"{id_prefix}{c}", tuple(turns)))
    return conversations


def _shift(conv: Conversation, offset: float, new_id: str, horizon: Optional[float]) -> Optional[Conversation]:
    turns = []
    for t in conv.turns:
        arrival = t.arrival + offset
        if horizon is not None and arrival >= horizon:
            break
        turns.append(Turn(arrival, t.data, t.turn_index, t.fresh_input))
    if not turns:
        return None
    return Conversation(new_id, tuple(turns))


def upsample_itt(
    conversations: Sequence[Conversation], factor: float, horizon: Optional[float] = None
) -> list[Conversation]:
    """Raise the conversation rate by ``factor`` while keeping every ITT.

    Start times are divided by ``factor``; later turns keep their original
    spacing. With ``horizon`` set, the compressed set covers only
    ``[0, horizon / factor)``, so shifted clones (ids suffixed ``~k``) fill the
    rest of the horizon and turns past it are dropped.
    """
    if factor < 1:
        raise sm.ParameterError("factor must be at least 1")
    out = []
    for conv in conversations:
        start = conv.turns[0].arrival
        moved = _shift(conv, start / factor - start, conv.conversation_id, horizon)
        if moved is not None:
            out.append(moved)
    if horizon is None or factor == 1:
        return out
    span = horizon / factor
    base = list(out)
    for k in range(1, math.ceil(factor)):
        for conv in base:
            if conv.turns[0].arrival + k * span >= horizon:
                continue
            clone = _shift(conv, k * span, f"{conv.conversation_id}~{k}", horizon)
            if clone is not None:
                out.append(clone)
    return out


def upsample_naive(
    requests: TimestampStream | Sequence[float], factor: float, horizon: Optional[float] = None
) -> TimestampStream:
    """Divide every IAT (and hence every timestamp) by ``factor``.

    With ``horizon`` set, the compressed stream is repeated back to back so
    that it fills ``[0, horizon)``, mirroring the clones of :func:`upsample_itt`.
    """
    if factor < 1:
        raise sm.ParameterError("factor must be at least 1")
    if isinstance(requests, TimestampStream):
        ts, span = requests.timestamps / factor, requests.horizon / factor
    else:
        ts = np.asarray(requests, dtype=float) / factor
        span = float(ts[-1]) if ts.size else 0.0
    if horizon is None or factor == 1:
        return TimestampStream(ts, span)
    span = horizon / factor
    ts = ts[ts < span]
    tiled = np.concatenate([ts + k * span for k in range(math.ceil(factor))])
    return TimestampStream(tiled[tiled < horizon], horizon)


def flatten(conversations: Iterable[Conversation]) -> list[FlatRequest]:
    """All turns as one list sorted by arrival (stable for ties)."""
    flat = [
        FlatRequest(t.arrival, conv.conversation_id, t.turn_index, t.data)
        for conv in conversations
        for t in conv.turns
    ]
    flat.sort(key=lambda r: r.arrival)
    return flat
