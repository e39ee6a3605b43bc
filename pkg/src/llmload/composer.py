"""Workload assembly: clients, per-client timestamps and payloads, merged in time order.

Every client draws from its own substreams, keyed on the master seed, its
client id and the role of the stream ("arrival", "data", "conversation"). A
client's requests therefore do not depend on any other client. The merged
result is identical for any number of worker threads.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence, Union

import numpy as np

from . import __version__
from . import statmodel as sm
from .arrival import CONSTANT, ArrivalSpec, RateProfile, modulate, modulate_segments
from .clientpool import ClientPool, ClientProfile, PoolError, generate_clients, load_pool
from .conversation import flatten, sample_conversations
from .datamodel import CATEGORIES, DataBatch, sample_batch
from .rng import DEFAULT_SEED, derive

FORMAT_VERSION = 1
WARMUP_CAP = 86400.0


class WorkloadParseError(ValueError):
    """Malformed workload file."""


@dataclass(frozen=True)
class RequestRecord:
    timestamp: float
    client_id: str
    input_tokens: int
    output_tokens: int
    conversation_id: Optional[str] = None
    turn: Optional[int] = None
    reason_tokens: Optional[int] = None
    answer_tokens: Optional[int] = None
    modal_items: Optional[tuple[tuple[str, int], ...]] = None

    @property
    def modal_tokens(self) -> int:
        return sum(tok for _, tok in self.modal_items) if self.modal_items else 0

    def to_json(self) -> dict[str, Any]:
        return {
            "ts": self.timestamp,
            "client": self.client_id,
            "conv": self.conversation_id,
            "turn": self.turn,
            "in": self.input_tokens,
            "out": self.output_tokens,
            "reason": self.reason_tokens,
            "answer": self.answer_tokens,
            "modal": None if self.modal_items is None else [{"m": m, "tok": t} for m, t in self.modal_items],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "RequestRecord":
        modal = obj.get("modal")
        return cls(
            timestamp=float(obj["ts"]),
            client_id=str(obj["client"]),
            input_tokens=int(obj["in"]),
            output_tokens=int(obj["out"]),
            conversation_id=obj.get("conv"),
            turn=obj.get("turn"),
            reason_tokens=obj.get("reason"),
            answer_tokens=obj.get("answer"),
            modal_items=None if modal is None else tuple((str(i["m"]), int(i["tok"])) for i in modal),
        )


@dataclass
class Workload:
    records: list[RequestRecord]
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def horizon(self) -> float:
        if "horizon" in self.meta and self.meta["horizon"] is not None:
            return float(self.meta["horizon"])
        return self.records[-1].timestamp if self.records else 0.0

    @property
    def category(self) -> Optional[str]:
        return self.meta.get("category")

    def timestamps(self) -> np.ndarray:
        return np.array([r.timestamp for r in self.records], dtype=float)

    def column(self, name: str) -> np.ndarray:
        """Integer column by record attribute; missing values become NaN."""
        vals = [getattr(r, name) for r in self.records]
        return np.array([np.nan if v is None else v for v in vals], dtype=float)

    def modal_tokens(self, modality: Optional[str] = None) -> np.ndarray:
        out = np.zeros(len(self.records))
        for i, r in enumerate(self.records):
            if r.modal_items:
                out[i] = sum(t for m, t in r.modal_items if modality is None or m == modality)
        return out

    def by_client(self) -> dict[str, list[RequestRecord]]:
        groups: dict[str, list[RequestRecord]] = {}
        for r in self.records:
            groups.setdefault(r.client_id, []).append(r)
        return groups


@dataclass(frozen=True)
class WorkloadSpec:
    """What to generate.

    ``total_rate`` may be a number (requests/second) or a :class:`RateProfile`
    whose shape modulates every client. ``clients`` bypasses the pool's
    client generator with a user-specified list.
    """

    pool: Union[str, Path, ClientPool, None]
    total_rate: Union[float, RateProfile]
    horizon: float
    n_clients: Optional[int] = None
    category: Optional[str] = None
    seed: int = DEFAULT_SEED
    workers: int = 1
    clients: Optional[tuple[ClientProfile, ...]] = None

    def __post_init__(self):
        if not self.horizon > 0:
            raise sm.ParameterError("horizon must be positive")
        if self.n_clients is not None and self.n_clients < 1:
            raise sm.ParameterError("n_clients must be at least 1")
        if self.category is not None and self.category not in CATEGORIES:
            raise sm.ParameterError(f"unknown category {self.category!r}")
        if self.pool is None and self.clients is None:
            raise sm.ParameterError("either a pool or an explicit client list is required")

    def echo(self) -> dict[str, Any]:
        rate = self.total_rate.to_dict() if isinstance(self.total_rate, RateProfile) else self.total_rate
        pool = self.pool if isinstance(self.pool, (str, type(None))) else (
            str(self.pool) if isinstance(self.pool, Path) else "<in-memory>"
        )
        return {"pool": pool, "n_clients": self.n_clients, "total_rate": rate, "horizon": self.horizon}


def _product_shape(a: RateProfile, b: RateProfile, horizon: float) -> tuple[np.ndarray, np.ndarray]:
    """Piecewise-constant product of two profiles, rescaled to mean 1 over [0, horizon)."""
    ba, ra = a.segments(horizon)
    bb, rb = b.segments(horizon)
    bounds = np.union1d(ba, bb)
    mids = 0.5 * (bounds[:-1] + bounds[1:])
    rates = ra[np.searchsorted(ba, mids, side="right") - 1] * rb[np.searchsorted(bb, mids, side="right") - 1]
    mass = float(np.sum(rates * np.diff(bounds)))
    if mass > 0:
        rates = rates * horizon / mass
    return bounds, rates


@dataclass
class _ClientOutput:
    index: int
    client_id: str
    ts: np.ndarray
    batch: DataBatch
    conv: Optional[list[str]] = None
    turn: Optional[np.ndarray] = None


def _generate_client(
    index: int, client: ClientProfile, shape: tuple[np.ndarray, np.ndarray], horizon: float, seed: int
) -> _ClientOutput:
    cid = client.client_id
    if client.base_rate <= 0:
        return _ClientOutput(index, cid, np.empty(0), sample_batch(client.data, 0, derive(seed, cid, "data")))
    bounds, rates = shape
    data_rng = derive(seed, cid, "data")
    arrival_rng = derive(seed, cid, "arrival")
    if client.conversation is None:
        stream = modulate_segments(client.arrival, bounds, rates * client.base_rate, horizon, arrival_rng)
        return _ClientOutput(index, cid, stream.timestamps, sample_batch(client.data, len(stream), data_rng))

    conv_spec = client.conversation
    start_rate = client.base_rate / conv_spec.requests_per_start()
    # Starts begin before zero at the opening rate so that conversations are
    # already in progress at the start of the horizon; earlier turns are cut.
    lead = min(conv_spec.warmup(), WARMUP_CAP)
    starts = modulate_segments(
        client.arrival,
        np.concatenate([[0.0], bounds + lead]) if lead else bounds,
        (np.concatenate([rates[:1], rates]) if lead else rates) * start_rate,
        horizon + lead,
        arrival_rng,
    ).timestamps - lead
    convs = sample_conversations(
        conv_spec,
        starts,
        lambda n, _stream: sample_batch(client.data, n, data_rng),
        derive(seed, cid, "conversation"),
        horizon=horizon,
        id_prefix=f"{cid}/c",
    )
    flat = [f for f in flatten(convs) if f.arrival >= 0]
    batch = DataBatch(
        np.array([f.data.input_tokens for f in flat], dtype=np.int64),
        np.array([f.data.output_tokens for f in flat], dtype=np.int64),
        reason=None if client.category != "reasoning" else np.array([f.data.reason_tokens for f in flat]),
        answer=None if client.category != "reasoning" else np.array([f.data.answer_tokens for f in flat]),
        modal=None if client.category != "multimodal" else [f.data.modal_items for f in flat],
    )
    return _ClientOutput(
        index, cid, np.array([f.arrival for f in flat]), batch,
        conv=[f.conversation_id for f in flat], turn=np.array([f.turn for f in flat], dtype=np.int64),
    )


def _records(out: _ClientOutput, category: str) -> list[RequestRecord]:
    b = out.batch
    n = out.ts.size
    ts = out.ts.tolist()
    ins = b.input.tolist()
    outs = b.output.tolist()
    reason = b.reason.tolist() if b.reason is not None else [None] * n
    answer = b.answer.tolist() if b.answer is not None else [None] * n
    modal = b.modal if b.modal is not None else ([()] * n if category == "multimodal" else [None] * n)
    conv = out.conv if out.conv is not None else [None] * n
    turn = out.turn.tolist() if out.turn is not None else [None] * n
    return [
        RequestRecord(ts[i], out.client_id, ins[i], outs[i], conv[i], turn[i], reason[i], answer[i], modal[i])
        for i in range(n)
    ]


def compose(spec: WorkloadSpec) -> Workload:
    """Generate a workload: clients, timestamps, payloads, conversations, merged."""
    pool = None
    if spec.clients is not None:
        clients = list(spec.clients)
    else:
        pool = spec.pool if isinstance(spec.pool, ClientPool) else load_pool(spec.pool)
        if spec.category is not None and pool.category != spec.category:
            raise PoolError(f"pool category {pool.category!r} does not match requested {spec.category!r}")
        n = spec.n_clients or pool.default_clients or len(pool.profiles)
        clients = None
    category = spec.category or (pool.category if pool else clients[0].category)
    if clients is not None and any(c.category != category for c in clients):
        raise PoolError("client categories do not match the workload category")

    horizon = float(spec.horizon)
    total = spec.total_rate if isinstance(spec.total_rate, RateProfile) else RateProfile.constant(float(spec.total_rate))
    mean_total = total.mean_rate(horizon)
    if not mean_total > 0:
        raise sm.ParameterError("total rate must be positive over the horizon")
    if clients is None:
        clients = generate_clients(pool, n, mean_total, spec.seed)

    # Each client follows its own shape times the total-rate shape, renormalized
    # so its base_rate stays its mean rate over the horizon.
    shapes: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    for c in clients:
        key = id(c.rate_profile)
        if key not in shapes:
            shapes[key] = _product_shape(c.rate_profile, total, horizon)

    def work(item):
        i, c = item
        return _generate_client(i, c, shapes[id(c.rate_profile)], horizon, spec.seed)

    if spec.workers > 1:
        with ThreadPoolExecutor(spec.workers) as pool_exec:
            outputs = list(pool_exec.map(work, enumerate(clients)))
    else:
        outputs = [work(item) for item in enumerate(clients)]

    records: list[RequestRecord] = []
    keys_ts, keys_client, keys_seq = [], [], []
    order_of_client = {cid: k for k, cid in enumerate(sorted(c.client_id for c in clients))}
    for out in outputs:
        records.extend(_records(out, category))
        keys_ts.append(out.ts)
        keys_client.append(np.full(out.ts.size, order_of_client[out.client_id]))
        keys_seq.append(np.arange(out.ts.size))
    if records:
        order = np.lexsort((np.concatenate(keys_seq), np.concatenate(keys_client), np.concatenate(keys_ts)))
        records = [records[i] for i in order]
    meta = {
        "version": FORMAT_VERSION,
        "generator": f"llmload {__version__}",
        "seed": spec.seed,
        "horizon": horizon,
        "category": category,
        "spec": spec.echo(),
    }
    return Workload(records, meta)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _dump(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def dumps(workload: Workload) -> str:
    meta = dict(workload.meta)
    meta.setdefault("version", FORMAT_VERSION)
    for key in ("seed", "horizon", "category"):
        meta.setdefault(key, None)
    lines = [_dump(meta)]
    lines.extend(_dump(r.to_json()) for r in workload.records)
    return "\n".join(lines) + "\n"


def serialize(workload: Workload, path: str | Path) -> None:
    Path(path).write_text(dumps(workload))


def loads(text: str, source: str = "<string>") -> Workload:
    lines = text.splitlines()
    if not lines:
        raise WorkloadParseError(f"{source}:1: missing metadata line")
    try:
        meta = json.loads(lines[0])
        if not isinstance(meta, dict):
            raise ValueError("metadata must be an object")
    except ValueError as exc:
        raise WorkloadParseError(f"{source}:1: bad metadata line: {exc}") from None
    records = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            if not isinstance(obj, dict):
                raise ValueError("record must be an object")
            records.append(RequestRecord.from_json(obj))
        except (ValueError, KeyError, TypeError) as exc:
            raise WorkloadParseError(f"{source}:{lineno}: {type(exc).__name__}: {exc}") from None
    return Workload(records, meta)


def deserialize(path: str | Path) -> Workload:
    return loads(Path(path).read_text(), str(path))


# ---------------------------------------------------------------------------
# Naive comparator
# ---------------------------------------------------------------------------


def pooled_window_cv(timestamps: np.ndarray, window: float) -> float:
    """IAT CV after normalizing each window's IATs by that window's mean IAT.

    This removes slow rate changes, leaving only short-range burstiness.
    """
    ts = np.asarray(timestamps, dtype=float)
    if ts.size < 3:
        return 1.0
    iat = np.diff(ts)
    w = np.floor(ts[:-1] / window).astype(np.int64)
    n = np.bincount(w)
    means = np.bincount(w, weights=iat) / np.maximum(n, 1)
    ok = (n[w] >= 2) & (means[w] > 0)
    if ok.sum() < 2:
        return 1.0
    scaled = iat[ok] / means[w[ok]]
    return float(scaled.std() / scaled.mean())


def naive_baseline(reference: Workload, seed: int = DEFAULT_SEED, window: float = 300.0) -> Workload:
    """Regenerate ``reference`` from whole-workload fits, ignoring clients.

    Arrivals: a Gamma renewal process with one global CV, driven by the
    reference's windowed rate. Data: records' payloads resampled with
    replacement from the reference.
    """
    if not reference.records:
        raise sm.ParameterError("naive baseline needs a non-empty reference")
    horizon = reference.horizon
    ts = reference.timestamps()
    n_windows = max(1, math.ceil(horizon / window - 1e-9))
    counts = np.bincount(np.minimum((ts // window).astype(np.int64), n_windows - 1), minlength=n_windows)
    starts = np.arange(n_windows) * window
    lengths = np.minimum(starts + window, horizon) - starts
    profile = RateProfile(tuple(zip(starts.tolist(), (counts / lengths).tolist())), CONSTANT)
    cv = max(pooled_window_cv(ts, window), 1e-3)
    arrival = ArrivalSpec.from_cv("Gamma", cv)
    stream = modulate(arrival, profile, horizon, derive(seed, "naive", "arrival"))
    picks = derive(seed, "naive", "data").integers(0, len(reference.records), len(stream))
    src = reference.records
    records = [
        RequestRecord(
            float(t), "naive", src[j].input_tokens, src[j].output_tokens, None, None,
            src[j].reason_tokens, src[j].answer_tokens, src[j].modal_items,
        )
        for t, j in zip(stream.timestamps.tolist(), picks.tolist())
    ]
    meta = {
        "version": FORMAT_VERSION,
        "generator": f"llmload {__version__} naive",
        "seed": seed,
        "horizon": horizon,
        "category": reference.category,
        "naive_cv": cv,
    }
    return Workload(records, meta)
