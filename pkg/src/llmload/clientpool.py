"""Client pool: per-client profiles and the generator that turns them into clients.

Each profile carries an arrival process, a rate shape over time, a data spec
and optionally a conversation spec. Generation assigns rates by rank. Rank 1
is the busiest client, and a rank-``r`` client gets weight proportional to
``r ** -s``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

import numpy as np
from scipy import optimize

from . import statmodel as sm
from .arrival import ArrivalSpec, RateProfile
from .conversation import ConversationSpec
from .datamodel import CATEGORIES, DataSpec, data_spec_from_dict
from .rng import derive

RANK_WEIGHTS = "rank-weights"
EXPLICIT = "explicit"
PRESETS = ("language", "multimodal", "reasoning")


class PoolError(ValueError):
    """Client pool cannot be loaded or used."""


@dataclass(frozen=True)
class ClientProfile:
    client_id: str
    category: str
    arrival: ArrivalSpec
    rate_profile: RateProfile
    data: DataSpec
    base_rate: float = 1.0
    conversation: Optional[ConversationSpec] = None

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise PoolError(f"unknown category {self.category!r}")
        if self.data.category != self.category:
            raise PoolError(
                f"client {self.client_id}: {self.data.category} data spec in a {self.category} profile"
            )
        if not (self.base_rate >= 0 and math.isfinite(self.base_rate)):
            raise PoolError(f"client {self.client_id}: base_rate must be finite and non-negative")

    def to_dict(self) -> dict[str, Any]:
        out = {
            "id": self.client_id,
            "category": self.category,
            "arrival": self.arrival.to_dict(),
            "rate_profile": self.rate_profile.to_dict(),
            "data": self.data.to_dict(),
        }
        if self.conversation is not None:
            out["conversation"] = self.conversation.to_dict()
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ClientProfile":
        try:
            conv = data.get("conversation")
            return cls(
                client_id=str(data["id"]),
                category=data["category"],
                arrival=ArrivalSpec.from_dict(data["arrival"]),
                rate_profile=RateProfile.from_dict(data.get("rate_profile", {"breakpoints": [[0, 1]]})),
                data=data_spec_from_dict(data["data"]),
                conversation=ConversationSpec.from_dict(conv) if conv else None,
            )
        except KeyError as exc:
            raise PoolError(f"client entry is missing {exc}") from None


@dataclass(frozen=True)
class SkewSpec:
    form: str = RANK_WEIGHTS
    exponent: Optional[float] = None
    shares: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        if self.form == RANK_WEIGHTS:
            if self.exponent is None or not self.exponent > 0:
                raise PoolError("rank-weights skew needs an exponent > 0")
        elif self.form == EXPLICIT:
            if not self.shares:
                raise PoolError("explicit skew needs a list of shares")
            shares = tuple(float(s) for s in self.shares)
            if any(s < 0 for s in shares) or abs(sum(shares) - 1.0) > 1e-9:
                raise PoolError("explicit shares must be non-negative and sum to 1")
            object.__setattr__(self, "shares", shares)
        else:
            raise PoolError(f"unknown skew form {self.form!r}")

    def weights(self, n: int) -> np.ndarray:
        """Rate share of ranks 1..n."""
        if self.form == EXPLICIT:
            if n != len(self.shares):
                raise PoolError(f"explicit skew lists {len(self.shares)} shares for {n} clients")
            return np.asarray(self.shares)
        return rank_weights(n, self.exponent)

    def to_dict(self) -> dict[str, Any]:
        if self.form == EXPLICIT:
            return {"form": EXPLICIT, "shares": list(self.shares)}
        return {"form": RANK_WEIGHTS, "exponent": self.exponent}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SkewSpec":
        shares = data.get("shares")
        return cls(data.get("form", RANK_WEIGHTS), data.get("exponent"), tuple(shares) if shares else None)


def rank_weights(n: int, exponent: float) -> np.ndarray:
    w = np.arange(1, n + 1, dtype=float) ** -exponent
    return w / w.sum()


def exponent_for_share(n: int, top_k: int, share: float) -> float:
    """Rank exponent that gives the top ``top_k`` of ``n`` clients ``share`` of the rate."""
    if not 0 < top_k < n:
        raise PoolError("top_k must lie strictly between 0 and n")

    def gap(s):
        return rank_weights(n, s)[:top_k].sum() - share

    return float(optimize.brentq(gap, 1e-6, 20.0, xtol=1e-14))


@dataclass(frozen=True)
class ClientPool:
    profiles: tuple[ClientProfile, ...]
    skew: SkewSpec
    category: Optional[str] = None
    default_clients: Optional[int] = None
    targets: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "profiles", tuple(self.profiles))
        if not self.profiles:
            raise PoolError("client pool is empty")
        ids = [p.client_id for p in self.profiles]
        if len(set(ids)) != len(ids):
            raise PoolError("client ids in a pool must be unique")
        if self.category is None:
            object.__setattr__(self, "category", self.profiles[0].category)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "category": self.category,
            "skew": self.skew.to_dict(),
            "clients": [p.to_dict() for p in self.profiles],
        }
        if self.default_clients is not None:
            out["default_clients"] = self.default_clients
        if self.targets:
            out["targets"] = dict(self.targets)
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ClientPool":
        try:
            clients = data["clients"]
        except (KeyError, TypeError):
            raise PoolError("pool document needs a 'clients' list") from None
        try:
            return cls(
                tuple(ClientProfile.from_dict(c) for c in clients),
                SkewSpec.from_dict(data.get("skew", {})),
                data.get("category"),
                data.get("default_clients"),
                dict(data.get("targets", {})),
            )
        except sm.ParameterError as exc:
            raise PoolError(str(exc)) from exc


def preset_path(name: str):
    return resources.files("llmload").joinpath("presets", f"{name}.pool")


def load_pool(path: str | Path) -> ClientPool:
    """Load a pool file; ``presets/<name>.pool`` or a bare preset name resolve to the shipped presets."""
    text = None
    p = Path(path)
    if p.exists():
        text = p.read_text()
    else:
        name = p.stem if p.suffix == ".pool" else str(path)
        if name in PRESETS and (p.parent.name in ("", "presets")):
            text = preset_path(name).read_text()
    if text is None:
        raise PoolError(f"pool file not found: {path}")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise PoolError(f"{path}: {exc}") from exc
    return ClientPool.from_dict(data)


def save_pool(pool: ClientPool, path: str | Path) -> None:
    Path(path).write_text(json.dumps(pool.to_dict(), indent=1) + "\n")


def generate_clients(pool: ClientPool, n_clients: int, total_rate: float, seed: int) -> list[ClientProfile]:
    """Instantiate ``n_clients`` clients whose base rates sum to ``total_rate``.

    Pool order is rank order, so the first profile becomes the busiest client.
    Beyond the pool size, ranks are filled with copies of randomly chosen
    profiles. Each copy gets its own id, and therefore its own random
    substreams when the workload is composed.
    """
    if n_clients < 1:
        raise PoolError("n_clients must be at least 1")
    if not total_rate > 0:
        raise PoolError("total_rate must be positive")
    weights = pool.skew.weights(n_clients)
    size = len(pool.profiles)
    extra = derive(seed, "clientpool", "copies").integers(0, size, max(n_clients - size, 0))
    width = max(5, len(str(n_clients)))
    clients = []
    for rank in range(1, n_clients + 1):
        src = pool.profiles[rank - 1] if rank <= size else pool.profiles[extra[rank - size - 1]]
        clients.append(
            replace(src, client_id=f"{rank:0{width}d}-{src.client_id}", base_rate=float(weights[rank - 1]))
        )
    return scale_rates(clients, total_rate)


def scale_rates(clients: Sequence[ClientProfile], total_rate: float) -> list[ClientProfile]:
    """Multiply every base rate by one factor so they sum to ``total_rate``."""
    current = math.fsum(c.base_rate for c in clients)
    if not current > 0:
        raise sm.DegenerateDataError("cannot scale clients whose rates are all zero")
    factor = total_rate / current
    return [replace(c, base_rate=c.base_rate * factor) for c in clients]


def skew_share(clients: Sequence[ClientProfile], top_k: int) -> float:
    """Rate share of the ``top_k`` busiest clients."""
    if top_k > len(clients):
        raise PoolError("top_k exceeds the number of clients")
    rates = np.sort(np.array([c.base_rate for c in clients]))[::-1]
    return float(rates[:top_k].sum() / rates.sum())
