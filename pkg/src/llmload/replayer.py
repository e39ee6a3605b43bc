"""Replay a workload against a streaming chat-completions endpoint, plus a mock
endpoint with a configurable latency model.

Wire schema (one POST to ``<endpoint>/v1/chat/completions`` per record)::

    model             string, from ReplayConfig.model
    messages          [{role, content}]; content is filler, one word per token
    max_tokens        record ``out``
    min_tokens        record ``out`` (asks real servers not to stop early)
    stream            true
    ignore_eos        true
    reasoning_tokens  record ``reason`` (extension, omitted when null)
    modal_tokens      total modal tokens of the record (extension, omitted when 0)
    modal_items       [{m, tok}] (extension, omitted when null)

Later turns of a conversation send the previous turn's input and output as a
user/assistant pair followed by the new user message, so the prompt still
totals the record's ``in`` tokens. The response is a server-sent event stream
of ``chat.completion.chunk`` objects terminated by ``data: [DONE]``; every
chunk whose delta carries ``content`` or ``reasoning_content`` counts as one
token arrival.
"""

from __future__ import annotations

import asyncio
import contextlib
import json
import math
import socket
import subprocess
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Iterator, Optional, Sequence

import aiohttp
import numpy as np
from aiohttp import web

from .composer import RequestRecord, Workload

CHAT_PATH = "/v1/chat/completions"
OVERRUN_THRESHOLD = 0.1
SLO_TTFT = 2.25
SLO_TBT = 0.5
FILLER = "tok"
PERCENTILES = (50, 90, 99)


class ReplayError(RuntimeError):
    """The replay could not be started."""


# ---------------------------------------------------------------------------
# Mock endpoint
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LatencyModel:
    """Delays of the mock server.

    The first token arrives ``ttft_base + prefill_per_1k * (in + modal) / 1000``
    seconds after the request acquires a serving slot, and every further token
    ``per_token`` seconds after the previous one was written. ``jitter`` scales each delay
    by a uniform factor in ``[1 - jitter, 1 + jitter]``. With
    ``max_concurrency`` set, requests beyond the cap wait for a free slot.
    """

    ttft_base: float = 0.0
    prefill_per_1k: float = 0.0
    per_token: float = 0.0
    jitter: float = 0.0
    max_concurrency: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if min(self.ttft_base, self.prefill_per_1k, self.per_token) < 0:
            raise ValueError("latency model delays must be non-negative")
        if not 0 <= self.jitter < 1:
            raise ValueError("jitter must lie in [0, 1)")
        if self.max_concurrency is not None and self.max_concurrency < 1:
            raise ValueError("max_concurrency must be at least 1")

    def prefill(self, input_tokens: int) -> float:
        return self.ttft_base + self.prefill_per_1k * input_tokens / 1000.0

    def e2e(self, input_tokens: int, output_tokens: int) -> float:
        """Jitter-free service time of one request."""
        return self.prefill(input_tokens) + max(output_tokens - 1, 0) * self.per_token


def _count_tokens(messages) -> int:
    return sum(len(str(m.get("content", "")).split()) for m in messages)


def _parse_request(body) -> tuple[int, int, int]:
    """(prompt tokens incl. modal, reason tokens, output tokens) or ValueError."""
    if not isinstance(body, dict):
        raise ValueError("request body must be an object")
    messages = body.get("messages")
    if not isinstance(messages, list) or not all(isinstance(m, dict) for m in messages):
        raise ValueError("messages must be a list of objects")
    out = body.get("max_tokens")
    if not isinstance(out, int) or isinstance(out, bool) or out < 1:
        raise ValueError("max_tokens must be a positive integer")
    reason = body.get("reasoning_tokens") or 0
    modal = body.get("modal_tokens") or 0
    if not isinstance(reason, int) or not isinstance(modal, int) or reason < 0 or modal < 0:
        raise ValueError("reasoning_tokens and modal_tokens must be non-negative integers")
    return _count_tokens(messages) + modal, min(reason, out), out


def _chunk(i: int, key: str, finish: Optional[str]) -> bytes:
    obj = {
        "id": "mock",
        "object": "chat.completion.chunk",
        "choices": [{"index": 0, "delta": {key: FILLER + " "}, "finish_reason": finish}],
    }
    return b"data: " + json.dumps(obj, separators=(",", ":")).encode() + b"\n\n"


class MockServer:
    """In-process mock endpoint; use :func:`start_mock` to create one."""

    def __init__(self, model: LatencyModel):
        self.model = model
        self.rng = np.random.default_rng(model.seed)
        self.slots = asyncio.Semaphore(model.max_concurrency) if model.max_concurrency else None
        self.served = 0
        self.runner: Optional[web.AppRunner] = None
        self.url = ""

    def _jitter(self, delay: float) -> float:
        if self.model.jitter == 0 or delay == 0:
            return delay
        return delay * self.rng.uniform(1 - self.model.jitter, 1 + self.model.jitter)

    async def handle_chat(self, request: web.Request) -> web.StreamResponse:
        try:
            prompt, reason, out = _parse_request(await request.json())
        except (ValueError, json.JSONDecodeError) as exc:
            return web.json_response({"error": {"message": str(exc), "type": "invalid_request"}}, status=400)
        async with self.slots if self.slots else contextlib.nullcontext():
            loop = asyncio.get_running_loop()
            deadline = loop.time() + self._jitter(self.model.prefill(prompt))
            resp = web.StreamResponse(headers={"Content-Type": "text/event-stream", "Cache-Control": "no-cache"})
            await resp.prepare(request)
            for i in range(out):
                delay = deadline - loop.time()
                if delay > 0:
                    await asyncio.sleep(delay)
                key = "reasoning_content" if i < reason else "content"
                await resp.write(_chunk(i, key, "length" if i == out - 1 else None))
                # Each decode step starts when the previous token has gone out.
                deadline = loop.time() + self._jitter(self.model.per_token)
            await resp.write(b"data: [DONE]\n\n")
            await resp.write_eof()
            self.served += 1
            return resp

    async def handle_health(self, request: web.Request) -> web.Response:
        return web.json_response({"status": "ok", "served": self.served})

    def app(self) -> web.Application:
        app = web.Application(client_max_size=64 * 1024 * 1024)
        app.router.add_post(CHAT_PATH, self.handle_chat)
        app.router.add_get("/health", self.handle_health)
        return app

    async def close(self) -> None:
        if self.runner is not None:
            await self.runner.cleanup()
            self.runner = None


async def start_mock(model: LatencyModel, host: str = "127.0.0.1", port: int = 0) -> MockServer:
    """Start the mock on ``host:port`` (0 picks a free port) and return it."""
    server = MockServer(model)
    server.runner = web.AppRunner(server.app(), access_log=None)
    await server.runner.setup()
    site = web.TCPSite(server.runner, host, port)
    await site.start()
    bound = server.runner.addresses[0][1]
    server.url = f"http://{host}:{bound}"
    return server


def mock_serve(model: LatencyModel, host: str = "127.0.0.1", port: int = 8000) -> None:
    """Run the mock in the foreground until interrupted."""

    async def main():
        server = await start_mock(model, host, port)
        print(f"mock endpoint listening on {server.url}", flush=True)
        try:
            await asyncio.Event().wait()
        finally:
            await server.close()

    with contextlib.suppress(KeyboardInterrupt):
        asyncio.run(main())


def free_port(host: str = "127.0.0.1") -> int:
    with socket.socket() as s:
        s.bind((host, 0))
        return s.getsockname()[1]


@contextlib.contextmanager
def mock_process(model: LatencyModel, host: str = "127.0.0.1", startup_timeout: float = 15.0) -> Iterator[str]:
    """Run the mock in a child process so it does not share the replayer's event loop.

    Yields the endpoint URL.
    """
    port = free_port(host)
    argv = [
        sys.executable, "-m", "llmload.cli", "mock-serve", "--host", host, "--port", str(port),
        "--ttft-base", repr(model.ttft_base), "--prefill-per-1k", repr(model.prefill_per_1k),
        "--per-token", repr(model.per_token), "--jitter", repr(model.jitter), "--seed", str(model.seed),
    ]
    if model.max_concurrency:
        argv += ["--max-concurrency", str(model.max_concurrency)]
    proc = subprocess.Popen(argv, stdout=subprocess.DEVNULL, stderr=subprocess.PIPE)
    url = f"http://{host}:{port}"
    try:
        deadline = time.monotonic() + startup_timeout
        while True:
            if proc.poll() is not None:
                raise ReplayError(f"mock exited early: {proc.stderr.read().decode(errors='replace')}")
            try:
                with socket.create_connection((host, port), timeout=0.2):
                    break
            except OSError:
                if time.monotonic() > deadline:
                    raise ReplayError("mock did not start in time")
                time.sleep(0.05)
        yield url
    finally:
        proc.terminate()
        try:
            proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait()
        proc.stderr.close()


# ---------------------------------------------------------------------------
# Replay
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReplayConfig:
    """``speedup`` divides every scheduled timestamp; 0 sends everything at once.
    ``max_in_flight`` caps concurrent requests on the client side (None = no cap).
    """

    endpoint: str
    speedup: float = 1.0
    max_in_flight: Optional[int] = None
    timeout: float = 60.0
    model: str = "mock"
    payload: str = "filler"

    def __post_init__(self):
        if not self.timeout > 0:
            raise ValueError("timeout must be positive")
        if self.speedup < 0:
            raise ValueError("speedup must be non-negative")
        if self.max_in_flight is not None and self.max_in_flight < 1:
            raise ValueError("max_in_flight must be at least 1")
        if self.payload != "filler":
            raise ValueError(f"unknown payload mode {self.payload!r}")


@dataclass
class RequestMetrics:
    """Times are seconds relative to the replay start.

    ``held`` is how long a conversation turn waited for the previous turn to
    finish beyond its scheduled time; ``dispatch_error`` excludes it.
    """

    index: int
    scheduled_ts: float
    actual_dispatch_ts: float
    ttft: float = math.nan
    tbt_samples: list[float] = field(default_factory=list)
    e2e: float = math.nan
    status: str = "ok"
    held: float = 0.0
    tokens: int = 0
    detail: str = ""

    @property
    def dispatch_error(self) -> float:
        return max(self.actual_dispatch_ts - self.scheduled_ts - self.held, 0.0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dispatch_error"] = self.dispatch_error
        return d


def _filler(n: int) -> str:
    return " ".join([FILLER] * max(n, 0))


def build_payload(record: RequestRecord, previous: Optional[RequestRecord], model: str) -> dict:
    """Request body for one record (see the module docstring)."""
    history = previous.input_tokens + previous.output_tokens if previous is not None else 0
    fresh = record.input_tokens - history
    if previous is not None and fresh >= 0:
        messages = [
            {"role": "user", "content": _filler(previous.input_tokens)},
            {"role": "assistant", "content": _filler(previous.output_tokens)},
            {"role": "user", "content": _filler(fresh)},
        ]
    else:
        messages = [{"role": "user", "content": _filler(record.input_tokens)}]
    body = {
        "model": model,
        "messages": messages,
        "max_tokens": record.output_tokens,
        "min_tokens": record.output_tokens,
        "stream": True,
        "ignore_eos": True,
    }
    if record.reason_tokens is not None:
        body["reasoning_tokens"] = record.reason_tokens
    if record.modal_tokens:
        body["modal_tokens"] = record.modal_tokens
    if record.modal_items is not None:
        body["modal_items"] = [{"m": m, "tok": t} for m, t in record.modal_items]
    return body


def _is_token_event(line: bytes) -> Optional[bool]:
    """True for a token chunk, False for other events, None at ``[DONE]``."""
    if not line.startswith(b"data:"):
        return False
    data = line[5:].strip()
    if data == b"[DONE]":
        return None
    try:
        obj = json.loads(data)
    except json.JSONDecodeError:
        return False
    for choice in obj.get("choices") or ():
        delta = choice.get("delta") or {}
        if delta.get("content") or delta.get("reasoning_content"):
            return True
    return False


async def _send(
    session: aiohttp.ClientSession, url: str, body: dict, m: RequestMetrics, t0: float, timeout: float
) -> None:
    loop = asyncio.get_running_loop()
    m.actual_dispatch_ts = loop.time() - t0
    start = loop.time()
    arrivals = []
    try:
        async with session.post(url, json=body, timeout=aiohttp.ClientTimeout(total=timeout)) as resp:
            if resp.status != 200:
                m.status, m.detail = "error", f"HTTP {resp.status}"
                return
            async for line in resp.content:
                kind = _is_token_event(line)
                if kind is None:
                    break
                if kind:
                    arrivals.append(loop.time())
        m.e2e = loop.time() - start
    except asyncio.TimeoutError:
        m.status, m.detail = "timeout", f"no completion within {timeout:g}s"
        return
    except (aiohttp.ClientError, OSError) as exc:
        m.status, m.detail = "error", f"{type(exc).__name__}: {exc}"
        return
    m.tokens = len(arrivals)
    if not arrivals:
        m.status, m.detail = "error", "stream carried no tokens"
        return
    m.ttft = arrivals[0] - start
    m.tbt_samples = np.diff(arrivals).tolist()


async def replay_async(
    workload: Workload | Sequence[RequestRecord], config: ReplayConfig
) -> tuple[list[RequestMetrics], dict]:
    records = list(workload.records if isinstance(workload, Workload) else workload)
    if not records:
        return [], {}
    url = config.endpoint.rstrip("/")
    if not url.endswith(CHAT_PATH):
        url += CHAT_PATH
    loop = asyncio.get_running_loop()
    order = sorted(range(len(records)), key=lambda i: records[i].timestamp)
    base = records[order[0]].timestamp
    scale = 0.0 if config.speedup == 0 else 1.0 / config.speedup

    # Each conversation turn waits on the completion of the turn before it.
    done: dict[int, asyncio.Future] = {}
    previous: dict[int, int] = {}
    last_of_conv: dict[str, int] = {}
    for i in order:
        conv = records[i].conversation_id
        if conv is not None:
            if conv in last_of_conv:
                previous[i] = last_of_conv[conv]
            last_of_conv[conv] = i
            done[i] = loop.create_future()

    metrics = [RequestMetrics(i, (records[i].timestamp - base) * scale, math.nan) for i in range(len(records))]
    gate = asyncio.Semaphore(config.max_in_flight) if config.max_in_flight else None
    connector = aiohttp.TCPConnector(limit=0, force_close=False)
    tasks = []
    async with aiohttp.ClientSession(connector=connector) as session:
        t0 = loop.time() + 0.05

        async def run(i: int) -> None:
            m = metrics[i]
            try:
                if i in previous:
                    await done[previous[i]]
                    m.held = max(loop.time() - t0 - m.scheduled_ts, 0.0)
                body = build_payload(records[i], records[previous[i]] if i in previous else None, config.model)
                async with gate if gate else contextlib.nullcontext():
                    await _send(session, url, body, m, t0, config.timeout)
            finally:
                if i in done:
                    done[i].set_result(None)

        for i in order:
            delay = t0 + metrics[i].scheduled_ts - loop.time()
            if delay > 0:
                await asyncio.sleep(delay)
            tasks.append(asyncio.create_task(run(i)))
        await asyncio.gather(*tasks)
    return metrics, summarize(metrics)


def replay(workload: Workload | Sequence[RequestRecord], config: ReplayConfig) -> tuple[list[RequestMetrics], dict]:
    """Dispatch every record at its (sped-up) timestamp and measure the stream."""
    return asyncio.run(replay_async(workload, config))


# ---------------------------------------------------------------------------
# Summary and SLOs
# ---------------------------------------------------------------------------


def _percentiles(values, prefix: str) -> dict:
    v = np.asarray(values, dtype=float)
    return {f"{prefix}_p{p}": (float(np.percentile(v, p)) if v.size else None) for p in PERCENTILES}


def summarize(metrics: Sequence[RequestMetrics]) -> dict:
    """Aggregate metrics.

    TTFT and E2E percentiles are over ok requests. For TBT, each request's own
    percentile of its gaps is computed first and the same percentile is then
    taken over those per-request values, so long streams do not dominate.
    """
    if not metrics:
        return {}
    ok = [m for m in metrics if m.status == "ok"]
    errors = [m.dispatch_error for m in metrics if not math.isnan(m.actual_dispatch_ts)]
    summary = {
        "requests": len(metrics),
        "ok": len(ok),
        "errors": sum(m.status == "error" for m in metrics),
        "timeouts": sum(m.status == "timeout" for m in metrics),
    }
    summary.update(_percentiles([m.ttft for m in ok], "ttft"))
    for p in PERCENTILES:
        per_request = [np.percentile(m.tbt_samples, p) for m in ok if m.tbt_samples]
        summary[f"tbt_p{p}"] = float(np.percentile(per_request, p)) if per_request else None
    summary.update(_percentiles([m.e2e for m in ok], "e2e"))
    summary.update(_percentiles(errors, "dispatch_error"))
    summary["dispatch_error_max"] = max(errors) if errors else None
    summary["overruns"] = sum(e > OVERRUN_THRESHOLD for e in errors)
    summary["overrun"] = summary["overruns"] > 0
    summary["held_turns"] = sum(m.held > 0 for m in metrics)
    return summary


def slo_verdict(summary: dict, ttft: float = SLO_TTFT, tbt: float = SLO_TBT) -> dict:
    """P99 TTFT and P99 TBT against their targets; failed requests fail the run."""
    if not summary:
        return {"pass": True, "ttft_p99": None, "tbt_p99": None, "reason": "empty workload"}
    reasons = []
    if summary["ok"] < summary["requests"]:
        reasons.append(f"{summary['requests'] - summary['ok']} requests failed")
    t, g = summary.get("ttft_p99"), summary.get("tbt_p99")
    if t is not None and t > ttft:
        reasons.append(f"P99 TTFT {t:.3f}s > {ttft:g}s")
    if g is not None and g > tbt:
        reasons.append(f"P99 TBT {g:.3f}s > {tbt:g}s")
    return {"pass": not reasons, "ttft_p99": t, "tbt_p99": g, "reason": "; ".join(reasons) or "within SLO"}


# ---------------------------------------------------------------------------
# SLO search
# ---------------------------------------------------------------------------


def rescale(workload: Workload, rate: float) -> list[RequestRecord]:
    """Records with timestamps stretched so the mean rate becomes ``rate``."""
    records = workload.records
    if not records:
        return []
    ts = workload.timestamps()
    span = workload.horizon if workload.horizon > 0 else float(ts[-1] - ts[0]) or 1.0
    factor = (len(records) / span) / rate
    return [replace(r, timestamp=r.timestamp * factor) for r in records]


@dataclass
class Probe:
    rate: float
    passed: bool
    summary: dict


@dataclass
class SearchResult:
    verdict: str  # "found", "bracket-max" or "unmeetable"
    rate: Optional[float]
    bracket: tuple[float, float]
    probes: list[Probe]

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "rate": self.rate,
            "bracket": list(self.bracket),
            "probe_count": len(self.probes),
            "probes": [{"rate": p.rate, "pass": p.passed, "ttft_p99": p.summary.get("ttft_p99"),
                        "tbt_p99": p.summary.get("tbt_p99")} for p in self.probes],
        }


def slo_search(
    template: Workload,
    config: ReplayConfig,
    slo: tuple[float, float] = (SLO_TTFT, SLO_TBT),
    low: float = 0.1,
    high: float = 100.0,
    rel_tol: float = 0.05,
    max_probes: int = 12,
    runner: Optional[Callable[[list[RequestRecord], ReplayConfig], dict]] = None,
) -> SearchResult:
    """Largest rate in ``[low, high]`` whose replay meets both P99 targets.

    Each probe replays the template rescaled to the probe rate. Bisection
    stops when the bracket is within ``rel_tol`` of its lower end or after
    ``max_probes`` probes. ``runner`` replaces the real replay in tests.
    """
    if not 0 < low < high:
        raise ValueError("need 0 < low < high")
    if not template.records:
        raise ValueError("template workload is empty")
    probes: list[Probe] = []

    def probe(rate: float) -> bool:
        records = rescale(template, rate)
        summary = runner(records, config) if runner else replay(records, config)[1]
        passed = slo_verdict(summary, *slo)["pass"]
        probes.append(Probe(rate, passed, summary))
        return passed

    if not probe(low):
        return SearchResult("unmeetable", None, (low, high), probes)
    if probe(high):
        return SearchResult("bracket-max", high, (low, high), probes)
    lo, hi = low, high
    while len(probes) < max_probes and (hi - lo) > rel_tol * lo:
        mid = math.sqrt(lo * hi) if hi / lo > 4 else 0.5 * (lo + hi)
        if probe(mid):
            lo = mid
        else:
            hi = mid
    return SearchResult("found", lo, (lo, hi), probes)
