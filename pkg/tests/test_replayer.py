import json
import urllib.error
import urllib.request

import pytest

from llmload import replayer as rp
from llmload.composer import RequestRecord, Workload


def uniform(n, rate, inp=100, out=32):
    recs = [RequestRecord(i / rate, "c", inp, out) for i in range(n)]
    return Workload(recs, {"horizon": n / rate, "category": "language"})


@pytest.fixture(scope="module")
def standard():
    with rp.mock_process(rp.LatencyModel(ttft_base=0.05, per_token=0.01)) as url:
        yield url


@pytest.fixture(scope="module")
def null_server():
    with rp.mock_process(rp.LatencyModel()) as url:
        yield url


@pytest.fixture(scope="module")
def serial():
    with rp.mock_process(rp.LatencyModel(ttft_base=0.02, per_token=0.01, max_concurrency=1)) as url:
        yield url


def post(url, body: bytes):
    req = urllib.request.Request(url + rp.CHAT_PATH, data=body, headers={"Content-Type": "application/json"})
    return urllib.request.urlopen(req, timeout=10)


class TestLatencyModel:
    def test_e2e(self):
        m = rp.LatencyModel(ttft_base=0.05, prefill_per_1k=0.1, per_token=0.01)
        assert m.prefill(2000) == pytest.approx(0.25)
        assert m.e2e(2000, 11) == pytest.approx(0.35)

    @pytest.mark.parametrize("kwargs", [{"per_token": -1.0}, {"jitter": 1.0}, {"max_concurrency": 0}])
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(ValueError):
            rp.LatencyModel(**kwargs)


class TestPayload:
    def test_single_turn(self):
        body = rp.build_payload(RequestRecord(0.0, "a", 3, 7, reason_tokens=5, answer_tokens=2), None, "m")
        assert body["messages"] == [{"role": "user", "content": "tok tok tok"}]
        assert body["max_tokens"] == body["min_tokens"] == 7
        assert body["stream"] is True and body["ignore_eos"] is True
        assert body["reasoning_tokens"] == 5

    def test_follow_up_turn_carries_history(self):
        prev = RequestRecord(0.0, "a", 2, 3, "c", 1)
        cur = RequestRecord(5.0, "a", 9, 4, "c", 2)
        roles = [(m["role"], len(m["content"].split())) for m in rp.build_payload(cur, prev, "m")["messages"]]
        assert roles == [("user", 2), ("assistant", 3), ("user", 4)]

    def test_modal_fields(self):
        r = RequestRecord(0.0, "a", 10, 4, modal_items=(("image", 576),))
        body = rp.build_payload(r, None, "m")
        assert body["modal_tokens"] == 576
        assert body["modal_items"] == [{"m": "image", "tok": 576}]

    def test_parse_counts_prompt_and_modal(self):
        body = {"messages": [{"role": "user", "content": "a b c"}], "max_tokens": 4, "modal_tokens": 10}
        assert rp._parse_request(body) == (13, 0, 4)


class TestMockServer:
    def test_health_and_stream(self, standard):
        with urllib.request.urlopen(standard + "/health", timeout=5) as r:
            assert r.status == 200
        body = rp.build_payload(RequestRecord(0.0, "a", 5, 3), None, "mock")
        with post(standard, json.dumps(body).encode()) as r:
            lines = [ln for ln in r.read().decode().split("\n\n") if ln]
        assert lines[-1] == "data: [DONE]"
        chunks = [json.loads(ln[len("data: "):]) for ln in lines[:-1]]
        assert len(chunks) == 3 and chunks[-1]["choices"][0]["finish_reason"] == "length"

    @pytest.mark.parametrize("body", [b"not json", b'{"messages": [], "max_tokens": 0}', b'{"max_tokens": 3}'])
    def test_malformed_request_is_400(self, standard, body):
        with pytest.raises(urllib.error.HTTPError) as err:
            post(standard, body)
        assert err.value.code == 400


class TestReplay:
    def test_empty(self):
        assert rp.replay([], rp.ReplayConfig("http://127.0.0.1:1")) == ([], {})

    def test_standard_latencies(self, standard):
        metrics, s = rp.replay(uniform(200, 20), rp.ReplayConfig(standard))
        assert s["ok"] == 200
        assert 0.050 <= s["ttft_p50"] <= 0.060
        assert 0.010 <= s["tbt_p50"] <= 0.012
        assert s["dispatch_error_p99"] <= 0.010
        for m in metrics:
            assert m.ttft <= m.e2e
            assert sum(m.tbt_samples) <= m.e2e
            assert m.tokens == 32

    def test_null_model_overhead(self, null_server):
        _, s = rp.replay(uniform(50, 20, out=4), rp.ReplayConfig(null_server))
        assert s["ttft_p50"] < 0.005

    def test_e2e_tracks_output_length(self, standard):
        _, s = rp.replay(uniform(5, 2, out=100), rp.ReplayConfig(standard))
        assert s["e2e_p50"] == pytest.approx(0.05 + 99 * 0.01, rel=0.1)

    def test_concurrency_cap_queues_second_request(self, serial):
        recs = [RequestRecord(0.0, "a", 10, 20), RequestRecord(0.0, "b", 10, 20)]
        metrics, _ = rp.replay(recs, rp.ReplayConfig(serial))
        first, second = sorted(metrics, key=lambda m: m.ttft)
        assert second.ttft >= first.e2e - 0.005

    def test_connection_failure_is_error(self):
        url = f"http://127.0.0.1:{rp.free_port()}"
        metrics, s = rp.replay(uniform(3, 10), rp.ReplayConfig(url, timeout=2.0))
        assert s["errors"] == 3 and s["ok"] == 0
        assert all(m.status == "error" and m.detail for m in metrics)
        assert not rp.slo_verdict(s)["pass"]

    def test_conversation_turn_waits_for_previous(self, standard):
        recs = [
            RequestRecord(0.0, "a", 10, 50, "c1", 1),
            RequestRecord(0.1, "a", 70, 5, "c1", 2),
            RequestRecord(0.1, "b", 10, 5),
        ]
        metrics, s = rp.replay(recs, rp.ReplayConfig(standard))
        first, second, other = metrics
        assert second.actual_dispatch_ts >= first.actual_dispatch_ts + first.e2e - 0.005
        assert second.held > 0.3 and other.held == 0.0
        assert second.dispatch_error <= 0.01
        assert s["held_turns"] == 1

    def test_speedup_compresses_schedule(self, null_server):
        metrics, _ = rp.replay(uniform(10, 1, out=1), rp.ReplayConfig(null_server, speedup=10))
        assert metrics[-1].scheduled_ts == pytest.approx(0.9)
        assert metrics[-1].actual_dispatch_ts == pytest.approx(0.9, abs=0.02)


class TestSummary:
    def metric(self, i, ttft, tbt, status="ok"):
        m = rp.RequestMetrics(i, 0.0, 0.001, ttft, tbt, ttft + sum(tbt), status)
        return m

    def test_tbt_is_per_request_then_pooled(self):
        long = self.metric(0, 0.1, [0.01] * 1000)
        short = [self.metric(i, 0.1, [0.5, 0.5]) for i in range(1, 4)]
        s = rp.summarize([long, *short])
        assert s["tbt_p50"] == pytest.approx(0.5)

    def test_verdict(self):
        ok = rp.summarize([self.metric(0, 0.1, [0.05])])
        assert rp.slo_verdict(ok)["pass"]
        slow = rp.summarize([self.metric(0, 3.0, [0.05])])
        v = rp.slo_verdict(slow)
        assert not v["pass"] and "TTFT" in v["reason"]
        assert not rp.slo_verdict(rp.summarize([self.metric(0, 0.1, [0.9])]))["pass"]

    def test_overrun_flag(self):
        late = rp.RequestMetrics(0, 0.0, 0.5, 0.1, [0.01], 0.2)
        s = rp.summarize([late])
        assert s["overrun"] and s["dispatch_error_max"] == pytest.approx(0.5)


def capacity_runner(capacity):
    """Fake replay: passes whenever the probe rate is at most ``capacity``."""

    def run(records, _config):
        rate = len(records) / (records[-1].timestamp - records[0].timestamp + 1e-9) if len(records) > 1 else 0.0
        p99 = 0.1 if rate <= capacity else 10.0
        return {"requests": len(records), "ok": len(records), "ttft_p99": p99, "tbt_p99": 0.01}

    return run


class TestSloSearch:
    template = uniform(101, 1.0)
    config = rp.ReplayConfig("http://unused")

    def test_rescale_sets_rate(self):
        out = rp.rescale(self.template, 4.0)
        assert len(out) / (out[-1].timestamp + 0.25) == pytest.approx(4.0, rel=0.01)

    def test_found_within_tolerance(self):
        r = rp.slo_search(self.template, self.config, low=1, high=100, runner=capacity_runner(23.0))
        assert r.verdict == "found"
        assert r.rate <= 23.0 * 1.0001 and r.rate == pytest.approx(23.0, rel=0.05)
        assert len(r.probes) <= 12

    def test_unmeetable(self):
        r = rp.slo_search(self.template, self.config, low=5, high=50, runner=capacity_runner(1.0))
        assert r.verdict == "unmeetable" and r.rate is None and len(r.probes) == 1

    def test_bracket_max(self):
        r = rp.slo_search(self.template, self.config, low=1, high=10, runner=capacity_runner(1e9))
        assert r.verdict == "bracket-max" and r.rate == 10

    def test_unmeetable_tbt_on_live_mock(self, standard):
        r = rp.slo_search(uniform(20, 5, out=5), rp.ReplayConfig(standard), slo=(2.25, 0.005), low=1, high=10)
        assert r.verdict == "unmeetable"
        assert r.to_dict()["probe_count"] == 1

    def test_rejects_bad_bracket(self):
        with pytest.raises(ValueError):
            rp.slo_search(self.template, self.config, low=5, high=5)
