import math

import numpy as np
import pytest
from scipy import stats

from llmload import composer as cp
from llmload import statmodel as sm
from llmload.analyzer import rate_length_scatter, scatter_correlation
from llmload.arrival import ArrivalSpec, RateProfile
from llmload.clientpool import ClientPool, ClientProfile, PoolError, SkewSpec
from llmload.conversation import preset_spec
from llmload.datamodel import LanguageDataSpec, ModalitySpec, MultimodalDataSpec


def text(median=300.0, out_mean=200.0):
    body = sm.LogNormal(math.log(median), 0.6)
    split = float(body.ppf(0.95))
    return LanguageDataSpec(sm.BodyTailMixture(body, sm.Pareto(2.0, split), split, 0.95), sm.Exponential(1 / out_mean))


def client(cid, rate=1.0, data=None, arrival=None, conversation=None):
    return ClientProfile(
        cid, "language", arrival or ArrivalSpec.poisson(), RateProfile.constant(1.0), data or text(), rate, conversation
    )


def spec_for(clients, horizon, total=None, seed=1, workers=1):
    total = total if total is not None else sum(c.base_rate for c in clients)
    return cp.WorkloadSpec(None, total, horizon, seed=seed, workers=workers, clients=tuple(clients))


class TestCompose:
    def test_deterministic_one_per_second(self):
        one = client("a", 1.0, arrival=ArrivalSpec(sm.Empirical((1.0,))))
        w = cp.compose(spec_for([one], 10.0))
        assert 9 <= len(w) <= 10
        assert all(r.timestamp == int(r.timestamp) for r in w.records)

    def test_language_preset_rate_integral(self):
        w = cp.compose(cp.WorkloadSpec("presets/language.pool", 100.0, 600.0, n_clients=300, seed=2))
        assert len(w) == pytest.approx(60_000, rel=0.03)
        ts = w.timestamps()
        assert ts.min() >= 0 and ts.max() < 600.0
        assert np.all(np.diff(ts) >= 0)

    def test_byte_identical_across_runs_and_workers(self):
        make = lambda workers: cp.dumps(
            cp.compose(cp.WorkloadSpec("reasoning", 3.0, 900.0, n_clients=200, seed=5, workers=workers))
        )
        first = make(1)
        assert first == make(1) == make(4)

    def test_seed_changes_output(self):
        a = cp.compose(cp.WorkloadSpec("language", 5.0, 120.0, n_clients=20, seed=1))
        b = cp.compose(cp.WorkloadSpec("language", 5.0, 120.0, n_clients=20, seed=2))
        assert cp.dumps(a) != cp.dumps(b)

    def test_client_substreams_independent(self):
        # Adding a client leaves another client's requests untouched.
        a = client("a", 2.0)
        alone = cp.compose(spec_for([a], 300.0)).by_client()["a"]
        together = cp.compose(spec_for([a, client("b", 5.0)], 300.0, total=7.0)).by_client()["a"]
        assert alone == together

    def test_total_rate_profile_shapes_every_client(self):
        total = RateProfile(((0.0, 1.0), (500.0, 3.0)))
        w = cp.compose(cp.WorkloadSpec(None, total, 1000.0, clients=(client("a"), client("b"))))
        ts = w.timestamps()
        assert (ts >= 500).sum() / (ts < 500).sum() == pytest.approx(3.0, rel=0.15)

    def test_conversation_clients_carry_linkage(self):
        conv = client("c", 0.5, conversation=preset_spec(1.0))
        w = cp.compose(spec_for([conv], 7200.0))
        assert all(r.conversation_id is not None and r.turn >= 1 for r in w.records)
        assert len(w) == pytest.approx(0.5 * 7200, rel=0.15)

    def test_category_mismatch(self):
        with pytest.raises(PoolError):
            cp.compose(cp.WorkloadSpec("language", 1.0, 10.0, category="reasoning"))

    def test_zero_rate(self):
        with pytest.raises(sm.ParameterError):
            cp.compose(spec_for([client("a")], 10.0, total=0.0))

    def test_bad_horizon(self):
        with pytest.raises(sm.ParameterError):
            cp.WorkloadSpec("language", 1.0, 0.0)

    def test_shift_capability(self):
        # Two client mixes over the same pool shift mean input by 1.63x and mean output by 1.46x.
        short = client("short", data=text(median=200.0, out_mean=200.0))
        s_mean = short.data.input.mean()
        # Second client sized so the 80/20 vs 20/80 mixes hit the target ratios.
        target_in, target_out = 1.63, 1.46
        l_mean = s_mean * (0.8 - 0.2 * target_in) / (0.8 * target_in - 0.2)
        l_out = 200.0 * (0.8 - 0.2 * target_out) / (0.8 * target_out - 0.2)
        big = client("long", data=text(median=200.0 * l_mean / s_mean, out_mean=l_out))
        means = []
        for shares in ((0.2, 0.8), (0.8, 0.2)):
            clients = [client("short", shares[0] * 20, short.data), client("long", shares[1] * 20, big.data)]
            w = cp.compose(spec_for(clients, 3000.0, seed=3))
            means.append((w.column("input_tokens").mean(), w.column("output_tokens").mean()))
        assert means[1][0] / means[0][0] == pytest.approx(target_in, rel=0.05)
        assert means[1][1] / means[0][1] == pytest.approx(target_out, rel=0.05)


class TestSerialization:
    def test_round_trip(self, tmp_path):
        w = cp.compose(cp.WorkloadSpec("multimodal", 5.0, 200.0, n_clients=30, seed=4))
        cp.serialize(w, tmp_path / "w.jsonl")
        back = cp.deserialize(tmp_path / "w.jsonl")
        assert back.records == w.records
        assert back.meta == w.meta

    def test_empty_workload(self, tmp_path):
        cp.serialize(cp.Workload([], {"horizon": 10.0, "seed": 1, "category": "language"}), tmp_path / "e.jsonl")
        assert (tmp_path / "e.jsonl").read_text().count("\n") == 1
        assert len(cp.deserialize(tmp_path / "e.jsonl")) == 0

    def test_modal_items_exact(self):
        r = cp.RequestRecord(1.5, "x", 10, 20, modal_items=(("image", 1200), ("audio", 400)))
        back = cp.loads(cp.dumps(cp.Workload([r], {"category": "multimodal"})))
        assert back.records[0] == r

    def test_field_names(self):
        r = cp.RequestRecord(0.25, "x", 10, 20, "c1", 2, 15, 5, None)
        line = cp.dumps(cp.Workload([r])).splitlines()[1]
        assert line == '{"ts":0.25,"client":"x","conv":"c1","turn":2,"in":10,"out":20,"reason":15,"answer":5,"modal":null}'

    def test_meta_has_required_keys(self):
        w = cp.compose(cp.WorkloadSpec("language", 2.0, 60.0, n_clients=5, seed=9))
        head = cp.dumps(w).splitlines()[0]
        for key in ('"version"', '"seed":9', '"horizon":60.0', '"category":"language"'):
            assert key in head

    def test_malformed_line_reports_number(self):
        text_ = '{"version":1}\n{"ts":0,"client":"a","in":1,"out":1}\n{"ts":oops}\n'
        with pytest.raises(cp.WorkloadParseError, match=":3:"):
            cp.loads(text_)

    def test_missing_field_reports_number(self):
        with pytest.raises(cp.WorkloadParseError, match=":2:"):
            cp.loads('{"version":1}\n{"ts":0,"client":"a"}\n')


class TestNaiveBaseline:
    def test_single_client_indistinguishable(self):
        ref = cp.compose(spec_for([client("a", 5.0, arrival=ArrivalSpec.from_cv("Gamma", 1.5))], 1000.0, seed=6))
        naive = cp.naive_baseline(ref, seed=7)
        assert len(ref) >= 4500
        assert stats.ks_2samp(np.diff(ref.timestamps()), np.diff(naive.timestamps())).pvalue > 0.05
        assert stats.ks_2samp(ref.column("input_tokens"), naive.column("input_tokens")).pvalue > 0.05
        assert stats.ks_2samp(ref.column("output_tokens"), naive.column("output_tokens")).pvalue > 0.05

    def test_overall_rate(self):
        ref = cp.compose(cp.WorkloadSpec("language", 20.0, 1200.0, n_clients=50, seed=8))
        naive = cp.naive_baseline(ref, seed=1)
        assert len(naive) == pytest.approx(len(ref), rel=0.05)

    def test_erases_rate_length_structure(self):
        bursty = client("top", 8.0, text(median=80.0), ArrivalSpec.from_cv("Gamma", 4.0))
        steady = client("tail", 8.0, text(median=2000.0))
        ref = cp.compose(spec_for([bursty, steady], 1800.0, seed=9))
        naive = cp.naive_baseline(ref, seed=2)
        r_ref = scatter_correlation(rate_length_scatter(ref, 3.0))
        r_naive = scatter_correlation(rate_length_scatter(naive, 3.0))
        assert abs(r_ref) > 0.3
        assert abs(r_naive) < 0.1

    def test_empty_reference(self):
        with pytest.raises(sm.ParameterError):
            cp.naive_baseline(cp.Workload([], {"horizon": 1.0}))


class TestMultimodalRecords:
    def test_pure_text_records_have_empty_modal_list(self):
        spec = MultimodalDataSpec(text(), (ModalitySpec("image", sm.Empirical((0.0,)), sm.Empirical((10.0,))),))
        c = ClientProfile("m", "multimodal", ArrivalSpec.poisson(), RateProfile.constant(1.0), spec, 2.0)
        w = cp.compose(spec_for([c], 50.0))
        assert all(r.modal_items == () for r in w.records)
