import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as hst

from llmload import statmodel as sm
from llmload.arrival import ArrivalSpec, RateProfile
from llmload.clientpool import (
    ClientPool,
    ClientProfile,
    PoolError,
    SkewSpec,
    exponent_for_share,
    generate_clients,
    load_pool,
    rank_weights,
    save_pool,
    scale_rates,
    skew_share,
)
from llmload.datamodel import LanguageDataSpec, ReasoningDataSpec


def text_spec(median=300.0):
    return LanguageDataSpec(sm.LogNormal(math.log(median), 0.5), sm.Exponential(1 / 200))


def profile(cid, rate=1.0, median=300.0):
    return ClientProfile(cid, "language", ArrivalSpec.poisson(), RateProfile.constant(1.0), text_spec(median), rate)


def small_pool(shares=(0.5, 0.3, 0.2)):
    return ClientPool(tuple(profile(f"p{i}") for i in range(len(shares))), SkewSpec("explicit", shares=shares))


class TestProfiles:
    def test_category_mismatch(self):
        with pytest.raises(PoolError):
            ClientProfile("x", "reasoning", ArrivalSpec.poisson(), RateProfile.constant(1.0), text_spec())

    def test_negative_rate(self):
        with pytest.raises(PoolError):
            profile("x", rate=-1.0)

    def test_duplicate_ids(self):
        with pytest.raises(PoolError):
            ClientPool((profile("a"), profile("a")), SkewSpec(exponent=1.0))

    def test_empty_pool(self):
        with pytest.raises(PoolError):
            ClientPool((), SkewSpec(exponent=1.0))

    def test_explicit_shares_must_sum_to_one(self):
        with pytest.raises(PoolError):
            SkewSpec("explicit", shares=(0.5, 0.4))


class TestGenerate:
    def test_explicit_shares(self):
        clients = generate_clients(small_pool(), 3, 10.0, seed=1)
        assert [c.base_rate for c in clients] == pytest.approx([5.0, 3.0, 2.0])

    def test_single_client_gets_total(self):
        pool = ClientPool((profile("a"),), SkewSpec(exponent=1.3))
        assert generate_clients(pool, 1, 7.5, seed=0)[0].base_rate == pytest.approx(7.5)

    @settings(max_examples=25, deadline=None)
    @given(hst.integers(1, 400), hst.floats(0.01, 1000.0), hst.floats(0.3, 3.0))
    def test_sum_and_monotone(self, n, total, s):
        pool = ClientPool(tuple(profile(f"p{i}") for i in range(5)), SkewSpec(exponent=s))
        rates = np.array([c.base_rate for c in generate_clients(pool, n, total, seed=2)])
        assert abs(rates.sum() - total) <= 1e-9 * total
        assert np.all(np.diff(rates) <= 1e-15 * total)

    def test_copies_keep_specs_and_get_fresh_ids(self):
        pool = ClientPool(tuple(profile(f"p{i}", median=100 * (i + 1)) for i in range(3)), SkewSpec(exponent=1.0))
        clients = generate_clients(pool, 50, 1.0, seed=3)
        assert len({c.client_id for c in clients}) == 50
        by_name = {p.client_id: p for p in pool.profiles}
        for c in clients:
            src = by_name[c.client_id.split("-", 1)[1]]
            assert c.data == src.data and c.arrival == src.arrival

    def test_deterministic(self):
        pool = load_pool("language")
        a = generate_clients(pool, 300, 5.0, seed=9)
        b = generate_clients(pool, 300, 5.0, seed=9)
        assert a == b
        c = generate_clients(pool, 300, 5.0, seed=10)
        assert [x.client_id for x in a] != [x.client_id for x in c]

    def test_category_coherence(self):
        for name in ("language", "multimodal", "reasoning"):
            pool = load_pool(name)
            assert all(c.data.category == name == c.category for c in generate_clients(pool, 100, 1.0, seed=0))

    def test_rejects_zero_rate(self):
        with pytest.raises(PoolError):
            generate_clients(small_pool(), 3, 0.0, seed=0)


class TestScaleAndShare:
    def test_scale(self):
        out = scale_rates([profile("a"), profile("b")], 10.0)
        assert [c.base_rate for c in out] == [5.0, 5.0]

    def test_scale_preserves_shares_and_is_idempotent(self):
        clients = [profile("a", 1.0), profile("b", 3.0)]
        once = scale_rates(clients, 8.0)
        twice = scale_rates(once, 8.0)
        assert [c.base_rate for c in once] == [2.0, 6.0] == [c.base_rate for c in twice]

    def test_scale_all_zero(self):
        with pytest.raises(sm.DegenerateDataError):
            scale_rates([profile("a", 0.0)], 1.0)

    def test_share_full_and_uniform(self):
        clients = [profile(f"c{i}") for i in range(8)]
        assert skew_share(clients, 8) == 1.0
        assert skew_share(clients, 3) == pytest.approx(3 / 8)

    def test_share_too_many(self):
        with pytest.raises(PoolError):
            skew_share([profile("a")], 2)

    def test_exponent_solver(self):
        s = exponent_for_share(1000, 10, 0.6)
        assert rank_weights(1000, s)[:10].sum() == pytest.approx(0.6, abs=1e-10)


class TestPresets:
    @pytest.mark.parametrize(
        "name, n, top, share",
        [("language", 2412, 29, 0.90), ("reasoning", 25913, 10, 0.50), ("multimodal", 1036, 20, 0.80)],
    )
    def test_skew_anchor(self, name, n, top, share):
        clients = generate_clients(load_pool(name), n, 100.0, seed=1)
        assert skew_share(clients, top) == pytest.approx(share, abs=0.03)

    def test_reasoning_clients_mostly_smooth(self):
        pool = load_pool("reasoning")
        cvs = [math.sqrt(1 / p.arrival.iat.shape) if p.arrival.iat.family == "Gamma" else sm.weibull_cv(p.arrival.iat.shape)
               for p in pool.profiles]
        assert np.mean(np.array(cvs) <= 1.0) >= 0.8
        assert all(isinstance(p.data, ReasoningDataSpec) and p.conversation is not None for p in pool.profiles)

    def test_bare_name_and_path_resolve(self):
        assert load_pool("presets/language.pool") == load_pool("language")

    def test_missing_file(self, tmp_path):
        with pytest.raises(PoolError):
            load_pool(tmp_path / "nope.pool")

    def test_bad_document(self, tmp_path):
        p = tmp_path / "bad.pool"
        p.write_text(json.dumps({"skew": {"exponent": 1.0}}))
        with pytest.raises(PoolError):
            load_pool(p)

    @pytest.mark.parametrize("name", ["language", "multimodal", "reasoning"])
    def test_round_trip(self, name, tmp_path):
        pool = load_pool(name)
        save_pool(pool, tmp_path / "x.pool")
        assert load_pool(tmp_path / "x.pool") == pool
