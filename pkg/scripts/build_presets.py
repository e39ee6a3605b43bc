"""Regenerate the shipped client-pool presets under src/llmload/presets/.

The profiles are representative, hand-parameterized clients. They are not
fitted to any trace. Run from the repository root:

    python3 scripts/build_presets.py
"""

import json
import math
from pathlib import Path

import numpy as np
from scipy.special import ndtri

from llmload import statmodel as sm
from llmload.arrival import LINEAR, ArrivalSpec, RateProfile
from llmload.clientpool import ClientPool, ClientProfile, SkewSpec, exponent_for_share, generate_clients
from llmload.conversation import preset_spec
from llmload.datamodel import (
    LanguageDataSpec,
    ModalitySpec,
    MultimodalDataSpec,
    ReasoningDataSpec,
    expected_modal_ratio,
)
from llmload.rng import derive

OUT = Path(__file__).resolve().parent.parent / "src" / "llmload" / "presets"
DAY = 86400.0


def diurnal(peak_hour, depth, floor=0.05):
    """Smooth daily cycle with its maximum at ``peak_hour``; ``depth`` in [0, 1]."""
    hours = np.arange(24)
    rate = 1.0 + depth * np.cos(2 * np.pi * (hours - peak_hour) / 24)
    rate = np.maximum(rate, floor)
    return RateProfile(tuple((h * 3600.0, round(float(r), 4)) for h, r in zip(hours, rate)), LINEAR, period=DAY)


def ramp(start_hour, low, high):
    """Low rate until ``start_hour``, then a one-hour ramp up to ``high``."""
    return RateProfile(
        ((0.0, low), (start_hour * 3600.0, low), ((start_hour + 1) * 3600.0, high), (23 * 3600.0, high)),
        LINEAR,
        period=DAY,
    )


def body_tail(median, sigma, alpha):
    body = sm.LogNormal(math.log(median), sigma)
    split = float(np.round(body.ppf(0.95), 1))
    return sm.BodyTailMixture(body, sm.Pareto(alpha, split), split, 0.95)


def cluster(center, sd, k=41, digits=4):
    """Empirical values spread like a normal around ``center`` with bounded support."""
    q = (np.arange(k) + 0.5) / k
    return sm.Empirical(tuple(float(v) for v in np.round(center + sd * ndtri(q), digits)))


def arrival(family, cv):
    return ArrivalSpec.from_cv(family, cv) if family != "Exponential" else ArrivalSpec.poisson()


# ---------------------------------------------------------------------------
# Language
# ---------------------------------------------------------------------------


def language_pool():
    # (id, iat family, cv, profile, input median, input sigma, tail alpha, output mean, io corr)
    rows = [
        ("api-burst-a", "Gamma", 3.0, ramp(1, 0.3, 1.6), 180, 0.7, 2.2, 260, 0.15),
        ("rag-b", "Weibull", 1.6, diurnal(14, 0.6), 2400, 0.5, 1.8, 340, 0.10),
        ("chat-c", "Gamma", 1.1, diurnal(20, 0.8), 700, 1.0, 1.6, 330, 0.25),
        ("batch-d", "Weibull", 2.2, diurnal(3, 0.7), 1200, 0.4, 2.5, 300, 0.05),
        ("agent-e", "Gamma", 1.8, diurnal(11, 0.5), 3200, 0.6, 1.7, 280, 0.20),
        ("chat-f", "Gamma", 1.0, diurnal(21, 0.9), 500, 1.1, 1.5, 360, 0.30),
        ("api-g", "Weibull", 2.6, diurnal(9, 0.4), 900, 0.8, 2.0, 270, 0.10),
        ("summ-h", "Gamma", 1.3, diurnal(15, 0.6), 4200, 0.5, 1.9, 310, 0.05),
        ("chat-i", "Exponential", 1.0, diurnal(19, 0.7), 650, 1.0, 1.6, 380, 0.25),
        ("code-j", "Weibull", 1.4, diurnal(13, 0.8), 1800, 0.7, 1.8, 350, 0.20),
    ]
    rng = np.random.default_rng(7)
    for i in range(20):
        rows.append(
            (
                f"tail-{i:02d}",
                "Gamma" if i % 2 else "Weibull",
                float(np.round(rng.uniform(0.8, 1.6), 2)),
                diurnal(int(rng.integers(0, 24)), float(np.round(rng.uniform(0.3, 0.9), 2))),
                int(rng.integers(300, 2000)),
                float(np.round(rng.uniform(0.6, 1.1), 2)),
                float(np.round(rng.uniform(1.5, 2.5), 2)),
                int(rng.integers(260, 380)),
                float(np.round(rng.uniform(0.0, 0.3), 2)),
            )
        )
    profiles = [
        ClientProfile(
            cid,
            "language",
            arrival(fam, cv),
            prof,
            LanguageDataSpec(body_tail(med, sig, alpha), sm.Exponential(round(1.0 / out, 8)), corr),
        )
        for cid, fam, cv, prof, med, sig, alpha, out, corr in rows
    ]
    skew = SkewSpec(exponent=exponent_for_share(2412, 29, 0.90))
    return ClientPool(tuple(profiles), skew, "language", 2412)


# ---------------------------------------------------------------------------
# Multimodal
# ---------------------------------------------------------------------------


def multimodal_pool():
    short_text = LanguageDataSpec(body_tail(60, 0.6, 2.0), sm.Exponential(1 / 180))
    mid_text = LanguageDataSpec(body_tail(400, 0.9, 1.8), sm.Exponential(1 / 260))
    long_text = LanguageDataSpec(body_tail(1500, 0.8, 1.7), sm.Exponential(1 / 300))
    image_sizes = sm.Empirical(
        tuple(float(v) for v in [256] * 6 + [576] * 8 + [1024] * 5 + [1200] * 4 + [2304] * 3 + [729] * 4)
    )
    rows = [
        # Fixed-size image client whose traffic ramps up nine hours in.
        ("img-fixed-b", "Gamma", 1.2, ramp(9, 0.15, 1.6), short_text,
         [("image", sm.Empirical((1.0,)), cluster(1200, 12, k=21, digits=0))]),
        ("img-mixed-a", "Gamma", 2.0, diurnal(14, 0.6), mid_text,
         [("image", sm.Empirical((0.0, 1.0, 1.0, 1.0, 2.0, 3.0)), image_sizes)]),
        ("video-c", "Weibull", 1.5, diurnal(20, 0.5), short_text,
         [("video", sm.Empirical((1.0, 1.0, 1.0, 2.0)), cluster(2500, 40, digits=0))]),
        ("text-heavy-d", "Gamma", 1.0, diurnal(11, 0.7), long_text,
         [("image", sm.Empirical((0.0,) * 9 + (1.0,)), image_sizes)]),
        ("audio-e", "Gamma", 1.4, diurnal(10, 0.8), short_text,
         [("audio", sm.Empirical((1.0,) * 4 + (2.0,)), sm.Empirical((120.0, 250.0, 400.0, 400.0, 750.0, 1500.0)))]),
        ("omni-f", "Weibull", 1.8, diurnal(1, 0.6), mid_text,
         [("image", sm.Empirical((0.0, 1.0, 2.0)), image_sizes),
          ("audio", sm.Empirical((0.0, 1.0)), sm.Empirical((250.0, 400.0, 750.0)))]),
    ]
    rng = np.random.default_rng(11)
    texts = [short_text, mid_text, long_text]
    for i in range(14):
        counts = [(0.0,) * 3 + (1.0,) * 2, (1.0,), (1.0, 2.0, 4.0)][i % 3]
        rows.append(
            (
                f"mm-tail-{i:02d}",
                "Gamma",
                float(np.round(rng.uniform(0.8, 2.0), 2)),
                diurnal(int(rng.integers(0, 24)), float(np.round(rng.uniform(0.3, 0.9), 2))),
                texts[i % 3],
                [("image", sm.Empirical(counts), image_sizes)],
            )
        )
    profiles = [
        ClientProfile(
            cid, "multimodal", arrival(fam, cv), prof,
            MultimodalDataSpec(text, tuple(ModalitySpec(m, c, t) for m, c, t in mods)),
        )
        for cid, fam, cv, prof, text, mods in rows
    ]
    skew = SkewSpec(exponent=exponent_for_share(1036, 20, 0.80))
    pool = ClientPool(tuple(profiles), skew, "multimodal", 1036)

    # The configured target is the rate-weighted mean per-request modal ratio.
    clients = generate_clients(pool, 1036, 1.0, seed=1)
    ratios = {}
    for c in clients[: len(profiles)]:
        ratios[c.client_id] = expected_modal_ratio(c.data, derive(5, c.client_id), 20000)
    w = np.array([c.base_rate for c in clients[: len(profiles)]])
    target = float(np.dot(w, list(ratios.values())) / w.sum())
    return ClientPool(pool.profiles, skew, "multimodal", 1036, {"mean_modal_ratio": round(target, 3)})


# ---------------------------------------------------------------------------
# Reasoning
# ---------------------------------------------------------------------------


def reasoning_pool():
    ratio_mix = sm.TwoComponentMixture(cluster(0.115, 0.012), cluster(0.505, 0.015), 0.86)
    conv = preset_spec()
    rng = np.random.default_rng(13)
    profiles = []
    for i in range(25):
        bursty = i in (0, 7)
        cv = float(np.round(rng.uniform(1.5, 2.5) if bursty else rng.uniform(0.5, 1.0), 2))
        data = ReasoningDataSpec(
            input=body_tail(int(rng.integers(200, 1500)), float(np.round(rng.uniform(0.7, 1.1), 2)), 1.8),
            output=sm.LogNormal(round(math.log(float(rng.integers(2000, 3000))), 6), 0.6),
            ratio_mix=ratio_mix,
            reason_answer_corr=0.5,
        )
        profiles.append(
            ClientProfile(
                f"r-{i:02d}",
                "reasoning",
                arrival("Gamma" if i % 3 else "Weibull", cv),
                diurnal(int(rng.integers(0, 24)), float(np.round(rng.uniform(0.2, 0.7), 2))),
                data,
                conversation=conv,
            )
        )
    skew = SkewSpec(exponent=exponent_for_share(25913, 10, 0.50))
    return ClientPool(tuple(profiles), skew, "reasoning", 25913)


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for name, build in (("language", language_pool), ("multimodal", multimodal_pool), ("reasoning", reasoning_pool)):
        pool = build()
        (OUT / f"{name}.pool").write_text(json.dumps(pool.to_dict(), indent=1) + "\n")
        print(f"{name}: {len(pool.profiles)} profiles, skew exponent {pool.skew.exponent:.6f}")


if __name__ == "__main__":
    main()
