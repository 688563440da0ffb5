import csv
import math

import numpy as np
import pytest

from sloroute.errors import ValidationError
from sloroute.estimator import (
    DECODE_PER_TOKEN,
    EmaConfig,
    EmaEstimator,
    PREFILL_PER_TOKEN,
    PrefixCacheIndex,
    QUEUE_WAIT,
    write_estimator_csv,
)


def make_estimator(alpha=0.5, **kwargs):
    return EmaEstimator("g0", EmaConfig(alpha=alpha), **kwargs)


class TestEma:
    def test_smoothing_formula(self):
        est = make_estimator(alpha=0.5)
        est.observe(QUEUE_WAIT, 1.0, now_ms=0.0)  # cold bootstrap
        new = est.observe(QUEUE_WAIT, 2.0, now_ms=1.0)
        assert new == pytest.approx(1.5)

    def test_alpha_one_tracks_latest(self):
        est = make_estimator(alpha=1.0)
        for i, value in enumerate([0.3, 1.7, 0.9]):
            est.observe(DECODE_PER_TOKEN, value, now_ms=float(i))
            assert est.d_s_per_token == value

    def test_cold_channel_bootstraps_from_first_observation(self):
        est = make_estimator(alpha=0.1, seed_d_s_per_token=99.0)
        est.observe(DECODE_PER_TOKEN, 0.02, now_ms=0.0)
        assert est.d_s_per_token == pytest.approx(0.02)

    def test_geometric_convergence_to_constant(self):
        alpha = 0.3
        est = make_estimator(alpha=alpha)
        est.observe(QUEUE_WAIT, 5.0, now_ms=0.0)
        target = 1.0
        for n in range(1, 30):
            est.observe(QUEUE_WAIT, target, now_ms=float(n))
            expected_gap = (1 - alpha) ** n * abs(5.0 - target)
            assert abs(est.q_s - target) == pytest.approx(expected_gap, rel=1e-9)

    def test_rejects_negative_and_non_finite(self):
        est = make_estimator()
        est.observe(QUEUE_WAIT, 1.0, now_ms=0.0)
        for bad in (-0.1, float("nan"), float("inf")):
            assert est.observe(QUEUE_WAIT, bad, now_ms=1.0) == 1.0
        assert est.count(QUEUE_WAIT) == 1

    def test_unknown_channel_rejected(self):
        with pytest.raises(ValidationError):
            make_estimator().observe("bogus", 1.0, now_ms=0.0)

    def test_estimate_bounded_by_observations(self):
        rng = np.random.default_rng(4)
        est = make_estimator(alpha=0.25)
        values = rng.uniform(0.5, 3.0, size=200)
        for i, value in enumerate(values):
            est.observe(PREFILL_PER_TOKEN, float(value), now_ms=float(i))
            seen = values[: i + 1]
            assert seen.min() - 1e-12 <= est.p_s_per_token <= seen.max() + 1e-12

    def test_stationary_mean_convergence(self):
        # after many iid observations the EMA mean approaches mu within
        # 3 sigma * sqrt(alpha / (2 - alpha)), the stationary EMA std
        alpha = 0.3
        mu, sigma = 2.0, 0.4
        rng = np.random.default_rng(8)
        est = make_estimator(alpha=alpha)
        for i in range(10_000):
            est.observe(QUEUE_WAIT, float(max(rng.normal(mu, sigma), 0.0)), float(i))
        bound = 3 * sigma * math.sqrt(alpha / (2 - alpha))
        assert abs(est.q_s - mu) <= bound

    def test_snapshot_and_counts(self):
        est = make_estimator()
        est.observe(QUEUE_WAIT, 1.0, now_ms=5.0)
        snap = est.snapshot()
        assert snap.q_s == 1.0
        assert snap.sample_counts[QUEUE_WAIT] == 1
        assert snap.last_update_ms[QUEUE_WAIT] == 5.0

    def test_csv_dump(self, tmp_path):
        est = make_estimator()
        est.observe(QUEUE_WAIT, 1.0, now_ms=0.0)
        est.observe(DECODE_PER_TOKEN, 0.02, now_ms=1.0)
        path = tmp_path / "series.csv"
        write_estimator_csv([est], str(path))
        rows = list(csv.reader(path.open()))
        assert rows[0] == ["instance", "t_ms", "channel", "observation_s", "smoothed_s"]
        assert len(rows) == 3


def tokens(n, prefix="t"):
    return [f"{prefix}{i}" for i in range(n)]


class TestPrefixCache:
    def test_cold_cache_misses(self):
        index = PrefixCacheIndex(block_size=16, capacity_tokens=1024)
        assert index.match_tokens(tokens(32)) == 0

    def test_full_hit_after_record(self):
        index = PrefixCacheIndex(block_size=16, capacity_tokens=1024)
        prompt = tokens(96)
        index.record(prompt, now_ms=0.0)
        assert index.match_tokens(prompt) == 96

    def test_partial_overlap_rounds_down_to_blocks(self):
        index = PrefixCacheIndex(block_size=16, capacity_tokens=1024)
        first = tokens(40)
        index.record(first, now_ms=0.0)
        other = first[:40] + ["different1", "different2"]
        # shares exactly the first 40 tokens -> two full blocks = 32
        assert index.match_tokens(other) == 32

    def test_partial_final_block_not_stored(self):
        index = PrefixCacheIndex(block_size=16, capacity_tokens=1024)
        prompt = tokens(40)
        index.record(prompt, now_ms=0.0)
        assert index.match_tokens(prompt) == 32
        assert index.stored_tokens == 32

    def test_lru_eviction_drops_earliest(self):
        index = PrefixCacheIndex(block_size=16, capacity_tokens=32)  # two blocks
        a = tokens(32, "a")
        b = tokens(16, "b")
        index.record(a, now_ms=1.0)
        index.record(b, now_ms=2.0)  # over capacity -> evict a's first block
        assert index.match_tokens(b) == 16
        assert index.match_tokens(a) == 0  # chain broken at evicted block

    def test_rerecord_is_idempotent_on_content(self):
        index = PrefixCacheIndex(block_size=16, capacity_tokens=1024)
        prompt = tokens(64)
        index.record(prompt, now_ms=0.0)
        before = index.stored_tokens
        index.record(prompt, now_ms=5.0)
        assert index.stored_tokens == before

    def test_lookup_does_not_refresh_recency(self):
        index = PrefixCacheIndex(block_size=16, capacity_tokens=32)
        a = tokens(16, "a")
        b = tokens(16, "b")
        c = tokens(16, "c")
        index.record(a, now_ms=1.0)
        index.record(b, now_ms=2.0)
        index.match_tokens(a)  # must NOT protect a from eviction
        index.record(c, now_ms=3.0)
        assert index.match_tokens(a) == 0
        assert index.match_tokens(b) == 16

    def test_hit_never_exceeds_prompt_and_grows_monotonically(self):
        index = PrefixCacheIndex(block_size=8, capacity_tokens=4096)
        prompt = tokens(50)
        previous = 0
        for cut in (8, 16, 24, 50):
            index.record(prompt[:cut], now_ms=float(cut))
            hit = index.match_tokens(prompt)
            assert hit <= len(prompt)
            assert hit >= previous
            previous = hit
