"""Black-box instance state: EMA-smoothed latency channels and prefix cache.

Per instance we maintain three exponentially smoothed estimates — queueing
delay, per-token prefill latency, per-token decode latency — fed purely by
observed timings, never by engine internals.  The prefix-cache index tracks
prompt blocks so routing can account for prefill work saved by cache hits.
"""

from __future__ import annotations

import csv
import hashlib
import logging
import math
from collections import OrderedDict
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import ValidationError

logger = logging.getLogger(__name__)

QUEUE_WAIT = "queue_wait"
PREFILL_PER_TOKEN = "prefill_per_token"
DECODE_PER_TOKEN = "decode_per_token"
CHANNELS = (QUEUE_WAIT, PREFILL_PER_TOKEN, DECODE_PER_TOKEN)


@dataclass(frozen=True)
class EmaConfig:
    """Smoothing weight on the newest observation."""

    alpha: float = 0.3

    def __post_init__(self) -> None:
        if not (0.0 < self.alpha <= 1.0):
            raise ValidationError("alpha must lie in (0, 1]")


@dataclass(frozen=True)
class InstanceEstimate:
    """Snapshot of the smoothed estimates, all in seconds (per token where noted)."""

    q_s: float
    p_s_per_token: float
    d_s_per_token: float
    sample_counts: dict[str, int]
    last_update_ms: dict[str, float]


class EmaEstimator:
    """Single-writer smoothed estimate set for one instance.

    The first observation on a cold channel replaces the seed outright;
    afterwards each update is ``alpha * value + (1 - alpha) * estimate``.
    """

    def __init__(
        self,
        instance_name: str,
        config: EmaConfig,
        seed_q_s: float = 0.0,
        seed_p_s_per_token: float = 1e-5,
        seed_d_s_per_token: float = 1e-2,
        record_series: bool = True,
    ):
        if seed_p_s_per_token <= 0 or seed_d_s_per_token <= 0 or seed_q_s < 0:
            raise ValidationError("seeds must be positive rates (queue seed >= 0)")
        self.instance_name = instance_name
        self.config = config
        self._estimates = {
            QUEUE_WAIT: seed_q_s,
            PREFILL_PER_TOKEN: seed_p_s_per_token,
            DECODE_PER_TOKEN: seed_d_s_per_token,
        }
        self._counts = {channel: 0 for channel in CHANNELS}
        self._last_update = {channel: float("nan") for channel in CHANNELS}
        self._record_series = record_series
        self.series: list[tuple[float, str, float, float]] = []

    @property
    def q_s(self) -> float:
        return self._estimates[QUEUE_WAIT]

    @property
    def p_s_per_token(self) -> float:
        return self._estimates[PREFILL_PER_TOKEN]

    @property
    def d_s_per_token(self) -> float:
        return self._estimates[DECODE_PER_TOKEN]

    def count(self, channel: str) -> int:
        return self._counts[channel]

    def observe(self, channel: str, value_s: float, now_ms: float) -> float:
        """Fold one observation into the channel estimate; returns the new value."""
        if channel not in CHANNELS:
            raise ValidationError(f"unknown estimator channel {channel!r}")
        if not math.isfinite(value_s) or value_s < 0:
            logger.warning(
                "%s: rejected %s observation %r", self.instance_name, channel, value_s
            )
            return self._estimates[channel]
        if self._counts[channel] == 0:
            new = value_s
        else:
            alpha = self.config.alpha
            new = alpha * value_s + (1.0 - alpha) * self._estimates[channel]
        self._estimates[channel] = new
        self._counts[channel] += 1
        self._last_update[channel] = now_ms
        if self._record_series:
            self.series.append((now_ms, channel, value_s, new))
        return new

    def snapshot(self) -> InstanceEstimate:
        return InstanceEstimate(
            q_s=self.q_s,
            p_s_per_token=self.p_s_per_token,
            d_s_per_token=self.d_s_per_token,
            sample_counts=dict(self._counts),
            last_update_ms=dict(self._last_update),
        )


def write_estimator_csv(estimators: Iterable[EmaEstimator], path: str) -> None:
    """Dump all recorded observation series for debugging/plotting."""
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["instance", "t_ms", "channel", "observation_s", "smoothed_s"])
        for estimator in estimators:
            for t_ms, channel, obs, smoothed in estimator.series:
                writer.writerow(
                    [estimator.instance_name, f"{t_ms:.3f}", channel,
                     f"{obs:.9f}", f"{smoothed:.9f}"]
                )


class PrefixCacheIndex:
    """LRU index of prompt-block hashes for one instance.

    Blocks are ``block_size`` tokens; a block's hash chains over the whole
    preceding prefix, so a hit on block i implies blocks 0..i-1 also match.
    Lookups never touch recency; only recording does.
    """

    def __init__(self, block_size: int = 16, capacity_tokens: int = 65536):
        if block_size < 1 or capacity_tokens < block_size:
            raise ValidationError("need block_size >= 1 and capacity >= one block")
        self.block_size = block_size
        self.capacity_tokens = capacity_tokens
        self._blocks: OrderedDict[bytes, float] = OrderedDict()

    @property
    def stored_tokens(self) -> int:
        return len(self._blocks) * self.block_size

    def _block_digests(self, tokens: Sequence[str]) -> list[bytes]:
        digests = []
        prev = b""
        full_blocks = len(tokens) // self.block_size
        for i in range(full_blocks):
            block = tokens[i * self.block_size : (i + 1) * self.block_size]
            h = hashlib.blake2b(digest_size=16)
            h.update(prev)
            h.update("\x1f".join(block).encode("utf-8"))
            prev = h.digest()
            digests.append(prev)
        return digests

    def match_tokens(self, tokens: Sequence[str]) -> int:
        """Hit length in tokens: longest fully-cached whole-block prefix."""
        hit_blocks = 0
        for digest in self._block_digests(tokens):
            if digest in self._blocks:
                hit_blocks += 1
            else:
                break
        return hit_blocks * self.block_size

    def record(self, tokens: Sequence[str], now_ms: float) -> None:
        """Insert the prompt's full blocks at the given recency, evicting LRU."""
        for digest in self._block_digests(tokens):
            if digest in self._blocks:
                self._blocks.move_to_end(digest)
            self._blocks[digest] = now_ms
        while self.stored_tokens > self.capacity_tokens:
            self._blocks.popitem(last=False)


def reuse_prefix(prompt_tokens: Sequence[str], index: PrefixCacheIndex) -> int:
    """Hit prefix length for a prompt against an instance's cache index."""
    return index.match_tokens(prompt_tokens)


def record_prefix(prompt_tokens: Sequence[str], index: PrefixCacheIndex, now_ms: float) -> None:
    """Record a prompt's blocks after it has been prefilled on the instance."""
    index.record(prompt_tokens, now_ms)
