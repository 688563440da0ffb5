"""Instance capability profiles and the serving-model cost profile.

All iteration-latency coefficients here are synthetic desk-scale numbers:
they keep the qualitative shape of published per-iteration latency curves
(affine growth with batch size, large spread between GPU generations)
without claiming to reproduce any specific hardware measurement.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ValidationError


@dataclass(frozen=True)
class GpuProfile:
    """Static capability model of one serving instance.

    Decode iteration latency follows ``iter_ms(b) = base_ms + slope_ms * b``
    for batch size ``b``; prefill is charged per non-cached prompt token.
    """

    name: str
    base_ms: float
    slope_ms: float
    prefill_ms_per_token: float
    token_budget: int
    max_batch: int

    def __post_init__(self) -> None:
        if self.base_ms <= 0:
            raise ValidationError(f"profile {self.name}: base_ms must be > 0")
        if self.slope_ms < 0:
            raise ValidationError(f"profile {self.name}: slope_ms must be >= 0")
        if self.prefill_ms_per_token <= 0:
            raise ValidationError(
                f"profile {self.name}: prefill_ms_per_token must be > 0"
            )
        if self.token_budget < 1 or self.max_batch < 1:
            raise ValidationError(
                f"profile {self.name}: token_budget and max_batch must be >= 1"
            )

    def iter_ms(self, batch_size: int) -> float:
        """Latency of one decode iteration at the given batch size."""
        return self.base_ms + self.slope_ms * batch_size

    @property
    def unloaded_decode_ms_per_token(self) -> float:
        """Per-token decode latency with a single running request."""
        return self.iter_ms(1)

    @property
    def unloaded_prefill_ms_per_token(self) -> float:
        return self.prefill_ms_per_token


@dataclass(frozen=True)
class ModelProfile:
    """Per-token byte costs of the served model, used for migration pricing.

    ``kv_bytes_per_token`` defaults to an 8B-class dense model with 16-bit
    KV entries; ``id_bytes`` is the wire size of one token identifier.
    """

    kv_bytes_per_token: int = 131072
    id_bytes: int = 4

    def __post_init__(self) -> None:
        if self.kv_bytes_per_token < 1 or self.id_bytes < 1:
            raise ValidationError("model profile byte sizes must be >= 1")


# Four heterogeneous desk-scale profiles, strongest to weakest.  The spread
# in decode slope and prefill rate is what makes just-enough selection
# meaningful: the weak instances are only feasible for short/loose requests.
BUILTIN_PROFILES: dict[str, GpuProfile] = {
    "h800": GpuProfile(
        name="h800",
        base_ms=8.0,
        slope_ms=0.25,
        prefill_ms_per_token=0.005,
        token_budget=160_000,
        max_batch=64,
    ),
    "a800": GpuProfile(
        name="a800",
        base_ms=12.0,
        slope_ms=0.5,
        prefill_ms_per_token=0.010,
        token_budget=120_000,
        max_batch=48,
    ),
    "a40": GpuProfile(
        name="a40",
        base_ms=18.0,
        slope_ms=1.0,
        prefill_ms_per_token=0.020,
        token_budget=80_000,
        max_batch=32,
    ),
    "v100": GpuProfile(
        name="v100",
        base_ms=25.0,
        slope_ms=2.0,
        prefill_ms_per_token=0.040,
        token_budget=48_000,
        max_batch=16,
    ),
}

# Mid-tier instance used as the default reference when deriving deadlines.
DEFAULT_REFERENCE_PROFILE = "a800"


def builtin_profile(name: str) -> GpuProfile:
    try:
        return BUILTIN_PROFILES[name]
    except KeyError:
        known = ", ".join(sorted(BUILTIN_PROFILES))
        raise ValidationError(f"unknown builtin profile {name!r} (known: {known})")
