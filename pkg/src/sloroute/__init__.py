"""SLO-goodput-oriented request routing for LLM inference, with a built-in
deterministic cluster simulator and exhaustive assignment oracles."""

from .errors import (
    ConfigError,
    SizeLimitError,
    SloRouteError,
    TraceFormatError,
    ValidationError,
)
from .estimator import EmaConfig, EmaEstimator, InstanceEstimate, PrefixCacheIndex
from .metrics import (
    BenchResult,
    LatencyDistribution,
    MetricsReport,
    RequestRecord,
    bench_overhead,
    build_report,
    goodput,
    violation_ratio,
)
from .profiles import BUILTIN_PROFILES, GpuProfile, ModelProfile
from .router import (
    ActiveRequestView,
    InstanceView,
    MigrationAction,
    RiskCheckConfig,
    RoutingDecision,
    RoutingPolicy,
    check_risk,
    estimate_latency,
    migration_cost,
    migration_mode_sweep,
    select_instance,
)
from .simulator import (
    BruteForceResult,
    Engine,
    SimConfig,
    SimResult,
    brute_force_optimal,
    run,
)
from .workload import (
    ArrivalProcess,
    ClusterSpec,
    RequestSpec,
    SloPolicy,
    TraceConfig,
    assign_slos,
    generate_synthetic,
    load_trace,
    save_trace,
    solo_latency_ms,
    with_fixed_deadline,
)

__version__ = "0.1.0"
