"""Exception types shared across the package."""


class StreamPlanError(Exception):
    """Base class for all domain errors raised by this package."""


class DagError(StreamPlanError):
    """Malformed DAG or configuration input."""


class MetricsError(StreamPlanError):
    """Unreadable or overwhelmingly malformed metrics input."""


class TrainingError(StreamPlanError):
    """Model fitting failed (too few samples, degenerate data, ...)."""


class LpInfeasibleError(StreamPlanError):
    """The linear program has no feasible point."""


class LpUnboundedError(StreamPlanError):
    """The linear program is unbounded; on valid flow inputs this signals
    a modeling bug, since every flow is capacity-bounded."""


class AllocationError(StreamPlanError):
    """The allocator cannot produce a configuration for the request."""


class SimulationError(StreamPlanError):
    """Invalid simulation input (bad config, missing seed, ...)."""
