"""Capacity planning toolkit for distributed stream-processing DAGs.

The pieces fit together as a loop:

* ``dag``        -- logical DAG / configuration domain types and validation
* ``metrics``    -- runtime metric ingestion and window alignment
* ``training``   -- per-node linear performance models fitted from metrics
* ``flow``       -- LP-based data-flow solver predicting sustainable rates
* ``allocator``  -- balanced-container allocation for a target rate
* ``calibrate``  -- over-provisioning factor and drift detection
* ``sim``        -- discrete-event simulation oracle standing in for a cluster
* ``cli``        -- command-line entry point wiring the workflow together
"""

from streamplan.dag import (
    Configuration,
    EdgeSpec,
    LogicalDag,
    NodeSpec,
    STREAM_MANAGER,
    ValidationReport,
    config_space_size,
    propagate_rates,
    validate_dag,
)
from streamplan.errors import (
    AllocationError,
    DagError,
    LpInfeasibleError,
    LpUnboundedError,
    MetricsError,
    SimulationError,
    StreamPlanError,
    TrainingError,
)

__version__ = "0.1.0"

__all__ = [
    "AllocationError",
    "Configuration",
    "DagError",
    "EdgeSpec",
    "LogicalDag",
    "LpInfeasibleError",
    "LpUnboundedError",
    "MetricsError",
    "NodeSpec",
    "STREAM_MANAGER",
    "SimulationError",
    "StreamPlanError",
    "TrainingError",
    "ValidationReport",
    "config_space_size",
    "propagate_rates",
    "validate_dag",
]
