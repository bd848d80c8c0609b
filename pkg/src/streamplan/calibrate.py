"""Close the loop between predicted and measured rates.

Two jobs: derive the over-provisioning factor the allocator applies to
declared targets (absorbing systematic over-prediction), and watch the
trailing prediction error for model drift that should trigger retraining.
Records live in a JSON-lines ledger appended by the CLI.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from streamplan.errors import StreamPlanError

DRIFT_THRESHOLD = 0.15
DRIFT_WINDOW = 10


@dataclass(frozen=True)
class CalibrationRecord:
    config_id: str
    predicted: float
    measured: float
    timestamp: float = 0.0

    def __post_init__(self) -> None:
        if self.predicted <= 0 or self.measured <= 0:
            raise StreamPlanError("predicted and measured rates must be > 0")


def overprovision_factor(records: Sequence[CalibrationRecord]) -> float:
    """Geometric mean of predicted/measured, floored at 1.0.

    The floor means calibration only ever compensates over-prediction;
    systematic under-prediction never discounts a target. Scale-invariant in
    the record values.
    """
    if not records:
        raise StreamPlanError("need at least one calibration record")
    log_sum = sum(math.log(r.predicted / r.measured) for r in records)
    return max(1.0, math.exp(log_sum / len(records)))


@dataclass(frozen=True)
class DriftVerdict:
    retrain: bool
    error: float


def check_drift(
    records: Sequence[CalibrationRecord],
    threshold: float = DRIFT_THRESHOLD,
    window: int = DRIFT_WINDOW,
) -> DriftVerdict:
    """Mean relative prediction error over the trailing window.

    Retraining fires only strictly above the threshold, so an error exactly
    at the threshold stays stable. Empty input is trivially stable.
    """
    recent = list(records)[-window:]
    if not recent:
        return DriftVerdict(retrain=False, error=0.0)
    error = sum(abs(r.predicted - r.measured) / r.measured for r in recent) / len(recent)
    return DriftVerdict(retrain=error > threshold, error=error)


def read_ledger(path: str | Path) -> list[CalibrationRecord]:
    records: list[CalibrationRecord] = []
    text = Path(path).read_text()
    for line in text.splitlines():
        if not line.strip():
            continue
        doc = json.loads(line)
        records.append(
            CalibrationRecord(
                config_id=str(doc["config_id"]),
                predicted=float(doc["predicted"]),
                measured=float(doc["measured"]),
                timestamp=float(doc.get("ts", 0.0)),
            )
        )
    return records


def append_record(path: str | Path, record: CalibrationRecord) -> None:
    line = json.dumps(
        {
            "config_id": record.config_id,
            "predicted": record.predicted,
            "measured": record.measured,
            "ts": record.timestamp,
        }
    )
    with open(path, "a") as handle:
        handle.write(line + "\n")
