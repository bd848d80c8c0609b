import pytest

from streamplan.calibrate import (
    CalibrationRecord,
    append_record,
    check_drift,
    overprovision_factor,
    read_ledger,
)
from streamplan.errors import StreamPlanError


def rec(predicted, measured, config_id="c", ts=0.0):
    return CalibrationRecord(config_id=config_id, predicted=predicted,
                             measured=measured, timestamp=ts)


class TestOverprovisionFactor:
    def test_single_record_nine_percent(self):
        # predicting 1050 against a measured 965 calls for ~9% headroom
        factor = overprovision_factor([rec(1050.0, 965.0)])
        assert round(factor, 2) == 1.09

    def test_perfect_predictions(self):
        records = [rec(100.0, 100.0), rec(250.0, 250.0)]
        assert overprovision_factor(records) == 1.0

    def test_under_prediction_never_discounts(self):
        # geometric mean sqrt(1.1 * 0.9) < 1 floors at 1.0
        records = [rec(1100.0, 1000.0), rec(990.0, 1100.0)]
        assert overprovision_factor(records) == 1.0

    def test_scale_invariant(self):
        records = [rec(1050.0, 965.0), rec(800.0, 700.0)]
        base = overprovision_factor(records)
        scaled = [rec(r.predicted * 7.5, r.measured * 7.5) for r in records]
        assert overprovision_factor(scaled) == pytest.approx(base, rel=1e-12)

    def test_always_at_least_one(self):
        for p, m in [(90.0, 100.0), (100.0, 100.0), (130.0, 100.0)]:
            assert overprovision_factor([rec(p, m)]) >= 1.0

    def test_empty_records(self):
        with pytest.raises(StreamPlanError):
            overprovision_factor([])


class TestCheckDrift:
    def test_small_errors_stable(self):
        records = [rec(105.0, 100.0) for _ in range(12)]
        verdict = check_drift(records)
        assert not verdict.retrain
        assert verdict.error == pytest.approx(0.05)

    def test_large_errors_retrain(self):
        records = [rec(140.0, 100.0) for _ in range(12)]
        assert check_drift(records).retrain

    def test_boundary_is_strict(self):
        records = [rec(115.0, 100.0) for _ in range(10)]
        verdict = check_drift(records, threshold=0.15)
        assert verdict.error == pytest.approx(0.15, abs=1e-12)
        assert not verdict.retrain

    def test_trailing_window_ages_out_old_regime(self):
        old = [rec(200.0, 100.0) for _ in range(10)]  # terrible
        fresh = [rec(101.0, 100.0) for _ in range(10)]  # fine now
        assert not check_drift(old + fresh, window=10).retrain
        assert check_drift(old + fresh, window=20).retrain

    def test_empty_is_stable(self):
        assert not check_drift([]).retrain


def test_record_validation():
    with pytest.raises(StreamPlanError):
        rec(0.0, 100.0)
    with pytest.raises(StreamPlanError):
        rec(100.0, -5.0)


def test_ledger_round_trip(tmp_path):
    path = tmp_path / "ledger.jsonl"
    append_record(path, rec(1050.0, 965.0, config_id="wc-2", ts=123.0))
    append_record(path, rec(500.0, 490.0, config_id="wc-3", ts=124.0))
    records = read_ledger(path)
    assert len(records) == 2
    assert records[0].config_id == "wc-2"
    assert records[0].predicted == 1050.0
    assert records[1].timestamp == 124.0
