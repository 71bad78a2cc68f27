from __future__ import annotations

import pytest

from molang.exception import MolangInvalidArgumentException
from molang.metrics import (
    MetricsLogger,
    MetricsReport,
    config_fingerprint,
    read_log,
)

from .base import TestBase


class TestMetrics(TestBase):
    def test_fingerprint_ignores_key_order(self) -> None:
        a = config_fingerprint({"a": 1, "b": [1, 2]})
        b = config_fingerprint({"b": [1, 2], "a": 1})
        assert a == b
        assert a != config_fingerprint({"a": 2, "b": [1, 2]})

    def test_report_equality_ignores_wall_clock(self) -> None:
        epochs = [{"epoch": 0, "total": 2.0}, {"epoch": 1, "total": 1.5}]
        a = MetricsReport(0, "abc", epochs=epochs, wall_clock=1.0)
        b = MetricsReport(0, "abc", epochs=list(epochs), wall_clock=9.0)
        assert a == b
        assert a.final_loss == 1.5
        assert MetricsReport(0, "abc").final_loss is None

    def test_report_file(self) -> None:
        report = MetricsReport(1, "f", "d", [{"total": 0.5}], 0.75, 0.5, 1.0)
        path = self.tmp / "report.json"
        report.write(path)
        assert MetricsReport.read(path) == report

    def test_accuracy_range(self) -> None:
        with pytest.raises(MolangInvalidArgumentException):
            MetricsReport(0, "f", accuracy=1.5)

    def test_logger(self) -> None:
        path = self.tmp / "metrics.jsonl"
        with MetricsLogger(path) as log:
            log.log(step=0, total=1.0)
        with MetricsLogger(path, append=True) as log:
            log.log(step=1, total=0.5)
        assert read_log(path) == [
            {"step": 0, "total": 1.0},
            {"step": 1, "total": 0.5},
        ]
        with MetricsLogger(path) as log:
            log.log(step=9)
        assert read_log(path) == [{"step": 9}]
