"""Metric records and CSV sinks.

One row per metric period with a fixed, ordered column set shared by every
algorithm; metrics an algorithm does not produce stay as empty cells. Floats
are written with repr so files round-trip bit-exactly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

COLUMNS = [
    "run_id", "seed", "step", "return_train", "return_greedy",
    "loss_tb", "loss_on", "k_spread", "grad_variance", "q_bias",
    "argmax_actions", "wall_clock",
]


@dataclass
class MetricRecord:
    run_id: str
    seed: int
    step: int
    return_train: float | None = None
    return_greedy: float | None = None
    loss_tb: float | None = None
    loss_on: float | None = None
    k_spread: float | None = None
    grad_variance: float | None = None
    q_bias: float | None = None
    argmax_actions: tuple[int, ...] | None = None
    wall_clock: float | None = None

    def to_row(self) -> list[str]:
        def fmt(value):
            if value is None:
                return ""
            if isinstance(value, float):
                return repr(value)
            if isinstance(value, tuple):
                return ";".join(str(v) for v in value)
            return str(value)

        return [fmt(getattr(self, name)) for name in COLUMNS]


class CsvSink:
    """Writes MetricRecords to one CSV file."""

    def __init__(self, path):
        self.path = path
        self._fh = open(path, "w", newline="")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(COLUMNS)

    def emit(self, record: MetricRecord) -> None:
        self._writer.writerow(record.to_row())

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class ListSink:
    """Collects MetricRecords in memory (tests and acceptance analysis)."""

    def __init__(self):
        self.records: list[MetricRecord] = []

    def emit(self, record: MetricRecord) -> None:
        self.records.append(record)

    def close(self) -> None:
        pass
