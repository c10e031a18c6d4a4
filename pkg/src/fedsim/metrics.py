"""Per-round metrics and their CSV / JSON serialization."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

from .errors import ContractError

CSV_COLUMNS = ("round", "test_accuracy", "test_loss", "train_loss_mean",
               "num_updates_aggregated", "wall_time_ms")


@dataclass
class MetricsRecord:
    round: int
    test_accuracy: float
    test_loss: float
    train_loss_mean: float
    num_updates_aggregated: int
    wall_time_ms: int = 0
    defense_selected_ids: Optional[list[int]] = None
    attack_poisoned_ids: Optional[list[int]] = None
    reconstruction_match_loss: Optional[float] = None

    def __post_init__(self):
        if not 0.0 <= self.test_accuracy <= 1.0:
            raise ContractError(f"test_accuracy {self.test_accuracy} outside [0, 1]")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> MetricsRecord:
        return cls(**d)

    def without_timing(self) -> dict[str, Any]:
        d = self.to_dict()
        d.pop("wall_time_ms")
        return d


def _fmt(value) -> str:
    # repr keeps every bit of a float, so equal runs give equal bytes
    return repr(float(value)) if isinstance(value, float) else str(value)


def write_csv(records: Sequence[MetricsRecord], path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])
    return path


def read_csv(path: str | Path) -> list[dict[str, float]]:
    with Path(path).open(newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def summary(records: Sequence[MetricsRecord], config: dict[str, Any]) -> dict[str, Any]:
    accs = [r.test_accuracy for r in records]
    return {
        "config": config,
        "rounds": len(records),
        "final_accuracy": accs[-1],
        "best_accuracy": max(accs),
        "best_round": records[accs.index(max(accs))].round,
        "metrics": [r.to_dict() for r in records],
    }


def write_metrics(records: Sequence[MetricsRecord], out_dir: str | Path, config: dict[str, Any],
                  formats: Sequence[str] = ("csv", "json")) -> list[Path]:
    """Write ``metrics.csv`` and/or ``summary.json`` under ``out_dir``."""
    if not records:
        raise ContractError("no metrics records to write")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if "csv" in formats:
        written.append(write_csv(records, out_dir / "metrics.csv"))
    if "json" in formats:
        path = out_dir / "summary.json"
        path.write_text(json.dumps(summary(records, config), indent=2, sort_keys=True))
        written.append(path)
    return written
