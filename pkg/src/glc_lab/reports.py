"""Artifact IO: CSV tables, the JSON run report and the failure marker."""

import json
import logging
import os
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, computed_field


logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"
FAILED_MARKER = ".failed"


class CheckRecord(BaseModel):
    name: str = Field(description="Asserted invariant")
    passed: bool = Field(description="True when the invariant held")
    value: float = Field(description="Measured quantity")
    bound: float = Field(description="Threshold the value is compared with")
    detail: str = Field(default="", description="Mesh or sample context")


class ExperimentRecord(BaseModel):
    name: str = Field(description="Measured stability criterion")
    value: float = Field(description="Measured quantity")
    target: float = Field(description="Level the criterion expects")
    within_target: bool = Field(description="Recorded, never drives the exit status")
    detail: str = Field(default="")


class RunReport(BaseModel):
    subcommand: str
    seed: int
    config: Dict[str, Any] = Field(default_factory=dict, description="Validated config echo")
    regime: List[Dict[str, Any]] = Field(default_factory=list, description="Regime conditions of the main mesh")
    checks: List[CheckRecord] = Field(default_factory=list)
    experiments: List[ExperimentRecord] = Field(default_factory=list)
    tables: Dict[str, str] = Field(default_factory=dict, description="Table name to CSV path")
    timings: Dict[str, float] = Field(default_factory=dict, description="Wall-clock seconds per stage")
    errors: List[str] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.errors and all(c.passed for c in self.checks)

    @computed_field
    @property
    def unmet_experiments(self) -> List[str]:
        """Experiments whose measured value missed its target; listed, never failing the run."""
        return [f"{e.name} ({e.detail})" if e.detail else e.name for e in self.experiments if not e.within_target]

    def check(self, name: str, value: float, bound: float, detail: str = "", passed: Optional[bool] = None) -> CheckRecord:
        """Record ``value <= bound`` (or an explicit verdict) as an asserted check."""
        ok = bool(value <= bound) if passed is None else bool(passed)
        record = CheckRecord(name=name, passed=ok, value=float(value), bound=float(bound), detail=detail)
        self.checks.append(record)
        if not ok:
            logger.warning("check failed name=%s value=%.4e bound=%.4e %s", name, value, bound, detail)
        return record

    def experiment(self, name: str, value: float, target: float, detail: str = "") -> ExperimentRecord:
        record = ExperimentRecord(
            name=name, value=float(value), target=float(target), within_target=bool(value < target), detail=detail
        )
        self.experiments.append(record)
        if not record.within_target:
            logger.warning("experiment outside target name=%s value=%.4g target=%.4g %s", name, value, target, detail)
        return record


def ensure_out_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def split_complex(frame: pd.DataFrame) -> pd.DataFrame:
    """Replace every complex column ``x`` by ``re_x`` and ``im_x``."""
    columns = {}
    for name in frame.columns:
        series = frame[name]
        if np.iscomplexobj(series.to_numpy()):
            values = series.to_numpy().astype(np.complex128)
            columns[f"re_{name}"] = values.real
            columns[f"im_{name}"] = values.imag
        else:
            columns[name] = series
    return pd.DataFrame(columns, index=frame.index)


def write_table(out_dir: str, name: str, rows: Sequence[Dict[str, object]]) -> str:
    path = os.path.join(ensure_out_dir(out_dir), f"{name}.csv")
    frame = split_complex(pd.DataFrame(list(rows)))
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.info("wrote table name=%s rows=%d path=%s", name, len(frame), path)
    return path


def write_report(out_dir: str, report: RunReport) -> str:
    path = os.path.join(ensure_out_dir(out_dir), "report.json")
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(json.dumps(report.model_dump(mode="json"), indent=2, sort_keys=True))
    return path


def mark_failed(out_dir: str, reasons: Sequence[str]) -> str:
    path = os.path.join(ensure_out_dir(out_dir), FAILED_MARKER)
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("\n".join(reasons) + "\n")
    return path


def clear_failed(out_dir: str) -> None:
    path = os.path.join(out_dir, FAILED_MARKER)
    if os.path.exists(path):
        os.remove(path)
