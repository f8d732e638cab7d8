from datetime import datetime
from typing import Dict, List, Optional

from pydantic import BaseModel, Field


class LoadReport(BaseModel):
    """Outcome of importing a weight file into a module"""
    loaded: List[str] = Field(default_factory=list)
    missing: List[str] = Field(default_factory=list)
    unexpected: List[str] = Field(default_factory=list)

    @property
    def complete(self) -> bool:
        return not self.missing


class GradCheckEntry(BaseModel):
    """One sampled scalar: analytic vs central finite-difference derivative"""
    name: str
    index: List[int] = Field(default_factory=list)
    analytic: float
    numeric: float
    rel_error: float


class GradCheckResult(BaseModel):
    """Result of one finite-difference or oracle suite"""
    suite: str
    kind: str = "gradient"
    tolerance: float
    max_error: float
    passed: bool
    entries: List[GradCheckEntry] = Field(default_factory=list)


class GradCheckReport(BaseModel):
    module: str
    seed: int
    results: List[GradCheckResult] = Field(default_factory=list)
    created_at: datetime = Field(default_factory=datetime.now)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)


class AblationTable(BaseModel):
    """Rows: dataset × metric, columns: variant labels"""
    columns: List[str] = Field(default_factory=list)
    rows: Dict[str, Dict[str, Dict[str, float]]] = Field(default_factory=dict)
    parameter_counts: Dict[str, int] = Field(default_factory=dict)
    run_dirs: Dict[str, str] = Field(default_factory=dict)
    note: Optional[str] = None
