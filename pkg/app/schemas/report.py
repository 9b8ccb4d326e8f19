from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, Field


class ConditionResult(BaseModel):
    """Verdict for one sampled structural condition."""
    name: str
    passed: bool
    worst_margin: float
    witness_x: List[float]
    witness_s: float
    violations: int = Field(..., ge=0)


class StructureReport(BaseModel):
    """Schema for the structural-condition sweep."""
    kind: str
    samples: int
    s_range: Tuple[float, float]
    conditions: List[ConditionResult]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.conditions)

    def condition(self, name: str) -> ConditionResult:
        for cond in self.conditions:
            if cond.name == name:
                return cond
        raise KeyError(name)


class EstimateRow(BaseModel):
    """One bound-vs-observed comparison."""
    quantity: str
    horizon: float
    radius: Optional[float] = None
    observed: float
    bound: float
    margin: float
    slack: float
    passed: bool
    note: Optional[str] = None


class EstimateReport(BaseModel):
    """Schema for one checker's verdict."""
    tag: str
    tau: float
    parameters: Dict[str, Any] = Field(default_factory=dict)
    constants: Dict[str, float] = Field(default_factory=dict)
    rows: List[EstimateRow] = Field(default_factory=list)
    notes: List[str] = Field(default_factory=list)
    first_passing_horizon: Optional[float] = None
    empirical_radius: Optional[float] = None
    empirical_horizon: Optional[float] = None
    passed: bool = False

    @property
    def worst_margin(self) -> float:
        if not self.rows:
            return 0.0
        return min(row.margin for row in self.rows)


class AttractorManifest(BaseModel):
    """Schema for a serialized attractor approximation."""
    tau: float
    horizons: List[float]
    seed: int
    ensemble_size: int
    family: Dict[str, Any]
    grid: Dict[str, Any]
    diameter: float
    converged: bool
    history: List[float]
    members: List[str]


class InvarianceReport(BaseModel):
    """Both semi-distances between the forward image and the later section."""
    tau: float
    shift: float
    image_to_section: float
    section_to_image: float
    tolerance: float
    diameter: float
    passed: bool


class AttractionReport(BaseModel):
    """Pullback distances of a tempered family to an attractor section."""
    norm: str
    tau: float
    horizons: List[float]
    distances: List[float]
    tolerance: float
    decreasing: bool
    eventually_below: bool
    passed: bool


class SeedIndependenceReport(BaseModel):
    seeds: List[int]
    distances: List[List[float]]
    tolerance: float
    passed: bool


class TaskOutcome(BaseModel):
    """Schema for one task of a run."""
    name: str
    status: str
    passed: bool
    exit_code: int = 0
    error: Optional[str] = None
    artifacts: List[str] = Field(default_factory=list)


class RunManifest(BaseModel):
    """Schema for the top-level run manifest."""
    app_version: str
    seed: int
    tasks: List[TaskOutcome]
    exit_code: int
    files: List[str] = Field(default_factory=list)
