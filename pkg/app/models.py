"""
Pydantic models for configuration, reports and result records.
"""

import json
from typing import List, Literal, Optional, get_args

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


ProblemKey = Literal[
    "exp1-anisotropic-sup",
    "exp2-heat",
    "heat-singleton",
    "poly-heat",
    "mild-anisotropic-sup",
]

PROBLEM_KEYS = get_args(ProblemKey)


def desk_scale_cap(p: int) -> int:
    """Largest uniform level run by default for spatial degree p."""
    return 4 if p <= 2 else 3


class _Strict(BaseModel):
    """Base for manifest sections: unknown keys are rejected."""
    model_config = ConfigDict(extra="forbid")


# Solver and report models
class SolverConfig(_Strict):
    """Semismooth Newton (policy iteration) settings."""
    newton_tol: float = Field(1e-10, gt=0, description="Relative residual tolerance")
    max_newton_iters: int = Field(30, ge=1, description="Maximum policy iterations per slab")
    linear_solver: Literal["direct-sparse"] = "direct-sparse"
    divergence_window: int = Field(3, ge=1, description="Consecutive residual increases before restart")


class Witness(BaseModel):
    """Sample point attaining the worst Cordes ratio."""
    x: float
    y: float
    t: float
    control: int


class CordesReport(BaseModel):
    """Result of a sampled Cordes verification."""
    eps_min: float = Field(..., description="Sampled Cordes slack, clamped to at most 1")
    eps_raw: float = Field(..., description="Unclamped sample minimum")
    witness: Witness
    samples_used: int = Field(..., ge=1)
    branch: Literal["no-lower-order", "general"]

    def summary(self) -> str:
        w = self.witness
        return (
            f"eps_min = {self.eps_min:.6e} ({self.branch} branch, {self.samples_used} samples)\n"
            f"witness: x=({w.x:.6f}, {w.y:.6f}) t={w.t:.6f} control={w.control}"
        )


class SlabStats(BaseModel):
    """Iteration statistics of one solved slab."""
    slab: int = Field(..., ge=1)
    q: int = Field(..., ge=1)
    iterations: int = Field(..., ge=0)
    residuals: List[float] = Field(default_factory=list)
    restarted: bool = False

    @property
    def final_residual(self) -> float:
        return self.residuals[-1] if self.residuals else 0.0


class ErrorRow(BaseModel):
    """One row of an error table."""
    level: int
    h: float
    tau: float
    p: int
    q: int
    dof_x: int
    dof_t: int
    err_X: float
    err_E: float
    err_H1_T: float
    err_L2H1: Optional[float] = None
    a_h_clipped: int = Field(0, ge=0, description="Temporal jumps with negative a_h(w, w)")


class FitSummary(BaseModel):
    """Least-squares fit of log(error) against dofs**exponent."""
    slope: float
    intercept: float
    r_squared: float
    n_points: int
    degenerate: bool = False
    message: Optional[str] = None


# Manifest sections
class ProblemSection(_Strict):
    key: ProblemKey = "heat-singleton"
    omega: float = Field(1.0, gt=0)
    n_controls: int = Field(32, ge=1, description="Uniform angle samples of SO(2)")
    series_terms: int = Field(4000, ge=1, description="Fourier truncation for exp2-heat")


class MeshSection(_Strict):
    kind: Literal["uniform", "graded"] = "uniform"
    k: int = Field(2, ge=1)
    levels: int = Field(1, ge=1)


class DegreeSection(_Strict):
    kind: Literal["constant", "graded"] = "constant"
    p: int = Field(2, ge=2)
    p_min: int = Field(3, ge=2)


class TimeSection(_Strict):
    kind: Literal["uniform", "geometric"] = "uniform"
    T: float = Field(1.0, gt=0)
    N: int = Field(1, ge=1)
    sigma: float = Field(0.2, description="Geometric grading factor")
    q_rule: Literal["constant", "linear"] = "constant"
    q: int = Field(1, ge=1)

    @field_validator("sigma")
    @classmethod
    def validate_sigma(cls, v):
        if not 0.0 < v < 1.0:
            raise ValueError(f"sigma must lie in (0, 1), got {v}")
        return v


class PenaltySection(_Strict):
    c_s: float = Field(2.5, gt=0)
    sigma: float = Field(1.0, ge=1.0)


class SweepSection(_Strict):
    k_values: Optional[List[int]] = Field(None, description="Defaults to 1..cap for the degree")
    tau_factor: float = Field(2.0, gt=0, description="tau = tau_factor * 2**-k")
    N_values: List[int] = Field(default_factory=lambda: [2, 3, 4, 5, 6])
    couple_mesh_to_N: bool = Field(True, description="Graded mesh levels = N - 1 in tauq sweeps")
    allow_large: bool = Field(False, description="Permit sweeps beyond desk scale")

    @field_validator("k_values", "N_values")
    @classmethod
    def validate_positive(cls, v):
        if v is None:
            return v
        if not v or any(item < 1 for item in v):
            raise ValueError("sweep values must be a non-empty list of positive integers")
        return sorted(set(v))


class OutputSection(_Strict):
    dir: Optional[str] = None
    csv_name: str = "errors.csv"
    plot_name: str = "plot.txt"
    checkpoint_name: str = "solution.txt"


class RunConfig(_Strict):
    """Complete experiment manifest."""
    problem: ProblemSection = Field(default_factory=ProblemSection)
    mesh: MeshSection = Field(default_factory=MeshSection)
    degree: DegreeSection = Field(default_factory=DegreeSection)
    time: TimeSection = Field(default_factory=TimeSection)
    penalty: PenaltySection = Field(default_factory=PenaltySection)
    solver: SolverConfig = Field(default_factory=SolverConfig)
    sweep: SweepSection = Field(default_factory=SweepSection)
    output: OutputSection = Field(default_factory=OutputSection)

    @model_validator(mode="after")
    def validate_desk_scale(self):
        """Cap the convergence sweep unless large runs are explicitly allowed."""
        if self.sweep.allow_large:
            return self
        cap = desk_scale_cap(self.degree.p)
        too_big = [k for k in (self.sweep.k_values or []) if k > cap]
        if too_big:
            raise ValueError(
                f"sweep.k_values {too_big} exceed the desk-scale cap k <= {cap} for p={self.degree.p}; "
                "set sweep.allow_large = true to run them"
            )
        return self

    def sweep_levels(self) -> List[int]:
        """Convergence sweep levels, defaulting to 1..cap."""
        if self.sweep.k_values is not None:
            return list(self.sweep.k_values)
        return list(range(1, desk_scale_cap(self.degree.p) + 1))

    def normalized(self) -> str:
        """Canonical JSON form; parsing it back yields an identical RunConfig."""
        return json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=True)
