from pydantic import BaseModel, ConfigDict, Field, ValidationError, computed_field, field_validator, model_validator
from typing import List, Optional, Tuple
from .models import AuxAction, Boundary, CheckStatus, OutputFormat, RewardKind, SolveMethod


def describe_validation_error(exc: ValidationError) -> str:
    """First human-readable message of a pydantic validation error"""
    for error in exc.errors():
        cause = error.get("ctx", {}).get("error")
        if cause is not None:
            return str(cause)
        location = ".".join(str(part) for part in error.get("loc", ()))
        return f"{location}: {error['msg']}" if location else error["msg"]
    return str(exc)


class ModelParams(BaseModel):
    """Lattice-gas parameters: binding energy U, activation energy delta, inverse temperature beta"""
    model_config = ConfigDict(frozen=True)

    U: float = 1.0
    delta: float = 1.75
    beta: float = 8.0
    L: int = 10
    boundary: Boundary = Boundary.PERIODIC

    @model_validator(mode="after")
    def check_regime(self):
        if self.U <= 0:
            raise ValueError("U must be positive")
        if not (1.5 * self.U < self.delta < 2 * self.U):
            raise ValueError(f"delta must lie in (1.5U, 2U), got delta={self.delta} for U={self.U}")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.L < 2:
            raise ValueError("L must be at least 2")
        return self

    def with_boundary(self, boundary: Boundary) -> "ModelParams":
        if boundary == self.boundary:
            return self
        return self.model_copy(update={"boundary": boundary})


class RewardSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: RewardKind
    U: float = Field(1.0, gt=0)


class SearchBounds(BaseModel):
    model_config = ConfigDict(frozen=True)

    max_particles: int = Field(14, gt=0)
    max_energy_above_start: float = Field(3.0, gt=0)
    max_states_explored: int = Field(10_000_000, gt=0)


class RunConfig(BaseModel):
    """Validated command-line configuration shared by every subcommand"""
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    L: int = 10
    lam: float = Field(0.9, alias="lambda")
    reward: RewardKind = RewardKind.R1
    U: float = 1.0
    delta: float = 1.75
    beta: float = 8.0
    seed: int = 0
    tol: float = 1e-10
    output_format: OutputFormat = OutputFormat.TABLE
    output_path: Optional[str] = None
    threads: Optional[int] = None

    @field_validator("lam")
    @classmethod
    def check_lambda(cls, value: float) -> float:
        if not (0.0 < value < 1.0):
            raise ValueError("lambda must lie in (0,1)")
        return value

    @field_validator("L")
    @classmethod
    def check_side(cls, value: int) -> int:
        if value < 6:
            raise ValueError("L must be at least 6")
        return value

    @field_validator("tol")
    @classmethod
    def check_tol(cls, value: float) -> float:
        if value <= 0:
            raise ValueError("tol must be positive")
        return value

    @field_validator("threads")
    @classmethod
    def check_threads(cls, value: Optional[int]) -> Optional[int]:
        if value is not None and value < 1:
            raise ValueError("threads must be at least 1")
        return value

    @model_validator(mode="after")
    def check_params(self):
        try:
            self.model_params()
        except ValidationError as e:
            raise ValueError(describe_validation_error(e))
        return self

    def model_params(self, boundary: Boundary = Boundary.PERIODIC) -> ModelParams:
        return ModelParams(U=self.U, delta=self.delta, beta=self.beta, L=self.L, boundary=boundary)

    def reward_spec(self) -> RewardSpec:
        return RewardSpec(kind=self.reward, U=self.U)


class SolveReport(BaseModel):
    method: SolveMethod
    iterations: int
    residual: float = Field(ge=0)
    wallclock: float
    update_norms: List[float] = []


class CheckResult(BaseModel):
    name: str
    status: CheckStatus
    measured: Optional[float] = None
    expected: Optional[float] = None
    tolerance: Optional[float] = None
    detail: str = ""


class VerificationReport(BaseModel):
    checks: List[CheckResult] = []

    @computed_field
    @property
    def all_passed(self) -> bool:
        return all(check.status != CheckStatus.FAIL for check in self.checks)

    def record(self, name: str, passed: bool, measured: Optional[float] = None,
               expected: Optional[float] = None, tolerance: Optional[float] = None,
               detail: str = "") -> CheckResult:
        result = CheckResult(
            name=name,
            status=CheckStatus.PASS if passed else CheckStatus.FAIL,
            measured=measured,
            expected=expected,
            tolerance=tolerance,
            detail=detail,
        )
        self.checks.append(result)
        return result

    def note(self, name: str, detail: str, measured: Optional[float] = None,
             expected: Optional[float] = None) -> CheckResult:
        result = CheckResult(name=name, status=CheckStatus.NOTE, measured=measured,
                             expected=expected, detail=detail)
        self.checks.append(result)
        return result

    def merge(self, other: "VerificationReport") -> "VerificationReport":
        self.checks.extend(other.checks)
        return self

    def failures(self) -> List[CheckResult]:
        return [check for check in self.checks if check.status == CheckStatus.FAIL]

    def counts(self) -> dict:
        return {status.value: sum(1 for c in self.checks if c.status == status) for status in CheckStatus}


class EpochRecord(BaseModel):
    state: Tuple[int, int]
    action: AuxAction
    reward: float
    discount: float


class Trajectory(BaseModel):
    epochs: List[EpochRecord] = []
    discounted_return: float
    hit_target: bool
    steps: int
    # relaxation left the rectangle states before absorption
    unresolved: bool = False


class EpisodeBatch(BaseModel):
    start: Tuple[int, int]
    seed: int
    episodes: int
    mean: float
    std: float
    stderr: float
    absorbed: int
    unresolved: int = 0
