from enum import Enum


class Boundary(str, Enum):
    OPEN = "open"
    PERIODIC = "periodic"


class BondClass(str, Enum):
    INTERNAL = "internal"
    IN = "in"
    OUT = "out"


class AuxAction(str, Enum):
    B1 = "b1"
    B2 = "b2"
    B1C = "b1c"
    B2C = "b2c"
    STAY = "stay"


class RewardKind(str, Enum):
    R1 = "r1"
    R2 = "r2"


class InterchangeMode(str, Enum):
    ZERO_T = "zero-t"
    FINITE_BETA = "finite-beta"


class Dynamics(str, Enum):
    LATTICE = "lattice"
    KERNEL = "kernel"


class KernelVariant(str, Enum):
    FULL = "full"
    NO_SLIDE = "no-slide"


class SolveMethod(str, Enum):
    VALUE_ITERATION = "vi"
    POLICY_ITERATION = "pi"


class CheckStatus(str, Enum):
    PASS = "pass"
    FAIL = "fail"
    NOTE = "note"


class OutputFormat(str, Enum):
    CSV = "csv"
    JSON = "json"
    TABLE = "table"


class ExportKind(str, Enum):
    KERNEL = "kernel"
    VALUES = "values"
    POLICY = "policy"
    TRAJECTORIES = "trajectories"
