"""
Data models for stokesbench.

Small value objects (configs, reports, results) are pydantic models so they validate
and serialize cleanly. Heavy numerical state (meshes, fields, stencils) lives in
dataclasses next to the code that builds it.
"""

import csv
import io
import json
from datetime import datetime
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, Field, validator


class OperatorTag(str, Enum):
    """Discrete operators of the stabilized Stokes system."""
    A1 = "A1"
    A2 = "A2"
    B = "B"
    BT = "Bt"
    C = "C"
    M = "M"

    @property
    def group(self) -> str:
        """Tag group used by operator-count reports (B and Bt count together)."""
        if self in (OperatorTag.A1, OperatorTag.A2):
            return "A"
        if self in (OperatorTag.B, OperatorTag.BT):
            return "B"
        return self.value


class Formulation(str, Enum):
    """Velocity-velocity block: vector Laplacian or symmetric gradient."""
    LAPLACE = "laplace"
    DOP = "dop"

    @property
    def velocity_tag(self) -> OperatorTag:
        return OperatorTag.A1 if self is Formulation.LAPLACE else OperatorTag.A2


class SolverKind(str, Enum):
    """The three outer solvers."""
    SCG = "scg"
    PMINRES = "pminres"
    UMG = "umg"


class SmootherKind(str, Enum):
    """Hybrid Gauss-Seidel variants."""
    FHGS = "FHGS"
    BHGS = "BHGS"
    SHGS = "SHGS"
    FHGS_RELAXED = "FHGS_relaxed"


class CycleKind(str, Enum):
    V = "V"
    VVAR = "Vvar"
    FMG = "FMG"


class CoarseSolverKind(str, Enum):
    CG_ON_A = "CG_on_A"
    PMINRES_SADDLE = "PMINRES_saddle"
    # sparse LU of the level-0 velocity block: a fixed linear coarse solve
    LU_ON_A = "LU_on_A"


class CoarseMode(str, Enum):
    """Coarse solves to a relative tolerance, or exactly five iterations."""
    TOL = "tol"
    FIXED5 = "fixed5"


class BoundaryTag(str, Enum):
    """Boundary condition carried by a coarse boundary face."""
    DIRICHLET = "dirichlet"
    OUTFLOW = "outflow"
    FREESLIP = "freeslip"

    @property
    def priority(self) -> int:
        """Precedence at nodes shared by differently tagged faces."""
        return {"outflow": 1, "freeslip": 2, "dirichlet": 3}[self.value]


class ReportFormat(str, Enum):
    CSV = "csv"
    MD = "md"
    JSON = "json"


class CoarseSolverSpec(BaseModel):
    """Coarse-grid Krylov solver setup."""
    kind: CoarseSolverKind = CoarseSolverKind.CG_ON_A
    rel_tol: float = 1e-3
    max_iters: int = 2000
    # When set, run exactly this many iterations and ignore rel_tol
    fixed_iterations: Optional[int] = None
    # CG iterations used as velocity block preconditioner inside coarse MINRES
    inner_velocity_iterations: int = 3

    @validator('rel_tol')
    def validate_rel_tol(cls, v):
        if not 0.0 < v < 1.0:
            raise ValueError(f"rel_tol must lie in (0, 1), got {v}")
        return v

    @validator('max_iters', 'inner_velocity_iterations')
    def validate_positive(cls, v):
        if v < 1:
            raise ValueError("iteration limits must be >= 1")
        return v

    @validator('fixed_iterations')
    def validate_fixed(cls, v):
        if v is not None and v < 1:
            raise ValueError("fixed_iterations must be >= 1")
        return v

    @classmethod
    def for_kind(cls, kind: CoarseSolverKind, mode: CoarseMode = CoarseMode.TOL) -> 'CoarseSolverSpec':
        """Defaults: CG to 1e-3, PMINRES to 5e-3; fixed5 runs five iterations. LU ignores both."""
        rel_tol = 5e-3 if kind is CoarseSolverKind.PMINRES_SADDLE else 1e-3
        fixed = 5 if mode is CoarseMode.FIXED5 else None
        return cls(kind=kind, rel_tol=rel_tol, fixed_iterations=fixed)


class CycleSpec(BaseModel):
    """Multigrid cycle: V(n_pre, n_post), Vvar(n_pre, n_post) or FMG-kVvar."""
    kind: CycleKind = CycleKind.V
    n_pre: int = 3
    n_post: int = 3
    fmg_inner_cycles: int = 1
    coarse: CoarseSolverSpec = Field(default_factory=CoarseSolverSpec)

    @validator('n_pre', 'n_post')
    def validate_smoothing(cls, v):
        if v < 0:
            raise ValueError("smoothing counts must be >= 0")
        return v

    @validator('fmg_inner_cycles')
    def validate_inner(cls, v):
        if v < 0:
            raise ValueError("fmg_inner_cycles must be >= 0")
        return v

    def smoothing_steps(self, level: int, top: int) -> Tuple[int, int]:
        """Pre/post smoothing counts on `level` for a cycle started on `top`."""
        extra = 2 * (top - level) if self.kind in (CycleKind.VVAR, CycleKind.FMG) else 0
        return self.n_pre + extra, self.n_post + extra

    @property
    def label(self) -> str:
        base = "Vvar" if self.kind in (CycleKind.VVAR, CycleKind.FMG) else "V"
        text = f"{base}({self.n_pre},{self.n_post})"
        if self.kind is CycleKind.FMG:
            text = f"FMG-{self.fmg_inner_cycles}{text}"
        return text

    @classmethod
    def parse(cls, label: str, coarse: Optional[CoarseSolverSpec] = None) -> 'CycleSpec':
        """Parse labels like 'V(3,3)', 'Vvar(1,1)', '2Vvar(2,2)' or 'FMG-2Vvar(2,2)'."""
        text = label.strip()
        fmg = text.upper().startswith("FMG-")
        if fmg:
            text = text[4:]
        inner = 1
        if text[:1].isdigit():
            fmg = True
            inner = int(text[0])
            text = text[1:]
        try:
            name, args = text.split("(", 1)
            pre, post = (int(a) for a in args.rstrip(")").split(","))
        except ValueError as e:
            raise ValueError(f"Cannot parse cycle label: {label!r}") from e
        if name == "Vvar":
            kind = CycleKind.FMG if fmg else CycleKind.VVAR
        elif name == "V" and not fmg:
            kind = CycleKind.V
        else:
            raise ValueError(f"Unknown cycle type in {label!r}")
        return cls(kind=kind, n_pre=pre, n_post=post, fmg_inner_cycles=inner,
                   coarse=coarse or CoarseSolverSpec.for_kind(CoarseSolverKind.PMINRES_SADDLE))


class SolverConfig(BaseModel):
    """Algorithmic setup of one outer solver."""
    kind: SolverKind
    formulation: Formulation = Formulation.LAPLACE
    eps: float = 1e-8
    n_A: int = 3
    n_S: int = 3
    n_I: int = 1
    cycle: Optional[CycleSpec] = None
    seed: int = 42
    max_iterations: int = 200
    nu: float = 1.0
    pressure_omega: float = 0.3

    @validator('eps')
    def validate_eps(cls, v):
        if not 0.0 < v < 1.0:
            raise ValueError(f"eps must lie in (0, 1), got {v}")
        return v

    @validator('n_A', 'n_S', 'n_I', 'max_iterations')
    def validate_counts(cls, v):
        if v < 1:
            raise ValueError("iteration counts must be >= 1")
        return v

    @validator('nu')
    def validate_nu(cls, v):
        if v <= 0:
            raise ValueError("viscosity must be positive")
        return v

    @validator('pressure_omega')
    def validate_omega(cls, v):
        if not 0.0 < v <= 1.0:
            raise ValueError("omega must lie in (0, 1]")
        return v

    @classmethod
    def defaults(cls, kind: SolverKind, formulation: Formulation = Formulation.LAPLACE,
                 coarse_mode: CoarseMode = CoarseMode.TOL, **overrides: Any) -> 'SolverConfig':
        """Default setup of each solver (cycle, smoother pairing and coarse solver)."""
        if kind is SolverKind.SCG:
            cycle = CycleSpec(kind=CycleKind.V, n_pre=3, n_post=3,
                              coarse=CoarseSolverSpec.for_kind(CoarseSolverKind.CG_ON_A, coarse_mode))
        elif kind is SolverKind.PMINRES:
            # MINRES needs a linear preconditioner; fixed5 keeps the five-step CG of the timing runs
            coarse_kind = CoarseSolverKind.CG_ON_A if coarse_mode is CoarseMode.FIXED5 else CoarseSolverKind.LU_ON_A
            cycle = CycleSpec(kind=CycleKind.V, n_pre=1, n_post=1,
                              coarse=CoarseSolverSpec.for_kind(coarse_kind, coarse_mode))
        else:
            cycle = CycleSpec(kind=CycleKind.VVAR, n_pre=3, n_post=3,
                              coarse=CoarseSolverSpec.for_kind(CoarseSolverKind.PMINRES_SADDLE, coarse_mode))
        params: Dict[str, Any] = {"kind": kind, "formulation": formulation, "cycle": cycle}
        if kind is SolverKind.PMINRES:
            params["max_iterations"] = 500
        params.update(overrides)
        return cls(**params)

    def setup_row(self) -> Dict[str, str]:
        """One row of the algorithmic setup table."""
        cycle = self.cycle.label if self.cycle else "-"
        coarse = self.cycle.coarse if self.cycle else None
        if self.kind is SolverKind.SCG:
            smoother = "FHGS/BHGS"
            extra = f"n_A={self.n_A}, n_S={self.n_S}, n_I={self.n_I}"
        elif self.kind is SolverKind.PMINRES:
            smoother = "FHGS/BHGS"
            extra = "pressure block: lumped mass"
        else:
            smoother = f"SHGS / FHGS (omega={self.pressure_omega})"
            extra = "inexact Uzawa smoother"
        if coarse is None:
            coarse_text = "-"
        elif coarse.kind is CoarseSolverKind.LU_ON_A:
            coarse_text = f"{coarse.kind.value} (direct)"
        elif coarse.fixed_iterations:
            coarse_text = f"{coarse.kind.value} ({coarse.fixed_iterations} it)"
        else:
            coarse_text = f"{coarse.kind.value} (eps={coarse.rel_tol:g})"
        return {"solver": self.kind.value.upper(), "cycle": cycle, "smoother": smoother,
                "coarse": coarse_text, "notes": extra}


class RunResult(BaseModel):
    """Outcome of one solve."""
    iterations: int = 0
    coarse_iterations: List[int] = Field(default_factory=list)
    residual_history: List[float] = Field(default_factory=list)
    wall_time: float = 0.0
    op_counts: Dict[str, Dict[int, int]] = Field(default_factory=dict)
    memory_model: int = 0
    converged: bool = False

    @validator('residual_history')
    def validate_history(cls, v):
        if any(not (r > 0.0) for r in v):
            raise ValueError("residual history entries must be strictly positive")
        return v

    @property
    def final_residual(self) -> Optional[float]:
        return self.residual_history[-1] if self.residual_history else None

    def to_json(self) -> str:
        """Serialize to a single JSON object with exactly the model fields."""
        return json.dumps(self.model_dump(mode="json"), sort_keys=False)

    def to_csv_row(self) -> Dict[str, Any]:
        """Flat row: op counts become ops_<tag>_L<level> columns."""
        row: Dict[str, Any] = {
            "iterations": self.iterations,
            "coarse_iterations": sum(self.coarse_iterations),
            "final_residual": self.final_residual if self.final_residual is not None else "",
            "wall_time_s": round(self.wall_time, 6),
            "memory_bytes": self.memory_model,
            "converged": self.converged,
        }
        for tag in sorted(self.op_counts):
            for level in sorted(self.op_counts[tag]):
                row[f"ops_{tag}_L{level}"] = self.op_counts[tag][level]
        return row


class TableRow(BaseModel):
    """One (solver, level) row of an iteration/time table."""
    solver: str
    formulation: str
    level: int
    dofs: int
    iterations: int
    time_s: float
    setup_s: Optional[float] = None
    coarse_iterations: int = 0
    converged: bool = False
    op_counts: Dict[str, int] = Field(default_factory=dict)
    error: Optional[str] = None

    model_config = {"protected_namespaces": ()}


class TableArtifact(BaseModel):
    """Rows of one benchmark table, plus the format it is written in."""
    title: str = "Iteration numbers and time-to-solution"
    format: ReportFormat = ReportFormat.CSV
    rows: List[TableRow] = Field(default_factory=list)
    metadata: Dict[str, Any] = Field(default_factory=dict)
    created_at: datetime = Field(default_factory=datetime.now)

    def add(self, row: TableRow) -> None:
        """Append a row; (solver, level) pairs stay unique."""
        key = (row.solver, row.formulation, row.level)
        if any((r.solver, r.formulation, r.level) == key for r in self.rows):
            raise ValueError(f"duplicate row for {key}")
        self.rows.append(row)

    @property
    def all_converged(self) -> bool:
        return bool(self.rows) and all(r.converged and r.error is None for r in self.rows)


class BenchConfig(BaseModel):
    """Benchmark harness configuration (JSON file mirrors these fields)."""
    mesh: Optional[str] = None  # None selects the builtin unit cube
    formulation: Formulation = Formulation.LAPLACE
    solvers: List[SolverKind] = Field(default_factory=lambda: [SolverKind.SCG, SolverKind.PMINRES, SolverKind.UMG])
    levels: Tuple[int, int] = (2, 4)
    eps: float = 1e-8
    seeds: List[int] = Field(default_factory=lambda: [42])
    coarse_mode: CoarseMode = CoarseMode.TOL
    output_dir: str = "bench_output"
    format: ReportFormat = ReportFormat.CSV
    mu_sm: float = 23.9e6
    mu_d: float = 3.25
    jobs: int = 1
    include_setup: bool = False
    fmg_variants: List[str] = Field(default_factory=lambda: [
        "1Vvar(1,1)", "2Vvar(1,1)", "1Vvar(2,2)", "2Vvar(2,2)",
        "1Vvar(3,3)", "2Vvar(3,3)", "1Vvar(5,5)", "2Vvar(5,5)",
    ])
    trace: bool = False
    # predict inputs
    n_I: int = 8
    measured_time: Optional[float] = None
    dofs: Optional[float] = None  # defaults to the finest predicted level
    threads: int = 1

    @validator('solvers')
    def validate_solvers(cls, v):
        if not v:
            raise ValueError("at least one solver must be selected")
        return v

    @validator('levels')
    def validate_levels(cls, v):
        lo, hi = v
        if lo < 0 or hi < lo:
            raise ValueError(f"level range {lo}..{hi} is empty")
        return v

    @validator('eps')
    def validate_eps(cls, v):
        if not 0.0 < v < 1.0:
            raise ValueError("eps must lie in (0, 1)")
        return v

    @validator('seeds')
    def validate_seeds(cls, v):
        if not v:
            raise ValueError("at least one seed is required")
        return v

    @validator('fmg_variants')
    def validate_variants(cls, v):
        if not v:
            raise ValueError("at least one FMG variant must be selected")
        for label in v:
            CycleSpec.parse(label)
        return v

    @validator('jobs', 'threads', 'n_I')
    def validate_jobs(cls, v):
        if v < 1:
            raise ValueError("must be >= 1")
        return v

    @validator('mu_sm', 'mu_d')
    def validate_constants(cls, v):
        if v <= 0:
            raise ValueError("machine constants must be positive")
        return v

    @property
    def level_range(self) -> List[int]:
        return list(range(self.levels[0], self.levels[1] + 1))


class OpCountReport(BaseModel):
    """Raw and workload-weighted operator evaluation counts."""
    L: int
    raw: Dict[str, Dict[int, int]] = Field(default_factory=dict)
    weighted: Dict[str, float] = Field(default_factory=dict)
    totals: Dict[str, float] = Field(default_factory=dict)

    def group(self, name: str) -> float:
        return self.weighted.get(name, 0.0)


class TMEReport(BaseModel):
    """Textbook multigrid efficiency figures."""
    wu_blocks: int = 10
    e_tme: float
    e_partme: Optional[float] = None
    mu_sm: float = 23.9e6
    n_c: int = 1
    t: Optional[float] = None
    n: Optional[float] = None


class MemoryModel(BaseModel):
    """Predicted memory of the solution hierarchy."""
    n_u: float
    n_p: float
    L: int
    on_the_fly: bool = False
    extra_vectors: int = 0
    bytes_total: float

    @property
    def gib(self) -> float:
        return self.bytes_total / 2 ** 30

    @property
    def tib(self) -> float:
        return self.bytes_total / 2 ** 40


class AccuracyLevel(BaseModel):
    level: int
    h: float
    dofs: int
    total_error: float
    discretization_error: float
    gamma: float


class AccuracyReport(BaseModel):
    """Per-level total vs. discretization error of an FMG variant."""
    variant: str
    levels: List[AccuracyLevel] = Field(default_factory=list)

    def add(self, entry: AccuracyLevel) -> None:
        self.levels.append(entry)

    @property
    def gamma_finest(self) -> Optional[float]:
        return self.levels[-1].gamma if self.levels else None


class LupsReport(BaseModel):
    """Measured smoother throughput."""
    units: str = "node-updates/s"
    level: int
    nodes: int
    sweeps: int
    runs: List[float] = Field(default_factory=list)
    mean: float
    spread: float
    total_seconds: float
    warning: Optional[str] = None

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["run", f"lups ({self.units})"])
        for i, value in enumerate(self.runs):
            writer.writerow([i, f"{value:.6g}"])
        return buf.getvalue()
