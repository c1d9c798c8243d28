import math
from dataclasses import dataclass, field, asdict
from typing import Dict, List, Optional, Any, Tuple
from enum import Enum

from marginals import MarginalDistribution, DistributionParameterError
from copulas import CopulaSpec, CopulaParameterError, describe_tau_range, tau_in_range

class ConfigError(ValueError):
    """Raised when a scenario config is invalid."""
    pass

class CurveMethod(str, Enum):
    QUADRATURE = "quadrature"
    MONTE_CARLO = "monte_carlo"

class CellStatus(str, Enum):
    OK = "ok"
    FAILED = "failed"

class Verdict(str, Enum):
    PASS = "pass"
    FAIL = "fail"
    NOT_EVALUABLE = "not evaluable"
    INFO = "info"  # report-only, never fails a run

def _nan_to_none(values: List[float]) -> List[Optional[float]]:
    return [None if (v is None or math.isnan(v)) else v for v in values]

def _none_to_nan(values: List[Optional[float]]) -> List[float]:
    return [math.nan if v is None else float(v) for v in values]

@dataclass
class PoolingCurve:
    """
    Dedicated vs. pooled inventory over a margin-ratio grid.
    Missing points hold NaN and carry a reason in `missing`.
    """
    t_grid: List[float]
    dedicated: List[float]
    pooled: List[float]
    effect: List[float]
    effect_pct: List[float]
    ci_halfwidth: List[float]
    method: CurveMethod = CurveMethod.QUADRATURE
    missing: Dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        self.method = CurveMethod(self.method)
        n = len(self.t_grid)
        for name in ("dedicated", "pooled", "effect", "effect_pct", "ci_halfwidth"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"curve column {name} has {len(getattr(self, name))} entries, grid has {n}")

    def __len__(self) -> int:
        return len(self.t_grid)

    def rows(self) -> List[Tuple[float, float, float, float, float, float]]:
        return list(zip(self.t_grid, self.dedicated, self.pooled, self.effect, self.effect_pct, self.ci_halfwidth))

    def max_abs_effect_pct(self) -> float:
        finite = [abs(v) for v in self.effect_pct if not math.isnan(v)]
        return max(finite) if finite else math.nan

    def to_dict(self) -> dict:
        return {
            "t_grid": list(self.t_grid),
            "dedicated": _nan_to_none(self.dedicated),
            "pooled": _nan_to_none(self.pooled),
            "effect": _nan_to_none(self.effect),
            "effect_pct": _nan_to_none(self.effect_pct),
            "ci_halfwidth": _nan_to_none(self.ci_halfwidth),
            "method": self.method.value,
            "missing": {str(k): v for k, v in self.missing.items()},
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'PoolingCurve':
        return cls(
            t_grid=[float(t) for t in data["t_grid"]],
            dedicated=_none_to_nan(data["dedicated"]),
            pooled=_none_to_nan(data["pooled"]),
            effect=_none_to_nan(data["effect"]),
            effect_pct=_none_to_nan(data["effect_pct"]),
            ci_halfwidth=_none_to_nan(data["ci_halfwidth"]),
            method=data.get("method", CurveMethod.QUADRATURE.value),
            missing={int(k): v for k, v in data.get("missing", {}).items()},
        )

@dataclass
class ThresholdReport:
    roots: List[float] = field(default_factory=list)
    brackets: List[Tuple[float, float]] = field(default_factory=list)
    sign_pattern: str = "0"
    unique: bool = False
    plateaus: List[Tuple[float, float]] = field(default_factory=list)
    regions: List[Tuple[str, float, float]] = field(default_factory=list)

    @property
    def first_root(self) -> Optional[float]:
        return self.roots[0] if self.roots else None

    def positive_regions(self) -> List[Tuple[float, float]]:
        return [(lo, hi) for sign, lo, hi in self.regions if sign == "+"]

    def to_dict(self) -> dict:
        return {
            "roots": list(self.roots),
            "unique": self.unique,
            "sign_pattern": self.sign_pattern,
            "brackets": [list(b) for b in self.brackets],
            "plateaus": [list(p) for p in self.plateaus],
            "regions": [list(r) for r in self.regions],
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'ThresholdReport':
        return cls(
            roots=[float(r) for r in data.get("roots", [])],
            brackets=[(float(a), float(b)) for a, b in data.get("brackets", [])],
            sign_pattern=data.get("sign_pattern", "0"),
            unique=bool(data.get("unique", False)),
            plateaus=[(float(a), float(b)) for a, b in data.get("plateaus", [])],
            regions=[(str(s), float(a), float(b)) for s, a, b in data.get("regions", [])],
        )

@dataclass
class ProfitComparison:
    pooled_quantity: float
    dedicated_quantity: float
    pooled_profit: float
    pooled_stderr: float
    dedicated_profit: float
    gain: float
    n_samples: int

    def to_dict(self) -> dict:
        return asdict(self)

@dataclass
class ScenarioConfig:
    """
    A grid of (marginal pair x copula spec) cells evaluated over one t grid.
    Validated on construction; ConfigError names the offending entry.
    """
    name: str
    marginal_pairs: List[Tuple[Dict[str, Any], Dict[str, Any]]]
    copula_specs: List[CopulaSpec]
    t_grid: List[float]
    method: CurveMethod = CurveMethod.QUADRATURE
    mc_samples: int = 100_000
    base_seed: int = 0
    output_path: Optional[str] = None
    scan_points: int = 199
    zero_tol: float = 1e-5
    validation_samples: int = 20_000
    scan_thresholds: bool = True
    notes: List[str] = field(default_factory=list)

    def __post_init__(self):
        try:
            self.method = CurveMethod(self.method)
        except ValueError:
            raise ConfigError(f"method must be one of {[m.value for m in CurveMethod]}, got {self.method!r}")

        if not self.marginal_pairs:
            raise ConfigError(f"scenario {self.name!r} has no marginal pairs")
        pairs = []
        for i, pair in enumerate(self.marginal_pairs):
            if len(pair) != 2:
                raise ConfigError(f"marginal_pairs[{i}] must hold exactly two marginals")
            try:
                for spec in pair:
                    MarginalDistribution.from_spec(spec)
            except DistributionParameterError as e:
                raise ConfigError(f"marginal_pairs[{i}]: {e}")
            pairs.append((dict(pair[0]), dict(pair[1])))
        self.marginal_pairs = pairs

        if not self.copula_specs:
            raise ConfigError(f"scenario {self.name!r} has no copula specs")
        specs = []
        for i, spec in enumerate(self.copula_specs):
            try:
                spec = spec if isinstance(spec, CopulaSpec) else CopulaSpec.from_dict(spec)
            except CopulaParameterError as e:
                raise ConfigError(f"copula_specs[{i}]: {e}")
            if spec.tau is not None and not tau_in_range(spec.copula_family, spec.tau):
                raise ConfigError(
                    f"copula_specs[{i}]: tau={spec.tau} not attainable by {spec.family}; "
                    f"attainable range is {describe_tau_range(spec.copula_family)}"
                )
            if spec.tau is None:
                try:
                    spec.build()
                except CopulaParameterError as e:
                    raise ConfigError(f"copula_specs[{i}]: {e}")
            specs.append(spec)
        self.copula_specs = specs

        grid = [float(t) for t in self.t_grid]
        if not grid:
            raise ConfigError("t_grid is empty")
        if any(not 0.0 < t < 1.0 for t in grid):
            raise ConfigError(f"t_grid values must lie in (0, 1), got {[t for t in grid if not 0.0 < t < 1.0]}")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigError("t_grid must be strictly increasing")
        self.t_grid = grid

        if self.method == CurveMethod.MONTE_CARLO and self.mc_samples < 1000:
            raise ConfigError(f"mc_samples must be >= 1000, got {self.mc_samples}")
        if self.scan_points < 9:
            raise ConfigError(f"scan_points must be >= 9, got {self.scan_points}")
        if not self.zero_tol > 0:
            raise ConfigError(f"zero_tol must be > 0, got {self.zero_tol}")
        if self.validation_samples and self.validation_samples < 2:
            raise ConfigError(f"validation_samples must be 0 or >= 2, got {self.validation_samples}")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "marginal_pairs": [[a, b] for a, b in self.marginal_pairs],
            "copula_specs": [s.to_dict() for s in self.copula_specs],
            "t_grid": list(self.t_grid),
            "method": self.method.value,
            "mc_samples": self.mc_samples,
            "base_seed": self.base_seed,
            "output_path": self.output_path,
            "scan_points": self.scan_points,
            "zero_tol": self.zero_tol,
            "validation_samples": self.validation_samples,
            "scan_thresholds": self.scan_thresholds,
            "notes": list(self.notes),
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'ScenarioConfig':
        if not isinstance(data, dict):
            raise ConfigError(f"scenario config must be a JSON object, got {type(data).__name__}")
        required = ("marginal_pairs", "copula_specs", "t_grid")
        missing = [k for k in required if k not in data]
        if missing:
            raise ConfigError(f"scenario config missing keys {missing}")
        known = set(required) | {
            "name", "method", "mc_samples", "base_seed", "output_path",
            "scan_points", "zero_tol", "validation_samples", "scan_thresholds", "notes",
        }
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown scenario config keys {sorted(unknown)}")
        try:
            return cls(
                name=str(data.get("name", "custom")),
                marginal_pairs=data["marginal_pairs"],
                copula_specs=data["copula_specs"],
                t_grid=data["t_grid"],
                method=data.get("method", CurveMethod.QUADRATURE.value),
                mc_samples=int(data.get("mc_samples", 100_000)),
                base_seed=int(data.get("base_seed", 0)),
                output_path=data.get("output_path"),
                scan_points=int(data.get("scan_points", 199)),
                zero_tol=float(data.get("zero_tol", 1e-5)),
                validation_samples=int(data.get("validation_samples", 20_000)),
                scan_thresholds=bool(data.get("scan_thresholds", True)),
                notes=list(data.get("notes", [])),
            )
        except ConfigError:
            raise
        except (TypeError, ValueError) as e:
            raise ConfigError(f"bad scenario config: {e}")

@dataclass
class ScenarioResult:
    cell_id: str
    seed: str  # hex of the 128-bit stream key
    marginal_labels: Tuple[str, str]
    copula_family: str
    tau: Optional[float]
    theta: Optional[float]
    model: Dict[str, Any] = field(default_factory=dict)
    curve: Optional[PoolingCurve] = None
    thresholds: Optional[ThresholdReport] = None
    empirical_tau: Optional[float] = None
    wall_time: float = 0.0
    status: CellStatus = CellStatus.OK
    error: Optional[str] = None
    numerics: Dict[str, int] = field(default_factory=dict)  # quadrature/sampling work done by this cell

    def __post_init__(self):
        self.status = CellStatus(self.status)
        self.marginal_labels = tuple(self.marginal_labels)  # type: ignore[assignment]

    @property
    def ok(self) -> bool:
        return self.status == CellStatus.OK

    def summary(self) -> dict:
        """Manifest entry: everything except the curve itself."""
        return {
            "cell_id": self.cell_id,
            "seed": self.seed,
            "marginals": list(self.marginal_labels),
            "copula_family": self.copula_family,
            "tau": self.tau,
            "theta": self.theta,
            "empirical_tau": self.empirical_tau,
            "wall_time": self.wall_time,
            "status": self.status.value,
            "error": self.error,
            "numerics": self.numerics,
        }

    def to_dict(self) -> dict:
        data = self.summary()
        data["model"] = self.model
        data["curve"] = self.curve.to_dict() if self.curve else None
        data["thresholds"] = self.thresholds.to_dict() if self.thresholds else None
        return data

    @classmethod
    def from_dict(cls, data: dict) -> 'ScenarioResult':
        curve_data = data.get("curve")
        thr_data = data.get("thresholds")
        return cls(
            cell_id=data["cell_id"],
            seed=data["seed"],
            marginal_labels=tuple(data.get("marginals", ("", ""))),
            copula_family=data["copula_family"],
            tau=data.get("tau"),
            theta=data.get("theta"),
            model=data.get("model", {}),
            curve=PoolingCurve.from_dict(curve_data) if curve_data else None,
            thresholds=ThresholdReport.from_dict(thr_data) if thr_data else None,
            empirical_tau=data.get("empirical_tau"),
            wall_time=float(data.get("wall_time", 0.0)),
            status=data.get("status", CellStatus.OK.value),
            error=data.get("error"),
            numerics=dict(data.get("numerics") or {}),
        )

@dataclass
class CheckVerdict:
    name: str
    description: str
    verdict: Verdict
    values: Dict[str, Any] = field(default_factory=dict)
    detail: str = ""

    def to_dict(self) -> dict:
        data = asdict(self)
        data["verdict"] = self.verdict.value
        return data

@dataclass
class CheckReport:
    verdicts: List[CheckVerdict] = field(default_factory=list)

    def get(self, name: str) -> Optional[CheckVerdict]:
        for v in self.verdicts:
            if v.name == name:
                return v
        return None

    @property
    def all_passed(self) -> bool:
        """True when no evaluable check failed."""
        return all(v.verdict != Verdict.FAIL for v in self.verdicts)

    def to_dict(self) -> dict:
        return {
            "all_passed": self.all_passed,
            "checks": [v.to_dict() for v in self.verdicts],
        }
