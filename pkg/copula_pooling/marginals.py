import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
from scipy import stats

logger = logging.getLogger("Marginals")

ArrayLike = Union[float, np.ndarray]

class DistributionParameterError(ValueError):
    """Raised when a family is unknown or its parameters are out of range."""
    pass

class QuantileDomainError(ValueError):
    """Raised when a probability lies outside the admissible quantile domain."""
    pass

class Family(str, Enum):
    BETA = "beta"
    NORMAL = "normal"
    EXPONENTIAL = "exponential"
    PARETO = "pareto"
    UNIFORM = "uniform"
    STUDENT = "student"

# Parameter names per family, in the order they appear in a spec's "params" list
PARAM_NAMES: Dict[Family, Tuple[str, ...]] = {
    Family.BETA: ("a", "b"),
    Family.NORMAL: ("mu", "sigma"),
    Family.EXPONENTIAL: ("rate",),
    Family.PARETO: ("alpha", "x_m"),
    Family.UNIFORM: ("lower", "upper"),
    Family.STUDENT: ("df", "mu", "sigma"),
}

def _validate(family: Family, params: Tuple[float, ...]):
    expected = PARAM_NAMES[family]
    if len(params) != len(expected):
        raise DistributionParameterError(
            f"{family.value} expects {len(expected)} parameters {expected}, got {len(params)}"
        )
    if not all(math.isfinite(p) for p in params):
        raise DistributionParameterError(f"{family.value} parameters must be finite, got {params}")

    if family == Family.BETA:
        a, b = params
        if a <= 0 or b <= 0:
            raise DistributionParameterError(f"beta shapes must be > 0, got a={a}, b={b}")
    elif family == Family.NORMAL:
        if params[1] <= 0:
            raise DistributionParameterError(f"normal sigma must be > 0, got {params[1]}")
    elif family == Family.EXPONENTIAL:
        if params[0] <= 0:
            raise DistributionParameterError(f"exponential rate must be > 0, got {params[0]}")
    elif family == Family.PARETO:
        alpha, x_m = params
        if alpha <= 0 or x_m <= 0:
            raise DistributionParameterError(f"pareto alpha and x_m must be > 0, got alpha={alpha}, x_m={x_m}")
    elif family == Family.UNIFORM:
        lower, upper = params
        if not lower < upper:
            raise DistributionParameterError(f"uniform needs lower < upper, got [{lower}, {upper}]")
    elif family == Family.STUDENT:
        df, _, sigma = params
        if df <= 0 or sigma <= 0:
            raise DistributionParameterError(f"student df and sigma must be > 0, got df={df}, sigma={sigma}")

def _freeze(family: Family, params: Tuple[float, ...]):
    """Builds the scipy.stats frozen law backing a marginal."""
    if family == Family.BETA:
        return stats.beta(params[0], params[1])
    if family == Family.NORMAL:
        return stats.norm(loc=params[0], scale=params[1])
    if family == Family.EXPONENTIAL:
        return stats.expon(scale=1.0 / params[0])
    if family == Family.PARETO:
        return stats.pareto(params[0], scale=params[1])
    if family == Family.UNIFORM:
        return stats.uniform(loc=params[0], scale=params[1] - params[0])
    return stats.t(params[0], loc=params[1], scale=params[2])

@dataclass(frozen=True)
class MarginalDistribution:
    """
    Parametric univariate demand law.

    Immutable; every method is pure and accepts scalars or numpy arrays.
    Quantiles follow the generalized inverse inf{x : F(x) >= p}.
    """
    family: Family
    params: Tuple[float, ...]
    _law: Any = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        try:
            family = Family(self.family)
        except ValueError:
            known = ", ".join(f.value for f in Family)
            raise DistributionParameterError(f"unknown marginal family {self.family!r} (known: {known})")
        params = tuple(float(p) for p in self.params)
        _validate(family, params)
        object.__setattr__(self, "family", family)
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "_law", _freeze(family, params))

    # --- Constructors ---

    @classmethod
    def beta(cls, a: float, b: float) -> "MarginalDistribution":
        return cls(Family.BETA, (a, b))

    @classmethod
    def normal(cls, mu: float, sigma: float) -> "MarginalDistribution":
        return cls(Family.NORMAL, (mu, sigma))

    @classmethod
    def exponential(cls, rate: float) -> "MarginalDistribution":
        return cls(Family.EXPONENTIAL, (rate,))

    @classmethod
    def pareto(cls, alpha: float, x_m: float = 1.0) -> "MarginalDistribution":
        return cls(Family.PARETO, (alpha, x_m))

    @classmethod
    def uniform(cls, lower: float = 0.0, upper: float = 1.0) -> "MarginalDistribution":
        return cls(Family.UNIFORM, (lower, upper))

    @classmethod
    def student(cls, df: float, mu: float = 0.0, sigma: float = 1.0) -> "MarginalDistribution":
        return cls(Family.STUDENT, (df, mu, sigma))

    @classmethod
    def from_spec(cls, spec: Dict[str, Any]) -> "MarginalDistribution":
        """Parses {"family": "beta", "params": [2, 8]}."""
        if not isinstance(spec, dict) or "family" not in spec:
            raise DistributionParameterError(f"marginal spec needs a 'family' key, got {spec!r}")
        family = str(spec["family"]).lower()
        params = spec.get("params", [])
        if family == Family.PARETO.value and len(params) == 1:
            params = [params[0], 1.0]  # x_m defaults to 1
        try:
            return cls(family, tuple(float(p) for p in params))  # type: ignore[arg-type]
        except (TypeError, ValueError) as e:
            if isinstance(e, DistributionParameterError):
                raise
            raise DistributionParameterError(f"bad parameters in marginal spec {spec!r}: {e}")

    def to_spec(self) -> Dict[str, Any]:
        return {"family": self.family.value, "params": list(self.params)}

    def label(self) -> str:
        return f"{self.family.value}({','.join(f'{p:g}' for p in self.params)})"

    # --- Support & Moments ---

    @property
    def support(self) -> Tuple[float, float]:
        if self.family == Family.BETA:
            return 0.0, 1.0
        if self.family == Family.UNIFORM:
            return self.params[0], self.params[1]
        if self.family == Family.EXPONENTIAL:
            return 0.0, math.inf
        if self.family == Family.PARETO:
            return self.params[1], math.inf
        return -math.inf, math.inf

    @property
    def is_bounded(self) -> bool:
        lo, hi = self.support
        return math.isfinite(lo) and math.isfinite(hi)

    def mean(self) -> Optional[float]:
        """Mean, or None when undefined (Pareto with alpha <= 1, Student with df <= 1)."""
        value = float(self._law.mean())
        return value if math.isfinite(value) else None

    def variance(self) -> Optional[float]:
        value = float(self._law.var())
        return value if math.isfinite(value) else None

    # --- Distribution Functions ---

    def cdf(self, x: ArrayLike) -> ArrayLike:
        """F(x); total over the reals (0 below the support, 1 above)."""
        values = np.clip(self._law.cdf(x), 0.0, 1.0)
        return float(values) if np.ndim(values) == 0 else values

    def density(self, x: ArrayLike) -> ArrayLike:
        values = self._law.pdf(x)
        return float(values) if np.ndim(values) == 0 else values

    def quantile(self, p: ArrayLike) -> ArrayLike:
        """
        Generalized inverse of the cdf.
        Bounded supports accept p in [0, 1] (endpoints clamp to the support);
        unbounded supports require p in (0, 1).
        """
        p_arr = np.asarray(p, dtype=float)
        if self.is_bounded:
            bad = ~((p_arr >= 0.0) & (p_arr <= 1.0))
        else:
            bad = ~((p_arr > 0.0) & (p_arr < 1.0))
        if np.any(bad):
            offending = p_arr[bad].flat[0] if p_arr.ndim else float(p_arr)
            domain = "[0, 1]" if self.is_bounded else "(0, 1)"
            raise QuantileDomainError(
                f"probability {offending!r} outside {domain} for {self.label()}"
            )
        values = self._law.ppf(p_arr)
        if self.is_bounded:
            lo, hi = self.support
            values = np.clip(values, lo, hi)
        return float(values) if np.ndim(values) == 0 else values

    def sample(self, u: ArrayLike) -> ArrayLike:
        """Inverse-CDF transform of uniforms; identical to quantile(u)."""
        return self.quantile(u)
