import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
from scipy import optimize, stats

from marginals import MarginalDistribution, QuantileDomainError
from copulas import Copula, CopulaFamily, CopulaSpec, SampleSizeError, sample_uniforms
from quadrature import BracketError, NumericalError, tanh_sinh, ENDPOINT_CLAMP
from streams import OPEN_EPS

logger = logging.getLogger("SumDistribution")

ArrayLike = Union[float, np.ndarray]

# --- Constants & Configuration ---
SUM_CDF_TOLERANCE = 1e-11
QUANTILE_TOLERANCE = 1e-9
ROOT_XTOL = 1e-14
MAX_BRACKET_EXPANSIONS = 60
MIN_MC_SAMPLES = 1000
MC_CONFIDENCE = 0.99
LEVEL_SET_GRID = 4097     # countermonotone level-set scan
UNBOUNDED_EDGE = 1e-15    # probability edge used when a marginal has unbounded support
QUANTILE_MEMO_SIZE = 1024  # per model; a default scan plus a 99-point curve fits

class ModelSpecError(ValueError):
    """Raised when a model JSON document is malformed."""
    pass

class EstimateMethod(str, Enum):
    QUADRATURE = "quadrature"
    MONTE_CARLO = "monte_carlo"

@dataclass
class SumQuantileEstimate:
    point: float
    ci_halfwidth: float = 0.0
    method: EstimateMethod = EstimateMethod.QUADRATURE
    n_samples: Optional[int] = None
    ci_lower: Optional[float] = None
    ci_upper: Optional[float] = None

    def contains(self, value: float) -> bool:
        """True if value lies in the confidence interval (MC) or equals the point (quadrature)."""
        if self.ci_lower is None or self.ci_upper is None:
            return value == self.point
        return self.ci_lower <= value <= self.ci_upper

    def to_dict(self) -> Dict[str, Any]:
        return {
            "point": self.point,
            "ci_halfwidth": self.ci_halfwidth,
            "method": self.method.value,
            "n_samples": self.n_samples,
            "ci_lower": self.ci_lower,
            "ci_upper": self.ci_upper,
        }

def _check_t(t: float):
    if not (isinstance(t, (int, float)) and 0.0 < t < 1.0):
        raise QuantileDomainError(f"margin ratio t={t!r} outside (0, 1)")

@dataclass(frozen=True)
class JointDemandModel:
    """
    Joint law of (D1, D2) by Sklar composition C(F1(x1), F2(x2)).

    Quadrature quantiles of D1 + D2 are memoised per model so that curves and
    threshold scans evaluating the same t share the work.
    """
    marginal1: MarginalDistribution
    marginal2: MarginalDistribution
    copula: Copula
    _memo: "OrderedDict[Tuple[float, float], SumQuantileEstimate]" = field(
        default_factory=OrderedDict, init=False, repr=False, compare=False, hash=False
    )

    # --- Spec ---

    @classmethod
    def from_spec(cls, spec: Dict[str, Any]) -> "JointDemandModel":
        """Parses {"m1": marginal, "m2": marginal, "copula": copula spec}."""
        if not isinstance(spec, dict):
            raise ModelSpecError(f"model spec must be a JSON object, got {type(spec).__name__}")
        missing = [k for k in ("m1", "m2", "copula") if k not in spec]
        if missing:
            raise ModelSpecError(f"model spec missing keys {missing}")
        return cls(
            MarginalDistribution.from_spec(spec["m1"]),
            MarginalDistribution.from_spec(spec["m2"]),
            CopulaSpec.from_dict(spec["copula"]).build(),
        )

    def to_spec(self) -> Dict[str, Any]:
        return {"m1": self.marginal1.to_spec(), "m2": self.marginal2.to_spec(), "copula": self.copula.to_dict()}

    def label(self) -> str:
        return f"{self.marginal1.label()} x {self.marginal2.label()} | {self.copula.label()}"

    # --- Joint law ---

    def joint_cdf(self, x1: ArrayLike, x2: ArrayLike) -> ArrayLike:
        return self.copula.cdf(self.marginal1.cdf(x1), self.marginal2.cdf(x2))

    def joint_density(self, x1: ArrayLike, x2: ArrayLike) -> ArrayLike:
        """c(F1(x1), F2(x2)) f1(x1) f2(x2); zero outside the supports."""
        f1 = np.asarray(self.marginal1.density(x1))
        f2 = np.asarray(self.marginal2.density(x2))
        c = np.asarray(self.copula.density(self.marginal1.cdf(x1), self.marginal2.cdf(x2)))
        out = np.where((f1 > 0) & (f2 > 0), c * f1 * f2, 0.0)
        return float(out) if out.ndim == 0 else out

    # --- Distribution of the sum ---

    def _edges(self) -> Tuple[float, float]:
        if self.marginal1.is_bounded and self.marginal2.is_bounded:
            return 0.0, 1.0
        return UNBOUNDED_EDGE, 1.0 - UNBOUNDED_EDGE

    def sum_cdf(self, x: ArrayLike) -> ArrayLike:
        """P(D1 + D2 <= x), vectorised over x."""
        x_arr = np.asarray(x, dtype=float)
        out = np.vectorize(self._sum_cdf_scalar, otypes=[float])(x_arr)
        return float(out) if out.ndim == 0 else out

    def _sum_cdf_scalar(self, x: float) -> float:
        if math.isnan(x):
            return math.nan
        family = self.copula.family
        if family == CopulaFamily.COMONOTONE:
            return self._comonotone_cdf(x)
        if family == CopulaFamily.COUNTERMONOTONE:
            return self._countermonotone_cdf(x)

        m1, m2 = self.marginal1, self.marginal2
        lo2, hi2 = m2.support
        # u below a: D2 <= x - q1(u) surely; u above b: surely not
        a = float(m1.cdf(x - hi2)) if math.isfinite(hi2) else 0.0
        b = float(m1.cdf(x - lo2)) if math.isfinite(lo2) else 1.0
        lower = max(a, ENDPOINT_CLAMP)
        upper = min(b, 1.0 - ENDPOINT_CLAMP)
        if not upper > lower:
            return min(max(a, 0.0), 1.0)

        copula = self.copula

        def integrand(u: np.ndarray) -> np.ndarray:
            v = m2.cdf(x - m1.quantile(u))
            return copula.conditional_cdf(v, u)

        result = tanh_sinh(integrand, lower, upper, tol=SUM_CDF_TOLERANCE)
        return min(max(a + result.value, 0.0), 1.0)

    def _level_function(self, counter: bool):
        m1, m2 = self.marginal1, self.marginal2
        if counter:
            return lambda u: m1.quantile(u) + m2.quantile(1.0 - u)
        return lambda u: m1.quantile(u) + m2.quantile(u)

    def _comonotone_cdf(self, x: float) -> float:
        # D1 + D2 = g(U) with g nondecreasing: P(g(U) <= x) = sup{u : g(u) <= x}
        g = self._level_function(counter=False)
        u_lo, u_hi = self._edges()
        if g(u_lo) > x:
            return 0.0
        if g(u_hi) <= x:
            return 1.0
        return float(optimize.brentq(lambda u: g(u) - x, u_lo, u_hi, xtol=1e-16, maxiter=500))

    def _countermonotone_cdf(self, x: float) -> float:
        # Lebesgue measure of {u : q1(u) + q2(1 - u) <= x}
        g = self._level_function(counter=True)
        u_lo, u_hi = self._edges()
        slack = 1e-12 * max(1.0, abs(x))

        def phi(u):
            return g(u) - x - slack

        grid = np.linspace(u_lo, u_hi, LEVEL_SET_GRID)
        values = phi(grid)
        below = values <= 0
        breaks = [u_lo]
        for i in np.nonzero(below[1:] != below[:-1])[0]:
            breaks.append(float(optimize.brentq(phi, grid[i], grid[i + 1], xtol=1e-16, maxiter=500)))
        breaks.append(u_hi)

        measure = 0.0
        for left, right in zip(breaks[:-1], breaks[1:]):
            if right > left and phi(0.5 * (left + right)) <= 0:
                measure += right - left
        return min(max(measure, 0.0), 1.0)

    def _bracket(self, t: float) -> Tuple[float, float]:
        m1, m2 = self.marginal1, self.marginal2
        lo1, hi1 = m1.support
        lo2, hi2 = m2.support
        lo_sum, hi_sum = lo1 + lo2, hi1 + hi2
        if math.isfinite(lo_sum) and math.isfinite(hi_sum):
            return lo_sum, hi_sum

        center = float(m1.quantile(t)) + float(m2.quantile(t))
        width = max(1.0, abs(center))
        lo = lo_sum if math.isfinite(lo_sum) else center - width
        hi = hi_sum if math.isfinite(hi_sum) else center + width
        for _ in range(MAX_BRACKET_EXPANSIONS):
            f_lo = self._sum_cdf_scalar(lo) - t
            f_hi = self._sum_cdf_scalar(hi) - t
            if f_lo < 0 <= f_hi:
                return lo, hi
            width *= 2.0
            if f_lo >= 0 and not math.isfinite(lo_sum):
                lo = center - width
            if f_hi < 0 and not math.isfinite(hi_sum):
                hi = center + width
            logger.debug(f"Expanding bracket for t={t} to [{lo}, {hi}]")
        raise BracketError(f"no sign change for sum quantile at t={t}", (lo, hi), (f_lo, f_hi))

    def sum_quantile(self, t: float, tol: float = QUANTILE_TOLERANCE) -> SumQuantileEstimate:
        """
        Generalized inverse of the sum cdf at t by Brent's method.
        The residual |F(x) - t| must be within tol unless x is a jump point.
        """
        _check_t(t)
        key = (float(t), float(tol))
        cached = self._memo.get(key)
        if cached is not None:
            self._memo.move_to_end(key)
            return cached

        if self.copula.family == CopulaFamily.COMONOTONE:
            # quantiles of comonotone sums are additive
            point = float(self.marginal1.quantile(t)) + float(self.marginal2.quantile(t))
            return self._remember(key, SumQuantileEstimate(point=point))

        lo, hi = self._bracket(t)

        def residual(x: float) -> float:
            return self._sum_cdf_scalar(x) - t

        f_lo, f_hi = residual(lo), residual(hi)
        if not (f_lo <= 0 <= f_hi):
            raise BracketError(f"sum cdf does not straddle t={t}", (lo, hi), (f_lo, f_hi))
        try:
            point = float(optimize.brentq(residual, lo, hi, xtol=ROOT_XTOL, rtol=4 * np.finfo(float).eps, maxiter=500))
        except (RuntimeError, ValueError) as e:
            if isinstance(e, NumericalError):
                raise
            raise BracketError(f"root refinement failed at t={t}: {e}", (lo, hi), (f_lo, f_hi))

        gap = abs(residual(point))
        if gap > tol:
            step = 1e-9 * max(1.0, abs(point))
            if not (residual(point - step) < 0 <= residual(point + step)):
                raise BracketError(
                    f"sum quantile at t={t} left residual {gap:.3e} > {tol:.1e}", (lo, hi), (f_lo, f_hi)
                )
            logger.debug(f"t={t} falls on a jump of the sum cdf at x={point}")

        return self._remember(key, SumQuantileEstimate(point=point))

    def _remember(self, key: Tuple[float, float], estimate: SumQuantileEstimate) -> SumQuantileEstimate:
        self._memo[key] = estimate
        if len(self._memo) > QUANTILE_MEMO_SIZE:
            self._memo.popitem(last=False)
        return estimate

    # --- Monte Carlo ---

    def sample_demands(self, n: int, seed: int, start: int = 0) -> np.ndarray:
        """n demand pairs (F1^-1(U), F2^-1(V)); pair i depends only on (seed, start + i)."""
        pairs = sample_uniforms(self.copula, n, seed, start)
        pairs = np.clip(pairs, OPEN_EPS, 1.0 - OPEN_EPS)
        d1 = np.asarray(self.marginal1.sample(pairs[:, 0]))
        d2 = np.asarray(self.marginal2.sample(pairs[:, 1]))
        return np.column_stack([d1, d2])

    def sample_sums(self, n: int, seed: int) -> np.ndarray:
        """Sorted sampled totals D1 + D2."""
        return np.sort(self.sample_demands(n, seed).sum(axis=1))

    def sum_quantile_mc(self, t: float, n: int, seed: int) -> SumQuantileEstimate:
        if n < MIN_MC_SAMPLES:
            raise SampleSizeError(f"monte carlo quantile needs n >= {MIN_MC_SAMPLES}, got {n}")
        _check_t(t)
        return empirical_quantile(self.sample_sums(n, seed), t)

def empirical_quantile(sorted_sums: np.ndarray, t: float) -> SumQuantileEstimate:
    """
    inf{x : F_n(x) >= t} over a sorted sample, with the distribution-free 99%
    interval [X_(l), X_(u)] whose ranks come from Binomial(n, t).
    """
    n = sorted_sums.size
    k = max(1, min(n, math.ceil(round(n * t, 6))))
    point = float(sorted_sums[k - 1])

    alpha = 1.0 - MC_CONFIDENCE
    lower_rank = int(max(1, stats.binom.ppf(alpha / 2, n, t)))
    upper_rank = int(min(n, stats.binom.ppf(1 - alpha / 2, n, t) + 1))
    ci_lower = float(sorted_sums[lower_rank - 1])
    ci_upper = float(sorted_sums[upper_rank - 1])
    return SumQuantileEstimate(
        point=point,
        ci_halfwidth=max(point - ci_lower, ci_upper - point),
        method=EstimateMethod.MONTE_CARLO,
        n_samples=n,
        ci_lower=ci_lower,
        ci_upper=ci_upper,
    )
