import logging
import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate, special, stats

from marginals import MarginalDistribution
from copulas import SampleSizeError
from joint_demand import MIN_MC_SAMPLES, JointDemandModel, empirical_quantile
from models import CurveMethod, PoolingCurve, ProfitComparison, ThresholdReport
from quadrature import NumericalError

logger = logging.getLogger("PoolingAnalyzer")

# --- Constants & Configuration ---
DEFAULT_SCAN_POINTS = 199
DEFAULT_ZERO_TOL = 1e-5
ROOT_RESOLUTION = 1e-6
MIN_SCAN_POINTS = 9
PLATEAU_MIN_POINTS = 3   # zero runs spanning more than one grid cell
T_CONSISTENCY = 1e-12

class ProfitParamsError(ValueError):
    """Raised when price/cost/margin ratio are missing or inconsistent."""
    pass

class NegativeOrderError(ValueError):
    """Raised when an order quantity is negative."""
    pass

class ScanParameterError(ValueError):
    """Raised when a threshold scan is configured with too few points or a bad tolerance."""
    pass

@dataclass
class ProfitParams:
    """
    Price p, cost c and margin ratio t = (p - c)/p.
    Either (price, cost) with t recomputed, or a bare t in (0, 1).
    """
    price: Optional[float] = None
    cost: Optional[float] = None
    t: Optional[float] = None

    def __post_init__(self):
        if self.price is not None or self.cost is not None:
            if self.price is None or self.cost is None:
                raise ProfitParamsError("price and cost must be given together")
            if not self.price > 0:
                raise ProfitParamsError(f"price must be > 0, got {self.price}")
            if not 0 < self.cost < self.price:
                raise ProfitParamsError(f"cost must satisfy 0 < c < p, got c={self.cost}, p={self.price}")
            derived = (self.price - self.cost) / self.price
            if self.t is not None and abs(self.t - derived) > T_CONSISTENCY:
                raise ProfitParamsError(f"t={self.t} inconsistent with (p - c)/p = {derived}")
            self.t = derived
        elif self.t is None:
            raise ProfitParamsError("need price and cost or a margin ratio t")
        elif not 0 < self.t < 1:
            raise ProfitParamsError(f"margin ratio must lie in (0, 1), got {self.t}")

    @property
    def has_prices(self) -> bool:
        return self.price is not None

    def _require_prices(self):
        if not self.has_prices:
            raise ProfitParamsError("expected profit needs price and cost, only t was given")

# --- Newsvendor ---

def newsvendor_quantile(dist: MarginalDistribution, pp: ProfitParams) -> float:
    return float(dist.quantile(pp.t))

def expected_min(dist: MarginalDistribution, q: float) -> float:
    """E[min(D, Q)] = Q - int_lo^Q F(x) dx."""
    lo, _ = dist.support
    if q <= lo:
        return q
    area, _ = integrate.quad(dist.cdf, lo, q, epsabs=1e-12, epsrel=1e-10, limit=200)
    return q - area

def expected_profit(dist: MarginalDistribution, q: float, pp: ProfitParams) -> float:
    """p E[min(D, Q)] - c Q."""
    pp._require_prices()
    if q < 0:
        raise NegativeOrderError(f"order quantity must be >= 0, got {q}")
    return pp.price * expected_min(dist, q) - pp.cost * q

# --- Pooling effect ---

def dedicated_total(m: JointDemandModel, t: float) -> float:
    return float(m.marginal1.quantile(t)) + float(m.marginal2.quantile(t))

def pooling_effect(m: JointDemandModel, t: float) -> float:
    """P(t) = F_{1+2}^-1(t) - F1^-1(t) - F2^-1(t); positive means pooling needs more stock."""
    return m.sum_quantile(t).point - dedicated_total(m, t)

def _effect_pct(effect: float, dedicated: float) -> float:
    return 100.0 * effect / dedicated if dedicated > 0 else math.nan

def pooling_curve(
    m: JointDemandModel,
    t_grid: Sequence[float],
    method: CurveMethod = CurveMethod.QUADRATURE,
    n_samples: int = 100_000,
    seed: int = 0,
    sums: Optional[np.ndarray] = None,
) -> PoolingCurve:
    """
    Dedicated and pooled levels over t_grid.
    Monte Carlo draws one common sample for the whole grid (or uses the sorted `sums` given);
    failed points are recorded in `missing`.
    """
    method = CurveMethod(method)
    if method == CurveMethod.MONTE_CARLO and sums is None:
        if n_samples < MIN_MC_SAMPLES:
            raise SampleSizeError(f"monte carlo curve needs n_samples >= {MIN_MC_SAMPLES}, got {n_samples}")
        sums = m.sample_sums(n_samples, seed)
    elif method == CurveMethod.QUADRATURE:
        sums = None

    n = len(t_grid)
    dedicated = [math.nan] * n
    pooled = [math.nan] * n
    effect = [math.nan] * n
    effect_pct = [math.nan] * n
    ci = [math.nan] * n
    missing = {}

    for i, t in enumerate(t_grid):
        try:
            d = dedicated_total(m, t)
            estimate = empirical_quantile(sums, t) if sums is not None else m.sum_quantile(t)
        except (NumericalError, ValueError) as e:
            missing[i] = f"{type(e).__name__}: {e}"
            logger.warning(f"Curve point t={t} failed: {e}")
            continue
        dedicated[i] = d
        pooled[i] = estimate.point
        effect[i] = estimate.point - d
        effect_pct[i] = _effect_pct(effect[i], d)
        ci[i] = estimate.ci_halfwidth

    return PoolingCurve(
        t_grid=[float(t) for t in t_grid],
        dedicated=dedicated,
        pooled=pooled,
        effect=effect,
        effect_pct=effect_pct,
        ci_halfwidth=ci,
        method=method,
        missing=missing,
    )

# --- Threshold detection ---

def _classify(value: float, zero_tol: float) -> str:
    if value > zero_tol:
        return "+"
    if value < -zero_tol:
        return "-"
    return "0"

def _runs(signs: List[str]) -> List[List]:
    runs: List[List] = []
    for i, s in enumerate(signs):
        if runs and runs[-1][0] == s:
            runs[-1][2] = i
        else:
            runs.append([s, i, i])
    return runs

def _bisect_root(effect_fn: Callable[[float], float], lo: float, hi: float, lo_positive: bool) -> float:
    while hi - lo > ROOT_RESOLUTION:
        mid = 0.5 * (lo + hi)
        if (effect_fn(mid) > 0) == lo_positive:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)

def find_thresholds(
    m: JointDemandModel,
    scan_points: int = DEFAULT_SCAN_POINTS,
    zero_tol: float = DEFAULT_ZERO_TOL,
    effect_fn: Optional[Callable[[float], float]] = None,
) -> ThresholdReport:
    """
    Scans t_i = i/(scan_points+1), classifies P(t_i) as +, - or 0 (|P| <= zero_tol)
    and bisects every sign change to 1e-6.

    Zero runs of three or more points are plateaus: reported as intervals and as
    "0" in the sign pattern, never as roots. Shorter zero runs are transitional
    and only widen the bracket of the root they sit on.
    """
    if scan_points < MIN_SCAN_POINTS:
        raise ScanParameterError(f"scan_points must be >= {MIN_SCAN_POINTS}, got {scan_points}")
    if not zero_tol > 0:
        raise ScanParameterError(f"zero_tol must be > 0, got {zero_tol}")
    if effect_fn is None:
        def effect_fn(t: float) -> float:
            return pooling_effect(m, t)

    ts = [i / (scan_points + 1) for i in range(1, scan_points + 1)]
    signs = [_classify(effect_fn(t), zero_tol) for t in ts]

    # Drop transitional zeros, then merge neighbours that now share a sign
    kept: List[List] = []
    for run in _runs(signs):
        if run[0] == "0" and run[2] - run[1] + 1 < PLATEAU_MIN_POINTS:
            continue
        if kept and kept[-1][0] == run[0]:
            kept[-1][2] = run[2]
        else:
            kept.append(list(run))

    report = ThresholdReport(sign_pattern="".join(r[0] for r in kept) or "0")
    report.plateaus = [(ts[r[1]], ts[r[2]]) for r in kept if r[0] == "0"]

    # Region boundaries: a root between opposite signs, the plateau edge otherwise
    edges: List[Tuple[float, float]] = [(ts[r[1]], ts[r[2]]) for r in kept]
    for k in range(len(kept) - 1):
        left, right = kept[k], kept[k + 1]
        t_lo, t_hi = ts[left[2]], ts[right[1]]
        if left[0] != "0" and right[0] != "0":
            root = _bisect_root(effect_fn, t_lo, t_hi, lo_positive=left[0] == "+")
            report.roots.append(root)
            report.brackets.append((t_lo, t_hi))
            edges[k] = (edges[k][0], root)
            edges[k + 1] = (root, edges[k + 1][1])
        elif left[0] == "0":
            edges[k + 1] = (t_lo, edges[k + 1][1])
        else:
            edges[k] = (edges[k][0], t_hi)

    report.regions = [(r[0], lo, hi) for r, (lo, hi) in zip(kept, edges)]
    report.unique = len(report.roots) == 1
    logger.debug(f"Threshold scan of {m.label()}: pattern={report.sign_pattern} roots={report.roots}")
    return report

# --- Closed forms ---

def normal_pooled_closed_form(mu1: float, sigma1: float, mu2: float, sigma2: float, rho: float, t: float) -> float:
    """Pooled level for bivariate normal demand: mu1 + mu2 + sd(D1 + D2) Phi^-1(t)."""
    sd = math.sqrt(sigma1 ** 2 + sigma2 ** 2 + 2.0 * rho * sigma1 * sigma2)
    return mu1 + mu2 + sd * float(special.ndtri(t))

def student_pooled_closed_form(
    mu1: float, sigma1: float, mu2: float, sigma2: float, rho: float, t: float, df: float
) -> float:
    """Bivariate Student-t analogue: the sum is Student-t with the combined scale."""
    scale = math.sqrt(sigma1 ** 2 + sigma2 ** 2 + 2.0 * rho * sigma1 * sigma2)
    return mu1 + mu2 + scale * float(stats.t.ppf(t, df))

# --- Profit ---

def profit_comparison(m: JointDemandModel, pp: ProfitParams, n: int = 100_000, seed: int = 0) -> ProfitComparison:
    """
    Pooled expected profit (MC over sampled totals, at the quadrature pooled level)
    against the sum of the two dedicated optimal profits.
    """
    pp._require_prices()
    q_pool = m.sum_quantile(pp.t).point
    if q_pool < 0:
        raise NegativeOrderError(f"pooled order quantity {q_pool} is negative")
    q1 = newsvendor_quantile(m.marginal1, pp)
    q2 = newsvendor_quantile(m.marginal2, pp)

    sums = m.sample_sums(n, seed)
    profits = pp.price * np.minimum(sums, q_pool) - pp.cost * q_pool
    pooled = float(np.mean(profits))
    stderr = float(np.std(profits, ddof=1) / math.sqrt(n))
    dedicated = expected_profit(m.marginal1, q1, pp) + expected_profit(m.marginal2, q2, pp)

    return ProfitComparison(
        pooled_quantity=q_pool,
        dedicated_quantity=q1 + q2,
        pooled_profit=pooled,
        pooled_stderr=stderr,
        dedicated_profit=dedicated,
        gain=pooled - dedicated,
        n_samples=n,
    )
