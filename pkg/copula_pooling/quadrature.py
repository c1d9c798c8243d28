import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from metrics import get_metrics_tracker

logger = logging.getLogger("Quadrature")

# --- Constants & Configuration ---
DEFAULT_TOLERANCE = 1e-11
MIN_LEVEL = 3        # h = 1/16: 113 nodes, never accept a coarser estimate
MAX_LEVEL = 10       # h = 1/2048: ~14k nodes
SPAN = 3.5           # |s| <= SPAN; weights beyond are below 1e-20
ENDPOINT_CLAMP = 1e-12

class NumericalError(RuntimeError):
    """Base class for numeric failures (CLI exit code 2)."""
    pass

class QuadratureError(NumericalError):
    """Raised when successive quadrature estimates never agree to the requested tolerance."""

    def __init__(self, message: str, achieved: float, requested: float):
        super().__init__(f"{message} (achieved {achieved:.3e}, requested {requested:.3e})")
        self.achieved = achieved
        self.requested = requested

class BracketError(NumericalError):
    """Raised when a root cannot be bracketed or refined."""

    def __init__(self, message: str, bracket: Tuple[float, float], values: Tuple[float, float]):
        super().__init__(
            f"{message}: bracket [{bracket[0]!r}, {bracket[1]!r}] with residuals [{values[0]!r}, {values[1]!r}]"
        )
        self.bracket = bracket
        self.values = values

@dataclass
class QuadratureResult:
    value: float
    error: float
    evaluations: int

def _nodes(level: int, half: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Nodes added at `level` of the double-exponential rule on [-1, 1] scaled by `half`.
    Returns (offset from left end, offset from right end, weight) so that callers
    never lose precision subtracting from an endpoint.
    """
    h = 0.5 ** (level + 1)
    count = int(math.ceil(SPAN / h))
    k = np.arange(-count, count + 1)
    if level > 0:
        k = k[k % 2 != 0]
    s = k * h
    y = 0.5 * math.pi * np.sinh(s)
    e = np.exp(-2.0 * np.abs(y))
    gap = half * 2.0 * e / (1.0 + e)          # distance to the nearer endpoint
    from_left = np.where(y < 0, gap, 2.0 * half - gap)
    from_right = np.where(y > 0, gap, 2.0 * half - gap)
    weight = h * half * 0.5 * math.pi * np.cosh(s) * 4.0 * e / (1.0 + e) ** 2
    return from_left, from_right, weight

def tanh_sinh(
    func: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    tol: float = DEFAULT_TOLERANCE,
    max_level: int = MAX_LEVEL,
) -> QuadratureResult:
    """
    Integrates a vectorised `func` over [a, b] with the double-exponential
    (tanh-sinh) substitution, halving the step until two successive estimates
    agree to `tol`. Previous levels are reused, so each halving only evaluates
    the new odd nodes.

    The substitution clusters nodes at both ends, which absorbs integrable
    endpoint singularities (e.g. beta quantiles behaving like u^(1/a) at 0).
    The integrand should be smooth in the open interval; split at kinks first.
    """
    if not b > a:
        return QuadratureResult(0.0, 0.0, 0)

    half = 0.5 * (b - a)
    estimate: Optional[float] = None
    evaluations = 0
    diff = math.inf

    for level in range(max_level + 1):
        from_left, from_right, weight = _nodes(level, half)
        x = np.where(from_left <= from_right, a + from_left, b - from_right)
        x = np.clip(x, a, b)
        contribution = float(np.dot(weight, func(x)))
        evaluations += x.size

        refined = contribution if estimate is None else 0.5 * estimate + contribution
        if estimate is not None:
            diff = abs(refined - estimate)
            if level >= MIN_LEVEL and diff <= tol:
                get_metrics_tracker().record_quadrature(evaluations)
                return QuadratureResult(refined, diff, evaluations)
        estimate = refined

    get_metrics_tracker().record_quadrature(evaluations, converged=False)
    raise QuadratureError(f"tanh-sinh on [{a!r}, {b!r}] did not converge", achieved=diff, requested=tol)
