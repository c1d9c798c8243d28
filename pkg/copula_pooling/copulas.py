import logging
import math
from dataclasses import dataclass, asdict
from enum import Enum
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
from scipy import integrate, optimize, special, stats

from streams import uniform_pairs

logger = logging.getLogger("CopulaEngine")

ArrayLike = Union[float, np.ndarray]

# --- Constants & Configuration ---
U_TRIM = 1e-15               # smooth families evaluate h at u in [U_TRIM, 1 - U_TRIM]
OWENS_NUDGE = 1e-15          # Owen's T formula is singular at h = 0 or k = 0
FRANK_SERIES_CUTOFF = 1e-4   # |theta| below which tau uses theta/9 - theta^3/900
CALIBRATION_TOL = 1e-8
CALIBRATION_MAXITER = 200
BISECTION_STEPS = 64         # 2^-64 < 1e-12 on [0, 1]
MIN_NUMERIC_SAMPLES = 1000

class CopulaParameterError(ValueError):
    """Raised when a copula parameter is invalid for its family (at construction)."""
    pass

class CalibrationRangeError(ValueError):
    """Raised when a Kendall's tau target is not attainable by a family."""
    pass

class SampleSizeError(ValueError):
    """Raised when too few pairs are supplied for a tau estimate."""
    pass

class CopulaFamily(str, Enum):
    INDEPENDENCE = "independence"
    GUMBEL = "gumbel"
    CLAYTON = "clayton"
    FRANK = "frank"
    GAUSSIAN = "gaussian"
    STUDENT = "student"
    COMONOTONE = "comonotone"
    COUNTERMONOTONE = "countermonotone"

PARAMETERLESS = {CopulaFamily.INDEPENDENCE, CopulaFamily.COMONOTONE, CopulaFamily.COUNTERMONOTONE}
ELLIPTICAL = {CopulaFamily.GAUSSIAN, CopulaFamily.STUDENT}
SINGULAR = {CopulaFamily.COMONOTONE, CopulaFamily.COUNTERMONOTONE}

# Attainable Kendall's tau per family: (lo, hi, lo_inclusive, hi_inclusive)
TAU_RANGES: Dict[CopulaFamily, Tuple[float, float, bool, bool]] = {
    CopulaFamily.INDEPENDENCE: (0.0, 0.0, True, True),
    CopulaFamily.GUMBEL: (0.0, 1.0, True, False),
    CopulaFamily.CLAYTON: (0.0, 1.0, True, False),
    CopulaFamily.FRANK: (-1.0, 1.0, False, False),
    CopulaFamily.GAUSSIAN: (-1.0, 1.0, False, False),
    CopulaFamily.STUDENT: (-1.0, 1.0, False, False),
    CopulaFamily.COMONOTONE: (1.0, 1.0, True, True),
    CopulaFamily.COUNTERMONOTONE: (-1.0, -1.0, True, True),
}

def parse_family(name: Any) -> CopulaFamily:
    if isinstance(name, CopulaFamily):
        return name
    try:
        return CopulaFamily(str(name).lower())
    except ValueError:
        known = ", ".join(f.value for f in CopulaFamily)
        raise CopulaParameterError(f"unknown copula family {name!r} (known: {known})")

def describe_tau_range(family: CopulaFamily) -> str:
    lo, hi, lo_inc, hi_inc = TAU_RANGES[family]
    if lo == hi:
        return f"{{{lo:g}}}"
    return f"{'[' if lo_inc else '('}{lo:g}, {hi:g}{']' if hi_inc else ')'}"

def tau_in_range(family: CopulaFamily, tau: float) -> bool:
    if tau == 0.0:
        return True  # calibrates to independence for every family
    lo, hi, lo_inc, hi_inc = TAU_RANGES[family]
    above = tau >= lo if lo_inc else tau > lo
    below = tau <= hi if hi_inc else tau < hi
    return math.isfinite(tau) and above and below

# --- Alternative parameter conventions ---

def clayton_theta_from_exponent(theta_exponent: float) -> float:
    """Exponent form (1 - n + sum u^(-1/theta'))^(-theta') to the standard theta = 1/theta'."""
    if not theta_exponent > 0:
        raise CopulaParameterError(f"exponent-form clayton parameter must be > 0, got {theta_exponent}")
    return 1.0 / theta_exponent

def clayton_theta_to_exponent(theta: float) -> float:
    if not theta > 0:
        raise CopulaParameterError(f"clayton theta must be > 0, got {theta}")
    return 1.0 / theta

def frank_theta_from_alpha(alpha: float) -> float:
    """Log-base form log_alpha(...) to the natural parameter: alpha = e^(-theta)."""
    if not (alpha > 0 and alpha != 1 and math.isfinite(alpha)):
        raise CopulaParameterError(f"frank base alpha must be > 0 and != 1, got {alpha}")
    return -math.log(alpha)

def frank_alpha_from_theta(theta: float) -> float:
    return math.exp(-theta)

# --- Kendall's tau maps ---

def _debye1(theta: float) -> float:
    value, _ = integrate.quad(lambda t: 1.0 / special.exprel(t), 0.0, theta, epsabs=1e-14, epsrel=1e-13, limit=200)
    return value / theta

def _frank_tau(theta: float) -> float:
    if abs(theta) < FRANK_SERIES_CUTOFF:
        return theta / 9.0 - theta ** 3 / 900.0
    return 1.0 - 4.0 / theta * (1.0 - _debye1(theta))

def tau_from_theta(family: CopulaFamily, theta: Optional[float]) -> float:
    if family == CopulaFamily.INDEPENDENCE:
        return 0.0
    if family == CopulaFamily.COMONOTONE:
        return 1.0
    if family == CopulaFamily.COUNTERMONOTONE:
        return -1.0
    assert theta is not None
    if family == CopulaFamily.GUMBEL:
        return 1.0 - 1.0 / theta
    if family == CopulaFamily.CLAYTON:
        return theta / (theta + 2.0)
    if family == CopulaFamily.FRANK:
        return _frank_tau(theta)
    return 2.0 / math.pi * math.asin(theta)

# --- Copula ---

@dataclass(frozen=True)
class Copula:
    """
    Bivariate copula C(u, v) with its conditional cdf h(v|u) = dC/du.

    `theta` is the family parameter (the correlation rho for gaussian/student,
    standard form for clayton, natural form for frank) and `df` the student
    degrees of freedom. Parameters are validated at construction so evaluation
    never raises on them. Every evaluation is vectorised over numpy arrays.
    """
    family: CopulaFamily
    theta: Optional[float] = None
    df: Optional[float] = None

    def __post_init__(self):
        family = parse_family(self.family)
        object.__setattr__(self, "family", family)
        theta, df = self.theta, self.df

        if family in PARAMETERLESS:
            if theta is not None:
                raise CopulaParameterError(f"{family.value} copula takes no parameter, got theta={theta}")
        else:
            if theta is None:
                raise CopulaParameterError(f"{family.value} copula needs a parameter")
            theta = float(theta)
            if not math.isfinite(theta):
                raise CopulaParameterError(f"{family.value} parameter must be finite, got {theta}")
            if family == CopulaFamily.GUMBEL and theta < 1.0:
                raise CopulaParameterError(f"gumbel theta must be >= 1, got {theta}")
            if family == CopulaFamily.CLAYTON and theta <= 0.0:
                raise CopulaParameterError(f"clayton theta must be > 0, got {theta}")
            if family == CopulaFamily.FRANK and theta == 0.0:
                raise CopulaParameterError("frank theta must be != 0 (use independence)")
            if family in ELLIPTICAL and not -1.0 < theta < 1.0:
                raise CopulaParameterError(f"{family.value} rho must lie in (-1, 1), got {theta}")
            object.__setattr__(self, "theta", theta)

        if family == CopulaFamily.STUDENT:
            if df is None or not float(df) > 0 or not math.isfinite(float(df)):
                raise CopulaParameterError(f"student copula needs df > 0, got {df}")
            object.__setattr__(self, "df", float(df))
        elif df is not None:
            raise CopulaParameterError(f"df only applies to the student copula, got df={df} for {family.value}")

    # --- Constructors ---

    @classmethod
    def independence(cls) -> "Copula":
        return cls(CopulaFamily.INDEPENDENCE)

    @classmethod
    def comonotone(cls) -> "Copula":
        return cls(CopulaFamily.COMONOTONE)

    @classmethod
    def countermonotone(cls) -> "Copula":
        return cls(CopulaFamily.COUNTERMONOTONE)

    def label(self) -> str:
        if self.family in PARAMETERLESS:
            return self.family.value
        if self.family == CopulaFamily.STUDENT:
            return f"student(rho={self.theta:.6g},df={self.df:g})"
        return f"{self.family.value}({self.theta:.6g})"

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {"family": self.family.value}
        if self.theta is not None:
            data["theta"] = self.theta
        if self.df is not None:
            data["df"] = self.df
        return data

    # --- CDF ---

    def cdf(self, u: ArrayLike, v: ArrayLike) -> ArrayLike:
        """C(u, v), with C(u,0) = C(0,v) = 0, C(u,1) = u and C(1,v) = v enforced exactly."""
        u_arr, v_arr = np.broadcast_arrays(np.asarray(u, dtype=float), np.asarray(v, dtype=float))
        uc = np.clip(u_arr, 0.0, 1.0)
        vc = np.clip(v_arr, 0.0, 1.0)
        inner = (uc > 0) & (uc < 1) & (vc > 0) & (vc < 1)
        us = np.where(inner, uc, 0.5)
        vs = np.where(inner, vc, 0.5)

        with np.errstate(all="ignore"):
            core = self._cdf_interior(us, vs)
        core = np.clip(core, np.maximum(us + vs - 1.0, 0.0), np.minimum(us, vs))

        out = np.where(inner, core, np.where((uc <= 0) | (vc <= 0), 0.0, np.where(uc >= 1, vc, uc)))
        return float(out) if out.ndim == 0 else out

    def _cdf_interior(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        family, theta = self.family, self.theta
        if family == CopulaFamily.INDEPENDENCE:
            return u * v
        if family == CopulaFamily.COMONOTONE:
            return np.minimum(u, v)
        if family == CopulaFamily.COUNTERMONOTONE:
            return np.maximum(u + v - 1.0, 0.0)
        if family == CopulaFamily.GUMBEL:
            a = (-np.log(u)) ** theta + (-np.log(v)) ** theta
            return np.exp(-a ** (1.0 / theta))
        if family == CopulaFamily.CLAYTON:
            return np.exp(-self._clayton_log_s(u, v) / theta)
        if family == CopulaFamily.FRANK:
            ratio = np.expm1(-theta * u) * np.expm1(-theta * v) / np.expm1(-theta)
            return -np.log1p(ratio) / theta
        if family == CopulaFamily.GAUSSIAN:
            return _bivariate_normal_cdf(special.ndtri(u), special.ndtri(v), theta)
        return self._student_cdf(u, v)

    def _clayton_log_s(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """log(u^-theta + v^-theta - 1) without overflowing for large theta."""
        a = -self.theta * np.log(u)
        b = -self.theta * np.log(v)
        m = np.maximum(a, b)
        return m + np.log(np.exp(a - m) + np.exp(b - m) - np.exp(-m))

    def _student_cdf(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        # C(u, v) = int_0^u h(v|s) ds
        def one(ui: float, vi: float) -> float:
            value, _ = integrate.quad(
                lambda s: float(self.conditional_cdf(vi, s)), 0.0, ui, epsabs=1e-13, epsrel=1e-12, limit=200
            )
            return value
        return np.vectorize(one, otypes=[float])(u, v)

    # --- Conditional CDF ---

    def conditional_cdf(self, v: ArrayLike, given_u: ArrayLike) -> ArrayLike:
        """h(v|u) = dC(u, v)/du; nondecreasing in v with h(0|u) = 0 and h(1|u) = 1."""
        v_arr, u_arr = np.broadcast_arrays(np.asarray(v, dtype=float), np.asarray(given_u, dtype=float))
        vc = np.clip(v_arr, 0.0, 1.0)
        uc = np.clip(u_arr, 0.0, 1.0)

        family = self.family
        if family == CopulaFamily.COMONOTONE:
            out = (vc >= uc).astype(float)
        elif family == CopulaFamily.COUNTERMONOTONE:
            out = (vc >= 1.0 - uc).astype(float)
        else:
            us = np.clip(uc, U_TRIM, 1.0 - U_TRIM)
            inner = (vc > 0) & (vc < 1)
            vs = np.where(inner, vc, 0.5)
            with np.errstate(all="ignore"):
                core = np.clip(self._h_interior(vs, us), 0.0, 1.0)
            out = np.where(inner, core, np.where(vc <= 0, 0.0, 1.0))
        return float(out) if out.ndim == 0 else out

    def _h_interior(self, v: np.ndarray, u: np.ndarray) -> np.ndarray:
        family, theta = self.family, self.theta
        if family == CopulaFamily.INDEPENDENCE:
            return v
        if family == CopulaFamily.GUMBEL:
            x = -np.log(u)
            a = x ** theta + (-np.log(v)) ** theta
            w = a ** (1.0 / theta)
            return np.exp(-w) * a ** (1.0 / theta - 1.0) * x ** (theta - 1.0) / u
        if family == CopulaFamily.CLAYTON:
            log_h = (-theta - 1.0) * np.log(u) + (-1.0 / theta - 1.0) * self._clayton_log_s(u, v)
            return np.exp(log_h)
        if family == CopulaFamily.FRANK:
            ev = np.expm1(-theta * v)
            return np.exp(-theta * u) * ev / (np.expm1(-theta) + np.expm1(-theta * u) * ev)
        if family == CopulaFamily.GAUSSIAN:
            return special.ndtr((special.ndtri(v) - theta * special.ndtri(u)) / math.sqrt(1.0 - theta ** 2))
        # student
        nu = self.df
        x1 = special.stdtrit(nu, u)
        x2 = special.stdtrit(nu, v)
        scale = np.sqrt((nu + x1 ** 2) * (1.0 - theta ** 2) / (nu + 1.0))
        return special.stdtr(nu + 1.0, (x2 - theta * x1) / scale)

    def inverse_conditional_cdf(self, p: ArrayLike, given_u: ArrayLike) -> ArrayLike:
        """v with h(v|u) = p. Closed forms where they exist, vectorised bisection (gumbel) otherwise."""
        p_arr, u_arr = np.broadcast_arrays(np.asarray(p, dtype=float), np.asarray(given_u, dtype=float))
        pc = np.clip(p_arr, 0.0, 1.0)
        uc = np.clip(u_arr, 0.0, 1.0)

        family, theta = self.family, self.theta
        if family == CopulaFamily.COMONOTONE:
            out = uc.copy()
        elif family == CopulaFamily.COUNTERMONOTONE:
            out = 1.0 - uc
        else:
            us = np.clip(uc, U_TRIM, 1.0 - U_TRIM)
            inner = (pc > 0) & (pc < 1)
            ps = np.where(inner, pc, 0.5)
            with np.errstate(all="ignore"):
                if family == CopulaFamily.INDEPENDENCE:
                    core = ps
                elif family == CopulaFamily.CLAYTON:
                    k = -theta / (1.0 + theta) * np.log(ps)
                    log_term = np.log(np.expm1(k)) - theta * np.log(us)
                    core = np.exp(-np.logaddexp(0.0, log_term) / theta)
                elif family == CopulaFamily.FRANK:
                    y = ps * np.expm1(-theta) / (ps + (1.0 - ps) * np.exp(-theta * us))
                    core = -np.log1p(y) / theta
                elif family == CopulaFamily.GAUSSIAN:
                    core = special.ndtr(theta * special.ndtri(us) + math.sqrt(1.0 - theta ** 2) * special.ndtri(ps))
                elif family == CopulaFamily.STUDENT:
                    nu = self.df
                    x1 = special.stdtrit(nu, us)
                    scale = np.sqrt((nu + x1 ** 2) * (1.0 - theta ** 2) / (nu + 1.0))
                    core = special.stdtr(nu, theta * x1 + scale * special.stdtrit(nu + 1.0, ps))
                else:
                    core = self._bisect_h(ps, us)
            core = np.clip(core, 0.0, 1.0)
            out = np.where(inner, core, np.where(pc <= 0, 0.0, 1.0))
        return float(out) if out.ndim == 0 else out

    def _bisect_h(self, p: np.ndarray, u: np.ndarray) -> np.ndarray:
        lo = np.zeros_like(p)
        hi = np.ones_like(p)
        for _ in range(BISECTION_STEPS):
            mid = 0.5 * (lo + hi)
            below = self._h_interior(np.clip(mid, 1e-300, 1.0 - 1e-16), u) < p
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return 0.5 * (lo + hi)

    # --- Density ---

    def density(self, u: ArrayLike, v: ArrayLike) -> ArrayLike:
        """c(u, v) = d2C/dudv on the open unit square."""
        if self.family in SINGULAR:
            raise CopulaParameterError(f"{self.family.value} copula is singular and has no density")
        u_arr, v_arr = np.broadcast_arrays(np.asarray(u, dtype=float), np.asarray(v, dtype=float))
        inside = (u_arr > 0) & (u_arr < 1) & (v_arr > 0) & (v_arr < 1)
        us = np.where(inside, u_arr, 0.5)
        vs = np.where(inside, v_arr, 0.5)

        family, theta = self.family, self.theta
        with np.errstate(all="ignore"):
            if family == CopulaFamily.INDEPENDENCE:
                core = np.ones_like(us)
            elif family == CopulaFamily.GUMBEL:
                x, y = -np.log(us), -np.log(vs)
                a = x ** theta + y ** theta
                w = a ** (1.0 / theta)
                core = np.exp(-w) * (x * y) ** (theta - 1.0) * a ** (1.0 / theta - 2.0) * (w + theta - 1.0) / (us * vs)
            elif family == CopulaFamily.CLAYTON:
                log_c = (
                    math.log1p(theta)
                    + (-theta - 1.0) * (np.log(us) + np.log(vs))
                    + (-1.0 / theta - 2.0) * self._clayton_log_s(us, vs)
                )
                core = np.exp(log_c)
            elif family == CopulaFamily.FRANK:
                e = np.expm1(-theta)
                denom = e + np.expm1(-theta * us) * np.expm1(-theta * vs)
                core = -theta * e * np.exp(-theta * (us + vs)) / denom ** 2
            elif family == CopulaFamily.GAUSSIAN:
                x, y = special.ndtri(us), special.ndtri(vs)
                r2 = 1.0 - theta ** 2
                core = np.exp(-(theta ** 2 * (x ** 2 + y ** 2) - 2.0 * theta * x * y) / (2.0 * r2)) / math.sqrt(r2)
            else:
                nu = self.df
                x, y = special.stdtrit(nu, us), special.stdtrit(nu, vs)
                r2 = 1.0 - theta ** 2
                log_joint = (
                    special.gammaln((nu + 2.0) / 2.0) - special.gammaln(nu / 2.0)
                    - math.log(nu * math.pi) - 0.5 * math.log(r2)
                    - (nu + 2.0) / 2.0 * np.log1p((x ** 2 + y ** 2 - 2.0 * theta * x * y) / (nu * r2))
                )
                core = np.exp(log_joint - stats.t.logpdf(x, nu) - stats.t.logpdf(y, nu))
        out = np.where(inside, core, 0.0)
        return float(out) if out.ndim == 0 else out

    # --- Dependence & Sampling ---

    def kendall_tau(self) -> float:
        return tau_from_theta(self.family, self.theta)

    def sample_pair(self, u1: ArrayLike, u2: ArrayLike) -> Tuple[ArrayLike, ArrayLike]:
        """Conditional inversion: (u1, h^-1(u2 | u1))."""
        return u1, self.inverse_conditional_cdf(u2, u1)

def _bivariate_normal_cdf(h: np.ndarray, k: np.ndarray, rho: float) -> np.ndarray:
    """
    Phi2(h, k; rho) from univariate quantities and Owen's T:
    Phi2 = (Phi(h) + Phi(k))/2 - T(h, a_h) - T(k, a_k) - beta,
    beta = 0 when hk > 0 (or hk = 0 with h + k >= 0), 1/2 otherwise.
    """
    s = math.sqrt(1.0 - rho ** 2)
    h = np.where(h == 0.0, OWENS_NUDGE, h)
    k = np.where(k == 0.0, OWENS_NUDGE, k)
    a_h = (k - rho * h) / (h * s)
    a_k = (h - rho * k) / (k * s)
    beta = np.where(h * k > 0, 0.0, 0.5)
    return 0.5 * (special.ndtr(h) + special.ndtr(k)) - special.owens_t(h, a_h) - special.owens_t(k, a_k) - beta

# --- Copula API (module-level operations) ---

def copula_cdf(c: Copula, u: ArrayLike, v: ArrayLike) -> ArrayLike:
    return c.cdf(u, v)

def conditional_cdf(c: Copula, v: ArrayLike, given_u: ArrayLike) -> ArrayLike:
    return c.conditional_cdf(v, given_u)

def inverse_conditional_cdf(c: Copula, p: ArrayLike, given_u: ArrayLike) -> ArrayLike:
    return c.inverse_conditional_cdf(p, given_u)

def kendall_tau(c: Copula) -> float:
    return c.kendall_tau()

def sample_pair(c: Copula, u1: ArrayLike, u2: ArrayLike) -> Tuple[ArrayLike, ArrayLike]:
    return c.sample_pair(u1, u2)

def sample_uniforms(c: Copula, n: int, seed: int, start: int = 0) -> np.ndarray:
    """n copula-distributed pairs (u, v) from the counter-based stream."""
    raw = uniform_pairs(seed, n, start)
    u, v = c.sample_pair(raw[:, 0], raw[:, 1])
    return np.column_stack([u, v])

def numeric_kendall_tau(c: Copula, n_samples: int = 100_000, seed: int = 0) -> float:
    """Monte Carlo 4 E[C(U, V)] - 1 over sampled pairs; deterministic given seed."""
    if n_samples < MIN_NUMERIC_SAMPLES:
        raise SampleSizeError(f"numeric tau needs n_samples >= {MIN_NUMERIC_SAMPLES}, got {n_samples}")
    pairs = sample_uniforms(c, n_samples, seed)
    return float(4.0 * np.mean(c.cdf(pairs[:, 0], pairs[:, 1])) - 1.0)

def _tie_pairs(values: np.ndarray) -> int:
    _, counts = np.unique(values, return_counts=True)
    return int(np.sum(counts * (counts - 1) // 2))

def empirical_kendall_tau(pairs: Any) -> float:
    """
    Tau-a: (concordant - discordant) / C(n, 2); tied pairs count as neither.
    scipy's tau-b shares the numerator, so it is rescaled by its tie correction.
    """
    arr = np.asarray(pairs, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise SampleSizeError(f"expected an (n, 2) array of pairs, got shape {arr.shape}")
    n = arr.shape[0]
    if n < 2:
        raise SampleSizeError(f"empirical tau needs at least 2 pairs, got {n}")

    n0 = n * (n - 1) // 2
    n1 = _tie_pairs(arr[:, 0])
    n2 = _tie_pairs(arr[:, 1])
    if n1 == n0 or n2 == n0:
        return 0.0
    tau_b = stats.kendalltau(arr[:, 0], arr[:, 1]).statistic
    return float(tau_b * math.sqrt((n0 - n1) * (n0 - n2)) / n0)

# --- Calibration ---

def _expand(f, start: float, direction: float) -> float:
    edge = start
    for _ in range(80):
        if f(edge) * direction > 0:
            return edge
        edge *= 2.0
    raise CalibrationRangeError("could not bracket the calibration root")

def calibrate_parameter(family: Any, target_tau: float, df: Optional[float] = None) -> Copula:
    """
    Copula of `family` whose analytic Kendall's tau equals target_tau within 1e-8.
    tau = 0 yields the independence copula for every family.
    """
    fam = parse_family(family)
    target = float(target_tau)
    if not tau_in_range(fam, target):
        raise CalibrationRangeError(
            f"tau={target!r} not attainable by {fam.value}; attainable range is {describe_tau_range(fam)}"
        )
    if target == 0.0:
        return Copula.independence()
    if fam == CopulaFamily.COMONOTONE:
        return Copula.comonotone()
    if fam == CopulaFamily.COUNTERMONOTONE:
        return Copula.countermonotone()

    def residual(theta: float) -> float:
        return tau_from_theta(fam, theta) - target

    solve = dict(xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=CALIBRATION_MAXITER)
    if fam == CopulaFamily.GUMBEL:
        theta = optimize.brentq(residual, 1.0, _expand(residual, 2.0, 1.0), **solve)
    elif fam == CopulaFamily.CLAYTON:
        theta = optimize.brentq(residual, 1e-300, _expand(residual, 1.0, 1.0), **solve)
    elif fam == CopulaFamily.FRANK:
        # tau is odd in theta
        magnitude = abs(target)

        def positive(theta: float) -> float:
            return _frank_tau(theta) - magnitude

        theta = optimize.brentq(positive, 1e-12, _expand(positive, 1.0, 1.0), **solve)
        theta = math.copysign(theta, target)
    else:
        theta = optimize.brentq(residual, -1.0, 1.0, **solve)
        theta = min(max(theta, -1.0 + 1e-16), 1.0 - 1e-16)
        return Copula(fam, theta, df)

    achieved = tau_from_theta(fam, theta)
    if abs(achieved - target) > CALIBRATION_TOL:
        logger.warning(f"Calibration of {fam.value} to tau={target} ended at tau={achieved}")
    return Copula(fam, theta, df)

# --- Config form ---

@dataclass
class CopulaSpec:
    """
    Copula as written in a config: a family plus exactly one of
    tau, theta (rho for elliptical families), alpha (frank base, alpha = e^-theta)
    or exponent_theta (clayton exponent form); df for student.
    """
    family: str
    tau: Optional[float] = None
    theta: Optional[float] = None
    alpha: Optional[float] = None
    exponent_theta: Optional[float] = None
    df: Optional[float] = None

    def __post_init__(self):
        fam = parse_family(self.family)
        self.family = fam.value
        given = [k for k in ("tau", "theta", "alpha", "exponent_theta") if getattr(self, k) is not None]
        if fam in PARAMETERLESS and fam != CopulaFamily.INDEPENDENCE:
            if given and given != ["tau"]:
                raise CopulaParameterError(f"{fam.value} takes no parameter, got {given}")
        elif fam == CopulaFamily.INDEPENDENCE:
            if given and not (given == ["tau"] and self.tau == 0):
                raise CopulaParameterError(f"independence takes no parameter (or tau=0), got {given}")
        elif len(given) != 1:
            raise CopulaParameterError(
                f"{fam.value} spec needs exactly one of tau/theta/alpha/exponent_theta, got {given or 'none'}"
            )
        if self.alpha is not None and fam != CopulaFamily.FRANK:
            raise CopulaParameterError("alpha only applies to the frank copula")
        if self.exponent_theta is not None and fam != CopulaFamily.CLAYTON:
            raise CopulaParameterError("exponent_theta only applies to the clayton copula")
        if fam == CopulaFamily.STUDENT and self.df is None:
            raise CopulaParameterError("student copula spec needs df")

    @property
    def copula_family(self) -> CopulaFamily:
        return CopulaFamily(self.family)

    def requested_tau(self) -> Optional[float]:
        """tau as requested (or implied by a parameterless family), None when parameterised by theta."""
        fam = self.copula_family
        if self.tau is not None:
            return float(self.tau)
        if fam in PARAMETERLESS:
            return tau_from_theta(fam, None)
        return None

    def build(self) -> Copula:
        fam = self.copula_family
        if self.tau is not None:
            return calibrate_parameter(fam, self.tau, self.df)
        if fam in PARAMETERLESS:
            return Copula(fam)
        if self.alpha is not None:
            return Copula(fam, frank_theta_from_alpha(self.alpha))
        if self.exponent_theta is not None:
            return Copula(fam, clayton_theta_from_exponent(self.exponent_theta))
        return Copula(fam, self.theta, self.df)

    def key(self) -> str:
        """Stable text used in cell ids, e.g. 'gumbel_tau0.5' or 'frank_alpha100'."""
        for name in ("tau", "theta", "alpha", "exponent_theta"):
            value = getattr(self, name)
            if value is not None:
                base = f"{self.family}_{name}{value:g}"
                break
        else:
            base = self.family
        if self.df is not None:
            base += f"_df{self.df:g}"
        return base

    def to_dict(self) -> Dict[str, Any]:
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "CopulaSpec":
        if not isinstance(data, dict) or "family" not in data:
            raise CopulaParameterError(f"copula spec needs a 'family' key, got {data!r}")
        known = {"family", "tau", "theta", "rho", "alpha", "exponent_theta", "df"}
        unknown = set(data) - known
        if unknown:
            raise CopulaParameterError(f"unknown copula spec keys {sorted(unknown)}")
        theta = data.get("theta", data.get("rho"))
        try:
            return cls(
                family=data["family"],
                tau=_opt_float(data.get("tau")),
                theta=_opt_float(theta),
                alpha=_opt_float(data.get("alpha")),
                exponent_theta=_opt_float(data.get("exponent_theta")),
                df=_opt_float(data.get("df")),
            )
        except (TypeError, ValueError) as e:
            if isinstance(e, CopulaParameterError):
                raise
            raise CopulaParameterError(f"bad copula spec {data!r}: {e}")

def _opt_float(value: Any) -> Optional[float]:
    return None if value is None else float(value)
