import itertools
import logging
import math
import re
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple

from marginals import MarginalDistribution
from copulas import CopulaSpec, empirical_kendall_tau, sample_uniforms
from joint_demand import JointDemandModel, empirical_quantile
from pooling import dedicated_total, find_thresholds, pooling_curve
from models import (
    CellStatus, CheckReport, CheckVerdict, CurveMethod, ScenarioConfig, ScenarioResult, Verdict,
)
from streams import derive_seed
from metrics import get_metrics_tracker
from logger import correlation_scope
from exports import curve_to_csv, thresholds_to_json
from result_store import ResultStore

logger = logging.getLogger("GridRunner")

# --- Constants & Configuration ---
FIGURE_GRID = [i / 100 for i in range(1, 100)]
FIG9_GRID = [0.2, 0.5, 0.8]
CHECK_MARGIN = 0.005
REGION_MIN_WIDTH = 0.01
ELLIPTICAL_ROOT_TOL = 1e-4
TAIL_CI_MULTIPLE = 3.0
DEPENDENCE_TAUS = (0.2, 0.5, 0.8)

class UnknownPresetError(ValueError):
    """Raised for a preset name that is not registered."""
    pass

# --- Cells ---

def cell_id(pair: Tuple[Dict[str, Any], Dict[str, Any]], spec: CopulaSpec) -> str:
    m1 = MarginalDistribution.from_spec(pair[0]).label()
    m2 = MarginalDistribution.from_spec(pair[1]).label()
    return f"{m1}__{m2}__{spec.key()}"

def file_stem(cid: str) -> str:
    """Filesystem-safe form of a cell id."""
    return re.sub(r"[^A-Za-z0-9._-]+", "_", cid).strip("_")

def cells(cfg: ScenarioConfig) -> List[Tuple[str, Tuple[Dict[str, Any], Dict[str, Any]], CopulaSpec]]:
    return [(cell_id(pair, spec), pair, spec) for pair in cfg.marginal_pairs for spec in cfg.copula_specs]

def run_cell(cfg: ScenarioConfig, pair: Tuple[Dict[str, Any], Dict[str, Any]], spec: CopulaSpec) -> ScenarioResult:
    """
    Evaluates one (marginal pair x copula spec) cell. Never raises: failures are
    captured into the result so the grid keeps going.
    """
    cid = cell_id(pair, spec)
    seed = derive_seed(cfg.base_seed, cid)
    result = ScenarioResult(
        cell_id=cid,
        seed=f"{seed:032x}",
        marginal_labels=(MarginalDistribution.from_spec(pair[0]).label(), MarginalDistribution.from_spec(pair[1]).label()),
        copula_family=spec.family,
        tau=spec.requested_tau(),
        theta=None,
    )
    start = time.time()
    tracker = get_metrics_tracker()
    before = tracker.numeric_counts()

    with correlation_scope(cid):
        try:
            model = JointDemandModel(
                MarginalDistribution.from_spec(pair[0]),
                MarginalDistribution.from_spec(pair[1]),
                spec.build(),
            )
            result.model = model.to_spec()
            result.theta = model.copula.theta

            curve_seed = derive_seed(seed, "curve")
            sums = None
            effect_fn: Optional[Callable[[float], float]] = None
            if cfg.method == CurveMethod.MONTE_CARLO:
                sums = model.sample_sums(cfg.mc_samples, curve_seed)

                def effect_fn(t: float) -> float:
                    return empirical_quantile(sums, t).point - dedicated_total(model, t)

            result.curve = pooling_curve(model, cfg.t_grid, cfg.method, cfg.mc_samples, curve_seed, sums=sums)
            if cfg.scan_thresholds:
                result.thresholds = find_thresholds(model, cfg.scan_points, cfg.zero_tol, effect_fn=effect_fn)

            if cfg.validation_samples:
                pairs = sample_uniforms(model.copula, cfg.validation_samples, derive_seed(seed, "validation"))
                result.empirical_tau = empirical_kendall_tau(pairs)

        except Exception as e:
            logger.error(f"Cell {cid} failed: {e}", exc_info=True)
            result.status = CellStatus.FAILED
            result.error = f"{type(e).__name__}: {e}"

        result.wall_time = time.time() - start
        after = tracker.numeric_counts()
        result.numerics = {k: after[k] - before[k] for k in after}
        logger.info(
            f"Cell {cid} finished with status {result.status.value}",
            extra={"custom_metrics": {"wall_time": round(result.wall_time, 3), "missing": len(result.curve.missing) if result.curve else None}},
        )
    return result

def _run_cell_task(args: Tuple[ScenarioConfig, Tuple[Dict[str, Any], Dict[str, Any]], CopulaSpec]) -> ScenarioResult:
    """Module level so ProcessPoolExecutor can pickle it."""
    cfg, pair, spec = args
    return run_cell(cfg, pair, spec)

def run_grid(cfg: ScenarioConfig, workers: int = 1, order: Optional[Sequence[int]] = None) -> List[ScenarioResult]:
    """
    One result per cell, sorted by cell id. Cells are seeded from (base_seed, cell id),
    so execution order and worker count never change the numbers.
    `order` permutes the execution order (cells are indexed as listed by `cells`).
    """
    tasks = cells(cfg)
    if order is not None:
        tasks = [tasks[i] for i in order]
    tracker = get_metrics_tracker()
    results: List[ScenarioResult] = []

    logger.info(f"Running scenario {cfg.name!r}: {len(tasks)} cells, {workers} worker(s)")
    if workers > 1 and len(tasks) > 1:
        tracker.update_worker_stats(active=min(workers, len(tasks)), total=workers)
        with ProcessPoolExecutor(max_workers=workers) as executor:
            futures = {executor.submit(_run_cell_task, (cfg, pair, spec)): cid for cid, pair, spec in tasks}
            for future in as_completed(futures):
                result = future.result()
                # worker-side counters die with the worker
                tracker.merge_numeric_counts(result.numerics)
                tracker.record_cell(result.wall_time, result.ok)
                results.append(result)
        tracker.update_worker_stats(active=0, total=workers)
    else:
        for _, pair, spec in tasks:
            result = run_cell(cfg, pair, spec)
            tracker.record_cell(result.wall_time, result.ok)
            results.append(result)

    results.sort(key=lambda r: r.cell_id)
    failed = sum(1 for r in results if not r.ok)
    if failed:
        logger.warning(f"Scenario {cfg.name!r}: {failed}/{len(results)} cells failed")
    return results

# --- Presets ---

def _beta(a: float, b: float) -> Dict[str, Any]:
    return {"family": "beta", "params": [a, b]}

def _normal(mu: float, sigma: float) -> Dict[str, Any]:
    return {"family": "normal", "params": [mu, sigma]}

def _student(df: float, mu: float, sigma: float) -> Dict[str, Any]:
    return {"family": "student", "params": [df, mu, sigma]}

SKEWED_BETAS = [_beta(2, 8), _beta(5, 5), _beta(8, 2)]
ORDERED_BETA_PAIRS = [(a, b) for a in SKEWED_BETAS for b in SKEWED_BETAS]
UNORDERED_BETA_PAIRS = list(itertools.combinations_with_replacement(SKEWED_BETAS, 2))
FIGURE_TAUS = (0.0, 0.2, 0.5, 0.8)

def _tau_sweep(family: str, taus: Iterable[float]) -> List[CopulaSpec]:
    return [CopulaSpec(family, tau=round(tau, 10) + 0.0) for tau in taus]  # + 0.0 folds -0.0

def _figure_preset(name: str, family: str, taus: Iterable[float], notes: List[str]) -> ScenarioConfig:
    return ScenarioConfig(
        name=name,
        marginal_pairs=ORDERED_BETA_PAIRS,
        copula_specs=_tau_sweep(family, taus),
        t_grid=FIGURE_GRID,
        notes=notes,
    )

def _fig3() -> ScenarioConfig:
    return ScenarioConfig(
        name="fig3",
        marginal_pairs=[(_beta(2, 4), _beta(2, 4))],
        copula_specs=[CopulaSpec("frank", alpha=100.0)],
        t_grid=FIGURE_GRID,
        notes=["Frank base alpha=100 maps to theta=-ln(100) under alpha = exp(-theta); tau is about -0.43."],
    )

def _fig7() -> ScenarioConfig:
    return ScenarioConfig(
        name="fig7",
        marginal_pairs=UNORDERED_BETA_PAIRS,
        copula_specs=[CopulaSpec("frank", tau=0.8)],
        t_grid=FIGURE_GRID,
        notes=["Six unordered beta combinations; non-uniqueness is read from the threshold reports."],
    )

def _fig9() -> ScenarioConfig:
    frank = [k / 10 for k in range(-8, 9)]
    positive = [k / 20 for k in range(1, 17)]
    return ScenarioConfig(
        name="fig9",
        marginal_pairs=[(_beta(5, 5), _beta(5, 5))],
        copula_specs=_tau_sweep("frank", frank) + _tau_sweep("gumbel", positive) + _tau_sweep("clayton", positive),
        t_grid=FIG9_GRID,
        scan_thresholds=False,
        notes=[
            "Marginals follow the caption (beta(5,5)); the accompanying text mentions identical normal marginals.",
            "Dependence axis: frank tau in {-0.8,...,0.8} step 0.1, gumbel/clayton tau in {0.05,...,0.8} step 0.05.",
        ],
    )

def _prop2() -> ScenarioConfig:
    return ScenarioConfig(
        name="prop2",
        marginal_pairs=[
            (_normal(0, 1), _normal(0, 1)),
            (_normal(0, 1), _normal(5, 2)),
            (_normal(5, 2), _normal(5, 2)),
            (_normal(5, 1), _normal(0, 2)),
        ],
        copula_specs=[CopulaSpec("gaussian", theta=rho) for rho in (-0.5, 0.0, 0.5)],
        t_grid=FIGURE_GRID,
        notes=["Elliptical family: the threshold is 0.5 for every correlation."],
    )

def _prop2t() -> ScenarioConfig:
    return ScenarioConfig(
        name="prop2t",
        marginal_pairs=[
            (_student(4, 0, 1), _student(4, 0, 1)),
            (_student(4, 0, 1), _student(4, 5, 2)),
        ],
        copula_specs=[CopulaSpec("student", theta=rho, df=4.0) for rho in (-0.5, 0.0, 0.5)],
        t_grid=FIGURE_GRID,
        notes=["Bivariate Student-t demand (df=4); elliptical, so the threshold is 0.5."],
    )

def _prop3() -> ScenarioConfig:
    return ScenarioConfig(
        name="prop3",
        marginal_pairs=[
            ({"family": "pareto", "params": [0.8, 1.0]}, {"family": "pareto", "params": [0.8, 1.0]}),
            ({"family": "pareto", "params": [3.0, 1.0]}, {"family": "pareto", "params": [3.0, 1.0]}),
        ],
        copula_specs=[CopulaSpec("independence")],
        t_grid=[round(0.5 + 0.05 * k, 10) for k in range(10)],
        method=CurveMethod.MONTE_CARLO,
        mc_samples=1_000_000,
        notes=["Pareto scale x_m = 1; tail index below 1 gives a positive effect at high margin ratios."],
    )

def _gm() -> ScenarioConfig:
    return ScenarioConfig(
        name="gm",
        marginal_pairs=[({"family": "exponential", "params": [1.0]}, {"family": "exponential", "params": [1.0]})],
        copula_specs=[CopulaSpec("independence")],
        t_grid=FIGURE_GRID,
        notes=["Independent exponential demand: pooling raises stock at low margin ratios."],
    )

PRESETS: Dict[str, Callable[[], ScenarioConfig]] = {
    "fig3": _fig3,
    "fig4": lambda: _figure_preset("fig4", "gumbel", FIGURE_TAUS, ["Gumbel copula, ordered beta pairs."]),
    "fig5": lambda: _figure_preset("fig5", "clayton", FIGURE_TAUS, ["Clayton copula, ordered beta pairs."]),
    "fig6": lambda: _figure_preset("fig6", "frank", FIGURE_TAUS, ["Frank copula, positive tau."]),
    "fig7": _fig7,
    "fig8": lambda: _figure_preset(
        "fig8", "frank", tuple(-t for t in FIGURE_TAUS), ["Frank copula, negative tau (tau=0 is independence)."]
    ),
    "fig9": _fig9,
    "prop2": _prop2,
    "prop2t": _prop2t,
    "prop3": _prop3,
    "gm": _gm,
}

def preset_names() -> List[str]:
    return sorted(PRESETS)

def preset(name: str) -> ScenarioConfig:
    try:
        builder = PRESETS[name]
    except KeyError:
        raise UnknownPresetError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return builder()

# --- Qualitative checks ---

class _Index:
    """Lookup of successful cells by (marginal labels, requested family, requested tau)."""

    def __init__(self, results: Sequence[ScenarioResult]):
        self.results = [r for r in results if r.ok]

    def find(self, m1: str, m2: str, family: str, tau: Optional[float]) -> Optional[ScenarioResult]:
        for r in self.results:
            if r.marginal_labels == (m1, m2) and r.copula_family == family:
                if tau is None or (r.tau is not None and abs(r.tau - tau) < 1e-9):
                    return r
        return None

    def threshold(self, m1: str, m2: str, family: str, tau: float) -> Optional[float]:
        r = self.find(m1, m2, family, tau)
        if r is None or r.thresholds is None:
            return None
        return r.thresholds.first_root

def _strictly_ordered(values: Sequence[float], increasing: bool) -> bool:
    pairs = zip(values, values[1:])
    if increasing:
        return all(b - a >= CHECK_MARGIN for a, b in pairs)
    return all(a - b >= CHECK_MARGIN for a, b in pairs)

def _not_evaluable(name: str, description: str, detail: str) -> CheckVerdict:
    return CheckVerdict(name, description, Verdict.NOT_EVALUABLE, detail=detail)

def _pass_fail(ok: bool) -> Verdict:
    return Verdict.PASS if ok else Verdict.FAIL

B28, B55, B82 = "beta(2,8)", "beta(5,5)", "beta(8,2)"

def _check_skewness(idx: _Index) -> CheckVerdict:
    name, desc = "a_skewness_ordering", "t0(beta(8,2)^2) < t0(beta(5,5)^2) < t0(beta(2,8)^2) under gumbel tau=0.5"
    values = [idx.threshold(m, m, "gumbel", 0.5) for m in (B82, B55, B28)]
    others = {}
    for family in ("gumbel", "clayton", "frank"):
        for tau in DEPENDENCE_TAUS:
            group = [idx.threshold(m, m, family, tau) for m in (B82, B55, B28)]
            if all(v is not None for v in group):
                others[f"{family}_tau{tau:g}"] = {"t0": group, "ordered": _strictly_ordered(group, True)}
    if any(v is None for v in values):
        return _not_evaluable(name, desc, "gumbel tau=0.5 cells for the three identical beta pairs are missing")
    return CheckVerdict(name, desc, _pass_fail(_strictly_ordered(values, True)), {"t0": values, "other_groups": others})

def _check_direction(idx: _Index, family: str, increasing: bool, name: str) -> CheckVerdict:
    trend = "increasing" if increasing else "decreasing"
    desc = f"{family} t0 {trend} over tau in {{0.2, 0.5, 0.8}} for beta(5,5)^2"
    values = [idx.threshold(B55, B55, family, tau) for tau in DEPENDENCE_TAUS]
    if any(v is None for v in values):
        return _not_evaluable(name, desc, f"{family} beta(5,5)^2 cells (or their roots) are missing")
    return CheckVerdict(name, desc, _pass_fail(_strictly_ordered(values, increasing)), {"t0": values})

def _check_shrinking_effect(idx: _Index) -> CheckVerdict:
    name, desc = "d_effect_shrinks_with_dependence", "max |effect_pct| at tau=0.8 below tau=0.2 (gumbel, every pair)"
    compared = {}
    for r in idx.results:
        if r.copula_family != "gumbel" or r.tau is None or abs(r.tau - 0.2) > 1e-9 or r.curve is None:
            continue
        strong = idx.find(r.marginal_labels[0], r.marginal_labels[1], "gumbel", 0.8)
        if strong is None or strong.curve is None:
            continue
        compared[" x ".join(r.marginal_labels)] = (r.curve.max_abs_effect_pct(), strong.curve.max_abs_effect_pct())
    if not compared:
        return _not_evaluable(name, desc, "no gumbel pair has both tau=0.2 and tau=0.8 cells")
    ok = all(strong < weak for weak, strong in compared.values())
    return CheckVerdict(name, desc, _pass_fail(ok), {k: {"tau0.2": w, "tau0.8": s} for k, (w, s) in compared.items()})

def _check_frank_non_uniqueness(idx: _Index) -> CheckVerdict:
    name, desc = "e_frank_non_uniqueness", "frank tau=0.8: >= 2 roots for some pair, positive regions wider than 0.01"
    cells_ = [r for r in idx.results if r.copula_family == "frank" and r.tau is not None
              and abs(r.tau - 0.8) < 1e-9 and r.thresholds is not None]
    if not cells_:
        return _not_evaluable(name, desc, "no frank tau=0.8 cells with threshold reports")
    multi = {r.cell_id: r.thresholds for r in cells_ if len(r.thresholds.roots) >= 2}
    widths = {cid: [hi - lo for lo, hi in rep.positive_regions()] for cid, rep in multi.items()}
    ok = bool(multi) and all(all(w > REGION_MIN_WIDTH for w in ws) for ws in widths.values())
    values = {r.cell_id: {"roots": r.thresholds.roots, "pattern": r.thresholds.sign_pattern} for r in cells_}
    return CheckVerdict(name, desc, _pass_fail(ok), {"cells": values, "positive_region_widths": widths})

def _check_clayton_above_gumbel(idx: _Index) -> CheckVerdict:
    name, desc = "f_clayton_above_gumbel", "clayton t0 above gumbel t0 at equal tau for beta(5,5)^2"
    compared = {}
    for tau in DEPENDENCE_TAUS:
        c = idx.threshold(B55, B55, "clayton", tau)
        g = idx.threshold(B55, B55, "gumbel", tau)
        if c is not None and g is not None:
            compared[f"tau{tau:g}"] = {"clayton": c, "gumbel": g}
    if not compared:
        return _not_evaluable(name, desc, "no tau level has both clayton and gumbel beta(5,5)^2 roots")
    ok = all(v["clayton"] > v["gumbel"] for v in compared.values())
    return CheckVerdict(name, desc, _pass_fail(ok), compared)

def _check_negative_frank(idx: _Index) -> CheckVerdict:
    name, desc = "g_negative_frank_sign", "frank tau<0: effect > 0 at the lowest and < 0 at the highest margin ratio"
    compared = {}
    for r in idx.results:
        if r.copula_family != "frank" or r.tau is None or r.tau >= 0 or r.curve is None:
            continue
        first, last = r.curve.effect[0], r.curve.effect[-1]
        if math.isnan(first) or math.isnan(last):
            continue
        compared[r.cell_id] = {"low_t_effect": first, "high_t_effect": last}
    if not compared:
        return _not_evaluable(name, desc, "no negative-tau frank cells")
    ok = all(v["low_t_effect"] > 0 > v["high_t_effect"] for v in compared.values())
    return CheckVerdict(name, desc, _pass_fail(ok), compared)

def _check_elliptical(idx: _Index) -> CheckVerdict:
    name, desc = "h_elliptical_threshold", "gaussian/student copula with matching marginals: unique root at 0.5"
    compared = {}
    for r in idx.results:
        if r.copula_family not in ("gaussian", "student") or r.thresholds is None:
            continue
        families = {m.split("(")[0] for m in r.marginal_labels}
        if not families <= {"normal", "student"}:
            continue
        compared[r.cell_id] = {"roots": r.thresholds.roots, "unique": r.thresholds.unique}
    if not compared:
        return _not_evaluable(name, desc, "no elliptical cells")
    ok = all(v["unique"] and abs(v["roots"][0] - 0.5) <= ELLIPTICAL_ROOT_TOL for v in compared.values())
    return CheckVerdict(name, desc, _pass_fail(ok), compared)

def _check_pareto_tail(idx: _Index) -> CheckVerdict:
    name, desc = "i_pareto_tail_rule", "pareto alpha<1: effect > 3 CI for t >= 0.5; alpha>1: effect < -3 CI for t >= 0.9"
    compared = {}
    for r in idx.results:
        if r.curve is None or not r.model:
            continue
        m1, m2 = r.model.get("m1", {}), r.model.get("m2", {})
        if m1.get("family") != "pareto" or m1 != m2:
            continue
        alpha = float(m1["params"][0])
        heavy = alpha < 1
        points = []
        for t, e, ci in zip(r.curve.t_grid, r.curve.effect, r.curve.ci_halfwidth):
            if math.isnan(e):
                continue
            if heavy and t >= 0.5 - 1e-12:
                points.append(e > TAIL_CI_MULTIPLE * ci)
            elif not heavy and t >= 0.9 - 1e-12:
                points.append(e < -TAIL_CI_MULTIPLE * ci)
        if points:
            compared[r.cell_id] = {"alpha": alpha, "holds": all(points), "points": len(points)}
    if not compared:
        return _not_evaluable(name, desc, "no identical pareto cells")
    return CheckVerdict(name, desc, _pass_fail(all(v["holds"] for v in compared.values())), compared)

def _check_pooled_vs_tau(idx: _Index) -> CheckVerdict:
    name, desc = "j_pooled_level_vs_tau", "beta(5,5)^2 pooled level against tau per family and margin ratio"
    report: Dict[str, Any] = {}
    for family in ("frank", "gumbel", "clayton"):
        cells_ = sorted(
            (r for r in idx.results if r.marginal_labels == (B55, B55) and r.copula_family == family
             and r.tau is not None and r.curve is not None),
            key=lambda r: r.tau,
        )
        if len(cells_) < 3:
            continue
        for k, t in enumerate(cells_[0].curve.t_grid):
            levels = [r.curve.pooled[k] for r in cells_]
            diffs = [b - a for a, b in zip(levels, levels[1:])]
            report[f"{family}_t{t:g}"] = {
                "taus": [r.tau for r in cells_],
                "pooled": levels,
                "dedicated": cells_[0].curve.dedicated[k],
                "monotone": all(d >= 0 for d in diffs) or all(d <= 0 for d in diffs),
            }
    if not report:
        return _not_evaluable(name, desc, "no beta(5,5)^2 tau sweep with at least three cells")
    return CheckVerdict(name, desc, Verdict.INFO, report)

def qualitative_checks(results: Sequence[ScenarioResult]) -> CheckReport:
    """Verdicts with the compared values; checks whose cells are absent are 'not evaluable'."""
    idx = _Index(results)
    return CheckReport([
        _check_skewness(idx),
        _check_direction(idx, "gumbel", increasing=False, name="b_gumbel_t0_decreasing"),
        _check_direction(idx, "clayton", increasing=True, name="c_clayton_t0_increasing"),
        _check_shrinking_effect(idx),
        _check_frank_non_uniqueness(idx),
        _check_clayton_above_gumbel(idx),
        _check_negative_frank(idx),
        _check_elliptical(idx),
        _check_pareto_tail(idx),
        _check_pooled_vs_tau(idx),
    ])

# --- Output ---

def write_run(results: Sequence[ScenarioResult], cfg: ScenarioConfig, store: ResultStore) -> CheckReport:
    """Per-cell curve CSV and threshold JSON, then checks.json and manifest.json."""
    entries = []
    for r in results:
        entry = r.summary()
        stem = file_stem(r.cell_id)
        if r.curve is not None:
            entry["curve_file"] = str(store.write_text(f"curves/{stem}.csv", curve_to_csv(r.curve)).relative_to(store.root))
            entry["missing_points"] = {str(k): v for k, v in r.curve.missing.items()}
        if r.thresholds is not None:
            entry["thresholds_file"] = str(
                store.write_text(f"thresholds/{stem}.json", thresholds_to_json(r.thresholds)).relative_to(store.root)
            )
            entry["roots"] = r.thresholds.roots
            entry["sign_pattern"] = r.thresholds.sign_pattern
        entries.append(entry)

    report = qualitative_checks(results)
    store.write_json("checks.json", report.to_dict())
    store.write_manifest({
        "scenario": cfg.name,
        "config": cfg.to_dict(),
        "notes": list(cfg.notes),
        "cells": entries,
        "run_status": get_metrics_tracker().get_run_status(),
    })
    logger.info(f"Wrote {len(entries)} cells to {store.root}")
    return report
