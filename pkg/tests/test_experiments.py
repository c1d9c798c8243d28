import unittest
import logging
import json
import shutil
import sys
import tempfile
from pathlib import Path
from unittest.mock import patch

# Adjust path / Import
sys.path.append(str(Path(__file__).resolve().parent.parent / "copula_pooling"))

from copulas import CopulaSpec
from models import (
    CellStatus, ConfigError, CurveMethod, PoolingCurve, ScenarioConfig, ScenarioResult, ThresholdReport, Verdict,
)
from metrics import RunMetrics, get_metrics_tracker
from result_store import ResultStore
from exports import curve_to_csv
from experiments import (
    UNORDERED_BETA_PAIRS, UnknownPresetError, cell_id, file_stem, preset, preset_names, qualitative_checks, run_grid,
    write_run,
)

# Configure Logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger("GridRunnerTest")

BETA55 = {"family": "beta", "params": [5, 5]}
BETA28 = {"family": "beta", "params": [2, 8]}
BETA82 = {"family": "beta", "params": [8, 2]}

def _small_config(**overrides) -> ScenarioConfig:
    data = dict(
        name="small",
        marginal_pairs=[(BETA55, BETA55), (BETA28, BETA82)],
        copula_specs=[CopulaSpec("gumbel", tau=0.5), CopulaSpec("frank", tau=-0.3)],
        t_grid=[0.2, 0.5, 0.8],
        scan_points=19,
        validation_samples=2000,
    )
    data.update(overrides)
    return ScenarioConfig(**data)

def _result(m: str, family: str, tau: float, root: float = None, effect=None) -> ScenarioResult:
    curve = None
    if effect is not None:
        curve = PoolingCurve([0.1, 0.9], [1.0, 1.0], [1.0 + effect[0], 1.0 + effect[1]], list(effect),
                             [100 * e for e in effect], [0.0, 0.0])
    thresholds = ThresholdReport(roots=[root], sign_pattern="+-", unique=True) if root is not None else None
    return ScenarioResult(
        cell_id=f"{m}__{m}__{family}_tau{tau:g}", seed="0" * 32, marginal_labels=(m, m),
        copula_family=family, tau=tau, theta=None, curve=curve, thresholds=thresholds,
    )

class TestConfig(unittest.TestCase):

    def test_validation(self):
        logger.info("Test 1: Invalid Configs Name The Problem")
        with self.assertRaises(ConfigError) as ctx:
            _small_config(copula_specs=[CopulaSpec("gumbel", tau=-0.2)])
        self.assertIn("[0, 1)", str(ctx.exception))
        with self.assertRaises(ConfigError):
            _small_config(t_grid=[0.5, 0.2])
        with self.assertRaises(ConfigError):
            _small_config(t_grid=[0.0, 0.5])
        with self.assertRaises(ConfigError):
            _small_config(marginal_pairs=[(BETA55, {"family": "beta", "params": [0, 1]})])
        with self.assertRaises(ConfigError):
            _small_config(method=CurveMethod.MONTE_CARLO, mc_samples=10)
        with self.assertRaises(ConfigError):
            _small_config(scan_points=3)

    def test_dict_round_trip(self):
        logger.info("Test 2: Config Dict Form")
        cfg = _small_config()
        again = ScenarioConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
        self.assertEqual(again.to_dict(), cfg.to_dict())
        with self.assertRaises(ConfigError):
            ScenarioConfig.from_dict({**cfg.to_dict(), "surprise": 1})
        with self.assertRaises(ConfigError):
            ScenarioConfig.from_dict({"t_grid": [0.5]})

    def test_presets(self):
        logger.info("Test 3: Named Presets")
        names = preset_names()
        for name in ("fig3", "fig4", "fig5", "fig6", "fig7", "fig8", "fig9", "prop2", "prop3", "gm"):
            self.assertIn(name, names)
            self.assertIsInstance(preset(name), ScenarioConfig)
        fig7 = preset("fig7")
        self.assertEqual(fig7.copula_specs, [CopulaSpec("frank", tau=0.8)])
        self.assertEqual(len(fig7.marginal_pairs), 6)
        self.assertEqual(len(preset("fig4").marginal_pairs), 9)
        self.assertEqual(preset("fig3").copula_specs[0].alpha, 100.0)
        self.assertEqual(preset("prop3").method, CurveMethod.MONTE_CARLO)
        fig8_keys = [s.key() for s in preset("fig8").copula_specs]
        self.assertIn("frank_tau0", fig8_keys)
        self.assertNotIn("frank_tau-0", fig8_keys)
        with self.assertRaises(UnknownPresetError) as ctx:
            preset("fig99")
        self.assertIn("fig7", str(ctx.exception))

    def test_cell_ids(self):
        logger.info("Test 4: Cell Ids And File Stems")
        cid = cell_id((BETA28, BETA82), CopulaSpec("gumbel", tau=0.5))
        self.assertEqual(cid, "beta(2,8)__beta(8,2)__gumbel_tau0.5")
        self.assertEqual(file_stem(cid), "beta_2_8___beta_8_2___gumbel_tau0.5")

class TestGridRunner(unittest.TestCase):

    def setUp(self):
        RunMetrics._instance = None
        self.tmp = tempfile.mkdtemp(prefix="pooling_grid_")

    def tearDown(self):
        shutil.rmtree(self.tmp, ignore_errors=True)

    def test_comonotone_cell(self):
        logger.info("Test 1: Comonotone Cell Has A Flat Zero Curve")
        cfg = _small_config(marginal_pairs=[(BETA55, BETA55)], copula_specs=[CopulaSpec("comonotone")])
        (result,) = run_grid(cfg)
        self.assertTrue(result.ok)
        self.assertTrue(all(abs(e) <= 1e-6 for e in result.curve.effect))
        self.assertEqual(result.thresholds.sign_pattern, "0")
        self.assertEqual(result.tau, 1.0)

    def test_order_does_not_change_numbers(self):
        logger.info("Test 2: Execution Order Is Irrelevant")
        cfg = _small_config()
        forward = run_grid(cfg)
        backward = run_grid(cfg, order=[3, 2, 1, 0])
        self.assertEqual([r.cell_id for r in forward], [r.cell_id for r in backward])
        for a, b in zip(forward, backward):
            self.assertEqual(a.seed, b.seed)
            self.assertEqual(curve_to_csv(a.curve), curve_to_csv(b.curve))
            self.assertEqual(a.empirical_tau, b.empirical_tau)
            self.assertEqual(a.thresholds.to_dict(), b.thresholds.to_dict())

    def test_workers_match_serial(self):
        logger.info("Test 3: Worker Processes Reproduce The Serial Run")
        cfg = _small_config(marginal_pairs=[(BETA55, BETA55)], scan_thresholds=False)
        serial = run_grid(cfg)
        serial_numerics = get_metrics_tracker().get_run_status()["numerics"]

        RunMetrics._instance = None
        parallel = run_grid(cfg, workers=2)
        for a, b in zip(serial, parallel):
            self.assertEqual(a.cell_id, b.cell_id)
            self.assertEqual(curve_to_csv(a.curve), curve_to_csv(b.curve))
            self.assertEqual(a.empirical_tau, b.empirical_tau)
            self.assertEqual(a.numerics, b.numerics)

        status = get_metrics_tracker().get_run_status()
        self.assertEqual(status["workers"]["total"], 2)
        # counters from the worker processes reach the parent tracker
        self.assertGreater(status["numerics"]["quadrature_calls"], 0)
        self.assertEqual(status["numerics"]["mc_draws"], 2 * cfg.validation_samples)
        self.assertEqual(status["numerics"], serial_numerics)

    def test_failures_are_captured(self):
        logger.info("Test 4: A Failing Cell Does Not Stop The Grid")
        cfg = _small_config(marginal_pairs=[(BETA55, BETA55)])
        with patch("experiments.find_thresholds", side_effect=RuntimeError("scan exploded")):
            results = run_grid(cfg)
        self.assertEqual(len(results), 2)
        for r in results:
            self.assertEqual(r.status, CellStatus.FAILED)
            self.assertIn("scan exploded", r.error)
        self.assertEqual(get_metrics_tracker().get_run_status()["cells"]["failed"], 2)

    def test_monte_carlo_cell(self):
        logger.info("Test 5: Monte Carlo Cells Carry Interval Half-Widths")
        cfg = _small_config(
            marginal_pairs=[({"family": "exponential", "params": [1]}, {"family": "exponential", "params": [1]})],
            copula_specs=[CopulaSpec("independence")],
            method=CurveMethod.MONTE_CARLO,
            mc_samples=20_000,
        )
        (result,) = run_grid(cfg)
        self.assertTrue(result.ok)
        self.assertTrue(all(ci > 0 for ci in result.curve.ci_halfwidth))
        self.assertIsNotNone(result.thresholds)

    def test_write_run(self):
        logger.info("Test 6: Run Directory Layout")
        cfg = _small_config(marginal_pairs=[(BETA55, BETA55)])
        results = run_grid(cfg)
        store = ResultStore(Path(self.tmp) / "out")
        report = write_run(results, cfg, store)

        manifest = store.read_manifest()
        self.assertEqual(manifest["scenario"], "small")
        self.assertEqual(len(manifest["cells"]), 2)
        for entry in manifest["cells"]:
            self.assertTrue(store.path(entry["curve_file"]).exists())
            self.assertTrue(store.path(entry["thresholds_file"]).exists())
        self.assertIn("run_status", manifest)
        checks = store.read_json("checks.json")
        self.assertEqual(checks["all_passed"], report.all_passed)
        self.assertEqual(len(checks["checks"]), 10)

class TestQualitativeChecks(unittest.TestCase):

    def test_not_evaluable(self):
        logger.info("Test 1: Absent Cells Give 'not evaluable'")
        report = qualitative_checks([])
        self.assertTrue(all(v.verdict == Verdict.NOT_EVALUABLE for v in report.verdicts))
        self.assertTrue(report.all_passed)

    def test_direction_checks(self):
        logger.info("Test 2: Threshold Direction Over Tau")
        b55 = "beta(5,5)"
        results = [
            _result(b55, "gumbel", 0.2, root=0.48),
            _result(b55, "gumbel", 0.5, root=0.46),
            _result(b55, "gumbel", 0.8, root=0.44),
            _result(b55, "clayton", 0.2, root=0.52),
            _result(b55, "clayton", 0.5, root=0.52),
            _result(b55, "clayton", 0.8, root=0.56),
        ]
        report = qualitative_checks(results)
        self.assertEqual(report.get("b_gumbel_t0_decreasing").verdict, Verdict.PASS)
        self.assertEqual(report.get("c_clayton_t0_increasing").verdict, Verdict.FAIL)
        self.assertEqual(report.get("f_clayton_above_gumbel").verdict, Verdict.PASS)
        self.assertFalse(report.all_passed)

    def test_skewness_check(self):
        logger.info("Test 3: Skewness Ordering")
        results = [
            _result("beta(8,2)", "gumbel", 0.5, root=0.3),
            _result("beta(5,5)", "gumbel", 0.5, root=0.46),
            _result("beta(2,8)", "gumbel", 0.5, root=0.6),
        ]
        verdict = qualitative_checks(results).get("a_skewness_ordering")
        self.assertEqual(verdict.verdict, Verdict.PASS)
        self.assertEqual(verdict.values["t0"], [0.3, 0.46, 0.6])

    def test_negative_frank_and_shrinking_effect(self):
        logger.info("Test 4: Sign And Magnitude Checks From Curves")
        results = [
            _result("beta(5,5)", "frank", -0.5, effect=(0.02, -0.02)),
            _result("beta(5,5)", "gumbel", 0.2, effect=(0.05, -0.05)),
            _result("beta(5,5)", "gumbel", 0.8, effect=(0.01, -0.01)),
        ]
        report = qualitative_checks(results)
        self.assertEqual(report.get("g_negative_frank_sign").verdict, Verdict.PASS)
        self.assertEqual(report.get("d_effect_shrinks_with_dependence").verdict, Verdict.PASS)

    def test_failed_cells_are_ignored(self):
        logger.info("Test 5: Failed Cells Do Not Feed Checks")
        failed = _result("beta(5,5)", "frank", -0.5, effect=(-0.02, 0.02))
        failed.status = CellStatus.FAILED
        self.assertEqual(qualitative_checks([failed]).get("g_negative_frank_sign").verdict, Verdict.NOT_EVALUABLE)

class TestChecksOnGridOutput(unittest.TestCase):

    def setUp(self):
        RunMetrics._instance = None

    def _checks(self, cfg: ScenarioConfig):
        results = run_grid(cfg)
        self.assertTrue(all(r.ok for r in results), [r.error for r in results if not r.ok])
        return qualitative_checks(results)

    def test_frank_non_uniqueness(self):
        logger.info("Test 1: Strong Frank Dependence Gives Several Thresholds")
        cfg = _small_config(
            marginal_pairs=UNORDERED_BETA_PAIRS, copula_specs=[CopulaSpec("frank", tau=0.8)],
            scan_points=199, validation_samples=0,
        )
        verdict = self._checks(cfg).get("e_frank_non_uniqueness")
        logger.info(f"Frank tau=0.8: {verdict.values}")
        self.assertEqual(verdict.verdict, Verdict.PASS)
        patterns = [cell["pattern"] for cell in verdict.values["cells"].values()]
        self.assertIn("+-+-", patterns)

    def test_skewness_ordering(self):
        logger.info("Test 2: Threshold Rises As Demand Skews Left")
        cfg = _small_config(
            marginal_pairs=[(BETA82, BETA82), (BETA55, BETA55), (BETA28, BETA28)],
            copula_specs=[CopulaSpec("gumbel", tau=0.5)], scan_points=199, validation_samples=0,
        )
        verdict = self._checks(cfg).get("a_skewness_ordering")
        self.assertEqual(verdict.verdict, Verdict.PASS)
        for got, expected in zip(verdict.values["t0"], (0.309, 0.402, 0.511)):
            self.assertAlmostEqual(got, expected, delta=0.005)

    def test_dependence_direction(self):
        logger.info("Test 3: Gumbel And Clayton Move The Threshold Apart")
        cfg = _small_config(
            marginal_pairs=[(BETA55, BETA55)],
            copula_specs=[CopulaSpec(family, tau=tau) for family in ("gumbel", "clayton") for tau in (0.2, 0.5, 0.8)],
            scan_points=199, validation_samples=0,
        )
        report = self._checks(cfg)
        self.assertEqual(report.get("b_gumbel_t0_decreasing").verdict, Verdict.PASS)
        self.assertEqual(report.get("c_clayton_t0_increasing").verdict, Verdict.PASS)
        self.assertEqual(report.get("d_effect_shrinks_with_dependence").verdict, Verdict.PASS)

    def test_pareto_tail_rule(self):
        logger.info("Test 4: Pareto Tail Index Decides The Sign At High Margins")
        cfg = ScenarioConfig.from_dict({**preset("prop3").to_dict(), "scan_thresholds": False})
        verdict = self._checks(cfg).get("i_pareto_tail_rule")
        logger.info(f"Pareto: {verdict.values}")
        self.assertEqual(verdict.verdict, Verdict.PASS)
        self.assertEqual(sorted(v["alpha"] for v in verdict.values.values()), [0.8, 3.0])

if __name__ == "__main__":
    unittest.main()
