import unittest
import logging
import math
import sys
from pathlib import Path
from unittest.mock import patch

from scipy import stats

# Adjust path / Import
sys.path.append(str(Path(__file__).resolve().parent.parent / "copula_pooling"))

from marginals import MarginalDistribution
from copulas import Copula, CopulaFamily, SampleSizeError
from joint_demand import JointDemandModel
from models import CurveMethod
from quadrature import QuadratureError
from pooling import (
    NegativeOrderError, ProfitParams, ProfitParamsError, ScanParameterError,
    dedicated_total, expected_profit, find_thresholds, newsvendor_quantile, normal_pooled_closed_form,
    pooling_curve, pooling_effect, profit_comparison, student_pooled_closed_form,
)

# Configure Logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger("PoolingTest")

UNIT = MarginalDistribution.uniform()
EXP1 = MarginalDistribution.exponential(1.0)
B55 = MarginalDistribution.beta(5, 5)
B28 = MarginalDistribution.beta(2, 8)
B82 = MarginalDistribution.beta(8, 2)
# independent Exponential(1) sum is Gamma(2)
EXP_EFFECT_T02 = stats.gamma(2.0).ppf(0.2) + 2 * math.log(0.8)

class TestNewsvendor(unittest.TestCase):

    def test_profit_params(self):
        logger.info("Test 1: Margin Ratio From Price And Cost")
        self.assertAlmostEqual(ProfitParams(price=10, cost=4).t, 0.6, places=15)
        self.assertEqual(ProfitParams(t=0.3).t, 0.3)
        self.assertAlmostEqual(ProfitParams(price=10, cost=4, t=0.6).t, 0.6, places=15)
        for kwargs in ({"price": 10, "cost": 4, "t": 0.5}, {"price": 10, "cost": 10}, {"price": 10},
                       {"t": 1.0}, {}, {"price": -1, "cost": -2}):
            with self.assertRaises(ProfitParamsError, msg=str(kwargs)):
                ProfitParams(**kwargs)

    def test_optimal_order(self):
        logger.info("Test 2: Critical-Fractile Order Quantity")
        self.assertAlmostEqual(newsvendor_quantile(UNIT, ProfitParams(price=10, cost=4)), 0.6, places=12)

    def test_expected_profit(self):
        logger.info("Test 3: Expected Profit p E[min(D, Q)] - c Q")
        pp = ProfitParams(price=10, cost=4)
        # uniform demand: E[min(D, Q)] = Q - Q^2/2
        self.assertAlmostEqual(expected_profit(UNIT, 0.6, pp), 1.8, delta=1e-9)
        self.assertEqual(expected_profit(UNIT, 0.0, pp), 0.0)
        with self.assertRaises(NegativeOrderError):
            expected_profit(UNIT, -0.1, pp)
        with self.assertRaises(ProfitParamsError):
            expected_profit(UNIT, 0.5, ProfitParams(t=0.6))

    def test_profit_comparison(self):
        logger.info("Test 4: Pooled Against Dedicated Profit")
        m = JointDemandModel(EXP1, EXP1, Copula.independence())
        cmp = profit_comparison(m, ProfitParams(price=10, cost=4), n=100_000, seed=2)
        self.assertAlmostEqual(cmp.dedicated_quantity, 2 * EXP1.quantile(0.6), places=12)
        self.assertGreater(cmp.pooled_profit, cmp.dedicated_profit - 3 * cmp.pooled_stderr)
        self.assertAlmostEqual(cmp.gain, cmp.pooled_profit - cmp.dedicated_profit, places=12)
        self.assertEqual(cmp.to_dict()["n_samples"], 100_000)

class TestPoolingEffect(unittest.TestCase):

    def test_exponential_effect(self):
        logger.info("Test 1: Independent Exponential Effect At t=0.2")
        m = JointDemandModel(EXP1, EXP1, Copula.independence())
        self.assertAlmostEqual(dedicated_total(m, 0.2), -2 * math.log(0.8), places=12)
        self.assertAlmostEqual(pooling_effect(m, 0.2), EXP_EFFECT_T02, delta=1e-7)

    def test_elliptical_effect(self):
        logger.info("Test 2: Gaussian Demand Changes Sign At t=0.5")
        for rho in (-0.5, 0.0, 0.5):
            m = JointDemandModel(MarginalDistribution.normal(0, 1), MarginalDistribution.normal(5, 2),
                                 Copula(CopulaFamily.GAUSSIAN, rho))
            self.assertLessEqual(abs(pooling_effect(m, 0.5)), 1e-6)
            self.assertGreater(pooling_effect(m, 0.4), 0.0)
            self.assertLess(pooling_effect(m, 0.6), 0.0)

    def test_comonotone_null(self):
        logger.info("Test 3: Comonotone Demand Has No Pooling Effect")
        for m1, m2 in ((B55, B55), (B28, B82), (EXP1, EXP1)):
            m = JointDemandModel(m1, m2, Copula.comonotone())
            for t in (i / 100 for i in range(1, 100)):
                self.assertLessEqual(abs(pooling_effect(m, t)), 1e-6, msg=f"{m.label()} t={t}")

    def test_radially_symmetric_effect(self):
        logger.info("Test 4: Frank Copula On Symmetric Margins Gives An Odd Effect")
        m = JointDemandModel(B55, B55, Copula(CopulaFamily.FRANK, 5.0))
        self.assertLessEqual(abs(pooling_effect(m, 0.5)), 1e-8)
        for t in (0.1, 0.3):
            self.assertAlmostEqual(pooling_effect(m, t), -pooling_effect(m, 1 - t), delta=1e-8)

    def test_closed_forms(self):
        logger.info("Test 5: Closed Forms For Elliptical Demand")
        self.assertAlmostEqual(normal_pooled_closed_form(0, 1, 0, 1, 0.0, 0.5), 0.0, places=15)
        self.assertAlmostEqual(normal_pooled_closed_form(1, 3, 2, 4, 0.0, 0.8413447460685429), 8.0, delta=1e-9)
        m = JointDemandModel(MarginalDistribution.student(4, 0, 1), MarginalDistribution.student(4, 5, 2),
                             Copula(CopulaFamily.STUDENT, 0.5, df=4.0))
        expected = student_pooled_closed_form(0, 1, 5, 2, 0.5, 0.3, df=4.0)
        self.assertAlmostEqual(m.sum_quantile(0.3).point, expected, delta=1e-5)

class TestPoolingCurve(unittest.TestCase):

    def test_quadrature_curve(self):
        logger.info("Test 1: Curve Columns Are Consistent")
        m = JointDemandModel(B28, B82, Copula(CopulaFamily.CLAYTON, 2.0))
        grid = [0.1, 0.5, 0.9]
        curve = pooling_curve(m, grid)
        self.assertEqual(len(curve), 3)
        self.assertEqual(curve.method, CurveMethod.QUADRATURE)
        for t, d, p, e, pct, ci in curve.rows():
            self.assertAlmostEqual(e, p - d, places=14)
            self.assertAlmostEqual(pct * d / 100, e, places=12)
            self.assertEqual(ci, 0.0)
        self.assertEqual(curve.missing, {})

    def test_monte_carlo_curve(self):
        logger.info("Test 2: Monte Carlo Curve Shares One Sample")
        m = JointDemandModel(EXP1, EXP1, Copula.independence())
        curve = pooling_curve(m, [0.2, 0.5], CurveMethod.MONTE_CARLO, n_samples=50_000, seed=1)
        self.assertEqual(curve.method, CurveMethod.MONTE_CARLO)
        self.assertTrue(all(ci > 0 for ci in curve.ci_halfwidth))
        self.assertAlmostEqual(curve.effect[0], EXP_EFFECT_T02, delta=3 * curve.ci_halfwidth[0])
        with self.assertRaises(SampleSizeError):
            pooling_curve(m, [0.5], CurveMethod.MONTE_CARLO, n_samples=100)

    def test_failed_points_are_missing(self):
        logger.info("Test 3: A Failed Point Becomes Missing, The Rest Survive")
        m = JointDemandModel(B55, B55, Copula(CopulaFamily.GUMBEL, 2.0))
        original = JointDemandModel.sum_quantile

        def flaky(self, t, *args, **kwargs):
            if abs(t - 0.5) < 1e-12:
                raise QuadratureError("forced", achieved=1e-3, requested=1e-11)
            return original(self, t, *args, **kwargs)

        with patch.object(JointDemandModel, "sum_quantile", flaky):
            curve = pooling_curve(m, [0.3, 0.5, 0.7])
        self.assertEqual(list(curve.missing), [1])
        self.assertIn("QuadratureError", curve.missing[1])
        self.assertTrue(math.isnan(curve.pooled[1]))
        self.assertFalse(math.isnan(curve.pooled[0]))
        self.assertFalse(math.isnan(curve.pooled[2]))

    def test_effect_pct_undefined_for_nonpositive_dedicated(self):
        logger.info("Test 4: Relative Effect Is NaN When Dedicated <= 0")
        m = JointDemandModel(MarginalDistribution.normal(0, 1), MarginalDistribution.normal(0, 1), Copula.independence())
        curve = pooling_curve(m, [0.3])
        self.assertLess(curve.dedicated[0], 0.0)
        self.assertTrue(math.isnan(curve.effect_pct[0]))
        self.assertFalse(math.isnan(curve.effect[0]))

class TestThresholds(unittest.TestCase):

    def _model(self) -> JointDemandModel:
        return JointDemandModel(UNIT, UNIT, Copula.independence())

    def test_single_root(self):
        logger.info("Test 1: One Sign Change")
        report = find_thresholds(self._model(), effect_fn=lambda t: 0.3 - t)
        self.assertEqual(report.sign_pattern, "+-")
        self.assertTrue(report.unique)
        self.assertAlmostEqual(report.roots[0], 0.3, delta=1e-6)
        lo, hi = report.brackets[0]
        self.assertLess(lo, 0.3)
        self.assertGreater(hi, 0.3)

    def test_two_roots(self):
        logger.info("Test 2: Two Sign Changes And Regions")
        report = find_thresholds(self._model(), effect_fn=lambda t: (t - 0.2) * (t - 0.6))
        self.assertEqual(report.sign_pattern, "+-+")
        self.assertFalse(report.unique)
        self.assertEqual(len(report.roots), 2)
        self.assertAlmostEqual(report.roots[0], 0.2, delta=1e-6)
        self.assertAlmostEqual(report.roots[1], 0.6, delta=1e-6)
        positive = report.positive_regions()
        self.assertEqual(len(positive), 2)
        self.assertAlmostEqual(positive[0][1], 0.2, delta=1e-6)
        self.assertAlmostEqual(positive[1][0], 0.6, delta=1e-6)

    def test_plateau(self):
        logger.info("Test 3: Zero Plateau Is Reported, Not A Root")
        report = find_thresholds(self._model(), effect_fn=lambda t: 0.0 if 0.4 < t < 0.6 else 0.5 - t)
        self.assertEqual(report.sign_pattern, "+0-")
        self.assertEqual(report.roots, [])
        self.assertEqual(len(report.plateaus), 1)
        lo, hi = report.plateaus[0]
        self.assertAlmostEqual(lo, 0.405, delta=0.01)
        self.assertAlmostEqual(hi, 0.595, delta=0.01)

    def test_transitional_zero_is_dropped(self):
        logger.info("Test 4: A Lone Zero Grid Point Is Not A Plateau")
        # t = 0.5 is on the grid and evaluates to exactly zero
        report = find_thresholds(self._model(), scan_points=99, effect_fn=lambda t: 0.5 - t)
        self.assertEqual(report.sign_pattern, "+-")
        self.assertEqual(report.plateaus, [])
        self.assertAlmostEqual(report.roots[0], 0.5, delta=1e-6)

    def test_elliptical_threshold(self):
        logger.info("Test 5: Gaussian Demand Has A Unique Threshold At 0.5")
        m = JointDemandModel(MarginalDistribution.normal(0, 1), MarginalDistribution.normal(5, 2),
                             Copula(CopulaFamily.GAUSSIAN, 0.5))
        report = find_thresholds(m, scan_points=99)
        self.assertTrue(report.unique)
        self.assertAlmostEqual(report.roots[0], 0.5, delta=1e-4)

    def test_comonotone_pattern(self):
        logger.info("Test 6: Comonotone Demand Is One Zero Plateau")
        report = find_thresholds(JointDemandModel(B55, B55, Copula.comonotone()), scan_points=49)
        self.assertEqual(report.sign_pattern, "0")
        self.assertEqual(report.roots, [])
        self.assertEqual(len(report.plateaus), 1)

    def test_scan_parameters(self):
        logger.info("Test 7: Scan Parameter Validation")
        with self.assertRaises(ScanParameterError):
            find_thresholds(self._model(), scan_points=5)
        with self.assertRaises(ScanParameterError):
            find_thresholds(self._model(), zero_tol=0.0)

if __name__ == "__main__":
    unittest.main()
