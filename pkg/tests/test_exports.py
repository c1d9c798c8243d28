import unittest
import logging
import json
import math
import sys
from pathlib import Path

# Adjust path / Import
sys.path.append(str(Path(__file__).resolve().parent.parent / "copula_pooling"))

from models import CurveMethod, PoolingCurve, ThresholdReport
from exports import CSV_HEADER, ExportFormatError, curve_from_csv, curve_to_csv, format_number, thresholds_to_json

# Configure Logging
logging.basicConfig(level=logging.INFO)
logger = logging.getLogger("ExportsTest")

def _curve() -> PoolingCurve:
    return PoolingCurve(
        t_grid=[0.1, 0.5, 0.9],
        dedicated=[0.25, 1.0, 1.75],
        pooled=[0.3, math.nan, 1.7],
        effect=[0.05, math.nan, -0.05],
        effect_pct=[20.0, math.nan, -2.857142857142857],
        ci_halfwidth=[0.0, math.nan, 0.0],
        missing={1: "QuadratureError: forced"},
    )

class TestCurveCsv(unittest.TestCase):

    def test_header_and_rows(self):
        logger.info("Test 1: CSV Header And Full-Precision Rows")
        text = curve_to_csv(_curve())
        lines = text.splitlines()
        self.assertEqual(lines[0], ",".join(CSV_HEADER))
        self.assertEqual(len(lines), 4)
        self.assertTrue(text.endswith("\n"))
        self.assertIn("nan", lines[2])
        self.assertEqual(format_number(0.1), "0.10000000000000001")
        self.assertEqual(float(format_number(1 / 3)), 1 / 3)

    def test_read_back(self):
        logger.info("Test 2: Values Survive A Write And Read")
        curve = _curve()
        back = curve_from_csv(curve_to_csv(curve))
        self.assertEqual(back.t_grid, curve.t_grid)
        self.assertEqual(back.dedicated, curve.dedicated)
        self.assertEqual(back.pooled[0], 0.3)
        self.assertEqual(list(back.missing), [1])
        for t, d, p, e, pct, ci in back.rows():
            if math.isnan(p):
                continue
            self.assertAlmostEqual(e, p - d, places=14)

    def test_bad_input(self):
        logger.info("Test 3: Malformed CSV Rejected")
        with self.assertRaises(ExportFormatError):
            curve_from_csv("a,b,c\n1,2,3\n")
        with self.assertRaises(ExportFormatError):
            curve_from_csv(",".join(CSV_HEADER) + "\n0.5,1,2\n")
        with self.assertRaises(ExportFormatError):
            curve_from_csv(",".join(CSV_HEADER) + "\n0.5,1,2,x,4,5\n")
        with self.assertRaises(ExportFormatError):
            curve_from_csv("")

class TestSerialisation(unittest.TestCase):

    def test_thresholds_json(self):
        logger.info("Test 1: Threshold Report As JSON")
        report = ThresholdReport(roots=[0.3], brackets=[(0.295, 0.305)], sign_pattern="+-", unique=True,
                                 regions=[("+", 0.005, 0.3), ("-", 0.3, 0.995)])
        data = json.loads(thresholds_to_json(report))
        self.assertEqual(data["roots"], [0.3])
        self.assertTrue(data["unique"])
        self.assertEqual(data["sign_pattern"], "+-")
        self.assertEqual(ThresholdReport.from_dict(data).regions, report.regions)

    def test_curve_dict_uses_null_for_missing(self):
        logger.info("Test 2: Curve Dict Replaces NaN With None")
        data = _curve().to_dict()
        self.assertIsNone(data["pooled"][1])
        self.assertEqual(data["missing"], {"1": "QuadratureError: forced"})
        json.dumps(data, allow_nan=False)
        back = PoolingCurve.from_dict(data)
        self.assertTrue(math.isnan(back.pooled[1]))
        self.assertEqual(back.missing, {1: "QuadratureError: forced"})
        self.assertEqual(back.method, CurveMethod.QUADRATURE)

    def test_column_length_mismatch(self):
        logger.info("Test 3: Columns Must Match The Grid")
        with self.assertRaises(ValueError):
            PoolingCurve([0.1, 0.2], [1.0], [1.0], [0.0], [0.0], [0.0])

if __name__ == "__main__":
    unittest.main()
