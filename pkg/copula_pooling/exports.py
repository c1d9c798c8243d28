import csv
import io
import json
import logging
import math

from models import CurveMethod, PoolingCurve, ThresholdReport

logger = logging.getLogger("Exports")

CSV_HEADER = ("t", "dedicated", "pooled", "effect", "effect_pct", "ci_halfwidth")

class ExportFormatError(ValueError):
    """Raised when a curve CSV cannot be parsed."""
    pass

def format_number(value: float) -> str:
    """17 significant digits, dot decimal separator regardless of locale."""
    return format(float(value), ".17g")

def curve_to_csv(curve: PoolingCurve) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in curve.rows():
        writer.writerow([format_number(v) for v in row])
    return buffer.getvalue()

def curve_from_csv(text: str, method: CurveMethod = CurveMethod.QUADRATURE) -> PoolingCurve:
    """Reads a curve back; rows with a NaN pooled level become missing points."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
        raise ExportFormatError(f"expected header {','.join(CSV_HEADER)}, got {header}")

    columns = [[] for _ in CSV_HEADER]
    for line_no, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(CSV_HEADER):
            raise ExportFormatError(f"line {line_no}: expected {len(CSV_HEADER)} fields, got {len(row)}")
        try:
            values = [float(v) for v in row]
        except ValueError as e:
            raise ExportFormatError(f"line {line_no}: {e}")
        for column, value in zip(columns, values):
            column.append(value)

    missing = {i: "missing in source CSV" for i, v in enumerate(columns[2]) if math.isnan(v)}
    return PoolingCurve(
        t_grid=columns[0],
        dedicated=columns[1],
        pooled=columns[2],
        effect=columns[3],
        effect_pct=columns[4],
        ci_halfwidth=columns[5],
        method=method,
        missing=missing,
    )

def thresholds_to_json(report: ThresholdReport) -> str:
    return json.dumps(report.to_dict(), indent=2) + "\n"
