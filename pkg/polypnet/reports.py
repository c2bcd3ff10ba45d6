"""
CSV and JSON serialisation of metric reports and curves.
"""

import csv
import io
import json
import logging
import os
from typing import Dict, List, Optional

from .metrics import METRIC_NAMES, CurveData, MetricReport

logger = logging.getLogger(__name__)


def report_to_csv(report: MetricReport) -> str:
    """One row per image, followed by mean and std summary rows"""
    output = io.StringIO()
    writer = csv.writer(output)
    writer.writerow(["image_id"] + list(METRIC_NAMES))
    for m in report.per_image:
        writer.writerow([m.image_id] + [f"{getattr(m, name):.6f}" for name in METRIC_NAMES])
    writer.writerow(["mean"] + [f"{report.mean[name]:.6f}" for name in METRIC_NAMES])
    writer.writerow(["std"] + [f"{report.std[name]:.6f}" for name in METRIC_NAMES])
    content = output.getvalue()
    output.close()
    return content


def report_to_dict(report: MetricReport, curve: Optional[CurveData] = None) -> Dict:
    data = {
        "name": report.name,
        "threshold": report.threshold,
        "images": len(report.per_image),
        "mean": report.mean,
        "std": report.std,
        "per_image": [dict(image_id=m.image_id, **m.as_dict()) for m in report.per_image],
    }
    if curve is not None:
        data["auc"] = curve.auc
        data["map"] = curve.average_precision
    return data


def curve_to_csv(curve: CurveData, kind: str) -> str:
    """(x, y) pairs of the ROC ("roc": fpr, tpr) or PR ("pr": recall, precision) curve"""
    if kind == "roc":
        header, xs, ys = ["fpr", "tpr"], curve.fpr, curve.tpr
    elif kind == "pr":
        header, xs, ys = ["recall", "precision"], curve.recall, curve.precision
    else:
        raise ValueError(f"unknown curve kind '{kind}', expected 'roc' or 'pr'")
    output = io.StringIO()
    writer = csv.writer(output)
    writer.writerow(header)
    for x, y in zip(xs, ys):
        writer.writerow([f"{x:.8f}", f"{y:.8f}"])
    content = output.getvalue()
    output.close()
    return content


def _write(path: str, content: str):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="") as f:
        f.write(content)


def write_report(directory: str, report: MetricReport, curve: Optional[CurveData] = None) -> List[str]:
    """Write <name>_metrics.csv, <name>_metrics.json and, with curves, ROC/PR CSVs"""
    stem = report.name or "report"
    paths = [os.path.join(directory, f"{stem}_metrics.csv"), os.path.join(directory, f"{stem}_metrics.json")]
    _write(paths[0], report_to_csv(report))
    _write(paths[1], json.dumps(report_to_dict(report, curve), indent=2))
    if curve is not None:
        paths += write_curves(directory, curve, stem)
    logger.info(f"wrote {stem} report to {directory}")
    return paths


def write_curves(directory: str, curve: CurveData, stem: str) -> List[str]:
    paths = []
    for kind in ("roc", "pr"):
        path = os.path.join(directory, f"{stem}_{kind}.csv")
        _write(path, curve_to_csv(curve, kind))
        paths.append(path)
    return paths
