"""Evaluation: confusion matrix, per-class P/R/F1, macro averages, FAR.

FAR here is the false-dispatch rate: the fraction of non-Alarm test samples
classified as Alarm, since an Alarm verdict is what triggers a verification
dispatch.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .trace_io import ThreatClass

N_CLASSES = 3

# Deployed-system reference figures (percent), shown alongside ablation rows.
FIELD_REFERENCE = {"p_ave": 97.82, "r_ave": 97.67, "f1_ave": 97.69, "far": 0.99}


@dataclass
class MetricsReport:
    confusion: np.ndarray        # (3, 3) ints, rows = true, cols = predicted
    precision: np.ndarray        # per class
    recall: np.ndarray
    f1: np.ndarray
    p_ave: float
    r_ave: float
    f1_ave: float
    far: float
    wall_time_s: float = 0.0

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.confusion) / max(self.confusion.sum(), 1))

    def metric_tuple(self):
        """The deterministic metric values (excludes wall time)."""
        return (
            tuple(self.confusion.ravel().tolist()),
            tuple(self.precision.tolist()),
            tuple(self.recall.tolist()),
            tuple(self.f1.tolist()),
            self.p_ave,
            self.r_ave,
            self.f1_ave,
            self.far,
        )


def confusion_matrix(y_true, y_pred) -> np.ndarray:
    conf = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    for t, p in zip(np.asarray(y_true), np.asarray(y_pred)):
        conf[int(t), int(p)] += 1
    return conf


def metrics_from_confusion(conf: np.ndarray, wall_time_s: float = 0.0) -> MetricsReport:
    conf = np.asarray(conf, dtype=np.int64)
    tp = np.diag(conf).astype(np.float64)
    pred_totals = conf.sum(axis=0).astype(np.float64)
    true_totals = conf.sum(axis=1).astype(np.float64)
    precision = np.divide(tp, pred_totals, out=np.zeros(N_CLASSES), where=pred_totals > 0)
    recall = np.divide(tp, true_totals, out=np.zeros(N_CLASSES), where=true_totals > 0)
    pr = precision + recall
    f1 = np.divide(2 * precision * recall, pr, out=np.zeros(N_CLASSES), where=pr > 0)

    alarm = int(ThreatClass.ALARM)
    non_alarm_rows = [c for c in range(N_CLASSES) if c != alarm]
    false_alarms = conf[non_alarm_rows, alarm].sum()
    non_alarm_total = conf[non_alarm_rows, :].sum()
    far = float(false_alarms / non_alarm_total) if non_alarm_total > 0 else 0.0

    return MetricsReport(
        confusion=conf,
        precision=precision,
        recall=recall,
        f1=f1,
        p_ave=float(precision.mean()),
        r_ave=float(recall.mean()),
        f1_ave=float(f1.mean()),
        far=far,
        wall_time_s=wall_time_s,
    )


def evaluate(model, features, labels, batch_size: int = 64) -> MetricsReport:
    """Classify a test set and compute the full metric suite."""
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ValueError("test set is empty")
    t0 = time.perf_counter()
    preds = model.predict(features, batch_size=batch_size)
    wall = time.perf_counter() - t0
    return metrics_from_confusion(confusion_matrix(labels, preds), wall)


def machine_line(name: str, report: MetricsReport) -> str:
    """`variant,P_ave,R_ave,F1_ave,FAR,wall_time_s` with metrics in percent."""
    return (
        f"{name},{report.p_ave * 100:.2f},{report.r_ave * 100:.2f},"
        f"{report.f1_ave * 100:.2f},{report.far * 100:.2f},{report.wall_time_s:.3f}"
    )


def format_report(name: str, report: MetricsReport) -> str:
    class_names = [ThreatClass(c).label for c in range(N_CLASSES)]
    lines = [f"== {name} ==",
             "confusion (rows true / cols predicted): " + " ".join(class_names)]
    for c in range(N_CLASSES):
        lines.append(f"  {class_names[c]:<9s} " + " ".join(f"{v:5d}" for v in report.confusion[c]))
    for c in range(N_CLASSES):
        lines.append(
            f"  {class_names[c]:<9s} P={report.precision[c]:.4f} "
            f"R={report.recall[c]:.4f} F1={report.f1[c]:.4f}"
        )
    lines.append(
        f"  macro     P={report.p_ave:.4f} R={report.r_ave:.4f} "
        f"F1={report.f1_ave:.4f} FAR={report.far:.4f} time={report.wall_time_s:.2f}s"
    )
    return "\n".join(lines)


def format_table(rows) -> str:
    """Ablation table: one line per (name, report), plus the field reference."""
    header = f"{'method':<10s} {'P_ave%':>7s} {'R_ave%':>7s} {'F1_ave%':>8s} {'FAR%':>6s} {'time_s':>8s}"
    lines = [header]
    for name, report in rows:
        lines.append(
            f"{name:<10s} {report.p_ave * 100:7.2f} {report.r_ave * 100:7.2f} "
            f"{report.f1_ave * 100:8.2f} {report.far * 100:6.2f} {report.wall_time_s:8.2f}"
        )
    ref = FIELD_REFERENCE
    lines.append(
        f"{'field-ref':<10s} {ref['p_ave']:7.2f} {ref['r_ave']:7.2f} "
        f"{ref['f1_ave']:8.2f} {ref['far']:6.2f} {'-':>8s}"
    )
    return "\n".join(lines)
