"""Calibration, diversity, and usage metrics over inference traces.

Reports are plain dataclasses with CSV/JSON row helpers so the CLI can emit
them as plot-ready artifacts. Binning for the calibration error follows the
right-closed convention: bin b covers (b/M, (b+1)/M], with confidence 0
assigned to the first bin.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .bundle import Bundle, LabelVector, PredictionTensor
from .engine import InferenceTrace, infer_dataset
from .gate import ExitCriterion

DEFAULT_BINS = 15


@dataclass(frozen=True)
class BinStats:
    count: int
    mean_confidence: float
    mean_accuracy: float


@dataclass(frozen=True)
class CalibrationReport:
    num_bins: int
    bins: tuple[BinStats, ...]
    ece: float


@dataclass(frozen=True)
class DiversityReport:
    """Per-exit pairwise disagreement; matrices are symmetric, zero diagonal."""

    per_exit_ppd: tuple[float, ...]
    disagreement: tuple[np.ndarray, ...]


@dataclass(frozen=True)
class UsageReport:
    """Where samples exit and which voter rank settles them.

    ``pivot_ratio`` only has entries for exits that decided at least one
    sample; each inner mapping sums to 1 over its pivot-rank support.
    """

    exit_ratio: tuple[float, ...]
    pivot_ratio: dict[int, dict[int, float]]


@dataclass(frozen=True)
class SweepRow:
    criterion: str
    tau: float
    alpha: float
    accuracy: float
    mean_f_m: float
    mean_f_mt: float


def ece(
    confidences: Sequence[float], correct_flags: Sequence[bool], num_bins: int
) -> CalibrationReport:
    """Expected calibration error with M equal-width right-closed bins."""
    if len(confidences) != len(correct_flags):
        raise ValueError(
            f"length mismatch: {len(confidences)} confidences vs "
            f"{len(correct_flags)} flags"
        )
    if num_bins < 1:
        raise ValueError(f"bin count must be >= 1, got {num_bins}")
    conf = np.asarray(confidences, dtype=np.float64)
    if conf.size and (conf.min() < 0.0 or conf.max() > 1.0):
        raise ValueError("confidences outside [0, 1]")
    hits = np.asarray(correct_flags, dtype=np.float64)

    idx = np.clip(np.ceil(conf * num_bins).astype(int) - 1, 0, num_bins - 1)
    total = conf.size
    bins = []
    weighted_gap = 0.0
    for b in range(num_bins):
        mask = idx == b
        count = int(mask.sum())
        if count:
            mean_conf = float(conf[mask].mean())
            mean_acc = float(hits[mask].mean())
            weighted_gap += (count / total) * abs(mean_acc - mean_conf)
        else:
            mean_conf = 0.0
            mean_acc = 0.0
        bins.append(BinStats(count, mean_conf, mean_acc))
    return CalibrationReport(num_bins, tuple(bins), weighted_gap)


def ppd(predictions: Sequence[Sequence[int]]) -> float:
    """Mean pairwise argmax-disagreement rate across learners.

    ``predictions`` holds one class vector per learner over the same samples.
    """
    preds = np.asarray(predictions)
    m = preds.shape[0]
    if m < 2:
        raise ValueError(f"disagreement needs at least two learners, got {m}")
    total = 0.0
    pairs = 0
    for i in range(m):
        for j in range(i + 1, m):
            total += float(np.mean(preds[i] != preds[j]))
            pairs += 1
    return total / pairs


def disagreement_matrix(predictions: Sequence[Sequence[int]]) -> np.ndarray:
    preds = np.asarray(predictions)
    m = preds.shape[0]
    mat = np.zeros((m, m), dtype=np.float64)
    for i in range(m):
        for j in range(i + 1, m):
            rate = float(np.mean(preds[i] != preds[j]))
            mat[i, j] = mat[j, i] = rate
    return mat


def diversity_report(tensor: PredictionTensor) -> DiversityReport:
    """PPD and the pairwise disagreement matrix at every exit stage."""
    per_exit = []
    matrices = []
    for e in range(tensor.E):
        preds = np.argmax(tensor.probs[:, e, :, :], axis=2)
        per_exit.append(ppd(preds))
        matrices.append(disagreement_matrix(preds))
    return DiversityReport(tuple(per_exit), tuple(matrices))


def usage_report(
    traces: Sequence[InferenceTrace], num_exits: int | None = None
) -> UsageReport:
    """Exit-stage and pivot-rank distributions over decided samples."""
    if not traces:
        raise ValueError("usage report needs at least one trace")
    if num_exits is None:
        num_exits = max(t.decided_exit for t in traces) + 1
    n = len(traces)
    exit_counts = [0] * num_exits
    pivot_counts: dict[int, dict[int, int]] = {}
    for trace in traces:
        e = trace.decided_exit
        exit_counts[e] += 1
        pivot = trace.stages[-1].outcome.pivot_rank
        pivot_counts.setdefault(e, {})[pivot] = (
            pivot_counts.get(e, {}).get(pivot, 0) + 1
        )
    exit_ratio = tuple(c / n for c in exit_counts)
    pivot_ratio = {
        e: {m: c / exit_counts[e] for m, c in sorted(counts.items())}
        for e, counts in sorted(pivot_counts.items())
    }
    return UsageReport(exit_ratio, pivot_ratio)


def pivot_rank_share(traces: Sequence[InferenceTrace], rank: int) -> float:
    """Fraction of all decisions settled by the given voter rank."""
    hits = sum(1 for t in traces if t.stages[-1].outcome.pivot_rank == rank)
    return hits / len(traces)


def sweep(bundle: Bundle, criteria: Sequence[ExitCriterion]) -> list[SweepRow]:
    """One summary row per exit-criterion configuration, in the given order."""
    rows = []
    for criterion in criteria:
        _traces, summary = infer_dataset(bundle, criterion)
        tau = criterion.tau_conf
        rows.append(
            SweepRow(
                criterion=criterion.kind.value,
                tau=tau if not isinstance(tau, tuple) else float(tau[0]),
                alpha=criterion.alpha,
                accuracy=summary.accuracy,
                mean_f_m=summary.mean_f_m,
                mean_f_mt=summary.mean_f_mt,
            )
        )
    return rows


def calibration_by_exit(
    traces: Sequence[InferenceTrace],
    labels: LabelVector,
    num_bins: int = DEFAULT_BINS,
) -> dict[str, CalibrationReport]:
    """Per-exit calibration of the decided samples, plus the pooled 'all' row.

    A sample's confidence is its trace confidence statistic (the gate sample
    mean at the deciding exit).
    """
    groups: dict[str, tuple[list[float], list[bool]]] = {}
    all_conf: list[float] = []
    all_hit: list[bool] = []
    for trace in traces:
        hit = trace.predicted_class == int(labels.y[trace.sample_index])
        key = f"exit_{trace.decided_exit}"
        conf_list, hit_list = groups.setdefault(key, ([], []))
        conf_list.append(trace.confidence)
        hit_list.append(hit)
        all_conf.append(trace.confidence)
        all_hit.append(hit)
    report = {
        key: ece(confs, hits, num_bins)
        for key, (confs, hits) in sorted(groups.items())
    }
    report["all"] = ece(all_conf, all_hit, num_bins)
    return report


# --- serialization ----------------------------------------------------------


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_csv_cell(v) for v in row) + "\n")


def _csv_cell(value) -> str:
    if isinstance(value, float):
        return repr(value) if math.isfinite(value) else str(value)
    return str(value)


def write_json(path: str, payload) -> None:
    with open(path, "w", encoding="ascii") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


SWEEP_HEADER = ("criterion", "tau", "alpha", "accuracy", "mean_f_m", "mean_f_mt")


def sweep_rows(rows: Sequence[SweepRow]) -> list[tuple]:
    return [
        (r.criterion, r.tau, r.alpha, r.accuracy, r.mean_f_m, r.mean_f_mt)
        for r in rows
    ]


CALIBRATION_HEADER = ("population", "bin", "count", "mean_confidence", "mean_accuracy", "ece")


def calibration_rows(reports: dict[str, CalibrationReport]) -> list[tuple]:
    rows = []
    for name, report in reports.items():
        for b, stats in enumerate(report.bins):
            rows.append(
                (name, b, stats.count, stats.mean_confidence, stats.mean_accuracy, report.ece)
            )
    return rows


DIVERSITY_HEADER = ("exit", "ppd")


def diversity_rows(report: DiversityReport) -> list[tuple]:
    return [(e, v) for e, v in enumerate(report.per_exit_ppd)]


USAGE_HEADER = ("metric", "value")


def usage_rows(report: UsageReport) -> list[tuple]:
    rows = [(f"exit_ratio[{e}]", v) for e, v in enumerate(report.exit_ratio)]
    for e, dist in report.pivot_ratio.items():
        rows.extend((f"pivot_ratio[{e}][{m}]", v) for m, v in dist.items())
    return rows


def calibration_payload(reports: dict[str, CalibrationReport]) -> dict:
    return {
        name: {
            "num_bins": r.num_bins,
            "ece": r.ece,
            "bins": [
                {
                    "count": b.count,
                    "mean_confidence": b.mean_confidence,
                    "mean_accuracy": b.mean_accuracy,
                }
                for b in r.bins
            ],
        }
        for name, r in reports.items()
    }


def diversity_payload(report: DiversityReport) -> dict:
    return {
        "per_exit_ppd": list(report.per_exit_ppd),
        "disagreement": [m.tolist() for m in report.disagreement],
    }


def usage_payload(report: UsageReport) -> dict:
    return {
        "exit_ratio": list(report.exit_ratio),
        "pivot_ratio": {
            str(e): {str(m): v for m, v in dist.items()}
            for e, dist in report.pivot_ratio.items()
        },
    }
