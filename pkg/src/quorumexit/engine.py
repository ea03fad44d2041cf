"""Per-sample adaptive inference: staged voting, gating, and cost accounting.

For each sample the engine walks the exit stages in order. At every stage it
polls the learners in non-descending cost order until the vote is settled
(the pivot), then consults the exit gate when a consensus was reached. Costs
are charged at every visited stage with the pivot-rank formulas:

    latency contribution  = C[pi(m), e]
    energy  contribution  = sum_{k<=m} C[pi(k), e] + (K - 1 - m) * C[pi(m), e]

i.e. the pivot's own cost bounds the completed lighter work plus the leaked
work of the heavier learners interrupted when the pivot finished. If no stage
triggers an exit, the prediction at the final stage is forced.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bundle import Bundle, CostModel
from .gate import ExitCriterion, GateDecision, evaluate_gate
from .voting import OutcomeKind, QuorumOutcome, cast_vote, run_quorum, vote_order


@dataclass(frozen=True)
class StageRecord:
    """One visited exit stage: vote outcome, gate verdict, cost charges."""

    exit_index: int
    outcome: QuorumOutcome
    gate: GateDecision | None
    fm_contrib: float
    fmt_contrib: float


@dataclass(frozen=True)
class InferenceTrace:
    """Full per-sample record of one adaptive inference run.

    ``confidence`` is the decided sample's confidence statistic: the gate's
    sample mean when a gate fired (or existed at the final stage), otherwise
    the mean max-softmax over the final-stage voters of the forced class.
    """

    sample_index: int
    predicted_class: int
    decided_exit: int
    forced: bool
    stages: tuple[StageRecord, ...]
    f_m: float
    f_mt: float
    confidence: float


@dataclass(frozen=True)
class DatasetSummary:
    n_samples: int
    accuracy: float
    mean_f_m: float
    mean_f_mt: float


def stage_orders(costs: CostModel, freeze_order: bool = False) -> list[list[int]]:
    """Voting order per stage; optionally frozen to the stage-0 order."""
    orders = [vote_order(costs.costs[:, e]) for e in range(costs.E)]
    if freeze_order:
        orders = [orders[0]] * costs.E
    return orders


def _stage_costs(costs: np.ndarray, order: list[int], e: int, m: int, k: int):
    pivot_cost = float(costs[order[m], e])
    completed = float(sum(costs[order[r], e] for r in range(m + 1)))
    overhead = (k - 1 - m) * pivot_cost
    return pivot_cost, completed + overhead


def infer_sample(
    sample_probs: np.ndarray,
    costs: CostModel,
    criterion: ExitCriterion,
    freeze_order: bool = False,
    sample_index: int = 0,
) -> InferenceTrace:
    """Run adaptive inference for one sample.

    ``sample_probs`` is the [k][e][c] probability slice for the sample.
    """
    probs = np.asarray(sample_probs)
    if probs.ndim != 3:
        raise ValueError(f"sample slice must be [k][e][c], got {probs.ndim}-D")
    k, num_exits, num_classes = probs.shape
    if (k, num_exits) != (costs.K, costs.E):
        raise ValueError(
            f"sample slice shape {(k, num_exits)} does not match cost table "
            f"{(costs.K, costs.E)}"
        )
    if k < 2:
        raise ValueError(f"quorum inference needs K >= 2 learners, got {k}")

    orders = stage_orders(costs, freeze_order)
    stages: list[StageRecord] = []
    f_m = 0.0
    f_mt = 0.0
    votes: list[tuple[int, float]] = []
    for e in range(num_exits):
        order = orders[e]
        votes = [cast_vote(probs[learner, e]) for learner in order]
        outcome = run_quorum(votes, k, num_classes)
        m = outcome.pivot_rank
        fm_contrib, fmt_contrib = _stage_costs(costs.costs, order, e, m, k)
        f_m += fm_contrib
        f_mt += fmt_contrib

        gate = None
        if outcome.kind is OutcomeKind.REACHED:
            supporter_confs = [votes[r][1] for r in outcome.supporters]
            gate = evaluate_gate(supporter_confs, criterion, stage=e)
        stages.append(StageRecord(e, outcome, gate, fm_contrib, fmt_contrib))

        if gate is not None and gate.exit:
            return InferenceTrace(
                sample_index=sample_index,
                predicted_class=outcome.consensus_class,
                decided_exit=e,
                forced=False,
                stages=tuple(stages),
                f_m=f_m,
                f_mt=f_mt,
                confidence=gate.sample_mean,
            )

    # no stage triggered: force the prediction at the last stage, using the
    # full K-vote tally when that stage never settled on a consensus
    last = stages[-1]
    if last.outcome.kind is OutcomeKind.REACHED:
        predicted = last.outcome.consensus_class
        confidence = last.gate.sample_mean if last.gate is not None else 0.0
    else:
        tally = np.zeros(num_classes, dtype=np.int64)
        for cls, _conf in votes:
            tally[cls] += 1
        predicted = int(np.argmax(tally))
        backer_confs = [conf for cls, conf in votes if cls == predicted]
        confidence = float(np.mean(backer_confs))
    return InferenceTrace(
        sample_index=sample_index,
        predicted_class=predicted,
        decided_exit=num_exits - 1,
        forced=True,
        stages=tuple(stages),
        f_m=f_m,
        f_mt=f_mt,
        confidence=confidence,
    )


def infer_dataset(
    bundle: Bundle,
    criterion: ExitCriterion,
    freeze_order: bool = False,
) -> tuple[list[InferenceTrace], DatasetSummary]:
    """Run adaptive inference over a bundle, in sample-index order."""
    tensor, labels, costs = bundle
    labels.check_against(tensor)
    costs.check_against(tensor)
    traces = [
        infer_sample(
            tensor.probs[:, :, n, :],
            costs,
            criterion,
            freeze_order=freeze_order,
            sample_index=n,
        )
        for n in range(tensor.N)
    ]
    correct = sum(
        1 for t in traces if t.predicted_class == int(labels.y[t.sample_index])
    )
    n = len(traces)
    summary = DatasetSummary(
        n_samples=n,
        accuracy=correct / n,
        mean_f_m=float(np.sum([t.f_m for t in traces], dtype=np.float64)) / n,
        mean_f_mt=float(np.sum([t.f_mt for t in traces], dtype=np.float64)) / n,
    )
    return traces, summary
