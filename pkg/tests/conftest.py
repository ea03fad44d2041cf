"""Shared helpers: random bundle builders and independent cost oracles."""

from __future__ import annotations

import numpy as np

from quorumexit.bundle import Bundle, CostModel, LabelVector, PredictionTensor


def random_bundle(
    rng: np.random.Generator,
    k: int,
    num_exits: int,
    n: int,
    c: int,
    integer_costs: bool = True,
    peaked: bool = False,
) -> Bundle:
    """Valid random bundle; Dirichlet rows, optionally sharpened."""
    alpha = 0.5 if not peaked else 0.15
    probs = rng.dirichlet([alpha] * c, size=(k, num_exits, n)).astype(np.float32)
    if integer_costs:
        costs = rng.integers(1, 1000, size=(k, num_exits)).astype(np.float64)
    else:
        costs = rng.uniform(1.0, 1000.0, size=(k, num_exits))
    labels = rng.integers(0, c, size=n)
    return Bundle(PredictionTensor(probs), LabelVector(labels), CostModel(costs))


def oracle_pivot(classes: list[int], k: int, c: int):
    """Brute-force prefix-decidability oracle for the voting pivot.

    Re-derives the tally from scratch at every prefix length and tests both
    stopping conditions independently of the production code path.
    """
    needed = k // 2 + 1
    for prefix in range(1, k + 1):
        counts = [0] * c
        for cls in classes[:prefix]:
            counts[cls] += 1
        best = max(counts)
        leader = counts.index(best)
        if best >= needed:
            return "reached", prefix - 1, leader
        remaining = k - prefix
        if max(count + remaining for count in counts) < needed:
            return "unfeasible", prefix - 1, leader
    raise AssertionError("oracle: sequence ended undecided")


def oracle_trace_costs(trace, costs: CostModel):
    """Naive re-evaluation of the latency/energy sums from a trace's pivots.

    Independently re-sorts each stage's cost column and re-sums both
    formulas from the recorded per-stage pivot ranks, reading the latency
    term as the max over the polled voters (which the sort makes the
    pivot's own cost).
    """
    table = costs.costs
    k = table.shape[0]
    f_m = 0.0
    f_mt = 0.0
    for record in trace.stages:
        e = record.exit_index
        order = sorted(range(k), key=lambda i: (table[i, e], i))
        m = record.outcome.pivot_rank
        pivot_cost = max(table[order[r], e] for r in range(m + 1))
        completed = sum(table[order[r], e] for r in range(m + 1))
        f_m += pivot_cost
        f_mt += completed + (k - 1 - m) * pivot_cost
    return f_m, f_mt
