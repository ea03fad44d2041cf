"""Incremental majority voting with pivot detection.

Voters are polled one by one in MACs order. The pivot is the first rank at
which the outcome is mathematically settled, either because the leading class
already holds a strict majority (quorum ``floor(K/2) + 1``) or because no
class can reach that majority with the votes still outstanding.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class OutcomeKind(enum.Enum):
    REACHED = "reached"
    UNFEASIBLE = "unfeasible"


def quorum_size(k: int) -> int:
    """Strict majority of ``k`` voters."""
    return k // 2 + 1


def cast_vote(probs_row: Sequence[float]) -> tuple[int, float]:
    """Turn one class-probability row into a (class, confidence) vote.

    Argmax ties break to the lowest class index, so votes are deterministic
    across platforms.
    """
    row = np.asarray(probs_row)
    cls = int(np.argmax(row))
    return cls, float(row[cls])


def vote_order(stage_costs: Sequence[float]) -> list[int]:
    """Permutation of learners in non-descending cost order.

    Equal costs keep ascending learner index (stable sort).
    """
    return [int(i) for i in np.argsort(np.asarray(stage_costs), kind="stable")]


@dataclass
class QuorumState:
    """Running tally while voters are polled."""

    num_classes: int
    counts: list[int] = field(default_factory=list)
    votes_cast: int = 0
    per_voter_class: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self):
        if not self.counts:
            self.counts = [0] * self.num_classes

    def add_vote(self, rank: int, cls: int) -> None:
        self.counts[cls] += 1
        self.votes_cast += 1
        self.per_voter_class.append((rank, cls))

    def leader(self) -> int:
        # lowest class index wins ties
        return int(np.argmax(self.counts))


@dataclass(frozen=True)
class QuorumOutcome:
    """Vote outcome at the pivot rank.

    ``supporters`` are the 0-based ranks (in cost order) that voted for the
    consensus class among voters up to and including the pivot. When the
    outcome is UNFEASIBLE the consensus class is still the tally argmax at
    the pivot, reported for diagnostics only.
    """

    kind: OutcomeKind
    pivot_rank: int
    consensus_class: int
    supporters: tuple[int, ...]
    counts: tuple[int, ...]


def run_quorum(
    votes_in_order: Sequence[tuple[int, float]], k: int, num_classes: int
) -> QuorumOutcome:
    """Poll ``k`` votes (already in cost order) and stop at the pivot.

    Returns the outcome at the minimal rank ``m`` where either the leading
    class holds >= floor(K/2)+1 votes (REACHED) or no class can reach that
    count even if every remaining vote goes to it (UNFEASIBLE).
    """
    if k < 2:
        raise ValueError(f"quorum needs at least two voters, got K={k}")
    if len(votes_in_order) != k:
        raise ValueError(f"expected {k} votes, got {len(votes_in_order)}")

    needed = quorum_size(k)
    state = QuorumState(num_classes)
    for rank, (cls, _conf) in enumerate(votes_in_order):
        if not 0 <= cls < num_classes:
            raise ValueError(f"vote class {cls} out of range for C={num_classes}")
        state.add_vote(rank, cls)
        leader = state.leader()
        if state.counts[leader] >= needed:
            supporters = tuple(r for r, c in state.per_voter_class if c == leader)
            return QuorumOutcome(
                OutcomeKind.REACHED, rank, leader, supporters, tuple(state.counts)
            )
        remaining = k - state.votes_cast
        if all(count + remaining < needed for count in state.counts):
            supporters = tuple(r for r, c in state.per_voter_class if c == leader)
            return QuorumOutcome(
                OutcomeKind.UNFEASIBLE, rank, leader, supporters, tuple(state.counts)
            )
    # unreachable: after the final vote, remaining = 0, so one branch fires
    raise AssertionError("vote sequence ended without a pivot")
