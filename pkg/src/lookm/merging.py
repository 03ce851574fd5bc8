"""Folding evicted KV pairs back into conserved ones.

Matching is many-to-one nearest-neighbor by cosine similarity, computed on
keys only; the resulting groups (and, for weighted merging, the similarity
weights) are reused verbatim for the value vectors. Each strategy is split
into a plan builder and a plan applier so that keys and values provably
receive the identical (group, weight) arithmetic.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import CacheLane, MergeStrategy
from .eviction import EvictionOutcome


@dataclass
class SimilarityAssignment:
    """Evicted-to-conserved matching, in list-index space.

    ``targets[i]`` is the conserved list index matched to evicted list index
    ``i``; ``similarities[i]`` its cosine score. ``groups[j]`` lists the
    evicted indices whose nearest conserved token is ``j`` (its maximum
    similarity set). Pairs involving a zero-norm key get similarity 0 and are
    counted in ``zero_norm_pairs`` for reporting.
    """

    targets: np.ndarray  # (n_evicted,) int64
    similarities: np.ndarray  # (n_evicted,) float64 in [-1, 1]
    groups: dict[int, list[int]]
    zero_norm_pairs: int = 0

    def negative_weight_fraction(self) -> float:
        if len(self.similarities) == 0:
            return 0.0
        return float(np.mean(self.similarities < 0.0))


def match(evicted_keys: np.ndarray, conserved_keys: np.ndarray) -> SimilarityAssignment:
    """Nearest conserved key for every evicted key, by cosine similarity.

    Ties resolve to the lower conserved index. Requires both sets non-empty
    and of equal dimensionality.
    """
    evicted_keys = np.atleast_2d(np.asarray(evicted_keys, dtype=np.float64))
    conserved_keys = np.atleast_2d(np.asarray(conserved_keys, dtype=np.float64))
    if evicted_keys.size == 0 or conserved_keys.size == 0:
        raise ValueError("match requires non-empty evicted and conserved key sets")
    if evicted_keys.shape[1] != conserved_keys.shape[1]:
        raise ValueError(
            f"key dims differ: {evicted_keys.shape[1]} vs {conserved_keys.shape[1]}"
        )

    e_norms = np.linalg.norm(evicted_keys, axis=1)
    c_norms = np.linalg.norm(conserved_keys, axis=1)
    sim = evicted_keys @ conserved_keys.T
    denom = np.outer(e_norms, c_norms)
    zero_mask = denom == 0.0
    with np.errstate(invalid="ignore", divide="ignore"):
        sim = np.where(zero_mask, 0.0, sim / np.where(zero_mask, 1.0, denom))

    targets = np.argmax(sim, axis=1).astype(np.int64)  # argmax takes the lowest index on ties
    similarities = sim[np.arange(len(targets)), targets]
    groups: dict[int, list[int]] = {}
    for i, j in enumerate(targets):
        groups.setdefault(int(j), []).append(i)
    return SimilarityAssignment(
        targets=targets,
        similarities=similarities,
        groups=groups,
        zero_norm_pairs=int(zero_mask.sum()),
    )


@dataclass(frozen=True)
class MergePlan:
    """Per-conserved-token merge recipe: group members and their weights.

    Applying the plan computes, for each conserved index j with members G and
    weights w: new[j] = (old[j] + sum_i w_i * member_i + bias * old[j']) where
    the pivotal strategy's constant contribution from the pre-merge conserved
    token is folded into ``self_weight``. Rows without a group are untouched.
    """

    n_conserved: int
    entries: tuple[tuple[int, tuple[int, ...], tuple[float, ...], float], ...]
    # (conserved index j, evicted member indices, member weights, self_weight)


def build_merge_plan(
    strategy: MergeStrategy, assignment: SimilarityAssignment, n_conserved: int
) -> MergePlan:
    """Translate an assignment into explicit (group, weight) arithmetic.

    self_weight is the total coefficient on the pre-merge conserved vector:
    1 for averaged/weighted merging, 1 + L_sim/2 for pivotal merging (each
    pivotal intermediate contributes half of the conserved token).
    """
    entries = []
    for j in sorted(assignment.groups):
        members = assignment.groups[j]
        l_sim = len(members)
        if strategy is MergeStrategy.AVERAGED:
            weights = tuple(1.0 for _ in members)
            self_weight = 1.0
        elif strategy is MergeStrategy.PIVOTAL:
            weights = tuple(0.5 for _ in members)
            self_weight = 1.0 + 0.5 * l_sim
        elif strategy is MergeStrategy.WEIGHTED:
            weights = tuple(float(assignment.similarities[i]) for i in members)
            self_weight = 1.0
        else:
            raise ValueError(f"no merge plan for strategy {strategy!r}")
        entries.append((j, tuple(members), weights, self_weight))
    return MergePlan(n_conserved=n_conserved, entries=tuple(entries))


def apply_merge_plan(
    plan: MergePlan, conserved: np.ndarray, evicted: np.ndarray
) -> np.ndarray:
    """Apply one plan to a conserved/evicted matrix pair (keys or values).

    Every entry reads the pre-merge conserved row; groups are disjoint, so
    the result is order-independent.
    """
    merged = np.asarray(conserved, dtype=np.float64).copy()
    for j, members, weights, self_weight in plan.entries:
        acc = self_weight * conserved[j]
        for i, w in zip(members, weights):
            acc = acc + w * evicted[i]
        merged[j] = acc / (len(members) + 1)
    return merged


def merge_lane(
    lane: CacheLane,
    outcome: EvictionOutcome,
    strategy: MergeStrategy,
) -> tuple[CacheLane, SimilarityAssignment | None]:
    """Compress one lane: subset to the conserved set, folding evicted rows in.

    With ``MergeStrategy.NONE`` (or nothing evicted) the result is exactly the
    conserved subset. Otherwise the key-derived assignment drives the same
    merge arithmetic on keys and values.
    """
    conserved = outcome.conserved_indices
    evicted = outcome.evicted_indices
    new_keys = lane.keys[conserved]
    new_values = lane.values[conserved]
    new_positions = lane.positions[conserved]

    if strategy is MergeStrategy.NONE or len(evicted) == 0:
        return CacheLane(new_keys.copy(), new_values.copy(), new_positions.copy()), None

    assignment = match(lane.keys[evicted], new_keys)
    plan = build_merge_plan(strategy, assignment, n_conserved=len(conserved))
    merged_keys = apply_merge_plan(plan, new_keys, lane.keys[evicted])
    merged_values = apply_merge_plan(plan, new_values, lane.values[evicted])
    return CacheLane(merged_keys, merged_values, new_positions.copy()), assignment


def merge_averaged(
    lane: CacheLane, outcome: EvictionOutcome, assignment: SimilarityAssignment
) -> CacheLane:
    """Equal-weight fold of each group into its conserved token."""
    return _merge_with(lane, outcome, assignment, MergeStrategy.AVERAGED)


def merge_pivotal(
    lane: CacheLane, outcome: EvictionOutcome, assignment: SimilarityAssignment
) -> CacheLane:
    """Fold via pivotal intermediates (member averaged with its conserved token first)."""
    return _merge_with(lane, outcome, assignment, MergeStrategy.PIVOTAL)


def merge_weighted(
    lane: CacheLane, outcome: EvictionOutcome, assignment: SimilarityAssignment
) -> CacheLane:
    """Fold with each member scaled by its matched cosine similarity (unclamped)."""
    return _merge_with(lane, outcome, assignment, MergeStrategy.WEIGHTED)


def _merge_with(
    lane: CacheLane,
    outcome: EvictionOutcome,
    assignment: SimilarityAssignment,
    strategy: MergeStrategy,
) -> CacheLane:
    conserved = outcome.conserved_indices
    evicted = outcome.evicted_indices
    plan = build_merge_plan(strategy, assignment, n_conserved=len(conserved))
    merged_keys = apply_merge_plan(plan, lane.keys[conserved], lane.keys[evicted])
    merged_values = apply_merge_plan(plan, lane.values[conserved], lane.values[evicted])
    return CacheLane(merged_keys, merged_values, lane.positions[conserved].copy())
