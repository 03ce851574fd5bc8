"""Score-based KV eviction: text-prior selection plus simplified baselines.

Every selector works on one lane and returns an :class:`EvictionOutcome`.
The recent window (last ``m_recent`` positions) is always conserved; the
important set is a Top-N over per-token scores restricted to the non-recent
region, with ties going to the lower index. The baselines reimplement only
the scoring rule of their namesakes (hence the '-lite' labels in reports).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import BudgetPlan, CompressionConfig, PromptLayout, SelectionMode


@dataclass(frozen=True)
class EvictionOutcome:
    """Partition of one lane's positions into conserved and evicted sets."""

    conserved_indices: np.ndarray  # sorted, int64
    evicted_indices: np.ndarray  # sorted, int64
    boosted_scores: np.ndarray  # scores after any text-prior adjustment

    def __post_init__(self) -> None:
        total = len(self.conserved_indices) + len(self.evicted_indices)
        if total != len(self.boosted_scores):
            raise ValueError("conserved/evicted must partition the score positions")


def text_prior_boost(scores: np.ndarray, layout: PromptLayout) -> np.ndarray:
    """Add the maximum score to every text position, leaving images unchanged.

    The boost constant is the max over the full-length score vector, taken
    before any recent-window slicing.
    """
    if len(scores) == 0:
        raise ValueError("scores must be non-empty")
    if len(scores) != len(layout):
        raise ValueError(
            f"scores length ({len(scores)}) must match layout length ({len(layout)})"
        )
    boosted = np.asarray(scores, dtype=np.float64).copy()
    text = layout.text_indices()
    if len(text) > 0:
        boosted[text] += float(np.max(scores))
    return boosted


def _top_n_lower_index(scores: np.ndarray, n: int) -> np.ndarray:
    """Indices of the n largest scores; equal scores resolve to lower indices."""
    if n >= len(scores):
        return np.arange(len(scores), dtype=np.int64)
    # lexsort is ascending, so order by (-score, index) and take the head.
    order = np.lexsort((np.arange(len(scores)), -np.asarray(scores, dtype=np.float64)))
    return order[:n].astype(np.int64)


def _finalize(important: np.ndarray, plan: BudgetPlan, boosted: np.ndarray) -> EvictionOutcome:
    length = len(boosted)
    recent = np.arange(length - plan.m_recent, length, dtype=np.int64)
    conserved = np.unique(np.concatenate([important, recent]))
    mask = np.ones(length, dtype=bool)
    mask[conserved] = False
    evicted = np.nonzero(mask)[0].astype(np.int64)
    return EvictionOutcome(conserved, evicted, boosted)


def select_lookm(
    scores: np.ndarray,
    layout: PromptLayout,
    plan: BudgetPlan,
    config: CompressionConfig,
) -> EvictionOutcome:
    """Text-prior selection: boost text scores, keep recent window + Top-N.

    With ``UNION_TEXT_TOP_N`` the important set additionally includes every
    non-recent text position, which may push the conserved size past the
    nominal budget; reports carry the actual size.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if plan.s_total > len(scores):
        raise ValueError(
            f"budget S={plan.s_total} exceeds lane length {len(scores)}"
        )
    boosted = text_prior_boost(scores, layout) if config.text_prior else scores.copy()
    cutoff = len(scores) - plan.m_recent
    important = _top_n_lower_index(boosted[:cutoff], plan.n_important)
    if config.selection_mode is SelectionMode.UNION_TEXT_TOP_N:
        text = layout.text_indices()
        non_recent_text = text[text < cutoff]
        important = np.union1d(important, non_recent_text).astype(np.int64)
    return _finalize(important, plan, boosted)


def select_h2o(scores: np.ndarray, plan: BudgetPlan) -> EvictionOutcome:
    """Cumulative-attention selection: Top-N over raw scores + recent window."""
    scores = np.asarray(scores, dtype=np.float64)
    if plan.s_total > len(scores):
        raise ValueError(
            f"budget S={plan.s_total} exceeds lane length {len(scores)}"
        )
    cutoff = len(scores) - plan.m_recent
    important = _top_n_lower_index(scores[:cutoff], plan.n_important)
    return _finalize(important, plan, scores.copy())


def select_roco(attn: np.ndarray, plan: BudgetPlan) -> EvictionOutcome:
    """Mean-attention selection: column sums divided by the causally attending rows."""
    attn = np.asarray(attn, dtype=np.float64)
    length = attn.shape[0]
    rows_attending = length - np.arange(length)
    scores = attn.sum(axis=0) / rows_attending
    return select_h2o(scores, plan)


def max_pool_1d(raw: np.ndarray, kernel: int) -> np.ndarray:
    """Same-length 1-D max pooling with edge clamping."""
    if kernel < 1 or kernel % 2 == 0:
        raise ValueError(f"kernel must be an odd positive integer, got {kernel}")
    half = kernel // 2
    length = len(raw)
    pooled = np.empty_like(np.asarray(raw, dtype=np.float64))
    for j in range(length):
        pooled[j] = np.max(raw[max(0, j - half) : min(length, j + half + 1)])
    return pooled


def select_snapkv(attn: np.ndarray, plan: BudgetPlan, kernel: int) -> EvictionOutcome:
    """Observation-window selection: max-pooled column sums of the last M rows."""
    attn = np.asarray(attn, dtype=np.float64)
    if plan.m_recent < 1:
        raise ValueError("snapkv needs m_recent >= 1 for its observation window")
    raw = attn[-plan.m_recent :, :].sum(axis=0)
    pooled = max_pool_1d(raw, kernel)
    return select_h2o(pooled, plan)
