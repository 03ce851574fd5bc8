"""Shared data model: prompt layouts, KV caches, compression configs, budgets, RNG.

Everything downstream (attention, eviction, merging, harness) builds on the
types in this module. All randomness in the project flows through
:func:`make_rng` so that runs are reproducible bit-for-bit from seeds.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np


class LookmError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(LookmError):
    """Invalid configuration (bad ratios, incompatible policy/merge, ...)."""


class BudgetError(LookmError):
    """A compression budget that cannot be satisfied by the cache it targets."""


class TokenKind(enum.Enum):
    TEXT = "text"
    IMAGE = "image"


class Policy(enum.Enum):
    FULL_CACHE = "full"
    LOOKM = "lookm"
    H2O = "h2o"
    SNAPKV = "snapkv"
    ROCO = "roco"


class MergeStrategy(enum.Enum):
    NONE = "none"
    AVERAGED = "averaged"
    PIVOTAL = "pivotal"
    WEIGHTED = "weighted"


class SelectionMode(enum.Enum):
    TOP_N_ONLY = "top_n_only"
    UNION_TEXT_TOP_N = "union_text_top_n"


class TieBreak(enum.Enum):
    LOWER_INDEX = "lower_index"


@dataclass(frozen=True)
class PromptLayout:
    """Per-position modality labels of an interleaved multimodal prompt.

    ``segment_boundaries`` lists every index i >= 1 where ``kinds[i]`` differs
    from ``kinds[i-1]``; it is derived, never supplied.
    """

    kinds: tuple[TokenKind, ...]
    segment_boundaries: tuple[int, ...] = field(init=False)

    def __post_init__(self) -> None:
        if len(self.kinds) < 1:
            raise ValueError("prompt layout must contain at least one token")
        boundaries = tuple(
            i for i in range(1, len(self.kinds)) if self.kinds[i] is not self.kinds[i - 1]
        )
        object.__setattr__(self, "segment_boundaries", boundaries)

    def __len__(self) -> int:
        return len(self.kinds)

    def text_indices(self) -> np.ndarray:
        return np.array(
            [i for i, k in enumerate(self.kinds) if k is TokenKind.TEXT], dtype=np.int64
        )

    def image_indices(self) -> np.ndarray:
        return np.array(
            [i for i, k in enumerate(self.kinds) if k is TokenKind.IMAGE], dtype=np.int64
        )

    def text_mask(self) -> np.ndarray:
        return np.array([k is TokenKind.TEXT for k in self.kinds], dtype=bool)


@dataclass
class CacheLane:
    """Keys/values of one (layer, head) slice, with original-position metadata.

    ``positions`` stays strictly increasing; compression subsets it but never
    reorders it.
    """

    keys: np.ndarray  # (n, d_head)
    values: np.ndarray  # (n, d_head)
    positions: np.ndarray  # (n,) int64, strictly increasing

    def __post_init__(self) -> None:
        if not (len(self.keys) == len(self.values) == len(self.positions)):
            raise ValueError("lane keys/values/positions must have equal length")
        if len(self.positions) > 1 and not np.all(np.diff(self.positions) > 0):
            raise ValueError("lane positions must be strictly increasing")

    def __len__(self) -> int:
        return len(self.positions)

    def clone(self) -> "CacheLane":
        return CacheLane(self.keys.copy(), self.values.copy(), self.positions.copy())


class KvCache:
    """Per-layer, per-head ordered key/value sequences.

    ``seen`` is the next position index a decode step will occupy; prefill
    sets it to the prompt length.
    """

    def __init__(self, lanes: list[list[CacheLane]], seen: int):
        self.lanes = lanes
        self.seen = seen

    @property
    def n_layers(self) -> int:
        return len(self.lanes)

    @property
    def n_heads(self) -> int:
        return len(self.lanes[0])

    def lane(self, layer: int, head: int) -> CacheLane:
        return self.lanes[layer][head]

    def lengths(self) -> np.ndarray:
        return np.array(
            [[len(lane) for lane in layer] for layer in self.lanes], dtype=np.int64
        )

    def total_entries(self) -> int:
        return int(self.lengths().sum())

    def clone(self) -> "KvCache":
        return KvCache(
            [[lane.clone() for lane in layer] for layer in self.lanes], self.seen
        )

    def append(self, layer: int, head: int, key: np.ndarray, value: np.ndarray) -> None:
        """Append one KV row at position ``self.seen`` (per-lane; caller bumps ``seen``)."""
        lane = self.lanes[layer][head]
        lane.keys = np.vstack([lane.keys, key[None, :]])
        lane.values = np.vstack([lane.values, value[None, :]])
        lane.positions = np.append(lane.positions, np.int64(self.seen))


@dataclass(frozen=True)
class CompressionConfig:
    """Compression policy plus its knobs.

    ``alpha1`` sizes the recent window, ``alpha2`` the important-token set,
    both as fractions of the prompt length. ``seed`` is echoed into reports
    and used by callers to derive per-run workload seeds.
    """

    policy: Policy
    alpha1: float = 0.0
    alpha2: float = 0.0
    merge: MergeStrategy = MergeStrategy.NONE
    text_prior: bool = False
    selection_mode: SelectionMode = SelectionMode.TOP_N_ONLY
    tie_break: TieBreak = TieBreak.LOWER_INDEX
    snapkv_kernel: int = 5
    seed: int = 0

    def validate(self) -> None:
        if not (0.0 <= self.alpha1 <= 1.0 and 0.0 <= self.alpha2 <= 1.0):
            raise ConfigError(
                f"alpha1={self.alpha1} and alpha2={self.alpha2} must lie in [0, 1]"
            )
        if self.alpha1 + self.alpha2 > 1.0 + 1e-12:
            raise ConfigError(
                f"alpha1 + alpha2 = {self.alpha1 + self.alpha2} exceeds 1"
            )
        if self.policy is not Policy.FULL_CACHE and self.alpha1 <= 0 and self.alpha2 <= 0:
            raise ConfigError(
                f"policy {self.policy.value!r} needs alpha1 > 0 or alpha2 > 0"
            )
        if self.merge is not MergeStrategy.NONE and self.policy is not Policy.LOOKM:
            raise ConfigError(
                f"merge={self.merge.value!r} is only valid with policy 'lookm'"
            )
        if self.snapkv_kernel < 1 or self.snapkv_kernel % 2 == 0:
            raise ConfigError(
                f"snapkv_kernel must be an odd positive integer, got {self.snapkv_kernel}"
            )
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")

    def with_alphas(self, alpha1: float, alpha2: float) -> "CompressionConfig":
        return replace(self, alpha1=alpha1, alpha2=alpha2)

    @property
    def policy_label(self) -> str:
        """Report label; simplified baselines are tagged '-lite'."""
        if self.policy in (Policy.H2O, Policy.SNAPKV, Policy.ROCO):
            return f"{self.policy.value}-lite"
        return self.policy.value


@dataclass(frozen=True)
class BudgetPlan:
    """Token counts kept after compression: recent window plus important set."""

    m_recent: int
    n_important: int

    @property
    def s_total(self) -> int:
        return self.m_recent + self.n_important


def plan_budget(config: CompressionConfig, prompt_len: int) -> BudgetPlan:
    """Turn budget ratios into token counts for one prompt.

    Both counts floor their ratio, are raised to at least 1, and are then
    clamped (recent window first) so the total never exceeds the prompt
    length.
    """
    if prompt_len < 1:
        raise ValueError(f"prompt_len must be >= 1, got {prompt_len}")
    m_recent = max(1, math.floor(config.alpha1 * prompt_len))
    n_important = max(1, math.floor(config.alpha2 * prompt_len))
    m_recent = min(m_recent, prompt_len)
    n_important = min(n_important, prompt_len - m_recent)
    return BudgetPlan(m_recent=m_recent, n_important=n_important)


def make_rng(seed: int) -> np.random.Generator:
    """Deterministic random stream (NumPy PCG64), identical across platforms."""
    return np.random.Generator(np.random.PCG64(seed))


def layout_from_kinds(kinds: list[TokenKind] | tuple[TokenKind, ...]) -> PromptLayout:
    return PromptLayout(kinds=tuple(kinds))
