"""KV-cache compression for multimodal transformer inference.

Text-prior attention-score eviction plus evicted-token merging, with
simplified score-based baselines and a deterministic toy-transformer harness
that measures budget compliance, memory savings, decode-cost reduction, and
output divergence against a full cache.
"""

from .core import (
    BudgetError,
    BudgetPlan,
    CacheLane,
    CompressionConfig,
    ConfigError,
    KvCache,
    LookmError,
    MergeStrategy,
    Policy,
    PromptLayout,
    SelectionMode,
    TieBreak,
    TokenKind,
    make_rng,
    plan_budget,
)
from .attention import (
    AttentionRecord,
    DecodeTrace,
    ModelSpec,
    ToyTransformer,
    column_scores,
    decode_many,
    decode_step,
    prefill,
)
from .eviction import (
    EvictionOutcome,
    select_h2o,
    select_lookm,
    select_roco,
    select_snapkv,
    text_prior_boost,
)
from .merging import (
    SimilarityAssignment,
    match,
    merge_averaged,
    merge_lane,
    merge_pivotal,
    merge_weighted,
)
from .harness import (
    RunReport,
    SegmentSpec,
    WorkloadSpec,
    attention_heatmap,
    compress_cache,
    generate_workload,
    run_pair,
    sweep,
)

__version__ = "0.1.0"

__all__ = [
    "AttentionRecord",
    "BudgetError",
    "BudgetPlan",
    "CacheLane",
    "CompressionConfig",
    "ConfigError",
    "DecodeTrace",
    "EvictionOutcome",
    "KvCache",
    "LookmError",
    "MergeStrategy",
    "ModelSpec",
    "Policy",
    "PromptLayout",
    "RunReport",
    "SegmentSpec",
    "SelectionMode",
    "SimilarityAssignment",
    "TieBreak",
    "TokenKind",
    "ToyTransformer",
    "WorkloadSpec",
    "attention_heatmap",
    "column_scores",
    "compress_cache",
    "decode_many",
    "decode_step",
    "generate_workload",
    "make_rng",
    "match",
    "merge_averaged",
    "merge_lane",
    "merge_pivotal",
    "merge_weighted",
    "plan_budget",
    "prefill",
    "run_pair",
    "select_h2o",
    "select_lookm",
    "select_roco",
    "select_snapkv",
    "sweep",
    "text_prior_boost",
    "__version__",
]
