"""Synthetic multimodal workloads and full-vs-compressed measurement runs.

A run prefills once, compresses a copy of the cache per the configured
policy, then decodes the same steps on both branches. By default decoding is
teacher-forced: both branches consume the full-cache branch's outputs, so
the divergence series measures per-step representation drift rather than
compounding trajectory drift. Memory and decode cost are reported as entry
counts and attention-operation proxies, never wall-clock.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .attention import AttentionRecord, ModelSpec, ToyTransformer, column_scores, decode_step, prefill
from .core import (
    BudgetError,
    BudgetPlan,
    CompressionConfig,
    KvCache,
    MergeStrategy,
    Policy,
    PromptLayout,
    TokenKind,
    make_rng,
    plan_budget,
)
from .eviction import select_h2o, select_lookm, select_roco, select_snapkv
from .merging import merge_lane

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SegmentSpec:
    """One contiguous run of same-modality tokens."""

    kind: TokenKind
    length: int
    spread: float = 1.0  # image-only: within-segment noise around the cluster center

    def __post_init__(self) -> None:
        if self.length < 1:
            raise ValueError("segment length must be >= 1")
        if self.spread < 0:
            raise ValueError("segment spread must be >= 0")


@dataclass(frozen=True)
class WorkloadSpec:
    """Segments plus decode length and the embedding seed."""

    segments: tuple[SegmentSpec, ...]
    decode_steps: int
    embedding_seed: int = 0

    def __post_init__(self) -> None:
        if self.prompt_len < 2:
            raise ValueError("workload must contain at least 2 prompt tokens")
        if self.decode_steps < 1:
            raise ValueError("decode_steps must be >= 1")

    @property
    def prompt_len(self) -> int:
        return sum(seg.length for seg in self.segments)

    def with_seed(self, seed: int) -> "WorkloadSpec":
        return WorkloadSpec(self.segments, self.decode_steps, embedding_seed=seed)


def generate_workload(spec: WorkloadSpec, d_model: int) -> tuple[np.ndarray, PromptLayout]:
    """Deterministic embeddings plus the matching modality layout.

    Text rows are i.i.d. standard normal. Image segments emulate redundant
    visual tokens: one normal cluster center per segment plus spread-scaled
    noise per row (spread 0 gives identical rows).
    """
    rng = make_rng(spec.embedding_seed)
    rows: list[np.ndarray] = []
    kinds: list[TokenKind] = []
    for seg in spec.segments:
        if seg.kind is TokenKind.TEXT:
            rows.append(rng.normal(size=(seg.length, d_model)))
        else:
            center = rng.normal(size=d_model)
            noise = rng.normal(size=(seg.length, d_model))
            rows.append(center[None, :] + seg.spread * noise)
        kinds.extend([seg.kind] * seg.length)
    return np.vstack(rows), PromptLayout(tuple(kinds))


@dataclass
class CompressionStats:
    """Per-lane conserved sizes plus merge bookkeeping for the report."""

    conserved_sizes: np.ndarray  # (n_layers, n_heads) int64
    negative_weight_fraction: float = 0.0
    zero_norm_pairs: int = 0


def compress_cache(
    cache: KvCache,
    record: AttentionRecord,
    layout: PromptLayout,
    config: CompressionConfig,
    plan: BudgetPlan,
) -> CompressionStats:
    """Evict (and optionally merge) every lane of ``cache`` in place.

    Runs once, immediately after prefill; decode tokens appended later are
    never re-compressed. Each lane scores and selects independently under the
    same budget counts.
    """
    scores_all = column_scores(record) if config.policy in (Policy.LOOKM, Policy.H2O) else None
    sizes = np.zeros((cache.n_layers, cache.n_heads), dtype=np.int64)
    neg_fractions: list[float] = []
    zero_norm_pairs = 0

    for layer in range(cache.n_layers):
        for head in range(cache.n_heads):
            lane = cache.lane(layer, head)
            if plan.s_total > len(lane):
                raise BudgetError(
                    f"lane (layer={layer}, head={head}): budget S={plan.s_total} "
                    f"exceeds lane length {len(lane)}"
                )
            if config.policy is Policy.LOOKM:
                outcome = select_lookm(scores_all[layer, head], layout, plan, config)
            elif config.policy is Policy.H2O:
                outcome = select_h2o(scores_all[layer, head], plan)
            elif config.policy is Policy.ROCO:
                outcome = select_roco(record.weights[layer, head], plan)
            elif config.policy is Policy.SNAPKV:
                outcome = select_snapkv(
                    record.weights[layer, head], plan, config.snapkv_kernel
                )
            else:
                raise ValueError(f"cannot compress with policy {config.policy!r}")
            merged, assignment = merge_lane(lane, outcome, config.merge)
            cache.lanes[layer][head] = merged
            sizes[layer, head] = len(merged)
            if assignment is not None:
                neg_fractions.append(assignment.negative_weight_fraction())
                zero_norm_pairs += assignment.zero_norm_pairs

    return CompressionStats(
        conserved_sizes=sizes,
        negative_weight_fraction=float(np.mean(neg_fractions)) if neg_fractions else 0.0,
        zero_norm_pairs=zero_norm_pairs,
    )


def cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    """1 - cosine similarity, exactly 0.0 for identical vectors."""
    if np.array_equal(a, b):
        return 0.0
    norm_a = float(np.linalg.norm(a))
    norm_b = float(np.linalg.norm(b))
    if norm_a == 0.0 or norm_b == 0.0:
        return 1.0
    return 1.0 - float(np.dot(a, b)) / (norm_a * norm_b)


def attention_heatmap(record: AttentionRecord, layout: PromptLayout) -> list[dict]:
    """Per-layer mean attention mass landing on text vs. image columns.

    Means are over heads and query rows; the two masses sum to 1 because the
    rows are stochastic.
    """
    text_mask = layout.text_mask()
    per_layer = []
    for layer in range(record.weights.shape[0]):
        mass = record.weights[layer]  # (heads, L, L)
        text_mass = float(mass[:, :, text_mask].sum(axis=-1).mean())
        image_mass = float(mass[:, :, ~text_mask].sum(axis=-1).mean())
        per_layer.append({"layer": layer, "text_mass": text_mass, "image_mass": image_mass})
    return per_layer


@dataclass
class RunReport:
    """Metrics bundle of one full-vs-compressed run."""

    policy: str
    config: CompressionConfig
    model: ModelSpec
    workload: WorkloadSpec
    prompt_len: int
    budget: BudgetPlan | None
    conserved_sizes: np.ndarray  # (n_layers, n_heads)
    entries_full: int
    entries_compressed: int
    memory_full_bytes: int
    memory_compressed_bytes: int
    flop_proxy_full: int
    flop_proxy_compressed: int
    divergence: np.ndarray  # (decode_steps,) cosine distances in [0, 2]
    negative_weight_fraction: float
    zero_norm_pairs: int
    modality_attention: list[dict]
    bytes_per_scalar: int
    free_running: bool
    seed: int = field(init=False)

    def __post_init__(self) -> None:
        self.seed = self.workload.embedding_seed

    @property
    def memory_ratio(self) -> float:
        return self.memory_compressed_bytes / self.memory_full_bytes

    @property
    def flop_ratio(self) -> float:
        return self.flop_proxy_compressed / self.flop_proxy_full

    @property
    def mean_divergence(self) -> float:
        return float(np.mean(self.divergence))

    @property
    def max_divergence(self) -> float:
        return float(np.max(self.divergence))


def run_pair(
    model: ModelSpec | ToyTransformer,
    workload: WorkloadSpec,
    config: CompressionConfig,
    bytes_per_scalar: int = 2,
    free_running: bool = False,
) -> RunReport:
    """Prefill once, decode with full and compressed caches, report metrics.

    Memory is counted immediately after compression (entries x K and V x
    d_head x bytes-per-scalar over all lanes); the decode-cost proxy sums the
    attended cache length per lane over all decode steps.
    """
    config.validate()
    transformer = model if isinstance(model, ToyTransformer) else ToyTransformer(model)
    spec = transformer.spec
    started = time.perf_counter()

    embeddings, layout = generate_workload(workload, spec.d_model)
    prompt_len = len(layout)
    cache_full, record, hidden = prefill(transformer, embeddings, layout)
    cache_comp = cache_full.clone()

    if config.policy is Policy.FULL_CACHE:
        plan = None
        stats = CompressionStats(conserved_sizes=cache_comp.lengths())
    else:
        plan = plan_budget(config, prompt_len)
        stats = compress_cache(cache_comp, record, layout, config, plan)

    n_lanes = spec.n_layers * spec.n_heads
    entries_full = n_lanes * prompt_len
    entries_compressed = int(stats.conserved_sizes.sum())
    per_entry_bytes = 2 * spec.d_head * bytes_per_scalar

    divergence = np.zeros(workload.decode_steps)
    flop_full = 0
    flop_comp = 0
    x_full = hidden[-1]
    x_comp = hidden[-1]
    for step in range(workload.decode_steps):
        _, out_full = decode_step(transformer, cache_full, x_full)
        _, out_comp = decode_step(transformer, cache_comp, x_comp)
        flop_full += cache_full.total_entries()
        flop_comp += cache_comp.total_entries()
        divergence[step] = cosine_distance(out_full, out_comp)
        if free_running:
            x_full, x_comp = out_full, out_comp
        else:
            x_full = x_comp = out_full  # teacher forcing from the full branch

    report = RunReport(
        policy=config.policy_label,
        config=config,
        model=spec,
        workload=workload,
        prompt_len=prompt_len,
        budget=plan,
        conserved_sizes=stats.conserved_sizes,
        entries_full=entries_full,
        entries_compressed=entries_compressed,
        memory_full_bytes=entries_full * per_entry_bytes,
        memory_compressed_bytes=entries_compressed * per_entry_bytes,
        flop_proxy_full=flop_full,
        flop_proxy_compressed=flop_comp,
        divergence=divergence,
        negative_weight_fraction=stats.negative_weight_fraction,
        zero_norm_pairs=stats.zero_norm_pairs,
        modality_attention=attention_heatmap(record, layout),
        bytes_per_scalar=bytes_per_scalar,
        free_running=free_running,
    )
    logger.info(
        "run policy=%s alphas=(%g, %g) seed=%d took %.3fs (informational only)",
        report.policy,
        config.alpha1,
        config.alpha2,
        workload.embedding_seed,
        time.perf_counter() - started,
    )
    return report


def sweep(
    model: ModelSpec | ToyTransformer,
    workload: WorkloadSpec,
    base_config: CompressionConfig,
    budgets: list[tuple[float, float]],
    bytes_per_scalar: int = 2,
    free_running: bool = False,
) -> list[RunReport]:
    """One run per (alpha1, alpha2) pair, sharing model and workload seeds."""
    if not budgets:
        raise ValueError("budgets must be non-empty")
    transformer = model if isinstance(model, ToyTransformer) else ToyTransformer(model)
    return [
        run_pair(
            transformer,
            workload,
            base_config.with_alphas(a1, a2),
            bytes_per_scalar=bytes_per_scalar,
            free_running=free_running,
        )
        for a1, a2 in budgets
    ]


def clustered_image_workload(decode_steps: int = 8, seed: int = 0) -> WorkloadSpec:
    """Interleaved text and mildly noisy image clusters (L = 80)."""
    return WorkloadSpec(
        segments=(
            SegmentSpec(TokenKind.TEXT, 8),
            SegmentSpec(TokenKind.IMAGE, 30, spread=0.05),
            SegmentSpec(TokenKind.TEXT, 6),
            SegmentSpec(TokenKind.IMAGE, 30, spread=0.05),
            SegmentSpec(TokenKind.TEXT, 6),
        ),
        decode_steps=decode_steps,
        embedding_seed=seed,
    )


def redundant_image_workload(decode_steps: int = 8, seed: int = 0) -> WorkloadSpec:
    """Image-heavy prompt whose image segments are exact duplicates (spread 0, L = 80)."""
    return WorkloadSpec(
        segments=(
            SegmentSpec(TokenKind.TEXT, 4),
            SegmentSpec(TokenKind.IMAGE, 34, spread=0.0),
            SegmentSpec(TokenKind.TEXT, 4),
            SegmentSpec(TokenKind.IMAGE, 34, spread=0.0),
            SegmentSpec(TokenKind.TEXT, 4),
        ),
        decode_steps=decode_steps,
        embedding_seed=seed,
    )


def text_squeeze_workload(decode_steps: int = 4, seed: int = 0) -> WorkloadSpec:
    """Few early text tokens drowned in images; built to show score-only
    eviction dropping text that the text-prior boost would conserve (L = 60)."""
    return WorkloadSpec(
        segments=(
            SegmentSpec(TokenKind.TEXT, 3),
            SegmentSpec(TokenKind.IMAGE, 51, spread=1.0),
            SegmentSpec(TokenKind.TEXT, 6),
        ),
        decode_steps=decode_steps,
        embedding_seed=seed,
    )
