"""Toy multi-head causal transformer with an explicit KV cache.

The model is attention plus output projection stacked ``n_layers`` deep: no
MLP blocks, no layer norm, no tokenizer. Prefill processes the whole prompt
with a causal mask and records the per-lane attention matrices; decode
appends one token's KV per lane and attends over everything cached. Softmax
scaling is 1/sqrt(d_head) per lane, recorded here as ``scale`` so oracles can
reuse the same convention.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import CacheLane, KvCache, PromptLayout, make_rng


@dataclass(frozen=True)
class ModelSpec:
    """Shape and weight seed of the toy transformer.

    All projection matrices are d_model x d_model, drawn i.i.d. uniform in
    [-1/sqrt(d_model), +1/sqrt(d_model)] from the seeded stream, layer by
    layer in the order W_Q, W_K, W_V, W_O.
    """

    n_layers: int
    n_heads: int
    d_model: int
    weight_seed: int = 0
    use_positional: bool = False

    def __post_init__(self) -> None:
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model={self.d_model} not divisible by n_heads={self.n_heads}"
            )
        if self.n_layers < 1 or self.n_heads < 1:
            raise ValueError("n_layers and n_heads must be >= 1")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads


class ToyTransformer:
    """Materialized weights for a :class:`ModelSpec`."""

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        rng = make_rng(spec.weight_seed)
        bound = 1.0 / np.sqrt(spec.d_model)
        shape = (spec.d_model, spec.d_model)
        self.w_q = np.empty((spec.n_layers, *shape))
        self.w_k = np.empty((spec.n_layers, *shape))
        self.w_v = np.empty((spec.n_layers, *shape))
        self.w_o = np.empty((spec.n_layers, *shape))
        for layer in range(spec.n_layers):
            self.w_q[layer] = rng.uniform(-bound, bound, shape)
            self.w_k[layer] = rng.uniform(-bound, bound, shape)
            self.w_v[layer] = rng.uniform(-bound, bound, shape)
            self.w_o[layer] = rng.uniform(-bound, bound, shape)

    @property
    def scale(self) -> float:
        return 1.0 / np.sqrt(self.spec.d_head)

    def head_slice(self, head: int) -> slice:
        d = self.spec.d_head
        return slice(head * d, (head + 1) * d)


@dataclass
class AttentionRecord:
    """Per-lane prompt attention matrices, lower-triangular and row-stochastic."""

    weights: np.ndarray  # (n_layers, n_heads, L, L)

    @property
    def prompt_len(self) -> int:
        return self.weights.shape[-1]


@dataclass
class DecodeTrace:
    """Per-step decode outputs and the cache length seen at each step."""

    outputs: list[np.ndarray]
    cache_lengths: list[int]


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = logits - np.max(logits, axis=axis, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=axis, keepdims=True)


def sinusoidal_offsets(positions: np.ndarray, d_model: int) -> np.ndarray:
    """Fixed sin/cos position signal, added to embeddings when enabled."""
    pos = positions.astype(np.float64)[:, None]
    idx = np.arange(d_model, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, (2.0 * (idx // 2)) / d_model)
    out = np.empty((len(positions), d_model))
    out[:, 0::2] = np.sin(angle[:, 0::2])
    out[:, 1::2] = np.cos(angle[:, 1::2])
    return out


def attend(query: np.ndarray, keys: np.ndarray, values: np.ndarray, scale: float) -> np.ndarray:
    """softmax(q K^T * scale) V for a single query vector over one lane."""
    logits = keys @ query * scale
    return softmax(logits) @ values


def prefill(
    model: ToyTransformer,
    embeddings: np.ndarray,
    layout: PromptLayout,
) -> tuple[KvCache, AttentionRecord, np.ndarray]:
    """Encode the whole prompt, populating the cache.

    Returns the cache (keys/values per lane, positions 0..L-1), the causal
    attention matrices of every lane, and the final-layer hidden states.
    """
    spec = model.spec
    L = embeddings.shape[0]
    if L != len(layout):
        raise ValueError(
            f"embeddings rows ({L}) must match layout length ({len(layout)})"
        )
    if embeddings.shape[1] != spec.d_model:
        raise ValueError(
            f"embeddings dim ({embeddings.shape[1]}) must match d_model ({spec.d_model})"
        )

    hidden = embeddings.astype(np.float64, copy=True)
    if spec.use_positional:
        hidden = hidden + sinusoidal_offsets(np.arange(L), spec.d_model)

    causal_mask = np.triu(np.full((L, L), -np.inf), k=1)
    record = np.empty((spec.n_layers, spec.n_heads, L, L))
    lanes: list[list[CacheLane]] = []
    positions = np.arange(L, dtype=np.int64)

    for layer in range(spec.n_layers):
        q_all = hidden @ model.w_q[layer]
        k_all = hidden @ model.w_k[layer]
        v_all = hidden @ model.w_v[layer]
        layer_lanes: list[CacheLane] = []
        head_outputs = np.empty((L, spec.d_model))
        for head in range(spec.n_heads):
            cols = model.head_slice(head)
            q, k, v = q_all[:, cols], k_all[:, cols], v_all[:, cols]
            logits = q @ k.T * model.scale + causal_mask
            attn = softmax(logits, axis=-1)
            record[layer, head] = attn
            head_outputs[:, cols] = attn @ v
            layer_lanes.append(CacheLane(k.copy(), v.copy(), positions.copy()))
        lanes.append(layer_lanes)
        hidden = head_outputs @ model.w_o[layer]

    return KvCache(lanes, seen=L), AttentionRecord(record), hidden


def decode_step(
    model: ToyTransformer, cache: KvCache, x_t: np.ndarray
) -> tuple[KvCache, np.ndarray]:
    """Append one token's KV per lane and produce its output vector.

    The new token's KV rows are cached before attention, so it attends to
    itself as well as everything already stored. No mask is needed: every
    cached position precedes the new one.
    """
    spec = model.spec
    if x_t.shape != (spec.d_model,):
        raise ValueError(f"x_t must have shape ({spec.d_model},), got {x_t.shape}")
    expected = cache.lengths()[:, 0]
    if not np.all(cache.lengths() == expected[:, None]):
        raise ValueError("cache lanes within a layer have mismatched lengths")

    hidden = x_t.astype(np.float64, copy=True)
    if spec.use_positional:
        hidden = hidden + sinusoidal_offsets(
            np.array([cache.seen], dtype=np.int64), spec.d_model
        )[0]

    for layer in range(spec.n_layers):
        q_all = hidden @ model.w_q[layer]
        k_all = hidden @ model.w_k[layer]
        v_all = hidden @ model.w_v[layer]
        head_outputs = np.empty(spec.d_model)
        for head in range(spec.n_heads):
            cols = model.head_slice(head)
            cache.append(layer, head, k_all[cols], v_all[cols])
            lane = cache.lane(layer, head)
            head_outputs[cols] = attend(q_all[cols], lane.keys, lane.values, model.scale)
        hidden = head_outputs @ model.w_o[layer]

    cache.seen += 1
    return cache, hidden


def decode_many(
    model: ToyTransformer, cache: KvCache, inputs: np.ndarray
) -> DecodeTrace:
    """Run one decode step per input row, collecting outputs and cache growth."""
    outputs = []
    lengths = []
    for x_t in np.atleast_2d(np.asarray(inputs, dtype=np.float64)):
        _, out = decode_step(model, cache, x_t)
        outputs.append(out)
        lengths.append(int(cache.lengths().max()))
    return DecodeTrace(outputs=outputs, cache_lengths=lengths)


def column_scores(record: AttentionRecord) -> np.ndarray:
    """Cumulative attention per cached token: column sums of every lane's matrix.

    Shape (n_layers, n_heads, L); each lane's scores sum to L because rows
    are stochastic.
    """
    return record.weights.sum(axis=-2)
