"""Pooling of per-layer node representations and motif rows into graph tokens.

Every encoder level and the motif matrix are each compressed to a fixed set of
learned query tokens by single-head scaled dot-product cross-attention, then
the pooled blocks are stacked and passed row-wise through a two-layer MLP.
The output always has tokens_b * (layers + 2) rows, independent of molecule
size; an empty motif set attends over a learned placeholder row instead.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import numerics as nm
from .chem import NODE_FEATURE_DIM
from .encoder import GinConfig, LayerStack, layer_input_dim
from .motif import MOTIF_FEATURE_DIM, MotifMatrix
from .numerics import ParameterStore, Tensor

VARIANTS = ("mgproj", "no-motif", "low", "high", "concat", "resampler")


class EmptyGraph(ValueError):
    pass


class LevelCountMismatch(ValueError):
    pass


class UnknownVariant(ValueError):
    pass


@dataclass(frozen=True)
class ProjectorConfig:
    tokens_b: int = 8
    dim: int = 64
    variant: str = "mgproj"
    learned_attention_maps: bool = True

    def __post_init__(self):
        if self.tokens_b < 1 or self.dim < 1:
            raise ValueError("tokens_b and dim must be >= 1")
        if self.variant not in VARIANTS:
            raise UnknownVariant(f"unknown projector variant {self.variant!r}")


@dataclass(frozen=True)
class GraphTokens:
    tokens: Tensor
    molecule_id: str
    config_hash: str

    @property
    def shape(self) -> tuple[int, ...]:
        return self.tokens.shape


def config_hash(gin: GinConfig, proj: ProjectorConfig) -> str:
    blob = json.dumps({
        "layers": gin.layers, "hidden": gin.hidden_dim,
        "b": proj.tokens_b, "d": proj.dim, "variant": proj.variant,
        "learned_maps": proj.learned_attention_maps,
    }, sort_keys=True)
    return hashlib.md5(blob.encode()).hexdigest()[:12]


def _add_block(store: ParameterStore, name: str, src_dim: int, d: int,
               rng: np.random.Generator, dtype, learned_maps: bool) -> None:
    bound_in = 1.0 / np.sqrt(src_dim)
    bound_d = 1.0 / np.sqrt(d)
    store.add(f"{name}.in.w", rng.uniform(-bound_in, bound_in, (src_dim, d)), dtype=dtype)
    if learned_maps:
        for map_name in ("q", "k", "v", "o"):
            store.add(f"{name}.{map_name}.w",
                      rng.uniform(-bound_d, bound_d, (d, d)), dtype=dtype)


def init_projector_params(store: ParameterStore, gin: GinConfig,
                          proj: ProjectorConfig, rng: np.random.Generator,
                          dtype=np.float64, prefix: str = "proj") -> None:
    """Create exactly the tensors the chosen variant consumes."""
    b, d = proj.tokens_b, proj.dim
    bound_d = 1.0 / np.sqrt(d)
    variant = proj.variant
    lm = proj.learned_attention_maps

    def add_fusion(in_dim: int):
        bound_in = 1.0 / np.sqrt(in_dim)
        store.add(f"{prefix}.fuse.lin1.w", rng.uniform(-bound_in, bound_in, (in_dim, d)),
                  dtype=dtype)
        store.add(f"{prefix}.fuse.lin1.b", np.zeros(d), dtype=dtype)
        store.add(f"{prefix}.fuse.lin2.w", rng.uniform(-bound_d, bound_d, (d, d)),
                  dtype=dtype)
        store.add(f"{prefix}.fuse.lin2.b", np.zeros(d), dtype=dtype)

    if variant in ("mgproj", "no-motif"):
        for level in range(gin.layers + 1):
            src = layer_input_dim(gin, level) if level == 0 else gin.hidden_dim
            name = f"{prefix}.level{level}"
            store.add(f"{name}.tokens", rng.uniform(-bound_d, bound_d, (b, d)),
                      dtype=dtype)
            _add_block(store, name, src, d, rng, dtype, lm)
        if variant == "mgproj":
            name = f"{prefix}.motif"
            store.add(f"{name}.tokens", rng.uniform(-bound_d, bound_d, (b, d)),
                      dtype=dtype)
            store.add(f"{name}.null", rng.uniform(-1.0, 1.0, (1, MOTIF_FEATURE_DIM)),
                      dtype=dtype)
            _add_block(store, name, MOTIF_FEATURE_DIM, d, rng, dtype, lm)
        add_fusion(d)
    elif variant in ("low", "high"):
        add_fusion(gin.hidden_dim)
    elif variant == "concat":
        add_fusion(NODE_FEATURE_DIM + gin.layers * gin.hidden_dim)
    elif variant == "resampler":
        name = f"{prefix}.resampler"
        store.add(f"{name}.tokens", rng.uniform(-bound_d, bound_d, (b, d)), dtype=dtype)
        _add_block(store, name, gin.hidden_dim, d, rng, dtype, lm)
        add_fusion(d)
    else:
        raise UnknownVariant(f"unknown projector variant {variant!r}")


def _attend(tokens: Tensor, source: Tensor, store: ParameterStore, name: str,
            d: int, learned_maps: bool,
            attn_out: Optional[dict] = None) -> Tensor:
    """softmax(Q K^T / sqrt(d)) V with optional learned Q/K/V/output maps."""
    src = nm.matmul(source, store[f"{name}.in.w"])
    if learned_maps:
        q = nm.matmul(tokens, store[f"{name}.q.w"])
        k = nm.matmul(src, store[f"{name}.k.w"])
        v = nm.matmul(src, store[f"{name}.v.w"])
    else:
        q, k, v = tokens, src, src
    scores = nm.scale(nm.matmul(q, nm.transpose(k)), 1.0 / np.sqrt(d))
    weights = nm.row_softmax(scores)
    if attn_out is not None:
        attn_out[name.rsplit(".", 1)[-1]] = weights.data.copy()
    pooled = nm.matmul(weights, v)
    if learned_maps:
        pooled = nm.matmul(pooled, store[f"{name}.o.w"])
    return pooled


def level_pool(tokens: Tensor, level: Tensor, store: ParameterStore, name: str,
               config: ProjectorConfig, attn_out: Optional[dict] = None) -> Tensor:
    """Compress one level's node rows onto the learned tokens."""
    if level.shape[0] < 1:
        raise EmptyGraph("cannot pool a level with no node rows")
    return _attend(tokens, level, store, name, config.dim,
                   config.learned_attention_maps, attn_out)


def motif_pool(tokens: Tensor, motifs: MotifMatrix, store: ParameterStore,
               config: ProjectorConfig, prefix: str = "proj",
               attn_out: Optional[dict] = None) -> Tensor:
    """As level_pool over motif rows; an empty motif set uses the learned
    placeholder row so the output block always exists."""
    name = f"{prefix}.motif"
    if motifs.count == 0:
        source = store[f"{name}.null"]
    else:
        source = nm.tensor(motifs.rows.astype(store[f"{name}.in.w"].data.dtype))
    return _attend(tokens, source, store, name, config.dim,
                   config.learned_attention_maps, attn_out)


def _fusion_mlp(x: Tensor, store: ParameterStore, prefix: str) -> Tensor:
    hidden = nm.relu(nm.add(nm.matmul(x, store[f"{prefix}.fuse.lin1.w"]),
                            store[f"{prefix}.fuse.lin1.b"]))
    return nm.add(nm.matmul(hidden, store[f"{prefix}.fuse.lin2.w"]),
                  store[f"{prefix}.fuse.lin2.b"])


def project(stack: LayerStack, motifs: MotifMatrix, store: ParameterStore,
            gin: GinConfig, config: ProjectorConfig, prefix: str = "proj",
            molecule_id: str = "", attn_out: Optional[dict] = None) -> GraphTokens:
    """Pool every level plus motifs and fuse; rows = tokens_b * (layers + 2)."""
    if stack.depth != gin.layers:
        raise LevelCountMismatch(
            f"stack has {stack.depth} layers, config says {gin.layers}")
    pooled = []
    for level_idx, level in enumerate(stack.levels):
        name = f"{prefix}.level{level_idx}"
        pooled.append(level_pool(store[f"{name}.tokens"], level, store, name,
                                 config, attn_out))
    if config.variant == "mgproj":
        pooled.append(motif_pool(store[f"{prefix}.motif.tokens"], motifs, store,
                                 config, prefix, attn_out))
    fused = _fusion_mlp(nm.concat_rows(pooled), store, prefix)
    return GraphTokens(fused, molecule_id, config_hash(gin, config))


def project_baseline(stack: LayerStack, store: ParameterStore, gin: GinConfig,
                     config: ProjectorConfig, prefix: str = "proj",
                     molecule_id: str = "",
                     attn_out: Optional[dict] = None) -> GraphTokens:
    """The simpler projector family used for comparisons.

    low/high apply the MLP to one level's node rows, concat to the
    feature-concatenated rows, resampler cross-attends over the final level.
    """
    variant = config.variant
    if stack.levels[0].shape[0] < 1:
        raise EmptyGraph("no node rows to project")
    if variant == "low":
        source = stack.levels[1]
    elif variant == "high":
        source = stack.levels[-1]
    elif variant == "concat":
        source = nm.concat_cols(stack.levels)
    elif variant == "resampler":
        name = f"{prefix}.resampler"
        source = level_pool(store[f"{name}.tokens"], stack.levels[-1], store,
                            name, config, attn_out)
    else:
        raise UnknownVariant(f"{variant!r} is not a baseline variant")
    fused = _fusion_mlp(source, store, prefix)
    return GraphTokens(fused, molecule_id, config_hash(gin, config))


def project_any(stack: LayerStack, motifs: MotifMatrix, store: ParameterStore,
                gin: GinConfig, config: ProjectorConfig, prefix: str = "proj",
                molecule_id: str = "",
                attn_out: Optional[dict] = None) -> GraphTokens:
    """Dispatch on the configured variant."""
    if config.variant in ("mgproj", "no-motif"):
        return project(stack, motifs, store, gin, config, prefix, molecule_id,
                       attn_out)
    return project_baseline(stack, store, gin, config, prefix, molecule_id,
                            attn_out)
