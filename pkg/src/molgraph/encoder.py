"""Graph isomorphism network encoder with per-layer output retention.

Each layer maps node rows through MLP((1 + eps) * own + sum of neighbor rows).
The full stack of intermediate representations is kept because downstream
pooling consumes every level, and a collapse diagnostic measures how far the
node rows of each level have drifted toward one another.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .chem import EDGE_FEATURE_DIM, NODE_FEATURE_DIM, MolecularGraph
from .numerics import ParameterStore, Tensor


class SingleNodeGraph(ValueError):
    pass


@dataclass(frozen=True)
class GinConfig:
    layers: int = 5
    hidden_dim: int = 64
    learnable_epsilon: bool = True
    use_edge_features: bool = False
    mlp_depth: int = 2  # linear -> relu -> linear, fixed

    def __post_init__(self):
        if self.layers < 1 or self.hidden_dim < 1:
            raise ValueError("layers and hidden_dim must be >= 1")


@dataclass
class LayerStack:
    levels: list[Tensor]  # length layers + 1; levels[0] is the input features

    @property
    def depth(self) -> int:
        return len(self.levels) - 1


def layer_input_dim(config: GinConfig, layer: int) -> int:
    return NODE_FEATURE_DIM if layer == 0 else config.hidden_dim


def init_gin_params(store: ParameterStore, config: GinConfig,
                    rng: np.random.Generator, dtype=np.float64,
                    prefix: str = "gin") -> None:
    """Uniform fan-in-scaled init; epsilons start at zero."""
    d = config.hidden_dim
    for layer in range(config.layers):
        d_in = layer_input_dim(config, layer)
        bound1 = 1.0 / np.sqrt(d_in)
        bound2 = 1.0 / np.sqrt(d)
        base = f"{prefix}.layer{layer}"
        store.add(f"{base}.lin1.w", rng.uniform(-bound1, bound1, (d_in, d)), dtype=dtype)
        store.add(f"{base}.lin1.b", np.zeros(d), dtype=dtype)
        store.add(f"{base}.lin2.w", rng.uniform(-bound2, bound2, (d, d)), dtype=dtype)
        store.add(f"{base}.lin2.b", np.zeros(d), dtype=dtype)
        store.add(f"{base}.eps", np.zeros(1), trainable=config.learnable_epsilon,
                  dtype=dtype)
        if config.use_edge_features:
            store.add(f"{base}.edge.w",
                      rng.uniform(-bound1, bound1, (EDGE_FEATURE_DIM, d_in)),
                      dtype=dtype)


def _incidence(graph: MolecularGraph, dtype) -> np.ndarray:
    inc = np.zeros((graph.n_atoms, graph.n_bonds), dtype=dtype)
    for j, b in enumerate(graph.bonds):
        inc[b.u, j] = 1.0
        inc[b.v, j] = 1.0
    return inc


def gin_layer(prev: Tensor, graph: MolecularGraph, params: ParameterStore,
              layer: int, config: GinConfig, prefix: str = "gin") -> Tensor:
    """One message-passing step: MLP((1 + eps) * z_v + sum over neighbors)."""
    if prev.shape[0] != graph.n_atoms:
        raise nm.ShapeMismatch(
            f"gin_layer: {prev.shape[0]} rows for {graph.n_atoms} atoms")
    dtype = prev.data.dtype
    base = f"{prefix}.layer{layer}"
    adjacency = nm.tensor(graph.adjacency().astype(dtype), dtype=dtype)
    aggregated = nm.matmul(adjacency, prev)
    if config.use_edge_features:
        inc = nm.tensor(_incidence(graph, dtype), dtype=dtype)
        edge_feats = nm.tensor(graph.edge_features.astype(dtype), dtype=dtype)
        edge_msg = nm.matmul(inc, nm.matmul(edge_feats, params[f"{base}.edge.w"]))
        aggregated = nm.add(aggregated, edge_msg)
    combined = nm.add(nm.add(aggregated, prev),
                      nm.scale_by(prev, params[f"{base}.eps"]))
    hidden = nm.relu(nm.add(nm.matmul(combined, params[f"{base}.lin1.w"]),
                            params[f"{base}.lin1.b"]))
    return nm.add(nm.matmul(hidden, params[f"{base}.lin2.w"]),
                  params[f"{base}.lin2.b"])


def encode(graph: MolecularGraph, config: GinConfig, params: ParameterStore,
           dtype=np.float64, prefix: str = "gin") -> LayerStack:
    """Run all layers and keep every intermediate representation."""
    if graph.node_features is None:
        raise ValueError("graph must be featurized before encoding")
    levels = [nm.tensor(graph.node_features.astype(dtype), dtype=dtype)]
    for layer in range(config.layers):
        levels.append(gin_layer(levels[-1], graph, params, layer, config, prefix))
    return LayerStack(levels=levels)


def _cosine_distance_mean(rows: np.ndarray) -> float:
    n = rows.shape[0]
    norms = np.linalg.norm(rows, axis=1)
    total = 0.0
    pairs = 0
    for i in range(n):
        for j in range(i + 1, n):
            if np.array_equal(rows[i], rows[j]):
                sim = 1.0  # exact zero distance for bit-identical rows
            elif norms[i] == 0.0 or norms[j] == 0.0:
                sim = 0.0
            else:
                sim = float(rows[i] @ rows[j] / (norms[i] * norms[j]))
            total += max(0.0, 1.0 - sim)
            pairs += 1
    return total / pairs


def oversmoothing_stats(stack: LayerStack) -> list[float]:
    """Mean pairwise cosine distance of node rows, one value per level.

    Zero means the rows are parallel (collapsed); orthogonal rows give 1.
    """
    if stack.levels[0].shape[0] < 2:
        raise SingleNodeGraph("collapse statistic needs at least 2 nodes")
    return [_cosine_distance_mean(level.data) for level in stack.levels]
