"""End-to-end assembly: SMILES text in, response loss or generated text out.

A model is a ParameterStore holding encoder, projector, and decoder tensors
plus a ModelConfig snapshot that travels inside checkpoints.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import lm as lm_mod
from .chem import graph_from_smiles
from .encoder import GinConfig, encode
from .lm import EOS, FusedSequence, LmConfig, Vocabulary, fuse, tokenize
from .motif import motif_matrix
from .numerics import ParameterStore, Tensor
from .projector import ProjectorConfig, project_any


@dataclass(frozen=True)
class ModelConfig:
    dim: int = 64
    gin_layers: int = 5
    tokens_b: int = 8
    lm_blocks: int = 2
    lm_mlp_hidden: int = 0          # 0 means 2 * dim
    max_seq_len: int = 512
    variant: str = "mgproj"
    learnable_epsilon: bool = True
    use_edge_features: bool = False
    learned_attention_maps: bool = True
    dtype: str = "float32"
    vocab_chars: tuple[str, ...] = field(default_factory=tuple)

    def numpy_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32

    def gin_config(self) -> GinConfig:
        return GinConfig(layers=self.gin_layers, hidden_dim=self.dim,
                         learnable_epsilon=self.learnable_epsilon,
                         use_edge_features=self.use_edge_features)

    def proj_config(self) -> ProjectorConfig:
        return ProjectorConfig(tokens_b=self.tokens_b, dim=self.dim,
                               variant=self.variant,
                               learned_attention_maps=self.learned_attention_maps)

    def lm_config(self) -> LmConfig:
        hidden = self.lm_mlp_hidden or 2 * self.dim
        return LmConfig(dim=self.dim, blocks=self.lm_blocks, mlp_hidden=hidden,
                        max_seq_len=self.max_seq_len)

    def vocabulary(self) -> Vocabulary:
        return Vocabulary(chars=tuple(self.vocab_chars))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["vocab_chars"] = list(self.vocab_chars)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["vocab_chars"] = tuple(d.get("vocab_chars", ()))
        return cls(**d)


def build_model(config: ModelConfig, seed: int = 0) -> ParameterStore:
    """Fresh random parameters for every subsystem, in one store."""
    from .encoder import init_gin_params
    from .lm import init_lm_params
    from .projector import init_projector_params

    rng = np.random.default_rng(seed)
    dtype = config.numpy_dtype()
    store = ParameterStore()
    init_gin_params(store, config.gin_config(), rng, dtype=dtype)
    init_projector_params(store, config.gin_config(), config.proj_config(), rng,
                          dtype=dtype)
    init_lm_params(store, config.lm_config(), config.vocabulary().size, rng,
                   dtype=dtype)
    return store


def graph_tokens_for(smiles: str, store: ParameterStore, config: ModelConfig,
                     attn_out: Optional[dict] = None):
    graph = graph_from_smiles(smiles)
    stack = encode(graph, config.gin_config(), store, dtype=config.numpy_dtype())
    motifs = motif_matrix(graph)
    return project_any(stack, motifs, store, config.gin_config(),
                       config.proj_config(), molecule_id=smiles,
                       attn_out=attn_out)


def fuse_sample(smiles: str, instruction: str, response_ids,
                store: ParameterStore, config: ModelConfig,
                response_loss_mask=None) -> FusedSequence:
    vocab = config.vocabulary()
    graph_tokens = graph_tokens_for(smiles, store, config)
    return fuse(tokenize(smiles, vocab), graph_tokens,
                tokenize(instruction, vocab), response_ids,
                response_loss_mask=response_loss_mask)


def sample_loss(smiles: str, instruction: str, response: str,
                store: ParameterStore, config: ModelConfig,
                response_loss_mask=None, response_ids=None) -> Tensor:
    """NLL of one (molecule, instruction, response) record; EOS is appended
    to the response so stopping is trained."""
    vocab = config.vocabulary()
    if response_ids is None:
        response_ids = tokenize(response, vocab) + [EOS]
    seq = fuse_sample(smiles, instruction, response_ids, store, config,
                      response_loss_mask=response_loss_mask)
    return lm_mod.forward_loss(seq, store, config.lm_config())


def generate_response(smiles: str, instruction: str, store: ParameterStore,
                      config: ModelConfig, max_len: int = 128) -> str:
    vocab = config.vocabulary()
    seq = fuse_sample(smiles, instruction, [], store, config)
    ids = lm_mod.generate(seq, store, config.lm_config(), max_len=max_len)
    return lm_mod.detokenize(ids, vocab)


def graph_token_rows(config: ModelConfig, n_atoms: int) -> int:
    """Row count the projector will emit for a molecule of n_atoms atoms."""
    b, layers = config.tokens_b, config.gin_layers
    return {
        "mgproj": b * (layers + 2),
        "no-motif": b * (layers + 1),
        "resampler": b,
        "low": n_atoms,
        "high": n_atoms,
        "concat": n_atoms,
    }[config.variant]


def fused_length(smiles: str, instruction: str, response_ids,
                 config: ModelConfig) -> int:
    """Length the fused sequence will have, without running the encoder.

    Mirrors the fuse layout: BOS smiles SEP | graph | SEP text SEP | response.
    """
    vocab = config.vocabulary()
    graph_rows = graph_token_rows(config, graph_from_smiles(smiles).n_atoms)
    return (len(tokenize(smiles, vocab)) + 2 + graph_rows
            + len(tokenize(instruction, vocab)) + 2 + len(response_ids))
