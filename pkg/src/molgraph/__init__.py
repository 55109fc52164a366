"""Molecular graph-language modeling toolkit."""

from .chem import (MolecularGraph, SmilesError, featurize, graph_from_smiles,
                   parse_smiles, validate)
from .encoder import GinConfig, LayerStack, encode, gin_layer, oversmoothing_stats
from .metrics import bleu, exact_match, levenshtein, mae, meteor
from .model import ModelConfig, build_model, generate_response, sample_loss
from .motif import FunctionalGroup, MotifMatrix, detect_functional_groups, motif_matrix
from .numerics import ParameterStore, Tensor, backward, finite_difference_check, tensor
from .pipeline import TrainingConfig, lr_at, train_stage1, train_stage2
from .projector import GraphTokens, ProjectorConfig, project, project_baseline

__version__ = "0.1.0"

__all__ = [
    "MolecularGraph", "SmilesError", "featurize", "graph_from_smiles",
    "parse_smiles", "validate",
    "GinConfig", "LayerStack", "encode", "gin_layer", "oversmoothing_stats",
    "bleu", "exact_match", "levenshtein", "mae", "meteor",
    "ModelConfig", "build_model", "generate_response", "sample_loss",
    "FunctionalGroup", "MotifMatrix", "detect_functional_groups", "motif_matrix",
    "ParameterStore", "Tensor", "backward", "finite_difference_check", "tensor",
    "TrainingConfig", "lr_at", "train_stage1", "train_stage2",
    "GraphTokens", "ProjectorConfig", "project", "project_baseline",
    "__version__",
]
