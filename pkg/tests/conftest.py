import json
from dataclasses import replace
from pathlib import Path

import pytest

from molgraph.chem import MolecularGraph, Bond

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def smiles_corpus():
    return json.loads((DATA_DIR / "smiles_corpus.json").read_text(encoding="utf-8"))


@pytest.fixture(scope="session")
def toy_caption_path():
    return DATA_DIR / "toy_captions.jsonl"


@pytest.fixture(scope="session")
def sample_conversation_text():
    return (DATA_DIR / "sample_conversation.txt").read_text(encoding="utf-8")


def permute_graph(graph: MolecularGraph, perm) -> MolecularGraph:
    """Relabel atoms by perm (old index i becomes perm[i]); bond order kept."""
    perm = list(perm)
    inverse = [0] * len(perm)
    for old, new in enumerate(perm):
        inverse[new] = old
    atoms = tuple(graph.atoms[inverse[new]] for new in range(len(perm)))
    bonds = tuple(Bond(perm[b.u], perm[b.v], b.order, b.direction)
                  for b in graph.bonds)
    node_features = None
    if graph.node_features is not None:
        node_features = graph.node_features[inverse]
    return replace(graph, atoms=atoms, bonds=bonds, node_features=node_features)
