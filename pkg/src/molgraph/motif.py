"""Functional-group detection and the stacked motif feature matrix.

Groups are found by structural rules over the parsed graph, not by a pattern
language. Rules of different kinds may claim the same atoms; within one kind
matches are kept disjoint by greedy selection in deterministic order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .chem import MolecularGraph, NODE_FEATURE_DIM

CATALOG_KINDS = (
    "carboxyl", "ester", "amide", "hydroxyl", "amine", "ether", "ketone",
    "aldehyde", "nitrile", "nitro", "thiol", "halogen", "phosphate",
    "sulfonyl", "aromatic_ring", "aliphatic_ring",
)

RING_KINDS = frozenset({"aromatic_ring", "aliphatic_ring"})

# kind one-hot + atom count + ring flag + mean node features
MOTIF_FEATURE_DIM = len(CATALOG_KINDS) + 2 + NODE_FEATURE_DIM


@dataclass(frozen=True)
class FunctionalGroup:
    kind: str
    atom_indices: frozenset[int]
    ring_flag: bool


@dataclass(frozen=True)
class MotifMatrix:
    rows: np.ndarray                      # M x MOTIF_FEATURE_DIM
    group_refs: tuple[FunctionalGroup, ...]

    @property
    def count(self) -> int:
        return len(self.group_refs)


@dataclass(frozen=True)
class CatalogRule:
    kind: str
    params: dict


def default_catalog() -> list[CatalogRule]:
    return [CatalogRule(kind, {}) for kind in CATALOG_KINDS]


def load_catalog(path: str) -> list[CatalogRule]:
    """Read a catalog override: a JSON list of {"kind": ..., <params>}."""
    with open(path, encoding="utf-8") as fh:
        entries = json.load(fh)
    rules = []
    for entry in entries:
        kind = entry["kind"]
        if kind not in CATALOG_KINDS:
            raise ValueError(f"unknown functional-group kind {kind!r}")
        rules.append(CatalogRule(kind, {k: v for k, v in entry.items() if k != "kind"}))
    return rules


# -- per-kind matchers ----------------------------------------------------

def _carbonyl_carbons(g: MolecularGraph) -> list[tuple[int, int]]:
    """(carbon, terminal double-bonded oxygen) pairs."""
    out = []
    for b in g.bonds:
        if b.order != "double":
            continue
        for c, o in ((b.u, b.v), (b.v, b.u)):
            if g.atoms[c].element == "C" and g.atoms[o].element == "O" \
                    and g.degree(o) == 1:
                out.append((c, o))
    return out


def _neighbor_bonds(g: MolecularGraph, idx: int) -> list[tuple[int, str]]:
    out = []
    for _, b in g.incident_bonds(idx):
        other = b.v if b.u == idx else b.u
        out.append((other, b.order))
    return out


def _match_carboxyl(g: MolecularGraph, params: dict) -> list[frozenset[int]]:
    found = []
    for c, o_dbl in _carbonyl_carbons(g):
        for other, order in _neighbor_bonds(g, c):
            a = g.atoms[other]
            if order == "single" and a.element == "O" and g.degree(other) == 1 \
                    and (a.hydrogen_count >= 1 or a.formal_charge < 0):
                found.append(frozenset({c, o_dbl, other}))
    return found


def _match_ester(g: MolecularGraph, params: dict) -> list[frozenset[int]]:
    found = []
    for c, o_dbl in _carbonyl_carbons(g):
        for other, order in _neighbor_bonds(g, c):
            if order != "single" or g.atoms[other].element != "O":
                continue
            for third, order2 in _neighbor_bonds(g, other):
                if third != c and order2 == "single" and g.atoms[third].element == "C":
                    found.append(frozenset({c, o_dbl, other, third}))
    return found


def _match_amide(g: MolecularGraph, params: dict) -> list[frozenset[int]]:
    found = []
    for c, o_dbl in _carbonyl_carbons(g):
        for other, order in _neighbor_bonds(g, c):
            if order == "single" and g.atoms[other].element == "N":
                found.append(frozenset({c, o_dbl, other}))
    return found


def _match_hydroxyl(g: MolecularGraph, params: dict) -> list[frozenset[int]]:
    found = []
    for i, a in enumerate(g.atoms):
        if a.element != "O" or a.hydrogen_count < 1 or a.is_aromatic:
            continue
        nbrs = _neighbor_bonds(g, i)
        if len(nbrs) == 1 and nbrs[0][1] == "single" \
                and g.atoms[nbrs[0][0]].element == "C":
            found.append(frozenset({i, nbrs[0][0]}))
    return found


def _carbonyl_carbon_set(g: MolecularGraph) -> set[int]:
    return {c for c, _ in _carbonyl_carbons(g)}


def _match_amine(g: MolecularGraph, params: dict) -> list[frozenset[int]]:
    carbonyls = _carbonyl_carbon_set(g)
    found = []
    for i, a in enumerate(g.atoms):
        if a.element != "N" or a.is_aromatic:
            continue
        nbrs = _neighbor_bonds(g, i)
        if not nbrs or any(order != "single" for _, order in nbrs):
            continue
        carbons = [n for n, _ in nbrs if g.atoms[n].element == "C"]
        if len(carbons) != len(nbrs):
            continue
        if any(n in carbonyls for n in carbons):
            continue  # amide nitrogen, claimed by its own rule
        found.append(frozenset({i, *carbons}))
    return found


def _match_ether(g: MolecularGraph, params: dict) -> list[frozenset[int]]:
    found = []
    for i, a in enumerate(g.atoms):
        if a.element != "O" or a.is_aromatic or a.hydrogen_count:
            continue
        nbrs = _neighbor_bonds(g, i)
        if len(nbrs) == 2 and all(order == "single" for _, order in nbrs) \
                and all(g.atoms[n].element == "C" for n, _ in nbrs):
            found.append(frozenset({i, nbrs[0][0], nbrs[1][0]}))
    return found


def _match_ketone(g: MolecularGraph, params: dict) -> list[frozenset[int]]:
    found = []
    for c, o_dbl in _carbonyl_carbons(g):
        carbons = [n for n, order in _neighbor_bonds(g, c)
                   if g.atoms[n].element == "C"]
        if len(carbons) == 2:
            found.append(frozenset({c, o_dbl, *carbons}))
    return found


def _match_aldehyde(g: MolecularGraph, params: dict) -> list[frozenset[int]]:
    found = []
    for c, o_dbl in _carbonyl_carbons(g):
        carbons = [n for n, _ in _neighbor_bonds(g, c)
                   if g.atoms[n].element == "C"]
        if g.atoms[c].hydrogen_count >= 1 and len(carbons) <= 1:
            found.append(frozenset({c, o_dbl}))
    return found


def _match_nitrile(g: MolecularGraph, params: dict) -> list[frozenset[int]]:
    found = []
    for b in g.bonds:
        if b.order != "triple":
            continue
        for c, n in ((b.u, b.v), (b.v, b.u)):
            if g.atoms[c].element == "C" and g.atoms[n].element == "N" \
                    and g.degree(n) == 1:
                found.append(frozenset({c, n}))
    return found


def _match_nitro(g: MolecularGraph, params: dict) -> list[frozenset[int]]:
    found = []
    for i, a in enumerate(g.atoms):
        if a.element != "N":
            continue
        terminal_os = [(n, order) for n, order in _neighbor_bonds(g, i)
                       if g.atoms[n].element == "O" and g.degree(n) == 1]
        if len(terminal_os) != 2:
            continue
        has_double = any(order == "double" for _, order in terminal_os)
        if has_double or a.formal_charge > 0:
            found.append(frozenset({i, terminal_os[0][0], terminal_os[1][0]}))
    return found


def _match_thiol(g: MolecularGraph, params: dict) -> list[frozenset[int]]:
    found = []
    for i, a in enumerate(g.atoms):
        if a.element != "S" or a.hydrogen_count < 1 or a.is_aromatic:
            continue
        nbrs = _neighbor_bonds(g, i)
        if len(nbrs) == 1 and nbrs[0][1] == "single" \
                and g.atoms[nbrs[0][0]].element == "C":
            found.append(frozenset({i, nbrs[0][0]}))
    return found


def _match_halogen(g: MolecularGraph, params: dict) -> list[frozenset[int]]:
    elements = set(params.get("elements", ("F", "Cl", "Br", "I")))
    found = []
    for i, a in enumerate(g.atoms):
        if a.element in elements and g.degree(i) == 1:
            found.append(frozenset({i}))
    return found


def _match_phosphate(g: MolecularGraph, params: dict) -> list[frozenset[int]]:
    found = []
    for i, a in enumerate(g.atoms):
        if a.element != "P":
            continue
        oxygens = [n for n, _ in _neighbor_bonds(g, i)
                   if g.atoms[n].element == "O"]
        if len(oxygens) >= 3:
            found.append(frozenset({i, *oxygens}))
    return found


def _match_sulfonyl(g: MolecularGraph, params: dict) -> list[frozenset[int]]:
    found = []
    for i, a in enumerate(g.atoms):
        if a.element != "S":
            continue
        double_os = [n for n, order in _neighbor_bonds(g, i)
                     if order == "double" and g.atoms[n].element == "O"
                     and g.degree(n) == 1]
        if len(double_os) >= 2:
            found.append(frozenset({i, *double_os[:2]}))
    return found


def _ring_components(g: MolecularGraph, aromatic: bool) -> list[frozenset[int]]:
    """Connected components of the (non-)aromatic ring-bond subgraph."""
    adj: dict[int, set[int]] = {}
    for idx in g.ring_bond_indices:
        b = g.bonds[idx]
        if (b.order == "aromatic") != aromatic:
            continue
        adj.setdefault(b.u, set()).add(b.v)
        adj.setdefault(b.v, set()).add(b.u)
    seen: set[int] = set()
    comps = []
    for start in sorted(adj):
        if start in seen:
            continue
        comp = set()
        stack = [start]
        while stack:
            node = stack.pop()
            if node in comp:
                continue
            comp.add(node)
            stack.extend(adj[node] - comp)
        seen |= comp
        if len(comp) >= 3:
            comps.append(frozenset(comp))
    return comps


_MATCHERS: dict[str, Callable[[MolecularGraph, dict], list[frozenset[int]]]] = {
    "carboxyl": _match_carboxyl,
    "ester": _match_ester,
    "amide": _match_amide,
    "hydroxyl": _match_hydroxyl,
    "amine": _match_amine,
    "ether": _match_ether,
    "ketone": _match_ketone,
    "aldehyde": _match_aldehyde,
    "nitrile": _match_nitrile,
    "nitro": _match_nitro,
    "thiol": _match_thiol,
    "halogen": _match_halogen,
    "phosphate": _match_phosphate,
    "sulfonyl": _match_sulfonyl,
    "aromatic_ring": lambda g, p: _ring_components(g, aromatic=True),
    "aliphatic_ring": lambda g, p: _ring_components(g, aromatic=False),
}


def detect_functional_groups(
    graph: MolecularGraph,
    catalog: Optional[list[CatalogRule]] = None,
) -> list[FunctionalGroup]:
    """All catalog matches, ordered by (catalog position, lowest atom index).

    Matches of one kind never share atoms: candidates are ranked by their
    sorted index tuple and greedily kept.
    """
    rules = catalog if catalog is not None else default_catalog()
    groups: list[FunctionalGroup] = []
    for rule in rules:
        candidates = _MATCHERS[rule.kind](graph, rule.params)
        candidates = sorted(set(candidates), key=lambda s: tuple(sorted(s)))
        claimed: set[int] = set()
        for atoms in candidates:
            if atoms & claimed:
                continue
            claimed |= atoms
            groups.append(FunctionalGroup(rule.kind, atoms, rule.kind in RING_KINDS))
    return groups


def vectorize_group(group: FunctionalGroup, graph: MolecularGraph) -> np.ndarray:
    """(kind one-hot, atom count, ring flag, mean member node features)."""
    if graph.node_features is None:
        raise ValueError("graph must be featurized before vectorizing groups")
    vec = np.zeros(MOTIF_FEATURE_DIM, dtype=np.float64)
    vec[CATALOG_KINDS.index(group.kind)] = 1.0
    vec[len(CATALOG_KINDS)] = len(group.atom_indices)
    vec[len(CATALOG_KINDS) + 1] = 1.0 if group.ring_flag else 0.0
    members = sorted(group.atom_indices)
    vec[len(CATALOG_KINDS) + 2:] = graph.node_features[members].mean(axis=0)
    return vec


def motif_matrix(
    graph: MolecularGraph,
    catalog: Optional[list[CatalogRule]] = None,
) -> MotifMatrix:
    """Stack vectorized groups in detection order; M=0 keeps the declared width."""
    groups = detect_functional_groups(graph, catalog)
    if not groups:
        rows = np.zeros((0, MOTIF_FEATURE_DIM), dtype=np.float64)
    else:
        rows = np.stack([vectorize_group(g, graph) for g in groups])
    return MotifMatrix(rows=rows, group_refs=tuple(groups))
