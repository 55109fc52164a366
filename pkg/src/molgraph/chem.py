"""SMILES parsing into featurized molecular graphs.

Supports the organic subset plus bracket atoms from the first five periods,
charges, isotopes, single/double/triple/aromatic bonds, branches, ring
closures (including %nn), and dot-separated fragments. Stereo markers
(/, \\, @, @@) are recorded as annotations and never interpreted; aromatic
perception is purely syntactic (lowercase atoms / ':' bonds).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

ORGANIC_SUBSET = ("B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I")
AROMATIC_BARE = ("b", "c", "n", "o", "p", "s")
AROMATIC_BRACKET = ("b", "c", "n", "o", "p", "s", "as", "se")

# Periods 1-5 of the periodic table; bracket atoms outside this set are rejected.
SUPPORTED_ELEMENTS = (
    "H", "He",
    "Li", "Be", "B", "C", "N", "O", "F", "Ne",
    "Na", "Mg", "Al", "Si", "P", "S", "Cl", "Ar",
    "K", "Ca", "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn",
    "Ga", "Ge", "As", "Se", "Br", "Kr",
    "Rb", "Sr", "Y", "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd",
    "In", "Sn", "Sb", "Te", "I", "Xe",
)
_SUPPORTED = frozenset(SUPPORTED_ELEMENTS)

# Valence lists for implicit-H assignment on bare organic-subset atoms.
DEFAULT_VALENCES = {
    "B": (3,),
    "C": (4,),
    "N": (3, 5),
    "O": (2,),
    "P": (3, 5),
    "S": (2, 4, 6),
    "F": (1,),
    "Cl": (1,),
    "Br": (1,),
    "I": (1,),
}

# Feature schema. Elements outside the named slots share the final "other" slot.
FEATURE_ELEMENTS = ("H", "B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I", "other")
BOND_ORDERS = ("single", "double", "triple", "aromatic")
NODE_FEATURE_DIM = len(FEATURE_ELEMENTS) + 4  # one-hot + degree, charge, H count, aromatic
EDGE_FEATURE_DIM = len(BOND_ORDERS) + 1       # one-hot + in-ring flag

MAX_FORMAL_CHARGE = 4


class SmilesError(ValueError):
    """Base parse failure; ``offset`` is the byte position of the fault."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class EmptyInput(SmilesError):
    pass


class UnbalancedParenthesis(SmilesError):
    pass


class UnmatchedRingClosure(SmilesError):
    pass


class UnknownElement(SmilesError):
    pass


@dataclass(frozen=True)
class Atom:
    element: str
    formal_charge: int = 0
    is_aromatic: bool = False
    hydrogen_count: int = 0
    isotope: Optional[int] = None
    chirality_tag: Optional[str] = None


@dataclass(frozen=True)
class Bond:
    u: int
    v: int
    order: str
    direction: Optional[str] = None  # '/' or '\\' stereo marker, recorded only

    def pair(self) -> tuple[int, int]:
        return (self.u, self.v) if self.u < self.v else (self.v, self.u)


@dataclass(frozen=True)
class MolecularGraph:
    atoms: tuple[Atom, ...]
    bonds: tuple[Bond, ...]
    source_smiles: str
    n_fragments: int
    ring_bond_indices: frozenset[int]
    node_features: Optional[np.ndarray] = None
    edge_features: Optional[np.ndarray] = None

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    @property
    def n_bonds(self) -> int:
        return len(self.bonds)

    @property
    def n_rings(self) -> int:
        """Independent-cycle count: |E| - |V| + components."""
        return self.n_bonds - self.n_atoms + self.n_fragments

    def neighbors(self, idx: int) -> list[int]:
        out = []
        for b in self.bonds:
            if b.u == idx:
                out.append(b.v)
            elif b.v == idx:
                out.append(b.u)
        return out

    def incident_bonds(self, idx: int) -> list[tuple[int, Bond]]:
        """(bond index, bond) pairs touching atom ``idx``."""
        return [(i, b) for i, b in enumerate(self.bonds) if idx in (b.u, b.v)]

    def degree(self, idx: int) -> int:
        return len(self.neighbors(idx))

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n_atoms, self.n_atoms), dtype=np.float64)
        for b in self.bonds:
            a[b.u, b.v] = 1.0
            a[b.v, b.u] = 1.0
        return a

    def atom_in_ring(self, idx: int) -> bool:
        return any(i in self.ring_bond_indices for i, _ in self.incident_bonds(idx))


_BOND_SYMBOLS = {"-": "single", "=": "double", "#": "triple", ":": "aromatic",
                 "/": "single", "\\": "single"}


@dataclass
class _PendingBond:
    order: Optional[str] = None       # None means "unspecified"
    direction: Optional[str] = None
    offset: int = -1


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.atoms: list[Atom] = []
        self.bonds: list[Bond] = []
        self.bonded_pairs: set[tuple[int, int]] = set()
        self.bracket_atoms: set[int] = set()
        self.prev_atom: Optional[int] = None
        self.branch_stack: list[tuple[Optional[int], int]] = []
        # ring number -> (atom index, pending bond at open, offset of digit)
        self.open_rings: dict[int, tuple[int, _PendingBond, int]] = {}
        self.pending = _PendingBond()

    def fail(self, cls, message: str, offset: Optional[int] = None):
        raise cls(message, self.pos if offset is None else offset)

    def parse(self) -> MolecularGraph:
        text = self.text
        if not text:
            raise EmptyInput("empty SMILES input", 0)
        while self.pos < len(text):
            ch = text[self.pos]
            if ch == "(":
                if self.prev_atom is None:
                    self.fail(UnbalancedParenthesis, "branch with no preceding atom")
                self.branch_stack.append((self.prev_atom, self.pos))
                self.pos += 1
            elif ch == ")":
                if not self.branch_stack:
                    self.fail(UnbalancedParenthesis, "')' without matching '('")
                if self.pending.order is not None:
                    self.fail(SmilesError, "dangling bond before ')'", self.pending.offset)
                self.prev_atom = self.branch_stack.pop()[0]
                self.pos += 1
            elif ch in _BOND_SYMBOLS:
                if self.pending.order is not None:
                    self.fail(SmilesError, "two consecutive bond symbols")
                self.pending = _PendingBond(
                    _BOND_SYMBOLS[ch], ch if ch in ("/", "\\") else None, self.pos)
                self.pos += 1
            elif ch == ".":
                if self.pending.order is not None:
                    self.fail(SmilesError, "bond symbol before '.'", self.pending.offset)
                if self.branch_stack:
                    self.fail(SmilesError, "'.' inside a branch")
                self.prev_atom = None
                self.pos += 1
            elif ch.isdigit() or ch == "%":
                self._ring_closure()
            elif ch == "[":
                self._bracket_atom()
            else:
                self._bare_atom()
        if self.branch_stack:
            self.fail(UnbalancedParenthesis, "unclosed '('", self.branch_stack[-1][1])
        if self.open_rings:
            first = min(off for _, _, off in self.open_rings.values())
            self.fail(UnmatchedRingClosure, "unclosed ring bond", first)
        if self.pending.order is not None:
            self.fail(SmilesError, "trailing bond symbol", self.pending.offset)
        if not self.atoms:
            raise EmptyInput("no atoms in SMILES input", 0)
        return self._build_graph()

    # -- atom handling ---------------------------------------------------

    def _add_atom(self, atom: Atom, from_bracket: bool = False):
        idx = len(self.atoms)
        self.atoms.append(atom)
        if from_bracket:
            self.bracket_atoms.add(idx)
        if self.prev_atom is not None:
            self._add_bond(self.prev_atom, idx, self.pending)
        self.pending = _PendingBond()
        self.prev_atom = idx

    def _add_bond(self, u: int, v: int, pending: _PendingBond, offset: Optional[int] = None):
        if u == v:
            self.fail(SmilesError, "bond joins an atom to itself",
                      offset if offset is not None else self.pos)
        pair = (u, v) if u < v else (v, u)
        if pair in self.bonded_pairs:
            self.fail(SmilesError, "duplicate bond between one atom pair",
                      offset if offset is not None else self.pos)
        order = pending.order
        if order is None:
            both_aromatic = self.atoms[u].is_aromatic and self.atoms[v].is_aromatic
            order = "aromatic" if both_aromatic else "single"
        self.bonds.append(Bond(u, v, order, pending.direction))
        self.bonded_pairs.add(pair)

    def _ring_closure(self):
        text = self.text
        start = self.pos
        if text[self.pos] == "%":
            if self.pos + 2 >= len(text) or not text[self.pos + 1:self.pos + 3].isdigit():
                self.fail(SmilesError, "'%' needs two digits")
            number = int(text[self.pos + 1:self.pos + 3])
            self.pos += 3
        else:
            number = int(text[self.pos])
            self.pos += 1
        if self.prev_atom is None:
            self.fail(SmilesError, "ring closure digit with no preceding atom", start)
        if number in self.open_rings:
            other, open_pending, _ = self.open_rings.pop(number)
            order = self._resolve_ring_order(open_pending, self.pending, other, start)
            merged = _PendingBond(order, self.pending.direction or open_pending.direction)
            self._add_bond(other, self.prev_atom, merged, start)
        else:
            self.open_rings[number] = (self.prev_atom, self.pending, start)
        self.pending = _PendingBond()

    def _resolve_ring_order(self, a: _PendingBond, b: _PendingBond,
                            other: int, offset: int) -> Optional[str]:
        if a.order is not None and b.order is not None and a.order != b.order:
            self.fail(SmilesError, "ring bond order differs at open and close", offset)
        order = a.order or b.order
        if order is None:
            u, v = self.atoms[other], self.atoms[self.prev_atom]
            order = "aromatic" if (u.is_aromatic and v.is_aromatic) else "single"
        return order

    def _bare_atom(self):
        text = self.text
        two = text[self.pos:self.pos + 2]
        ch = text[self.pos]
        if two in ("Cl", "Br"):
            self._add_atom(Atom(two))
            self.pos += 2
        elif ch in "BCNOPSFI":
            self._add_atom(Atom(ch))
            self.pos += 1
        elif ch in AROMATIC_BARE:
            self._add_atom(Atom(ch.upper(), is_aromatic=True))
            self.pos += 1
        else:
            self.fail(UnknownElement, f"unexpected character {ch!r}")

    def _bracket_atom(self):
        text = self.text
        open_pos = self.pos
        close = text.find("]", open_pos)
        if close < 0:
            self.fail(SmilesError, "unclosed '['", open_pos)
        i = open_pos + 1
        isotope = None
        if i < close and text[i].isdigit():
            j = i
            while j < close and text[j].isdigit():
                j += 1
            isotope = int(text[i:j])
            if isotope <= 0:
                self.fail(SmilesError, "isotope must be positive", i)
            i = j
        if i >= close:
            self.fail(UnknownElement, "bracket atom with no element symbol", i)
        element, aromatic, i = self._bracket_element(i, close)
        chirality = None
        if i < close and text[i] == "@":
            chirality = "@@" if text[i:i + 2] == "@@" else "@"
            i += len(chirality)
        hydrogens = 0
        if i < close and text[i] == "H":
            i += 1
            j = i
            while j < close and text[j].isdigit():
                j += 1
            hydrogens = int(text[i:j]) if j > i else 1
            i = j
        charge = 0
        if i < close and text[i] in "+-":
            sign = 1 if text[i] == "+" else -1
            symbol = text[i]
            i += 1
            if i < close and text[i].isdigit():
                j = i
                while j < close and text[j].isdigit():
                    j += 1
                charge = sign * int(text[i:j])
                i = j
            else:
                charge = sign
                while i < close and text[i] == symbol:
                    charge += sign
                    i += 1
        if i < close and text[i] == ":":  # atom map, recorded nowhere
            i += 1
            j = i
            while j < close and text[j].isdigit():
                j += 1
            if j == i:
                self.fail(SmilesError, "':' needs an atom-map number", i)
            i = j
        if i != close:
            self.fail(SmilesError, f"unexpected {text[i]!r} in bracket atom", i)
        if abs(charge) > MAX_FORMAL_CHARGE:
            self.fail(SmilesError, f"formal charge {charge} out of range", open_pos)
        self._add_atom(Atom(element, formal_charge=charge, is_aromatic=aromatic,
                            hydrogen_count=hydrogens, isotope=isotope,
                            chirality_tag=chirality), from_bracket=True)
        self.pos = close + 1

    def _bracket_element(self, i: int, close: int) -> tuple[str, bool, int]:
        text = self.text
        two = text[i:i + 2]
        if two in AROMATIC_BRACKET and len(two) == 2:
            return two.capitalize(), True, i + 2
        ch = text[i]
        if ch in AROMATIC_BRACKET:
            return ch.upper(), True, i + 1
        if ch.isupper():
            cand = two if (i + 1 < close and text[i + 1].islower()) else ch
            if cand in _SUPPORTED:
                return cand, False, i + len(cand)
            self.fail(UnknownElement, f"unknown element {cand!r}", i)
        self.fail(UnknownElement, f"unknown element {ch!r}", i)

    # -- graph assembly ---------------------------------------------------

    def _build_graph(self) -> MolecularGraph:
        atoms = [self._assign_hydrogens(i, a) for i, a in enumerate(self.atoms)]
        n_fragments = _count_components(len(atoms), self.bonds)
        ring_bonds = _ring_bond_indices(len(atoms), self.bonds)
        return MolecularGraph(
            atoms=tuple(atoms),
            bonds=tuple(self.bonds),
            source_smiles=self.text,
            n_fragments=n_fragments,
            ring_bond_indices=ring_bonds,
        )

    def _assign_hydrogens(self, idx: int, atom: Atom) -> Atom:
        # bracket atoms keep their explicit H count
        if idx in self.bracket_atoms or atom.element not in DEFAULT_VALENCES:
            return atom
        orders = {"single": 1, "double": 2, "triple": 3, "aromatic": 1}
        bond_sum = sum(orders[b.order] for b in self.bonds if idx in (b.u, b.v))
        valences = DEFAULT_VALENCES[atom.element]
        if atom.is_aromatic:
            # one valence unit is consumed by the delocalized system
            h = max(0, valences[0] - (bond_sum + 1))
        else:
            h = 0
            for v in valences:
                if v >= bond_sum:
                    h = v - bond_sum
                    break
        return replace(atom, hydrogen_count=h)


def _count_components(n: int, bonds: list[Bond]) -> int:
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for b in bonds:
        ru, rv = find(b.u), find(b.v)
        if ru != rv:
            parent[ru] = rv
    return len({find(i) for i in range(n)})


def _ring_bond_indices(n: int, bonds: list[Bond]) -> frozenset[int]:
    """Bond indices on some cycle, i.e. non-bridges (iterative Tarjan)."""
    adj: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    for i, b in enumerate(bonds):
        adj[b.u].append((b.v, i))
        adj[b.v].append((b.u, i))
    disc = [-1] * n
    low = [0] * n
    bridges: set[int] = set()
    timer = 0
    for root in range(n):
        if disc[root] >= 0:
            continue
        stack: list[tuple[int, int, int]] = [(root, -1, 0)]
        while stack:
            node, in_edge, ptr = stack.pop()
            if ptr == 0:
                disc[node] = low[node] = timer
                timer += 1
            if ptr < len(adj[node]):
                stack.append((node, in_edge, ptr + 1))
                nxt, edge = adj[node][ptr]
                if edge == in_edge:
                    continue
                if disc[nxt] >= 0:
                    low[node] = min(low[node], disc[nxt])
                else:
                    stack.append((nxt, edge, 0))
            elif in_edge >= 0:
                b = bonds[in_edge]
                parent_node = b.v if b.u == node else b.u
                low[parent_node] = min(low[parent_node], low[node])
                if low[node] > disc[parent_node]:
                    bridges.add(in_edge)
    return frozenset(i for i in range(len(bonds)) if i not in bridges)


def parse_smiles(text: str) -> MolecularGraph:
    """Parse a SMILES string into a molecular graph (features unpopulated)."""
    return _Parser(text).parse()


def featurize(graph: MolecularGraph) -> MolecularGraph:
    """Populate node and edge feature matrices; deterministic given the graph."""
    n, m = graph.n_atoms, graph.n_bonds
    node = np.zeros((n, NODE_FEATURE_DIM), dtype=np.float64)
    slot = {el: i for i, el in enumerate(FEATURE_ELEMENTS)}
    for i, atom in enumerate(graph.atoms):
        node[i, slot.get(atom.element, slot["other"])] = 1.0
        node[i, len(FEATURE_ELEMENTS)] = graph.degree(i)
        node[i, len(FEATURE_ELEMENTS) + 1] = atom.formal_charge
        node[i, len(FEATURE_ELEMENTS) + 2] = atom.hydrogen_count
        node[i, len(FEATURE_ELEMENTS) + 3] = 1.0 if atom.is_aromatic else 0.0
    edge = np.zeros((m, EDGE_FEATURE_DIM), dtype=np.float64)
    order_slot = {o: i for i, o in enumerate(BOND_ORDERS)}
    for j, bond in enumerate(graph.bonds):
        edge[j, order_slot[bond.order]] = 1.0
        edge[j, len(BOND_ORDERS)] = 1.0 if j in graph.ring_bond_indices else 0.0
    return replace(graph, node_features=node, edge_features=edge)


def graph_from_smiles(text: str) -> MolecularGraph:
    """parse_smiles followed by featurize."""
    return featurize(parse_smiles(text))


def validate(text: str) -> bool:
    """True iff ``text`` parses; never raises."""
    try:
        parse_smiles(text)
        return True
    except SmilesError:
        return False


def graph_to_dict(graph: MolecularGraph) -> dict:
    """JSON-ready document with atoms, bonds, and a validity flag."""
    return {
        "atoms": [
            {
                "element": a.element,
                "charge": a.formal_charge,
                "aromatic": a.is_aromatic,
                "hydrogens": a.hydrogen_count,
                "isotope": a.isotope,
                "chirality": a.chirality_tag,
            }
            for a in graph.atoms
        ],
        "bonds": [
            {"u": b.u, "v": b.v, "order": b.order, "in_ring": i in graph.ring_bond_indices}
            for i, b in enumerate(graph.bonds)
        ],
        "fragments": graph.n_fragments,
        "rings": graph.n_rings,
        "valid": True,
    }
