"""Regenerate tests/data/smiles_corpus.json.

The expected atom/bond/ring/fragment counts come from an independent
token-counting oracle, not from the parser under test: atoms are counted by
lexical scanning, every atom after the first in a fragment contributes one
chain bond, and each ring-closure digit pair contributes one bond and one
independent cycle. Entries are real molecules from public records, so heavy
atom counts can be cross-checked against their documented formulas (a sample
is asserted below).

Run from the repository root:  python tests/make_parser_corpus.py
"""

from __future__ import annotations

import json
from pathlib import Path

MOLECULES = [
    ("methane", "C"),
    ("ethane", "CC"),
    ("isobutane", "CC(C)C"),
    ("methanol", "CO"),
    ("ethanol", "CCO"),
    ("dimethyl ether", "COC"),
    ("formic acid", "OC=O"),
    ("acetic acid", "CC(=O)O"),
    ("propionic acid", "CCC(=O)O"),
    ("acetone", "CC(=O)C"),
    ("acetaldehyde", "CC=O"),
    ("formaldehyde", "C=O"),
    ("ethylene", "C=C"),
    ("isoprene", "CC(=C)C=C"),
    ("acetylene", "C#C"),
    ("hydrogen cyanide", "C#N"),
    ("acetonitrile", "CC#N"),
    ("methylamine", "CN"),
    ("ethylamine", "CCN"),
    ("trimethylamine", "CN(C)C"),
    ("glycine", "NCC(=O)O"),
    ("alanine", "CC(N)C(=O)O"),
    ("urea", "NC(=O)N"),
    ("guanidine", "NC(=N)N"),
    ("methanethiol", "CS"),
    ("dimethyl sulfide", "CSC"),
    ("dimethyl sulfoxide", "CS(=O)C"),
    ("dimethyl sulfone", "CS(=O)(=O)C"),
    ("taurine", "NCCS(=O)(=O)O"),
    ("ethylene glycol", "OCCO"),
    ("glycerol", "OCC(O)CO"),
    ("chloroform", "ClC(Cl)Cl"),
    ("carbon tetrachloride", "ClC(Cl)(Cl)Cl"),
    ("dichloromethane", "ClCCl"),
    ("iodomethane", "CI"),
    ("trifluoroacetic acid", "OC(=O)C(F)(F)F"),
    ("halothane", "FC(F)(F)C(Cl)Br"),
    ("nitromethane", "C[N+](=O)[O-]"),
    ("acetamide", "CC(=O)N"),
    ("n-methylacetamide", "CC(=O)NC"),
    ("ethyl acetate", "CC(=O)OCC"),
    ("lactic acid", "CC(O)C(=O)O"),
    ("pyruvic acid", "CC(=O)C(=O)O"),
    ("oxalic acid", "OC(=O)C(=O)O"),
    ("succinic acid", "OC(=O)CCC(=O)O"),
    ("citric acid", "OC(=O)CC(O)(C(=O)O)CC(=O)O"),
    ("ethanolamine", "NCCO"),
    ("choline", "C[N+](C)(C)CCO"),
    ("ammonium", "[NH4+]"),
    ("sulfate", "[O-]S(=O)(=O)[O-]"),
    ("bicarbonate", "OC(=O)[O-]"),
    ("deuterochloroform", "[2H]C(Cl)(Cl)Cl"),
    ("sodium acetate", "CC(=O)[O-].[Na+]"),
    ("sodium chloride", "[Na+].[Cl-]"),
    ("cyclopropane", "C1CC1"),
    ("cyclopentane", "C1CCCC1"),
    ("cyclohexane", "C1CCCCC1"),
    ("cyclohexane (two-digit ring)", "C%10CCCCC%10"),
    ("cyclohexene", "C1CCC=CC1"),
    ("tetrahydrofuran", "C1CCOC1"),
    ("1,4-dioxane", "C1COCCO1"),
    ("morpholine", "C1COCCN1"),
    ("piperidine", "C1CCNCC1"),
    ("piperazine", "C1CNCCN1"),
    ("cyclohexanol", "OC1CCCCC1"),
    ("cyclohexanone", "O=C1CCCCC1"),
    ("benzene", "c1ccccc1"),
    ("toluene", "Cc1ccccc1"),
    ("phenol", "Oc1ccccc1"),
    ("aniline", "Nc1ccccc1"),
    ("styrene", "C=Cc1ccccc1"),
    ("benzaldehyde", "O=Cc1ccccc1"),
    ("benzoic acid", "OC(=O)c1ccccc1"),
    ("salicylic acid", "OC(=O)c1ccccc1O"),
    ("anisole", "COc1ccccc1"),
    ("chlorobenzene", "Clc1ccccc1"),
    ("nitrobenzene", "[O-][N+](=O)c1ccccc1"),
    ("benzonitrile", "N#Cc1ccccc1"),
    ("pyridine", "c1ccncc1"),
    ("pyrimidine", "c1cncnc1"),
    ("pyrazine", "c1cnccn1"),
    ("furan", "c1ccoc1"),
    ("thiophene", "c1ccsc1"),
    ("pyrrole", "c1cc[nH]c1"),
    ("imidazole", "c1c[nH]cn1"),
    ("naphthalene", "c1ccc2ccccc2c1"),
    ("quinoline", "c1ccc2ncccc2c1"),
    ("indole", "c1ccc2c(c1)cc[nH]2"),
    ("anthracene", "c1ccc2cc3ccccc3cc2c1"),
    ("biphenyl", "c1ccc(cc1)-c1ccccc1"),
    ("vanillin", "COc1cc(C=O)ccc1O"),
    ("paracetamol", "CC(=O)Nc1ccc(O)cc1"),
    ("aspirin", "CC(=O)Oc1ccccc1C(=O)O"),
    ("ibuprofen", "CC(C)Cc1ccc(cc1)C(C)C(=O)O"),
    ("caffeine", "Cn1cnc2c1c(=O)n(C)c(=O)n2C"),
    ("nicotine", "CN1CCC[C@H]1c1cccnc1"),
    ("glucose (pyranose)", "OC[C@H]1OC(O)[C@H](O)[C@@H](O)[C@@H]1O"),
    ("trinitrotoluene", "Cc1c(cc(cc1[N+](=O)[O-])[N+](=O)[O-])[N+](=O)[O-]"),
    ("trans-2-butene", "C/C=C/C"),
    ("cholesterol",
     "CC(C)CCC[C@@H](C)[C@H]1CC[C@H]2[C@@H]3CC=C4C[C@@H](O)CC[C@]4(C)[C@H]3CC[C@]12C"),
]

MALFORMED = [
    {"smiles": "", "error": "EmptyInput"},
    {"smiles": "C1CC", "error": "UnmatchedRingClosure"},
    {"smiles": "CC(C", "error": "UnbalancedParenthesis"},
    {"smiles": "[Zz]", "error": "UnknownElement"},
]

# heavy atom counts from the documented molecular formulas
FORMULA_CHECKS = {
    "benzene": 6,          # C6H6
    "aspirin": 13,         # C9H8O4
    "caffeine": 14,        # C8H10N4O2
    "ibuprofen": 15,       # C13H18O2
    "paracetamol": 11,     # C8H9NO2
    "naphthalene": 10,     # C10H8
    "nicotine": 12,        # C10H14N2
    "glucose (pyranose)": 12,   # C6H12O6
    "citric acid": 13,     # C6H8O7
    "trinitrotoluene": 16,  # C7H5N3O6
    "cholesterol": 28,     # C27H46O
    "taurine": 7,          # C2H7NO3S
}


def lexical_counts(smiles: str) -> dict:
    """Count atoms, bonds, rings, and fragments by token scanning alone."""
    atoms = 0
    ring_marks = 0
    dots = 0
    i = 0
    while i < len(smiles):
        ch = smiles[i]
        if ch == "[":
            end = smiles.index("]", i)
            atoms += 1
            i = end + 1
        elif smiles[i:i + 2] in ("Cl", "Br"):
            atoms += 1
            i += 2
        elif ch in "BCNOPSFI" or ch in "bcnops":
            atoms += 1
            i += 1
        elif ch == "%":
            ring_marks += 1
            i += 3
        elif ch.isdigit():
            ring_marks += 1
            i += 1
        elif ch == ".":
            dots += 1
            i += 1
        else:
            i += 1  # bond symbols, branches, stereo markers
    if ring_marks % 2:
        raise ValueError(f"odd ring-closure count in {smiles!r}")
    fragments = dots + 1
    ring_pairs = ring_marks // 2
    return {
        "atoms": atoms,
        "bonds": atoms - fragments + ring_pairs,
        "rings": ring_pairs,
        "fragments": fragments,
    }


def main() -> None:
    entries = []
    for name, smiles in MOLECULES:
        counts = lexical_counts(smiles)
        if name in FORMULA_CHECKS:
            assert counts["atoms"] == FORMULA_CHECKS[name], \
                f"{name}: oracle says {counts['atoms']}, formula says " \
                f"{FORMULA_CHECKS[name]}"
        entries.append({"name": name, "smiles": smiles, **counts})
    assert len(entries) == 100, f"corpus has {len(entries)} molecules, want 100"
    out = {"molecules": entries, "malformed": MALFORMED}
    path = Path(__file__).parent / "data" / "smiles_corpus.json"
    path.write_text(json.dumps(out, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {len(entries)} molecules and {len(MALFORMED)} malformed "
          f"cases to {path}")


if __name__ == "__main__":
    main()
