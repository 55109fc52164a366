"""Regenerate tests/data/toy_captions.jsonl.

Fifty caption records whose responses state structural counts taken from the
committed parser corpus, so the text depends on the molecule and a model can
only fit it by using the molecule. Short captions keep training steps cheap.

Run from the repository root:  python tests/make_toy_corpus.py
"""

from __future__ import annotations

import json
from pathlib import Path

DATA = Path(__file__).parent / "data"


def main() -> None:
    corpus = json.loads((DATA / "smiles_corpus.json").read_text(encoding="utf-8"))
    molecules = [m for m in corpus["molecules"] if m["fragments"] == 1][:50]
    assert len(molecules) == 50, f"need 50 single-fragment molecules, got {len(molecules)}"
    records = []
    for m in molecules:
        caption = f"{m['atoms']} atoms, {m['bonds']} bonds, {m['rings']} rings."
        records.append({
            "smiles": m["smiles"],
            "instruction": "Describe the molecule.",
            "response": caption,
            "task": "caption",
        })
    out = DATA / "toy_captions.jsonl"
    with out.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    print(f"wrote {len(records)} caption records to {out}")


if __name__ == "__main__":
    main()
