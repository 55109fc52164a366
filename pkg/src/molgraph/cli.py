"""The molgraph command line: parsing, encoding, projecting, training, and eval.

Report-style subcommands (oversmooth, train, eval, attention dumps) write a
figure next to each delimited output file.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import chem, instructgen, metrics
from .checkpoint import load_checkpoint
from .encoder import encode, oversmoothing_stats
from .model import ModelConfig, build_model, generate_response, graph_tokens_for
from .motif import detect_functional_groups, load_catalog
from .pipeline import TrainingConfig, run_training


def _load_model(args) -> tuple:
    """Model store plus config, from a checkpoint or a seeded fresh build."""
    if getattr(args, "ckpt", None):
        store, snapshot = load_checkpoint(args.ckpt)
        return store, ModelConfig.from_dict(snapshot["model"])
    config = ModelConfig(dtype="float64")
    return build_model(config, seed=getattr(args, "seed", 0)), config


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def cmd_parse(args) -> int:
    try:
        graph = chem.parse_smiles(args.smiles)
    except chem.SmilesError as exc:
        doc = {"atoms": [], "bonds": [], "valid": False,
               "error": type(exc).__name__, "offset": exc.offset}
        print(json.dumps(doc) if args.json else
              f"invalid: {type(exc).__name__} at offset {exc.offset}")
        return 1
    doc = chem.graph_to_dict(graph)
    if args.json:
        print(json.dumps(doc))
    else:
        print(f"{graph.n_atoms} atoms, {graph.n_bonds} bonds, "
              f"{graph.n_rings} rings, {graph.n_fragments} fragment(s)")
        for i, atom in enumerate(graph.atoms):
            aromatic = " aromatic" if atom.is_aromatic else ""
            print(f"  atom {i}: {atom.element} H{atom.hydrogen_count} "
                  f"charge {atom.formal_charge}{aromatic}")
        for bond in graph.bonds:
            print(f"  bond {bond.u}-{bond.v} {bond.order}")
    return 0


def cmd_motifs(args) -> int:
    graph = chem.graph_from_smiles(args.smiles)
    catalog = load_catalog(args.catalog) if args.catalog else None
    groups = detect_functional_groups(graph, catalog)
    doc = [{"kind": g.kind, "atoms": sorted(g.atom_indices),
            "ring": g.ring_flag} for g in groups]
    print(json.dumps(doc))
    return 0


def cmd_encode(args) -> int:
    store, config = _load_model(args)
    graph = chem.graph_from_smiles(args.smiles)
    stack = encode(graph, config.gin_config(), store, dtype=config.numpy_dtype())
    out_dir = Path(args.dump_stack)
    out_dir.mkdir(parents=True, exist_ok=True)
    for level, tensor in enumerate(stack.levels):
        rows = [[f"{v:.10g}" for v in row] for row in tensor.data]
        _write_csv(out_dir / f"level{level}.csv",
                   [f"f{i}" for i in range(tensor.data.shape[1])], rows)
    print(f"wrote {len(stack.levels)} level matrices to {out_dir}")
    return 0


def cmd_oversmooth(args) -> int:
    store, config = _load_model(args)
    graph = chem.graph_from_smiles(args.smiles)
    stack = encode(graph, config.gin_config(), store, dtype=config.numpy_dtype())
    stats = oversmoothing_stats(stack)
    layers = [int(x) for x in args.layers.split(",")]
    for layer in layers:
        if layer < 0 or layer >= len(stats):
            raise SystemExit(f"layer {layer} outside 0..{len(stats) - 1}")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "oversmooth.csv"
    _write_csv(csv_path, ["layer", "mean_pairwise_cosine_distance"],
               [[layer, f"{stats[layer]:.12g}"] for layer in layers])
    from .plotting import save_line_figure
    save_line_figure(out_dir / "oversmooth.png", layers,
                     {"collapse": [stats[layer] for layer in layers]},
                     xlabel="layer", ylabel="mean pairwise cosine distance",
                     title="node-representation collapse by depth")
    for layer in layers:
        rows = [[f"{v:.10g}" for v in row] for row in stack.levels[layer].data]
        _write_csv(out_dir / f"nodes_layer{layer}.csv",
                   [f"f{i}" for i in range(stack.levels[layer].data.shape[1])],
                   rows)
    print(json.dumps({str(layer): stats[layer] for layer in layers}))
    return 0


def cmd_project(args) -> int:
    store, config = _load_model(args)
    if args.variant != config.variant:
        if args.ckpt is not None:
            raise SystemExit(
                f"checkpoint was trained with variant {config.variant!r}; "
                "rerun without --ckpt to use a fresh seeded model")
        config = ModelConfig.from_dict({**config.to_dict(), "variant": args.variant})
        store = build_model(config, seed=args.seed)
    attn: dict = {}
    tokens = graph_tokens_for(args.smiles, store, config,
                              attn_out=attn if args.dump_attn else None)
    digest = hashlib.sha256(
        np.ascontiguousarray(tokens.tokens.data).tobytes()).hexdigest()[:16]
    print(json.dumps({"shape": list(tokens.shape), "hash": digest,
                      "variant": config.variant}))
    if args.dump_attn:
        out_dir = Path(args.dump_attn)
        out_dir.mkdir(parents=True, exist_ok=True)
        from .plotting import save_heatmap
        for name, matrix in attn.items():
            _write_csv(out_dir / f"attn_{name}.csv",
                       [f"k{i}" for i in range(matrix.shape[1])],
                       [[f"{v:.10g}" for v in row] for row in matrix])
            save_heatmap(out_dir / f"attn_{name}.png", matrix,
                         title=f"attention weights: {name}")
    return 0


def cmd_generate(args) -> int:
    store, snapshot = load_checkpoint(args.ckpt)
    config = ModelConfig.from_dict(snapshot["model"])
    text = generate_response(args.smiles, args.instruction, store, config,
                             max_len=args.max_len)
    print(text)
    return 0


def cmd_train(args) -> int:
    model_config = ModelConfig()
    train_kwargs: dict = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            raw = json.load(fh)
        model_raw = raw.pop("model", None)
        if model_raw:
            model_config = ModelConfig.from_dict(model_raw)
        if "lora_targets" in raw and raw["lora_targets"] is not None:
            raw["lora_targets"] = tuple(raw["lora_targets"])
        train_kwargs = raw
    train_config = TrainingConfig(stage=args.stage, **train_kwargs)
    result, quarantined = run_training(
        args.stage, args.data, train_config, model_config, args.ckpt_out,
        resume=args.resume)
    log_dir = Path(args.log_dir) if args.log_dir else Path(args.ckpt_out).parent
    log_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(log_dir / "loss_log.csv", ["step", "loss"],
               [[s, f"{v:.8g}"] for s, v in result.losses])
    from .plotting import save_line_figure
    save_line_figure(log_dir / "loss_curve.png",
                     [s for s, _ in result.losses],
                     {"loss": [v for _, v in result.losses]},
                     xlabel="step", ylabel="mean NLL",
                     title=f"stage {args.stage} training loss")
    summary = {
        "steps": len(result.losses),
        "first_loss": result.losses[0][1] if result.losses else None,
        "last_loss": result.losses[-1][1] if result.losses else None,
        "quarantined": len(quarantined),
        "skipped_too_long": result.skipped_too_long,
        "checkpoint": args.ckpt_out,
    }
    print(json.dumps(summary))
    return 0


def cmd_instructgen(args) -> int:
    contexts, quarantined = instructgen.load_contexts(args.contexts)
    if args.backend == "stub":
        backend = instructgen.StubBackend()
    else:
        if not args.endpoint:
            raise SystemExit("--backend http requires --endpoint")
        backend = instructgen.HttpBackend(args.endpoint)
    config = instructgen.GenerationConfig(
        template=args.template, max_turns=args.max_turns, seed=args.seed,
        exemplar_pool=args.exemplar_pool,
        exemplars_per_prompt=args.exemplars_per_prompt,
        concurrency=args.concurrency)
    records, stats = instructgen.generate_dataset(contexts, backend, config)
    instructgen.write_jsonl(records, args.out)
    report = stats.to_dict()
    report["quarantined_contexts"] = len(quarantined)
    print(json.dumps(report))
    return 0


def cmd_eval(args) -> int:
    def read_responses(path):
        out = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    out.append(json.loads(line).get("response", ""))
        return out

    candidates = read_responses(args.pred)
    references = read_responses(args.gold)
    which = tuple(args.metrics.split(","))
    report = metrics.evaluate_pairs(candidates, references, which)
    report_path = Path(args.report)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    rows = [[i] + [f"{report.per_sample[m][i]:.8g}" for m in which]
            for i in range(report.sample_count)]
    _write_csv(report_path.with_suffix(".per_sample.csv"),
               ["index", *which], rows)
    from .plotting import save_bar_figure
    save_bar_figure(report_path.with_suffix(".png"), list(which),
                    [report.values[m] for m in which], ylabel="mean value",
                    title="evaluation metrics")
    print(json.dumps(report.to_dict()))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="molgraph",
        description="Molecular graph-language modeling toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", help="parse a SMILES string")
    p.add_argument("smiles")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_parse)

    p = sub.add_parser("motifs", help="detect functional groups")
    p.add_argument("smiles")
    p.add_argument("--catalog", help="JSON rule-parameterization override")
    p.set_defaults(fn=cmd_motifs)

    p = sub.add_parser("encode", help="dump per-layer node representations")
    p.add_argument("smiles")
    p.add_argument("--ckpt")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dump-stack", required=True)
    p.set_defaults(fn=cmd_encode)

    p = sub.add_parser("oversmooth", help="per-layer collapse statistics")
    p.add_argument("smiles")
    p.add_argument("--layers", default="1,2,4,5")
    p.add_argument("--ckpt")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="oversmooth_out")
    p.set_defaults(fn=cmd_oversmooth)

    p = sub.add_parser("project", help="graph tokens shape and content hash")
    p.add_argument("smiles")
    p.add_argument("--ckpt")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--variant", default="mgproj",
                   choices=["mgproj", "low", "high", "concat", "resampler",
                            "no-motif"])
    p.add_argument("--dump-attn")
    p.set_defaults(fn=cmd_project)

    p = sub.add_parser("generate", help="greedy response generation")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--smiles", required=True)
    p.add_argument("--instruction", required=True)
    p.add_argument("--max-len", type=int, default=128)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("train", help="two-stage training")
    p.add_argument("--stage", type=int, choices=[1, 2], required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--ckpt-out", required=True)
    p.add_argument("--resume")
    p.add_argument("--log-dir")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("instructgen", help="conversation dataset generation")
    p.add_argument("--contexts", required=True)
    p.add_argument("--backend", choices=["stub", "http"], default="stub")
    p.add_argument("--endpoint")
    p.add_argument("--template", choices=["caption", "caption+iupac"],
                   default="caption")
    p.add_argument("--max-turns", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--exemplar-pool", type=int, default=50)
    p.add_argument("--exemplars-per-prompt", type=int, default=3)
    p.add_argument("--concurrency", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_instructgen)

    p = sub.add_parser("eval", help="score predictions against references")
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--metrics", default="bleu,meteor,exact,lev")
    p.add_argument("--report", required=True)
    p.set_defaults(fn=cmd_eval)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
