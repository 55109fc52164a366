"""Acceptance gate: one test per criterion, each printing a pass line.

Run with `pytest tests/test_acceptability.py -v -s` to see the per-criterion
lines; tolerances are pinned in the assertions.
"""

import json
import math
import time

import numpy as np

from conftest import permute_graph
from molgraph import numerics as nm
from molgraph.chem import SmilesError, graph_from_smiles, parse_smiles
from molgraph.encoder import (GinConfig, LayerStack, encode, gin_layer,
                              init_gin_params, oversmoothing_stats)
from molgraph.instructgen import (Conversation, GenerationConfig, StubBackend,
                                  filter_conversations, generate_dataset,
                                  parse_conversation, write_jsonl)
from molgraph.lm import EOS, lora_merge, lora_targets_in
from molgraph.metrics import bleu, exact_match, levenshtein, mae, meteor
from molgraph.model import ModelConfig, build_model, sample_loss
from molgraph.motif import motif_matrix
from molgraph.numerics import ParameterStore, finite_difference_check
from molgraph.pipeline import (TrainingConfig, lr_at, record_loss, train_stage1,
                               train_stage2)
from molgraph.projector import (ProjectorConfig, init_projector_params, project,
                                project_baseline)
from test_encoder import naive_gin_layer, random_graph


def report(number, text):
    print(f"[PASS] criterion {number}: {text}")


def corpus_smiles(smiles_corpus, count, seed):
    rng = np.random.default_rng(seed)
    pool = [m["smiles"] for m in smiles_corpus["molecules"]
            if m["fragments"] == 1]
    picks = rng.choice(len(pool), size=count, replace=False)
    return [pool[i] for i in picks]


def test_criterion_1_shape_contract(smiles_corpus):
    molecules = corpus_smiles(smiles_corpus, 20, seed=101)
    start = time.time()
    for b in (1, 4, 8):
        for layers in (2, 5):
            for dim in (16, 64):
                gin_cfg = GinConfig(layers=layers, hidden_dim=dim)
                proj_cfg = ProjectorConfig(tokens_b=b, dim=dim)
                rng = np.random.default_rng(7)
                store = ParameterStore()
                init_gin_params(store, gin_cfg, rng, dtype=np.float32)
                init_projector_params(store, gin_cfg, proj_cfg, rng,
                                      dtype=np.float32)
                for smiles in molecules:
                    graph = graph_from_smiles(smiles)
                    stack = encode(graph, gin_cfg, store, dtype=np.float32)
                    tokens = project(stack, motif_matrix(graph), store,
                                     gin_cfg, proj_cfg)
                    assert tokens.shape == (b * (layers + 2), dim), smiles
                    assert np.all(np.isfinite(tokens.tokens.data))
    elapsed = time.time() - start
    assert elapsed < 10.0, f"shape sweep took {elapsed:.1f}s"
    report(1, f"token matrix is rows=b*(L+2) by d across the grid "
              f"({elapsed:.1f}s)")


def test_criterion_2_gradient_fidelity():
    config = ModelConfig(dim=8, gin_layers=2, tokens_b=2, lm_blocks=2,
                         lm_mlp_hidden=16, max_seq_len=48, dtype="float64")
    store = build_model(config, seed=2)
    smiles = "c1ccccc1"  # 6 atoms
    assert parse_smiles(smiles).n_atoms == 6
    response_ids = config.vocabulary().encode("ab") + [EOS]  # 3 loss positions
    start = time.time()

    def f(s):
        return sample_loss(smiles, "d", "", s, config,
                           response_ids=response_ids)

    reports = finite_difference_check(f, store, step=1e-6, tolerance=1e-4)
    elapsed = time.time() - start
    failed = [(r.name, r.max_rel_err) for r in reports if not r.passed]
    assert not failed, failed
    worst = max(r.max_rel_err for r in reports)
    prefixes = {name.split(".")[0] for name in (r.name for r in reports)}
    assert prefixes == {"gin", "proj", "lm"}
    assert elapsed < 120.0, f"gradient check took {elapsed:.1f}s"
    report(2, f"all {len(reports)} parameter tensors within 1e-4 of central "
              f"differences (worst {worst:.2e}, {elapsed:.0f}s)")


def test_criterion_3_permutation_properties(smiles_corpus):
    rng = np.random.default_rng(33)
    gin_cfg = GinConfig(layers=2, hidden_dim=8)
    proj_cfg = ProjectorConfig(tokens_b=2, dim=8)
    store = ParameterStore()
    init_gin_params(store, gin_cfg, rng)
    init_projector_params(store, gin_cfg, proj_cfg, rng)
    pool = [m["smiles"] for m in smiles_corpus["molecules"]
            if m["fragments"] == 1 and m["atoms"] >= 2]
    for trial in range(100):
        smiles = pool[int(rng.integers(0, len(pool)))]
        graph = graph_from_smiles(smiles)
        perm = list(rng.permutation(graph.n_atoms))
        shuffled = permute_graph(graph, perm)

        prev = nm.tensor(graph.node_features)
        layer_out = gin_layer(prev, graph, store, 0, gin_cfg)
        shuffled_out = gin_layer(nm.tensor(shuffled.node_features), shuffled,
                                 store, 0, gin_cfg)
        expected = np.empty_like(layer_out.data)
        expected[perm] = layer_out.data
        assert np.max(np.abs(shuffled_out.data - expected)) < 1e-10

        base = project(encode(graph, gin_cfg, store), motif_matrix(graph),
                       store, gin_cfg, proj_cfg)
        moved = project(encode(shuffled, gin_cfg, store),
                        motif_matrix(shuffled), store, gin_cfg, proj_cfg)
        assert np.max(np.abs(base.tokens.data - moved.tokens.data)) < 1e-10
    report(3, "100 molecule/permutation pairs: layer equivariance and "
              "projection invariance within 1e-10")


def test_criterion_4_gin_oracle_equivalence():
    rng = np.random.default_rng(44)
    config = GinConfig(layers=1, hidden_dim=7)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(2, 13))
        graph = random_graph(rng, n)
        store = ParameterStore()
        init_gin_params(store, config, rng)
        eps = float(rng.normal())
        store.set_data("gin.layer0.eps", [eps])
        prev = rng.normal(size=(n, graph.node_features.shape[1]))
        got = gin_layer(nm.tensor(prev), graph, store, 0, config).data
        want = naive_gin_layer(
            prev, graph,
            store["gin.layer0.lin1.w"].data, store["gin.layer0.lin1.b"].data,
            store["gin.layer0.lin2.w"].data, store["gin.layer0.lin2.b"].data,
            eps)
        worst = max(worst, float(np.max(np.abs(got - want))))
    assert worst < 1e-12, worst
    report(4, f"50 random graphs match the per-node loop oracle "
              f"(worst abs diff {worst:.2e})")


METRIC_SUITE = [
    # (candidate, reference, metric, expected) -- hand-derived values
    ("the cat sat on the mat", "the cat sat on the mat", "bleu", 1.0),
    ("the cat", "the cat sat", "bleu2", math.exp(-0.5)),
    ("alpha beta", "gamma delta", "bleu", 0.0),
    ("the the the", "the cat", "bleu1", 1.0 / 3.0),
    ("a b c d", "a b c d", "meteor", 0.875),
    ("hello", "hello", "meteor", 0.5),
    ("the cat", "the cat sat", "meteor", (20.0 / 29.0) * 0.75),
    ("the mat sat on the cat", "the cat sat on the mat", "meteor",
     1.0 - 0.5 * 4.0 / 6.0),
    ("alpha beta", "gamma delta", "meteor", 0.0),
    ("kitten", "sitting", "lev", 3.0),
    ("CCO", "CCN", "lev", 1.0),
    ("0.3 0.5 vs 0.1 0.5", "", "mae", 0.1),
]


def test_criterion_5_metric_oracles():
    assert len(METRIC_SUITE) == 12
    scorers = {
        "bleu": lambda c, r: bleu(c, r),
        "bleu2": lambda c, r: bleu(c, r, max_n=2),
        "bleu1": lambda c, r: bleu(c, r, max_n=1),
        "meteor": meteor,
        "lev": lambda c, r: float(levenshtein(c, r)),
        "mae": lambda c, r: mae([0.3, 0.5], [0.1, 0.5]),
    }
    for candidate, reference, metric, expected in METRIC_SUITE:
        got = scorers[metric](candidate, reference)
        assert abs(got - expected) < 1e-9, (candidate, reference, metric,
                                            got, expected)
    assert bleu("x y z w", "x y z w") == 1.0
    assert abs(meteor("a b c d", "a b c d") - 0.875) < 1e-9
    assert exact_match("a b", "a  b") == 1
    report(5, "12-pair hand-computed suite matches within 1e-9")


def test_criterion_6_parser_corpus(smiles_corpus):
    mismatches = []
    for entry in smiles_corpus["molecules"]:
        graph = parse_smiles(entry["smiles"])
        got = (graph.n_atoms, graph.n_bonds, graph.n_rings, graph.n_fragments)
        want = (entry["atoms"], entry["bonds"], entry["rings"],
                entry["fragments"])
        if got != want:
            mismatches.append((entry["name"], got, want))
    assert not mismatches, mismatches
    assert len(smiles_corpus["molecules"]) == 100
    for case in smiles_corpus["malformed"]:
        try:
            parse_smiles(case["smiles"])
            raise AssertionError(f"{case['smiles']!r} parsed but should not")
        except SmilesError as exc:
            assert type(exc).__name__ == case["error"], case
    report(6, "100/100 corpus molecules agree with the independent counts; "
              "all 4 malformed inputs raise their designated errors")


def test_criterion_7_two_stage_discipline():
    # 64-bit here: the merge-vs-adapted comparison is pinned at 1e-10
    config = ModelConfig(dim=12, gin_layers=1, tokens_b=2, lm_blocks=1,
                         max_seq_len=160, dtype="float64")
    store = build_model(config, seed=5)
    from test_pipeline import quick_config, tiny_records
    records = tiny_records()

    lm_before = {n: store[n].data.copy() for n in store.names()
                 if n.startswith("lm.")}
    train_stage1(records, store, config, quick_config())
    for name, before in lm_before.items():
        assert np.array_equal(before, store[name].data), name

    gin_before = {n: store[n].data.copy() for n in store.names()
                  if n.startswith("gin.")}
    base_before = {n: store[n].data.copy() for n in store.names()
                   if n.startswith("lm.")}
    train_stage2(records, store, config, quick_config(stage=2))
    for name, before in gin_before.items():
        assert np.array_equal(before, store[name].data), name
    for name, before in base_before.items():
        assert np.array_equal(before, store[name].data), name

    targets = lora_targets_in(store)
    assert targets
    sample = records[0]
    adapted = record_loss(sample, store, config).item()
    lora_merge(store)
    merged = record_loss(sample, store, config).item()
    assert abs(adapted - merged) < 1e-10
    report(7, "stage 1 leaves the decoder bitwise intact, stage 2 leaves the "
              "encoder and adapter bases bitwise intact, merge matches "
              f"adapted forward ({abs(adapted - merged):.2e})")


def test_criterion_8_toy_learning_signal(toy_caption_path):
    from molgraph.pipeline import load_dataset
    config = ModelConfig(dim=64, gin_layers=2, tokens_b=8, lm_blocks=2,
                         max_seq_len=200, dtype="float32")
    store = build_model(config, seed=7)
    records, quarantined = load_dataset(str(toy_caption_path))
    assert len(records) == 50 and not quarantined
    train_config = TrainingConfig(
        stage=1, epochs=100, batch_size=4, max_steps=500, warmup_steps=20,
        total_steps=500, weight_decay=0.0, seed=0,
        lr_init=1e-2, lr_min=1e-3, lr_warmup_start=1e-4)
    start = time.time()
    result = train_stage1(records, store, config, train_config)
    elapsed = time.time() - start
    first = result.losses[0][1]
    last = result.losses[-1][1]
    assert len(result.losses) == 500
    assert last <= 0.5 * first, (first, last)
    assert elapsed < 600.0, f"training took {elapsed:.0f}s"

    # conditioning probe: the molecule matters to the fitted model
    probe = records[10]
    same = record_loss(probe, store, config).item()
    swapped = sample_loss("ClC(Cl)Cl", probe.instruction, probe.response,
                          store, config).item()
    assert same != swapped
    report(8, f"stage-1 loss fell {first:.3f} -> {last:.3f} "
              f"({last / first:.0%}) in 500 steps, {elapsed:.0f}s; graph "
              "conditioning is live")


def test_criterion_9_schedule_constants():
    stage1 = TrainingConfig(stage=1, warmup_steps=1000, total_steps=6000)
    assert lr_at(0, stage1) == 1e-6
    assert lr_at(1000, stage1) == 1e-4
    assert lr_at(6000, stage1) == 1e-5
    stage2 = TrainingConfig(stage=2, warmup_steps=1000, total_steps=3000)
    assert lr_at(0, stage2) == 5e-7
    assert lr_at(1000, stage2) == 5e-5
    assert lr_at(3000, stage2) == 5e-6
    report(9, "warmup and floor values reproduce the documented stage defaults "
              "exactly for both stages")


def test_criterion_10_instruction_pipeline(tmp_path, sample_conversation_text):
    from molgraph.instructgen import MoleculeContext
    contexts = [MoleculeContext(smiles, f"ctx {i}")
                for i, smiles in enumerate(
                    ["CCO", "CC", "C", "CCC", "CCCC", "CCN", "CCO", "CS",
                     "C=C", "C#N", "CCO", "CCCO", "CO", "COC", "CC=O",
                     "CC(=O)O", "c1ccccc1", "C1CC1", "CCCl", "CCBr"])]
    assert len(contexts) == 20

    def run_once(path):
        records, stats = generate_dataset(contexts, StubBackend(),
                                          GenerationConfig(seed=11))
        write_jsonl(records, str(path))
        return path.read_bytes(), stats

    bytes1, stats1 = run_once(tmp_path / "one.jsonl")
    bytes2, stats2 = run_once(tmp_path / "two.jsonl")
    assert bytes1 == bytes2
    assert stats1.kept == 20

    conv = parse_conversation(sample_conversation_text)
    assert len(conv.turns) == 2 and conv.complete

    dangling = Conversation((("q", ""),), complete=False)
    too_long = Conversation(tuple((f"q{i}", f"a{i}") for i in range(9)))
    kept, rejected = filter_conversations([dangling, too_long], max_turns=8)
    assert kept == []
    assert [reason for _, reason in rejected] == ["incomplete",
                                                  "too-many-turns"]
    report(10, "stub pipeline is byte-reproducible; the sample block parses "
               "to 2 turns; both injected defects rejected with their codes")


def test_criterion_11_ablation_harness(toy_caption_path):
    from molgraph.pipeline import load_dataset
    records, _ = load_dataset(str(toy_caption_path))
    short = TrainingConfig(stage=1, epochs=1, batch_size=2, max_steps=3,
                           warmup_steps=1, total_steps=3, weight_decay=0.0,
                           lr_init=1e-3, lr_min=1e-4, lr_warmup_start=1e-5,
                           seed=0)
    for variant in ("low", "high", "concat", "resampler", "no-motif"):
        config = ModelConfig(dim=12, gin_layers=2, tokens_b=2, lm_blocks=1,
                             max_seq_len=200, variant=variant,
                             dtype="float32")
        store = build_model(config, seed=3)
        result = train_stage1(records[:6], store, config, short)
        assert len(result.losses) == 3, variant
        assert all(np.isfinite(v) for _, v in result.losses), variant

    # the high-level variant provably ignores every level below the top
    gin_cfg = GinConfig(layers=2, hidden_dim=10)
    proj_cfg = ProjectorConfig(tokens_b=2, dim=10, variant="high")
    rng = np.random.default_rng(9)
    store = ParameterStore()
    init_gin_params(store, gin_cfg, rng)
    init_projector_params(store, gin_cfg, proj_cfg, rng)
    graph = graph_from_smiles("CC(=O)O")
    stack = encode(graph, gin_cfg, store)
    base = project_baseline(stack, store, gin_cfg, proj_cfg).tokens.data
    noisy = LayerStack(levels=[nm.tensor(level.data + 1e6)
                               for level in stack.levels[:-1]]
                       + [stack.levels[-1]])
    perturbed = project_baseline(noisy, store, gin_cfg, proj_cfg).tokens.data
    assert np.array_equal(base, perturbed)
    report(11, "five baseline variants trained end-to-end; high-level "
               "variant is bit-identical under lower-level perturbation")


def test_criterion_12_oversmoothing_measurement(tmp_path, capsys):
    from molgraph import cli

    def run(out_dir):
        code = cli.main(["oversmooth", "CC(C)Cc1ccc(cc1)C(C)C(=O)O",
                         "--layers", "1,2,4,5", "--seed", "21",
                         "--out", str(out_dir)])
        assert code == 0
        printed = capsys.readouterr().out
        return json.loads(printed), (out_dir / "oversmooth.csv").read_bytes()

    stats1, csv1 = run(tmp_path / "r1")
    stats2, csv2 = run(tmp_path / "r2")
    assert stats1 == stats2
    assert csv1 == csv2
    assert set(stats1) == {"1", "2", "4", "5"}
    assert (tmp_path / "r1" / "oversmooth.png").exists()

    collapsed = LayerStack(levels=[nm.tensor(np.tile([1.5, -2.0, 0.25],
                                                     (6, 1)))])
    assert oversmoothing_stats(collapsed) == [0.0]
    report(12, "collapse statistics deterministic across seeded runs and "
               "exactly 0 on a collapsed stack")
