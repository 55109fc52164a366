"""Tokenization, modality fusion, a small causal decoder, and low-rank adapters.

The tokenizer is character-level with a byte fallback, so every string
round-trips exactly. Fused sequences follow a fixed segment order (SMILES,
graph, instruction, response) with the loss mask confined to response
positions. Decoding is greedy with ties broken toward the lowest token id.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import numerics as nm
from .numerics import ParameterStore, Tensor
from .projector import GraphTokens

PAD, BOS, EOS, GRAPH_SLOT, SEP = 0, 1, 2, 3, 4
N_RESERVED = 5
N_BYTES = 256


class WidthMismatch(ValueError):
    pass


class EmptyResponse(ValueError):
    pass


class TargetNotFound(KeyError):
    pass


class AlreadyAdapted(ValueError):
    pass


@dataclass(frozen=True)
class Vocabulary:
    """Reserved ids, 256 byte tokens, plus char tokens learned from a corpus.

    ASCII text tokenizes through the byte tokens; char tokens only ever hold
    multi-byte characters, which keeps the table small and round-trips exact.
    """

    chars: tuple[str, ...] = ()
    _char_ids: dict = field(default_factory=dict, compare=False, repr=False,
                            init=False)

    def __post_init__(self):
        object.__setattr__(
            self, "_char_ids",
            {c: N_RESERVED + N_BYTES + i for i, c in enumerate(self.chars)})

    @classmethod
    def build(cls, texts) -> "Vocabulary":
        chars = sorted({c for t in texts for c in t if ord(c) > 127})
        return cls(chars=tuple(chars))

    @property
    def size(self) -> int:
        return N_RESERVED + N_BYTES + len(self.chars)

    def encode(self, text: str) -> list[int]:
        ids: list[int] = []
        for ch in text:
            cid = self._char_ids.get(ch)
            if cid is not None:
                ids.append(cid)
            else:
                ids.extend(N_RESERVED + b for b in ch.encode("utf-8"))
        return ids

    def decode(self, ids) -> str:
        out: list[str] = []
        buf = bytearray()

        def flush():
            if buf:
                # round-tripped bytes are always valid UTF-8; model-generated
                # sequences may not be, so degrade instead of raising
                out.append(buf.decode("utf-8", errors="replace"))
                buf.clear()

        for i in ids:
            i = int(i)
            if N_RESERVED <= i < N_RESERVED + N_BYTES:
                buf.append(i - N_RESERVED)
            elif i >= N_RESERVED + N_BYTES:
                flush()
                out.append(self.chars[i - N_RESERVED - N_BYTES])
            else:
                flush()  # reserved ids render as nothing
        flush()
        return "".join(out)


def tokenize(text: str, vocab: Vocabulary) -> list[int]:
    return vocab.encode(text)


def detokenize(ids, vocab: Vocabulary) -> str:
    return vocab.decode(ids)


@dataclass(frozen=True)
class Segment:
    kind: str                      # smiles | graph | text | response
    ids: Optional[np.ndarray] = None
    graph: Optional[GraphTokens] = None


@dataclass(frozen=True)
class FusedSequence:
    segments: tuple[Segment, ...]
    token_ids: np.ndarray          # GRAPH_SLOT placeholders at graph positions
    loss_mask: np.ndarray          # True only inside the response segment
    graph_span: tuple[int, int]
    response_span: tuple[int, int]
    graph: GraphTokens

    @property
    def length(self) -> int:
        return len(self.token_ids)


def fuse(smiles_ids, graph: GraphTokens, text_ids, response_ids,
         model_width: Optional[int] = None,
         response_loss_mask=None) -> FusedSequence:
    """Assemble [BOS] smiles [SEP] | graph | [SEP] text [SEP] | response.

    The loss mask is true exactly on response positions (or on the subset a
    caller-provided per-response-token mask selects).
    """
    if model_width is not None and graph.shape[1] != model_width:
        raise WidthMismatch(
            f"graph tokens have width {graph.shape[1]}, model expects {model_width}")
    g_rows = graph.shape[0]
    smiles_part = [BOS, *map(int, smiles_ids), SEP]
    text_part = [SEP, *map(int, text_ids), SEP]
    response_part = [int(i) for i in response_ids]
    token_ids = np.array(
        smiles_part + [GRAPH_SLOT] * g_rows + text_part + response_part,
        dtype=np.int64)
    g_start = len(smiles_part)
    g_stop = g_start + g_rows
    r_start = g_stop + len(text_part)
    r_stop = r_start + len(response_part)
    mask = np.zeros(len(token_ids), dtype=bool)
    if response_loss_mask is None:
        mask[r_start:r_stop] = True
    else:
        rmask = np.asarray(response_loss_mask, dtype=bool)
        if rmask.shape != (len(response_part),):
            raise WidthMismatch(
                f"response mask length {rmask.shape} != {len(response_part)}")
        mask[r_start:r_stop] = rmask
    segments = (
        Segment("smiles", ids=np.array(smiles_part, dtype=np.int64)),
        Segment("graph", graph=graph),
        Segment("text", ids=np.array(text_part, dtype=np.int64)),
        Segment("response", ids=np.array(response_part, dtype=np.int64)),
    )
    return FusedSequence(segments, token_ids, mask, (g_start, g_stop),
                         (r_start, r_stop), graph)


@dataclass(frozen=True)
class LmConfig:
    dim: int = 64
    blocks: int = 2
    mlp_hidden: int = 128
    max_seq_len: int = 512


def init_lm_params(store: ParameterStore, config: LmConfig, vocab_size: int,
                   rng: np.random.Generator, dtype=np.float64,
                   prefix: str = "lm", graph_width: Optional[int] = None) -> None:
    d, h = config.dim, config.mlp_hidden
    bound = 1.0 / np.sqrt(d)
    store.add(f"{prefix}.tok_emb", rng.normal(0.0, 0.02, (vocab_size, d)), dtype=dtype)
    store.add(f"{prefix}.pos_emb", rng.normal(0.0, 0.02, (config.max_seq_len, d)),
              dtype=dtype)
    if graph_width is not None and graph_width != d:
        gb = 1.0 / np.sqrt(graph_width)
        store.add(f"{prefix}.graph_in.w", rng.uniform(-gb, gb, (graph_width, d)),
                  dtype=dtype)
    for i in range(config.blocks):
        base = f"{prefix}.block{i}"
        for name in ("q", "k", "v", "o"):
            store.add(f"{base}.attn.{name}.w", rng.uniform(-bound, bound, (d, d)),
                      dtype=dtype)
        store.add(f"{base}.mlp.lin1.w", rng.uniform(-bound, bound, (d, h)), dtype=dtype)
        store.add(f"{base}.mlp.lin1.b", np.zeros(h), dtype=dtype)
        store.add(f"{base}.mlp.lin2.w",
                  rng.uniform(-1.0 / np.sqrt(h), 1.0 / np.sqrt(h), (h, d)), dtype=dtype)
        store.add(f"{base}.mlp.lin2.b", np.zeros(d), dtype=dtype)
    store.add(f"{prefix}.head.w", rng.uniform(-bound, bound, (d, vocab_size)),
              dtype=dtype)
    store.add(f"{prefix}.head.b", np.zeros(vocab_size), dtype=dtype)


def linear(store: ParameterStore, x: Tensor, name: str) -> Tensor:
    """x @ W with any attached low-rank adapter folded into the forward."""
    y = nm.matmul(x, store[name])
    down = store.get(f"{name}.lora_down")
    if down is not None:
        up = store[f"{name}.lora_up"]
        scaling = float(store[f"{name}.lora_scale"].data[0])
        y = nm.add(y, nm.scale(nm.matmul(nm.matmul(x, down), up), scaling))
    return y


def embed_sequence(seq: FusedSequence, store: ParameterStore, config: LmConfig,
                   prefix: str = "lm") -> Tensor:
    d = config.dim
    if seq.length > config.max_seq_len:
        raise nm.ShapeMismatch(
            f"sequence length {seq.length} exceeds max {config.max_seq_len}")
    graph_tokens = seq.graph.tokens
    if graph_tokens.shape[1] != d:
        if f"{prefix}.graph_in.w" not in store:
            raise WidthMismatch(
                f"graph width {graph_tokens.shape[1]} != model width {d} "
                "and no input adapter exists")
        graph_tokens = linear(store, graph_tokens, f"{prefix}.graph_in.w")
    g_start, g_stop = seq.graph_span
    emb = store[f"{prefix}.tok_emb"]
    parts = [
        nm.gather_rows(emb, seq.token_ids[:g_start]),
        graph_tokens,
        nm.gather_rows(emb, seq.token_ids[g_stop:]),
    ]
    x = nm.concat_rows(parts)
    pos = nm.gather_rows(store[f"{prefix}.pos_emb"], np.arange(seq.length))
    return nm.add(x, pos)


def _causal_mask(n: int, dtype) -> np.ndarray:
    mask = np.zeros((n, n), dtype=dtype)
    mask[np.triu_indices(n, k=1)] = -1e9
    return mask


def decoder_forward(x: Tensor, store: ParameterStore, config: LmConfig,
                    prefix: str = "lm") -> Tensor:
    """Stack of pre-logit causal blocks; returns logits over the vocabulary."""
    n, d = x.shape
    mask = nm.tensor(_causal_mask(n, x.data.dtype))
    for i in range(config.blocks):
        base = f"{prefix}.block{i}"
        q = linear(store, x, f"{base}.attn.q.w")
        k = linear(store, x, f"{base}.attn.k.w")
        v = linear(store, x, f"{base}.attn.v.w")
        scores = nm.add(nm.scale(nm.matmul(q, nm.transpose(k)), 1.0 / np.sqrt(d)),
                        mask)
        ctx = nm.matmul(nm.row_softmax(scores), v)
        x = nm.add(x, linear(store, ctx, f"{base}.attn.o.w"))
        hidden = nm.relu(nm.add(nm.matmul(x, store[f"{base}.mlp.lin1.w"]),
                                store[f"{base}.mlp.lin1.b"]))
        out = nm.add(nm.matmul(hidden, store[f"{base}.mlp.lin2.w"]),
                     store[f"{base}.mlp.lin2.b"])
        x = nm.add(x, out)
    return nm.add(linear(store, x, f"{prefix}.head.w"), store[f"{prefix}.head.b"])


def forward_loss(seq: FusedSequence, store: ParameterStore, config: LmConfig,
                 prefix: str = "lm") -> Tensor:
    """Mean negative log-likelihood over masked response positions."""
    positions = np.flatnonzero(seq.loss_mask)
    if positions.size == 0:
        raise EmptyResponse("no response positions carry loss")
    x = embed_sequence(seq, store, config, prefix)
    logits = decoder_forward(x, store, config, prefix)
    log_probs = nm.row_log_softmax(logits)
    targets = seq.token_ids[positions]
    vals = nm.pick(log_probs, positions - 1, targets)
    return nm.scale(nm.sum_all(vals), -1.0 / positions.size)


def generate(prefix_seq: FusedSequence, store: ParameterStore, config: LmConfig,
             max_len: int = 128, prefix: str = "lm") -> list[int]:
    """Greedy decoding from a response-free fused sequence.

    Ties resolve to the lowest token id (argmax semantics); stops at EOS,
    after max_len tokens, or when the context window is exhausted. The
    returned ids exclude EOS.
    """
    base_ids = list(seq_ids_without_response(prefix_seq))
    budget = config.max_seq_len - len(base_ids)
    if budget <= 0:
        raise nm.ShapeMismatch(
            f"prefix length {len(base_ids)} leaves no room to generate "
            f"within max {config.max_seq_len}")
    generated: list[int] = []
    for _ in range(min(max_len, budget)):
        seq = _with_response(prefix_seq, base_ids, generated)
        x = embed_sequence(seq, store, config, prefix)
        logits = decoder_forward(x, store, config, prefix)
        next_id = int(np.argmax(logits.data[-1]))
        if next_id == EOS:
            break
        generated.append(next_id)
    return generated


def seq_ids_without_response(seq: FusedSequence) -> np.ndarray:
    r_start, _ = seq.response_span
    return seq.token_ids[:r_start]


def _with_response(seq: FusedSequence, base_ids: list[int],
                   response_ids: list[int]) -> FusedSequence:
    token_ids = np.array(base_ids + response_ids, dtype=np.int64)
    r_start = len(base_ids)
    mask = np.zeros(len(token_ids), dtype=bool)
    return FusedSequence(seq.segments, token_ids, mask, seq.graph_span,
                         (r_start, len(token_ids)), seq.graph)


# -- low-rank adapters ------------------------------------------------------


def lora_attach(store: ParameterStore, targets, rank: int, alpha: float,
                rng: np.random.Generator) -> None:
    """Freeze each target and add a trainable low-rank bypass.

    The up factor starts at zero, so the adapted forward equals the base
    forward at attach time.
    """
    for name in targets:
        t = store.get(name)
        if t is None:
            raise TargetNotFound(name)
        if t.data.ndim != 2:
            raise TargetNotFound(f"{name} is not a 2-D map")
        if f"{name}.lora_down" in store:
            raise AlreadyAdapted(name)
        d_in, d_out = t.data.shape
        dtype = t.data.dtype
        store.set_trainable(name, False)
        bound = 1.0 / np.sqrt(d_in)
        store.add(f"{name}.lora_down", rng.uniform(-bound, bound, (d_in, rank)),
                  dtype=dtype)
        store.add(f"{name}.lora_up", np.zeros((rank, d_out)), dtype=dtype)
        store.add(f"{name}.lora_scale", np.array([alpha / rank]), trainable=False,
                  dtype=dtype)


def lora_targets_in(store: ParameterStore) -> list[str]:
    return [n[:-len(".lora_down")] for n in store.names() if n.endswith(".lora_down")]


def lora_merge(store: ParameterStore) -> None:
    """Fold adapters into their base maps and drop them; bases train again."""
    for name in lora_targets_in(store):
        down = store[f"{name}.lora_down"].data
        up = store[f"{name}.lora_up"].data
        scaling = float(store[f"{name}.lora_scale"].data[0])
        store.set_data(name, store[name].data + scaling * (down @ up))
        store.remove(f"{name}.lora_down")
        store.remove(f"{name}.lora_up")
        store.remove(f"{name}.lora_scale")
        store.set_trainable(name, True)


def default_lora_targets(config: LmConfig, prefix: str = "lm") -> list[str]:
    targets = []
    for i in range(config.blocks):
        targets.append(f"{prefix}.block{i}.attn.q.w")
        targets.append(f"{prefix}.block{i}.attn.v.w")
    targets.append(f"{prefix}.head.w")
    return targets
