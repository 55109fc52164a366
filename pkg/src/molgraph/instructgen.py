"""Three-step conversational instruction-data pipeline.

Step 1 generates an exemplar pool from bare prompts, step 2 generates
multi-turn conversations with sampled exemplars prepended for in-context
learning, and step 3 filters out incomplete or over-long conversations.
The generation backend is pluggable; tests use the deterministic stub.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .chem import validate


class MissingField(ValueError):
    pass


class UnknownTemplate(KeyError):
    pass


class MalformedBlock(ValueError):
    pass


class BackendFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class MoleculeContext:
    smiles: str
    caption: str
    iupac: Optional[str] = None


@dataclass(frozen=True)
class Conversation:
    turns: tuple[tuple[str, str], ...]
    source_context: Optional[MoleculeContext] = None
    complete: bool = True


_RULES_COMMON = (
    "You are an AI chemical assistant, and you are seeing a single molecule. "
    "What you see is provided with SMILES representation of the molecule and "
    "sentences describing the same molecule you are analyzing."
)

_RULES_TAIL = (
    "Ask diverse questions and give corresponding answers.\n"
    "Include questions asking about the detailed information of the molecule, "
    "including the class, conjugate acid/base, functional groups, chemical "
    "role, etc.\n"
)

TEMPLATES = {
    "caption": {
        "rules": (
            _RULES_COMMON
            + " Answer all questions as you are seeing the molecule.\n"
            + _RULES_TAIL
            + "Do not ask any question that cannot be answered confidently.\n"
        ),
        "context": "Molecule SMILES: {SMILES}\nCaption: {CAPTION}\nConversation:",
        "needs_iupac": False,
    },
    "caption+iupac": {
        "rules": (
            _RULES_COMMON
            + " In addition, the IUPAC name of the molecule is given. "
            + "Answer all questions as you are seeing the molecule.\n"
            + _RULES_TAIL
            + "Do not ask any questions that cannot be answered confidently.\n"
        ),
        "context": ("Molecule SMILES: {SMILES}\nCaption: {CAPTION}\n"
                    "IUPAC: {IUPAC}\nConversation:"),
        "needs_iupac": True,
    },
}


def _fill(template: str, ctx: MoleculeContext) -> str:
    out = template.replace("{SMILES}", ctx.smiles).replace("{CAPTION}", ctx.caption)
    if "{IUPAC}" in out:
        out = out.replace("{IUPAC}", ctx.iupac or "")
    return out


def build_prompt(ctx: MoleculeContext, exemplars: list[Conversation],
                 template_id: str) -> str:
    """Rules, then exemplar context/conversation blocks, then the target."""
    if template_id not in TEMPLATES:
        raise UnknownTemplate(template_id)
    spec = TEMPLATES[template_id]
    if spec["needs_iupac"] and not ctx.iupac:
        raise MissingField(f"template {template_id!r} needs an IUPAC name")
    parts = [spec["rules"]]
    for ex in exemplars:
        if ex.source_context is None:
            raise MissingField("exemplar conversation lacks its source context")
        parts.append(_fill(spec["context"], ex.source_context) + "\n"
                     + serialize_conversation(ex))
    parts.append(_fill(spec["context"], ctx))
    return "\n\n".join(parts)


def serialize_conversation(conv: Conversation) -> str:
    blocks = []
    for question, answer in conv.turns:
        blocks.append(f"Question:\n{question}")
        blocks.append(f"Answer:\n{answer}")
    return "\n===\n".join(blocks)


def parse_conversation(text: str) -> Conversation:
    """Split on '===' separator lines and pair Question/Answer blocks.

    A trailing unanswered question (or an empty answer) marks the
    conversation incomplete rather than failing.
    """
    if not text.strip():
        raise MalformedBlock("empty conversation text")
    blocks = [b.strip() for b in _split_blocks(text)]
    blocks = [b for b in blocks if b]
    if not blocks:
        raise MalformedBlock("no Question/Answer blocks found")
    turns: list[tuple[str, str]] = []
    complete = True
    pending_question: Optional[str] = None
    for block in blocks:
        kind, content = _parse_block(block)
        if kind == "question":
            if pending_question is not None:
                turns.append((pending_question, ""))
                complete = False
            pending_question = content
        else:
            if pending_question is None:
                raise MalformedBlock("Answer block without a preceding Question")
            turns.append((pending_question, content))
            if not content:
                complete = False
            pending_question = None
    if pending_question is not None:
        turns.append((pending_question, ""))
        complete = False
    return Conversation(tuple(turns), complete=complete)


def _split_blocks(text: str) -> list[str]:
    blocks: list[str] = []
    current: list[str] = []
    for line in text.splitlines():
        if line.strip() == "===":
            blocks.append("\n".join(current))
            current = []
        else:
            current.append(line)
    blocks.append("\n".join(current))
    return blocks


def _parse_block(block: str) -> tuple[str, str]:
    first, _, rest = block.partition("\n")
    header = first.strip()
    lowered = header.lower()
    for kind in ("question", "answer"):
        if lowered == f"{kind}:":
            return kind, rest.strip()
        if lowered.startswith(f"{kind}:"):
            inline = header[len(kind) + 1:].strip()
            content = (inline + "\n" + rest).strip() if rest else inline
            return kind, content
    raise MalformedBlock(f"block header {header!r} is not Question:/Answer:")


def filter_conversations(convs, max_turns: int):
    """Drop incomplete conversations and those with too many turns."""
    if max_turns < 1:
        raise ValueError("max_turns must be >= 1")
    kept: list[Conversation] = []
    rejected: list[tuple[Conversation, str]] = []
    for conv in convs:
        if not conv.complete or not conv.turns \
                or any(not q or not a for q, a in conv.turns):
            rejected.append((conv, "incomplete"))
        elif len(conv.turns) > max_turns:
            rejected.append((conv, "too-many-turns"))
        else:
            kept.append(conv)
    return kept, rejected


# -- backends ----------------------------------------------------------------


class StubBackend:
    """Deterministic local backend; ``script`` maps a prompt to a completion.

    The default script emits a complete two-turn conversation that quotes the
    SMILES line of the prompt, which is enough to exercise the full pipeline.
    """

    name = "stub"

    def __init__(self, script: Optional[Callable[[str], str]] = None):
        self.script = script or _default_stub_script
        self.calls = 0

    def complete(self, prompt: str) -> str:
        self.calls += 1
        return self.script(prompt)


def _default_stub_script(prompt: str) -> str:
    smiles = ""
    for line in reversed(prompt.splitlines()):
        if line.startswith("Molecule SMILES: "):
            smiles = line[len("Molecule SMILES: "):].strip()
            break
    return (
        "Question:\nWhat molecule are you looking at?\n===\n"
        f"Answer:\nThe molecule has the SMILES representation {smiles}.\n===\n"
        "Question:\nDoes it contain any notable functional groups?\n===\n"
        "Answer:\nIts structure determines the functional groups present."
    )


class HttpBackend:
    """POSTs {"prompt": ...} and expects {"completion": ...} back.

    Retries with exponential backoff on transient failures; the auth token is
    read from the MOLGRAPH_BACKEND_TOKEN environment variable.
    """

    name = "http"

    def __init__(self, endpoint: str, timeout: float = 30.0,
                 max_retries: int = 3, backoff: float = 1.0):
        self.endpoint = endpoint
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff = backoff

    def complete(self, prompt: str) -> str:
        import os
        import urllib.error
        import urllib.request

        body = json.dumps({"prompt": prompt}).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        token = os.environ.get("MOLGRAPH_BACKEND_TOKEN")
        if token:
            headers["Authorization"] = f"Bearer {token}"
        last_error: Optional[Exception] = None
        for attempt in range(self.max_retries):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            request = urllib.request.Request(self.endpoint, data=body,
                                             headers=headers, method="POST")
            try:
                with urllib.request.urlopen(request, timeout=self.timeout) as resp:
                    payload = json.loads(resp.read().decode("utf-8"))
                if "completion" not in payload:
                    raise BackendFailure("response lacks a 'completion' field")
                return payload["completion"]
            except (urllib.error.URLError, TimeoutError, json.JSONDecodeError) as exc:
                last_error = exc
        raise BackendFailure(f"backend unreachable after {self.max_retries} "
                             f"attempts: {last_error}")


# -- the three-step pipeline ---------------------------------------------------


@dataclass(frozen=True)
class GenerationConfig:
    template: str = "caption"
    exemplar_pool: int = 50
    exemplars_per_prompt: int = 3
    max_turns: int = 8
    concurrency: int = 1
    seed: int = 0


@dataclass
class GenerationStats:
    contexts: int = 0
    pool_size: int = 0
    generated: int = 0
    kept: int = 0
    backend_failures: int = 0
    rejections: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "contexts": self.contexts,
            "pool_size": self.pool_size,
            "generated": self.generated,
            "kept": self.kept,
            "backend_failures": self.backend_failures,
            "rejections": dict(sorted(self.rejections.items())),
        }


def load_contexts(path: str) -> tuple[list[MoleculeContext], list[dict]]:
    contexts: list[MoleculeContext] = []
    quarantined: list[dict] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            raw = json.loads(line)
            smiles = raw.get("smiles", "")
            if not validate(smiles):
                quarantined.append({"line": line_no, "reason": "invalid-smiles",
                                    "smiles": smiles})
                continue
            contexts.append(MoleculeContext(smiles, raw.get("caption", ""),
                                            raw.get("iupac")))
    return contexts, quarantined


def _complete_many(prompts: list[str], backend, concurrency: int,
                   stats: GenerationStats) -> list[Optional[str]]:
    """Bounded-concurrency fan-out; failures surface as None per prompt."""
    results: list[Optional[str]] = [None] * len(prompts)

    def run_one(idx: int) -> None:
        try:
            results[idx] = backend.complete(prompts[idx])
        except BackendFailure:
            stats.backend_failures += 1

    if concurrency <= 1:
        for i in range(len(prompts)):
            run_one(i)
    else:
        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            list(pool.map(run_one, range(len(prompts))))
    return results


def generate_dataset(contexts: list[MoleculeContext], backend,
                     config: GenerationConfig):
    """Run all three steps; returns (records, stats).

    Records are JSONL-ready dicts in context order. Exemplar draws are fixed
    by the seed before any backend call, so output bytes depend only on the
    seed and the backend's responses.
    """
    stats = GenerationStats(contexts=len(contexts))
    usable = [c for c in contexts
              if not (TEMPLATES[config.template]["needs_iupac"] and not c.iupac)]

    # Step 1: exemplar pool from bare prompts.
    pool: list[Conversation] = []
    for ctx in usable:
        if len(pool) >= config.exemplar_pool:
            break
        try:
            text = backend.complete(build_prompt(ctx, [], config.template))
        except BackendFailure:
            stats.backend_failures += 1
            continue
        try:
            conv = parse_conversation(text)
        except MalformedBlock:
            continue
        if conv.complete and conv.turns:
            pool.append(Conversation(conv.turns, source_context=ctx))
    stats.pool_size = len(pool)

    # Step 2: in-context generation with pre-drawn exemplar indices.
    rng = np.random.default_rng(config.seed)
    draws: list[list[int]] = []
    for _ in usable:
        k = min(config.exemplars_per_prompt, len(pool))
        draws.append(sorted(rng.choice(len(pool), size=k, replace=False))
                     if k else [])
    prompts = [build_prompt(ctx, [pool[i] for i in draw], config.template)
               for ctx, draw in zip(usable, draws)]
    completions = _complete_many(prompts, backend, config.concurrency, stats)

    # Step 3: parse and filter.
    records: list[dict] = []
    for ctx, text in zip(usable, completions):
        if text is None:
            continue
        stats.generated += 1
        try:
            conv = parse_conversation(text)
        except MalformedBlock:
            stats.rejections["malformed"] = stats.rejections.get("malformed", 0) + 1
            continue
        kept, rejected = filter_conversations([conv], config.max_turns)
        for _, reason in rejected:
            stats.rejections[reason] = stats.rejections.get(reason, 0) + 1
        if kept:
            stats.kept += 1
            records.append({
                "smiles": ctx.smiles,
                "caption": ctx.caption,
                "iupac": ctx.iupac,
                "conversation": [{"question": q, "answer": a}
                                 for q, a in kept[0].turns],
            })
    return records, stats


def write_jsonl(records: list[dict], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
