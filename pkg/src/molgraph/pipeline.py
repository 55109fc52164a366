"""Dataset handling, the two-stage training loop, and the LR schedule.

Stage 1 trains the encoder and projector against caption records with the
decoder frozen; stage 2 freezes the encoder and trains the projector plus
low-rank adapters on the decoder over the full instruction mixture. The
learning rate warms up linearly and then follows a cosine to its floor.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from . import lm as lm_mod
from . import numerics as nm
from .chem import validate
from .lm import EOS, tokenize
from .model import ModelConfig, build_model, sample_loss
from .numerics import ParameterStore

STAGE_LR_DEFAULTS = {
    1: {"lr_init": 1e-4, "lr_min": 1e-5, "lr_warmup_start": 1e-6},
    2: {"lr_init": 5e-5, "lr_min": 5e-6, "lr_warmup_start": 5e-7},
}

TASKS = ("caption", "iupac", "property", "forward_reaction", "retrosynthesis",
         "conversation")


class NoTrainableParams(RuntimeError):
    pass


class MissingStage1Checkpoint(FileNotFoundError):
    pass


@dataclass(frozen=True)
class TrainingConfig:
    stage: int = 1
    epochs: int = 1
    batch_size: int = 4
    seed: int = 0
    warmup_steps: int = 1000
    total_steps: Optional[int] = None   # derived from the dataset when unset
    max_steps: Optional[int] = None
    lr_init: Optional[float] = None     # stage defaults apply when unset
    lr_min: Optional[float] = None
    lr_warmup_start: Optional[float] = None
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.01
    adam_eps: float = 1e-8
    lora_rank: int = 4
    lora_alpha: float = 8.0
    lora_targets: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        if self.stage not in (1, 2):
            raise ValueError("stage must be 1 or 2")
        if self.warmup_steps < 0:
            raise ValueError("warmup_steps must be >= 0")
        init, floor, start = self.resolved_lrs()
        if not (start <= floor <= init):
            raise ValueError("need lr_warmup_start <= lr_min <= lr_init")

    def resolved_lrs(self) -> tuple[float, float, float]:
        defaults = STAGE_LR_DEFAULTS[self.stage]
        init = self.lr_init if self.lr_init is not None else defaults["lr_init"]
        floor = self.lr_min if self.lr_min is not None else defaults["lr_min"]
        start = (self.lr_warmup_start if self.lr_warmup_start is not None
                 else defaults["lr_warmup_start"])
        return init, floor, start

    @classmethod
    def from_json(cls, path: str) -> "TrainingConfig":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        if "lora_targets" in raw and raw["lora_targets"] is not None:
            raw["lora_targets"] = tuple(raw["lora_targets"])
        return cls(**raw)


def lr_at(step: int, config: TrainingConfig) -> float:
    """Linear warmup to lr_init, then cosine decay to lr_min.

    Endpoint values are returned exactly: step 0 gives lr_warmup_start, the
    warmup boundary gives lr_init, and the final step gives lr_min.
    """
    if step < 0:
        raise ValueError("step must be >= 0")
    init, floor, start = config.resolved_lrs()
    warmup = config.warmup_steps
    if warmup > 0 and step < warmup:
        return start + (init - start) * (step / warmup)
    if step == warmup:
        return init
    total = config.total_steps
    if total is None or total <= warmup:
        return init
    if step >= total:
        return floor
    progress = (step - warmup) / (total - warmup)
    return floor + 0.5 * (init - floor) * (1.0 + math.cos(math.pi * progress))


class AdamW:
    """Decoupled weight decay; state exists only for tensors that get grads."""

    def __init__(self, config: TrainingConfig):
        self.config = config
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, store: ParameterStore, grads: dict[str, np.ndarray],
             lr: float) -> None:
        c = self.config
        self.t += 1
        bias1 = 1.0 - c.beta1 ** self.t
        bias2 = 1.0 - c.beta2 ** self.t
        for name in grads:
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            m = self.m[name]
            v = self.v[name]
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            update = (m / bias1) / (np.sqrt(v / bias2) + c.adam_eps)
            p = store[name].data
            p -= lr * (update + c.weight_decay * p)


# -- datasets ---------------------------------------------------------------


@dataclass(frozen=True)
class SampleRecord:
    smiles: str
    instruction: str
    response: Optional[str]
    task: str
    turns: tuple[tuple[str, str], ...] = field(default_factory=tuple)


def load_dataset(path: str) -> tuple[list[SampleRecord], list[dict]]:
    """Read JSONL records; rows with non-parsing SMILES are quarantined."""
    records: list[SampleRecord] = []
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
            if "conversation" in raw:
                turns = tuple((t["question"], t["answer"])
                              for t in raw["conversation"])
                if not turns or any(not q or not a for q, a in turns):
                    quarantined.append({"line": line_no,
                                        "reason": "incomplete-conversation",
                                        "smiles": smiles})
                    continue
                records.append(SampleRecord(smiles, turns[0][0], None,
                                            "conversation", turns))
            else:
                records.append(SampleRecord(
                    smiles, raw.get("instruction", ""), raw.get("response", ""),
                    raw.get("task", "caption")))
    return records, quarantined


def conversation_response(turns, vocab) -> tuple[list[int], list[bool]]:
    """Token ids and loss mask for a multi-turn response.

    Answers carry loss; the connective question blocks between them do not.
    The trailing EOS carries loss so the model learns to stop.
    """
    ids: list[int] = []
    mask: list[bool] = []
    for i, (question, answer) in enumerate(turns):
        if i > 0:
            connective = f"\n===\nQuestion:\n{question}\n===\nAnswer:\n"
            cids = tokenize(connective, vocab)
            ids.extend(cids)
            mask.extend([False] * len(cids))
        aids = tokenize(answer, vocab)
        ids.extend(aids)
        mask.extend([True] * len(aids))
    ids.append(EOS)
    mask.append(True)
    return ids, mask


def record_loss(record: SampleRecord, store: ParameterStore,
                config: ModelConfig) -> nm.Tensor:
    if record.task == "conversation":
        ids, mask = conversation_response(record.turns, config.vocabulary())
        return sample_loss(record.smiles, record.instruction, "", store, config,
                           response_loss_mask=mask, response_ids=ids)
    return sample_loss(record.smiles, record.instruction, record.response,
                       store, config)


def record_sequence_length(record: SampleRecord, config: ModelConfig) -> int:
    from .model import fused_length

    vocab = config.vocabulary()
    if record.task == "conversation":
        ids, _ = conversation_response(record.turns, vocab)
    else:
        ids = tokenize(record.response, vocab) + [EOS]
    return fused_length(record.smiles, record.instruction, ids, config)


# -- training ---------------------------------------------------------------


@dataclass
class TrainResult:
    store: ParameterStore
    losses: list[tuple[int, float]]
    train_config: TrainingConfig
    skipped_too_long: int = 0


def apply_stage_freezing(store: ParameterStore, model_config: ModelConfig,
                         stage: int) -> None:
    """Stage 1: decoder frozen. Stage 2: encoder and decoder base frozen."""
    for name in store.names():
        if name.endswith(".eps"):
            store.set_trainable(name, model_config.learnable_epsilon
                                and stage == 1)
        elif name.startswith("gin."):
            store.set_trainable(name, stage == 1)
        elif name.startswith("proj."):
            store.set_trainable(name, True)
        elif name.startswith("lm."):
            store.set_trainable(name, False)


def _mean_loss(batch, store, model_config) -> nm.Tensor:
    total = None
    for record in batch:
        loss = record_loss(record, store, model_config)
        total = loss if total is None else nm.add(total, loss)
    return nm.scale(total, 1.0 / len(batch))


def _screen_records(records, model_config: ModelConfig):
    """Drop records whose fused sequence cannot fit the context window."""
    limit = model_config.max_seq_len
    usable = [r for r in records
              if record_sequence_length(r, model_config) <= limit]
    if not usable:
        raise ValueError(
            f"no record fits within max_seq_len={limit}; shorten responses "
            "or raise the model's context length")
    return usable, len(records) - len(usable)


def _run_steps(records, store, model_config, config: TrainingConfig,
               log_fn=None) -> list[tuple[int, float]]:
    if not store.trainable_names():
        raise NoTrainableParams("every parameter is frozen")
    n = len(records)
    steps_per_epoch = max(1, math.ceil(n / config.batch_size))
    total = config.total_steps
    if total is None:
        total = config.epochs * steps_per_epoch
        config = replace(config, total_steps=total)
    optimizer = AdamW(config)
    rng = np.random.default_rng(config.seed)
    losses: list[tuple[int, float]] = []
    step = 0
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            if config.max_steps is not None and step >= config.max_steps:
                return losses
            batch = [records[i] for i in order[start:start + config.batch_size]]
            loss = _mean_loss(batch, store, model_config)
            grads = nm.backward(loss, store)
            optimizer.step(store, grads, lr_at(step, config))
            losses.append((step, loss.item()))
            if log_fn is not None:
                log_fn(step, loss.item())
            step += 1
    return losses


def train_stage1(records, store: ParameterStore, model_config: ModelConfig,
                 config: TrainingConfig, log_fn=None) -> TrainResult:
    """Caption alignment: decoder untouched, encoder and projector learn."""
    captions = [r for r in records if r.task == "caption"]
    if not captions:
        raise ValueError("stage 1 expects caption records")
    captions, skipped = _screen_records(captions, model_config)
    apply_stage_freezing(store, model_config, stage=1)
    losses = _run_steps(captions, store, model_config,
                        replace(config, stage=1), log_fn)
    return TrainResult(store, losses, config, skipped)


def train_stage2(records, store: ParameterStore, model_config: ModelConfig,
                 config: TrainingConfig, log_fn=None) -> TrainResult:
    """Instruction tuning: encoder frozen, projector plus adapters learn."""
    records, skipped = _screen_records(records, model_config)
    apply_stage_freezing(store, model_config, stage=2)
    targets = (list(config.lora_targets) if config.lora_targets is not None
               else lm_mod.default_lora_targets(model_config.lm_config()))
    rng = np.random.default_rng(config.seed + 1)
    lm_mod.lora_attach(store, targets, config.lora_rank, config.lora_alpha, rng)
    losses = _run_steps(records, store, model_config,
                        replace(config, stage=2), log_fn)
    return TrainResult(store, losses, config, skipped)


def run_training(stage: int, data_path: str, train_config: TrainingConfig,
                 model_config: ModelConfig, ckpt_out: str,
                 resume: Optional[str] = None, log_fn=None):
    """CLI-facing orchestration: load data and weights, train, checkpoint."""
    from .checkpoint import load_checkpoint, save_checkpoint

    seed = int(os.environ.get("MOLGRAPH_SEED", train_config.seed))
    train_config = replace(train_config, seed=seed, stage=stage)
    records, quarantined = load_dataset(data_path)
    if resume is not None:
        store, snapshot = load_checkpoint(resume)
        model_config = ModelConfig.from_dict(snapshot["model"])
    elif stage == 2:
        raise MissingStage1Checkpoint(
            "stage 2 requires --resume with a stage-1 checkpoint")
    else:
        store = build_model(model_config, seed=seed)
    if stage == 1:
        result = train_stage1(records, store, model_config, train_config, log_fn)
    else:
        result = train_stage2(records, store, model_config, train_config, log_fn)
    snapshot = {"model": model_config.to_dict(), "stage": stage,
                "train": asdict(result.train_config)}
    save_checkpoint(result.store, ckpt_out, snapshot)
    return result, quarantined
