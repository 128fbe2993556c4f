"""Joint end-to-end optimization: retrieval + generation + node classification.

The composite objective is L = L_rec + alpha * L_gen + beta * L_node.
Recommendation-free triplets contribute only the generation term; augmented
(descriptive-entity) triplets contribute only the retrieval term. Multi-item
gold sets expand to one cross-entropy term per item over a shared context
forward pass.
"""

from __future__ import annotations

import logging
import random
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Sequence

import torch
from torch import Tensor

from . import graph_encoder as ge
from .bundle import ModelBundle, build_bundle
from .corpus import TrainingTriplet
from .errors import ConfigError, DataError
from .kg import KnowledgeGraph
from .model import ModelConfig, recommend_infer, serialize_context
from .tokenizer import Tokenizer

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    alpha: float = 1.0  # generation loss weight
    beta: float = 1.0  # node-classification loss weight
    lr: float = 3e-5
    batch_size: int = 64
    epochs: int = 22
    seed: int = 0
    grad_clip: float = 1.0
    node_sample_size: int = 256
    weight_decay: float = 0.01
    no_node_loss: bool = False
    no_data_aug: bool = False
    no_node_init: bool = False
    no_corg: bool = False

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("loss weights must be nonnegative")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainabilitySpec:
    """Named encoder/decoder layer indices to finetune; everything else in the
    seq2seq stack freezes. The graph encoder, classifier, and retrieval path
    stay trainable."""

    encoder_layers: list[int] = field(default_factory=list)
    decoder_layers: list[int] = field(default_factory=list)


def last_layers_spec(config: ModelConfig) -> TrainabilitySpec:
    """Finetune the last encoder attention layer and the last two decoder layers."""
    return TrainabilitySpec(
        encoder_layers=[config.enc_layers - 1],
        decoder_layers=[config.dec_layers - 2, config.dec_layers - 1],
    )


def apply_trainability(bundle: ModelBundle, spec: TrainabilitySpec | None) -> ModelBundle:
    """None means everything trainable (desk default)."""
    for p in bundle.parameters():
        p.requires_grad_(True)
    if spec is None:
        return bundle
    for p in bundle.seq2seq.parameters():
        p.requires_grad_(False)
    for idx in spec.encoder_layers:
        if not 0 <= idx < len(bundle.seq2seq.encoder_layers):
            raise ConfigError(f"encoder layer index {idx} out of range")
        for p in bundle.seq2seq.encoder_layers[idx].parameters():
            p.requires_grad_(True)
    for idx in spec.decoder_layers:
        if not 0 <= idx < len(bundle.seq2seq.decoder_layers):
            raise ConfigError(f"decoder layer index {idx} out of range")
        for p in bundle.seq2seq.decoder_layers[idx].parameters():
            p.requires_grad_(True)
    return bundle


def rec_loss(p_rec: Tensor, gold_rows: Sequence[int]) -> Tensor:
    """Mean cross-entropy over the gold items of one triplet."""
    if len(gold_rows) == 0:
        raise DataError("rec_loss needs a non-empty gold set")
    rows = torch.as_tensor(list(gold_rows), dtype=torch.long, device=p_rec.device)
    return -torch.log(p_rec.index_select(-1, rows)).mean()


def rec_loss_from_scores(scores: Tensor, item_pairs: Sequence[tuple[int, int]]) -> Tensor:
    """Batched expansion: mean NLL over (batch row, entity row) gold pairs."""
    log_probs = torch.log_softmax(scores, dim=-1)
    b = torch.tensor([p[0] for p in item_pairs], dtype=torch.long, device=scores.device)
    e = torch.tensor([p[1] for p in item_pairs], dtype=torch.long, device=scores.device)
    return -log_probs[b, e].mean()


def gen_loss(logits: Tensor, target_ids: Tensor, is_augmented: Tensor, pad_id: int = 0) -> Tensor:
    """Mean per-token NLL over non-pad positions; augmented rows contribute zero."""
    keep = (~is_augmented).unsqueeze(1) & (target_ids != pad_id)
    if not keep.any():
        return torch.zeros((), dtype=logits.dtype, device=logits.device)
    log_probs = torch.log_softmax(logits, dim=-1)
    nll = -log_probs.gather(-1, target_ids.unsqueeze(-1)).squeeze(-1)
    return nll[keep].mean()


def joint_loss(l_rec: Tensor, l_gen: Tensor, l_node: Tensor, config: TrainConfig) -> Tensor:
    beta = 0.0 if config.no_node_loss else config.beta
    return l_rec + config.alpha * l_gen + beta * l_node


@dataclass
class EpochLog:
    epoch: int
    loss_rec: float
    loss_gen: float
    loss_node: float
    loss_total: float
    val_recall_at_5: float | None
    val_rec_loss: float | None
    seconds: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    bundle: ModelBundle
    logs: list[EpochLog]
    best_epoch: int | None
    diverged: bool = False
    best_state: tuple[dict, dict] | None = None


def _pad_batch(seqs: list[list[int]], pad_id: int = 0) -> Tensor:
    width = max(len(s) for s in seqs)
    out = torch.full((len(seqs), width), pad_id, dtype=torch.long)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = torch.tensor(s, dtype=torch.long)
    return out


def _prepare_example(t: TrainingTriplet, tokenizer: Tokenizer, config: ModelConfig) -> dict:
    src = serialize_context(t.context, tokenizer, config.max_src_len)
    tgt = tokenizer.encode(t.target)[: config.max_tgt_len - 1] + [tokenizer.eos_id]
    return {
        "src": src,
        "tgt": tgt,
        "dec_in": [tokenizer.bos_id] + tgt[:-1],
        "gold": sorted(t.gold_items),
        "is_augmented": t.is_augmented,
    }


def batch_losses(
    bundle: ModelBundle,
    examples: list[dict],
    config: TrainConfig,
    rng: random.Random,
) -> tuple[Tensor, Tensor, Tensor]:
    """(L_rec, L_gen, L_node) for one prepared batch; zero tensors when a term
    has no applicable examples."""
    tok = bundle.tokenizer
    dtype = bundle.seq2seq.tok_emb.weight.dtype
    zero = torch.zeros((), dtype=dtype)

    src = _pad_batch([ex["src"] for ex in examples], tok.pad_id)
    src_pad = src == tok.pad_id
    states = bundle.seq2seq.encode(src, src_pad)
    lengths = (~src_pad).sum(dim=1)
    c = states[torch.arange(len(examples)), lengths - 1]

    # retrieval term over all entities, one CE term per gold item
    H = bundle.entity_representations().H
    scores = c @ H.T
    pairs: list[tuple[int, int]] = []
    for b, ex in enumerate(examples):
        for row in bundle.entity_rows(ex["gold"]):
            pairs.append((b, row))
    l_rec = rec_loss_from_scores(scores, pairs) if pairs else zero

    # generation term, teacher-forced, dialogue triplets only
    gen_rows = [b for b, ex in enumerate(examples) if not ex["is_augmented"]]
    if gen_rows:
        dec_in = _pad_batch([examples[b]["dec_in"] for b in gen_rows], tok.pad_id)
        tgt = _pad_batch([examples[b]["tgt"] for b in gen_rows], tok.pad_id)
        hidden = bundle.seq2seq.decode(dec_in, states[gen_rows], src_pad[gen_rows])
        logits = bundle.seq2seq.output_logits(hidden)
        l_gen = gen_loss(logits, tgt, torch.zeros(len(gen_rows), dtype=torch.bool), tok.pad_id)
    else:
        l_gen = zero

    # node-classification term over touched golds plus a random node sample
    rows = {row for _, row in pairs}
    n = len(bundle.order)
    sample = min(config.node_sample_size, n)
    rows.update(rng.sample(range(n), sample))
    row_t = torch.tensor(sorted(rows), dtype=torch.long)
    l_node = ge.node_type_loss(bundle.graph.classifier, H, row_t, bundle.type_labels)
    return l_rec, l_gen, l_node


@torch.no_grad()
def evaluate_recall(bundle: ModelBundle, triplets: Sequence[TrainingTriplet], k: int = 5) -> float | None:
    """Per-gold-item hit rate of the top-k movie retrieval."""
    scorable = [t for t in triplets if t.gold_items]
    if not scorable:
        return None
    was_training = bundle.seq2seq.training
    bundle.seq2seq.eval()
    ents = bundle.entity_representations()
    hits = total = 0
    for t in scorable:
        rep = bundle.encode_context(t.context)
        result = recommend_infer(rep.c, ents.H_I, ents.item_index, k)
        top = {item_id for item_id, _ in result.top_k}
        for g in t.gold_items:
            total += 1
            hits += int(g in top)
    if was_training:
        bundle.seq2seq.train()
    return hits / total


@torch.no_grad()
def validation_rec_loss(bundle: ModelBundle, triplets: Sequence[TrainingTriplet]) -> float | None:
    scorable = [t for t in triplets if t.gold_items]
    if not scorable:
        return None
    was_training = bundle.seq2seq.training
    bundle.seq2seq.eval()
    H = bundle.entity_representations().H
    total = 0.0
    count = 0
    for t in scorable:
        rep = bundle.encode_context(t.context)
        log_probs = torch.log_softmax(rep.c @ H.T, dim=-1)
        for row in bundle.entity_rows(sorted(t.gold_items)):
            total += float(-log_probs[row])
            count += 1
    if was_training:
        bundle.seq2seq.train()
    return total / count


def build_tokenizer(train_triplets: Sequence[TrainingTriplet], kg: KnowledgeGraph) -> Tokenizer:
    """Vocabulary from training contexts, targets, and entity names."""
    texts = []
    for t in train_triplets:
        texts.extend(u.text for u in t.context)
        texts.append(t.target)
    texts.extend(node.name for node in kg.nodes.values())
    return Tokenizer.from_texts(texts)


def train(
    config: TrainConfig,
    model_config: ModelConfig | None,
    datasets: tuple[Sequence[TrainingTriplet], Sequence[TrainingTriplet], Sequence[TrainingTriplet]],
    kg: KnowledgeGraph,
    trainability: TrainabilitySpec | None = None,
    tokenizer: Tokenizer | None = None,
    progress: bool = False,
) -> TrainResult:
    """Run the joint training loop; deterministic for a fixed seed on one device.

    Ablation flags act before parameter creation: ``no_corg`` strips edges,
    ``no_node_init`` randomizes entity embeddings, ``no_data_aug`` drops
    augmented triplets; ``no_node_loss`` only zeroes the beta term.
    """
    train_set, valid_set, _ = datasets
    train_set = list(train_set)
    if config.no_data_aug:
        train_set = [t for t in train_set if not t.is_augmented]

    if tokenizer is None:
        tokenizer = build_tokenizer(train_set, kg)
    if model_config is None:
        model_config = ModelConfig.for_profile("desk", vocab_size=len(tokenizer))
    elif model_config.vocab_size == 0:
        model_config.vocab_size = len(tokenizer)
    elif model_config.vocab_size != len(tokenizer):
        raise ConfigError(
            f"model vocab_size {model_config.vocab_size} != tokenizer size {len(tokenizer)}"
        )

    bundle = build_bundle(
        kg,
        tokenizer,
        model_config,
        seed=config.seed,
        no_corg=config.no_corg,
        no_node_init=config.no_node_init,
    )
    apply_trainability(bundle, trainability)
    params = bundle.trainable_parameters()
    optimizer = torch.optim.AdamW(params, lr=config.lr, weight_decay=config.weight_decay)
    rng = random.Random(config.seed)

    examples = [_prepare_example(t, tokenizer, model_config) for t in train_set]
    logs: list[EpochLog] = []
    best_recall = -1.0
    best_epoch: int | None = None
    best_state = bundle.state_dicts()
    last_good = bundle.state_dicts()
    diverged = False

    bundle.seq2seq.train()
    bundle.graph.train()
    for epoch in range(config.epochs):
        started = time.monotonic()
        order = list(range(len(examples)))
        rng.shuffle(order)
        sums = {"rec": 0.0, "gen": 0.0, "node": 0.0, "total": 0.0}
        n_batches = 0
        for lo in range(0, len(order), config.batch_size):
            batch = [examples[i] for i in order[lo : lo + config.batch_size]]
            l_rec, l_gen, l_node = batch_losses(bundle, batch, config, rng)
            loss = joint_loss(l_rec, l_gen, l_node, config)
            if not torch.isfinite(loss):
                log.error("non-finite loss at epoch %d; aborting with last good state", epoch + 1)
                bundle.load_state_dicts(*last_good)
                diverged = True
                break
            optimizer.zero_grad()
            loss.backward()
            if config.grad_clip:
                torch.nn.utils.clip_grad_norm_(params, config.grad_clip)
            optimizer.step()
            sums["rec"] += l_rec.item()
            sums["gen"] += l_gen.item()
            sums["node"] += l_node.item()
            sums["total"] += loss.item()
            n_batches += 1
        if diverged:
            break
        last_good = bundle.state_dicts()
        val_recall = evaluate_recall(bundle, valid_set, k=5)
        val_loss = validation_rec_loss(bundle, valid_set)
        denom = max(n_batches, 1)
        entry = EpochLog(
            epoch=epoch + 1,
            loss_rec=sums["rec"] / denom,
            loss_gen=sums["gen"] / denom,
            loss_node=sums["node"] / denom,
            loss_total=sums["total"] / denom,
            val_recall_at_5=val_recall,
            val_rec_loss=val_loss,
            seconds=time.monotonic() - started,
        )
        logs.append(entry)
        if progress:
            log.info("epoch %d: L=%.4f val R@5=%s", entry.epoch, entry.loss_total, entry.val_recall_at_5)
        if val_recall is not None and val_recall > best_recall:
            best_recall = val_recall
            best_epoch = entry.epoch
            best_state = bundle.state_dicts()

    bundle.seq2seq.eval()
    bundle.graph.eval()
    return TrainResult(bundle=bundle, logs=logs, best_epoch=best_epoch,
                       diverged=diverged, best_state=best_state)


def save_epoch_logs(logs: Sequence[EpochLog], path: str | Path) -> None:
    import json

    with open(path, "w", encoding="utf-8") as fh:
        for entry in logs:
            fh.write(json.dumps(entry.to_dict()) + "\n")


def load_epoch_logs(path: str | Path) -> list[EpochLog]:
    import json

    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(EpochLog(**json.loads(line)))
    return out
