"""Unified encoder-decoder recommender.

The bidirectional encoder turns a dialogue context into token states plus a
pooled vector ``c`` (final-layer hidden state at the end-of-sequence position).
``c`` doubles as the retrieval key: scores are inner products against entity
representations, softmaxed over all entities during training and over the
movie slice at inference. The autoregressive decoder cross-attends to the
encoder's final hidden states at every layer and emits placeholder-bearing
responses; placeholders are then filled from the retrieval ranking.

Two profiles share this implementation: "desk" (2+2 layers, d=64, corpus
vocabulary; what the test suite runs) and "pretrained" (6+6 layers, d=768,
loaded from an external checkpoint when one is provided).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, asdict
from typing import Sequence

import torch
from torch import Tensor, nn

from .corpus import PLACEHOLDER, Utterance
from .errors import DataError, NumericError
from .tokenizer import Tokenizer

log = logging.getLogger(__name__)

PROFILES = {
    "desk": dict(d_model=64, n_heads=4, enc_layers=2, dec_layers=2, ffn_dim=256,
                 max_src_len=128, max_tgt_len=64),
    "pretrained": dict(d_model=768, n_heads=12, enc_layers=6, dec_layers=6, ffn_dim=3072,
                       max_src_len=1024, max_tgt_len=128),
}


@dataclass
class ModelConfig:
    vocab_size: int
    profile: str = "desk"
    d_model: int = 64
    n_heads: int = 4
    enc_layers: int = 2
    dec_layers: int = 2
    ffn_dim: int = 256
    max_src_len: int = 128
    max_tgt_len: int = 64
    dropout: float = 0.0
    graph_layers: int = 1
    graph_activation: str = "relu"

    @classmethod
    def for_profile(cls, profile: str, vocab_size: int, **overrides) -> "ModelConfig":
        if profile not in PROFILES:
            raise DataError(f"unknown model profile {profile!r}")
        kwargs = dict(PROFILES[profile])
        kwargs.update(overrides)
        return cls(vocab_size=vocab_size, profile=profile, **kwargs)

    def to_dict(self) -> dict:
        return asdict(self)


class EncoderLayer(nn.Module):
    def __init__(self, d: int, heads: int, ffn: int, dropout: float):
        super().__init__()
        self.ln1 = nn.LayerNorm(d)
        self.attn = nn.MultiheadAttention(d, heads, dropout=dropout, batch_first=True)
        self.ln2 = nn.LayerNorm(d)
        self.ff = nn.Sequential(nn.Linear(d, ffn), nn.GELU(), nn.Linear(ffn, d))
        self.drop = nn.Dropout(dropout)

    def forward(self, x: Tensor, pad_mask: Tensor | None) -> Tensor:
        h = self.ln1(x)
        a, _ = self.attn(h, h, h, key_padding_mask=pad_mask, need_weights=False)
        x = x + self.drop(a)
        x = x + self.drop(self.ff(self.ln2(x)))
        return x


class DecoderLayer(nn.Module):
    def __init__(self, d: int, heads: int, ffn: int, dropout: float):
        super().__init__()
        self.ln1 = nn.LayerNorm(d)
        self.self_attn = nn.MultiheadAttention(d, heads, dropout=dropout, batch_first=True)
        self.ln2 = nn.LayerNorm(d)
        self.cross_attn = nn.MultiheadAttention(d, heads, dropout=dropout, batch_first=True)
        self.ln3 = nn.LayerNorm(d)
        self.ff = nn.Sequential(nn.Linear(d, ffn), nn.GELU(), nn.Linear(ffn, d))
        self.drop = nn.Dropout(dropout)

    def forward(self, x: Tensor, memory: Tensor, causal_mask: Tensor, memory_pad_mask: Tensor | None) -> Tensor:
        h = self.ln1(x)
        a, _ = self.self_attn(h, h, h, attn_mask=causal_mask, need_weights=False)
        x = x + self.drop(a)
        h = self.ln2(x)
        a, _ = self.cross_attn(h, memory, memory, key_padding_mask=memory_pad_mask, need_weights=False)
        x = x + self.drop(a)
        x = x + self.drop(self.ff(self.ln3(x)))
        return x


class Seq2SeqRecommender(nn.Module):
    """Shared-embedding transformer; output projection is tied to the embedding."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        d = config.d_model
        self.tok_emb = nn.Embedding(config.vocab_size, d, padding_idx=0)
        self.enc_pos = nn.Embedding(config.max_src_len, d)
        self.dec_pos = nn.Embedding(config.max_tgt_len, d)
        self.encoder_layers = nn.ModuleList(
            EncoderLayer(d, config.n_heads, config.ffn_dim, config.dropout) for _ in range(config.enc_layers)
        )
        self.encoder_norm = nn.LayerNorm(d)
        self.decoder_layers = nn.ModuleList(
            DecoderLayer(d, config.n_heads, config.ffn_dim, config.dropout) for _ in range(config.dec_layers)
        )
        self.decoder_norm = nn.LayerNorm(d)
        self.drop = nn.Dropout(config.dropout)
        self.apply(self._init_weights)

    def _init_weights(self, module: nn.Module) -> None:
        if isinstance(module, (nn.Linear, nn.Embedding)):
            module.weight.data.normal_(mean=0.0, std=0.02)
        if isinstance(module, nn.MultiheadAttention):
            module.in_proj_weight.data.normal_(mean=0.0, std=0.02)
            module.in_proj_bias.data.zero_()
        if isinstance(module, nn.Embedding) and module.padding_idx is not None:
            module.weight.data[module.padding_idx].zero_()
        if isinstance(module, nn.Linear) and module.bias is not None:
            module.bias.data.zero_()

    def encode(self, src_ids: Tensor, pad_mask: Tensor | None = None) -> Tensor:
        positions = torch.arange(src_ids.size(1), device=src_ids.device)
        x = self.drop(self.tok_emb(src_ids) + self.enc_pos(positions))
        for layer in self.encoder_layers:
            x = layer(x, pad_mask)
        return self.encoder_norm(x)

    def decode(self, dec_ids: Tensor, memory: Tensor, memory_pad_mask: Tensor | None = None) -> Tensor:
        s = dec_ids.size(1)
        positions = torch.arange(s, device=dec_ids.device)
        causal = torch.triu(torch.ones(s, s, dtype=torch.bool, device=dec_ids.device), diagonal=1)
        x = self.drop(self.tok_emb(dec_ids) + self.dec_pos(positions))
        for layer in self.decoder_layers:
            x = layer(x, memory, causal, memory_pad_mask)
        return self.decoder_norm(x)

    def output_logits(self, hidden: Tensor) -> Tensor:
        return hidden @ self.tok_emb.weight.T


@dataclass
class ContextRepresentation:
    token_states: Tensor  # (T, d) final encoder layer
    c: Tensor  # (d,) pooled at the end-of-sequence position


def serialize_context(context: Sequence[Utterance], tokenizer: Tokenizer, max_len: int) -> list[int]:
    """Oldest-first turns, speaker-marker prefixed, end token appended.

    Truncation keeps the most recent tokens: the result is always a suffix of
    the untruncated id sequence.
    """
    if not context:
        raise DataError("cannot encode an empty context")
    ids: list[int] = []
    for turn in context:
        ids.append(tokenizer.speaker_id(turn.speaker))
        ids.extend(tokenizer.encode(turn.text))
    ids.append(tokenizer.eos_id)
    if len(ids) > max_len:
        ids = ids[-max_len:]
    return ids


def encode_context(
    model: Seq2SeqRecommender, tokenizer: Tokenizer, context: Sequence[Utterance]
) -> ContextRepresentation:
    ids = serialize_context(context, tokenizer, model.config.max_src_len)
    src = torch.tensor([ids], dtype=torch.long, device=model.tok_emb.weight.device)
    states = model.encode(src)[0]
    return ContextRepresentation(token_states=states, c=states[-1])


@dataclass
class RecommendationResult:
    scores: Tensor  # (|I|,) raw inner products, item_index order
    probabilities: Tensor  # (|I|,) softmax over movie rows
    top_k: list[tuple[str, float]]  # (movie id, probability), descending


def recommend_train(c: Tensor, H: Tensor) -> Tensor:
    """Training-time retrieval distribution over all entities."""
    scores = c @ H.T
    if not torch.isfinite(scores).all():
        raise NumericError("non-finite retrieval scores")
    return torch.softmax(scores, dim=-1)


def recommend_infer(c: Tensor, H_I: Tensor, item_index: Sequence[str], k: int) -> RecommendationResult:
    """Inference-time retrieval over the movie slice only; ties break by id."""
    if k < 1:
        raise DataError(f"top-k must be >= 1, got {k}")
    scores = c @ H_I.T
    if not torch.isfinite(scores).all():
        raise NumericError("non-finite retrieval scores")
    probs = torch.softmax(scores, dim=-1)
    n = len(item_index)
    if k > n:
        log.warning("top-%d requested but only %d items; truncating", k, n)
        k = n
    p = probs.detach().to(torch.float64)
    order = sorted(range(n), key=lambda i: (-float(p[i]), item_index[i]))
    top = [(item_index[i], float(p[i])) for i in order[:k]]
    return RecommendationResult(scores=scores, probabilities=probs, top_k=top)


def generation_logits(
    model: Seq2SeqRecommender,
    decoder_input_ids: Tensor,
    token_states: Tensor,
    memory_pad_mask: Tensor | None = None,
) -> Tensor:
    """Per-position vocabulary logits under teacher forcing (causal)."""
    hidden = model.decode(decoder_input_ids, token_states, memory_pad_mask)
    return model.output_logits(hidden)


@torch.no_grad()
def generate(
    model: Seq2SeqRecommender,
    tokenizer: Tokenizer,
    context: Sequence[Utterance],
    max_len: int = 40,
    strategy: str = "greedy",
    beam_width: int = 4,
) -> list[int]:
    """Autoregressive decoding; returns generated ids (terminal end token kept)."""
    was_training = model.training
    model.eval()
    try:
        ids = serialize_context(context, tokenizer, model.config.max_src_len)
        src = torch.tensor([ids], dtype=torch.long, device=model.tok_emb.weight.device)
        memory = model.encode(src)
        max_len = min(max_len, model.config.max_tgt_len - 1)
        if strategy == "greedy":
            return _greedy(model, tokenizer, memory, max_len)
        if strategy == "beam":
            return _beam(model, tokenizer, memory, max_len, beam_width)
        raise DataError(f"unknown decoding strategy {strategy!r}")
    finally:
        if was_training:
            model.train()


def _greedy(model, tokenizer, memory, max_len) -> list[int]:
    out: list[int] = []
    dec = [tokenizer.bos_id]
    for _ in range(max_len):
        dec_ids = torch.tensor([dec], dtype=torch.long, device=memory.device)
        logits = generation_logits(model, dec_ids, memory)[0, -1]
        nxt = int(torch.argmax(logits))
        out.append(nxt)
        if nxt == tokenizer.eos_id:
            break
        dec.append(nxt)
    return out


def _beam(model, tokenizer, memory, max_len, width) -> list[int]:
    # (cumulative logprob, generated ids, finished)
    beams: list[tuple[float, list[int], bool]] = [(0.0, [], False)]
    for _ in range(max_len):
        candidates: list[tuple[float, list[int], bool]] = []
        for score, seq, finished in beams:
            if finished:
                candidates.append((score, seq, True))
                continue
            dec = [tokenizer.bos_id] + seq
            dec_ids = torch.tensor([dec], dtype=torch.long, device=memory.device)
            logprobs = torch.log_softmax(generation_logits(model, dec_ids, memory)[0, -1], dim=-1)
            top = torch.topk(logprobs, k=min(width, logprobs.numel()))
            for lp, tok_id in zip(top.values.tolist(), top.indices.tolist()):
                candidates.append((score + lp, seq + [tok_id], tok_id == tokenizer.eos_id))
        # stable, deterministic: higher score first; ties by token sequence
        candidates.sort(key=lambda c: (-c[0], c[1]))
        beams = candidates[:width]
        if all(b[2] for b in beams):
            break
    return beams[0][1]


def fill_placeholders(text: str, item_names: Sequence[str], placeholder: str = PLACEHOLDER) -> str:
    """Replace the i-th placeholder with the i-th ranked item display name.

    Characters outside placeholder spans are never touched. Placeholders with
    no item left to fill stay verbatim (with a warning).
    """
    parts = text.split(placeholder)
    n_slots = len(parts) - 1
    if n_slots > len(item_names):
        log.warning("%d placeholders but only %d items; extra slots left verbatim",
                    n_slots, len(item_names))
    out = [parts[0]]
    for i, part in enumerate(parts[1:]):
        out.append(item_names[i] if i < len(item_names) else placeholder)
        out.append(part)
    return "".join(out)


def display_name(name: str, year: int | None) -> str:
    return f"{name} ({year})" if year is not None else name


@dataclass
class ParameterBreakdown:
    recommendation_module: int
    generation_module: int
    total: int
    trainable_total: int

    @property
    def recommendation_pct(self) -> float:
        return 100.0 * self.recommendation_module / self.trainable_total if self.trainable_total else 0.0

    @property
    def generation_pct(self) -> float:
        return 100.0 * self.generation_module / self.trainable_total if self.trainable_total else 0.0

    def to_dict(self) -> dict:
        return {
            "recommendation_module": self.recommendation_module,
            "generation_module": self.generation_module,
            "total": self.total,
            "trainable_total": self.trainable_total,
            "recommendation_pct": self.recommendation_pct,
            "generation_pct": self.generation_pct,
        }


def count_parameters(model: Seq2SeqRecommender, graph_encoder: nn.Module) -> ParameterBreakdown:
    """Trainable-parameter partition mirroring the two task modules.

    Recommendation side: graph encoder (embeddings, relation weights,
    classifier), encoder stack, and the shared token/position embeddings (the
    token table also serves as the tied output projection and is counted once,
    here). Generation side: decoder stack and its position table. The
    partition is exhaustive and disjoint over trainable parameters.
    """

    def trainable(module: nn.Module) -> int:
        return sum(p.numel() for p in module.parameters() if p.requires_grad)

    rec = trainable(graph_encoder)
    rec += trainable(model.tok_emb) + trainable(model.enc_pos)
    rec += sum(trainable(l) for l in model.encoder_layers) + trainable(model.encoder_norm)
    gen = trainable(model.dec_pos)
    gen += sum(trainable(l) for l in model.decoder_layers) + trainable(model.decoder_norm)
    total = sum(p.numel() for p in model.parameters()) + sum(p.numel() for p in graph_encoder.parameters())
    return ParameterBreakdown(
        recommendation_module=rec,
        generation_module=gen,
        total=total,
        trainable_total=rec + gen,
    )
