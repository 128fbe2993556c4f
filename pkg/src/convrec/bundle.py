"""Runtime bundle: tokenizer + seq2seq model + graph encoder over one KG.

A bundle is the unit that training mutates, checkpoints serialize, and the
service holds as an immutable snapshot.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import torch
from torch import Tensor

from . import graph_encoder as ge
from .corpus import Utterance
from .errors import DataError
from .kg import KnowledgeGraph
from .model import (
    ContextRepresentation,
    ModelConfig,
    RecommendationResult,
    Seq2SeqRecommender,
    display_name,
    encode_context,
    fill_placeholders,
    generate,
    recommend_infer,
    recommend_train,
)
from .tokenizer import Tokenizer


@dataclass
class ModelBundle:
    kg: KnowledgeGraph
    tokenizer: Tokenizer
    config: ModelConfig
    seq2seq: Seq2SeqRecommender
    graph: ge.GraphEncoder
    graph_index: ge.GraphIndex
    no_corg: bool = False
    order: list[str] = field(default_factory=list)
    row_of: dict[str, int] = field(default_factory=dict)
    type_labels: Tensor | None = None

    def __post_init__(self):
        if not self.order:
            self.order = ge.entity_order(self.kg)
        if not self.row_of:
            self.row_of = {nid: i for i, nid in enumerate(self.order)}
        if self.type_labels is None:
            self.type_labels = ge.node_type_labels(self.kg, self.order)

    def entity_representations(self) -> ge.EntityRepresentations:
        return ge.encode_entities(self.graph, self.kg, self.graph_index)

    def encode_context(self, context: Sequence[Utterance]) -> ContextRepresentation:
        return encode_context(self.seq2seq, self.tokenizer, context)

    def entity_rows(self, entity_ids) -> list[int]:
        rows = []
        for eid in entity_ids:
            if eid not in self.row_of:
                raise DataError(f"gold entity {eid!r} is not in the knowledge graph")
            rows.append(self.row_of[eid])
        return rows

    @torch.no_grad()
    def rank_items(self, context: Sequence[Utterance], k: int) -> RecommendationResult:
        self.seq2seq.eval()
        rep = self.encode_context(context)
        ents = self.entity_representations()
        return recommend_infer(rep.c, ents.H_I, ents.item_index, k)

    def generate_response(self, context: Sequence[Utterance], max_len: int = 40,
                          strategy: str = "greedy", beam_width: int = 4) -> list[int]:
        return generate(self.seq2seq, self.tokenizer, context, max_len=max_len,
                        strategy=strategy, beam_width=beam_width)

    @torch.no_grad()
    def respond(self, context: Sequence[Utterance], top_k: int = 5,
                strategy: str = "greedy", max_len: int = 40) -> dict:
        """Full chat turn: retrieve, generate, fill placeholders."""
        token_ids = self.generate_response(context, max_len=max_len, strategy=strategy)
        raw = self.tokenizer.decode(token_ids)
        n_slots = raw.count(self.tokenizer.vocab[self.tokenizer.placeholder_id])
        fetch = max(top_k, n_slots, 1)
        result = self.rank_items(context, min(fetch, len(self.kg.item_index)) or 1)
        names = []
        for item_id, _ in result.top_k:
            node = self.kg.nodes[item_id]
            names.append(display_name(node.name, node.release_year))
        filled = fill_placeholders(raw, names)
        recs = []
        for item_id, prob in result.top_k[:top_k]:
            node = self.kg.nodes[item_id]
            recs.append({"entity_id": item_id, "name": node.name,
                         "year": node.release_year, "score": prob})
        return {"raw_response": raw, "filled_response": filled, "recommendations": recs}

    def parameters(self):
        yield from self.seq2seq.parameters()
        yield from self.graph.parameters()

    def trainable_parameters(self):
        return [p for p in self.parameters() if p.requires_grad]

    def state_dicts(self) -> tuple[dict, dict]:
        clone = lambda sd: {k: v.detach().clone() for k, v in sd.items()}
        return clone(self.seq2seq.state_dict()), clone(self.graph.state_dict())

    def load_state_dicts(self, seq2seq_state: dict, graph_state: dict) -> None:
        self.seq2seq.load_state_dict(seq2seq_state)
        self.graph.load_state_dict(graph_state)


def name_encoder(seq2seq: Seq2SeqRecommender, tokenizer: Tokenizer):
    """Sentence representation of an entity name via the context encoder."""

    def encode_name(name: str) -> Tensor | None:
        if not tokenizer.encode(name):
            return None
        with torch.no_grad():
            seq2seq.eval()
            rep = encode_context(seq2seq, tokenizer, [Utterance(speaker="seeker", text=name)])
        return rep.c

    return encode_name


def build_bundle(
    kg: KnowledgeGraph,
    tokenizer: Tokenizer,
    config: ModelConfig,
    seed: int = 0,
    no_corg: bool = False,
    no_node_init: bool = False,
    dtype: torch.dtype = torch.float32,
) -> ModelBundle:
    """Construct a fresh bundle with deterministic initialization.

    Entity embeddings are initialized from the encoder's representations of
    the node names unless ``no_node_init`` asks for random rows; ``no_corg``
    strips all graph edges (message passing reduces to the self term).
    """
    torch.manual_seed(seed)
    seq2seq = Seq2SeqRecommender(config).to(dtype)
    effective_kg = kg.without_edges() if no_corg else kg
    index = ge.GraphIndex.build(effective_kg, dtype=dtype)
    graph = ge.GraphEncoder(
        n_entities=len(kg.nodes),
        dim=config.d_model,
        n_layers=config.graph_layers,
        activation=config.graph_activation,
    ).to(dtype)
    if no_node_init:
        table = ge.init_embeddings_random(kg, config.d_model, seed=seed, dtype=dtype)
    else:
        table = ge.init_embeddings_from_names(kg, name_encoder(seq2seq, tokenizer),
                                              config.d_model, fallback_seed=seed, dtype=dtype)
    graph.set_embeddings(table)
    return ModelBundle(
        kg=kg,
        tokenizer=tokenizer,
        config=config,
        seq2seq=seq2seq,
        graph=graph,
        graph_index=index,
        no_corg=no_corg,
    )
