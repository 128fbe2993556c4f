"""Entity representation learning over the knowledge graph.

Message passing follows the relational graph-convolution update: for entity i,

    h_i^(l+1) = sigma( sum_r sum_{j in N_i^r} (1/|N_i^r|) W_r h_j  +  W h_i )

with one transformation matrix per relation type per layer plus a self term.
Relations are treated as undirected for neighborhood construction (movie and
attribute information must flow both ways) while keeping per-relation weights.
The self term is analytic; no self-loop edges are stored in graph files.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import torch
from torch import Tensor, nn

from .errors import NumericError
from .kg import NODE_TYPES, RELATIONS, KnowledgeGraph

log = logging.getLogger(__name__)

N_NODE_TYPES = len(NODE_TYPES)


def entity_order(kg: KnowledgeGraph) -> list[str]:
    """Row order of the entity matrix: stable sort by node id."""
    return sorted(kg.nodes)


@dataclass
class GraphIndex:
    """Precomputed per-relation neighborhoods for message passing."""

    n_entities: int
    relations: tuple[str, ...]
    # per relation: (dst rows, src rows, 1/deg per entity; zero where no neighbors)
    neighborhoods: dict[str, tuple[Tensor, Tensor, Tensor]]

    @classmethod
    def build(
        cls,
        kg: KnowledgeGraph,
        order: Sequence[str] | None = None,
        relations: Sequence[str] = RELATIONS,
        dtype: torch.dtype = torch.float32,
    ) -> "GraphIndex":
        order = list(order) if order is not None else entity_order(kg)
        row = {nid: i for i, nid in enumerate(order)}
        n = len(order)
        pairs: dict[str, set[tuple[int, int]]] = {r: set() for r in relations}
        for edge in kg.edges:
            h, t = row[edge.head], row[edge.tail]
            # undirected neighborhoods, deduplicated
            pairs[edge.relation].add((t, h))
            pairs[edge.relation].add((h, t))
        neigh: dict[str, tuple[Tensor, Tensor, Tensor]] = {}
        for r in relations:
            if not pairs[r]:
                continue
            ordered = sorted(pairs[r])
            dst = torch.tensor([p[0] for p in ordered], dtype=torch.long)
            src = torch.tensor([p[1] for p in ordered], dtype=torch.long)
            deg = torch.zeros(n, dtype=dtype)
            deg.index_add_(0, dst, torch.ones(len(ordered), dtype=dtype))
            inv_deg = torch.where(deg > 0, 1.0 / deg.clamp(min=1.0), torch.zeros(()).to(dtype))
            neigh[r] = (dst, src, inv_deg)
        return cls(n_entities=n, relations=tuple(relations), neighborhoods=neigh)


_ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "relu": torch.relu,
    "identity": lambda x: x,
    "tanh": torch.tanh,
}


class RGCNLayer(nn.Module):
    """One relational graph-convolution layer (plain dense per-relation weights)."""

    def __init__(self, dim: int, relations: Sequence[str] = RELATIONS, activation: str = "relu"):
        super().__init__()
        self.relations = tuple(relations)
        self.activation_name = activation
        self.w_rel = nn.ParameterDict({r: nn.Parameter(torch.empty(dim, dim)) for r in self.relations})
        self.w_self = nn.Parameter(torch.empty(dim, dim))
        self.reset_parameters()

    def reset_parameters(self) -> None:
        for w in self.w_rel.values():
            nn.init.xavier_uniform_(w)
        nn.init.xavier_uniform_(self.w_self)

    def forward(self, h: Tensor, index: GraphIndex) -> Tensor:
        out = h @ self.w_self.T
        for r in self.relations:
            hood = index.neighborhoods.get(r)
            if hood is None:
                continue
            dst, src, inv_deg = hood
            agg = torch.zeros_like(h)
            agg.index_add_(0, dst, h.index_select(0, src))
            agg = agg * inv_deg.to(h.dtype).unsqueeze(1)
            out = out + agg @ self.w_rel[r].T
        return _ACTIVATIONS[self.activation_name](out)


class NodeTypeClassifier(nn.Module):
    """MLP head predicting one of the node types from an entity state."""

    def __init__(self, dim: int, n_types: int = N_NODE_TYPES):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(dim, dim), nn.ReLU(), nn.Linear(dim, n_types))

    def forward(self, h: Tensor) -> Tensor:
        return self.net(h)

    def probabilities(self, h: Tensor) -> Tensor:
        return torch.softmax(self.net(h), dim=-1)


@dataclass
class EmbeddingTable:
    weights: Tensor  # (n_entities, dim)
    provenance: str  # "random" | "name_encoded"


@dataclass
class EntityRepresentations:
    H: Tensor  # (n_entities, dim), final-layer states
    order: list[str]
    item_rows: Tensor  # long tensor of movie row positions, sorted by id
    item_index: list[str]

    @property
    def H_I(self) -> Tensor:
        return self.H.index_select(0, self.item_rows)


class GraphEncoder(nn.Module):
    def __init__(
        self,
        n_entities: int,
        dim: int,
        n_layers: int = 1,
        relations: Sequence[str] = RELATIONS,
        activation: str = "relu",
    ):
        super().__init__()
        self.dim = dim
        self.embeddings = nn.Parameter(torch.empty(n_entities, dim))
        nn.init.normal_(self.embeddings, std=0.02)
        self.layers = nn.ModuleList(RGCNLayer(dim, relations, activation) for _ in range(n_layers))
        self.classifier = NodeTypeClassifier(dim)
        self.provenance = "random"

    def set_embeddings(self, table: EmbeddingTable) -> None:
        with torch.no_grad():
            self.embeddings.copy_(table.weights.to(self.embeddings.dtype))
        self.provenance = table.provenance

    def forward(self, index: GraphIndex) -> Tensor:
        h = self.embeddings
        for layer in self.layers:
            h = layer(h, index)
            if not torch.isfinite(h).all():
                bad = torch.nonzero(~torch.isfinite(h).all(dim=1)).flatten()
                raise NumericError(f"non-finite entity state at rows {bad.tolist()[:5]}")
        return h


def encode_entities(encoder: GraphEncoder, kg: KnowledgeGraph, index: GraphIndex) -> EntityRepresentations:
    order = entity_order(kg)
    H = encoder(index)
    item_index = kg.item_index
    row = {nid: i for i, nid in enumerate(order)}
    item_rows = torch.tensor([row[i] for i in item_index], dtype=torch.long)
    return EntityRepresentations(H=H, order=order, item_rows=item_rows, item_index=item_index)


def node_type_labels(kg: KnowledgeGraph, order: Sequence[str]) -> Tensor:
    return torch.tensor([NODE_TYPES.index(kg.nodes[nid].node_type) for nid in order], dtype=torch.long)


def node_type_loss(classifier: NodeTypeClassifier, H: Tensor, rows: Tensor, labels: Tensor) -> Tensor:
    """Mean cross-entropy of the type prediction over the given entity rows."""
    logits = classifier(H.index_select(0, rows))
    return nn.functional.cross_entropy(logits, labels.index_select(0, rows))


def init_embeddings_random(
    kg: KnowledgeGraph, dim: int, seed: int, scale: float = 0.02, dtype: torch.dtype = torch.float32
) -> EmbeddingTable:
    gen = torch.Generator().manual_seed(seed)
    weights = torch.randn(len(kg.nodes), dim, generator=gen, dtype=dtype) * scale
    return EmbeddingTable(weights=weights, provenance="random")


def init_embeddings_from_names(
    kg: KnowledgeGraph,
    encode_name: Callable[[str], Tensor | None],
    dim: int,
    fallback_seed: int = 0,
    dtype: torch.dtype = torch.float32,
) -> EmbeddingTable:
    """Row i = sentence representation of node i's name.

    ``encode_name`` returns the pooled context vector for a name, or None when
    the name produces no tokens; such rows fall back to random initialization.
    """
    order = entity_order(kg)
    gen = torch.Generator().manual_seed(fallback_seed)
    rows = []
    for nid in order:
        vec = encode_name(kg.nodes[nid].name)
        if vec is None:
            log.warning("entity %s has an untokenizable name; random embedding row", nid)
            vec = torch.randn(dim, generator=gen, dtype=dtype) * 0.02
        rows.append(vec.detach().to(dtype))
    return EmbeddingTable(weights=torch.stack(rows), provenance="name_encoded")
