"""Checkpoint format: a directory with a shape manifest plus tensor payloads.

Layout:
    config.json     model + graph configuration, profile, tokenizer hash, flags
    tokenizer.json  vocabulary
    entities.json   entity id order (row order of the embedding table)
    manifest.json   per-segment tensor names, shapes, dtypes
    weights.npz     named arrays, "seq2seq/<name>" and "graph/<name>"

The graph-encoder segment is loadable on its own, independent of the seq2seq
weights.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import torch

from . import graph_encoder as ge
from .bundle import ModelBundle
from .errors import DataError
from .kg import KnowledgeGraph
from .model import ModelConfig, Seq2SeqRecommender
from .tokenizer import Tokenizer

MANIFEST = "manifest.json"
WEIGHTS = "weights.npz"
CONFIG = "config.json"
TOKENIZER = "tokenizer.json"
ENTITIES = "entities.json"


def _segment_entries(state: dict) -> list[dict]:
    return [
        {"name": name, "shape": list(tensor.shape), "dtype": str(tensor.dtype).removeprefix("torch.")}
        for name, tensor in state.items()
    ]


def save_checkpoint(
    path: str | Path,
    bundle: ModelBundle,
    seq2seq_state: dict | None = None,
    graph_state: dict | None = None,
) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    seq2seq_state = seq2seq_state if seq2seq_state is not None else bundle.seq2seq.state_dict()
    graph_state = graph_state if graph_state is not None else bundle.graph.state_dict()

    config = {
        "model_config": bundle.config.to_dict(),
        "tokenizer_hash": bundle.tokenizer.vocab_hash,
        "no_corg": bundle.no_corg,
        "embedding_provenance": bundle.graph.provenance,
        "n_entities": len(bundle.order),
    }
    (path / CONFIG).write_text(json.dumps(config, indent=2), encoding="utf-8")
    bundle.tokenizer.save(path / TOKENIZER)
    (path / ENTITIES).write_text(json.dumps(bundle.order), encoding="utf-8")

    manifest = {
        "format": "npz",
        "segments": {
            "seq2seq": _segment_entries(seq2seq_state),
            "graph_encoder": _segment_entries(graph_state),
        },
    }
    (path / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")

    arrays = {}
    for name, tensor in seq2seq_state.items():
        arrays[f"seq2seq/{name}"] = tensor.detach().cpu().numpy()
    for name, tensor in graph_state.items():
        arrays[f"graph_encoder/{name}"] = tensor.detach().cpu().numpy()
    np.savez(path / WEIGHTS, **arrays)
    return path


def checkpoint_hash(path: str | Path) -> str:
    """Digest over the manifest and tensor payload files."""
    path = Path(path)
    digest = hashlib.sha256()
    for name in (MANIFEST, WEIGHTS):
        digest.update((path / name).read_bytes())
    return digest.hexdigest()


def _load_segment(path: Path, segment: str) -> dict:
    with np.load(path / WEIGHTS) as payload:
        prefix = f"{segment}/"
        return {
            key.removeprefix(prefix): torch.from_numpy(np.array(payload[key]))
            for key in payload.files
            if key.startswith(prefix)
        }


def load_checkpoint(path: str | Path, kg: KnowledgeGraph) -> ModelBundle:
    path = Path(path)
    config = json.loads((path / CONFIG).read_text(encoding="utf-8"))
    order = json.loads((path / ENTITIES).read_text(encoding="utf-8"))
    if order != ge.entity_order(kg):
        raise DataError("checkpoint entity order does not match the provided knowledge graph")

    tokenizer = Tokenizer.load(path / TOKENIZER)
    if tokenizer.vocab_hash != config["tokenizer_hash"]:
        raise DataError("tokenizer file does not match the recorded hash")

    model_config = ModelConfig(**config["model_config"])
    seq2seq = Seq2SeqRecommender(model_config)
    seq2seq.load_state_dict(_load_segment(path, "seq2seq"))
    seq2seq.eval()

    no_corg = bool(config.get("no_corg", False))
    effective_kg = kg.without_edges() if no_corg else kg
    graph = ge.GraphEncoder(
        n_entities=len(kg.nodes),
        dim=model_config.d_model,
        n_layers=model_config.graph_layers,
        activation=model_config.graph_activation,
    )
    graph.load_state_dict(_load_segment(path, "graph_encoder"))
    graph.provenance = config.get("embedding_provenance", "random")
    graph.eval()

    return ModelBundle(
        kg=kg,
        tokenizer=tokenizer,
        config=model_config,
        seq2seq=seq2seq,
        graph=graph,
        graph_index=ge.GraphIndex.build(effective_kg),
        no_corg=no_corg,
    )


def load_graph_encoder(path: str | Path, kg: KnowledgeGraph) -> ge.GraphEncoder:
    """Load only the graph-encoder segment (independent of seq2seq weights)."""
    path = Path(path)
    config = json.loads((path / CONFIG).read_text(encoding="utf-8"))
    model_config = ModelConfig(**config["model_config"])
    graph = ge.GraphEncoder(
        n_entities=len(kg.nodes),
        dim=model_config.d_model,
        n_layers=model_config.graph_layers,
        activation=model_config.graph_activation,
    )
    graph.load_state_dict(_load_segment(path, "graph_encoder"))
    graph.provenance = config.get("embedding_provenance", "random")
    graph.eval()
    return graph
