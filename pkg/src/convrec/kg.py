"""Movie knowledge graph: 5 node types, 5 relation types, builder and loaders.

Files are JSONL. Nodes: {"id", "name", "node_type", "release_year"?}; edges:
{"head", "relation", "tail"}. The builder consumes an offline dump, one movie
per line:

    {"movie": {"name": "...", "year": 1994, "id"?: "..."},
     "genres": [{"id": "...", "name": "...", "parents": [<genre>, ...]}, ...],
     "cast": [{"id": "...", "name": "..."}, ...],      # billing order
     "directors": [...], "companies": [...]}

Genre ``parents`` nest recursively; the builder walks them to materialize the
full genre hierarchy.
"""

from __future__ import annotations

import json
import logging
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import GraphValidationError

log = logging.getLogger(__name__)

NODE_TYPES = ("movie", "genre", "cast_member", "director", "production_company")
RELATIONS = ("has_genre", "has_cast_member", "directed_by", "produced_by", "subgenre_of")

# relation -> (head type, tail type)
RELATION_SIGNATURE = {
    "has_genre": ("movie", "genre"),
    "has_cast_member": ("movie", "cast_member"),
    "directed_by": ("movie", "director"),
    "produced_by": ("movie", "production_company"),
    "subgenre_of": ("genre", "genre"),
}

MAX_CAST = 10
YEAR_TOLERANCE = 1


@dataclass(frozen=True)
class EntityNode:
    id: str
    name: str
    node_type: str
    release_year: int | None = None


@dataclass(frozen=True)
class RelationEdge:
    head: str
    relation: str
    tail: str


@dataclass
class KnowledgeGraph:
    nodes: dict[str, EntityNode]
    edges: list[RelationEdge]

    @property
    def item_index(self) -> list[str]:
        """Movie ids in a stable sort by id; defines the item-matrix row order."""
        return sorted(nid for nid, n in self.nodes.items() if n.node_type == "movie")

    @property
    def item_set(self) -> set[str]:
        return {nid for nid, n in self.nodes.items() if n.node_type == "movie"}

    def descriptive_entities(self) -> list[EntityNode]:
        return sorted((n for n in self.nodes.values() if n.node_type != "movie"), key=lambda n: n.id)

    def without_edges(self) -> "KnowledgeGraph":
        return KnowledgeGraph(nodes=dict(self.nodes), edges=[])

    def validate(self) -> None:
        for node in self.nodes.values():
            if node.node_type not in NODE_TYPES:
                raise GraphValidationError(f"node {node.id!r} has unknown node_type {node.node_type!r}")
        for edge in self.edges:
            if edge.relation not in RELATIONS:
                raise GraphValidationError(f"edge {edge} has unknown relation")
            for endpoint, role in ((edge.head, "head"), (edge.tail, "tail")):
                if endpoint not in self.nodes:
                    raise GraphValidationError(f"dangling edge {edge}: {role} {endpoint!r} is not a node")
            want_head, want_tail = RELATION_SIGNATURE[edge.relation]
            got_head = self.nodes[edge.head].node_type
            got_tail = self.nodes[edge.tail].node_type
            if (got_head, got_tail) != (want_head, want_tail):
                raise GraphValidationError(
                    f"edge {edge}: relation {edge.relation} expects {want_head}->{want_tail}, "
                    f"got {got_head}->{got_tail}"
                )


@dataclass
class CoverageStats:
    mentioned_movies: int
    covered_movies: int
    coverage_ratio: float | None
    node_counts: dict[str, int]
    edge_counts: dict[str, int]

    def to_dict(self) -> dict:
        return {
            "mentioned_movies": self.mentioned_movies,
            "covered_movies": self.covered_movies,
            "coverage_ratio": self.coverage_ratio,
            "node_counts": self.node_counts,
            "edge_counts": self.edge_counts,
            "total_nodes": sum(self.node_counts.values()),
            "total_edges": sum(self.edge_counts.values()),
        }


def count_stats(kg: KnowledgeGraph, mentioned: int = 0, covered: int = 0) -> CoverageStats:
    node_counts = {t: 0 for t in NODE_TYPES}
    for node in kg.nodes.values():
        node_counts[node.node_type] += 1
    edge_counts = {r: 0 for r in RELATIONS}
    for edge in kg.edges:
        edge_counts[edge.relation] += 1
    ratio = covered / mentioned if mentioned > 0 else None
    return CoverageStats(mentioned, covered, ratio, node_counts, edge_counts)


def normalize_name(name: str) -> str:
    return " ".join(unicodedata.normalize("NFC", name).casefold().split())


def slug(name: str) -> str:
    norm = normalize_name(name)
    return "".join(ch if ch.isalnum() else "-" for ch in norm).strip("-")


def load_graph(nodes_path: str | Path, edges_path: str | Path) -> KnowledgeGraph:
    nodes: dict[str, EntityNode] = {}
    with open(nodes_path, encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            rec = json.loads(line)
            node = EntityNode(
                id=str(rec["id"]),
                name=rec["name"],
                node_type=rec["node_type"],
                release_year=rec.get("release_year"),
            )
            if node.id in nodes:
                raise GraphValidationError(f"duplicate node id {node.id!r} (nodes file line {line_number})")
            nodes[node.id] = node
    edges: list[RelationEdge] = []
    with open(edges_path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            edges.append(RelationEdge(head=str(rec["head"]), relation=rec["relation"], tail=str(rec["tail"])))
    kg = KnowledgeGraph(nodes=nodes, edges=edges)
    kg.validate()
    return kg


def save_graph(kg: KnowledgeGraph, nodes_path: str | Path, edges_path: str | Path) -> None:
    with open(nodes_path, "w", encoding="utf-8") as fh:
        for nid in sorted(kg.nodes):
            node = kg.nodes[nid]
            rec = {"id": node.id, "name": node.name, "node_type": node.node_type}
            if node.release_year is not None:
                rec["release_year"] = node.release_year
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
    with open(edges_path, "w", encoding="utf-8") as fh:
        for edge in kg.edges:
            fh.write(json.dumps({"head": edge.head, "relation": edge.relation, "tail": edge.tail}) + "\n")


def genre_closure(
    genre_records: dict[str, tuple[str, list[str]]],
    attached: Iterable[str],
) -> tuple[list[EntityNode], list[RelationEdge], list[str]]:
    """Walk genre -> parent links from the movie-attached genres.

    ``genre_records`` maps genre id to (name, direct parent ids). Returns the
    reachable genre nodes, one child->parent ``subgenre_of`` edge per pair, and
    cycle warnings. Cycles terminate the walk instead of recursing.
    """
    nodes: dict[str, EntityNode] = {}
    edges: list[RelationEdge] = []
    edge_seen: set[tuple[str, str]] = set()
    warnings: list[str] = []
    visited: set[str] = set()

    def walk(genre_id: str, path: tuple[str, ...]) -> None:
        if genre_id in path:
            msg = f"genre hierarchy cycle: {' -> '.join(path + (genre_id,))}"
            warnings.append(msg)
            log.warning(msg)
            return
        name, parents = genre_records.get(genre_id, (genre_id, []))
        if genre_id not in nodes:
            nodes[genre_id] = EntityNode(id=genre_id, name=name, node_type="genre")
        if genre_id in visited:
            return
        visited.add(genre_id)
        for parent_id in parents:
            if parent_id not in genre_records and parent_id not in nodes:
                pname, _ = genre_records.get(parent_id, (parent_id, []))
                nodes[parent_id] = EntityNode(id=parent_id, name=pname, node_type="genre")
            if (genre_id, parent_id) not in edge_seen:
                edge_seen.add((genre_id, parent_id))
                edges.append(RelationEdge(head=genre_id, relation="subgenre_of", tail=parent_id))
            walk(parent_id, path + (genre_id,))

    for genre_id in attached:
        walk(genre_id, ())
    return list(nodes.values()), edges, warnings


@dataclass
class BuildReport:
    coverage: CoverageStats
    unmatched_mentions: list[tuple[str, int | None]] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


def _flatten_genres(raw_genres: Sequence[dict], records: dict[str, tuple[str, list[str]]]) -> list[str]:
    """Register nested genre records; returns the directly-attached genre ids."""
    attached = []
    queue = [(g, True) for g in raw_genres]
    while queue:
        g, is_direct = queue.pop(0)
        gid = f"genre:{g['id']}"
        parents = g.get("parents", [])
        parent_ids = [f"genre:{p['id']}" for p in parents]
        if gid not in records:
            records[gid] = (g.get("name", g["id"]), list(parent_ids))
        else:
            # merge parent lists across movies, keeping first-seen order
            _, existing = records[gid]
            for pid in parent_ids:
                if pid not in existing:
                    existing.append(pid)
        if is_direct:
            attached.append(gid)
        queue.extend((p, False) for p in parents)
    return attached


def build_graph(
    dump_records: Iterable[dict],
    mentioned_movies: Sequence[tuple[str, int]],
) -> tuple[KnowledgeGraph, BuildReport]:
    """Match an offline movie dump against the corpus mention list.

    Matching uses (normalized name, year) with a +-1 year tolerance. Matched
    movies and their properties become nodes; cast is truncated to the first
    ``MAX_CAST`` entries in dump order; the genre hierarchy is walked
    recursively. Unmatched mentions are reported, not fatal.
    """
    mention_keys: dict[str, list[tuple[int, tuple[str, int]]]] = {}
    for name, year in mentioned_movies:
        mention_keys.setdefault(normalize_name(name), []).append((year, (name, year)))

    nodes: dict[str, EntityNode] = {}
    edges: list[RelationEdge] = []
    edge_seen: set[tuple[str, str, str]] = set()
    genre_records: dict[str, tuple[str, list[str]]] = {}
    attached_genres: list[str] = []
    covered: set[tuple[str, int]] = set()
    warnings: list[str] = []

    def add_edge(head: str, relation: str, tail: str) -> None:
        key = (head, relation, tail)
        if key not in edge_seen:
            edge_seen.add(key)
            edges.append(RelationEdge(head, relation, tail))

    def add_descriptive(raw: dict, node_type: str, prefix: str) -> str:
        nid = f"{prefix}:{raw['id']}"
        if nid not in nodes:
            nodes[nid] = EntityNode(id=nid, name=raw.get("name", raw["id"]), node_type=node_type)
        return nid

    for rec in dump_records:
        movie = rec.get("movie", {})
        name, year = movie.get("name"), movie.get("year")
        if name is None or year is None:
            warnings.append(f"dump record without movie name/year skipped: {rec}")
            continue
        matches = [
            m
            for y, m in mention_keys.get(normalize_name(name), [])
            if abs(int(y) - int(year)) <= YEAR_TOLERANCE
        ]
        if not matches:
            continue
        covered.update(matches)
        movie_id = str(movie.get("id") or f"movie:{slug(name)}-{year}")
        if movie_id not in nodes:
            nodes[movie_id] = EntityNode(id=movie_id, name=name, node_type="movie", release_year=int(year))
        for gid in _flatten_genres(rec.get("genres", []), genre_records):
            add_edge(movie_id, "has_genre", gid)
            attached_genres.append(gid)
        for raw in rec.get("cast", [])[:MAX_CAST]:
            add_edge(movie_id, "has_cast_member", add_descriptive(raw, "cast_member", "cast"))
        for raw in rec.get("directors", []):
            add_edge(movie_id, "directed_by", add_descriptive(raw, "director", "director"))
        for raw in rec.get("companies", []):
            add_edge(movie_id, "produced_by", add_descriptive(raw, "production_company", "company"))

    genre_nodes, genre_edges, cycle_warnings = genre_closure(genre_records, attached_genres)
    warnings.extend(cycle_warnings)
    for node in genre_nodes:
        nodes.setdefault(node.id, node)
    for edge in genre_edges:
        add_edge(edge.head, edge.relation, edge.tail)

    kg = KnowledgeGraph(nodes=nodes, edges=edges)
    kg.validate()

    distinct_mentions = {(normalize_name(n), y) for n, y in mentioned_movies}
    covered_distinct = {(normalize_name(n), y) for n, y in covered}
    unmatched = sorted(
        {(n, y) for n, y in mentioned_movies if (normalize_name(n), y) not in covered_distinct}
    )
    report = BuildReport(
        coverage=count_stats(kg, mentioned=len(distinct_mentions), covered=len(covered_distinct)),
        unmatched_mentions=list(unmatched),
        warnings=warnings,
    )
    return kg, report


def coverage_report(kg: KnowledgeGraph, conversations: Iterable) -> CoverageStats:
    """Fraction of distinct corpus-mentioned item ids that resolve to movie nodes."""
    mentioned: set[str] = set()
    for conv in conversations:
        for turn in conv.turns:
            mentioned.update(turn.item_mentions)
    items = kg.item_set
    covered = len(mentioned & items)
    return count_stats(kg, mentioned=len(mentioned), covered=covered)
