"""Dialogue corpus handling: parsing, triplet extraction, augmentation, splits.

A corpus file is UTF-8 JSONL, one conversation per line:

    {"conversation_id": "...",
     "turns": [{"speaker": "seeker"|"recommender", "text": "...",
                "items": [{"id": "...", "span": [start, end]}]}]}

Item mentions are explicit annotations with character spans; masking never
relies on substring search.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Sequence

from .errors import ConfigError, CorpusFormatError

PLACEHOLDER = "[MOVIE]"

SPEAKERS = ("seeker", "recommender")


@dataclass(frozen=True)
class ItemMention:
    entity_id: str
    start: int
    end: int  # exclusive


@dataclass(frozen=True)
class Utterance:
    speaker: str
    text: str
    mentions: tuple[ItemMention, ...] = ()

    @property
    def item_mentions(self) -> list[str]:
        """Mentioned entity ids in order of appearance."""
        return [m.entity_id for m in self.mentions]


@dataclass(frozen=True)
class Conversation:
    conversation_id: str
    turns: tuple[Utterance, ...]


@dataclass(frozen=True)
class TrainingTriplet:
    """One (context, gold item set, masked target) example."""

    conversation_id: str
    turn_index: int  # 1-based index of the target turn within its conversation
    context: tuple[Utterance, ...]
    gold_items: frozenset[str]
    target: str
    # Surface forms that were replaced by the placeholder, in placeholder order.
    masked_surfaces: tuple[str, ...] = ()
    is_augmented: bool = False


@dataclass
class ParseResult:
    conversations: list[Conversation]
    unresolved_mentions: list[tuple[str, int, str]] = field(default_factory=list)
    """(conversation_id, 1-based turn index, entity id) not found in the KG item set."""


def _utterance_from_record(rec: dict, line_number: int | None) -> Utterance:
    speaker = rec.get("speaker")
    if speaker not in SPEAKERS:
        raise CorpusFormatError(f"unknown speaker {speaker!r}", line_number)
    text = rec.get("text")
    if not isinstance(text, str) or not text.strip():
        raise CorpusFormatError("empty utterance", line_number)
    mentions = []
    last_end = -1
    for item in sorted(rec.get("items", ()), key=lambda it: it.get("span", [0])[0]):
        if "id" not in item or "span" not in item or len(item["span"]) != 2:
            raise CorpusFormatError("item mention needs an id and a [start, end) span", line_number)
        start, end = item["span"]
        if not (0 <= start < end <= len(text)):
            raise CorpusFormatError(f"span [{start}, {end}) out of range for utterance", line_number)
        if start < last_end:
            raise CorpusFormatError("overlapping item spans", line_number)
        last_end = end
        mentions.append(ItemMention(str(item["id"]), start, end))
    return Utterance(speaker=speaker, text=text, mentions=tuple(mentions))


def conversation_from_record(rec: dict, line_number: int | None = None) -> Conversation:
    if "conversation_id" not in rec:
        raise CorpusFormatError("missing conversation_id", line_number)
    turns = rec.get("turns")
    if not turns:
        raise CorpusFormatError("conversation has no turns", line_number)
    return Conversation(
        conversation_id=str(rec["conversation_id"]),
        turns=tuple(_utterance_from_record(t, line_number) for t in turns),
    )


def conversation_to_record(conv: Conversation) -> dict:
    return {
        "conversation_id": conv.conversation_id,
        "turns": [
            {
                "speaker": u.speaker,
                "text": u.text,
                "items": [{"id": m.entity_id, "span": [m.start, m.end]} for m in u.mentions],
            }
            for u in conv.turns
        ],
    }


def parse_corpus(stream: IO[str] | Iterable[str], item_ids: set[str] | None = None) -> ParseResult:
    """Parse a JSONL conversation stream.

    When ``item_ids`` (the KG item set) is given, mentions that do not resolve
    are collected into ``unresolved_mentions`` instead of failing.
    """
    result = ParseResult(conversations=[])
    for line_number, line in enumerate(stream, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusFormatError(f"invalid JSON: {exc.msg}", line_number) from exc
        conv = conversation_from_record(rec, line_number)
        result.conversations.append(conv)
        if item_ids is not None:
            for j, turn in enumerate(conv.turns, start=1):
                for entity_id in turn.item_mentions:
                    if entity_id not in item_ids:
                        result.unresolved_mentions.append((conv.conversation_id, j, entity_id))
    return result


def load_corpus(path: str | Path, item_ids: set[str] | None = None) -> ParseResult:
    with open(path, encoding="utf-8") as fh:
        return parse_corpus(fh, item_ids)


def save_corpus(conversations: Iterable[Conversation], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for conv in conversations:
            fh.write(json.dumps(conversation_to_record(conv), ensure_ascii=False) + "\n")


def _mask_spans(text: str, spans: Sequence[ItemMention], placeholder: str) -> str:
    masked = text
    for m in sorted(spans, key=lambda s: s.start, reverse=True):
        masked = masked[: m.start] + placeholder + masked[m.end :]
    return masked


def unmask_target(target: str, surfaces: Sequence[str], placeholder: str = PLACEHOLDER) -> str:
    """Inverse of masking: put the original surface forms back, in order."""
    parts = target.split(placeholder)
    if len(parts) - 1 != len(surfaces):
        raise ValueError(f"target has {len(parts) - 1} placeholders but {len(surfaces)} surfaces given")
    out = [parts[0]]
    for surface, part in zip(surfaces, parts[1:]):
        out.append(surface)
        out.append(part)
    return "".join(out)


def extract_triplets(conv: Conversation, placeholder: str = PLACEHOLDER) -> list[TrainingTriplet]:
    """Decompose a conversation into per-recommender-turn training triplets.

    An item mentioned in a recommender turn counts as a recommendation only at
    its first mention in the whole conversation; repeated mentions (earlier
    turns or earlier in the same turn) are dropped from the gold set and kept
    verbatim in the target text. Surviving gold mentions are replaced by the
    placeholder token.
    """
    triplets = []
    seen: set[str] = set()
    for j, turn in enumerate(conv.turns):
        if turn.speaker == "recommender" and j >= 1:
            gold: list[str] = []
            masked: list[ItemMention] = []
            for m in turn.mentions:
                if m.entity_id not in seen and m.entity_id not in gold:
                    gold.append(m.entity_id)
                    masked.append(m)
            target = _mask_spans(turn.text, masked, placeholder)
            surfaces = tuple(turn.text[m.start : m.end] for m in sorted(masked, key=lambda s: s.start))
            triplets.append(
                TrainingTriplet(
                    conversation_id=conv.conversation_id,
                    turn_index=j + 1,
                    context=conv.turns[:j],
                    gold_items=frozenset(gold),
                    target=target,
                    masked_surfaces=surfaces,
                )
            )
        seen.update(turn.item_mentions)
    return triplets


def augment_with_entities(kg) -> list[TrainingTriplet]:
    """One synthetic triplet per descriptive (non-movie) entity.

    The context is the entity's name as a single seeker utterance and the
    entity itself is the gold label; the target is empty and excluded from the
    generation loss downstream.
    """
    triplets = []
    for node in sorted(kg.nodes.values(), key=lambda n: n.id):
        if node.node_type == "movie":
            continue
        triplets.append(
            TrainingTriplet(
                conversation_id=f"aug:{node.id}",
                turn_index=1,
                context=(Utterance(speaker="seeker", text=node.name),),
                gold_items=frozenset({node.id}),
                target="",
                is_augmented=True,
            )
        )
    return triplets


def split_dataset(
    triplets: Sequence[TrainingTriplet],
    ratios: tuple[float, float, float],
    seed: int,
) -> tuple[list[TrainingTriplet], list[TrainingTriplet], list[TrainingTriplet]]:
    """Split by conversation id so one dialogue never straddles splits.

    Augmented triplets always land in the training split.
    """
    train_r, valid_r, test_r = ratios
    if abs(train_r + valid_r + test_r - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {ratios}")
    dialogue = [t for t in triplets if not t.is_augmented]
    augmented = [t for t in triplets if t.is_augmented]

    conv_ids: list[str] = []
    seen: set[str] = set()
    for t in dialogue:
        if t.conversation_id not in seen:
            seen.add(t.conversation_id)
            conv_ids.append(t.conversation_id)
    random.Random(seed).shuffle(conv_ids)

    n = len(conv_ids)
    n_train = min(n, round(train_r * n))
    n_valid = min(n - n_train, round(valid_r * n))
    train_ids = set(conv_ids[:n_train])
    valid_ids = set(conv_ids[n_train : n_train + n_valid])

    train = [t for t in dialogue if t.conversation_id in train_ids]
    valid = [t for t in dialogue if t.conversation_id in valid_ids]
    test = [t for t in dialogue if t.conversation_id not in train_ids and t.conversation_id not in valid_ids]
    train.extend(augmented)
    return train, valid, test


def triplet_to_record(t: TrainingTriplet) -> dict:
    return {
        "conversation_id": t.conversation_id,
        "turn_index": t.turn_index,
        "context": [
            {
                "speaker": u.speaker,
                "text": u.text,
                "items": [{"id": m.entity_id, "span": [m.start, m.end]} for m in u.mentions],
            }
            for u in t.context
        ],
        "gold_items": sorted(t.gold_items),
        "target": t.target,
        "masked_surfaces": list(t.masked_surfaces),
        "is_augmented": t.is_augmented,
    }


def triplet_from_record(rec: dict, line_number: int | None = None) -> TrainingTriplet:
    return TrainingTriplet(
        conversation_id=str(rec.get("conversation_id", "")),
        turn_index=int(rec.get("turn_index", 0)),
        context=tuple(_utterance_from_record(u, line_number) for u in rec.get("context", ())),
        gold_items=frozenset(str(g) for g in rec.get("gold_items", ())),
        target=rec.get("target", ""),
        masked_surfaces=tuple(rec.get("masked_surfaces", ())),
        is_augmented=bool(rec.get("is_augmented", False)),
    )


def save_triplets(triplets: Iterable[TrainingTriplet], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in triplets:
            fh.write(json.dumps(triplet_to_record(t), ensure_ascii=False) + "\n")


def load_triplets(path: str | Path) -> list[TrainingTriplet]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"invalid JSON: {exc.msg}", line_number) from exc
            out.append(triplet_from_record(rec, line_number))
    return out
