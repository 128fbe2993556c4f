"""Synthetic desk-scale fixtures: a small movie dump plus dialogue corpus.

Titles use per-movie unique word pairs so contexts are separable and a small
model can memorize the corpus; some conversations carry repeated mentions to
exercise the repetition filter end to end.
"""

from __future__ import annotations

import random

from .corpus import Conversation, ItemMention, Utterance
from .kg import slug

_ADJECTIVES = [
    "crimson", "silent", "broken", "golden", "hidden", "frozen", "electric", "velvet",
    "savage", "gentle", "hollow", "burning", "midnight", "paper", "iron", "glass",
    "lunar", "scarlet", "wandering", "forgotten", "neon", "rusty", "marble", "amber",
    "cobalt", "ivory", "obsidian", "quiet", "restless", "shattered",
]
_NOUNS = [
    "harbor", "orchard", "compass", "lantern", "meadow", "anchor", "citadel", "ember",
    "falcon", "garden", "horizon", "island", "junction", "kingdom", "labyrinth", "mirror",
    "nebula", "outpost", "palace", "quarry", "river", "summit", "temple", "umbrella",
    "valley", "willow", "zephyr", "beacon", "canyon", "driftwood",
]
_LEAF_GENRES = ["thriller", "comedy", "romance", "horror", "science fiction", "documentary"]
_GENRE_PARENT = {"science fiction": "fiction film", "documentary": "factual film"}
_CAST = ["ada lovett", "ben carver", "cora delane", "dev arnaz"]
_DIRECTORS = ["edith royce", "felix marn"]
_COMPANIES = ["starlight pictures", "northgate films"]

_SEEKER_OPENERS = [
    "hi , i am in the mood for something like {title} tonight",
    "hello ! can you suggest a movie similar to {title} ?",
    "hey there , i really enjoyed {title} and want more like it",
    "good evening , looking for a film in the vein of {title}",
]
_RECOMMENDER_LINES = [
    "you should definitely watch {title}",
    "i think you would love {title}",
    "my pick for you is {title}",
]


def movie_title(i: int) -> str:
    return f"{_ADJECTIVES[i % len(_ADJECTIVES)].title()} {_NOUNS[i % len(_NOUNS)].title()}"


def movie_year(i: int) -> int:
    return 1980 + i


def movie_node_id(i: int) -> str:
    return f"movie:{slug(movie_title(i))}-{movie_year(i)}"


def make_demo_dump(n_movies: int = 24) -> list[dict]:
    records = []
    for i in range(n_movies):
        leaf = _LEAF_GENRES[i % len(_LEAF_GENRES)]
        genre: dict = {"id": slug(leaf), "name": leaf, "parents": []}
        if leaf in _GENRE_PARENT:
            parent = _GENRE_PARENT[leaf]
            genre["parents"] = [{"id": slug(parent), "name": parent, "parents": []}]
        cast_name = _CAST[i % len(_CAST)]
        director = _DIRECTORS[i % len(_DIRECTORS)]
        company = _COMPANIES[i % len(_COMPANIES)]
        records.append(
            {
                "movie": {"name": movie_title(i), "year": movie_year(i)},
                "genres": [genre],
                "cast": [{"id": slug(cast_name), "name": cast_name}],
                "directors": [{"id": slug(director), "name": director}],
                "companies": [{"id": slug(company), "name": company}],
            }
        )
    return records


def make_demo_mentions(n_movies: int = 24) -> list[tuple[str, int]]:
    return [(movie_title(i), movie_year(i)) for i in range(n_movies)]


def _recommender_turn(template: str, movie_idx: int, extra_mention: int | None = None) -> Utterance:
    title = movie_title(movie_idx)
    prefix = ""
    mentions = []
    if extra_mention is not None:
        extra_title = movie_title(extra_mention)
        prefix = f"since you liked {extra_title} , "
        start = len("since you liked ")
        mentions.append(ItemMention(movie_node_id(extra_mention), start, start + len(extra_title)))
    text = prefix + template.format(title=title)
    start = text.index(title)
    mentions.append(ItemMention(movie_node_id(movie_idx), start, start + len(title)))
    mentions.sort(key=lambda m: m.start)
    return Utterance(speaker="recommender", text=text, mentions=tuple(mentions))


def make_demo_corpus(n_conversations: int = 50, n_movies: int = 24, seed: int = 0) -> list[Conversation]:
    rng = random.Random(seed)
    conversations = []
    for c in range(n_conversations):
        movie_idx = c % n_movies
        opener = _SEEKER_OPENERS[c % len(_SEEKER_OPENERS)].format(title=movie_title(movie_idx).lower())
        rec_line = _RECOMMENDER_LINES[c % len(_RECOMMENDER_LINES)]
        turns = [
            Utterance(speaker="seeker", text=opener),
            _recommender_turn(rec_line, movie_idx),
        ]
        if c % 5 == 4:
            other = (movie_idx + 7) % n_movies
            turns.append(
                Utterance(
                    speaker="seeker",
                    text=f"thanks ! anything else along the lines of {movie_title(other).lower()} ?",
                )
            )
            # repeats the first movie (filtered as repetitive) and recommends the second
            turns.append(_recommender_turn(rng.choice(_RECOMMENDER_LINES), other, extra_mention=movie_idx))
        else:
            turns.append(Utterance(speaker="seeker", text="thanks , i will check it out"))
        conversations.append(Conversation(conversation_id=f"conv-{c:04d}", turns=tuple(turns)))
    return conversations
