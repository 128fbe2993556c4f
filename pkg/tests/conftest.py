import pytest

from convrec import synth
from convrec.corpus import Conversation, ItemMention, Utterance
from convrec.kg import EntityNode, KnowledgeGraph, RelationEdge, build_graph


def mention(entity_id: str, text: str, surface: str) -> ItemMention:
    start = text.index(surface)
    return ItemMention(entity_id, start, start + len(surface))


@pytest.fixture
def table1_conversations() -> list[Conversation]:
    """The two processed-dataset examples: a repetitive item and a masked one."""
    a_turn2 = "You should watch Police Academy."
    a_turn4 = "Yes Police Academy is funny."
    conv_a = Conversation(
        conversation_id="table1-a",
        turns=(
            Utterance("seeker", "Hi, I am looking for a movie like Super Troopers.",
                      (mention("super-troopers", "Hi, I am looking for a movie like Super Troopers.",
                               "Super Troopers"),)),
            Utterance("recommender", a_turn2, (mention("police-academy", a_turn2, "Police Academy"),)),
            Utterance("seeker", "Is that a great one? I have never seen it."),
            Utterance("recommender", a_turn4, (mention("police-academy", a_turn4, "Police Academy"),)),
        ),
    )
    b_turn4 = "Oh, you like scary movies? I recently watched Happy Death Day."
    b_turn3 = "When I was younger, I really enjoyed the A Nightmare on Elm Street."
    conv_b = Conversation(
        conversation_id="table1-b",
        turns=(
            Utterance("recommender", "Hello, what kind of movies do you like?"),
            Utterance("seeker", "I am looking for a movie recommendation."),
            Utterance("seeker", b_turn3, (mention("nightmare-elm-street", b_turn3,
                                                  "A Nightmare on Elm Street"),)),
            Utterance("recommender", b_turn4, (mention("happy-death-day", b_turn4, "Happy Death Day"),)),
        ),
    )
    return [conv_a, conv_b]


@pytest.fixture
def small_kg() -> KnowledgeGraph:
    """Hand-built 12-node / 15-edge graph (5 movies + 7 descriptive entities)."""
    nodes = {}
    for i in range(5):
        nid = f"m{i}"
        nodes[nid] = EntityNode(nid, f"Movie {i}", "movie", release_year=2000 + i)
    for nid, name, ntype in [
        ("g0", "thriller", "genre"),
        ("g1", "comedy", "genre"),
        ("g2", "fiction film", "genre"),
        ("c0", "Ada Lovett", "cast_member"),
        ("c1", "Ben Carver", "cast_member"),
        ("d0", "Edith Royce", "director"),
        ("p0", "Starlight Pictures", "production_company"),
    ]:
        nodes[nid] = EntityNode(nid, name, ntype)
    edges = [
        RelationEdge("m0", "has_genre", "g0"),
        RelationEdge("m1", "has_genre", "g0"),
        RelationEdge("m2", "has_genre", "g1"),
        RelationEdge("m3", "has_genre", "g1"),
        RelationEdge("m4", "has_genre", "g0"),
        RelationEdge("g0", "subgenre_of", "g2"),
        RelationEdge("m0", "has_cast_member", "c0"),
        RelationEdge("m1", "has_cast_member", "c0"),
        RelationEdge("m2", "has_cast_member", "c1"),
        RelationEdge("m3", "has_cast_member", "c1"),
        RelationEdge("m4", "has_cast_member", "c0"),
        RelationEdge("m0", "directed_by", "d0"),
        RelationEdge("m1", "directed_by", "d0"),
        RelationEdge("m0", "produced_by", "p0"),
        RelationEdge("m2", "produced_by", "p0"),
    ]
    kg = KnowledgeGraph(nodes=nodes, edges=edges)
    kg.validate()
    return kg


@pytest.fixture(scope="session")
def demo_kg():
    graph, _ = build_graph(synth.make_demo_dump(24), synth.make_demo_mentions(24))
    return graph


@pytest.fixture(scope="session")
def demo_conversations():
    return synth.make_demo_corpus(50, 24, seed=0)
