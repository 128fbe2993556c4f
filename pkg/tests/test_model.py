import logging
import math
import random

import numpy as np
import pytest
import torch

from convrec.corpus import PLACEHOLDER, Utterance
from convrec.errors import DataError
from convrec.graph_encoder import GraphEncoder
from convrec.model import (
    ModelConfig,
    Seq2SeqRecommender,
    count_parameters,
    display_name,
    encode_context,
    fill_placeholders,
    generate,
    generation_logits,
    recommend_infer,
    recommend_train,
    serialize_context,
)
from convrec.tokenizer import Tokenizer

from tests.oracles import graph_param_count, seq2seq_param_count, softmax_oracle


@pytest.fixture(scope="module")
def tok():
    texts = [
        "hello there how are you",
        "i want a scary movie tonight",
        f"you should watch {PLACEHOLDER} it is great",
        "thanks , i will check it out !",
    ]
    return Tokenizer.from_texts(texts)


@pytest.fixture(scope="module")
def desk_model(tok):
    torch.manual_seed(0)
    cfg = ModelConfig.for_profile("desk", vocab_size=len(tok))
    model = Seq2SeqRecommender(cfg)
    model.eval()
    return model


def ctx(*texts, speaker="seeker"):
    return [Utterance(speaker=speaker, text=t) for t in texts]


class TestEncodeContext:
    def test_empty_context_rejected(self, desk_model, tok):
        with pytest.raises(DataError):
            encode_context(desk_model, tok, [])

    def test_identical_contexts_identical_c(self, desk_model, tok):
        a = encode_context(desk_model, tok, ctx("hello there"))
        b = encode_context(desk_model, tok, ctx("hello there"))
        assert torch.equal(a.c, b.c)

    def test_c_is_last_position_state(self, desk_model, tok):
        rep = encode_context(desk_model, tok, ctx("hello"))
        assert torch.equal(rep.c, rep.token_states[-1])

    def test_truncation_keeps_suffix(self, tok):
        long_context = ctx(*["hello there how are you"] * 40)
        untruncated = []
        for turn in long_context:
            untruncated.append(tok.speaker_id(turn.speaker))
            untruncated.extend(tok.encode(turn.text))
        untruncated.append(tok.eos_id)
        ids = serialize_context(long_context, tok, max_len=50)
        assert len(ids) == 50
        assert ids == untruncated[-50:]

    def test_speaker_markers_present(self, tok):
        ids = serialize_context(
            [Utterance("seeker", "hello"), Utterance("recommender", "hi")], tok, 64
        )
        assert ids[0] == tok.speaker_id("seeker")
        assert tok.speaker_id("recommender") in ids
        assert ids[-1] == tok.eos_id


class TestRecommend:
    def test_equal_rows_uniform(self):
        c = torch.randn(8)
        H = torch.randn(1, 8).repeat(10, 1)
        p = recommend_train(c, H)
        assert torch.allclose(p, torch.full((10,), 0.1), atol=1e-6)

    def test_softmax_limit_concentrates(self):
        H = torch.randn(6, 4)
        c = H[3] * 200.0
        p = recommend_train(c, H)
        assert float(p[3]) > 0.99

    def test_matches_scalar_softmax_oracle(self):
        torch.manual_seed(1)
        c = torch.randn(5, dtype=torch.float64)
        H = torch.randn(8, 5, dtype=torch.float64)
        p = recommend_train(c, H).numpy()
        expected = softmax_oracle((H.numpy() @ c.numpy()))
        assert np.abs(p - expected).max() < 1e-8

    def test_single_item_probability_one(self):
        c = torch.randn(4)
        H_I = torch.randn(1, 4)
        result = recommend_infer(c, H_I, ["m0"], k=1)
        assert result.top_k == [("m0", pytest.approx(1.0))]

    def test_full_k_is_permutation_of_item_index(self):
        torch.manual_seed(2)
        items = [f"m{i}" for i in range(7)]
        result = recommend_infer(torch.randn(3), torch.randn(7, 3), items, k=7)
        assert sorted(i for i, _ in result.top_k) == sorted(items)

    def test_ordering_matches_bruteforce_sort(self):
        torch.manual_seed(3)
        items = [f"m{i}" for i in range(8)]
        c = torch.randn(4, dtype=torch.float64)
        H_I = torch.randn(8, 4, dtype=torch.float64)
        result = recommend_infer(c, H_I, items, k=8)
        dots = (H_I @ c).numpy()
        expected = [items[i] for i in sorted(range(8), key=lambda i: (-dots[i], items[i]))]
        assert [i for i, _ in result.top_k] == expected

    def test_k_beyond_items_truncates_with_warning(self, caplog):
        with caplog.at_level(logging.WARNING):
            result = recommend_infer(torch.randn(3), torch.randn(2, 3), ["a", "b"], k=50)
        assert len(result.top_k) == 2
        assert any("truncating" in r.message for r in caplog.records)

    def test_probabilities_sum_to_one(self):
        torch.manual_seed(4)
        for _ in range(20):
            p = recommend_train(torch.randn(6), torch.randn(30, 6))
            assert abs(float(p.sum()) - 1.0) < 1e-6
            assert float(p.min()) >= 0.0

    def test_score_shift_leaves_ordering(self):
        torch.manual_seed(5)
        items = [f"m{i}" for i in range(9)]
        c = torch.randn(4)
        H_I = torch.randn(9, 4)
        base = recommend_infer(c, H_I, items, k=9)
        # adding a constant to every score = appending a constant column direction
        shifted_scores = (H_I @ c) + 7.5
        order = sorted(range(9), key=lambda i: (-float(shifted_scores[i]), items[i]))
        assert [i for i, _ in base.top_k] == [items[i] for i in order]


class TestGenerationLogits:
    def test_causality_under_future_permutation(self, desk_model, tok):
        memory = desk_model.encode(torch.tensor([serialize_context(ctx("hello there"), tok, 64)]))
        base = torch.tensor([[tok.bos_id] + tok.encode("you should watch it is great")])
        logits = generation_logits(desk_model, base, memory)
        t = 3
        permuted = base.clone()
        permuted[0, t + 1 :] = permuted[0, t + 1 :].flip(0)
        logits_p = generation_logits(desk_model, permuted, memory)
        assert torch.allclose(logits[0, : t + 1], logits_p[0, : t + 1], atol=1e-6)

    def test_zeroed_parameters_give_uniform_logits(self, tok):
        cfg = ModelConfig.for_profile("desk", vocab_size=len(tok))
        model = Seq2SeqRecommender(cfg)
        with torch.no_grad():
            for p in model.parameters():
                p.zero_()
        model.eval()
        memory = model.encode(torch.tensor([serialize_context(ctx("hello"), tok, 64)]))
        logits = generation_logits(model, torch.tensor([[tok.bos_id, tok.unk_id]]), memory)
        assert torch.allclose(logits, torch.zeros_like(logits))
        # uniform logits -> per-token NLL is ln V
        nll = torch.log_softmax(logits, dim=-1)[0, 0, 5].detach()
        assert float(-nll) == pytest.approx(math.log(len(tok)), abs=1e-5)


class TestGenerate:
    def test_max_len_one_gives_single_token(self, desk_model, tok):
        out = generate(desk_model, tok, ctx("hello there"), max_len=1)
        assert len(out) == 1

    def test_greedy_deterministic(self, desk_model, tok):
        a = generate(desk_model, tok, ctx("i want a scary movie"), max_len=10)
        b = generate(desk_model, tok, ctx("i want a scary movie"), max_len=10)
        assert a == b

    def test_beam_one_equals_greedy_on_fixtures(self, desk_model, tok):
        rng = random.Random(0)
        words = "hello there how are you i want a scary movie tonight thanks".split()
        for _ in range(20):
            text = " ".join(rng.choice(words) for _ in range(rng.randint(1, 8)))
            greedy = generate(desk_model, tok, ctx(text), max_len=8, strategy="greedy")
            beam1 = generate(desk_model, tok, ctx(text), max_len=8, strategy="beam", beam_width=1)
            assert greedy == beam1


class TestFillPlaceholders:
    def test_fills_ranked_name(self):
        out = fill_placeholders(f"Have you seen {PLACEHOLDER}?", ["Gone with the Wind (1939)"])
        assert out == "Have you seen Gone with the Wind (1939)?"

    def test_no_placeholder_unchanged(self):
        assert fill_placeholders("nothing to do here", ["A"]) == "nothing to do here"

    def test_positional_mapping(self):
        out = fill_placeholders(f"first {PLACEHOLDER} then {PLACEHOLDER} end", ["A", "B"])
        assert out == "first A then B end"

    def test_shortfall_leaves_placeholder_verbatim(self, caplog):
        with caplog.at_level(logging.WARNING):
            out = fill_placeholders(f"watch {PLACEHOLDER} and {PLACEHOLDER}", ["Only One"])
        assert out == f"watch Only One and {PLACEHOLDER}"
        assert any("left verbatim" in r.message for r in caplog.records)

    def test_characters_outside_spans_untouched(self):
        text = f"a!b {PLACEHOLDER} c?d"
        out = fill_placeholders(text, ["X"])
        assert out == "a!b X c?d"

    def test_display_name(self):
        assert display_name("Gone with the Wind", 1939) == "Gone with the Wind (1939)"
        assert display_name("Elsewhere", None) == "Elsewhere"


class TestCountParameters:
    def test_toy_config_matches_closed_form(self, small_kg):
        V, d, ffn = 1000, 64, 256
        cfg = ModelConfig(vocab_size=V, d_model=d, ffn_dim=ffn, enc_layers=2, dec_layers=2,
                          max_src_len=128, max_tgt_len=64)
        model = Seq2SeqRecommender(cfg)
        graph = GraphEncoder(n_entities=len(small_kg.nodes), dim=d, n_layers=1)
        breakdown = count_parameters(model, graph)
        expected = seq2seq_param_count(V, d, ffn, 2, 2, 128, 64)
        expected_graph = graph_param_count(len(small_kg.nodes), d, n_layers=1)
        assert breakdown.recommendation_module == expected["rec_seq2seq"] + expected_graph
        assert breakdown.generation_module == expected["gen_seq2seq"]
        assert breakdown.total == expected["total_seq2seq"] + expected_graph
        assert breakdown.trainable_total == breakdown.total

    def test_percentages_sum_to_hundred(self, small_kg):
        cfg = ModelConfig(vocab_size=50, d_model=8, n_heads=2, ffn_dim=16,
                          enc_layers=1, dec_layers=1, max_src_len=32, max_tgt_len=16)
        model = Seq2SeqRecommender(cfg)
        graph = GraphEncoder(n_entities=len(small_kg.nodes), dim=8)
        b = count_parameters(model, graph)
        assert b.recommendation_pct + b.generation_pct == pytest.approx(100.0, abs=0.1)

    def test_zero_trainable_flags(self, small_kg):
        cfg = ModelConfig(vocab_size=50, d_model=8, n_heads=2, ffn_dim=16,
                          enc_layers=1, dec_layers=1, max_src_len=32, max_tgt_len=16)
        model = Seq2SeqRecommender(cfg)
        graph = GraphEncoder(n_entities=len(small_kg.nodes), dim=8)
        for p in model.parameters():
            p.requires_grad_(False)
        for p in graph.parameters():
            p.requires_grad_(False)
        b = count_parameters(model, graph)
        assert b.trainable_total == 0
        assert b.total > 0
