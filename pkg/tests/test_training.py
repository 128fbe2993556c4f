import math
import random

import numpy as np
import pytest
import torch

from convrec import corpus, synth
from convrec.bundle import build_bundle
from convrec.errors import ConfigError
from convrec.model import ModelConfig
from convrec.training import (
    EpochLog,
    TrainabilitySpec,
    TrainConfig,
    apply_trainability,
    batch_losses,
    build_tokenizer,
    evaluate_recall,
    gen_loss,
    joint_loss,
    last_layers_spec,
    load_epoch_logs,
    rec_loss,
    rec_loss_from_scores,
    save_epoch_logs,
    train,
    _prepare_example,
)

from tests.oracles import cross_entropy_oracle, softmax_oracle


@pytest.fixture(scope="module")
def demo_datasets(demo_kg):
    convs = synth.make_demo_corpus(20, 24, seed=0)
    triplets = []
    for conv in convs:
        triplets.extend(corpus.extract_triplets(conv))
    triplets.extend(corpus.augment_with_entities(demo_kg))
    return corpus.split_dataset(triplets, (0.7, 0.15, 0.15), seed=0)


class TestRecLoss:
    def test_uniform_distribution_gives_log_n(self):
        p = torch.full((100,), 0.01)
        assert float(rec_loss(p, [17])) == pytest.approx(math.log(100), abs=1e-6)

    def test_concentrated_on_gold_vanishes(self):
        p = torch.full((50,), 1e-9)
        p[3] = 1.0 - 49e-9
        assert float(rec_loss(p, [3])) < 1e-6

    def test_two_gold_items_mean_of_scalar_oracles(self):
        torch.manual_seed(0)
        scores = torch.randn(30, dtype=torch.float64)
        p = torch.softmax(scores, dim=-1)
        loss = float(rec_loss(p, [4, 21]))
        probs = softmax_oracle(scores.numpy())
        expected = (cross_entropy_oracle(probs, 4) + cross_entropy_oracle(probs, 21)) / 2
        assert abs(loss - expected) < 1e-8

    def test_batched_expansion_matches_item_mean(self):
        torch.manual_seed(1)
        scores = torch.randn(2, 12, dtype=torch.float64)
        pairs = [(0, 3), (0, 7), (1, 2)]
        loss = float(rec_loss_from_scores(scores, pairs))
        probs = [softmax_oracle(scores[i].numpy()) for i in range(2)]
        expected = np.mean(
            [cross_entropy_oracle(probs[0], 3), cross_entropy_oracle(probs[0], 7),
             cross_entropy_oracle(probs[1], 2)]
        )
        assert abs(loss - expected) < 1e-8


class TestGenLoss:
    def test_uniform_logits_give_log_v(self):
        logits = torch.zeros(1, 4, 50)
        targets = torch.tensor([[5, 6, 7, 0]])  # final position padded
        loss = gen_loss(logits, targets, torch.tensor([False]))
        assert loss.item() == pytest.approx(math.log(50), abs=1e-6)

    def test_augmented_rows_contribute_zero(self):
        logits = torch.randn(2, 3, 20)
        targets = torch.randint(1, 20, (2, 3))
        loss = gen_loss(logits, targets, torch.tensor([True, True]))
        assert loss.item() == 0.0

    def test_three_token_target_matches_scalar_oracle(self):
        torch.manual_seed(2)
        logits = torch.randn(1, 3, 10, dtype=torch.float64)
        targets = torch.tensor([[4, 1, 9]])
        loss = float(gen_loss(logits, targets, torch.tensor([False])))
        expected = 0.0
        for t in range(3):
            probs = softmax_oracle(logits[0, t].numpy())
            expected += cross_entropy_oracle(probs, int(targets[0, t]))
        assert abs(loss - expected / 3) < 1e-8


class TestJointLoss:
    def test_zero_weights_leave_rec_only(self):
        cfg = TrainConfig(alpha=0.0, beta=0.0)
        out = joint_loss(torch.tensor(1.7), torch.tensor(9.0), torch.tensor(4.0), cfg)
        assert float(out) == pytest.approx(1.7)

    def test_weighted_sum_arithmetic(self):
        cfg = TrainConfig(alpha=0.5, beta=0.1)
        out = joint_loss(torch.tensor(1.0), torch.tensor(2.0), torch.tensor(3.0), cfg)
        assert float(out) == pytest.approx(2.3)

    def test_no_node_loss_zeroes_beta_term(self):
        cfg = TrainConfig(alpha=1.0, beta=5.0, no_node_loss=True)
        out = joint_loss(torch.tensor(1.0), torch.tensor(1.0), torch.tensor(100.0), cfg)
        assert float(out) == pytest.approx(2.0)

    def test_negative_weights_rejected(self):
        with pytest.raises(ConfigError):
            TrainConfig(alpha=-1.0)


class TestDefaults:
    def test_published_hyperparameters(self):
        cfg = TrainConfig()
        assert cfg.lr == pytest.approx(3e-5)
        assert cfg.batch_size == 64
        assert cfg.epochs == 22

    def test_optimizer_is_adamw(self, demo_kg, demo_datasets):
        # train for zero epochs and check the optimizer class used internally
        captured = {}
        original = torch.optim.AdamW

        class Spy(original):
            def __init__(self, *args, **kwargs):
                captured["used"] = True
                super().__init__(*args, **kwargs)

        torch.optim.AdamW = Spy
        try:
            train(TrainConfig(epochs=0), None, demo_datasets, demo_kg)
        finally:
            torch.optim.AdamW = original
        assert captured.get("used")


class TestTrainability:
    def _bundle(self, demo_kg, enc_layers=3, dec_layers=3):
        tok = build_tokenizer([], demo_kg)
        cfg = ModelConfig(vocab_size=len(tok), d_model=16, n_heads=2, ffn_dim=32,
                          enc_layers=enc_layers, dec_layers=dec_layers,
                          max_src_len=32, max_tgt_len=16)
        return build_bundle(demo_kg, tok, cfg, seed=0)

    def test_freeze_all_leaves_graph_side_only(self, demo_kg):
        from convrec.model import count_parameters

        bundle = self._bundle(demo_kg)
        apply_trainability(bundle, TrainabilitySpec([], []))
        b = count_parameters(bundle.seq2seq, bundle.graph)
        graph_params = sum(p.numel() for p in bundle.graph.parameters())
        assert b.trainable_total == graph_params

    def test_desk_default_everything_trainable(self, demo_kg):
        from convrec.model import count_parameters

        bundle = self._bundle(demo_kg)
        apply_trainability(bundle, None)
        b = count_parameters(bundle.seq2seq, bundle.graph)
        assert b.trainable_total == b.total

    def test_out_of_range_index_rejected(self, demo_kg):
        bundle = self._bundle(demo_kg)
        with pytest.raises(ConfigError):
            apply_trainability(bundle, TrainabilitySpec([7], []))

    def test_frozen_layers_get_no_gradient(self, demo_kg, demo_datasets):
        bundle = self._bundle(demo_kg)
        spec = last_layers_spec(bundle.config)
        apply_trainability(bundle, spec)
        examples = [_prepare_example(t, bundle.tokenizer, bundle.config)
                    for t in demo_datasets[0][:4]]
        l_rec, l_gen, l_node = batch_losses(bundle, examples, TrainConfig(), random.Random(0))
        loss = joint_loss(l_rec, l_gen, l_node, TrainConfig())
        loss.backward()
        for i, layer in enumerate(bundle.seq2seq.encoder_layers):
            grads = [p.grad for p in layer.parameters()]
            if i in spec.encoder_layers:
                assert any(g is not None and g.abs().sum() > 0 for g in grads)
            else:
                assert all(g is None for g in grads)
        for i, layer in enumerate(bundle.seq2seq.decoder_layers):
            grads = [p.grad for p in layer.parameters()]
            if i in spec.decoder_layers:
                assert any(g is not None and g.abs().sum() > 0 for g in grads)
            else:
                assert all(g is None for g in grads)
        assert all(p.grad is not None for p in bundle.graph.parameters())


class TestTrainLoop:
    def test_zero_epochs_returns_init_and_empty_logs(self, demo_kg, demo_datasets):
        result = train(TrainConfig(epochs=0), None, demo_datasets, demo_kg)
        assert result.logs == []
        assert not result.diverged
        assert result.bundle is not None

    def test_seed_determinism(self, demo_kg, demo_datasets):
        cfg = TrainConfig(epochs=3, batch_size=16, lr=1e-3, seed=11)
        a = train(cfg, None, demo_datasets, demo_kg)
        b = train(cfg, None, demo_datasets, demo_kg)
        assert [e.to_dict() | {"seconds": 0} for e in a.logs] == \
               [e.to_dict() | {"seconds": 0} for e in b.logs]
        sa, ga = a.bundle.state_dicts()
        sb, gb = b.bundle.state_dicts()
        assert all(torch.equal(sa[k], sb[k]) for k in sa)
        assert all(torch.equal(ga[k], gb[k]) for k in ga)

    def test_loss_decreases_on_first_epochs(self, demo_kg, demo_datasets):
        cfg = TrainConfig(epochs=6, batch_size=16, lr=1e-3, seed=0)
        result = train(cfg, None, demo_datasets, demo_kg)
        first = result.logs[0].loss_total
        last = result.logs[-1].loss_total
        assert last < first

    def test_epoch_log_round_trip(self, tmp_path):
        logs = [EpochLog(1, 1.0, 2.0, 3.0, 6.0, 0.5, 1.2, 0.01),
                EpochLog(2, 0.9, 1.9, 2.9, 5.7, None, None, 0.01)]
        path = tmp_path / "log.jsonl"
        save_epoch_logs(logs, path)
        assert load_epoch_logs(path) == logs

    def test_divergence_aborts_with_last_good_state(self, demo_kg, demo_datasets):
        cfg = TrainConfig(epochs=8, batch_size=16, lr=1e18, grad_clip=0.0, seed=0)
        result = train(cfg, None, demo_datasets, demo_kg)
        assert result.diverged
        assert len(result.logs) < cfg.epochs
        for _, tensor in result.bundle.seq2seq.state_dict().items():
            assert torch.isfinite(tensor).all()
        for _, tensor in result.bundle.graph.state_dict().items():
            assert torch.isfinite(tensor).all()


class TestAblations:
    def test_no_data_aug_changes_only_dataset_size(self, demo_kg, demo_datasets):
        from convrec.model import count_parameters

        train_set, valid, test = demo_datasets
        n_aug = sum(t.is_augmented for t in train_set)
        assert n_aug == len(demo_kg.nodes) - len(demo_kg.item_index)

        full = train(TrainConfig(epochs=1, batch_size=16), None, demo_datasets, demo_kg)
        no_aug = train(TrainConfig(epochs=1, batch_size=16, no_data_aug=True), None,
                       demo_datasets, demo_kg)
        pf = count_parameters(full.bundle.seq2seq, full.bundle.graph)
        pn = count_parameters(no_aug.bundle.seq2seq, no_aug.bundle.graph)
        assert pf.total == pn.total

    def test_no_node_loss_same_parameters(self, demo_kg, demo_datasets):
        from convrec.model import count_parameters

        a = train(TrainConfig(epochs=0), None, demo_datasets, demo_kg)
        b = train(TrainConfig(epochs=0, no_node_loss=True), None, demo_datasets, demo_kg)
        pa = count_parameters(a.bundle.seq2seq, a.bundle.graph)
        pb = count_parameters(b.bundle.seq2seq, b.bundle.graph)
        assert pa.total == pb.total and pa.trainable_total == pb.trainable_total

    def test_no_corg_blanks_message_passing(self, demo_kg, demo_datasets):
        result = train(TrainConfig(epochs=0, no_corg=True), None, demo_datasets, demo_kg)
        bundle = result.bundle
        assert bundle.graph_index.neighborhoods == {}
        H = bundle.entity_representations().H
        expected = torch.relu(bundle.graph.embeddings @ bundle.graph.layers[0].w_self.T)
        assert torch.allclose(H, expected, atol=1e-6)

    def test_no_node_init_random_provenance(self, demo_kg, demo_datasets):
        a = train(TrainConfig(epochs=0), None, demo_datasets, demo_kg)
        b = train(TrainConfig(epochs=0, no_node_init=True), None, demo_datasets, demo_kg)
        assert a.bundle.graph.provenance == "name_encoded"
        assert b.bundle.graph.provenance == "random"

    def test_name_init_rows_match_encoder(self, demo_kg, demo_datasets):
        from convrec.bundle import name_encoder
        from convrec.graph_encoder import entity_order

        result = train(TrainConfig(epochs=0), None, demo_datasets, demo_kg)
        bundle = result.bundle
        encode_name = name_encoder(bundle.seq2seq, bundle.tokenizer)
        order = entity_order(demo_kg)
        nid = next(n for n in order if demo_kg.nodes[n].node_type == "cast_member")
        row = order.index(nid)
        expected = encode_name(demo_kg.nodes[nid].name)
        assert torch.equal(bundle.graph.embeddings[row], expected)
