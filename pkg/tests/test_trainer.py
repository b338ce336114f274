"""Trainer tests: optimizer math, schedule boundaries, stage contracts, determinism."""

import math

import numpy as np
import pytest

from asym_retrieve import trainer
from asym_retrieve.config import TrainConfig
from asym_retrieve.encoder import init_encoder, params_digest
from asym_retrieve.errors import NonFiniteGradientError
from asym_retrieve.trainer import TrainTriplet


def mini_corpus(clusters=8, docs_per_cluster=8, fillers=3):
    """Tiny clustered texts: titles share cluster tokens, bodies add filler."""
    pairs, texts, cluster_of = [], [], {}
    for c in range(clusters):
        title = f"topic{c}x topic{c}y"
        for d in range(docs_per_cluster):
            body = " ".join(f"filler{c}_{d}_{j}" for j in range(fillers))
            text = f"{title} {body}"
            pairs.append((title, text))
            texts.append(text)
            cluster_of[len(texts) - 1] = c
    return pairs, texts, cluster_of


def cfg_small(**kw):
    base = dict(
        tau=0.05, mrl_dims=(8, 16), lr=2e-3, warmup_ratio=0.05,
        batch_size=16, epochs=2, seed=3,
    )
    base.update(kw)
    return TrainConfig(**base)


def encoders(cfg, vocab=128, seed=11):
    student = init_encoder("student", vocab, 8, cfg.mrl_dims[0], seed=seed)
    teacher = init_encoder("teacher", vocab, 16, cfg.mrl_dims[-1], seed=seed + 1)
    return student, teacher


class TestSchedule:
    def test_step_zero_of_warmup_is_zero(self):
        assert trainer.lr_multiplier(0, 100, 0.05) == 0.0

    def test_peak_at_end_of_warmup(self):
        assert trainer.lr_multiplier(5, 100, 0.05) == 1.0

    def test_decays_to_zero(self):
        assert trainer.lr_multiplier(100, 100, 0.05) == 0.0

    def test_no_warmup_starts_at_peak(self):
        assert trainer.lr_multiplier(0, 100, 0.0) == 1.0

    def test_monotone_decay_after_warmup(self):
        vals = [trainer.lr_multiplier(s, 50, 0.1) for s in range(5, 51)]
        assert all(a >= b for a, b in zip(vals, vals[1:]))


class TestOptimizerStep:
    def test_zero_grads_zero_decay_unchanged(self):
        cfg = cfg_small(weight_decay=0.0, warmup_ratio=0.0)
        p = init_encoder("student", 32, 4, 8, seed=0)
        before = [a.copy() for a in p.arrays()]
        state = trainer.init_optimizer(p, cfg, total_steps=10)
        grads = trainer.GradientBundle(
            embed_table=np.zeros_like(p.embed_table),
            mlp_layers=[(np.zeros_like(w), np.zeros_like(b)) for w, b in p.mlp_layers],
        )
        trainer.optimizer_step(p, grads, state, cfg)
        for a, b in zip(p.arrays(), before):
            assert np.array_equal(a, b)

    def test_warmup_step_zero_no_movement(self):
        cfg = cfg_small(warmup_ratio=0.5)
        p = init_encoder("student", 32, 4, 8, seed=0)
        before = [a.copy() for a in p.arrays()]
        state = trainer.init_optimizer(p, cfg, total_steps=10)
        grads = trainer.GradientBundle(
            embed_table=np.ones_like(p.embed_table),
            mlp_layers=[(np.ones_like(w), np.ones_like(b)) for w, b in p.mlp_layers],
        )
        trainer.optimizer_step(p, grads, state, cfg)
        for a, b in zip(p.arrays(), before):
            assert np.array_equal(a, b)

    def test_scalar_hand_computed_update(self):
        cfg = TrainConfig(lr=0.1, warmup_ratio=0.0, beta1=0.9, beta2=0.999,
                          eps=1e-8, weight_decay=0.01)
        arrays = [np.array([1.0])]
        grads = [np.array([0.5])]
        state = trainer.OptimizerState(
            m=[np.zeros(1)], v=[np.zeros(1)], step=0, total_steps=10,
            beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.01,
        )
        trainer._adamw_arrays(arrays, grads, state, cfg)

        m = 0.1 * 0.5
        v = 0.001 * 0.25
        m_hat = m / (1 - 0.9)
        v_hat = v / (1 - 0.999)
        expected = 1.0 - 0.1 * (m_hat / (math.sqrt(v_hat) + 1e-8) + 0.01 * 1.0)
        assert abs(arrays[0][0] - expected) < 1e-12

    def test_nonfinite_gradient_aborts(self):
        cfg = cfg_small()
        p = init_encoder("student", 32, 4, 8, seed=0)
        state = trainer.init_optimizer(p, cfg, total_steps=10)
        grads = trainer.GradientBundle(
            embed_table=np.full_like(p.embed_table, np.nan),
            mlp_layers=[(np.zeros_like(w), np.zeros_like(b)) for w, b in p.mlp_layers],
        )
        with pytest.raises(NonFiniteGradientError):
            trainer.optimizer_step(p, grads, state, cfg)


class TestPretrain:
    def test_zero_lr_leaves_params_unchanged(self):
        cfg = cfg_small(lr=0.0, epochs=2)
        pairs, _, _ = mini_corpus()
        student, _ = encoders(cfg)
        before = params_digest(student)
        out, report = trainer.pretrain_independent(student, pairs, cfg)
        assert params_digest(out) == before
        assert len(report.losses) > 0

    def test_loss_decreases_on_clustered_pairs(self):
        cfg = cfg_small(epochs=3)
        pairs, _, _ = mini_corpus()
        for role_seed, role in ((1, "student"), (2, "teacher")):
            student, teacher = encoders(cfg, seed=role_seed)
            params = student if role == "student" else teacher
            _, report = trainer.pretrain_independent(params, pairs, cfg)
            per_epoch = len(report.losses) // cfg.epochs
            first = float(np.mean(report.losses[:per_epoch]))
            last = float(np.mean(report.losses[-per_epoch:]))
            assert last < first, f"{role}: {last} !< {first}"

    def test_same_seed_bitwise_identical(self):
        cfg = cfg_small(epochs=2)
        pairs, _, _ = mini_corpus()
        student, _ = encoders(cfg)
        a, ra = trainer.pretrain_independent(student, pairs, cfg)
        b, rb = trainer.pretrain_independent(student, pairs, cfg)
        assert params_digest(a) == params_digest(b)
        assert ra.losses == rb.losses

    def test_stage_tag_set(self):
        cfg = cfg_small(epochs=1)
        pairs, _, _ = mini_corpus(clusters=3, docs_per_cluster=4)
        student, _ = encoders(cfg)
        out, _ = trainer.pretrain_independent(student, pairs, cfg)
        assert out.stage_tag == "pretrained"

    def test_degenerate_batch_rejected(self):
        cfg = cfg_small(epochs=1, batch_size=4)
        pairs = [("t", "same text every time")] * 8
        student, _ = encoders(cfg)
        with pytest.raises(ValueError, match="degenerate"):
            trainer.pretrain_independent(student, pairs, cfg)

    def test_learnable_tau_moves(self):
        cfg = cfg_small(epochs=2, learnable_tau=True)
        pairs, _, _ = mini_corpus()
        student, _ = encoders(cfg)
        _, report = trainer.pretrain_independent(student, pairs, cfg)
        assert report.final_tau is not None
        assert report.final_tau > 0
        assert report.final_tau != pytest.approx(cfg.tau, abs=1e-12)


def pretrained_pair(cfg, pairs):
    student, teacher = encoders(cfg)
    student, _ = trainer.pretrain_independent(student, pairs, cfg)
    teacher, _ = trainer.pretrain_independent(teacher, pairs, cfg)
    return student, teacher


class TestStage1:
    def test_zero_epochs_unchanged(self):
        cfg = cfg_small()
        pairs, texts, _ = mini_corpus()
        student, teacher = pretrained_pair(cfg, pairs)
        out, report = trainer.stage1_align(student, teacher, texts, cfg_small(epochs=0))
        assert params_digest(out) == params_digest(student)
        assert report.losses == []

    def test_alignment_raises_heldout_cosine(self):
        cfg = cfg_small(epochs=3)
        pairs, texts, _ = mini_corpus()
        student, teacher = pretrained_pair(cfg, pairs)
        aligned, report = trainer.stage1_align(student, teacher, texts, cfg)
        assert report.heldout_cosine[-1] > report.heldout_cosine[0]
        assert aligned.stage_tag == "aligned"

    def test_teacher_untouched(self):
        cfg = cfg_small(epochs=1)
        pairs, texts, _ = mini_corpus()
        student, teacher = pretrained_pair(cfg, pairs)
        before = params_digest(teacher)
        trainer.stage1_align(student, teacher, texts, cfg)
        assert params_digest(teacher) == before

    def test_requires_pretrained_teacher(self):
        cfg = cfg_small()
        _, texts, _ = mini_corpus(clusters=2, docs_per_cluster=3)
        student, teacher = encoders(cfg)
        with pytest.raises(ValueError, match="pretrained"):
            trainer.stage1_align(student, teacher, texts, cfg)


def make_triplets(texts, cluster_of, n_neg=3):
    """Queries reuse cluster titles; negatives come from other clusters."""
    triplets = []
    by_cluster = {}
    for i, t in enumerate(texts):
        by_cluster.setdefault(cluster_of[i], []).append(t)
    clusters = sorted(by_cluster)
    for c in clusters:
        query = f"topic{c}x topic{c}y question"
        positives = [by_cluster[c][0]]
        negatives = [by_cluster[(c + 1 + j) % len(clusters)][j % 2] for j in range(n_neg)]
        triplets.append(TrainTriplet(query, positives, negatives))
    return triplets


class TestStage2:
    def test_zero_lr_no_movement(self):
        cfg = cfg_small(epochs=1, batch_size=4)
        pairs, texts, cluster_of = mini_corpus()
        student, teacher = pretrained_pair(cfg, pairs)
        triplets = make_triplets(texts, cluster_of)
        s2, t2, _ = trainer.stage2_joint(student, teacher, triplets,
                                         cfg_small(lr=0.0, epochs=1, batch_size=4))
        assert params_digest(s2) == params_digest(student)
        assert params_digest(t2) == params_digest(teacher)

    def test_both_encoders_move(self):
        cfg = cfg_small(epochs=2, batch_size=4)
        pairs, texts, cluster_of = mini_corpus()
        student, teacher = pretrained_pair(cfg, pairs)
        triplets = make_triplets(texts, cluster_of)
        s2, t2, report = trainer.stage2_joint(student, teacher, triplets, cfg)
        assert params_digest(s2) != params_digest(student)
        assert params_digest(t2) != params_digest(teacher)
        assert s2.stage_tag == t2.stage_tag == "finetuned"
        assert all(np.isfinite(v) for v in report.losses)

    def test_seeded_determinism(self):
        cfg = cfg_small(epochs=1, batch_size=4)
        pairs, texts, cluster_of = mini_corpus()
        student, teacher = pretrained_pair(cfg, pairs)
        triplets = make_triplets(texts, cluster_of)
        _, _, ra = trainer.stage2_joint(student, teacher, triplets, cfg)
        _, _, rb = trainer.stage2_joint(student, teacher, triplets, cfg)
        assert ra.losses == rb.losses

    def test_empty_positive_rejected(self):
        cfg = cfg_small()
        pairs, texts, cluster_of = mini_corpus()
        student, teacher = pretrained_pair(cfg, pairs)
        bad = [TrainTriplet("q", [], ["n"])]
        with pytest.raises(ValueError, match="positives"):
            trainer.stage2_joint(student, teacher, bad, cfg)


class TestDistill:
    def test_runs_and_is_deterministic(self):
        cfg = cfg_small(epochs=2, batch_size=4)
        pairs, texts, cluster_of = mini_corpus()
        student, teacher = pretrained_pair(cfg, pairs)
        triplets = make_triplets(texts, cluster_of)
        a, ra = trainer.distill_baseline(student, teacher, triplets, cfg)
        b, rb = trainer.distill_baseline(student, teacher, triplets, cfg)
        assert params_digest(a) == params_digest(b)
        assert ra.losses == rb.losses
        assert a.stage_tag == "distilled"

    def test_teacher_untouched(self):
        cfg = cfg_small(epochs=1, batch_size=4)
        pairs, texts, cluster_of = mini_corpus()
        student, teacher = pretrained_pair(cfg, pairs)
        before = params_digest(teacher)
        trainer.distill_baseline(student, teacher, make_triplets(texts, cluster_of), cfg)
        assert params_digest(teacher) == before


class TestReportSerialization:
    def test_schema_and_round_trip(self, tmp_path):
        report = trainer.TrainReport(stage="stage1", losses=[1.0, 0.5],
                                     heldout_cosine=[0.1, 0.4], seconds=2.5)
        path = tmp_path / "report.json"
        report.save(path)
        import json

        data = json.loads(path.read_text())
        assert set(data) == {"stage", "losses", "heldout_cosine", "seconds"}
        assert data["losses"] == [1.0, 0.5]
