"""Optimizer, LR schedule, and the training procedures.

Three stages mirror the deployment story: both encoders are first pretrained
independently on positive text pairs (student: contrastive; teacher: nested-
dimension contrastive), then the student is aligned to the frozen teacher on
unlabeled text (self-contrastive + MSE), and finally both encoders are jointly
fine-tuned on labeled triplets. A score-distillation baseline trains the
student against frozen-teacher similarities instead.

All randomness (batch order, held-out splits) comes from the config seed, and
gradients are accumulated in a fixed order, so a run is bitwise reproducible
per kernel backend.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import losses
from .config import TrainConfig
from .encoder import (
    EncoderParams,
    GradientBundle,
    TokenBatch,
    forward_batch,
    backward_batch,
    mrl_backward,
    mrl_truncate_rows,
    tokenize,
)
from .errors import NonFiniteGradientError, ShapeMismatchError
from .fileio import write_json


@dataclass
class OptimizerState:
    """AdamW moments plus the schedule bookkeeping for one parameter set."""

    m: list
    v: list
    step: int
    total_steps: int
    beta1: float
    beta2: float
    eps: float
    weight_decay: float


@dataclass
class TrainReport:
    stage: str
    losses: list = field(default_factory=list)
    heldout_cosine: list = field(default_factory=list)
    seconds: float = 0.0
    final_tau: float = None

    def to_dict(self) -> dict:
        out = {
            "stage": self.stage,
            "losses": self.losses,
            "heldout_cosine": self.heldout_cosine,
            "seconds": self.seconds,
        }
        if self.final_tau is not None:
            out["final_tau"] = self.final_tau
        return out

    def save(self, path) -> None:
        write_json(path, self.to_dict())


def lr_multiplier(step: int, total_steps: int, warmup_ratio: float) -> float:
    """Linear warmup from 0, then linear decay to 0 at ``total_steps``."""
    if total_steps <= 0:
        return 0.0
    warmup = int(warmup_ratio * total_steps)
    if step < warmup:
        return step / warmup
    if total_steps == warmup:
        return 0.0
    return (total_steps - step) / (total_steps - warmup)


def init_optimizer(params: EncoderParams, cfg: TrainConfig, total_steps: int,
                   extra_slots: int = 0) -> OptimizerState:
    arrays = params.arrays() + [np.zeros(1)] * extra_slots
    return OptimizerState(
        m=[np.zeros_like(a) for a in arrays],
        v=[np.zeros_like(a) for a in arrays],
        step=0,
        total_steps=total_steps,
        beta1=cfg.beta1,
        beta2=cfg.beta2,
        eps=cfg.eps,
        weight_decay=cfg.weight_decay,
    )


def _adamw_arrays(arrays, grad_arrays, state: OptimizerState, cfg: TrainConfig) -> None:
    for i, g in enumerate(grad_arrays):
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(
                f"non-finite gradient in parameter array {i} at step {state.step}"
            )
    lr_t = cfg.lr * lr_multiplier(state.step, state.total_steps, cfg.warmup_ratio)
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(arrays, grad_arrays, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        update = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p -= lr_t * (update + state.weight_decay * p)


def optimizer_step(params: EncoderParams, grads: GradientBundle,
                   state: OptimizerState, cfg: TrainConfig):
    """One decoupled-weight-decay adaptive-moment update, in place."""
    _adamw_arrays(params.arrays(), grads.arrays(), state, cfg)
    return params, state


def _epoch_batches(n: int, batch_size: int, rng) -> list:
    """Seeded permutation split into batches; trailing singletons dropped
    because in-batch negatives need at least two items."""
    perm = rng.permutation(n)
    batches = [perm[i:i + batch_size] for i in range(0, n, batch_size)]
    return [b for b in batches if len(b) >= 2]


def _split_heldout(n: int, seed: int, fraction: float = 0.1):
    rng = np.random.default_rng([seed, 99])
    perm = rng.permutation(n)
    cut = max(1, int(fraction * n)) if n > 1 else 0
    return np.sort(perm[cut:]), np.sort(perm[:cut])


def _mean_pair_cosine(emb_a: np.ndarray, emb_b: np.ndarray) -> float:
    return float(np.mean(np.einsum("ij,ij->i", emb_a, emb_b)))


class _Tau:
    """Temperature, optionally trained through its log for positivity."""

    def __init__(self, cfg: TrainConfig):
        self.learnable = cfg.learnable_tau
        self.log = np.array([np.log(cfg.tau)])

    @property
    def value(self) -> float:
        return float(np.exp(self.log[0]))

    def grad_slot(self, tau_grad: float):
        return np.array([tau_grad * self.value])  # d/dlog(tau) = tau * d/dtau


def pretrain_independent(params: EncoderParams, pairs, cfg: TrainConfig):
    """Contrastive pretraining of one encoder on positive text pairs.

    The left side of a pair acts as the anchor, the right side as its
    positive, and the other right sides in the batch as negatives. Students
    train with plain InfoNCE; teachers average the InfoNCE over the nested
    truncation dims so prefixes stay usable embeddings.
    """
    if len(pairs) < 2:
        raise ValueError("need at least 2 pairs for in-batch negatives")
    t0 = time.perf_counter()
    params = params.copy()
    lefts = [tokenize(a, params.vocab_size) for a, _ in pairs]
    rights = [tokenize(b, params.vocab_size) for _, b in pairs]

    train_idx, held_idx = _split_heldout(len(pairs), cfg.seed)
    rng = np.random.default_rng([cfg.seed, 1])
    steps_per_epoch = len(_epoch_batches(len(train_idx), cfg.batch_size,
                                         np.random.default_rng(0)))
    total_steps = cfg.epochs * steps_per_epoch
    tau = _Tau(cfg)
    state = init_optimizer(params, cfg, total_steps,
                           extra_slots=1 if tau.learnable else 0)
    use_mrl = params.role == "teacher"
    mrl_dims = [m for m in cfg.mrl_dims if m <= params.out_dim] or [params.out_dim]
    report = TrainReport(stage=f"pretrain-{params.role}")

    def heldout_value() -> float:
        if len(held_idx) == 0:
            return 0.0
        ea, _ = forward_batch(params, TokenBatch.from_seqs([lefts[i] for i in held_idx]))
        eb, _ = forward_batch(params, TokenBatch.from_seqs([rights[i] for i in held_idx]))
        return _mean_pair_cosine(ea, eb)

    report.heldout_cosine.append(heldout_value())
    for _ in range(cfg.epochs):
        for batch in _epoch_batches(len(train_idx), cfg.batch_size, rng):
            idx = train_idx[batch]
            lb = TokenBatch.from_seqs([lefts[i] for i in idx])
            rb = TokenBatch.from_seqs([rights[i] for i in idx])
            if all(
                np.array_equal(rights[i], rights[idx[0]]) for i in idx
            ):
                raise ValueError("degenerate batch: all pair targets identical")
            el, lcache = forward_batch(params, lb)
            er, rcache = forward_batch(params, rb)
            b = len(idx)
            up_l = np.zeros_like(el)
            up_r = np.zeros_like(er)
            value = 0.0
            tau_grad = 0.0
            for i in range(b):
                negs = np.delete(er, i, axis=0)
                if use_mrl:
                    out = losses.mrl_loss(el[i], er[i], negs, mrl_dims, tau.value)
                else:
                    out = losses.infonce(el[i], er[i], negs, tau.value)
                value += out.value / b
                tau_grad += out.tau_grad / b
                up_l[i] += out.grads["q"] / b
                up_r[i] += out.grads["pos"] / b
                mask = np.arange(b) != i
                up_r[mask] += out.grads["negs"] / b
            gl = backward_batch(params, lb, up_l, lcache)
            gr = backward_batch(params, rb, up_r, rcache)
            grads = [a + c for a, c in zip(gl.arrays(), gr.arrays())]
            arrays = params.arrays()
            if tau.learnable:
                arrays = arrays + [tau.log]
                grads = grads + [tau.grad_slot(tau_grad)]
            _adamw_arrays(arrays, grads, state, cfg)
            report.losses.append(value)
        report.heldout_cosine.append(heldout_value())
    params.stage_tag = "pretrained"
    report.seconds = time.perf_counter() - t0
    if tau.learnable:
        report.final_tau = tau.value
    return params, report


def _require_dims(student: EncoderParams, teacher: EncoderParams, cfg: TrainConfig):
    dims = list(cfg.mrl_dims)
    if student.out_dim != dims[0]:
        raise ShapeMismatchError(
            f"student out_dim {student.out_dim} must equal the smallest "
            f"truncation dim {dims[0]}"
        )
    if teacher.out_dim != dims[-1]:
        raise ShapeMismatchError(
            f"teacher out_dim {teacher.out_dim} must equal the largest "
            f"truncation dim {dims[-1]}"
        )


def stage1_align(student: EncoderParams, teacher_frozen: EncoderParams,
                 texts, cfg: TrainConfig):
    """Self-contrastive alignment: each text is its own positive across the
    student/teacher pair. Only the student moves; the teacher embeddings are
    precomputed once and truncated to the student width.
    """
    if teacher_frozen.stage_tag == "init":
        raise ValueError("teacher must be pretrained before alignment")
    _require_dims(student, teacher_frozen, cfg)
    t0 = time.perf_counter()
    student = student.copy()
    seqs = [tokenize(t, student.vocab_size) for t in texts]
    tseqs = [tokenize(t, teacher_frozen.vocab_size) for t in texts]

    teacher_full, _ = forward_batch(teacher_frozen, TokenBatch.from_seqs(tseqs))
    teacher_emb, _ = mrl_truncate_rows(teacher_full, student.out_dim)

    train_idx, held_idx = _split_heldout(len(texts), cfg.seed)
    rng = np.random.default_rng([cfg.seed, 2])
    steps_per_epoch = len(_epoch_batches(len(train_idx), cfg.batch_size,
                                         np.random.default_rng(0)))
    total_steps = cfg.epochs * steps_per_epoch
    state = init_optimizer(student, cfg, total_steps)
    report = TrainReport(stage="stage1")

    def heldout_value() -> float:
        if len(held_idx) == 0:
            return 0.0
        es, _ = forward_batch(student, TokenBatch.from_seqs([seqs[i] for i in held_idx]))
        return _mean_pair_cosine(es, teacher_emb[held_idx])

    report.heldout_cosine.append(heldout_value())
    for _ in range(cfg.epochs):
        for batch in _epoch_batches(len(train_idx), cfg.batch_size, rng):
            idx = train_idx[batch]
            sb = TokenBatch.from_seqs([seqs[i] for i in idx])
            es, cache = forward_batch(student, sb)
            tb = teacher_emb[idx]
            b = len(idx)
            upstream = np.zeros_like(es)
            value = 0.0
            for i in range(b):
                out = losses.stage1_loss(es[i], tb[i], np.delete(tb, i, axis=0), cfg)
                value += out.value / b
                upstream[i] = out.grads["q"] / b
            grads = backward_batch(student, sb, upstream, cache)
            optimizer_step(student, grads, state, cfg)
            report.losses.append(value)
        report.heldout_cosine.append(heldout_value())
    student.stage_tag = "aligned"
    report.seconds = time.perf_counter() - t0
    return student, report


@dataclass
class TrainTriplet:
    """One supervised instance with resolved texts."""

    query: str
    positives: list
    negatives: list


def _check_triplets(triplets) -> None:
    if not triplets:
        raise ValueError("triplet set is empty")
    for t in triplets:
        if not t.positives:
            raise ValueError(f"triplet for query {t.query!r} has no positives")
        if not t.negatives:
            raise ValueError(f"triplet for query {t.query!r} has no hard negatives")


def stage2_joint(student: EncoderParams, teacher: EncoderParams,
                 triplets, cfg: TrainConfig):
    """End-to-end joint fine-tuning of both encoders on labeled triplets.

    Negatives for an item are its own mined hard negatives plus the other
    items' positives (in-batch). One shared learning rate drives both
    encoders; teacher gradients flow through the truncation boundary.
    """
    _check_triplets(triplets)
    _require_dims(student, teacher, cfg)
    t0 = time.perf_counter()
    student = student.copy()
    teacher = teacher.copy()
    q_seqs = [tokenize(t.query, student.vocab_size) for t in triplets]
    pos_seqs = [tokenize(t.positives[0], teacher.vocab_size) for t in triplets]
    neg_seqs = [
        [tokenize(n, teacher.vocab_size) for n in t.negatives] for t in triplets
    ]

    train_idx, held_idx = _split_heldout(len(triplets), cfg.seed)
    rng = np.random.default_rng([cfg.seed, 3])
    steps_per_epoch = len(_epoch_batches(len(train_idx), cfg.batch_size,
                                         np.random.default_rng(0)))
    total_steps = cfg.epochs * steps_per_epoch
    s_state = init_optimizer(student, cfg, total_steps)
    t_state = init_optimizer(teacher, cfg, total_steps)
    report = TrainReport(stage="stage2")

    def heldout_value() -> float:
        if len(held_idx) == 0:
            return 0.0
        eq, _ = forward_batch(student, TokenBatch.from_seqs([q_seqs[i] for i in held_idx]))
        full, _ = forward_batch(teacher, TokenBatch.from_seqs([pos_seqs[i] for i in held_idx]))
        ep, _ = mrl_truncate_rows(full, student.out_dim)
        return _mean_pair_cosine(eq, ep)

    report.heldout_cosine.append(heldout_value())
    for _ in range(cfg.epochs):
        for batch in _epoch_batches(len(train_idx), cfg.batch_size, rng):
            idx = train_idx[batch]
            b = len(idx)
            # doc rows: positives first (one per item), then each item's hard negatives
            doc_seqs = [pos_seqs[i] for i in idx]
            neg_start = []
            for i in idx:
                neg_start.append(len(doc_seqs))
                doc_seqs.extend(neg_seqs[i])
            qb = TokenBatch.from_seqs([q_seqs[i] for i in idx])
            db = TokenBatch.from_seqs(doc_seqs)
            eq, q_cache = forward_batch(student, qb)
            d_full, d_cache = forward_batch(teacher, db)
            d_trunc, d_norms = mrl_truncate_rows(d_full, student.out_dim)

            up_q = np.zeros_like(eq)
            up_docs = np.zeros_like(d_trunc)
            value = 0.0
            for i in range(b):
                own_negs = list(range(neg_start[i], neg_start[i] + len(neg_seqs[idx[i]])))
                in_batch = [j for j in range(b) if j != i]
                neg_rows = own_negs + in_batch
                out = losses.stage2_loss(eq[i], d_trunc[i], d_trunc[neg_rows], cfg.tau)
                value += out.value / b
                up_q[i] += out.grads["q"] / b
                up_docs[i] += out.grads["pos"] / b
                for r, g in zip(neg_rows, out.grads["negs"]):
                    up_docs[r] += g / b
            g_student = backward_batch(student, qb, up_q, q_cache)
            up_full = mrl_backward(d_trunc, d_norms, up_docs, teacher.out_dim)
            g_teacher = backward_batch(teacher, db, up_full, d_cache)
            optimizer_step(student, g_student, s_state, cfg)
            optimizer_step(teacher, g_teacher, t_state, cfg)
            report.losses.append(value)
        report.heldout_cosine.append(heldout_value())
    student.stage_tag = "finetuned"
    teacher.stage_tag = "finetuned"
    report.seconds = time.perf_counter() - t0
    return student, teacher, report


def distill_baseline(student: EncoderParams, teacher_frozen: EncoderParams,
                     triplets, cfg: TrainConfig):
    """Score-distillation baseline: the student mimics the frozen teacher's
    softened similarity distribution (KL) plus plain InfoNCE on the labels."""
    _check_triplets(triplets)
    if teacher_frozen.stage_tag == "init":
        raise ValueError("teacher must be pretrained before distillation")
    _require_dims(student, teacher_frozen, cfg)
    t0 = time.perf_counter()
    student = student.copy()
    q_seqs = [tokenize(t.query, student.vocab_size) for t in triplets]
    tq_seqs = [tokenize(t.query, teacher_frozen.vocab_size) for t in triplets]
    pos_seqs = [tokenize(t.positives[0], teacher_frozen.vocab_size) for t in triplets]
    neg_seqs = [
        [tokenize(n, teacher_frozen.vocab_size) for n in t.negatives] for t in triplets
    ]

    # frozen teacher: embed every query and document once, in the student's width
    def teacher_embed(seq_list):
        full, _ = forward_batch(teacher_frozen, TokenBatch.from_seqs(seq_list))
        emb, _ = mrl_truncate_rows(full, student.out_dim)
        return emb

    tq_emb = teacher_embed(tq_seqs)
    pos_emb = teacher_embed(pos_seqs)
    neg_emb = [teacher_embed(s) if s else None for s in neg_seqs]

    train_idx, held_idx = _split_heldout(len(triplets), cfg.seed)
    rng = np.random.default_rng([cfg.seed, 4])
    steps_per_epoch = len(_epoch_batches(len(train_idx), cfg.batch_size,
                                         np.random.default_rng(0)))
    total_steps = cfg.epochs * steps_per_epoch
    state = init_optimizer(student, cfg, total_steps)
    report = TrainReport(stage="distill")

    def heldout_value() -> float:
        if len(held_idx) == 0:
            return 0.0
        eq, _ = forward_batch(student, TokenBatch.from_seqs([q_seqs[i] for i in held_idx]))
        return _mean_pair_cosine(eq, pos_emb[held_idx])

    report.heldout_cosine.append(heldout_value())
    for _ in range(cfg.epochs):
        for batch in _epoch_batches(len(train_idx), cfg.batch_size, rng):
            idx = train_idx[batch]
            b = len(idx)
            qb = TokenBatch.from_seqs([q_seqs[i] for i in idx])
            eq, cache = forward_batch(student, qb)
            upstream = np.zeros_like(eq)
            value = 0.0
            for i in range(b):
                gi = idx[i]
                in_batch = pos_emb[np.array([idx[j] for j in range(b) if j != i])]
                negs = np.vstack([neg_emb[gi], in_batch])
                t_scores = np.concatenate(
                    ([tq_emb[gi] @ pos_emb[gi]], negs @ tq_emb[gi])
                )
                s_scores = np.concatenate(([eq[i] @ pos_emb[gi]], negs @ eq[i]))
                out = losses.kd_loss(s_scores, t_scores, eq[i], pos_emb[gi],
                                     negs, cfg.tau)
                value += out.value / b
                upstream[i] += out.grads["q"] / b
            grads = backward_batch(student, qb, upstream, cache)
            optimizer_step(student, grads, state, cfg)
            report.losses.append(value)
        report.heldout_cosine.append(heldout_value())
    student.stage_tag = "distilled"
    report.seconds = time.perf_counter() - t0
    return student, report
