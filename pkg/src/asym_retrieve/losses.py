"""Training objectives as pure value-and-gradient functions over embeddings.

Every loss returns a :class:`LossOutput` whose ``grads`` dict is keyed by
input name ("q" for the anchor/student side, "pos", "negs"). Losses that
freeze one side (Stage-I alignment) simply omit the frozen keys. Similarities
are dot products; inputs are expected unit-norm so those are cosines.

Log-sum-exp terms subtract the max logit before exponentiating.
"""

from dataclasses import dataclass, field

import numpy as np

from .config import TrainConfig
from .encoder import mrl_truncate_rows, mrl_backward
from .errors import ShapeMismatchError


@dataclass
class LossOutput:
    value: float
    grads: dict = field(default_factory=dict)
    tau_grad: float = 0.0

    def __add__(self, other: "LossOutput") -> "LossOutput":
        grads = dict(self.grads)
        for k, g in other.grads.items():
            grads[k] = grads[k] + g if k in grads else g
        return LossOutput(self.value + other.value, grads, self.tau_grad + other.tau_grad)

    def scaled(self, c: float) -> "LossOutput":
        return LossOutput(
            c * self.value, {k: c * g for k, g in self.grads.items()}, c * self.tau_grad
        )


def _as_matrix(negs, dim: int) -> np.ndarray:
    negs = np.asarray(negs, dtype=np.float64)
    if negs.size == 0:
        return negs.reshape(0, dim)
    if negs.ndim == 1:
        negs = negs[None, :]
    if negs.shape[1] != dim:
        raise ShapeMismatchError(f"negatives have dim {negs.shape[1]}, expected {dim}")
    return negs


def _check_pair(a, b):
    if a.shape != b.shape:
        raise ShapeMismatchError(f"embedding dims differ: {a.shape} vs {b.shape}")


def infonce(q, pos, negs, tau: float) -> LossOutput:
    """-log softmax of the positive similarity against the negatives.

    With no negatives the softmax has a single term, so the loss is exactly 0
    and all gradients vanish.
    """
    if tau <= 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    q = np.asarray(q, dtype=np.float64)
    pos = np.asarray(pos, dtype=np.float64)
    _check_pair(q, pos)
    negs = _as_matrix(negs, q.shape[0])
    if negs.shape[0] == 0:
        return LossOutput(0.0, {"q": np.zeros_like(q), "pos": np.zeros_like(q),
                                "negs": negs.copy()})

    sims = np.concatenate(([q @ pos], negs @ q))
    logits = sims / tau
    m = logits.max()
    exps = np.exp(logits - m)
    z = exps.sum()
    value = float(np.log(z) + m - logits[0])
    p = exps / z

    coeff = p.copy()
    coeff[0] -= 1.0
    grad_q = (coeff[0] * pos + coeff[1:] @ negs) / tau
    grad_pos = coeff[0] * q / tau
    grad_negs = np.outer(coeff[1:], q) / tau
    tau_grad = float((sims[0] - p @ sims) / (tau * tau))
    return LossOutput(value, {"q": grad_q, "pos": grad_pos, "negs": grad_negs}, tau_grad)


def asym_infonce_selfcontrast(x_student, x_teacher, batch_teacher_negs, tau: float) -> LossOutput:
    """Cross-encoder InfoNCE where the teacher embedding of the same text is
    the positive; gradients flow to the student side only (teacher frozen)."""
    out = infonce(x_student, x_teacher, batch_teacher_negs, tau)
    return LossOutput(out.value, {"q": out.grads["q"]}, out.tau_grad)


def mse_align(x_student, x_teacher) -> LossOutput:
    """Squared L2 distance between the two views; student-side gradient only."""
    a = np.asarray(x_student, dtype=np.float64)
    b = np.asarray(x_teacher, dtype=np.float64)
    _check_pair(a, b)
    diff = a - b
    return LossOutput(float(diff @ diff), {"q": 2.0 * diff})


def stage1_loss(x_student, x_teacher, batch_teacher_negs, cfg: TrainConfig) -> LossOutput:
    """Weighted alignment objective: lambda1 * contrastive + lambda2 * MSE."""
    contrast = asym_infonce_selfcontrast(x_student, x_teacher, batch_teacher_negs, cfg.tau)
    mse = mse_align(x_student, x_teacher)
    return contrast.scaled(cfg.lambda1) + mse.scaled(cfg.lambda2)


def stage2_loss(q_student, dpos_teacher, dneg_teachers, tau: float) -> LossOutput:
    """Joint fine-tuning InfoNCE over cross-encoder similarities; gradients
    reach both the query side and every document embedding."""
    return infonce(q_student, dpos_teacher, dneg_teachers, tau)


def mrl_loss(q_full, pos_full, negs_full, mrl_dims, tau: float) -> LossOutput:
    """Average InfoNCE over the nested truncation dims, differentiated through
    the truncate-and-renormalize of every input."""
    q_full = np.asarray(q_full, dtype=np.float64)
    pos_full = np.asarray(pos_full, dtype=np.float64)
    negs_full = _as_matrix(negs_full, q_full.shape[0])
    dims = list(mrl_dims)
    if not dims:
        raise ValueError("mrl_dims must be non-empty")
    full = q_full.shape[0]
    if max(dims) > full:
        raise ValueError(f"mrl dim {max(dims)} exceeds embedding dim {full}")

    stacked = np.vstack([q_full[None, :], pos_full[None, :], negs_full])
    weight = 1.0 / len(dims)
    total = LossOutput(0.0, {"q": np.zeros(full), "pos": np.zeros(full),
                             "negs": np.zeros_like(negs_full)})
    for m in dims:
        rows, norms = mrl_truncate_rows(stacked, m)
        part = infonce(rows[0], rows[1], rows[2:], tau)
        up = np.vstack([part.grads["q"][None, :], part.grads["pos"][None, :],
                        part.grads["negs"]])
        g_full = mrl_backward(rows, norms, up, full)
        total.value += weight * part.value
        total.tau_grad += weight * part.tau_grad
        total.grads["q"] += weight * g_full[0]
        total.grads["pos"] += weight * g_full[1]
        total.grads["negs"] += weight * g_full[2:]
    return total


def kd_loss(student_scores, teacher_scores, q, dpos, dnegs, tau: float) -> LossOutput:
    """Distillation objective: KL(teacher || student) over softened score
    distributions plus the plain InfoNCE term, equal weight.

    ``student_scores`` must be the similarities of q against [dpos] + dnegs
    (positive first) for the returned embedding gradients to be exact.
    """
    if tau <= 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    s = np.asarray(student_scores, dtype=np.float64)
    t = np.asarray(teacher_scores, dtype=np.float64)
    if s.shape != t.shape or s.ndim != 1:
        raise ShapeMismatchError(f"score lists differ: {s.shape} vs {t.shape}")
    if s.size < 2:
        raise ValueError("score lists need the positive plus at least one negative")
    q = np.asarray(q, dtype=np.float64)
    dpos = np.asarray(dpos, dtype=np.float64)
    dnegs = _as_matrix(dnegs, q.shape[0])
    if dnegs.shape[0] != s.size - 1:
        raise ShapeMismatchError(
            f"{dnegs.shape[0]} negatives but {s.size} scores (positive first)"
        )

    def softmax(x):
        e = np.exp(x - x.max())
        return e / e.sum()

    p_t = softmax(t / tau)
    p_s = softmax(s / tau)
    kl = float(np.sum(p_t * (np.log(p_t) - np.log(p_s))))
    dl_ds = (p_s - p_t) / tau  # KL term

    nce = p_s.copy()
    nce[0] -= 1.0
    dl_ds = dl_ds + nce / tau
    value_nce = float(np.log(np.exp((s - s.max()) / tau).sum()) + (s.max() - s[0]) / tau)

    docs = np.vstack([dpos[None, :], dnegs])
    grad_q = dl_ds @ docs
    grad_docs = np.outer(dl_ds, q)
    return LossOutput(
        kl + value_nce,
        {"q": grad_q, "pos": grad_docs[0], "negs": grad_docs[1:]},
    )


@dataclass
class GradcheckReport:
    max_rel_err: float
    n_components: int
    worst_input: str


def gradcheck(loss_fn, inputs: dict, step: float = 1e-5) -> GradcheckReport:
    """Compare a loss's analytic gradients against central finite differences.

    ``loss_fn`` takes the inputs dict and returns a LossOutput; only inputs
    named in its ``grads`` are checked (frozen sides carry no gradient).
    """
    if not 1e-7 <= step <= 1e-3:
        raise ValueError(f"step {step} outside [1e-7, 1e-3]")
    out = loss_fn(inputs)
    worst, n, worst_name = 0.0, 0, ""
    for name, grad in out.grads.items():
        arr = inputs[name]
        flat = arr.reshape(-1)
        gflat = np.asarray(grad).reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            up = loss_fn(inputs).value
            flat[i] = keep - step
            down = loss_fn(inputs).value
            flat[i] = keep
            if not (np.isfinite(up) and np.isfinite(down)):
                raise FloatingPointError(f"non-finite loss while perturbing {name}[{i}]")
            numeric = (up - down) / (2.0 * step)
            err = abs(gflat[i] - numeric) / max(1.0, abs(gflat[i]), abs(numeric))
            n += 1
            if err > worst:
                worst, worst_name = err, name
    return GradcheckReport(worst, n, worst_name)
