"""Contrastive and supervised objectives plus evaluation metrics.

The cross-view contrastive loss treats the two projections of the same
molecule as the positive pair and every cross-molecule, cross-view
combination in the batch as a negative. Similarity is the raw inner
product (no normalization), scaled by a temperature before the softmax.

The spatial regularizer pulls the angle-domain gating matrices of
adjacent domains toward each other: sum over layers t and domains i of
||W_theta[t][i+1] - W_theta[t][i]||_F^2.
"""

from dataclasses import dataclass

import numpy as np

from .tensorad import (
    Tensor,
    absolute,
    add,
    as_tensor,
    diag_part,
    logsumexp,
    matmul,
    mul,
    softplus,
    sub,
    transpose,
    tsum,
)
from .geommpnn import mlp2


@dataclass
class ContrastiveBatch:
    z2d: np.ndarray            # (N, D_p)
    z3d: np.ndarray            # (N, D_p)
    tau: float = 0.5


@dataclass
class TaskBatch:
    predictions: np.ndarray    # (N, task_count)
    labels: np.ndarray         # (N, task_count)
    mask: np.ndarray           # (N, task_count) bool, True = label present


def project(h, params, view, slope=0.01):
    """Two-layer projection head for one view; no output normalization."""
    return mlp2(as_tensor(h), params, f"proj{view}/head/0", slope)


def contrastive_loss(z2d, z3d, tau):
    """Batch-total two-direction InfoNCE over the similarity matrix.

    Returns the sum over molecules; divide by N for the per-molecule
    mean. Zero for a single-molecule batch.
    """
    z2d, z3d = as_tensor(z2d), as_tensor(z3d)
    if z2d.shape != z3d.shape or z2d.ndim != 2:
        raise ValueError(f"contrastive_loss: projection shapes {z2d.shape} vs {z3d.shape}")
    if not (np.isfinite(z2d.data).all() and np.isfinite(z3d.data).all()):
        raise ValueError("contrastive_loss: non-finite projections")
    sims = mul(matmul(z2d, transpose(z3d)), 1.0 / tau)
    pos = diag_part(sims)
    loss_2d_to_3d = sub(tsum(logsumexp(sims, axis=1)), tsum(pos))
    loss_3d_to_2d = sub(tsum(logsumexp(transpose(sims), axis=1)), tsum(pos))
    return add(loss_2d_to_3d, loss_3d_to_2d)


def contrastive_batch_loss(batch):
    """Total and per-molecule mean loss values for a plain-array batch."""
    total = contrastive_loss(Tensor(batch.z2d), Tensor(batch.z3d), batch.tau)
    n = batch.z2d.shape[0]
    return float(total.data), float(total.data) / n


def spatial_regularizer(params, layers, angle_domains):
    """Squared Frobenius distance between adjacent angle-domain matrices."""
    total = Tensor(0.0)
    for t in range(layers):
        for i in range(angle_domains - 1):
            delta = sub(params[f"3d/e2e/{t}/W_theta/{i + 1}"], params[f"3d/e2e/{t}/W_theta/{i}"])
            total = add(total, tsum(mul(delta, delta)))
    return total


def combined_pretrain_loss(contrastive, reg, lam):
    """Contrastive term plus lam times the spatial regularizer."""
    return add(as_tensor(contrastive), mul(as_tensor(reg), lam))


def predict(h2d, h3d, params, slope=0.01):
    """Fused prediction: output head over the sum of per-view MLPs."""
    inner = add(mlp2(as_tensor(h2d), params, "pred2d/head/0", slope),
                mlp2(as_tensor(h3d), params, "pred3d/head/0", slope))
    return mlp2(inner, params, "predout/head/0", slope)


def _masked_mean(values, mask):
    count = int(mask.sum())
    if count == 0:
        raise ValueError("no labels: every entry in the batch is masked")
    return mul(tsum(mul(values, mask.astype(np.float64))), 1.0 / count)


def classification_loss(logits, labels, mask, lam=0.0, reg=None):
    """Mean masked sigmoid cross-entropy plus the weighted regularizer."""
    logits = as_tensor(logits)
    y = np.asarray(labels, dtype=np.float64)
    ce = sub(softplus(logits), mul(logits, y))
    loss = _masked_mean(ce, np.asarray(mask))
    if reg is not None and lam != 0.0:
        loss = add(loss, mul(as_tensor(reg), lam))
    return loss


def regression_loss(predictions, labels, mask, lam=0.0, reg=None):
    """Mean masked absolute error plus the weighted regularizer."""
    predictions = as_tensor(predictions)
    y = np.asarray(labels, dtype=np.float64)
    err = absolute(sub(predictions, y))
    loss = _masked_mean(err, np.asarray(mask))
    if reg is not None and lam != 0.0:
        loss = add(loss, mul(as_tensor(reg), lam))
    return loss


def _auc_single(scores, labels):
    """Rank-based AUC with tied scores counted half."""
    order = np.argsort(scores, kind="stable")
    sorted_scores = scores[order]
    ranks = np.empty(len(scores))
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    rank_sum = ranks[labels == 1].sum()
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def roc_auc(scores, labels, mask):
    """Per-task AUC (None where a task lacks both classes) and the mean."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if scores.ndim == 1:
        scores, labels, mask = scores[:, None], labels[:, None], mask[:, None]
    per_task = []
    for t in range(scores.shape[1]):
        m = mask[:, t]
        y = labels[m, t]
        if m.sum() == 0 or y.min() == y.max():
            per_task.append(None)
            continue
        per_task.append(float(_auc_single(scores[m, t], y)))
    present = [a for a in per_task if a is not None]
    mean = float(np.mean(present)) if present else None
    return per_task, mean


def rmse(predictions, labels, mask=None):
    """Root mean squared error over the unmasked entries."""
    predictions = np.asarray(predictions, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        predictions, labels = predictions[mask], labels[mask]
    if predictions.size == 0:
        raise ValueError("rmse: empty input")
    delta = predictions - labels
    return float(np.sqrt(np.mean(delta * delta)))
