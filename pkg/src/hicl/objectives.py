"""The four training losses: contrastive regularization, within-task
prediction, task-identity inference, and all-class (task-adaptive)
prediction. Every loss returns analytic gradients and is validated against
central finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import ConfigError, DataError, DimensionError
from .numerics import GradBundle, log_softmax, softmax
from .validation import as_matrix


@dataclass(frozen=True)
class CRConfig:
    """Contrastive-regularization hyperparameters."""

    temperature: float = 0.8
    weight: float = 0.1

    def __post_init__(self):
        if self.temperature <= 0:
            raise ConfigError("temperature must be > 0")
        if self.weight < 0:
            raise ConfigError("weight must be >= 0")


def _linear_ce(reps: np.ndarray, targets: np.ndarray, w: np.ndarray,
               b: np.ndarray):
    """Mean cross-entropy of ``reps @ w.T + b``; returns grads for all three."""
    n = reps.shape[0]
    logits = reps @ w.T + b
    logp = log_softmax(logits)
    loss = float(-logp[np.arange(n), targets].mean())
    dlogits = softmax(logits)
    dlogits[np.arange(n), targets] -= 1.0
    dlogits /= n
    return loss, dlogits @ w, dlogits.T @ reps, dlogits.sum(axis=0)


def cr_loss(reps, old_means, temperature: float = 0.8):
    """Contrastive regularization against stored old-class means.

    For each representation h the mean, over all old class means mu, of

        log exp(h.mu/T) / (sum_h' exp(h.h'/T) + sum_mu' exp(h.mu'/T))

    summed over the batch. h' ranges over the whole batch including h
    itself. Minimizing drives new representations together and away from
    the old class means. Returns ``(loss, dloss/dreps)``; the loss is 0
    with no old classes (first task).
    """
    if temperature <= 0:
        raise ConfigError("temperature must be > 0")
    H = as_matrix(reps, "reps")
    if not old_means:
        return 0.0, np.zeros_like(H)
    M = np.stack([np.asarray(m, dtype=np.float64).ravel() for m in old_means])
    if M.shape[1] != H.shape[1]:
        raise DimensionError(
            f"class means have dim {M.shape[1]}, representations {H.shape[1]}")
    t = temperature
    n_old = M.shape[0]
    sim_hh = (H @ H.T) / t                      # (B, B)
    sim_hm = (H @ M.T) / t                      # (B, C_old)
    # log-sum-exp over the concatenated similarity row for stability
    row = np.concatenate([sim_hh, sim_hm], axis=1)
    row_max = row.max(axis=1, keepdims=True)
    e_row = np.exp(row - row_max)
    z = e_row.sum(axis=1, keepdims=True)
    log_z = (row_max + np.log(z)).ravel()
    loss = float((sim_hm.mean(axis=1) - log_z).sum())

    frac = e_row / z                            # softmax over each row
    w_hh = -frac[:, :H.shape[0]]
    w_hm = 1.0 / n_old - frac[:, H.shape[0]:]
    dH = (w_hm @ M + w_hh @ H + w_hh.T @ H) / t
    return loss, dH


def wtp_loss(reps, local_targets, head_w, head_b, old_means,
             cfg: CRConfig = CRConfig()):
    """Within-task loss: task-local cross-entropy plus weighted CR.

    ``head_w``/``head_b`` are the current task's slice of the all-class
    head; ``local_targets`` index into that slice. Returns a
    :class:`GradBundle` with gradients for ``reps``, ``head_w`` and
    ``head_b``, plus the (ce, cr) breakdown.
    """
    H = as_matrix(reps, "reps")
    targets = np.asarray(local_targets)
    m = head_w.shape[0]
    if targets.min(initial=0) < 0 or targets.max(initial=-1) >= m:
        raise DataError(
            f"target outside the task's {m} classes: {targets.tolist()}")
    ce, d_reps, d_w, d_b = _linear_ce(H, targets, head_w, head_b)
    cr = 0.0
    if cfg.weight > 0 and old_means:
        cr, d_cr = cr_loss(H, old_means, cfg.temperature)
        d_reps = d_reps + cfg.weight * d_cr
    bundle = GradBundle(ce + cfg.weight * cr,
                        {"reps": d_reps, "head_w": d_w, "head_b": d_b})
    return bundle, (ce, cr)


def _check_balanced(batches: Mapping[tuple[int, int], np.ndarray]):
    if not batches:
        raise DataError("no pseudo batches given")
    sizes = {len(v) for v in batches.values()}
    if len(sizes) != 1:
        raise DataError(f"pseudo batches must be balanced, got sizes {sorted(sizes)}")


def tii_loss(head_w, head_b, batches: Mapping[tuple[int, int], np.ndarray]):
    """Task-identity loss over per-(task, class) pseudo batches.

    Cross-entropy of the task head toward each batch's task index,
    averaged per class and per sample so the value is ln(T) at a
    zero-initialized head regardless of the pseudo-sample count.
    """
    _check_balanced(batches)
    n_tasks = head_w.shape[0]
    keys = sorted(batches)
    for task_idx, _ in keys:
        if not 0 <= task_idx < n_tasks:
            raise DataError(f"task index {task_idx} outside the {n_tasks}-way head")
    X = np.concatenate([as_matrix(batches[k], str(k)) for k in keys])
    targets = np.concatenate(
        [np.full(len(batches[k]), k[0], dtype=np.int64) for k in keys])
    loss, _, d_w, d_b = _linear_ce(X, targets, head_w, head_b)
    return loss, {"head_w": d_w, "head_b": d_b}


def tap_loss(head_w, head_b, batches: Mapping[tuple[int, int], np.ndarray],
             class_to_row: Mapping[int, int]):
    """All-class loss over per-(task, class) pseudo batches.

    Cross-entropy over the full observed-class softmax, averaged per class
    and per sample (ln of the class count at a zero-initialized head).
    """
    _check_balanced(batches)
    keys = sorted(batches)
    for _, cls in keys:
        if cls not in class_to_row:
            raise DataError(f"class {cls} not among observed classes")
    X = np.concatenate([as_matrix(batches[k], str(k)) for k in keys])
    targets = np.concatenate(
        [np.full(len(batches[k]), class_to_row[k[1]], dtype=np.int64)
         for k in keys])
    loss, _, d_w, d_b = _linear_ce(X, targets, head_w, head_b)
    return loss, {"head_w": d_w, "head_b": d_b}
