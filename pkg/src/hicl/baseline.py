"""Naive sequential fine-tuning baseline for comparative evaluation.

One adapter and one shared class head are fine-tuned through every task in
order with plain cross-entropy: no per-task adapters, no representation
statistics, no task-identity stage, no pseudo replay. This is the classic
catastrophic-forgetting setup the engine is compared against.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data_io import Task, TaskStream
from .engine import TrainConfig, _minibatches, _seed_int
from .errors import StateError
from .evaluation import AccuracyMatrix
from .numerics import Adam
from .objectives import _linear_ce
from .peft import PeftParams, init_peft


@dataclass
class BaselineState:
    backbone: object
    adapter: PeftParams
    class_head_w: np.ndarray
    class_head_b: np.ndarray
    class_order: list[int] = field(default_factory=list)
    task_label_sets: list[tuple[int, ...]] = field(default_factory=list)


def _grow_head(state: BaselineState, labels) -> None:
    new = [c for c in labels if c not in state.class_order]
    if new:
        d = state.class_head_w.shape[1]
        state.class_head_w = np.vstack([state.class_head_w,
                                        np.zeros((len(new), d))])
        state.class_head_b = np.concatenate([state.class_head_b,
                                             np.zeros(len(new))])
        state.class_order.extend(new)


def train_baseline_task(state: BaselineState, task: Task,
                        cfg: TrainConfig) -> None:
    labels = tuple(sorted(task.label_set))
    _grow_head(state, labels)
    state.task_label_sets.append(labels)
    c2r = {c: i for i, c in enumerate(state.class_order)}
    rows = np.array([c2r[c] for c in task.train_y])
    t = len(state.task_label_sets) - 1
    opt = Adam({**state.adapter.tensors,
                "class_w": state.class_head_w,
                "class_b": state.class_head_b}, cfg.learning_rate)
    n = len(task.train_y)
    for epoch in range(cfg.epochs):
        rng = np.random.default_rng(
            np.random.SeedSequence([cfg.seed, 50, t, epoch]))
        for idx in _minibatches(n, cfg.batch_size, rng):
            reps, tape = state.backbone.forward(task.train_x[idx],
                                                state.adapter, need_tape=True)
            _, d_reps, d_w, d_b = _linear_ce(reps, rows[idx],
                                             state.class_head_w,
                                             state.class_head_b)
            grads = state.backbone.backward(tape, d_reps)
            opt.step({**grads, "class_w": d_w, "class_b": d_b})


def predict_baseline(state: BaselineState, X) -> np.ndarray:
    if not state.class_order:
        raise StateError("baseline has no trained tasks")
    reps = state.backbone.forward(X, state.adapter)
    logits = reps @ state.class_head_w.T + state.class_head_b
    order = np.array(state.class_order)
    return order[np.argmax(logits, axis=1)]


def predict_baseline_til(state: BaselineState, X, task_idx: int) -> np.ndarray:
    c2r = {c: i for i, c in enumerate(state.class_order)}
    rows = [c2r[c] for c in sorted(state.task_label_sets[task_idx])]
    reps = state.backbone.forward(X, state.adapter)
    logits = reps @ state.class_head_w[rows].T + state.class_head_b[rows]
    classes = np.array(sorted(state.task_label_sets[task_idx]))
    return classes[np.argmax(logits, axis=1)]


def train_baseline_sequence(stream: TaskStream, cfg: TrainConfig
                            ) -> tuple[BaselineState, AccuracyMatrix]:
    from .backbone import BackboneSurrogate

    backbone = BackboneSurrogate(
        cfg.backbone_config(stream.tasks[0].train_x.shape[1]),
        seed=cfg.backbone_seed)
    adapter = init_peft(cfg.peft_kind, backbone.config.num_layers,
                        backbone.config.token_dim, cfg.peft_config(),
                        seed=_seed_int(cfg.seed, 2, 0))
    d = backbone.output_dim
    state = BaselineState(backbone=backbone, adapter=adapter,
                          class_head_w=np.zeros((0, d)),
                          class_head_b=np.zeros(0))
    matrix = AccuracyMatrix()
    for i, task in enumerate(stream.tasks):
        train_baseline_task(state, task, cfg)
        row = []
        for X, y, tid in stream.test_sets(up_to=i):
            if stream.scenario == "til":
                pred = predict_baseline_til(state, X, tid)
            else:
                pred = predict_baseline(state, X)
            row.append(float(np.mean(pred == np.asarray(y))))
        matrix.add_row(row)
    return state, matrix
