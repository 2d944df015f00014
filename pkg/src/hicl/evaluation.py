"""Accuracy-matrix bookkeeping and the three continual-learning metrics.

``A(i, t)`` is the accuracy on task i's test set measured after training
task t, for i <= t. From the final matrix:

* final average accuracy    FAA = mean_i A(i, T)
* cumulative avg. accuracy  CAA = mean_t mean_{i<=t} A(i, t)
* final forgetting measure  FFM = mean_{i<T} max_{t<T} (A(i, t) - A(i, T))
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, MetricUndefinedError, ScenarioError

SCENARIOS = ("cil", "dil", "til")


class AccuracyMatrix:
    """Lower-triangular accuracy grid; row t holds accuracies after task t."""

    def __init__(self, rows: list[list[float]] | None = None):
        self.rows: list[list[float]] = []
        for row in rows or []:
            self.add_row(row)

    def add_row(self, accuracies) -> None:
        row = [float(a) for a in accuracies]
        if len(row) != len(self.rows) + 1:
            raise DimensionError(
                f"row {len(self.rows) + 1} must have {len(self.rows) + 1} "
                f"entries, got {len(row)}")
        if any(not 0.0 <= a <= 1.0 for a in row):
            raise DimensionError("accuracies must lie in [0, 1]")
        self.rows.append(row)

    @property
    def num_tasks(self) -> int:
        return len(self.rows)

    def accuracy(self, task: int, after: int) -> float:
        """A(task, after), both 1-indexed as in the reporting convention."""
        if not 1 <= task <= after <= self.num_tasks:
            raise DimensionError(f"invalid indices task={task} after={after}")
        return self.rows[after - 1][task - 1]

    def to_lists(self) -> list[list[float]]:
        return [list(r) for r in self.rows]

    def __eq__(self, other):
        return isinstance(other, AccuracyMatrix) and self.rows == other.rows


def average_accuracy(matrix: AccuracyMatrix, t: int) -> float:
    """Mean accuracy over tasks 1..t after training task t."""
    if not 1 <= t <= matrix.num_tasks:
        raise DimensionError(f"t={t} outside 1..{matrix.num_tasks}")
    return float(np.mean(matrix.rows[t - 1]))


def faa(matrix: AccuracyMatrix) -> float:
    if matrix.num_tasks < 1:
        raise MetricUndefinedError("FAA requires at least one task")
    return average_accuracy(matrix, matrix.num_tasks)


def caa(matrix: AccuracyMatrix) -> float:
    if matrix.num_tasks < 1:
        raise MetricUndefinedError("CAA requires at least one task")
    return float(np.mean([average_accuracy(matrix, t)
                          for t in range(1, matrix.num_tasks + 1)]))


def ffm(matrix: AccuracyMatrix) -> float:
    t_final = matrix.num_tasks
    if t_final < 2:
        raise MetricUndefinedError("FFM requires at least two tasks")
    drops = []
    for i in range(1, t_final):
        best = max(matrix.accuracy(i, t) for t in range(i, t_final))
        drops.append(best - matrix.accuracy(i, t_final))
    return float(np.mean(drops))


def check_scenario(scenario: str, label_sets: list[tuple[int, ...]]) -> None:
    """Validate the task label structure against the scenario."""
    if scenario not in SCENARIOS:
        raise ScenarioError(f"unknown scenario {scenario!r}")
    if scenario in ("cil", "til"):
        seen: set[int] = set()
        for idx, labels in enumerate(label_sets):
            overlap = seen & set(labels)
            if overlap:
                raise ScenarioError(
                    f"{scenario} requires disjoint label sets; task {idx} "
                    f"reuses {sorted(overlap)}")
            seen |= set(labels)
    else:
        first = set(label_sets[0])
        for idx, labels in enumerate(label_sets):
            if set(labels) != first:
                raise ScenarioError(
                    f"dil requires identical label sets; task {idx} differs")


def evaluate_scenario(state, test_sets, scenario: str) -> list[float]:
    """Accuracy on each (X, y[, task_id]) test set under a scenario.

    ``cil`` and ``dil`` use the trained two-stage prediction; ``til``
    receives the true task identity and restricts the class head to that
    task's labels.
    """
    from . import engine  # local import: engine depends on this module

    if scenario not in SCENARIOS:
        raise ScenarioError(f"unknown scenario {scenario!r}")
    accuracies = []
    for entry in test_sets:
        X, y = entry[0], np.asarray(entry[1])
        if scenario == "til":
            if len(entry) < 3:
                raise ScenarioError("til evaluation needs the task identity")
            pred = engine.predict_til(state, X, int(entry[2]))
        elif scenario == "dil":
            pred = engine.predict_dil(state, X)
        else:
            pred = engine.predict(state, X).labels
        accuracies.append(float(np.mean(pred == y)))
    return accuracies
