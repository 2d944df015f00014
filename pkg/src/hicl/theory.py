"""Numerical verification of the loss-decomposition structure.

The prediction objective factorizes into three cross-entropies: within-task
prediction (WTP), task-identity inference (TII), and all-class prediction
(TAP). This module evaluates those components on explicit probability
tables, checks the exact factorization identity, and verifies the
sufficiency / necessity bounds that relate the component losses to the
joint loss under the class-, domain-, and task-incremental settings.

Zero ground-truth probabilities produce infinite entropies; these are
propagated as flags in the report rather than raised, since randomly
generated tables can legitimately come arbitrarily close to zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DimensionError

TOL = 1e-9


@dataclass
class ProbTable:
    """Per-sample categorical distributions plus ground truth.

    ``task_probs``      (n, t)   P(x in task i)
    ``wtp_probs``       list of t arrays (n, m_i): P(class j | task i)
    ``class_probs``     (n, M)   P(x in class c) over all M observed classes
    ``truth_task``      (n,)     ground-truth task index
    ``truth_within``    (n,)     ground-truth within-task class index
    ``gamma``           (n, t)   optional domain-membership simplex (DIL)

    Global class columns are ordered task-major: task 0's classes first.
    """

    task_probs: np.ndarray
    wtp_probs: list[np.ndarray]
    class_probs: np.ndarray
    truth_task: np.ndarray
    truth_within: np.ndarray
    gamma: np.ndarray | None = None
    class_offsets: np.ndarray = field(init=False)

    def __post_init__(self):
        self.task_probs = np.asarray(self.task_probs, dtype=np.float64)
        self.class_probs = np.asarray(self.class_probs, dtype=np.float64)
        self.wtp_probs = [np.asarray(w, dtype=np.float64) for w in self.wtp_probs]
        self.truth_task = np.asarray(self.truth_task, dtype=np.int64)
        self.truth_within = np.asarray(self.truth_within, dtype=np.int64)
        n, t = self.task_probs.shape
        if len(self.wtp_probs) != t:
            raise DimensionError("need one within-task table per task")
        sizes = [w.shape[1] for w in self.wtp_probs]
        if self.class_probs.shape != (n, int(np.sum(sizes))):
            raise DimensionError("class table width must equal total classes")
        for name, arr in (("task_probs", self.task_probs),
                          ("class_probs", self.class_probs),
                          *((f"wtp_probs[{i}]", w)
                            for i, w in enumerate(self.wtp_probs))):
            if arr.min() < 0:
                raise DataError(f"{name} has negative entries")
            if np.abs(arr.sum(axis=1) - 1.0).max() > TOL:
                raise DataError(f"{name} rows must sum to 1")
        if self.gamma is not None:
            self.gamma = np.asarray(self.gamma, dtype=np.float64)
            if self.gamma.shape != (n, t):
                raise DimensionError("gamma must be (n_samples, n_tasks)")
            if self.gamma.min() < 0 or np.abs(self.gamma.sum(axis=1) - 1.0).max() > TOL:
                raise DataError("gamma rows must be probability simplexes")
        self.class_offsets = np.concatenate([[0], np.cumsum(sizes)])

    @property
    def n_samples(self) -> int:
        return self.task_probs.shape[0]

    @property
    def n_tasks(self) -> int:
        return self.task_probs.shape[1]

    def truth_global(self) -> np.ndarray:
        return self.class_offsets[self.truth_task] + self.truth_within


@dataclass
class BoundReport:
    """Component losses, the joint loss, and the bound they imply."""

    wtp_ce: float          # mean within-task cross-entropy
    tii_ce: float          # mean task-identity cross-entropy
    tap_ce: float          # mean all-class cross-entropy
    joint_ce: float        # mean cross-entropy of the factorized joint
    loss_error: float      # max(joint_ce, tap_ce)
    bound: float
    holds: bool
    slack: float
    has_infinite: bool = False

    def summary(self) -> str:
        status = "holds" if self.holds else "VIOLATED"
        return (f"wtp={self.wtp_ce:.6f} tii={self.tii_ce:.6f} "
                f"tap={self.tap_ce:.6f} joint={self.joint_ce:.6f} "
                f"loss={self.loss_error:.6f} bound={self.bound:.6f} "
                f"slack={self.slack:.6f} [{status}]")


def _neglog(p: np.ndarray) -> np.ndarray:
    out = np.full(p.shape, np.inf)
    mask = p > 0
    out[mask] = -np.log(p[mask])
    return out


def component_entropies(table: ProbTable
                        ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-sample (H_wtp, H_tii, H_tap) at the ground truth."""
    idx = np.arange(table.n_samples)
    wtp_truth = np.array([table.wtp_probs[t][i, j] for i, t, j in
                          zip(idx, table.truth_task, table.truth_within)])
    h_wtp = _neglog(wtp_truth)
    h_tii = _neglog(table.task_probs[idx, table.truth_task])
    h_tap = _neglog(table.class_probs[idx, table.truth_global()])
    return h_wtp, h_tii, h_tap


def check_cil_identity(table: ProbTable) -> float:
    """Max deviation of -log(joint) from H_wtp + H_tii (exact algebra)."""
    h_wtp, h_tii, _ = component_entropies(table)
    idx = np.arange(table.n_samples)
    joint = np.array([table.wtp_probs[t][i, j] for i, t, j in
                      zip(idx, table.truth_task, table.truth_within)])
    joint = joint * table.task_probs[idx, table.truth_task]
    h_joint = _neglog(joint)
    both = h_wtp + h_tii
    finite = np.isfinite(h_joint) & np.isfinite(both)
    if not finite.any():
        return 0.0
    return float(np.abs(h_joint[finite] - both[finite]).max())


def check_theorem_cil(table: ProbTable) -> BoundReport:
    """Sufficiency bound for class-incremental prediction.

    With component expectations (delta, epsilon, eta), the loss error
    max(joint, tap) must not exceed max(delta + epsilon, eta); the
    factorized joint additionally equals delta + epsilon exactly.
    """
    h_wtp, h_tii, h_tap = component_entropies(table)
    idx = np.arange(table.n_samples)
    product = np.array([table.wtp_probs[t][i, j] for i, t, j in
                        zip(idx, table.truth_task, table.truth_within)])
    product = product * table.task_probs[idx, table.truth_task]
    h_joint = _neglog(product)
    delta = float(h_wtp.mean())
    epsilon = float(h_tii.mean())
    eta = float(h_tap.mean())
    joint = float(h_joint.mean())
    has_inf = not np.isfinite([delta, epsilon, eta, joint]).all()
    loss_error = max(joint, eta)
    bound = max(delta + epsilon, eta)
    holds = bool(has_inf or loss_error <= bound + TOL)
    if not has_inf and abs(joint - (delta + epsilon)) > TOL:
        holds = False
    slack = bound - loss_error if np.isfinite(bound - loss_error) else np.inf
    return BoundReport(delta, epsilon, eta, joint, loss_error, bound,
                       holds, slack, has_inf)


def dil_joint_probs(table: ProbTable) -> np.ndarray:
    """P(class j over any domain) = sum_i P(j | i) P(i), per sample."""
    sizes = {w.shape[1] for w in table.wtp_probs}
    if len(sizes) != 1:
        raise DataError("dil tables need identical per-task class counts")
    stacked = np.stack(table.wtp_probs, axis=1)        # (n, t, m)
    return np.einsum("ntm,nt->nm", stacked, table.task_probs)


def check_theorem_dil(table: ProbTable) -> BoundReport:
    """Sufficiency bound for domain-incremental prediction.

    The marginal joint obeys, pointwise for any simplex gamma,

        -log sum_i P(j|i) P(i) <= sum_i g_i H_wtp_i + H_tii(g) + H(g)

    and in expectation the loss error is bounded by
    max(delta + epsilon + log t, eta).
    """
    if table.gamma is None:
        raise DataError("dil check requires a gamma simplex per sample")
    g = table.gamma
    n, t = g.shape
    idx = np.arange(n)
    stacked = np.stack(table.wtp_probs, axis=1)        # (n, t, m)
    wtp_truth = stacked[idx, :, table.truth_within]    # (n, t)
    h_wtp_per_task = _neglog(wtp_truth)
    h_wtp = np.einsum("nt,nt->n", g, np.where(g > 0, h_wtp_per_task, 0.0))
    logp_task = np.where(g > 0, _neglog(table.task_probs), 0.0)
    h_tii = np.einsum("nt,nt->n", g, logp_task)
    h_gamma = -np.einsum("nt,nt->n", g, np.where(g > 0, np.log(np.where(g > 0, g, 1.0)), 0.0))
    _, _, h_tap = component_entropies(table)

    joint = dil_joint_probs(table)[idx, table.truth_within]
    h_joint = _neglog(joint)

    chain = h_wtp + h_tii + h_gamma
    finite = np.isfinite(h_joint) & np.isfinite(chain)
    pointwise_ok = bool(np.all(h_joint[finite] <= chain[finite] + TOL))

    delta = float(h_wtp.mean())
    epsilon = float(h_tii.mean())
    eta = float(h_tap.mean())
    joint_mean = float(h_joint.mean())
    has_inf = not np.isfinite([delta, epsilon, eta, joint_mean]).all()
    loss_error = max(joint_mean, eta)
    bound = max(delta + epsilon + np.log(t), eta)
    holds = bool(pointwise_ok and (has_inf or loss_error <= bound + TOL))
    slack = bound - loss_error if np.isfinite(bound - loss_error) else np.inf
    return BoundReport(delta, epsilon, eta, joint_mean, loss_error, bound,
                       holds, slack, has_inf)


@dataclass
class NecessityReport:
    applicable: bool
    holds: bool
    joint_ce: float
    max_wtp_excess: float
    max_tii_excess: float
    tap_ce: float


def check_necessity(table: ProbTable, xi: float) -> NecessityReport:
    """Necessity direction: a joint loss <= xi forces small components.

    Pointwise the within-task and task-identity entropies never exceed the
    joint entropy (a conditional probability is at least the joint), and
    the all-class expectation is itself part of the loss error, hence
    <= xi. Tables whose loss error exceeds xi are reported not applicable.
    """
    h_wtp, h_tii, h_tap = component_entropies(table)
    h_joint = h_wtp + h_tii
    eta = float(h_tap.mean())
    loss_error = max(float(h_joint.mean()), eta)
    if not np.isfinite(loss_error) or loss_error > xi:
        return NecessityReport(False, False, loss_error, np.nan, np.nan, eta)
    finite = np.isfinite(h_joint)
    wtp_excess = float((h_wtp[finite] - h_joint[finite]).max(initial=-np.inf))
    tii_excess = float((h_tii[finite] - h_joint[finite]).max(initial=-np.inf))
    holds = wtp_excess <= TOL and tii_excess <= TOL and eta <= xi + TOL
    return NecessityReport(True, bool(holds), loss_error,
                           wtp_excess, tii_excess, eta)


def check_til_reduction(table: ProbTable) -> float:
    """With the task identity given, the all-class entropy collapses to the
    within-task entropy. Returns the max pointwise deviation.

    The conditional all-class distribution is reconstructed from the
    factorized joint divided by the task probability, exercising the same
    division that defines the reduction.
    """
    idx = np.arange(table.n_samples)
    task_p = table.task_probs[idx, table.truth_task]
    joint = np.array([table.wtp_probs[t][i, j] * task_p[k]
                      for k, (i, t, j) in enumerate(
                          zip(idx, table.truth_task, table.truth_within))])
    cond = np.where(task_p > 0, joint / np.where(task_p > 0, task_p, 1.0), 0.0)
    h_tap_given = _neglog(cond)
    h_wtp, _, _ = component_entropies(table)
    finite = np.isfinite(h_tap_given) & np.isfinite(h_wtp)
    if not finite.any():
        return 0.0
    return float(np.abs(h_tap_given[finite] - h_wtp[finite]).max())


def random_prob_table(rng: np.random.Generator, n_samples: int = 4,
                      n_tasks: int | None = None,
                      classes_per_task: int | None = None,
                      dil: bool = False) -> ProbTable:
    """Draw a valid random probability table (Dirichlet rows)."""
    t = n_tasks or int(rng.integers(1, 5))
    if dil:
        m = classes_per_task or int(rng.integers(1, 5))
        sizes = [m] * t
    else:
        sizes = [classes_per_task or int(rng.integers(1, 5))
                 for _ in range(t)]

    def simplex(shape):
        raw = rng.gamma(1.0, 1.0, shape)
        return raw / raw.sum(axis=-1, keepdims=True)

    task_probs = simplex((n_samples, t))
    wtp = [simplex((n_samples, m)) for m in sizes]
    class_probs = simplex((n_samples, int(np.sum(sizes))))
    truth_task = rng.integers(0, t, n_samples)
    truth_within = np.array([rng.integers(0, sizes[i]) for i in truth_task])
    gamma = simplex((n_samples, t)) if dil else None
    return ProbTable(task_probs, wtp, class_probs, truth_task, truth_within,
                     gamma=gamma)


def table_from_model(state, X, y) -> ProbTable:
    """Build a probability table from a trained model's actual softmaxes.

    Task probabilities come from the task head on unadapted
    representations; within-task tables from the class head restricted to
    each task's label slice on that task's adapted representations; the
    all-class table from the full class head on the representation adapted
    with the predicted task.
    """
    from . import engine  # deferred: engine imports this module's reports

    return engine.build_prob_table(state, X, y)


def empirical_bounds_from_model(state, X, y) -> BoundReport:
    """Evaluate the sufficiency bound on a trained model's predictions."""
    return check_theorem_cil(table_from_model(state, X, y))
