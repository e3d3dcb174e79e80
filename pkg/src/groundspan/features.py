"""Local Pauli feature vectors and the cosine-similarity diversity loss.

A feature vector lists expectations of one-body or two-body Pauli strings.
Two states with the same local features look alike to the diversity loss, so
pushing the batch-mean cosine similarity down spreads an ensemble over a
degenerate ground space.
"""
import csv
import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ._rng import substream
from ._validation import check_n_qubits, check_states
from .qsim import AXES, PauliTable, ShotEstimator, ShotPlan, StateVector, plan_for_strings

ONE_BODY = "ONE_BODY"
TWO_BODY_NN = "TWO_BODY_NN"
TWO_BODY_EDGE = "TWO_BODY_EDGE"
KINDS = (ONE_BODY, TWO_BODY_NN, TWO_BODY_EDGE)

EPS_NORM = 1e-12


class DegenerateFeatureWarning(RuntimeWarning):
    """A feature vector with norm below EPS_NORM took part in a similarity."""


def _pair_strings(i, j):
    return [((i, a), (j, b)) for a in AXES for b in AXES]


@dataclass(frozen=True)
class FeatureSpec:
    kind: str
    n_qubits: int

    def __post_init__(self):
        kind = str(self.kind).upper()
        if kind not in KINDS:
            raise ValueError(f"feature kind must be one of {KINDS}, got {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        minimum = 1 if kind == ONE_BODY else 3
        check_n_qubits(self.n_qubits, minimum, "n_qubits")

    @property
    def pairs(self):
        n = self.n_qubits
        if self.kind == TWO_BODY_NN:
            return [(i, (i + 1) % n) for i in range(n)]
        if self.kind == TWO_BODY_EDGE:
            return [(0, 1), (n - 2, n - 1), (n - 1, 0)]
        return []

    @cached_property
    def strings(self):
        """Operator tuples ``((site, axis), ...)`` in feature order."""
        if self.kind == ONE_BODY:
            return tuple(((i, a),) for i in range(self.n_qubits) for a in AXES)
        out = []
        for i, j in self.pairs:
            for ops in _pair_strings(i, j):
                out.append(tuple(sorted(ops)))
        return tuple(out)

    @property
    def labels(self):
        return ["".join(f"{a}{s}" for s, a in ops) for ops in self.strings]

    @cached_property
    def table(self):
        return PauliTable(self.strings, self.n_qubits)

    def __len__(self):
        return len(self.strings)


def compute_features(state, spec, mode="exact", plan=None, seed=None):
    """Feature vector of one state, exact or shot-estimated.

    For ``mode="shots"`` pass ``plan`` as a ShotPlan covering the feature
    strings, or as an integer shot count per setting.
    """
    psi = state.amplitudes if isinstance(state, StateVector) else state
    psi = check_states(psi, normalized=False)
    if psi.shape[0] != 1:
        raise ValueError("compute_features takes a single state; use compute_features_batch")
    return compute_features_batch(psi, spec, mode, plan, seed)[0]


def compute_features_batch(psi, spec, mode="exact", plan=None, seed=None):
    """Feature matrix of shape (batch, len(spec))."""
    psi = check_states(psi, normalized=False)
    n = psi.shape[1].bit_length() - 1
    if n != spec.n_qubits:
        raise ValueError(f"feature spec covers {spec.n_qubits} qubits, states have {n}")
    if mode == "exact":
        return spec.table.expectations(psi)
    if mode != "shots":
        raise ValueError(f"mode must be 'exact' or 'shots', got {mode!r}")
    if plan is None:
        raise ValueError("shot mode needs a plan or a shot count")
    if not isinstance(plan, ShotPlan):
        plan = plan_for_strings(spec.strings, n, int(plan))
    estimator = ShotEstimator(spec.strings, n, plan)
    return estimator.estimate(psi, plan.shots_per_setting, substream(seed, "features"))


def _norms(vectors, flag=True):
    norms = np.linalg.norm(vectors, axis=-1)
    small = norms < EPS_NORM
    if flag and np.any(small):
        warnings.warn(
            f"{int(small.sum())} feature vector(s) have norm below {EPS_NORM}; "
            "their similarities are set to 0",
            DegenerateFeatureWarning,
            stacklevel=3,
        )
    return norms, small


def cosine_similarity(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim != 1 or a.shape != b.shape:
        raise ValueError(f"feature vectors must be 1-D of equal length, got {a.shape} and {b.shape}")
    (na, nb), small = _norms(np.stack([a, b]))
    if small.any():
        return 0.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def similarity_matrix(vectors):
    """Symmetric cosine-similarity matrix with unit diagonal."""
    vectors = np.asarray(vectors, dtype=float)
    if vectors.ndim != 2 or vectors.shape[0] < 1:
        raise ValueError("need a 2-D array holding at least one feature vector")
    norms, small = _norms(vectors)
    unit = np.where(small[:, None], 0.0, vectors / np.where(small, 1.0, norms)[:, None])
    sim = np.clip(unit @ unit.T, -1.0, 1.0)
    sim = (sim + sim.T) / 2
    np.fill_diagonal(sim, 1.0)
    return sim


def diversity_loss_and_grad(vectors):
    """Batch-mean pairwise cosine similarity and its gradient w.r.t. every vector.

    Returns (loss, dloss/dvectors of shape (M, T), number of zero-norm vectors).
    Zero-norm vectors contribute similarity 0 and receive no gradient.
    """
    vectors = np.asarray(vectors, dtype=float)
    if vectors.ndim != 2 or vectors.shape[0] < 2:
        raise ValueError("the diversity loss needs at least two feature vectors")
    m = vectors.shape[0]
    norms, small = _norms(vectors)
    safe = np.where(small, 1.0, norms)
    unit = np.where(small[:, None], 0.0, vectors / safe[:, None])
    sim = unit @ unit.T
    np.fill_diagonal(sim, 0.0)
    scale = 2.0 / (m * (m - 1))
    loss = float(np.clip(scale * np.triu(sim, 1).sum(), -1.0, 1.0))
    # d cos_ij / d l_i = (u_j - cos_ij u_i) / |l_i|
    grad = (unit.sum(axis=0)[None, :] - unit - sim.sum(axis=1)[:, None] * unit) / safe[:, None]
    grad[small] = 0.0
    return loss, scale * grad, int(small.sum())


def batch_diversity_loss(vectors):
    return diversity_loss_and_grad(vectors)[0]


def write_similarity_csv(path, matrix, labels=None):
    """Row-major CSV with a header row of column labels and a leading label column."""
    matrix = np.asarray(matrix)
    labels = labels or [f"s{i}" for i in range(matrix.shape[0])]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["state"] + list(labels))
        for label, row in zip(labels, matrix):
            writer.writerow([label] + [repr(float(v)) for v in row])
