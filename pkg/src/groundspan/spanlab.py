"""Certification of a generated ensemble against an exact ground space.

The main questions are whether the accepted states sit in the ground space
(energy and overlap cuts), how many independent directions they span
(tolerance rank), and how far their span is from the exact one (principal
angles and the chordal distance).
"""
import csv
import json
from dataclasses import dataclass

import numpy as np

from ._validation import check_states

AMP_SUM = "AMP_SUM"
PROB_SUM = "PROB_SUM"
VARIANTS = (AMP_SUM, PROB_SUM)

RANK_FLOOR = 1e-14
SPAN_FLOOR = 1e-10


def _check_basis(U, atol=1e-8):
    U = np.asarray(U, dtype=complex)
    if U.ndim != 2 or U.shape[1] == 0:
        raise ValueError(f"basis must be a 2-D array with at least one column, got shape {U.shape}")
    gram = U.conj().T @ U
    if not np.allclose(gram, np.eye(U.shape[1]), rtol=0, atol=atol):
        raise ValueError("basis columns are not orthonormal")
    return U


def overlap_table(states, U):
    """|<g_j|psi_i>| for every state (row) and basis vector (column)."""
    U = _check_basis(U)
    states = check_states(states, normalized=False)
    if states.shape[1] != U.shape[0]:
        raise ValueError(f"states have dimension {states.shape[1]}, basis {U.shape[0]}")
    return np.abs(states.conj() @ U)


def overlap_score(psi, U, variant=AMP_SUM):
    """Sum of |<g_i|psi>| (AMP_SUM) or of |<g_i|psi>|^2 (PROB_SUM)."""
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")
    amps = overlap_table(psi, U)
    scores = amps.sum(axis=1) if variant == AMP_SUM else (amps**2).sum(axis=1)
    return float(scores[0]) if np.ndim(psi) == 1 else scores


@dataclass(frozen=True)
class Thresholds:
    """Relative energy cut and overlap cut; ``variant`` names the overlap score."""

    energy_rel: float
    overlap: float
    variant: str = AMP_SUM

    def __post_init__(self):
        if self.energy_rel <= 0:
            raise ValueError("energy_rel must be positive")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")


@dataclass
class EnsembleMatrix:
    """Accepted states as columns of ``C`` plus what they came from."""

    C: np.ndarray
    indices: np.ndarray
    energies: np.ndarray
    scores: np.ndarray
    acceptance_rate: float
    n_total: int
    thetas: np.ndarray = None

    @property
    def n_accepted(self):
        return self.C.shape[1]

    @property
    def empty(self):
        return self.n_accepted == 0


def accept(states, energies, e0, U, thresholds, thetas=None):
    """Keep states with |E - E0|/|E0| below the energy cut and overlap score above the overlap cut."""
    states = check_states(states, normalized=True)
    energies = np.asarray(energies, dtype=float)
    if energies.shape != (states.shape[0],):
        raise ValueError("need one energy per state")
    n = states.shape[0]
    if n == 0:
        return EnsembleMatrix(np.zeros((U.shape[0], 0), complex), np.zeros(0, int), energies, np.zeros(0), 0.0, 0)
    scores = overlap_score(states, U, thresholds.variant)
    scores = np.atleast_1d(scores)
    rel = np.abs(energies - e0) / abs(e0)
    keep = np.flatnonzero((rel < thresholds.energy_rel) & (scores > thresholds.overlap))
    return EnsembleMatrix(
        states[keep].T.copy(), keep, energies[keep], scores[keep], keep.size / n, n,
        None if thetas is None else np.asarray(thetas)[keep],
    )


def tolerance_rank(C, eps):
    """Number of normalized singular values above ``eps``, and the normalized values.

    ``C`` may also be given directly as a 1-D list of singular values.
    """
    C = np.asarray(C)
    if C.ndim == 1:
        sv = np.sort(np.abs(C.astype(float)))[::-1]
    else:
        if C.size == 0:
            raise ValueError("C is empty")
        sv = np.linalg.svd(C, compute_uv=False)
    if sv.size == 0 or sv[0] == 0:
        raise ValueError("C is all zero")
    sv = np.where(sv < RANK_FLOOR * sv[0], 0.0, sv)
    normalized = sv / sv[0]
    return int(np.count_nonzero(normalized > eps)), normalized


@dataclass
class SpanMetrics:
    angles: np.ndarray
    mean_angle: float
    max_angle: float
    chordal2: float
    complete: bool
    rank: int = None
    singular_values: np.ndarray = None
    acceptance_rate: float = None


def principal_angles(C, U, r=None):
    """Angles between the top-r left singular space of ``C`` and span(U)."""
    U = _check_basis(U)
    C = np.asarray(C, dtype=complex)
    if C.ndim != 2 or C.shape[0] != U.shape[0]:
        raise ValueError(f"C must have {U.shape[0]} rows")
    r = U.shape[1] if r is None else int(r)
    if not 0 < r <= U.shape[1]:
        raise ValueError(f"r must lie in [1, {U.shape[1]}]")
    if C.shape[1] == 0:
        raise ValueError("C has no columns")
    left, sv, _ = np.linalg.svd(C, full_matrices=False)
    complete = sv.size >= r and sv[r - 1] / sv[0] >= SPAN_FLOOR
    X = left[:, : min(r, left.shape[1])]
    Ur = U[:, :r]
    cosines = np.linalg.svd(X.conj().T @ Ur, compute_uv=False)
    cosines = np.concatenate([cosines, np.zeros(r - cosines.size)])
    angles = np.arccos(np.clip(cosines, 0.0, 1.0))
    # arccos is ill-conditioned near 0; small angles come from the residual's singular values
    sines = np.sort(np.linalg.svd(Ur - X @ (X.conj().T @ Ur), compute_uv=False))
    small = cosines > np.sqrt(0.5)
    angles[small] = np.arcsin(np.clip(sines[: r][small], 0.0, 1.0))
    chordal2 = float(np.sum(np.sin(angles) ** 2))
    return SpanMetrics(angles, float(angles.mean()), float(angles.max()), chordal2, bool(complete))


def chordal_distance_direct(C, U, r=None):
    """``r - ||X^dagger U||_F^2``, the chordal distance without going through angles."""
    U = _check_basis(U)
    r = U.shape[1] if r is None else int(r)
    left = np.linalg.svd(np.asarray(C, dtype=complex), full_matrices=False)[0][:, :r]
    return float(r - np.linalg.norm(left.conj().T @ U[:, :r]) ** 2)


def overlap_distribution(states, U):
    """M_acc x r table of |<g_j|psi_i>| for violin/box plots."""
    return overlap_table(states, U)


def orthogonal_subset(states, k, cap):
    """Greedy search for ``k`` states with pairwise |<psi_i|psi_j>| below ``cap``.

    Every state is tried as a seed; returns sorted indices, or None when no
    subset is found.
    """
    states = check_states(states, normalized=False)
    n = states.shape[0]
    k = int(k)
    if k < 1 or k > n:
        return None
    gram = np.abs(states.conj() @ states.T)
    for seed in range(n):
        chosen = [seed]
        ok = gram[seed] < cap
        ok[seed] = False
        while len(chosen) < k and ok.any():
            # prefer the candidate least overlapping with what is already chosen
            cand = np.flatnonzero(ok)
            nxt = cand[np.argmin(gram[np.ix_(cand, chosen)].max(axis=1))]
            chosen.append(int(nxt))
            ok &= gram[nxt] < cap
            ok[nxt] = False
        if len(chosen) == k:
            return sorted(chosen)
    return None


def certify(states, energies, ground, thresholds, eps, subset_cap=None, thetas=None):
    """Acceptance, rank, angles and orthogonal subset as a JSON-ready dict."""
    U = ground.basis
    r = ground.degeneracy
    ens = accept(states, energies, ground.energy, U, thresholds, thetas)
    report = {
        "n_generated": ens.n_total,
        "n_accepted": ens.n_accepted,
        "acceptance_rate": ens.acceptance_rate,
        "E0": ground.energy,
        "degeneracy": r,
        "thresholds": {"energy_rel": thresholds.energy_rel, "overlap": thresholds.overlap,
                       "overlap_variant": thresholds.variant},
        "rank_eps": eps,
        "empty": ens.empty,
    }
    if ens.empty:
        report.update(rank=0, singular_values=[], angles=None, mean_angle=None, max_angle=None,
                      chordal2=None, complete_span=False, orthogonal_subset=None)
        return report, ens
    rank, sv = tolerance_rank(ens.C, eps)
    metrics = principal_angles(ens.C, U, r)
    cap = subset_cap
    subset = orthogonal_subset(ens.C.T, r, cap) if cap is not None else None
    report.update(
        rank=rank,
        singular_values=[float(v) for v in sv[: max(2 * r, rank)]],
        angles=[float(a) for a in metrics.angles],
        mean_angle=metrics.mean_angle,
        max_angle=metrics.max_angle,
        chordal2=metrics.chordal2,
        complete_span=metrics.complete,
        orthogonal_subset_cap=cap,
        orthogonal_subset=None if subset is None else [int(ens.indices[i]) for i in subset],
    )
    return report, ens


def write_report(path, report):
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_overlaps_csv(path, table, indices=None):
    """One row per accepted state: ``index, g1, g2, ...``."""
    table = np.asarray(table)
    indices = np.arange(table.shape[0]) if indices is None else indices
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index"] + [f"g{j + 1}" for j in range(table.shape[1])])
        for i, row in zip(indices, table):
            writer.writerow([int(i)] + [repr(float(v)) for v in row])
