"""Dense statevector engine.

Qubit 0 is the most significant bit of a computational-basis index, so applying
X to qubit 0 of ``|00>`` gives ``|10>``. All batch kernels take arrays of shape
``(batch, 2**n)`` and return new arrays; nothing is mutated in place.
"""
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import _kernels
from ._rng import substream
from ._validation import check_n_qubits, check_states, n_qubits_for_dim
from .exceptions import ContractError

AXES = ("x", "y", "z")

PAULI = {
    "i": np.eye(2, dtype=complex),
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
}

_SQ2 = 1 / np.sqrt(2)
# rotate a Pauli eigenbasis onto the computational basis (+1 eigenvector -> |0>)
_MEASURE_ROTATION = {
    "x": np.array([[_SQ2, _SQ2], [_SQ2, -_SQ2]], dtype=complex),
    "y": np.array([[_SQ2, -1j * _SQ2], [_SQ2, 1j * _SQ2]], dtype=complex),
}


@dataclass(frozen=True)
class StateVector:
    amplitudes: np.ndarray
    n_qubits: int = field(init=False)

    def __post_init__(self):
        amps = np.array(self.amplitudes, dtype=complex).ravel()
        amps.flags.writeable = False
        object.__setattr__(self, "amplitudes", amps)
        object.__setattr__(self, "n_qubits", n_qubits_for_dim(amps.size))

    @classmethod
    def zero(cls, n_qubits):
        n_qubits = check_n_qubits(n_qubits)
        amps = np.zeros(1 << n_qubits, dtype=complex)
        amps[0] = 1.0
        return cls(amps)

    @classmethod
    def basis(cls, n_qubits, index):
        amps = np.zeros(1 << n_qubits, dtype=complex)
        amps[index] = 1.0
        return cls(amps)

    @property
    def norm(self):
        return float(np.linalg.norm(self.amplitudes))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.amplitudes, dtype=dtype)


def _canonical_ops(operators):
    ops = []
    for site, axis in operators:
        axis = str(axis).lower()
        if axis not in AXES:
            raise ValueError(f"Pauli axis must be one of x, y, z; got {axis!r}")
        ops.append((int(site), axis))
    ops.sort()
    sites = [s for s, _ in ops]
    if len(set(sites)) != len(sites):
        raise ValueError(f"Pauli term acts twice on the same site: {operators}")
    if sites and sites[0] < 0:
        raise ValueError(f"negative site index in {operators}")
    return tuple(ops)


@dataclass(frozen=True)
class PauliTerm:
    """``coefficient * prod(sigma_site^axis)``; an empty operator list is the identity."""

    coefficient: float
    operators: tuple = ()

    def __post_init__(self):
        coeff = complex(self.coefficient)
        if abs(coeff.imag) > 1e-12:
            raise ValueError("Pauli term coefficients must be real (Hermitian observable)")
        object.__setattr__(self, "coefficient", float(coeff.real))
        object.__setattr__(self, "operators", _canonical_ops(self.operators))

    @property
    def sites(self):
        return tuple(s for s, _ in self.operators)

    def label(self, n_qubits):
        chars = ["I"] * n_qubits
        for site, axis in self.operators:
            chars[site] = axis.upper()
        return "".join(chars)


@dataclass(frozen=True)
class PauliSum:
    terms: tuple
    n_qubits: int

    def __post_init__(self):
        n = check_n_qubits(self.n_qubits)
        terms = tuple(self.terms)
        for term in terms:
            if not isinstance(term, PauliTerm):
                raise TypeError("PauliSum terms must be PauliTerm instances")
            if term.sites and term.sites[-1] >= n:
                raise ValueError(f"term {term.operators} acts outside {n} qubits")
        object.__setattr__(self, "terms", terms)

    @classmethod
    def from_dict(cls, coeffs, n_qubits, atol=1e-12):
        """Build from ``{operators: coefficient}``; drops terms below ``atol``, sorts canonically."""
        merged = {}
        for ops, c in coeffs.items():
            key = _canonical_ops(ops)
            merged[key] = merged.get(key, 0.0) + c
        terms = []
        for ops in sorted(merged, key=lambda o: (len(o), o)):
            c = complex(merged[ops])
            if abs(c.imag) > 1e-9:
                raise ValueError(f"non-Hermitian coefficient {c} on {ops}")
            if abs(c.real) > atol:
                terms.append(PauliTerm(c.real, ops))
        return cls(tuple(terms), n_qubits)

    def simplify(self, atol=1e-12):
        return PauliSum.from_dict(
            _accumulate((t.operators, t.coefficient) for t in self.terms), self.n_qubits, atol
        )

    @property
    def strings(self):
        return [t.operators for t in self.terms]

    @property
    def coefficients(self):
        return np.array([t.coefficient for t in self.terms], dtype=float)

    @cached_property
    def table(self):
        return PauliTable(self.strings, self.n_qubits)

    def to_matrix(self):
        return self.table.dense(self.coefficients)

    def __len__(self):
        return len(self.terms)


def _accumulate(pairs):
    out = {}
    for ops, c in pairs:
        out[ops] = out.get(ops, 0.0) + c
    return out


class PauliTable:
    """Precomputed action of a list of Pauli strings, P|k> = phase[k] |k ^ flip>.

    Strings that share a flip mask are evaluated together, so a few hundred
    terms cost a few dozen gathers on the statevector batch.
    """

    def __init__(self, strings, n_qubits):
        self.n_qubits = n = check_n_qubits(n_qubits)
        self.strings = [_canonical_ops(s) for s in strings]
        dim = 1 << n
        idx = np.arange(dim)
        by_flip = {}
        for t, ops in enumerate(self.strings):
            flip = 0
            phase = np.ones(dim, dtype=complex)
            for site, axis in ops:
                if site >= n:
                    raise ValueError(f"site {site} outside {n} qubits")
                shift = n - 1 - site
                sign = 1 - 2 * ((idx >> shift) & 1)
                if axis == "x":
                    flip |= 1 << shift
                elif axis == "y":
                    flip |= 1 << shift
                    phase = phase * (1j * sign)
                else:
                    phase = phase * sign
            by_flip.setdefault(flip, []).append((t, phase))
        self.groups = []
        for flip, members in by_flip.items():
            cols = np.array([t for t, _ in members])
            phases = np.stack([p for _, p in members], axis=1)
            self.groups.append((idx ^ flip, cols, phases))

    def __len__(self):
        return len(self.strings)

    def expectations(self, psi):
        """Real expectation of every string on every state: shape (batch, n_terms)."""
        psi = np.asarray(psi)
        out = np.empty((psi.shape[0], len(self.strings)))
        for perm, cols, phases in self.groups:
            out[:, cols] = ((psi[:, perm].conj() * psi) @ phases).real
        return out

    def apply(self, psi, weights):
        """Return ``sum_t w[b, t] P_t |psi_b>`` with per-state (or shared 1-D) weights."""
        psi = np.asarray(psi)
        weights = np.asarray(weights, dtype=float)
        out = np.zeros_like(psi)
        for perm, cols, phases in self.groups:
            if weights.ndim == 1:
                coef = phases @ weights[cols]
            else:
                coef = weights[:, cols] @ phases.T
            out[:, perm] += coef * psi
        return out

    def dense(self, weights):
        dim = 1 << self.n_qubits
        mat = np.zeros((dim, dim), dtype=complex)
        idx = np.arange(dim)
        for perm, cols, phases in self.groups:
            mat[perm, idx] += phases @ np.asarray(weights, dtype=float)[cols]
        return mat


# ---------------------------------------------------------------------------
# batch gate kernels


def unitary_batch(batch, u00, u01, u10, u11):
    """Stack 2x2 entries (scalars or arrays of shape (batch,)) into (batch, 2, 2)."""
    u = np.empty((batch, 2, 2), dtype=complex)
    u[:, 0, 0], u[:, 0, 1], u[:, 1, 0], u[:, 1, 1] = u00, u01, u10, u11
    return u


def _owned(psi):
    return np.array(psi, dtype=complex, order="C", copy=True)


def apply_1q(psi, qubit, n_qubits, u00, u01, u10, u11):
    """Single-qubit gate with entries given as scalars or per-state arrays of shape (batch,)."""
    out = _owned(psi)
    _kernels.rot1(out, qubit, n_qubits, unitary_batch(out.shape[0], u00, u01, u10, u11))
    return out


def apply_controlled_1q(psi, control, target, n_qubits, u00, u01, u10, u11, keep_rest=True):
    """Apply the 2x2 block to ``target`` on the control=1 subspace.

    With ``keep_rest=False`` the control=0 amplitudes are zeroed, i.e. the
    operator is ``|1><1| (x) u`` rather than a controlled gate.
    """
    out = _owned(psi)
    u = unitary_batch(out.shape[0], u00, u01, u10, u11)
    _kernels.crot1(out, control, target, n_qubits, u, keep_rest)
    return out


def apply_matrix(psi, mat, qubits, n_qubits):
    """Dense gate on ``qubits`` (first listed = most significant); ``mat`` is (D, D) or (batch, D, D)."""
    batch = psi.shape[0]
    k = len(qubits)
    qubits = list(qubits)
    mat = np.asarray(mat, dtype=complex)
    if qubits == list(range(qubits[0], qubits[0] + k)):
        out = _owned(psi)
        mats = np.ascontiguousarray(np.broadcast_to(mat, (batch,) + mat.shape[-2:]))
        _kernels.block(out, qubits[0], k, n_qubits, mats)
        return out
    t = psi.reshape((batch,) + (2,) * n_qubits)
    src = [1 + q for q in qubits]
    dst = list(range(n_qubits + 1 - k, n_qubits + 1))
    t = np.moveaxis(t, src, dst)
    shape = t.shape
    t = t.reshape(batch, -1, 1 << k)
    out = t @ (mat.T if mat.ndim == 2 else mat.transpose(0, 2, 1))
    out = np.moveaxis(out.reshape(shape), dst, src)
    return out.reshape(batch, -1)


# ---------------------------------------------------------------------------
# single-state API


def apply_gate(state, gate, sites):
    """Apply a unitary block to ``sites`` of ``state`` and return the new state."""
    gate = np.asarray(gate, dtype=complex)
    sites = tuple(int(s) for s in sites)
    n = state.n_qubits
    if len(set(sites)) != len(sites):
        raise ValueError(f"gate target sites must be distinct, got {sites}")
    if any(s < 0 or s >= n for s in sites):
        raise ValueError(f"gate sites {sites} out of range for {n} qubits")
    dim = 1 << len(sites)
    if gate.shape != (dim, dim):
        raise ValueError(f"gate of shape {gate.shape} does not match {len(sites)} target sites")
    if not np.allclose(gate.conj().T @ gate, np.eye(dim), rtol=0, atol=1e-10):
        raise ContractError("gate block is not unitary within 1e-10")
    out = apply_matrix(state.amplitudes[None, :], gate, sites, n)
    return StateVector(out[0])


def _check_obs(state, obs):
    if obs.n_qubits != state.n_qubits:
        raise ValueError(f"observable acts on {obs.n_qubits} qubits, state has {state.n_qubits}")


def expectation(state, obs):
    """<psi|obs|psi> for a PauliSum; the result is real for any Hermitian ``obs``."""
    _check_obs(state, obs)
    if not obs.terms:
        return 0.0
    vals = obs.table.expectations(state.amplitudes[None, :])[0]
    return float(vals @ obs.coefficients)


def expectations_batch(psi, obs):
    """Energies of a batch of states, shape (batch,)."""
    psi = check_states(psi, obs.n_qubits, normalized=False)
    if not obs.terms:
        return np.zeros(psi.shape[0])
    return obs.table.expectations(psi) @ obs.coefficients


# ---------------------------------------------------------------------------
# finite-shot estimation


@dataclass(frozen=True)
class ShotPlan:
    """Measurement settings (one axis per qubit) and the term -> setting assignment."""

    settings: tuple
    shots_per_setting: int
    grouping: dict

    def __post_init__(self):
        if int(self.shots_per_setting) <= 0:
            raise ValueError("shots_per_setting must be positive")
        object.__setattr__(self, "shots_per_setting", int(self.shots_per_setting))
        settings = tuple(tuple(s) for s in self.settings)
        object.__setattr__(self, "settings", settings)
        for ops, k in self.grouping.items():
            if not 0 <= k < len(settings):
                raise ValueError(f"setting index {k} out of range")
            if any(settings[k][site] != axis for site, axis in ops):
                raise ValueError(f"term {ops} is not compatible with setting {''.join(settings[k])}")

    def with_shots(self, shots):
        return ShotPlan(self.settings, shots, self.grouping)


def _group_strings(strings, n_qubits):
    partial = []
    grouping = {}
    for ops in strings:
        ops = _canonical_ops(ops)
        if ops in grouping:
            continue
        for k, setting in enumerate(partial):
            if all(setting.get(site, axis) == axis for site, axis in ops):
                setting.update(ops)
                grouping[ops] = k
                break
        else:
            partial.append(dict(ops))
            grouping[ops] = len(partial) - 1
    settings = tuple(tuple(s.get(q, "z") for q in range(n_qubits)) for s in partial)
    return settings, grouping


def plan_for_strings(strings, n_qubits, shots):
    """Greedy first-fit qubit-wise-commuting grouping of raw Pauli strings."""
    if int(shots) <= 0:
        raise ValueError("shots must be positive")
    settings, grouping = _group_strings(strings, n_qubits)
    return ShotPlan(settings, int(shots), grouping)


def group_terms(obs, shots):
    """Greedy first-fit qubit-wise-commuting grouping of the terms of ``obs``."""
    return plan_for_strings(obs.strings, obs.n_qubits, shots)


class ShotEstimator:
    """Finite-shot estimates of a fixed list of Pauli strings on batches of states.

    Each setting rotates the batch into its measurement basis, draws
    ``shots`` outcomes per state from |amplitude|^2, and every string assigned
    to that setting is read off the same outcomes.
    """

    def __init__(self, strings, n_qubits, plan=None):
        self.n_qubits = n = check_n_qubits(n_qubits)
        self.strings = [_canonical_ops(s) for s in strings]
        if plan is None:
            settings, grouping = _group_strings(self.strings, n)
        else:
            settings, grouping = plan.settings, plan.grouping
            missing = [ops for ops in self.strings if ops not in grouping]
            if missing:
                raise ValueError(f"shot plan does not cover term {missing[0]}")
        self.settings = settings
        self.grouping = grouping
        idx = np.arange(1 << n)
        self._per_setting = []
        for k, setting in enumerate(settings):
            cols = [t for t, ops in enumerate(self.strings) if grouping[ops] == k]
            if not cols:
                continue
            signs = np.ones((1 << n, len(cols)))
            for j, t in enumerate(cols):
                for site, _ in self.strings[t]:
                    signs[:, j] *= 1 - 2 * ((idx >> (n - 1 - site)) & 1)
            rotations = [(q, _MEASURE_ROTATION[a]) for q, a in enumerate(setting) if a != "z"]
            self._per_setting.append((np.array(cols), signs, rotations))

    @property
    def n_settings(self):
        return len(self._per_setting)

    def estimate(self, psi, shots, rng):
        psi = np.asarray(psi)
        shots = int(shots)
        if shots <= 0:
            raise ValueError("shots must be positive")
        out = np.empty((psi.shape[0], len(self.strings)))
        for cols, signs, rotations in self._per_setting:
            rotated = psi
            for q, u in rotations:
                rotated = apply_1q(rotated, q, self.n_qubits, u[0, 0], u[0, 1], u[1, 0], u[1, 1])
            probs = rotated.real**2 + rotated.imag**2
            probs /= probs.sum(axis=1, keepdims=True)
            counts = rng.multinomial(shots, probs)
            out[:, cols] = (counts @ signs) / shots
        return out


def estimate_shots(state, obs, plan, seed):
    """Finite-shot estimate of <obs> following ``plan``; deterministic for a given seed."""
    _check_obs(state, obs)
    if not obs.terms:
        return 0.0
    estimator = ShotEstimator(obs.strings, obs.n_qubits, plan)
    rng = substream(seed, "estimate_shots")
    vals = estimator.estimate(state.amplitudes[None, :], plan.shots_per_setting, rng)[0]
    return float(vals @ obs.coefficients)
