"""Parameterized circuit families and their simulation.

Every gate in a template is ``exp(i * theta * G)`` for a fixed Hermitian
generator ``G`` and owns exactly one parameter slot (slot index == gate
position). Rotations use the usual ``R_a(t) = exp(-i t sigma_a / 2)``, so
``G = -sigma_a / 2`` and ``U(t)^dagger = U(-t)`` holds for every gate.
"""
import json
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ._validation import check_n_qubits, check_params
from .models import SITE_ISOMETRY
from . import _kernels
from .qsim import PAULI, StateVector, apply_1q, apply_controlled_1q, apply_matrix, unitary_batch

MG_BLOCK = "MG_BLOCK"
SPIN1_SYM = "SPIN1_SYM"

_ROTATIONS = ("rx", "ry", "rz")
_CONTROLLED = ("crx", "cry", "crz")


def gell_mann():
    """The eight Gell-Mann matrices followed by the 3x3 identity."""
    g = np.zeros((9, 3, 3), dtype=complex)
    g[0][0, 1] = g[0][1, 0] = 1
    g[1][0, 1], g[1][1, 0] = -1j, 1j
    g[2][0, 0], g[2][1, 1] = 1, -1
    g[3][0, 2] = g[3][2, 0] = 1
    g[4][0, 2], g[4][2, 0] = -1j, 1j
    g[5][1, 2] = g[5][2, 1] = 1
    g[6][1, 2], g[6][2, 1] = -1j, 1j
    g[7] = np.diag([1, 1, -2]) / np.sqrt(3)
    g[8] = np.eye(3)
    return g


@lru_cache(maxsize=None)
def _dense_generator(kind, label):
    """Generator matrix and its eigendecomposition for the dense gate kinds."""
    v = SITE_ISOMETRY
    if kind == "qutrit":
        gen = v @ gell_mann()[label] @ v.conj().T
    elif kind == "cphase":
        # |2>_control (x) |label>_target in the encoded pair basis
        ket = np.kron(v[:, 2], v[:, label])
        gen = np.outer(ket, ket.conj())
    else:
        raise ValueError(f"unknown dense gate kind {kind!r}")
    evals, evecs = np.linalg.eigh(gen)
    return gen, evals, evecs


@dataclass(frozen=True)
class Gate:
    kind: str
    qubits: tuple
    slot: int
    label: int = 0

    def to_dict(self):
        return {"kind": self.kind, "qubits": list(self.qubits), "slot": self.slot, "label": self.label}


def _rotation_entries(axis, theta):
    c = np.cos(theta / 2)
    s = np.sin(theta / 2)
    if axis == "x":
        return c, -1j * s, -1j * s, c
    if axis == "y":
        return c, -s, s, c
    return np.exp(-0.5j * theta), 0.0, 0.0, np.exp(0.5j * theta)


def _apply_gate(psi, gate, theta, n):
    """Gate at per-row angles ``theta`` (shape (batch,)), applied in place to ``psi``."""
    kind = gate.kind
    batch = psi.shape[0]
    if kind in _ROTATIONS:
        u = unitary_batch(batch, *_rotation_entries(kind[1], theta))
        _kernels.rot1(psi, gate.qubits[0], n, u)
    elif kind in _CONTROLLED:
        c, t = gate.qubits
        u = unitary_batch(batch, *_rotation_entries(kind[2], theta))
        _kernels.crot1(psi, c, t, n, u, True)
    else:
        _, evals, evecs = _dense_generator(kind, gate.label)
        phases = np.exp(1j * np.multiply.outer(theta, evals))
        mats = np.einsum("ik,bk,jk->bij", evecs, phases, evecs.conj())
        _kernels.block(psi, gate.qubits[0], len(gate.qubits), n, mats)
    return psi


def _apply_generator(psi, gate, n):
    kind = gate.kind
    if kind in _ROTATIONS:
        p = -0.5 * PAULI[kind[1]]
        return apply_1q(psi, gate.qubits[0], n, p[0, 0], p[0, 1], p[1, 0], p[1, 1])
    if kind in _CONTROLLED:
        p = -0.5 * PAULI[kind[2]]
        c, t = gate.qubits
        return apply_controlled_1q(psi, c, t, n, p[0, 0], p[0, 1], p[1, 0], p[1, 1], keep_rest=False)
    gen, _, _ = _dense_generator(kind, gate.label)
    return apply_matrix(psi, gen, gate.qubits, n)


@dataclass(frozen=True)
class CircuitTemplate:
    family: str
    n_qubits: int
    depth: int
    gates: tuple

    @property
    def n_params(self):
        return len(self.gates)

    @property
    def dim(self):
        return 1 << self.n_qubits

    def zero_batch(self, batch):
        psi = np.zeros((batch, self.dim), dtype=complex)
        psi[:, 0] = 1.0
        return psi

    def prepare_batch(self, thetas):
        """Statevectors U(theta)|0...0> for every row of ``thetas``; shape (batch, 2**n)."""
        thetas = check_params(thetas, self.n_params)
        psi = self.zero_batch(thetas.shape[0])
        for k, gate in enumerate(self.gates):
            psi = _apply_gate(psi, gate, thetas[:, k], self.n_qubits)
        return psi

    def prepare(self, params):
        params = np.asarray(params, dtype=float)
        if params.ndim != 1 or params.size != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got shape {params.shape}")
        return StateVector(self.prepare_batch(params[None, :])[0])

    def gate_derivative(self, params, slot):
        """Tangent d|psi(theta)>/d theta_slot, with the analytic factor iG inserted at ``slot``."""
        params = np.asarray(params, dtype=float)
        if params.ndim != 1 or params.size != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got shape {params.shape}")
        if not 0 <= int(slot) < self.n_params:
            raise ValueError(f"slot {slot} outside [0, {self.n_params})")
        psi = self.zero_batch(1)
        for k, gate in enumerate(self.gates):
            psi = _apply_gate(psi, gate, params[k : k + 1], self.n_qubits)
            if k == slot:
                psi = 1j * _apply_generator(psi, gate, self.n_qubits)
        return psi[0]

    def expectation_gradient(self, thetas, table, weights, psi=None):
        """Adjoint-mode gradient of ``f_b = <psi_b| sum_t w[b,t] P_t |psi_b>``.

        Returns (f of shape (batch,), df/dtheta of shape (batch, n_params)).
        ``psi`` may pass in already prepared states to skip the forward sweep.
        """
        thetas = check_params(thetas, self.n_params)
        n = self.n_qubits
        psi = self.prepare_batch(thetas) if psi is None else np.array(psi, dtype=complex, copy=True)
        lam = table.apply(psi, weights)
        values = np.einsum("bi,bi->b", psi.conj(), lam).real
        grads = np.empty_like(thetas)
        for k in range(self.n_params - 1, -1, -1):
            gate = self.gates[k]
            gpsi = _apply_generator(psi, gate, n)
            # 2 Re <lam| iG |psi>
            grads[:, k] = -2.0 * np.einsum("bi,bi->b", lam.conj(), gpsi).imag
            if k:
                _apply_gate(psi, gate, -thetas[:, k], n)
                _apply_gate(lam, gate, -thetas[:, k], n)
        return values, grads

    def prepare_shifted(self, thetas, active, delta=np.pi / 2):
        """States at ``theta_b +/- delta e_j`` for every row b and every j in ``active``.

        Shifted branches share the unshifted prefix up to their gate, which
        halves the work of simulating them independently. Returns
        (base states (batch, d), shifted states (batch, len(active), 2, d)),
        with index 0 = plus shift and 1 = minus shift.
        """
        thetas = check_params(thetas, self.n_params)
        active = np.asarray(active, dtype=int)
        order = np.argsort(active)
        batch, n = thetas.shape[0], self.n_qubits
        n_active = active.size
        rows = batch * (1 + 2 * n_active)
        psi = np.zeros((rows, self.dim), dtype=complex)
        psi[:batch, 0] = 1.0
        live = batch
        position = {int(active[i]): a for a, i in enumerate(order)}
        for k, gate in enumerate(self.gates):
            base = thetas[:, k]
            if k in position:
                psi[live : live + batch] = psi[:batch]
                psi[live + batch : live + 2 * batch] = psi[:batch]
                n_branch = (live - batch) // batch
                angles = np.concatenate([base, np.tile(base, n_branch), base + delta, base - delta])
                live += 2 * batch
            else:
                angles = np.tile(base, live // batch)
            _apply_gate(psi[:live], gate, angles, n)
        shifted = psi[batch:].reshape(n_active, 2, batch, self.dim)
        # undo the sort so shifted[:, a] matches active[a]
        shifted = shifted[np.argsort(order)]
        return psi[:batch], shifted.transpose(2, 0, 1, 3)

    def to_dict(self):
        return {
            "family": self.family,
            "n_qubits": self.n_qubits,
            "depth": self.depth,
            "n_params": self.n_params,
            "gates": [g.to_dict() for g in self.gates],
        }

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)


def template_from_dict(data):
    """Rebuild a template from its description and check the gate list matches."""
    family = data["family"]
    if family == MG_BLOCK:
        template = build_mg_ansatz(data["n_qubits"], data["depth"])
    elif family == SPIN1_SYM:
        template = build_spin1_ansatz(data["n_qubits"] // 2, data["depth"])
    else:
        raise ValueError(f"unknown circuit family {family!r}")
    if "gates" in data and [g.to_dict() for g in template.gates] != data["gates"]:
        raise ValueError("serialized gate list does not match the rebuilt template")
    return template


def build_mg_ansatz(n, depth):
    """L layers of 15-parameter two-qubit blocks on pairs (0,1), (1,2), ..., (n-2, n-1).

    Block layout: three repetitions of Rz, Ry on qubit a; Rz, Ry on qubit b;
    then a controlled rotation a -> b about x, y, z respectively.
    """
    n = check_n_qubits(n, 2, "N")
    depth = check_n_qubits(depth, 1, "L")
    gates = []
    for _ in range(depth):
        for a in range(n - 1):
            b = a + 1
            for axis in "xyz":
                for kind, q in (("rz", a), ("ry", a), ("rz", b), ("ry", b)):
                    gates.append(Gate(kind, (q,), len(gates)))
                gates.append(Gate("cr" + axis, (a, b), len(gates)))
    return CircuitTemplate(MG_BLOCK, n, depth, tuple(gates))


def build_spin1_ansatz(n_sites, depth):
    """Symmetry-preserving layers on ``n_sites`` encoded qutrits (2 * n_sites qubits).

    Each layer applies a 9-factor single-qutrit unitary to every site, then
    three controlled phases on each neighbour pair (j, j+1).
    """
    n_sites = check_n_qubits(n_sites, 2, "N'")
    depth = check_n_qubits(depth, 1, "L")
    gates = []
    for _ in range(depth):
        for j in range(n_sites):
            for k in range(9):
                gates.append(Gate("qutrit", (2 * j, 2 * j + 1), len(gates), k))
        for j in range(n_sites - 1):
            for k in range(3):
                gates.append(Gate("cphase", tuple(range(2 * j, 2 * j + 4)), len(gates), k))
    return CircuitTemplate(SPIN1_SYM, 2 * n_sites, depth, tuple(gates))


def prepare(template, params):
    return template.prepare(params)


def gate_derivative(template, params, slot):
    return template.gate_derivative(params, slot)
