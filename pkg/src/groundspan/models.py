"""Spin-chain Hamiltonians as Pauli sums, plus the exact-diagonalization oracle.

Spin-1 chains are encoded two qubits per site: the site isometry maps
``|0>, |1>, |2>`` (m = +1, 0, -1) to ``|00>, (|01>+|10>)/sqrt2, |11>``.
"""
from dataclasses import dataclass
from itertools import product

import numpy as np

from ._validation import check_n_qubits
from .exceptions import CapabilityError
from .qsim import AXES, PAULI, PauliSum

MAX_ED_QUBITS = 12

MODELS = ("MG", "AKLT", "XXZ")

# sigma_a sigma_b = delta_ab + i eps_abc sigma_c
_PAULI_MUL = {
    ("x", "y"): (1j, "z"), ("y", "z"): (1j, "x"), ("z", "x"): (1j, "y"),
    ("y", "x"): (-1j, "z"), ("z", "y"): (-1j, "x"), ("x", "z"): (-1j, "y"),
}

SITE_ISOMETRY = np.array(
    [[1, 0, 0], [0, 1 / np.sqrt(2), 0], [0, 1 / np.sqrt(2), 0], [0, 0, 1]], dtype=complex
)


def _mul_strings(a, b):
    ops = dict(a)
    phase = 1.0 + 0j
    for site, axis in b:
        if site not in ops:
            ops[site] = axis
        elif ops[site] == axis:
            del ops[site]
        else:
            ph, new = _PAULI_MUL[(ops[site], axis)]
            phase *= ph
            ops[site] = new
    return phase, tuple(sorted(ops.items()))


def _mul(p, q):
    out = {}
    for a, ca in p.items():
        for b, cb in q.items():
            ph, ops = _mul_strings(a, b)
            out[ops] = out.get(ops, 0) + ph * ca * cb
    return out


def _add(p, q, scale=1.0):
    out = dict(p)
    for ops, c in q.items():
        out[ops] = out.get(ops, 0) + scale * c
    return out


def _spin_half_dot(i, j):
    """sigma_i . sigma_j with full Pauli matrices."""
    return {((i, a), (j, a)): 1.0 for a in AXES}


@dataclass(frozen=True)
class SpinModelSpec:
    model: str
    n_sites: int
    anisotropy: float = -1.0

    def __post_init__(self):
        model = str(self.model).upper()
        if model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}, got {self.model!r}")
        object.__setattr__(self, "model", model)
        check_n_qubits(self.n_sites, 3 if model == "MG" else 2, "n_sites")

    @property
    def n_qubits(self):
        return self.n_sites if self.model == "MG" else 2 * self.n_sites

    def hamiltonian(self):
        if self.model == "MG":
            return build_mg(self.n_sites)
        if self.model == "AKLT":
            return build_aklt_encoded(self.n_sites)
        return build_xxz_encoded(self.n_sites, self.anisotropy)


def build_mg(n):
    """Open Majumdar-Ghosh chain on ``n`` qubits, spin operators as full Pauli matrices."""
    n = check_n_qubits(n, 3, "N")
    h = {}
    for i in range(n - 2):
        for a, b in ((i, i + 1), (i + 1, i + 2), (i, i + 2)):
            h = _add(h, _spin_half_dot(a, b))
    return PauliSum.from_dict(h, n)


def encode_spin1_pair_operator(axis):
    """4x4 matrix (sigma_a x I + I x sigma_a) / 2 acting on one encoded qubit pair."""
    axis = str(axis).lower()
    if axis not in AXES:
        raise ValueError(f"axis must be one of x, y, z; got {axis!r}")
    s = PAULI[axis]
    return (np.kron(s, PAULI["i"]) + np.kron(PAULI["i"], s)) / 2


def _encoded_spin(site, axis):
    return {((2 * site, axis),): 0.5, ((2 * site + 1, axis),): 0.5}


def _encoded_bond(i, j, weights=(1.0, 1.0, 1.0)):
    bond = {}
    for axis, w in zip(AXES, weights):
        if w:
            bond = _add(bond, _mul(_encoded_spin(i, axis), _encoded_spin(j, axis)), w)
    return bond


def build_aklt_encoded(n_sites):
    """Open spin-1 AKLT chain of ``n_sites`` sites on 2*n_sites qubits."""
    n_sites = check_n_qubits(n_sites, 2, "N'")
    h = {}
    for i in range(n_sites - 1):
        bond = _encoded_bond(i, i + 1)
        h = _add(h, bond)
        h = _add(h, _mul(bond, bond), 1 / 3)
    return PauliSum.from_dict(h, 2 * n_sites)


def build_xxz_encoded(n_sites, delta=-1.0):
    """Open spin-1 XXZ chain of ``n_sites`` sites on 2*n_sites qubits."""
    n_sites = check_n_qubits(n_sites, 2, "N'")
    h = {}
    for i in range(n_sites - 1):
        h = _add(h, _encoded_bond(i, i + 1, (1.0, 1.0, float(delta))))
    return PauliSum.from_dict(h, 2 * n_sites)


def spin1_bond_matrix(model, delta=-1.0):
    """9x9 two-site bond in the plain spin-1 basis (m = +1, 0, -1); used as a reference."""
    sq = 1 / np.sqrt(2)
    sp = np.array([[0, 1, 0], [0, 0, 1], [0, 0, 0]], dtype=complex) / sq  # S+
    sx = (sp + sp.T) / 2
    sy = (sp - sp.T) / 2j
    sz = np.diag([1.0, 0.0, -1.0]).astype(complex)
    if model == "AKLT":
        dot = sum(np.kron(s, s) for s in (sx, sy, sz))
        return dot + dot @ dot / 3
    return np.kron(sx, sx) + np.kron(sy, sy) + delta * np.kron(sz, sz)


@dataclass(frozen=True)
class GroundSpace:
    energy: float
    degeneracy: int
    basis: np.ndarray
    spectrum: np.ndarray

    @property
    def gap(self):
        excited = self.spectrum[self.degeneracy:]
        return float(excited[0] - self.energy) if excited.size else float("inf")

    def projector(self):
        return self.basis @ self.basis.conj().T


def exact_diagonalize(hamiltonian, degeneracy_tol=1e-6):
    """Dense ED. ``degeneracy_tol`` is relative to the spectral width."""
    if degeneracy_tol <= 0:
        raise ValueError("degeneracy_tol must be positive")
    n = hamiltonian.n_qubits
    if n > MAX_ED_QUBITS:
        raise CapabilityError(f"dense ED is limited to {MAX_ED_QUBITS} qubits, got {n}")
    mat = hamiltonian.to_matrix()
    if np.abs(mat.imag).max(initial=0.0) < 1e-14:
        evals, evecs = np.linalg.eigh(mat.real)
        evecs = evecs.astype(complex)
    else:
        evals, evecs = np.linalg.eigh(mat)
    width = max(evals[-1] - evals[0], 1.0)
    r = int(np.count_nonzero(evals - evals[0] <= degeneracy_tol * width))
    return GroundSpace(float(evals[0]), r, evecs[:, :r], evals)


def model_ground_space(spec, degeneracy_tol=1e-6):
    ground = exact_diagonalize(spec.hamiltonian(), degeneracy_tol)
    if spec.model == "MG":
        ground = mg_dimer_basis(spec.n_sites, ground)
    return ground


# ---------------------------------------------------------------------------
# reproducible basis for the degenerate MG ground space


def _singlet_chain_state(n, pairs, free):
    """Product of singlets on ``pairs`` and computational-basis spins ``free`` = {site: bit}."""
    singlet = np.array([0, 1, -1, 0], dtype=complex) / np.sqrt(2)
    factors = {}
    for a, b in pairs:
        factors[a] = (singlet, (a, b))
    for site, bit in free.items():
        factors[site] = (np.eye(2, dtype=complex)[bit], (site,))
    psi = np.ones(1, dtype=complex)
    order = []
    for site in sorted(factors):
        vec, sites = factors[site]
        psi = np.kron(psi, vec)
        order.extend(sites)
    # reorder tensor legs from construction order to qubit order
    t = psi.reshape((2,) * n)
    t = np.transpose(t, np.argsort(order))
    return t.reshape(-1)


def mg_dimer_references(n):
    """Dimer-covering product states spanning the open MG ground space, in a fixed order.

    Returned as a list of (covering index, free-spin bits, vector). Covering 0
    pairs (0,1),(2,3),...; covering 1 pairs (1,2),(3,4),... Free end spins are
    enumerated in computational-basis order.
    """
    coverings = []
    for start in (0, 1):
        pairs = [(a, a + 1) for a in range(start, n - 1, 2)]
        used = {s for p in pairs for s in p}
        coverings.append((pairs, [s for s in range(n) if s not in used]))
    refs = []
    for c, (pairs, free_sites) in enumerate(coverings):
        for bits in product((0, 1), repeat=len(free_sites)):
            refs.append((c, bits, _singlet_chain_state(n, pairs, dict(zip(free_sites, bits)))))
    return refs


def mg_dimer_basis(n, ground):
    """Rotate an ED ground basis onto orthonormalized dimer references.

    References are grouped by total S_z. Within a sector they are ordered by
    covering and Gram-Schmidt orthonormalized after projection onto the ED
    space. Sectors are listed from highest S_z down. With exactly two sectors
    (odd ``n``) the second is appended in reverse, so spin-flip partners sit at
    mirrored positions ``(i, r-1-i)``.
    """
    refs = mg_dimer_references(n)
    proj = ground.basis @ ground.basis.conj().T
    sectors = {}
    for c, bits, vec in refs:
        sz = sum(1 - 2 * b for b in bits)
        sectors.setdefault(sz, []).append((c, bits, proj @ vec))
    columns = []
    for rank, sz in enumerate(sorted(sectors, reverse=True)):
        members = sorted(sectors[sz], key=lambda m: (m[0], m[1]))
        block = []
        for _, _, vec in members:
            for q in block:
                vec = vec - (q.conj() @ vec) * q
            norm = np.linalg.norm(vec)
            if norm > 1e-8:
                block.append(vec / norm)
        if len(sectors) == 2 and rank == 1:
            block = block[::-1]
        columns.extend(block)
    basis = np.stack(columns, axis=1)
    if basis.shape[1] != ground.degeneracy:
        raise RuntimeError(
            f"dimer references span {basis.shape[1]} dims, ED degeneracy is {ground.degeneracy}"
        )
    return GroundSpace(ground.energy, ground.degeneracy, basis, ground.spectrum)
