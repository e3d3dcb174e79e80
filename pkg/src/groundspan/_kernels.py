"""In-place numba kernels for the hot gate loops. ``u`` always carries one matrix per row."""
import numba
import numpy as np


@numba.njit(cache=True, nogil=True)
def rot1(psi, qubit, n_qubits, u):
    stride = 1 << (n_qubits - 1 - qubit)
    dim = psi.shape[1]
    for b in range(psi.shape[0]):
        u00, u01, u10, u11 = u[b, 0, 0], u[b, 0, 1], u[b, 1, 0], u[b, 1, 1]
        for i in range(dim):
            if i & stride:
                continue
            j = i | stride
            a = psi[b, i]
            c = psi[b, j]
            psi[b, i] = u00 * a + u01 * c
            psi[b, j] = u10 * a + u11 * c


@numba.njit(cache=True, nogil=True)
def crot1(psi, control, target, n_qubits, u, keep_rest):
    cmask = 1 << (n_qubits - 1 - control)
    stride = 1 << (n_qubits - 1 - target)
    dim = psi.shape[1]
    for b in range(psi.shape[0]):
        u00, u01, u10, u11 = u[b, 0, 0], u[b, 0, 1], u[b, 1, 0], u[b, 1, 1]
        for i in range(dim):
            if i & stride:
                continue
            j = i | stride
            if i & cmask:
                a = psi[b, i]
                c = psi[b, j]
                psi[b, i] = u00 * a + u01 * c
                psi[b, j] = u10 * a + u11 * c
            elif not keep_rest:
                psi[b, i] = 0.0
                psi[b, j] = 0.0


@numba.njit(cache=True, nogil=True)
def block(psi, first, width, n_qubits, mats):
    """Dense gate on the contiguous qubits first .. first+width-1."""
    size = 1 << width
    inner = 1 << (n_qubits - first - width)
    outer = 1 << first
    buf = np.empty(size, dtype=psi.dtype)
    for b in range(psi.shape[0]):
        m = mats[b]
        for a in range(outer):
            base = a * size * inner
            for c in range(inner):
                for s in range(size):
                    buf[s] = psi[b, base + s * inner + c]
                for r in range(size):
                    acc = 0j
                    for s in range(size):
                        acc += m[r, s] * buf[s]
                    psi[b, base + r * inner + c] = acc
