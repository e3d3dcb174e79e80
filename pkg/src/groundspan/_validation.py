"""Input checks shared by the estimators and the functional API.

They play the role of ``sklearn.utils.check_array`` for complex statevectors,
which scikit-learn refuses to handle.
"""
import numbers

import numpy as np


def check_n_qubits(n, minimum=1, name="n_qubits"):
    if not isinstance(n, numbers.Integral) or isinstance(n, bool):
        raise TypeError(f"{name} must be an integer, got {type(n).__name__}")
    if n < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {n}")
    return int(n)


def n_qubits_for_dim(dim):
    n = int(dim).bit_length() - 1
    if dim < 2 or (1 << n) != dim:
        raise ValueError(f"statevector length must be a power of two >= 2, got {dim}")
    return n


def check_states(X, n_qubits=None, normalized=True, atol=1e-8):
    """Return ``X`` as a C-contiguous complex array of shape (n_states, 2**n).

    A single 1-D vector is promoted to a batch of one.
    """
    X = np.asarray(X)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise ValueError(f"expected a 2-D array of statevectors, got shape {X.shape}")
    X = np.ascontiguousarray(X, dtype=complex)
    if X.shape[0] and not np.all(np.isfinite(X)):
        raise ValueError("statevectors contain NaN or inf")
    n = n_qubits_for_dim(X.shape[1])
    if n_qubits is not None and n != n_qubits:
        raise ValueError(f"statevectors act on {n} qubits, expected {n_qubits}")
    if normalized and X.shape[0]:
        norms = np.linalg.norm(X, axis=1)
        bad = np.flatnonzero(np.abs(norms - 1.0) > atol)
        if bad.size:
            raise ValueError(f"state {bad[0]} has norm {norms[bad[0]]:.3g}, expected 1")
    return X


def check_params(theta, n_params):
    """Parameter batch of shape (n, n_params); a 1-D vector becomes a batch of one."""
    theta = np.asarray(theta, dtype=float)
    if theta.ndim == 1:
        theta = theta[None, :]
    if theta.ndim != 2 or theta.shape[1] != n_params:
        raise ValueError(f"expected parameters with {n_params} entries, got shape {theta.shape}")
    if not np.all(np.isfinite(theta)):
        raise ValueError("parameters contain NaN or inf")
    return theta


def check_positive(value, name, strict=True):
    if not isinstance(value, numbers.Real) or isinstance(value, bool):
        raise TypeError(f"{name} must be a real number")
    if (value <= 0) if strict else (value < 0):
        raise ValueError(f"{name} must be {'>' if strict else '>='} 0, got {value}")
    return float(value)
