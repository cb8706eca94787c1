"""Independent reference constructions used by the tests."""
import numpy as np

SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]])
SZ = np.diag([1.0 + 0j, -1.0])
UP, DOWN = np.array([1.0, 0]), np.array([0, 1.0])


def site_operator(op, site, n=4):
    mats = [np.eye(2)] * n
    mats[site] = op
    out = mats[0]
    for m in mats[1:]:
        out = np.kron(out, m)
    return out


def spin_state(spins):
    """Product state for a sequence of +1 (up) / -1 (down)."""
    out = np.array([1.0])
    for s in spins:
        out = np.kron(out, UP if s > 0 else DOWN)
    return out


def tensor_hamiltonian(j, b_local, ec_term=0.0):
    """Full 16-dim Heisenberg + Zeeman Hamiltonian plus an optional |SS><SS| term.

    ``j`` = (J12, J23, J34); ``b_local`` holds the four local fields so that
    the Zeeman part is sum_i b_i sigma_z^i / 2.
    """
    h = np.zeros((16, 16), complex)
    for (a, b), jj in zip([(0, 1), (1, 2), (2, 3)], j):
        for op in (SX, SY, SZ):
            h += jj / 4 * site_operator(op, a) @ site_operator(op, b)
    for i, bi in enumerate(b_local):
        h += bi / 2 * site_operator(SZ, i)
    singlet = (np.kron(UP, DOWN) - np.kron(DOWN, UP)) / np.sqrt(2)
    ss = np.kron(singlet, singlet)
    h += ec_term * np.outer(ss, ss.conj())
    return h


def local_fields(b_mean, db12, db23, db34):
    """Solve mean = b_mean, b_{i+1} - b_i = gradient for the four local fields."""
    a = np.array([[0.25, 0.25, 0.25, 0.25], [-1, 1, 0, 0], [0, -1, 1, 0], [0, 0, -1, 1]])
    return np.linalg.solve(a, [b_mean, db12, db23, db34])


def ms0_isometry(basis_spins):
    """16 x 6 isometry onto the listed product states."""
    return np.stack([spin_state(s) for s in basis_spins], axis=1)


def expm_hermitian(h, t):
    w, v = np.linalg.eigh(h)
    return (v * np.exp(-1j * w * t)) @ v.conj().T


def central_difference(f, x, h=1e-6):
    x = np.asarray(x, float)
    out = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        out.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * h))
    return np.stack(out, axis=-1)
