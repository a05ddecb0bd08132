"""Dense complex matrix algebra for small Hilbert spaces.

Sites are labelled ``1..N`` in every public function. Functions accept a
single ``(D, D)`` matrix and most also accept a stack ``(..., D, D)``.
"""

from __future__ import annotations

import string

import numpy as np
import scipy.linalg

from .errors import DimensionMismatch, IndexCollision, TooLarge, ZeroTrace

TOL_HERM = 1e-10
TOL_PSD = 1e-10
TOL_TRACE = 1e-9
MAX_DIM = 4096

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
IDENTITY2 = np.eye(2, dtype=complex)
# a = |0><1| lowers |1> to |0>; its adjoint raises.
ANNIHILATION = np.array([[0, 1], [0, 0]], dtype=complex)


def _square(M):
    M = np.asarray(M)
    if M.ndim < 2 or M.shape[-1] != M.shape[-2]:
        raise DimensionMismatch(f"expected square matrix, got shape {M.shape}")
    return M


def dagger(M):
    return np.conj(np.swapaxes(M, -1, -2))


def hermitize(M):
    """Return the Hermitian part ``(M + M^dagger) / 2``."""
    M = _square(M).astype(complex, copy=False)
    H = 0.5 * (M + dagger(M))
    # make conjugate symmetry and a real diagonal exact, not just to rounding
    H = np.triu(H) + dagger(np.triu(H, 1))
    idx = np.arange(H.shape[-1])
    H[..., idx, idx] = H[..., idx, idx].real
    return H


def trace(M):
    return np.trace(M, axis1=-2, axis2=-1)


def project_to_density(M, tol_trace=TOL_TRACE):
    """Map a matrix back onto the set of density matrices.

    Hermitizes, clips negative eigenvalues to zero and renormalizes the
    trace. Valid density matrices are returned unchanged up to rounding.

    Raises
    ------
    ZeroTrace
        If the clipped spectrum sums to less than ``tol_trace``.
    """
    H = hermitize(M)
    w, V = np.linalg.eigh(H)
    w = np.clip(w, 0.0, None)
    total = w.sum()
    if total < tol_trace:
        raise ZeroTrace(f"clipped spectrum sums to {total:.3e}")
    w = w / total
    return hermitize((V * w) @ dagger(V))


def project_batch(rho, tol_trace=TOL_TRACE):
    """Vectorized :func:`project_to_density` over a stack ``(..., D, D)``.

    Only members with a negative eigenvalue go through the eigenvector
    repair; the rest are hermitized and trace-normalized.
    """
    rho = hermitize(rho)
    shape = rho.shape
    flat = rho.reshape(-1, shape[-2], shape[-1])
    tr = trace(flat).real
    if np.any(tr < tol_trace):
        raise ZeroTrace(f"trace {tr.min():.3e} below tolerance")
    flat = flat / tr[:, None, None]
    w = np.linalg.eigvalsh(flat)
    bad = np.nonzero(w[:, 0] < 0.0)[0]
    if bad.size:
        wb, V = np.linalg.eigh(flat[bad])
        wb = np.clip(wb, 0.0, None)
        s = wb.sum(axis=-1)
        if np.any(s < tol_trace):
            raise ZeroTrace("clipped spectrum vanished")
        wb = wb / s[:, None]
        flat[bad] = hermitize((V * wb[:, None, :]) @ dagger(V))
    return flat.reshape(shape)


def density_violations(rho):
    """Return ``(herm_err, min_eig, trace_err)`` maxima over a stack.

    ``herm_err`` is relative to the largest entry magnitude.
    """
    rho = np.asarray(rho)
    scale = max(np.abs(rho).max(), 1e-300)
    herm = np.abs(rho - dagger(rho)).max() / scale
    min_eig = np.linalg.eigvalsh(hermitize(rho)).min()
    tr_err = np.abs(trace(rho) - 1.0).max()
    return float(herm), float(min_eig), float(tr_err)


def is_density(rho, tol_herm=TOL_HERM, tol_psd=TOL_PSD, tol_trace=TOL_TRACE):
    rho = np.asarray(rho)
    if rho.ndim < 2 or rho.shape[-1] != rho.shape[-2] or not np.all(np.isfinite(rho)):
        return False
    herm, min_eig, tr_err = density_violations(rho)
    return herm <= tol_herm and min_eig >= -tol_psd and tr_err <= tol_trace


def _check_register(M, d, N):
    D = d**N
    if M.shape[-1] != D or M.shape[-2] != D:
        raise DimensionMismatch(f"matrix of size {M.shape[-1]} is not d^N = {d}^{N}")
    if D > MAX_DIM:
        raise TooLarge(f"register dimension {D} exceeds {MAX_DIM}")


def partial_trace(M, keep, d, N):
    """Trace out every site not in ``keep``.

    Parameters
    ----------
    M : array_like, shape (..., d**N, d**N)
    keep : iterable of int
        Sites to keep, labelled ``1..N``. Kept sites appear in ascending
        order in the result.
    d, N : int
        Local dimension and number of sites.
    """
    M = _square(M)
    _check_register(M, d, N)
    keep = sorted(set(int(k) for k in keep))
    if not keep or keep[0] < 1 or keep[-1] > N:
        raise IndexCollision(f"keep must be a nonempty subset of 1..{N}, got {keep}")
    letters = string.ascii_letters
    rows = [letters[i] for i in range(N)]
    cols = [letters[N + i] if (i + 1) in keep else rows[i] for i in range(N)]
    out = [rows[k - 1] for k in keep] + [cols[k - 1] for k in keep]
    batch = M.shape[:-2]
    T = M.reshape(batch + (d,) * (2 * N))
    expr = "..." + "".join(rows) + "".join(cols) + "->..." + "".join(out)
    dk = d ** len(keep)
    return np.einsum(expr, T).reshape(batch + (dk, dk))


def embed_single(O, j, N):
    """Kronecker embedding ``I x .. x O x .. x I`` with ``O`` in slot ``j``."""
    O = _square(O)
    if not 1 <= j <= N:
        raise IndexCollision(f"site {j} outside 1..{N}")
    d = O.shape[0]
    left = np.eye(d ** (j - 1), dtype=complex)
    right = np.eye(d ** (N - j), dtype=complex)
    return np.kron(np.kron(left, O), right)


def embed_pair(B, j, k, N):
    """Place a two-site operator ``B`` on slots ``(j, k)``.

    The first tensor factor of ``B`` acts on site ``j``, the second on
    site ``k``; ``j > k`` is allowed.
    """
    B = _square(B)
    if j == k:
        raise IndexCollision(f"pair operator needs distinct sites, got {j} twice")
    if not (1 <= j <= N and 1 <= k <= N):
        raise IndexCollision(f"sites ({j}, {k}) outside 1..{N}")
    d = int(round(np.sqrt(B.shape[0])))
    if d * d != B.shape[0]:
        raise DimensionMismatch(f"pair operator size {B.shape[0]} is not a square")
    rest = [s for s in range(1, N + 1) if s not in (j, k)]
    full = np.kron(B, np.eye(d ** (N - 2), dtype=complex))
    # axis a of `full` carries site order[a]; move it to site position
    order = [j, k] + rest
    T = full.reshape((d,) * (2 * N))
    perm = [order.index(s) for s in range(1, N + 1)]
    T = T.transpose(perm + [N + p for p in perm])
    return T.reshape(d**N, d**N)


def apply_local(op, psi, site, d, N, side="left"):
    """Apply a single-site operator to a register without building it.

    ``psi`` is a stack of vectors ``(..., d**N)`` when ``side`` is
    ``"vector"``, otherwise a stack of matrices ``(..., D, D)`` that gets
    multiplied on the ``"left"`` (``op_site @ M``) or ``"right"``
    (``M @ op_site``).
    """
    q = site - 1
    op = np.asarray(op)
    diag = not np.any(op - np.diag(np.diagonal(op)))
    if side == "vector":
        T = psi.reshape(psi.shape[:-1] + (d**q, d, d ** (N - q - 1)))
        out = np.diagonal(op)[:, None] * T if diag else op @ T
        return out.reshape(psi.shape)
    batch = psi.shape[:-2]
    D = d**N
    if side == "left":
        T = psi.reshape(batch + (d**q, d, d ** (N - q - 1) * D))
        out = np.diagonal(op)[:, None] * T if diag else op @ T
    elif side == "right":
        T = psi.reshape(batch + (D * d**q, d, d ** (N - q - 1)))
        if diag:
            out = np.diagonal(op)[:, None] * T
        else:
            out = np.swapaxes(np.swapaxes(T, -1, -2) @ op, -1, -2)
    else:
        raise ValueError(f"unknown side {side!r}")
    return out.reshape(psi.shape)


def frobenius_norm(O):
    """``sqrt(tr(O O^dagger))``; reduces over the last two axes."""
    O = np.asarray(O)
    return np.sqrt(np.sum(np.abs(O) ** 2, axis=(-2, -1)))


def commutator(A, B):
    A, B = np.asarray(A), np.asarray(B)
    if A.shape[-2:] != B.shape[-2:]:
        raise DimensionMismatch(f"{A.shape} vs {B.shape}")
    return A @ B - B @ A


def anticommutator(A, B):
    A, B = np.asarray(A), np.asarray(B)
    if A.shape[-2:] != B.shape[-2:]:
        raise DimensionMismatch(f"{A.shape} vs {B.shape}")
    return A @ B + B @ A


def matrix_exponential(M, t=1.0):
    """``exp(t M)`` by scaling and squaring with Pade approximants."""
    return scipy.linalg.expm(t * np.asarray(_square(M), dtype=complex))


def ket_density(v):
    v = np.asarray(v, dtype=complex)
    v = v / np.linalg.norm(v)
    return np.outer(v, v.conj())


def bloch_density(x, y, z):
    """``(I + x sigma_x + y sigma_y + z sigma_z) / 2``; broadcasts over array coordinates."""
    x, y, z = (np.asarray(c, dtype=float)[..., None, None] for c in (x, y, z))
    return 0.5 * (IDENTITY2 + x * SIGMA_X + y * SIGMA_Y + z * SIGMA_Z)


def bloch_vector(rho):
    """Bloch coordinates ``(x, y, z)`` of a qubit state (or stack of them)."""
    rho = np.asarray(rho)
    x = 2.0 * rho[..., 1, 0].real
    y = 2.0 * rho[..., 1, 0].imag
    z = (rho[..., 0, 0] - rho[..., 1, 1]).real
    return np.stack([x, y, z], axis=-1)


def product_state(rhos):
    out = np.ones((1, 1), dtype=complex)
    for r in rhos:
        out = np.kron(out, r)
    return out


NAMED_MATRICES = {
    "sigma_x": SIGMA_X,
    "sigma_y": SIGMA_Y,
    "sigma_z": SIGMA_Z,
    "identity": IDENTITY2,
}

NAMED_STATES = {
    "proj0": ket_density([1, 0]),
    "proj1": ket_density([0, 1]),
    "plus": bloch_density(1.0, 0.0, 0.0),
    "minus": bloch_density(-1.0, 0.0, 0.0),
    "maximally_mixed": 0.5 * IDENTITY2,
}


def encode_matrix(M):
    """Row-major nested list of ``[re, im]`` pairs."""
    M = np.asarray(M, dtype=complex)
    return [[[float(v.real), float(v.imag)] for v in row] for row in M]


def decode_matrix(obj):
    """Inverse of :func:`encode_matrix`; plain real nested lists are accepted too."""
    arr = np.asarray(obj, dtype=float)
    if arr.ndim == 3 and arr.shape[-1] == 2:
        M = arr[..., 0] + 1j * arr[..., 1]
    elif arr.ndim == 2:
        M = arr.astype(complex)
    else:
        raise DimensionMismatch(f"cannot decode matrix of shape {arr.shape}")
    M = _square(M)
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix entries must be finite")
    return M
