"""Complex Hermitian linear algebra used throughout the package.

Every function accepts stacked inputs: matrices have shape ``(..., n, n)``
and vectors ``(..., n)``, so one call can process all frequency bins at once.
"""

import numpy as np

DEFAULT_LOADING = 1e-8
DEFAULT_PINV_TOL = 1e-10

_HERMITIAN_RTOL = 1e-8


class NumericalError(np.linalg.LinAlgError):
    """Raised when a matrix is unusable, e.g. singular after loading.

    ``index`` holds the position of the offending matrix within the leading
    (batch) dimensions, or ``None`` for a single matrix.
    """

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


def hermitian_part(A):
    return 0.5 * (A + np.conj(np.swapaxes(A, -1, -2)))


def check_hermitian(A, rtol=_HERMITIAN_RTOL):
    A = np.asarray(A)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise ValueError(f"expected square matrices, got shape {A.shape}")
    asym = np.linalg.norm(A - np.conj(np.swapaxes(A, -1, -2)), axis=(-2, -1))
    scale = np.linalg.norm(A, axis=(-2, -1))
    bad = asym > rtol * np.maximum(scale, np.finfo(float).tiny)
    if np.any(bad):
        index = tuple(int(i) for i in np.argwhere(np.atleast_1d(bad))[0])
        raise ValueError(f"matrix at batch index {index} is not Hermitian")


def _as_columns(A, b):
    b = np.asarray(b)
    vector = b.ndim == A.ndim - 1
    if vector:
        b = b[..., None]
    if b.shape[-2] != A.shape[-1]:
        raise ValueError(f"shape mismatch: A {A.shape}, b {b.shape}")
    return b, vector


def _first_bad(shape, fn):
    """Locate the first batch element for which ``fn`` raises."""
    for index in np.ndindex(*shape):
        try:
            fn(index)
        except np.linalg.LinAlgError:
            return index
    return None


def load_diagonal(A, loading):
    """Return ``A + loading * (tr(A) / n) * I``."""
    n = A.shape[-1]
    if loading == 0:
        return A
    mean_diag = np.real(np.trace(A, axis1=-2, axis2=-1)) / n
    return A + (loading * mean_diag)[..., None, None] * np.eye(n)


def hermitian_solve(A, b, loading=DEFAULT_LOADING):
    """Solve ``(A + loading * tr(A)/n * I) x = b`` for Hermitian PSD ``A``.

    The loaded matrix is Cholesky-factorized. ``b`` may be a vector
    ``(..., n)`` or a block of right-hand sides ``(..., n, k)``.

    >>> hermitian_solve(np.diag([2.0, 4.0]), np.array([1.0, 1.0]), loading=0)
    array([0.5 , 0.25])
    """
    A = np.asarray(A)
    if loading < 0:
        raise ValueError("loading must be non-negative")
    check_hermitian(A)
    b, vector = _as_columns(A, b)
    A = load_diagonal(hermitian_part(A), loading)
    batch = A.shape[:-2]
    try:
        chol = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        index = _first_bad(batch, lambda i: np.linalg.cholesky(A[i])) if batch else None
        raise NumericalError("matrix is singular or indefinite after loading", index) from None
    pivots = np.abs(np.diagonal(chol, axis1=-2, axis2=-1)) ** 2
    tiny = pivots.min(axis=-1) <= A.shape[-1] * np.finfo(float).eps * pivots.max(axis=-1)
    if np.any(tiny):
        index = tuple(int(i) for i in np.argwhere(np.atleast_1d(tiny))[0]) if batch else None
        raise NumericalError("matrix is numerically singular after loading", index)
    y = np.linalg.solve(chol, np.broadcast_to(b, batch + b.shape[-2:]))
    x = np.linalg.solve(np.conj(np.swapaxes(chol, -1, -2)), y)
    return x[..., 0] if vector else x


def pseudo_inverse_apply(A, b, rel_tol=DEFAULT_PINV_TOL):
    """Apply the Moore-Penrose pseudo-inverse of Hermitian ``A`` to ``b``.

    Eigenvalues at or below ``rel_tol`` times the largest eigenvalue
    magnitude are treated as zero. A zero matrix maps everything to zero.
    """
    A = np.asarray(A)
    check_hermitian(A)
    b, vector = _as_columns(A, b)
    w, V = np.linalg.eigh(hermitian_part(A))
    wmax = np.max(np.abs(w), axis=-1, keepdims=True)
    keep = np.abs(w) > rel_tol * wmax
    inv_w = np.where(keep, 1.0 / np.where(keep, w, 1.0), 0.0)
    x = V @ (inv_w[..., :, None] * (np.conj(np.swapaxes(V, -1, -2)) @ b))
    return x[..., 0] if vector else x


def fix_phase(v, tol=1e-12):
    """Rotate each vector so its first non-negligible entry is real positive."""
    mag = np.abs(v)
    first = np.argmax(mag > tol * mag.max(axis=-1, keepdims=True), axis=-1)
    lead = np.take_along_axis(v, first[..., None], axis=-1)
    lead_mag = np.abs(lead)
    phase = np.where(lead_mag > 0, lead / np.where(lead_mag > 0, lead_mag, 1.0), 1.0)
    return v * np.conj(phase)


def max_eigvec(B, return_value=False):
    """Unit-norm eigenvector of the largest eigenvalue of Hermitian ``B``.

    The phase is fixed so the first nonzero entry is real and positive.
    """
    B = np.asarray(B)
    check_hermitian(B)
    try:
        w, V = np.linalg.eigh(hermitian_part(B))
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition did not converge: {exc}") from None
    v = fix_phase(V[..., :, -1])
    v = v / np.linalg.norm(v, axis=-1, keepdims=True)
    if return_value:
        return v, w[..., -1]
    return v


def kron(A, B):
    """Kronecker product over the last two axes, broadcasting leading axes."""
    A = np.asarray(A)
    B = np.asarray(B)
    out = np.einsum("...ij,...kl->...ikjl", A, B)
    return out.reshape(out.shape[:-4] + (A.shape[-2] * B.shape[-2], A.shape[-1] * B.shape[-1]))


def kron_vec(a, b):
    """Kronecker product of vectors: entry ``i * len(b) + j`` is ``a[i] * b[j]``."""
    out = np.asarray(a)[..., :, None] * np.asarray(b)[..., None, :]
    return out.reshape(out.shape[:-2] + (-1,))
