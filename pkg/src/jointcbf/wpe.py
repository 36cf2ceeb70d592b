"""Weighted prediction error (WPE) dereverberation filters.

Prediction matrices ``G`` have shape ``(..., M * taps, M)``; ``z = x - G^H xbar``.
The multiple-target filter is solved in its vectorized form ``g`` (see
:func:`jointcbf.stacking.vectorize_filter`) from the normal equations
``Psi g = psi``.
"""

import warnings

import numpy as np
import scipy.linalg

from .numerics import (
    DEFAULT_LOADING,
    DEFAULT_PINV_TOL,
    NumericalError,
    hermitian_part,
    hermitian_solve,
    kron,
    kron_vec,
    pseudo_inverse_apply,
)
from .stacking import big_X, unvectorize_filter

DEFAULT_MAX_ROWS = 4096


class ProblemTooLarge(MemoryError):
    pass


def apply_prediction(frames, stacked, G):
    """Prediction residual ``z_t = x_t - G^H xbar_t`` for every frame."""
    x = np.asarray(frames)
    G = np.asarray(G)
    if G.shape[-2] != stacked.xbar.shape[-1] or G.shape[-1] != x.shape[-1]:
        raise ValueError(f"filter shape {G.shape} does not match data")
    return x - stacked.xbar @ np.conj(G)


def single_target_wpe(cov, loading=DEFAULT_LOADING):
    """Per-source WPE filter ``Rbar_x^{-1} P_x`` (loaded Hermitian solve)."""
    if cov.Rbar_x.shape[-1] == 0:
        return np.zeros(cov.P_x.shape, dtype=complex)
    return hermitian_solve(cov.Rbar_x, cov.P_x, loading)


def complement_basis(Q):
    """Orthonormal basis ``(..., M, M - I)`` of the orthogonal complement of ``span(Q)``.

    Built by QR-decomposing the projector onto the complement; the projector
    has rank ``M - I``, and column pivoting puts its range first.
    """
    Q = np.asarray(Q)
    M, I = Q.shape[-2:]
    if I >= M:
        return np.zeros(Q.shape[:-1] + (0,), dtype=complex)
    proj = np.eye(M) - Q @ np.linalg.pinv(Q)
    out = np.empty(Q.shape[:-1] + (M - I,), dtype=complex)
    for index in np.ndindex(*Q.shape[:-2]):
        basis, _, _ = scipy.linalg.qr(proj[index], pivoting=True)
        out[index] = basis[:, : M - I]
    return out


def complement_variance(z_frames, basis):
    """Shared variance of the auxiliary outputs: ``mean_j |b_j^H z_t|^2``."""
    proj = np.asarray(z_frames) @ np.conj(basis)
    return np.mean(np.abs(proj) ** 2, axis=-1)


def psi_fast(covs, Q, complement_cov=None, complement_basis_=None):
    """Normal equations assembled from per-source covariances via Kronecker products.

    ``Psi = sum_i (q_i q_i^H) (x) Rbar_i^T`` and ``psi = sum_i q_i (x) conj(P_i q_i)``,
    optionally extended by the orthogonal-complement terms.
    """
    Q = np.asarray(Q)
    pairs = [(covs[i], Q[..., :, i:i + 1]) for i in range(Q.shape[-1])]
    if complement_cov is not None:
        if complement_basis_ is None:
            complement_basis_ = complement_basis(Q)
        pairs.append((complement_cov, complement_basis_))
    Psi = 0
    psi = 0
    for cov, B in pairs:
        BBh = B @ np.conj(np.swapaxes(B, -1, -2))
        Psi = Psi + kron(BBh, np.swapaxes(cov.Rbar_x, -1, -2))
        PB = cov.P_x @ B
        for j in range(B.shape[-1]):
            psi = psi + kron_vec(B[..., :, j], np.conj(PB[..., :, j]))
    return hermitian_part(Psi), psi


def psi_brute(frames, xbar, Q, lambdas, max_rows=DEFAULT_MAX_ROWS):
    """Normal equations by direct summation of ``Xbar_t^H Phi_t Xbar_t`` over frames.

    ``lambdas`` has shape ``(..., I, T)`` (one variance track per column of ``Q``).
    Intended as a reference path; it is slow by design.
    """
    x = np.asarray(frames)
    Q = np.asarray(Q)
    M = x.shape[-1]
    T = x.shape[-2]
    n = M * xbar.shape[-1]
    if n > max_rows:
        raise ProblemTooLarge(f"brute-force system has {n} rows (cap {max_rows})")
    batch = x.shape[:-2]
    Psi = np.zeros(batch + (n, n), dtype=complex)
    psi = np.zeros(batch + (n,), dtype=complex)
    for index in np.ndindex(*batch):
        q = Q[index]
        lam = np.asarray(lambdas[index], dtype=float)
        # Phi_t = sum_i q_i q_i^H / lam_t^(i), shape (T, M, M)
        Phi = np.einsum("mi,ni,it->tmn", q, np.conj(q), 1.0 / lam)
        Xt = big_X(xbar[index], M)
        PhiX = Phi @ Xt
        XtH = np.conj(np.swapaxes(Xt, -1, -2))
        Psi[index] = np.sum(XtH @ PhiX, axis=0) / T
        psi[index] = np.sum(XtH @ (Phi @ x[index][..., None]), axis=0)[:, 0] / T
    return hermitian_part(Psi), psi


def _solve_vectorized(Psi, psi, M, rel_tol):
    g = pseudo_inverse_apply(Psi, psi, rel_tol)
    return unvectorize_filter(g, M)


def multiple_target_wpe_brute(frames, stacked, Q, lambdas, rel_tol=DEFAULT_PINV_TOL,
                              max_rows=DEFAULT_MAX_ROWS):
    """Shared prediction matrix from the directly summed normal equations."""
    Psi, psi = psi_brute(frames, stacked.xbar, Q, lambdas, max_rows)
    return _solve_vectorized(Psi, psi, frames.shape[-1], rel_tol)


def multiple_target_wpe_fast(covs, Q, include_complement=False, complement_cov=None,
                             complement_basis_=None, rel_tol=DEFAULT_PINV_TOL):
    """Shared prediction matrix from per-source covariances.

    With ``include_complement`` the ``M - I`` auxiliary outputs spanning the
    orthogonal complement of ``Q`` also enter the normal equations; their
    covariances (``complement_cov``) must be accumulated by the caller with
    the shared auxiliary variance.
    """
    Q = np.asarray(Q)
    M, I = Q.shape[-2:]
    if include_complement and I >= M:
        warnings.warn("complement requested but there is no orthogonal complement (I == M)")
        include_complement = False
    if include_complement and complement_cov is None:
        raise ValueError("complement_cov is required when include_complement is set")
    Psi, psi = psi_fast(covs, Q, complement_cov if include_complement else None,
                        complement_basis_)
    return _solve_vectorized(Psi, psi, M, rel_tol)


def prediction_criterion(frames, stacked, G, Q, lambdas):
    """``(1/T) sum_t ||x_t - G^H xbar_t||^2_{Phi_t}``, the quantity the shared filter minimizes."""
    z = apply_prediction(frames, stacked, G)
    proj = z @ np.conj(Q)  # (..., T, I): q_i^H z_t
    lam = np.swapaxes(np.asarray(lambdas, dtype=float), -1, -2)
    return np.mean(np.sum(np.abs(proj) ** 2 / lam, axis=-1), axis=-1)


__all__ = [
    "NumericalError",
    "ProblemTooLarge",
    "apply_prediction",
    "complement_basis",
    "complement_variance",
    "multiple_target_wpe_brute",
    "multiple_target_wpe_fast",
    "prediction_criterion",
    "psi_brute",
    "psi_fast",
    "single_target_wpe",
]
