"""Distortionless beamformers: wMPDR, MPDR, MVDR and the convolutional WPD form.

All of them share one closed form, ``q = R^{-1} v / (v^H R^{-1} v)``; they
differ only in the covariance ``R`` the caller supplies.
"""

import numpy as np

from .numerics import DEFAULT_LOADING, NumericalError, hermitian_solve


def _distortionless(R, vtilde, loading):
    vtilde = np.asarray(vtilde)
    r = hermitian_solve(R, vtilde, loading)
    gain = np.sum(np.conj(vtilde) * r, axis=-1, keepdims=True)
    scale = np.sqrt(np.sum(np.abs(vtilde) ** 2, axis=-1, keepdims=True)
                    * np.sum(np.abs(r) ** 2, axis=-1, keepdims=True))
    degenerate = np.abs(gain) <= 1e-14 * scale
    if np.any(degenerate):
        index = tuple(int(i) for i in np.argwhere(degenerate[..., 0])[0]) if gain.ndim > 1 else None
        raise NumericalError("steering vector is (numerically) outside the range of R", index)
    return r / gain


def wmpdr(R, vtilde, loading=DEFAULT_LOADING):
    """Weighted MPDR beamformer for a variance-normalized covariance ``R``.

    >>> wmpdr(np.eye(2), np.array([1.0, 0.0]))
    array([1.+0.j, 0.+0.j])
    """
    return _distortionless(R, vtilde, loading)


def mpdr(R_x, vtilde, loading=DEFAULT_LOADING):
    """MPDR beamformer; ``R_x`` is the plain (unweighted) observation covariance."""
    return _distortionless(R_x, vtilde, loading)


def mvdr(R_noise, vtilde, loading=DEFAULT_LOADING):
    """MVDR beamformer for a noise(-plus-interference) covariance."""
    return _distortionless(R_noise, vtilde, loading)


def pad_steering(vtilde, length):
    """Zero-pad ``(..., M)`` steering vectors to ``length`` entries."""
    vtilde = np.asarray(vtilde)
    out = np.zeros(vtilde.shape[:-1] + (length,), dtype=np.result_type(vtilde, complex))
    out[..., : vtilde.shape[-1]] = vtilde
    return out


def wpd_miso(R_joint, vtilde, loading=DEFAULT_LOADING):
    """Convolutional (MISO) beamformer ``w`` acting on the joint stack ``[x_t; xbar_t]``.

    The constraint uses the RTF padded with zeros over the delayed taps, so
    only the current-frame coefficients are constrained.
    """
    return _distortionless(R_joint, pad_steering(vtilde, np.shape(R_joint)[-1]), loading)


def apply(w, frames):
    """Beamformer output ``y_t = w^H v_t`` for frames ``(..., T, n)``."""
    w = np.asarray(w)
    frames = np.asarray(frames)
    if w.shape[-1] != frames.shape[-1]:
        raise ValueError(f"beamformer length {w.shape[-1]} != frame length {frames.shape[-1]}")
    return np.einsum("...tn,...n->...t", frames, np.conj(w))


def constraint_residual(q, vtilde):
    """``|q^H v - 1|`` (broadcast over leading axes)."""
    return np.abs(np.sum(np.conj(q) * np.asarray(vtilde), axis=-1) - 1.0)
