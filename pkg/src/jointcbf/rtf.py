"""Mask-driven steering vector and relative transfer function (RTF) estimation."""

from dataclasses import dataclass

import numpy as np

from .numerics import (
    DEFAULT_LOADING,
    NumericalError,
    hermitian_part,
    load_diagonal,
    max_eigvec,
)

MASK_CLAMP = 1e-4


@dataclass
class Steering:
    """Steering vector ``v`` and its RTF ``vtilde = v / v[ref]`` (shape ``(..., M)``)."""

    v: np.ndarray
    vtilde: np.ndarray
    ref: int = 0


def to_rtf(v, ref=0):
    v = np.asarray(v)
    lead = v[..., ref:ref + 1]
    if np.any(np.abs(lead) <= 1e-14 * np.linalg.norm(v, axis=-1, keepdims=True)):
        raise NumericalError("reference entry of the steering vector vanishes")
    vtilde = v / lead
    vtilde[..., ref] = 1.0
    return vtilde


def masked_covariances(z_frames, gamma, clamp=MASK_CLAMP):
    """Mask-weighted covariances of the target and of everything else.

    ``z_frames`` is ``(..., T, M)`` and ``gamma`` ``(..., T)``. Masks are clipped
    to ``[clamp, 1 - clamp]`` before weighting.
    """
    z = np.asarray(z_frames)
    gamma = np.asarray(gamma, dtype=float)
    if gamma.shape != z.shape[:-1]:
        raise ValueError(f"mask shape {gamma.shape} does not match frames {z.shape[:-1]}")
    if np.any(np.sum(gamma, axis=-1) <= 0) or np.any(np.sum(1 - gamma, axis=-1) <= 0):
        raise ValueError("mask is all-zero or all-one; covariances are undefined")
    g = np.clip(gamma, clamp, 1 - clamp)
    return _weighted(z, g), _weighted(z, 1 - g)


def _weighted(z, weight):
    R = np.swapaxes(z * weight[..., :, None], -1, -2) @ np.conj(z)
    return hermitian_part(R / weight.sum(axis=-1)[..., None, None])


def estimate_steering(R_i, R_not_i, ref=0, loading=DEFAULT_LOADING):
    """Principal generalized eigenvector with noise-covariance whitening.

    With ``R_not_i = C C^H`` (Cholesky, after diagonal loading), the principal
    eigenvector ``e`` of ``C^{-1} R_i C^{-H}`` gives ``u = C^{-H} e``, and the
    steering vector is ``v = R_not_i u = C e``.
    """
    R_i = hermitian_part(np.asarray(R_i))
    loaded = load_diagonal(hermitian_part(np.asarray(R_not_i)), loading)
    try:
        chol = np.linalg.cholesky(loaded)
    except np.linalg.LinAlgError:
        raise NumericalError("whitening failed: covariance of the other signals is singular") from None
    left = np.linalg.solve(chol, R_i)
    whitened = hermitian_part(np.linalg.solve(chol, np.conj(np.swapaxes(left, -1, -2))))
    e = max_eigvec(whitened)
    v = np.einsum("...mn,...n->...m", chol, e)
    return Steering(v, to_rtf(v, ref), ref)


def generalized_eigvec(steering, R_not_i, loading=DEFAULT_LOADING):
    """Recover ``u`` with ``R_i u = lambda R_not_i u`` from an estimated steering vector."""
    loaded = load_diagonal(hermitian_part(np.asarray(R_not_i)), loading)
    return np.linalg.solve(loaded, steering.v[..., None])[..., 0]
