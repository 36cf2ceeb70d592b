"""Variance-normalized covariance accumulation."""

from dataclasses import dataclass

import numpy as np

from .numerics import hermitian_part

DEFAULT_FLOOR = 1e-6


@dataclass
class CovarianceSet:
    """Blocks of the variance-normalized spatio-temporal covariance.

    ``R_joint == [[R_x, P_x^H], [P_x, Rbar_x]]``.
    """

    R_joint: np.ndarray
    n_channels: int

    @property
    def R_x(self):
        M = self.n_channels
        return self.R_joint[..., :M, :M]

    @property
    def P_x(self):
        M = self.n_channels
        return self.R_joint[..., M:, :M]

    @property
    def Rbar_x(self):
        M = self.n_channels
        return self.R_joint[..., M:, M:]


def floor_variance(lam, eps=DEFAULT_FLOOR):
    """``max(lam_t, eps * mean_t lam_t)`` along the last (frame) axis.

    An all-zero track is lifted to the smallest positive double so that the
    weights stay valid; the singular covariances then fail downstream.
    """
    lam = np.asarray(lam, dtype=float)
    floor = np.maximum(eps * lam.mean(axis=-1, keepdims=True), np.finfo(float).tiny)
    return np.maximum(lam, floor)


def _check_weights(lam, T):
    lam = np.asarray(lam, dtype=float)
    if T == 0:
        raise ValueError("no frames to accumulate")
    if lam.shape[-1] != T:
        raise ValueError(f"variance track has {lam.shape[-1]} frames, data has {T}")
    if not np.all(lam > 0):
        raise ValueError("variances must be positive; apply floor_variance first")
    return lam


def weighted_cov(frames, lam):
    """``(1/T) sum_t v_t v_t^H / lam_t`` for ``frames`` of shape ``(..., T, n)``."""
    frames = np.asarray(frames)
    T = frames.shape[-2]
    lam = _check_weights(lam, T)
    weighted = frames / lam[..., :, None]
    R = np.swapaxes(weighted, -1, -2) @ np.conj(frames) / T
    return hermitian_part(R)


def accumulate(stacked, lam):
    """Variance-normalized covariances of a stacked observation."""
    return CovarianceSet(weighted_cov(stacked.joint, lam), stacked.n_channels)


def beam_output_cov(z_frames, lam):
    """Spatial covariance of prediction output, normalized by ``lam``."""
    return weighted_cov(z_frames, lam)
