"""Delayed observation stacks and the vectorized prediction structures.

Frame data is handled as ``(..., T, M)`` arrays: one row per frame, one column
per channel, with any leading axes (usually frequency bins) broadcast.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class StackConfig:
    """Filter length ``L`` and prediction delay ``delta`` (both in frames).

    ``L == 1`` denotes a non-convolutional filter without delayed taps;
    otherwise ``L > delta >= 1``.
    """

    L: int
    delta: int

    def __post_init__(self):
        if self.delta < 1 or self.L < 1:
            raise ValueError("L and delta must be positive")
        if self.L != 1 and self.L <= self.delta:
            raise ValueError(f"need L > delta (got L={self.L}, delta={self.delta})")

    @property
    def taps(self):
        """Number of delayed frames, ``L - delta`` (zero when ``L == 1``)."""
        return 0 if self.L == 1 else self.L - self.delta


@dataclass
class StackedObservation:
    xbar: np.ndarray  # (..., T, M * taps)
    joint: np.ndarray  # (..., T, M * (taps + 1))
    n_channels: int

    @property
    def current(self):
        return self.joint[..., : self.n_channels]


def stack(frames, cfg):
    """Stack ``x_{t-delta}, ..., x_{t-L+1}`` for every frame ``t``.

    Frames before the start of the signal are zero.

    >>> stack(np.array([[1.0], [2.0], [3.0]]), StackConfig(2, 1)).xbar[:, 0]
    array([0., 1., 2.])
    """
    x = np.asarray(frames)
    if x.ndim < 2:
        raise ValueError("frames must have shape (..., T, M)")
    T, M = x.shape[-2:]
    K = cfg.taps
    xbar = np.zeros(x.shape[:-1] + (M * K,), dtype=np.result_type(x, np.complex128))
    for k in range(K):
        d = cfg.delta + k
        if d < T:
            xbar[..., d:, k * M:(k + 1) * M] = x[..., : T - d, :]
    joint = np.concatenate([x.astype(xbar.dtype), xbar], axis=-1)
    return StackedObservation(xbar, joint, M)


def big_X(xbar_t, M):
    """``I_M (x) xbar_t^T``: the ``M x M^2 K`` matrix with ``big_X @ g == G^H xbar_t``."""
    xbar_t = np.asarray(xbar_t)
    n = xbar_t.shape[-1]
    if n % M:
        raise ValueError(f"stacked length {n} is not a multiple of M={M}")
    out = np.zeros(xbar_t.shape[:-1] + (M, M * n), dtype=np.result_type(xbar_t, np.complex128))
    for m in range(M):
        out[..., m, m * n:(m + 1) * n] = xbar_t
    return out


def vectorize_filter(G):
    """Concatenate the conjugated columns of ``G`` (``(..., MK, M)`` -> ``(..., M * MK)``)."""
    G = np.asarray(G)
    return np.conj(np.swapaxes(G, -1, -2)).reshape(G.shape[:-2] + (-1,))


def unvectorize_filter(g, M):
    """Inverse of :func:`vectorize_filter`."""
    g = np.asarray(g)
    return np.swapaxes(np.conj(g.reshape(g.shape[:-1] + (M, -1))), -1, -2)
