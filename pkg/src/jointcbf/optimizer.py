"""Iterative joint optimization of convolutional beamformers.

Every method alternates between a filter update for fixed time-varying
variances and the variance update ``lambda_t <- |y_t|^2``. Frequency bins are
independent; bins sharing a filter length are processed as one batch.

Inputs are a :class:`~jointcbf.stft.Spectrogram` with data ``(M, T, F)`` and
masks ``(I, T, F)``; outputs are ``(I, T, F)`` estimates of each source's
desired signal at the reference microphone.
"""

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from . import beamformer as bf
from .covariance import accumulate, beam_output_cov, floor_variance
from .numerics import DEFAULT_LOADING, DEFAULT_PINV_TOL, NumericalError
from .rtf import estimate_steering, masked_covariances
from .stacking import StackConfig, stack
from .wpe import (
    DEFAULT_MAX_ROWS,
    apply_prediction,
    complement_basis,
    complement_variance,
    multiple_target_wpe_brute,
    multiple_target_wpe_fast,
    single_target_wpe,
)

METHODS = (
    "source_wise",
    "source_packed_fast",
    "source_packed_brute",
    "cascade_mpdr",
    "cascade_mvdr",
    "cascade_wmpdr_separate",
    "cascade_mpdr_integrated",
    "miso_direct",
)

# (beamformer, variance scheme) for each cascade method
CASCADES = {
    "cascade_mpdr": ("mpdr", "separate"),
    "cascade_mvdr": ("mvdr", "separate"),
    "cascade_wmpdr_separate": ("wmpdr", "separate"),
    "cascade_mpdr_integrated": ("mpdr", "integrated"),
}

# upper band edge in Hz -> filter length L
DEFAULT_BAND_TAPS = ((800.0, 20), (1500.0, 16), (math.inf, 8))


class BinError(NumericalError):
    """A numerical failure in one frequency bin."""

    def __init__(self, message, bin_index):
        super().__init__(f"bin {bin_index}: {message}", bin_index)
        self.bin_index = bin_index


@dataclass
class RunConfig:
    method: str = "source_wise"
    iterations: int = 10
    delta: int = 4
    taps: Optional[int] = None  # uniform L; overrides band_taps when set
    band_taps: Tuple[Tuple[float, int], ...] = DEFAULT_BAND_TAPS
    variance_floor: float = 1e-6
    loading: float = DEFAULT_LOADING
    pinv_tol: float = DEFAULT_PINV_TOL
    complement: bool = True
    unit_bf_init: bool = True  # first beamformer uses lambda = 1
    ref: int = 0
    threads: int = 1
    brute_max_rows: int = DEFAULT_MAX_ROWS

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if self.variance_floor <= 0:
            raise ValueError("variance_floor must be positive")
        self.band_taps = tuple((float(edge), int(L)) for edge, L in self.band_taps)

    def stack_config(self, frequency):
        if self.taps is not None:
            return StackConfig(self.taps, self.delta)
        for edge, L in self.band_taps:
            if frequency < edge:
                return StackConfig(L, self.delta)
        return StackConfig(self.band_taps[-1][1], self.delta)


@dataclass
class Trace:
    """Per-iteration record of one optimization run."""

    objective: List[float] = field(default_factory=list)
    elapsed: List[float] = field(default_factory=list)
    residual: List[float] = field(default_factory=list)

    @property
    def iterations(self):
        return len(self.objective)

    def _merge(self, other):
        if not self.objective:
            self.objective = list(other.objective)
            self.elapsed = list(other.elapsed)
            self.residual = list(other.residual)
            return
        self.objective = [a + b for a, b in zip(self.objective, other.objective)]
        self.elapsed = [a + b for a, b in zip(self.elapsed, other.elapsed)]
        self.residual = [max(a, b) for a, b in zip(self.residual, other.residual)]


def objective(y, lam):
    """Negative log-likelihood ``sum_i (1/T) sum_t (|y|^2 / lam + log lam)``, summed over bins.

    ``y`` and ``lam`` have frames on the last axis; all other axes are summed.
    """
    y = np.asarray(y)
    lam = np.asarray(lam, dtype=float)
    per_track = np.mean(np.abs(y) ** 2 / lam + np.log(lam), axis=-1)
    return float(np.sum(per_track))


def update_variances(y, floor=1e-6):
    """``lambda_t <- |y_t|^2``, floored relative to the track mean."""
    return floor_variance(np.abs(np.asarray(y)) ** 2, floor)


def initial_variance(frames, floor=1e-6):
    """``||x_t||^2 / M`` for frames ``(..., T, M)``."""
    return floor_variance(np.mean(np.abs(np.asarray(frames)) ** 2, axis=-1), floor)


# ---------------------------------------------------------------------------
# per-band kernels; x is (B, T, M), gamma is (I, B, T) or (B, T)
# ---------------------------------------------------------------------------


def _rtf(z, gamma, cfg, steering):
    if steering is not None:
        return steering
    R_i, R_not = masked_covariances(z, gamma)
    return estimate_steering(R_i, R_not, cfg.ref, cfg.loading).vtilde


def _dereverb_single(x, st, lam, cfg):
    if st.xbar.shape[-1] == 0:
        return x.astype(complex)
    G = single_target_wpe(accumulate(st, lam), cfg.loading)
    return apply_prediction(x, st, G)


def _band_source_wise(x, gamma, sc, cfg, steering=None):
    st = stack(x, sc)
    lam = initial_variance(x, cfg.variance_floor)
    trace = Trace()
    y = None
    for it in range(cfg.iterations):
        t0 = time.perf_counter()
        z = _dereverb_single(x, st, lam, cfg)
        vt = _rtf(z, gamma, cfg, steering)
        lam_bf = np.ones_like(lam) if (it == 0 and cfg.unit_bf_init) else lam
        q = bf.wmpdr(beam_output_cov(z, lam_bf), vt, cfg.loading)
        y = bf.apply(q, z)
        lam = update_variances(y, cfg.variance_floor)
        trace.elapsed.append(time.perf_counter() - t0)
        trace.objective.append(objective(y, lam))
        trace.residual.append(float(np.max(bf.constraint_residual(q, vt))))
    return y, trace


def _band_miso(x, gamma, sc, cfg, steering=None):
    st = stack(x, sc)
    lam = initial_variance(x, cfg.variance_floor)
    trace = Trace()
    y = None
    for _ in range(cfg.iterations):
        t0 = time.perf_counter()
        cov = accumulate(st, lam)
        if steering is None:
            # the RTF comes from the single-target WPE output for the same variances
            z = x if st.xbar.shape[-1] == 0 else apply_prediction(
                x, st, single_target_wpe(cov, cfg.loading))
            vt = _rtf(z, gamma, cfg, None)
        else:
            vt = steering
        w = bf.wpd_miso(cov.R_joint, vt, cfg.loading)
        y = bf.apply(w, st.joint)
        lam = update_variances(y, cfg.variance_floor)
        trace.elapsed.append(time.perf_counter() - t0)
        trace.objective.append(objective(y, lam))
        trace.residual.append(float(np.max(bf.constraint_residual(w[..., : x.shape[-1]], vt))))
    return y, trace


def _band_source_packed(x, gamma, sc, cfg, brute=False):
    B, T, M = x.shape
    I = gamma.shape[0]
    st = stack(x, sc)
    lam = np.stack([initial_variance(x, cfg.variance_floor)] * I)  # (I, B, T)
    Q = np.broadcast_to(np.eye(M, dtype=complex)[:, :I], (B, M, I)).copy()
    z = x.astype(complex)
    use_complement = cfg.complement and not brute and M > I
    trace = Trace()
    Y = np.empty((I, B, T), dtype=complex)
    for it in range(cfg.iterations):
        t0 = time.perf_counter()
        if st.xbar.shape[-1] > 0:
            if brute:
                G = multiple_target_wpe_brute(x, st, Q, np.moveaxis(lam, 0, 1), cfg.pinv_tol,
                                              cfg.brute_max_rows)
            else:
                covs = [accumulate(st, lam[i]) for i in range(I)]
                comp_cov = basis = None
                if use_complement:
                    basis = complement_basis(Q)
                    lam_perp = floor_variance(complement_variance(z, basis), cfg.variance_floor)
                    comp_cov = accumulate(st, lam_perp)
                G = multiple_target_wpe_fast(covs, Q, use_complement, comp_cov, basis, cfg.pinv_tol)
            z = apply_prediction(x, st, G)
        residual = 0.0
        for i in range(I):
            vt = _rtf(z, gamma[i], cfg, None)
            lam_bf = np.ones_like(lam[i]) if (it == 0 and cfg.unit_bf_init) else lam[i]
            q = bf.wmpdr(beam_output_cov(z, lam_bf), vt, cfg.loading)
            Q[..., i] = q
            Y[i] = bf.apply(q, z)
            residual = max(residual, float(np.max(bf.constraint_residual(q, vt))))
        lam = update_variances(Y, cfg.variance_floor)
        trace.elapsed.append(time.perf_counter() - t0)
        trace.objective.append(objective(Y, lam))
        trace.residual.append(residual)
    return Y, trace


def _band_cascade(x, gamma, sc, cfg, beamformer, scheme):
    """WPE followed by a beamformer with separate or integrated variance updates.

    ``separate``: one dereverberation filter shared by all sources whose variance
    is the power of its own output. ``integrated``: one filter per source whose
    variance is the power of that source's beamformer output.
    """
    I = gamma.shape[0]
    st = stack(x, sc)
    lam_in = initial_variance(x, cfg.variance_floor)
    lam_wpe = np.stack([lam_in] * (1 if scheme == "separate" else I))
    lam_bf = np.ones((I,) + lam_in.shape)
    trace = Trace()
    Y = np.empty((I,) + lam_in.shape, dtype=complex)
    for it in range(cfg.iterations):
        t0 = time.perf_counter()
        residual = 0.0
        shared = _dereverb_single(x, st, lam_wpe[0], cfg) if scheme == "separate" else None
        for i in range(I):
            z = shared if shared is not None else _dereverb_single(x, st, lam_wpe[i], cfg)
            if beamformer == "mvdr":
                R_i, R_not = masked_covariances(z, gamma[i])
                vt = estimate_steering(R_i, R_not, cfg.ref, cfg.loading).vtilde
                q = bf.mvdr(R_not, vt, cfg.loading)
            else:
                vt = _rtf(z, gamma[i], cfg, None)
                if beamformer == "mpdr":
                    q = bf.mpdr(beam_output_cov(z, np.ones_like(lam_in)), vt, cfg.loading)
                else:
                    weights = lam_bf[i] if scheme == "separate" else (
                        np.ones_like(lam_in) if (it == 0 and cfg.unit_bf_init) else lam_wpe[i])
                    q = bf.wmpdr(beam_output_cov(z, weights), vt, cfg.loading)
            Y[i] = bf.apply(q, z)
            residual = max(residual, float(np.max(bf.constraint_residual(q, vt))))
        lam_bf = update_variances(Y, cfg.variance_floor)
        if scheme == "separate":
            lam_wpe = initial_variance(shared, cfg.variance_floor)[None]
        else:
            lam_wpe = lam_bf
        trace.elapsed.append(time.perf_counter() - t0)
        trace.objective.append(objective(Y, lam_bf))
        trace.residual.append(residual)
    return Y, trace


# ---------------------------------------------------------------------------
# band planning and dispatch
# ---------------------------------------------------------------------------


def band_plan(spec, cfg):
    """Group bin indices by stack configuration."""
    groups = {}
    for k, freq in enumerate(spec.bin_frequencies()):
        groups.setdefault(cfg.stack_config(freq), []).append(k)
    return [(sc, np.array(idx)) for sc, idx in groups.items()]


def _check_masks(spec, masks, n_required=1):
    masks = np.asarray(masks, dtype=float)
    if masks.ndim == 2:
        masks = masks[None]
    if masks.shape[1:] != (spec.n_frames, spec.n_bins):
        raise ValueError(f"masks {masks.shape} do not match spectrogram (T={spec.n_frames}, "
                         f"F={spec.n_bins})")
    if masks.shape[0] < n_required:
        raise ValueError(f"need masks for {n_required} sources, got {masks.shape[0]}")
    if np.any(masks < 0) or np.any(masks > 1):
        raise ValueError("mask values must lie in [0, 1]")
    if masks.shape[0] > spec.n_channels:
        raise ValueError("more sources than microphones")
    return masks


def _run(spec, masks, cfg, kernel, out_leading, steering=None):
    """Apply ``kernel(x, gamma, sc, steering)`` band by band (and chunk by chunk)."""
    x_all = np.moveaxis(spec.data, 0, -1).swapaxes(0, 1)  # (F, T, M)
    gamma_all = np.moveaxis(masks, -1, -2)  # (I, F, T)
    out = np.empty(out_leading + (spec.n_bins, spec.n_frames), dtype=complex)
    jobs = []
    for sc, idx in band_plan(spec, cfg):
        for chunk in np.array_split(idx, min(cfg.threads, len(idx))):
            jobs.append((sc, chunk))

    def work(job):
        sc, chunk = job
        st_steer = None if steering is None else steering[chunk]
        try:
            return kernel(x_all[chunk], gamma_all[:, chunk], sc, st_steer)
        except NumericalError as exc:
            bad = chunk[exc.index[0]] if exc.index else chunk[0]
            raise BinError(str(exc), int(bad)) from exc

    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as pool:
            results = list(pool.map(work, jobs))
    else:
        results = [work(job) for job in jobs]
    trace = Trace()
    for (_, chunk), (y, part) in zip(jobs, results):
        out[..., chunk, :] = y
        trace._merge(part)
    return np.swapaxes(out, -1, -2), trace  # (..., T, F)


def run_source_wise(spec, masks, target, cfg=None, steering=None):
    """Source-wise factorized optimization for one target source.

    ``steering`` optionally fixes the RTFs, shape ``(F, M)``, instead of
    estimating them every iteration. Returns ``(y (T, F), Trace)``.
    """
    cfg = cfg or RunConfig()
    masks = _check_masks(spec, masks, target + 1)

    def kernel(x, gamma, sc, steer):
        return _band_source_wise(x, gamma[target], sc, cfg, steer)

    return _run(spec, masks, cfg, kernel, (), steering)


def run_miso_direct(spec, masks, target, cfg=None, steering=None):
    """Direct closed-form optimization of the MISO convolutional beamformer."""
    cfg = cfg or RunConfig()
    masks = _check_masks(spec, masks, target + 1)

    def kernel(x, gamma, sc, steer):
        return _band_miso(x, gamma[target], sc, cfg, steer)

    return _run(spec, masks, cfg, kernel, (), steering)


def run_source_packed(spec, masks, cfg=None):
    """Source-packed factorized optimization of all sources at once.

    ``cfg.method == "source_packed_brute"`` uses the directly summed normal
    equations without the orthogonal-complement extension.
    """
    cfg = cfg or RunConfig(method="source_packed_fast")
    masks = _check_masks(spec, masks)
    brute = cfg.method == "source_packed_brute"

    def kernel(x, gamma, sc, _):
        return _band_source_packed(x, gamma, sc, cfg, brute)

    return _run(spec, masks, cfg, kernel, (masks.shape[0],))


def run_cascade(spec, masks, cfg=None, beamformer=None, scheme=None):
    """WPE + beamformer cascades; ``beamformer``/``scheme`` default from ``cfg.method``."""
    cfg = cfg or RunConfig(method="cascade_mpdr")
    preset = CASCADES.get(cfg.method, (None, None))
    beamformer = beamformer or preset[0]
    scheme = scheme or preset[1]
    if beamformer not in ("mpdr", "mvdr", "wmpdr") or scheme not in ("separate", "integrated"):
        raise ValueError(f"unsupported cascade {beamformer!r}/{scheme!r}")
    masks = _check_masks(spec, masks)

    def kernel(x, gamma, sc, _):
        return _band_cascade(x, gamma, sc, cfg, beamformer, scheme)

    return _run(spec, masks, cfg, kernel, (masks.shape[0],))


def enhance(spec, masks, cfg):
    """Estimate every source with ``cfg.method``; returns ``(Y (I, T, F), [Trace, ...])``."""
    masks = _check_masks(spec, masks)
    if cfg.method in ("source_wise", "miso_direct"):
        run = run_source_wise if cfg.method == "source_wise" else run_miso_direct
        outputs, traces = zip(*(run(spec, masks, i, cfg) for i in range(masks.shape[0])))
        return np.stack(outputs), list(traces)
    if cfg.method.startswith("source_packed"):
        Y, trace = run_source_packed(spec, masks, cfg)
    else:
        Y, trace = run_cascade(spec, masks, cfg)
    return Y, [trace]
