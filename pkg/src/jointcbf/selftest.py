"""Quick built-in invariant checks used by ``jointcbf selftest``.

Each check returns ``(passed, detail)``; :func:`run_checks` yields
``(name, passed, detail)`` tuples. The suite takes a few seconds.
"""

import os
import tempfile

import numpy as np

from . import beamformer as bf
from .covariance import accumulate, beam_output_cov
from .maskio import read_masks, write_masks
from .optimizer import RunConfig, run_miso_direct, run_source_wise
from .rtf import estimate_steering, masked_covariances
from .sim import Scene, generate, oracle_masks
from .stacking import StackConfig, stack
from .stft import analyze, synthesize
from .wpe import psi_brute, psi_fast


def _crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def check_stft(rng, threads):
    x = rng.standard_normal((2, 3000))
    err = np.max(np.abs(synthesize(analyze(x, 64, 16)) - x))
    return err < 1e-6, f"round-trip error {err:.1e}"


def check_fast_normal_equations(rng, threads):
    worst = 0.0
    for M, I, taps in ((2, 1, 1), (3, 2, 2), (4, 3, 4)):
        T = 50
        x = _crandn(rng, T, M)
        st = stack(x, StackConfig(taps + 1, 1))
        Q = _crandn(rng, M, I)
        lam = rng.uniform(0.5, 2.0, (I, T))
        Psi_f, psi_f = psi_fast([accumulate(st, lam[i]) for i in range(I)], Q)
        Psi_b, psi_b = psi_brute(x, st.xbar, Q, lam)
        worst = max(worst, np.linalg.norm(Psi_f - Psi_b) / np.linalg.norm(Psi_b),
                    np.linalg.norm(psi_f - psi_b) / np.linalg.norm(psi_b))
    return worst < 1e-10, f"max relative error {worst:.1e}"


def _scene(rng, noise=0.1, frames=200):
    scene = Scene(n_mics=3, n_bins=5, late_taps=5, delta=2, noise_level=noise)
    return generate(scene, frames, int(rng.integers(1 << 31)))


def check_factorization_equivalence(rng, threads):
    spec, gt = _scene(rng)
    masks = oracle_masks(gt)
    # both paths must see the same variances, so no unit-variance first beamformer
    cfg = RunConfig(iterations=3, delta=2, taps=5, loading=0.0, unit_bf_init=False,
                    threads=threads)
    fixed = gt.rtf[0]
    y_sw, _ = run_source_wise(spec, masks, 0, cfg, steering=fixed)
    y_miso, _ = run_miso_direct(spec, masks, 0, cfg, steering=fixed)
    err = np.max(np.abs(y_sw - y_miso))
    return err < 1e-8, f"max abs difference {err:.1e}"


def check_wpd_reduction(rng, threads):
    M, T = 4, 100
    x = _crandn(rng, T, M)
    lam = rng.uniform(0.5, 2.0, T)
    vt = _crandn(rng, M)
    vt /= vt[0]
    st = stack(x, StackConfig(1, 1))
    w = bf.wpd_miso(accumulate(st, lam).R_joint, vt)
    q = bf.wmpdr(beam_output_cov(x, lam), vt)
    err = np.max(np.abs(w - q))
    return err < 1e-12, f"max abs difference {err:.1e}"


def check_distortionless(rng, threads):
    spec, gt = _scene(rng)
    masks = oracle_masks(gt)
    _, trace = run_source_wise(spec, masks, 1, RunConfig(iterations=3, delta=2, taps=5,
                                                         threads=threads))
    worst = max(trace.residual)
    return worst < 1e-10, f"max |q^H v - 1| = {worst:.1e}"


def check_rtf_recovery(rng, threads):
    # overlapping sources leave finite-sample cross terms, hence the long scene
    spec, gt = _scene(rng, noise=0.0, frames=8000)
    gt.late[:] = 0
    x = np.moveaxis(gt.observation(), 0, -1).swapaxes(0, 1)
    masks = oracle_masks(gt)
    worst = 1.0
    for i in range(2):
        R_i, R_not = masked_covariances(x, masks[i].T)
        vt = estimate_steering(R_i, R_not).vtilde
        true = gt.rtf[i]
        cos = np.abs(np.sum(np.conj(vt) * true, -1)) / (
            np.linalg.norm(vt, axis=-1) * np.linalg.norm(true, axis=-1))
        worst = min(worst, float(cos.min()))
    return worst > 0.999, f"min cosine similarity {worst:.6f}"


def check_monotone(rng, threads):
    spec, gt = _scene(rng)
    masks = oracle_masks(gt)
    _, trace = run_source_wise(spec, masks, 0, RunConfig(iterations=6, delta=2, taps=5,
                                                         threads=threads), steering=gt.rtf[0])
    obj = np.array(trace.objective)
    rise = np.max((obj[1:] - obj[:-1]) / np.abs(obj[:-1]))
    return rise <= 1e-9, f"largest relative increase {rise:.1e}"


def check_mask_file(rng, threads):
    masks = rng.uniform(0, 1, (2, 7, 5))
    fd, path = tempfile.mkstemp(suffix=".bin")
    os.close(fd)
    try:
        write_masks(path, masks, 8, 2)
        back, header = read_masks(path, with_header=True)
    finally:
        os.unlink(path)
    err = np.max(np.abs(back - masks))
    ok = err < 1e-7 and header["frame_len"] == 8 and header["frame_shift"] == 2
    return ok, f"round-trip error {err:.1e}"


CHECKS = (
    ("stft round trip", check_stft),
    ("fast normal equations", check_fast_normal_equations),
    ("factorization equivalence", check_factorization_equivalence),
    ("single-tap reduction", check_wpd_reduction),
    ("distortionless constraint", check_distortionless),
    ("rtf recovery", check_rtf_recovery),
    ("monotone objective", check_monotone),
    ("mask file round trip", check_mask_file),
)


def run_checks(seed=0, threads=1):
    rng = np.random.default_rng(seed)
    for name, check in CHECKS:
        try:
            ok, detail = check(rng, threads)
        except Exception as exc:  # a crash is a failed check, not a crashed suite
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        yield name, bool(ok), detail
