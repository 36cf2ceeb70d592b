"""Synthetic STFT-domain scenes that follow the convolutive signal model exactly.

Per frequency bin, source ``i`` reaches the array as a desired part
``v_i s_t`` plus late reverberation ``sum_{tau=delta}^{La-1} a_tau s_{t-tau}``;
spatially white complex Gaussian noise is added on top.
"""

import configparser
from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from .stft import Spectrogram

SDR_CAP = 100.0


@dataclass
class Scene:
    n_sources: int = 2
    n_mics: int = 4
    n_bins: int = 17
    late_taps: int = 8  # La: reverberation occupies frames delta .. La - 1
    delta: int = 4
    noise_level: float = 0.0  # std of the complex noise per channel
    reverb_level: float = 0.5  # std of the first late tap
    reverb_decay: float = 0.7  # power ratio between consecutive late taps
    activity: float = 0.6  # long-run fraction of active frames per source
    level_spread: float = 0.5  # std of the per-frame log-amplitude
    sample_rate: float = 16000.0

    def __post_init__(self):
        if self.n_sources < 1 or self.n_mics < 1 or self.n_bins < 2:
            raise ValueError("scene needs at least one source, one microphone and two bins")
        if self.n_sources > self.n_mics:
            raise ValueError("the model assumes no more sources than microphones")
        if not self.late_taps > self.delta >= 1:
            raise ValueError("need late_taps > delta >= 1")
        if self.noise_level < 0 or self.reverb_level < 0:
            raise ValueError("noise and reverberation levels must be non-negative")
        if self.level_spread < 0:
            raise ValueError("level_spread must be non-negative")
        if not 0 < self.activity <= 1:
            raise ValueError("activity must lie in (0, 1]")

    @property
    def frame_len(self):
        return 2 * (self.n_bins - 1)


@dataclass
class GroundTruth:
    dry: np.ndarray  # (I, T, F)
    steering: np.ndarray  # (I, F, M)
    late_filters: np.ndarray  # (I, F, La - delta, M)
    desired: np.ndarray  # (I, M, T, F)
    late: np.ndarray  # (I, M, T, F)
    noise: np.ndarray  # (M, T, F)

    @property
    def reference(self):
        """Desired signal of every source at the reference microphone, ``(I, T, F)``."""
        return self.desired[:, 0]

    @property
    def rtf(self):
        return self.steering / self.steering[..., :1]

    def observation(self):
        return self.desired.sum(axis=0) + self.late.sum(axis=0) + self.noise


def _cn(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def _activity(rng, n_frames, p_active, mean_run=12.0):
    """On/off pattern from a two-state Markov chain with the given duty cycle."""
    if p_active >= 1:
        return np.ones(n_frames, dtype=bool)
    leave_on = 1.0 / mean_run
    leave_off = leave_on * p_active / (1 - p_active)
    state = rng.random() < p_active
    out = np.empty(n_frames, dtype=bool)
    for t in range(n_frames):
        out[t] = state
        state = (rng.random() >= leave_on) if state else (rng.random() < leave_off)
    return out


def _steering(rng, n_sources, n_mics, n_bins):
    v = _cn(rng, (n_sources, n_bins, n_mics))
    for _ in range(100):
        if n_sources == 1:
            break
        unit = v / np.linalg.norm(v, axis=-1, keepdims=True)
        cos = np.abs(np.einsum("ifm,jfm->fij", np.conj(unit), unit))
        cos[:, np.arange(n_sources), np.arange(n_sources)] = 0
        bad = cos.max(axis=(1, 2)) > 0.95
        if not bad.any():
            break
        v[:, bad] = _cn(rng, (n_sources, int(bad.sum()), n_mics))
    return v


def generate(scene, n_frames, seed=0):
    """Draw a scene realization; returns ``(Spectrogram, GroundTruth)``."""
    if n_frames < 1:
        raise ValueError("n_frames must be positive")
    rng = np.random.default_rng(seed)
    I, M, F = scene.n_sources, scene.n_mics, scene.n_bins
    T = n_frames
    n_late = scene.late_taps - scene.delta

    dry = np.empty((I, T, F), dtype=complex)
    for i in range(I):
        active = _activity(rng, T, scene.activity)
        level = np.exp(scene.level_spread * rng.standard_normal((T, F)))
        dry[i] = active[:, None] * level * _cn(rng, (T, F))

    steering = _steering(rng, I, M, F)
    decay = np.sqrt(scene.reverb_decay) ** np.arange(n_late)
    late_filters = scene.reverb_level * decay[None, None, :, None] * _cn(rng, (I, F, n_late, M))
    noise = scene.noise_level * _cn(rng, (M, T, F))

    desired = np.einsum("ifm,itf->imtf", steering, dry)
    late = np.zeros((I, M, T, F), dtype=complex)
    for k in range(n_late):
        tau = scene.delta + k
        if tau < T:
            late[:, :, tau:, :] += np.einsum("ifm,itf->imtf", late_filters[:, :, k], dry[:, : T - tau])
    gt = GroundTruth(dry, steering, late_filters, desired, late, noise)
    frame_len = scene.frame_len
    spec = Spectrogram(gt.observation(), frame_len, max(frame_len // 4, 1), scene.sample_rate)
    return spec, gt


def oracle_masks(gt):
    """Power ratio of each desired signal to the observation components at the reference mic."""
    desired = np.abs(gt.desired[:, 0]) ** 2
    total = desired.sum(axis=0) + (np.abs(gt.late[:, 0]) ** 2).sum(axis=0) + np.abs(gt.noise[0]) ** 2
    with np.errstate(invalid="ignore", divide="ignore"):
        gamma = np.where(total > 0, desired / np.where(total > 0, total, 1.0), 0.0)
    return np.clip(gamma, 0.0, 1.0)


def sdr(est, ref, cap=SDR_CAP):
    """Scale-invariant SDR in dB: ``||ref||^2 / ||ref - alpha est||^2`` with the best complex ``alpha``."""
    est = np.asarray(est).ravel()
    ref = np.asarray(ref).ravel()
    energy = np.vdot(est, est).real
    alpha = np.vdot(est, ref) / energy if energy > 0 else 0.0
    err = np.linalg.norm(ref - alpha * est) ** 2
    ref_energy = np.linalg.norm(ref) ** 2
    if err <= ref_energy * 10 ** (-cap / 10):
        return cap
    return float(10 * np.log10(ref_energy / err))


def match_sources(estimates, references):
    """Permutation ``perm`` such that ``estimates[perm[i]]`` best correlates with ``references[i]``."""
    est = np.asarray(estimates).reshape(len(estimates), -1)
    ref = np.asarray(references).reshape(len(references), -1)
    est_n = est / np.maximum(np.linalg.norm(est, axis=1, keepdims=True), 1e-300)
    ref_n = ref / np.maximum(np.linalg.norm(ref, axis=1, keepdims=True), 1e-300)
    corr = np.abs(ref_n @ np.conj(est_n).T)
    _, perm = linear_sum_assignment(-corr)
    return perm


# Scene description files are INI text with a single [scene] section whose keys
# are the Scene fields, plus optional ``frames`` and ``seed``.


def save_scene(path, scene, n_frames, seed):
    cfg = configparser.ConfigParser()
    cfg["scene"] = {k: repr(v) for k, v in asdict(scene).items()}
    cfg["scene"]["frames"] = str(n_frames)
    cfg["scene"]["seed"] = str(seed)
    with open(path, "w") as fh:
        cfg.write(fh)


def load_scene(path) -> "tuple[Scene, int, Optional[int]]":
    cfg = configparser.ConfigParser()
    if not cfg.read(path):
        raise FileNotFoundError(path)
    if "scene" not in cfg:
        raise ValueError(f"{path}: missing [scene] section")
    section = cfg["scene"]
    kwargs = {}
    for f in fields(Scene):
        if f.name in section:
            kwargs[f.name] = (int if f.type in (int, "int") else float)(section[f.name])
    unknown = set(section) - {f.name for f in fields(Scene)} - {"frames", "seed"}
    if unknown:
        raise ValueError(f"{path}: unknown scene keys {sorted(unknown)}")
    frames = section.getint("frames", 500)
    seed = section.getint("seed", 0)
    return Scene(**kwargs), frames, seed
