"""
Separating two reverberant talkers with oracle masks
=====================================================

A synthetic two-source scene is drawn directly in the STFT domain, so every
component of the observation (direct path, late reverberation, noise) is
known. Each method then estimates the direct-path signal of both sources
at the reference microphone, and we score the estimates with the
scale-invariant SDR.
"""

import numpy as np

from jointcbf.optimizer import RunConfig, enhance
from jointcbf.sim import Scene, generate, match_sources, oracle_masks, sdr

# A four-microphone scene: two sources, late reverberation spanning frames
# 4..7, and a little sensor noise.
scene = Scene(n_sources=2, n_mics=4, noise_level=0.1, reverb_level=0.5)
spec, truth = generate(scene, n_frames=500, seed=0)
masks = oracle_masks(truth)
print(f"observation: {spec.n_channels} mics, {spec.n_frames} frames, {spec.n_bins} bins")

refs = truth.reference
unprocessed = np.mean([sdr(spec.data[0], r) for r in refs])
print(f"\n{'method':<26}{'mean SDR [dB]':>14}")
print(f"{'unprocessed':<26}{unprocessed:>14.2f}")

# Every method sees the same masks; the band-dependent filter lengths and
# the ten iterations are the library defaults.
for method in ("source_wise", "miso_direct", "source_packed_fast", "cascade_mpdr",
               "cascade_mvdr", "cascade_wmpdr_separate", "cascade_mpdr_integrated"):
    Y, _ = enhance(spec, masks, RunConfig(method=method))
    perm = match_sources(Y, refs)
    score = np.mean([sdr(Y[perm[i]], refs[i]) for i in range(len(refs))])
    print(f"{method.replace('_', '-'):<26}{score:>14.2f}")

# cascade-mpdr and cascade-mvdr agree to about 1e-8: the unweighted covariance
# is a mix of the two mask-weighted ones, and the RTF is their principal
# generalized eigenvector, so both beamformers point the same way.
#
# Every method gains well over 5 dB. On this simulator the plain WPE+MPDR
# cascade tends to edge out the jointly optimized source-wise filter, because
# the self-estimated variances over-weight quiet frames.
