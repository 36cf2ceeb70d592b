"""
Why the source-packed update needs the Kronecker shortcut
==========================================================

The shared prediction filter of the source-packed optimizer solves normal
equations of size M^2 (L - delta). Summing them frame by frame costs
O(T M^4 (L - delta)^2); rewriting them as Kronecker products of small
per-source covariances costs one covariance accumulation per source. Both
give the same matrix, and its rank never exceeds M I (L - delta), which is
why a pseudo-inverse is used to solve it.
"""

import time

import numpy as np

from jointcbf.covariance import accumulate
from jointcbf.stacking import StackConfig, stack
from jointcbf.wpe import psi_brute, psi_fast

rng = np.random.default_rng(0)
M, I, K, T = 6, 2, 4, 400
x = (rng.standard_normal((T, M)) + 1j * rng.standard_normal((T, M))) / np.sqrt(2)
stacked = stack(x, StackConfig(K + 1, 1))
Q = rng.standard_normal((M, I)) + 1j * rng.standard_normal((M, I))
lam = rng.uniform(0.2, 3.0, (I, T))

t0 = time.perf_counter()
Psi_fast, psi_f = psi_fast([accumulate(stacked, lam[i]) for i in range(I)], Q)
t_fast = time.perf_counter() - t0
t0 = time.perf_counter()
Psi_brute, psi_b = psi_brute(x, stacked.xbar, Q, lam)
t_brute = time.perf_counter() - t0

err = np.linalg.norm(Psi_fast - Psi_brute) / np.linalg.norm(Psi_brute)
print(f"Psi is {Psi_fast.shape[0]} x {Psi_fast.shape[1]}")
print(f"relative difference fast vs. brute: {err:.1e}")
print(f"time fast {1e3 * t_fast:.1f} ms, brute {1e3 * t_brute:.1f} ms")

sv = np.linalg.svd(Psi_brute, compute_uv=False)
rank = int(np.sum(sv > 1e-8 * sv[0]))
print(f"numerical rank {rank}, bound M*I*(L-delta) = {M * I * K}")
