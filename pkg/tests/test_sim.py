import numpy as np
import pytest
from hypothesis import given, strategies as st

from jointcbf.sim import (Scene, generate, load_scene, match_sources, oracle_masks,
                          save_scene, sdr)

from conftest import crandn


def test_anechoic_noiseless_single_source():
    spec, gt = generate(Scene(n_sources=1, reverb_level=0.0), 50, 1)
    expected = np.einsum("fm,tf->mtf", gt.steering[0], gt.dry[0])
    np.testing.assert_array_equal(spec.data, expected)


@given(st.integers(0, 2**31 - 1))
def test_components_recombine(seed):
    spec, gt = generate(Scene(noise_level=0.3), 40, seed)
    total = gt.desired.sum(0) + gt.late.sum(0) + gt.noise
    assert np.max(np.abs(total - spec.data)) < 1e-12


def test_deterministic_per_seed():
    a, _ = generate(Scene(noise_level=0.1), 30, 5)
    b, _ = generate(Scene(noise_level=0.1), 30, 5)
    c, _ = generate(Scene(noise_level=0.1), 30, 6)
    np.testing.assert_array_equal(a.data, b.data)
    assert not np.allclose(a.data, c.data)


def test_late_reverberation_starts_at_delta():
    scene = Scene(n_sources=1, late_taps=6, delta=3)
    _, gt = generate(scene, 40, 2)
    dry = gt.dry[0]
    expected = np.zeros_like(gt.late[0])
    for k in range(3):
        tau = 3 + k
        expected[:, tau:] += np.einsum("fm,tf->mtf", gt.late_filters[0, :, k], dry[:-tau])
    np.testing.assert_allclose(gt.late[0], expected, atol=1e-12)


def test_orthogonal_pair_unmixes():
    _, gt = generate(Scene(n_sources=2, n_mics=2, reverb_level=0.0), 60, 3)
    k = 4
    # replace the steering with an orthogonal pair and remix
    V = np.array([[1, 1], [1j, -1j]]) / np.sqrt(2)  # columns are the steering vectors
    x = V @ gt.dry[:, :, k]
    # unitary mixing: the conjugate transpose unmixes, and the outputs decorrelate
    s = np.conj(V.T) @ x
    np.testing.assert_allclose(s, gt.dry[:, :, k], atol=1e-12)
    np.testing.assert_allclose(np.vdot(s[0], s[1]), np.vdot(gt.dry[0, :, k], gt.dry[1, :, k]),
                               atol=1e-12)


def test_generated_pair_unmixes_with_true_steering():
    _, gt = generate(Scene(n_sources=2, n_mics=2, reverb_level=0.0), 60, 3)
    for k in range(gt.dry.shape[-1]):
        V = gt.steering[:, k].T  # (M, I)
        x = gt.observation()[:, :, k]
        np.testing.assert_allclose(np.linalg.solve(V, x), gt.dry[:, :, k], atol=1e-10)


def test_steering_not_parallel():
    _, gt = generate(Scene(n_sources=3, n_mics=4), 10, 0)
    v = gt.steering / np.linalg.norm(gt.steering, axis=-1, keepdims=True)
    for i in range(3):
        for j in range(i + 1, 3):
            assert np.max(np.abs(np.sum(np.conj(v[i]) * v[j], -1))) <= 0.95


def test_mask_single_clean_source_is_one():
    _, gt = generate(Scene(n_sources=1, reverb_level=0.0, activity=1.0), 30, 0)
    np.testing.assert_allclose(oracle_masks(gt), 1.0)


def test_mask_equal_power_is_half():
    _, gt = generate(Scene(n_sources=2, reverb_level=0.0, activity=1.0), 20, 0)
    gt.desired[1, 0] = gt.desired[0, 0] * np.exp(0.7j)
    np.testing.assert_allclose(oracle_masks(gt), 0.5)


def test_masks_sum_below_one():
    _, gt = generate(Scene(n_sources=3, n_mics=4, noise_level=0.2), 50, 4)
    masks = oracle_masks(gt)
    assert np.all(masks.sum(0) <= 1 + 1e-12)
    assert np.all((masks >= 0) & (masks <= 1))


def test_mask_silent_frames_are_zero():
    _, gt = generate(Scene(n_sources=1, reverb_level=0.0, activity=0.3), 200, 1)
    masks = oracle_masks(gt)
    silent = np.abs(gt.desired[0, 0]) == 0
    assert silent.any() and np.all(masks[0][silent] == 0)


def test_sdr_identity_capped(rng):
    ref = crandn(rng, 10, 3)
    assert sdr(ref, ref) == 100


def test_sdr_scale_invariant(rng):
    ref = crandn(rng, 10, 3)
    est = ref + 0.1 * crandn(rng, 10, 3)
    assert sdr(2 * est, ref) == pytest.approx(sdr(est, ref))
    assert sdr((1 - 2j) * est, ref) == pytest.approx(sdr(est, ref))


def test_sdr_direct_formula(rng):
    ref, est = crandn(rng, 40), crandn(rng, 40)
    alpha = np.vdot(est, ref) / np.vdot(est, est)
    direct = 10 * np.log10(np.sum(np.abs(ref) ** 2) / np.sum(np.abs(ref - alpha * est) ** 2))
    assert sdr(est, ref) == pytest.approx(direct)


def test_sdr_orthogonal_is_zero():
    ref = np.array([1.0, 0.0])
    assert sdr(np.array([0.0, 1.0]), ref) == pytest.approx(0.0)


def test_match_sources_finds_permutation(rng):
    refs = crandn(rng, 3, 50)
    est = refs[[2, 0, 1]] + 0.1 * crandn(rng, 3, 50)
    perm = match_sources(est, refs)
    assert list(perm) == [1, 2, 0]


@pytest.mark.parametrize("bad", [dict(n_sources=0), dict(n_sources=5, n_mics=4),
                                 dict(late_taps=2, delta=2), dict(delta=0),
                                 dict(noise_level=-1), dict(activity=0), dict(level_spread=-1)])
def test_scene_validation(bad):
    with pytest.raises(ValueError):
        Scene(**bad)


def test_generate_rejects_no_frames():
    with pytest.raises(ValueError):
        generate(Scene(), 0)


def test_scene_file_round_trip(tmp_path):
    scene = Scene(n_sources=3, n_mics=5, noise_level=0.25, level_spread=0.1)
    path = tmp_path / "scene.ini"
    save_scene(path, scene, 321, 9)
    back, frames, seed = load_scene(path)
    assert (back, frames, seed) == (scene, 321, 9)


def test_scene_file_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_scene(tmp_path / "missing.ini")
    p = tmp_path / "bad.ini"
    p.write_text("[scene]\nn_sources = 2\ncolour = red\n")
    with pytest.raises(ValueError):
        load_scene(p)
    p.write_text("[other]\nx = 1\n")
    with pytest.raises(ValueError):
        load_scene(p)
    p.write_text("[scene]\nn_sources = 9\n")
    with pytest.raises(ValueError):
        load_scene(p)
