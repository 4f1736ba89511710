import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from labelcorr.chanvese import CvOptions, checkerboard, cv_energy, cv_segment, cv_step
from labelcorr.grid import heaviside, region_means


def two_tone(seed=None, sigma=0.0, size=32):
    img = np.full((size, size), 0.1)
    img[:, : size // 2] = 0.9
    truth = np.zeros((size, size), bool)
    truth[:, : size // 2] = True
    if seed is not None:
        img = np.clip(img + np.random.default_rng(seed).normal(0, sigma, img.shape), 0, 1)
    return img, truth


def disc(size=32, r=6):
    # centred on the bright half so the foreground is unambiguous
    yy, xx = np.mgrid[:size, :size]
    return (xx - size / 4) ** 2 + (yy - size / 2) ** 2 <= r * r


def f1(a, b):
    tp = (a & b).sum()
    return 2 * tp / (a.sum() + b.sum())


def test_energy_examples():
    assert cv_energy(np.full((3, 3), 0.4), np.ones((3, 3)), 0.4, 0.4) == 0.0
    img = np.array([[1.0, 0.0]])
    assert cv_energy(img, np.array([[1.0, -1.0]]), 1.0, 0.0) == 0.0
    assert cv_energy(img, np.array([[1.0, 1.0]]), 0.5, 123.0) == pytest.approx(0.5)


def test_step_examples():
    img = np.array([[0.9, 0.1, 0.5]])
    assert cv_step(img, np.ones((1, 3)), 1.0, 0.0).tolist() == [[1.0, -1.0, 1.0]]


def test_segment_exact_partition():
    img, truth = two_tone()
    mask, trace = cv_segment(img, disc())
    assert np.array_equal(mask, truth)
    assert not trace.degenerate


def test_segment_noisy_partition():
    img, truth = two_tone(seed=7, sigma=0.05)
    mask, _ = cv_segment(img, disc())
    assert f1(mask, truth) >= 0.99


def test_either_polarity_from_straddling_init():
    img, truth = two_tone()
    yy, xx = np.mgrid[:32, :32]
    mask, _ = cv_segment(img, (xx - 16) ** 2 + (yy - 16) ** 2 <= 36)
    assert np.array_equal(mask, truth) or np.array_equal(mask, ~truth)


def test_constant_image_returns_init():
    init = disc()
    mask, trace = cv_segment(np.full((32, 32), 0.3), init)
    assert np.array_equal(mask, init)
    assert trace.degenerate


def test_default_init_is_checkerboard():
    cb = checkerboard((16, 16))
    assert cb[0, 0] == 1 and cb[0, 4] == -1 and cb[4, 4] == 1 and cb[0, 8] == 1
    img = np.full((32, 32), 0.1)
    img[3:14, 5:22] = 0.9
    truth = img > 0.5
    mask, _ = cv_segment(img)
    assert np.array_equal(mask, truth) or np.array_equal(mask, ~truth)


def test_trace_length_bound():
    img, _ = two_tone(seed=1, sigma=0.2)
    _, trace = cv_segment(img, disc(), CvOptions(max_iters=3))
    assert len(trace) <= 4


def test_options_validation():
    with pytest.raises(ValueError):
        CvOptions(max_iters=0)
    with pytest.raises(ValueError):
        CvOptions(energy_tol=-1)
    with pytest.raises(ValueError):
        CvOptions(color_mode="hsv")


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        cv_segment(np.zeros((4, 4)), np.ones((5, 5)))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.sampled_from(["multichannel", "luminance"]))
def test_energy_non_increasing(seed, mode):
    rng = np.random.default_rng(seed)
    img = rng.random((12, 12, 3))
    _, trace = cv_segment(img, rng.random((12, 12)) - 0.5, CvOptions(color_mode=mode))
    e = trace.energies
    assert all(b <= a + 1e-9 for a, b in zip(e, e[1:]))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_fixed_point_idempotent(seed):
    rng = np.random.default_rng(seed)
    img = rng.random((10, 10))
    mask, _ = cv_segment(img, rng.random((10, 10)) - 0.5)
    phi = np.where(mask, 1.0, -1.0)
    m = region_means(img, heaviside(phi))
    if m.degenerate:
        return
    again = cv_step(img, phi, m.c1, m.c2)
    assert np.array_equal(again, phi)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(-0.3, 0.3))
def test_constant_shift_invariance(seed, shift):
    rng = np.random.default_rng(seed)
    img = 0.35 + 0.3 * rng.random((10, 10))
    init = rng.random((10, 10)) - 0.5
    a, _ = cv_segment(img, init)
    b, _ = cv_segment(img + shift, init)
    assert np.array_equal(a, b)
