import numpy as np

from dkfnet import rng


def test_uniforms_in_unit_interval_and_deterministic():
    u = rng.uniforms(7, rng.CONSENSUS, np.arange(1000)[:, None], 3, 2, np.arange(17))
    assert u.shape == (1000, 17)
    assert np.all((u >= 0) & (u < 1))
    assert np.array_equal(u, rng.uniforms(7, rng.CONSENSUS, np.arange(1000)[:, None], 3, 2, np.arange(17)))


def test_streams_and_keys_differ():
    a = rng.uniforms(0, rng.PUSHSUM, 0, 5, rng.NO_SUBROUND, np.arange(64))
    b = rng.uniforms(0, rng.CONSENSUS, 0, 5, rng.NO_SUBROUND, np.arange(64))
    c = rng.uniforms(1, rng.PUSHSUM, 0, 5, rng.NO_SUBROUND, np.arange(64))
    assert not np.allclose(a, b) and not np.allclose(a, c)


def test_broadcast_matches_scalar_calls():
    grid = rng.uniforms(3, 2, np.arange(4)[:, None], np.arange(5))
    for i in range(4):
        for j in range(5):
            assert grid[i, j] == rng.uniforms(3, 2, i, j)


def test_roughly_uniform():
    u = rng.uniforms(11, 1, np.arange(200_000))
    assert abs(u.mean() - 0.5) < 0.005
    hist, _ = np.histogram(u, bins=10, range=(0, 1))
    assert np.all(np.abs(hist / 20_000 - 1) < 0.05)
