import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hvf import maze_env, raster
from hvf.generative import FreeSpaceDecoder, latent_dim
from hvf.raster import RasterConfig

R32 = RasterConfig(32)


@pytest.fixture
def dec() -> FreeSpaceDecoder:
    return FreeSpaceDecoder(raster=R32)


def test_latent_dim(dec):
    assert latent_dim(dec) == 8
    assert latent_dim(FreeSpaceDecoder(4)) == 4


def test_zero_latent_decodes_to_center(dec, hard_scene):
    pos = dec.decode_positions(np.zeros(8), hard_scene.layout)
    expected = maze_env.project_to_free(hard_scene.layout, np.array([0.5, 0.5]), dec.margin)
    np.testing.assert_array_equal(pos, expected)
    empty = maze_env.WallLayout((), ())
    np.testing.assert_array_equal(dec.decode_positions(np.zeros(8), empty), [0.5, 0.5])


def test_saturated_latent_reaches_corner(dec, hard_scene):
    z = np.zeros(8)
    z[:2] = 10
    pos = dec.decode_positions(z, hard_scene.layout)
    assert np.abs(pos - 1.0).max() <= 1 / R32.resolution


def test_wrong_length_and_nonfinite_rejected(dec, hard_scene):
    with pytest.raises(ValueError):
        dec.decode(np.zeros(7), hard_scene)
    z = np.zeros(8)
    z[3] = np.nan
    with pytest.raises(ValueError):
        dec.decode(z, hard_scene)


def test_free_space_fuzz(dec):
    """1e4 prior decodes over varied scenes: free space, clear of walls, layout intact."""
    rng = np.random.default_rng(0)
    for _ in range(10):
        scene = maze_env.sample_scene("hard", rng)
        z = rng.standard_normal((1000, 8))
        pos = dec.decode_positions(z, scene.layout)
        assert maze_env.free_space_mask(scene.layout, pos).all()
        inflated = scene.layout.rects + np.array([-1, 1, -1, 1]) * (dec.margin - 1e-9)
        x, y = pos[:, 0:1], pos[:, 1:2]
        assert not ((x > inflated[:, 0]) & (x < inflated[:, 1])
                    & (y > inflated[:, 2]) & (y < inflated[:, 3])).any()
        static = raster.render_static(scene.layout, scene.goal, R32)
        for f, p in zip(dec.decode_many(z[:100], scene), pos[:100]):
            r0, r1, c0, c1 = raster.blob_bounds(p, R32.blob_px, R32.resolution)
            mask = np.ones(f.shape[:2], bool)
            mask[r0:r1, c0:c1] = False
            assert (f[mask] == static[mask]).all()


def test_prior_covers_every_section(dec, hard_scene):
    z = np.random.default_rng(1).standard_normal((10_000, 8))
    pos = dec.decode_positions(z, hard_scene.layout)
    sections = [maze_env.section_of(hard_scene.layout, x) for x in pos[:, 0]]
    for i in range(3):
        assert sections.count(i) >= 500


@given(st.lists(st.floats(-20, 20), min_size=8, max_size=8))
def test_decode_deterministic_and_ignores_tail(z):
    dec = FreeSpaceDecoder(raster=R32)
    scene = maze_env.sample_scene("medium", np.random.default_rng(2))
    z = np.array(z)
    a = dec.decode(z, scene)
    other = z.copy()
    other[2:] = 0
    assert (a == dec.decode(z, scene)).all()
    assert (a == dec.decode(other, scene)).all()


def test_encode_round_trip(dec):
    empty = maze_env.WallLayout((), ())
    pts = np.random.default_rng(3).uniform(0.01, 0.99, (100, 2))
    np.testing.assert_allclose(dec.decode_positions(dec.encode_position(pts), empty), pts, atol=1e-12)
