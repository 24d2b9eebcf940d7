import numpy as np
import pytest
from hypothesis import given, strategies as st

from arbspec.errors import ValidationError
from arbspec.grid import TimeGrid
from arbspec.rng import brownian, path_normals


def test_uniform_grid():
    g = TimeGrid.uniform(2.0, 8)
    assert g.n_steps == 8
    np.testing.assert_allclose(g.dt, 0.25)
    assert g.times[-1] == 2.0 and g.is_uniform


def test_ladder_nested():
    grids = TimeGrid.ladder(1.0, 16, 3, singular=(1.0,), depth=10, substeps=2)
    for coarse, fine in zip(grids[:-1], grids[1:]):
        assert fine.contains(coarse).all()
        assert fine.n_steps > coarse.n_steps


def test_deep_terminal_layers_stay_ordered():
    g = TimeGrid.refined(1.0, 8, singular=(1.0,), depth=300, substeps=2)
    assert np.all(g.dt > 0)
    assert g.ttm[-2] > 0 and g.ttm[-2] < 1e-80
    np.testing.assert_allclose(g.dt.sum(), 1.0, rtol=1e-14)


def test_initial_layers():
    g = TimeGrid.refined(1.0, 8, singular=(0.0,), depth=40, substeps=1)
    assert g.elapsed(0.0)[1] < 1e-11


def test_bad_grids():
    with pytest.raises(ValidationError):
        TimeGrid.uniform(1.0, 1)
    with pytest.raises(ValidationError):
        TimeGrid.uniform(-1.0, 4)


def test_path_normals_independent_of_workers():
    a = path_normals(11, 20, (5,), workers=1)
    b = path_normals(11, 20, (5,), workers=4)
    np.testing.assert_array_equal(a, b)


def test_path_slices_consistent():
    full = path_normals(3, 10, (4,))
    part = path_normals(3, 4, (4,), start=6)
    np.testing.assert_array_equal(full[6:], part)


def test_brownian_coupled_across_levels():
    grids = TimeGrid.ladder(1.0, 8, 3, singular=(0.0,), depth=4, substeps=2)
    coarse = brownian(grids[0], 50, 5)
    fine = brownian(grids[2], 50, 5)
    np.testing.assert_array_equal(fine[:, grids[2].locate(grids[0])], coarse)


def test_brownian_variance():
    g = TimeGrid.ladder(1.0, 4, 2)[1]
    w = brownian(g, 20000, 1)[..., 0]
    assert abs(w[:, -1].var() - 1.0) < 0.05
    assert abs(np.mean(w[:, -1])) < 0.03


@given(st.integers(0, 2**31), st.integers(1, 3))
def test_brownian_seed_reproducible(seed, dim):
    g = TimeGrid.uniform(1.0, 8)
    np.testing.assert_array_equal(brownian(g, 3, seed, dim), brownian(g, 3, seed, dim, workers=2))
