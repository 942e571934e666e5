"""Time grids, seeded Brownian ensembles, and regression projections."""

import numpy as np
import pytest

from shjlab.probspace import (CondExpOperator, PathSlice, RegressionBasis,
                              TimeGrid, WienerEnsemble, cond_expect,
                              merge_ensembles, polynomial_basis,
                              sample_ensemble, subset_paths)

SEED = 7


def test_time_grid_knots():
    grid = TimeGrid(2.0, 8)
    assert grid.dt == 0.25
    np.testing.assert_allclose(grid.knots, np.arange(9) * 0.25)
    assert grid.index_of(0.5) == 2
    with pytest.raises(ValueError):
        grid.index_of(0.13)


@pytest.mark.parametrize("T,n", [(0.0, 4), (1.0, 0), (-1.0, 4)])
def test_time_grid_rejects(T, n):
    with pytest.raises(ValueError):
        TimeGrid(T, n)


def test_sampling_is_seed_deterministic():
    grid = TimeGrid(1.0, 16)
    a = sample_ensemble(grid, 2, 100, SEED)
    b = sample_ensemble(grid, 2, 100, SEED)
    c = sample_ensemble(grid, 2, 100, SEED + 1)
    assert np.array_equal(a.increments, b.increments)
    assert not np.array_equal(a.increments, c.increments)


def test_increment_moments():
    grid = TimeGrid(1.0, 8)
    ens = sample_ensemble(grid, 1, 200_000, SEED)
    var = ens.increments.var(axis=(0, 2))
    np.testing.assert_allclose(var, grid.dt, rtol=0.02)
    # values telescope the increments from zero
    np.testing.assert_allclose(
        ens.value_at(8), ens.increments.sum(axis=1), atol=1e-12)
    assert np.all(ens.value_at(0) == 0.0)


def test_save_load_roundtrip(tmp_path):
    grid = TimeGrid(0.5, 4)
    ens = sample_ensemble(grid, 2, 64, SEED)
    path = tmp_path / "ens.bin"
    ens.save(path)
    back = WienerEnsemble.load(path)
    assert back.grid == ens.grid
    assert back.seed == ens.seed
    assert np.array_equal(back.increments, ens.increments)


def test_load_rejects_corrupt_header(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"NOPE" + bytes(60))
    with pytest.raises(ValueError):
        WienerEnsemble.load(path)


def test_permuted_future_keeps_prefix():
    grid = TimeGrid(1.0, 8)
    ens = sample_ensemble(grid, 1, 50, SEED)
    rng = np.random.default_rng(0)
    perm = rng.permutation(50)
    other = ens.with_permuted_future(3, perm)
    assert np.array_equal(other.increments[:, :3], ens.increments[:, :3])
    assert np.array_equal(other.increments[:, 3:], ens.increments[perm, 3:])


def test_path_slice_terminal_gate():
    grid = TimeGrid(1.0, 4)
    ens = sample_ensemble(grid, 1, 10, SEED)
    sl = PathSlice(ens, 2)
    with pytest.raises(ValueError):
        sl.terminal
    assert PathSlice(ens, 2, terminal_ok=True).terminal.shape == (10, 1)
    np.testing.assert_allclose(sl.at(0.25), ens.value_at(1))
    with pytest.raises(ValueError):
        sl.at(0.75)  # future of the slice knot


def test_merge_and_subset():
    grid = TimeGrid(1.0, 4)
    a = sample_ensemble(grid, 1, 30, SEED)
    b = sample_ensemble(grid, 2, 30, SEED + 1)
    both = merge_ensembles(a, b)
    assert both.m == 3
    assert np.array_equal(both.increments[..., :1], a.increments)
    assert np.array_equal(both.increments[..., 1:], b.increments)
    with pytest.raises(ValueError):
        merge_ensembles(a, sample_ensemble(grid, 1, 31, SEED))

    half = subset_paths(a, np.arange(15))
    assert half.n_paths == 15
    assert np.array_equal(half.increments, a.increments[:15])


def test_projection_at_origin_is_mean():
    grid = TimeGrid(1.0, 8)
    ens = sample_ensemble(grid, 1, 5000, SEED)
    op = CondExpOperator(ens, 0, polynomial_basis(3))
    target = ens.value_at(8)[:, 0] ** 2
    out = op.apply(target)
    np.testing.assert_allclose(out, target.mean(), atol=1e-12)


def test_projection_reproduces_basis_span():
    # targets inside the span come back exactly (lstsq identity)
    grid = TimeGrid(1.0, 8)
    ens = sample_ensemble(grid, 1, 4000, SEED)
    w = ens.value_at(5)[:, 0]
    op = CondExpOperator(ens, 5, polynomial_basis(3))
    np.testing.assert_allclose(op.apply(w**2 - 2.0 * w), w**2 - 2.0 * w,
                               atol=1e-10)


def test_projection_tower_property():
    # E[W_T | W_t] = W_t up to Monte-Carlo regression noise
    grid = TimeGrid(1.0, 8)
    ens = sample_ensemble(grid, 1, 50_000, SEED)
    w_t = ens.value_at(4)[:, 0]
    est = cond_expect(ens, 0.5, ens.value_at(8)[:, 0], polynomial_basis(3))
    assert np.sqrt(np.mean((est - w_t) ** 2)) < 0.02


def test_ridge_fallback_on_degenerate_design():
    grid = TimeGrid(1.0, 4)
    ens = sample_ensemble(grid, 1, 500, SEED)
    dup = RegressionBasis([lambda e, k, s: np.ones(e.n_paths),
                           lambda e, k, s: np.ones(e.n_paths)])
    op = CondExpOperator(ens, 2, dup)
    out = op.apply(ens.value_at(2)[:, 0])
    assert op.used_ridge
    assert np.all(np.isfinite(out))


def test_multi_target_projection_shapes():
    grid = TimeGrid(1.0, 4)
    ens = sample_ensemble(grid, 1, 300, SEED)
    op = CondExpOperator(ens, 2, polynomial_basis(2))
    targets = np.stack([ens.value_at(3)[:, 0], ens.value_at(4)[:, 0]])
    assert op.apply(targets).shape == (2, 300)
