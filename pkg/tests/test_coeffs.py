"""Scenario registry and coefficient-set contracts."""

import numpy as np
import pytest

from shjlab.coeffs import (CoefficientSet, a1_audit, control_grid,
                           probe_lattice, reach_radius, register_scenario,
                           scenario, scenario_names)
from shjlab.probspace import TimeGrid, sample_ensemble

SEED = 5
ALL_SCENARIOS = scenario_names()


def test_registry_contents():
    assert "eikonal" in ALL_SCENARIOS
    assert "random-target" in ALL_SCENARIOS
    with pytest.raises(KeyError):
        scenario("not-a-scenario")


def test_register_scenario_roundtrip():
    marker = scenario("zeros")
    register_scenario("zeros-alias-for-test", lambda: marker)
    assert scenario("zeros-alias-for-test") is marker
    with pytest.raises(ValueError):
        register_scenario("bad", None)


def test_control_grid():
    grid = control_grid(-1.0, 1.0, 21)
    assert grid.shape == (21, 1)
    assert grid[0, 0] == -1.0 and grid[-1, 0] == 1.0
    np.testing.assert_allclose(np.diff(grid[:, 0]), 0.1)


@pytest.mark.parametrize("name", ALL_SCENARIOS)
def test_shape_contracts(name):
    co = scenario(name)
    ens = sample_ensemble(TimeGrid(1.0, 8), max(co.m_required, 1), 40, SEED)
    w = None if co.deterministic else ens.slice_at(3)
    wT = None if co.deterministic else ens.slice_at(8, terminal_ok=True)
    x = np.linspace(-2, 2, 7).reshape(7, 1, co.d)
    n_eff = 1 if co.deterministic else 40
    for v in co.controls[:: max(1, co.n_controls // 3)]:
        b = np.asarray(co.beta(0.5, x, v, w))
        assert b.shape[-1] == co.d
        assert np.all(np.isfinite(b))
        f = np.asarray(co.f(0.5, x, v, w))
        assert f.shape in ((7, 1), (7, n_eff))
    g = np.asarray(co.G(x, wT))
    assert g.shape in ((7, 1), (7, n_eff))
    assert np.all(np.isfinite(g))


@pytest.mark.parametrize("name", ALL_SCENARIOS)
def test_declared_bound_holds(name):
    co = scenario(name)
    ens = sample_ensemble(TimeGrid(1.0, 8), max(co.m_required, 1), 60, SEED)
    report = a1_audit(co, ensemble=None if co.deterministic else ens)
    assert report["passed"], report


def test_eikonal_values():
    co = scenario("eikonal")
    x = np.array([[[0.5]], [[-2.0]], [[12.0]]])
    np.testing.assert_allclose(
        np.asarray(co.G(x, None)).ravel(), [0.5, 2.0, 10.0])
    # drift is the control itself, running cost vanishes
    v = co.controls[3]
    np.testing.assert_allclose(np.asarray(co.beta(0.1, x, v, None)),
                               np.broadcast_to(v, x.shape))
    assert np.all(np.asarray(co.f(0.1, x, v, None)) == 0.0)


def test_random_target_reads_terminal_path():
    co = scenario("random-target")
    ens = sample_ensemble(TimeGrid(1.0, 4), 1, 25, SEED)
    wT = ens.slice_at(4, terminal_ok=True)
    x = np.zeros((3, 1, 1))
    g = np.asarray(co.G(x, wT))
    assert g.shape == (3, 25)
    assert g.std() > 0.0  # depends on the path
    np.testing.assert_allclose(g[0], np.abs(np.tanh(ens.value_at(4)[:, 0])))


def test_reach_radius_and_probes():
    co = scenario("eikonal")
    assert reach_radius(co, 2.0, 1.0) == pytest.approx(3.0)
    probes = probe_lattice(2.0, 1)
    assert probes.ndim == 2 and probes.shape[1] == 1
    assert np.abs(probes).max() <= 2.0 + 1e-12


def test_coefficient_set_validation():
    good = scenario("zeros")
    with pytest.raises(ValueError):
        CoefficientSet(name="x", d=5, n=1, controls=np.zeros((1, 1)),
                       beta=good.beta, f=good.f, G=good.G, L=1.0, lip_x=1.0)
    with pytest.raises(ValueError):
        CoefficientSet(name="x", d=1, n=1, controls=np.zeros((1, 1)),
                       beta=good.beta, f=good.f, G=good.G, L=-1.0, lip_x=1.0)
