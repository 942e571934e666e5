"""Controlled-ODE coefficient sets and the built-in scenario registry.

A coefficient set bundles the drift beta(t, x, v, w), running cost
f(t, x, v, w) and terminal cost G(x, w) of a control problem together
with the finite control grid and the declared uniform bound L.  The
path argument w is a PathSlice (None for path-independent sets), so a
coefficient can only read Brownian history up to the evaluation time
(terminal history for G).

Shapes: x always carries an explicit trailing state axis of length d.
beta returns x.shape, f and G return x.shape[:-1].  Path-dependent
sets broadcast an (n_paths,)-shaped factor into the result.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = [
    "CoefficientSet",
    "register_scenario",
    "scenario",
    "scenario_names",
    "control_grid",
    "reach_radius",
    "probe_lattice",
    "a1_audit",
]

MAX_STATE_DIM = 3
MAX_NOISE_DIM = 2


def control_grid(lo=-1.0, hi=1.0, n_points=21, dim=1):
    """Uniform finite control set, shape (n_points**dim, dim)."""
    if n_points < 1:
        raise ValueError("n_points must be >= 1")
    axis = np.linspace(lo, hi, n_points)
    if dim == 1:
        return axis[:, None]
    grids = np.meshgrid(*([axis] * dim), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=-1)


@dataclass
class CoefficientSet:
    """Drift/cost/terminal data of one control problem.

    Attributes
    ----------
    d, n : state and control dimension
    controls : (n_controls, n) finite control set; ties in minimizations
        are broken toward the lowest row index.
    beta, f, G : vectorized callables, see module docstring.
    L : declared uniform bound (sup norms and Lipschitz constants of
        beta, f, G are all <= L).
    lip_x : spatial Lipschitz bound, <= L; used to size smoothing levels.
    drift_growth : (a, b) with |beta(t,x,v,w)| <= a + b|x|; gives the
        sharp reachable-set radius used for lattices and probe grids.
    deterministic : True when no coefficient reads the path argument.
    """

    name: str
    d: int
    n: int
    controls: np.ndarray
    beta: Callable
    f: Callable
    G: Callable
    L: float
    lip_x: float
    drift_growth: tuple = (1.0, 0.0)
    deterministic: bool = True
    m_required: int = 1
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 1 <= self.d <= MAX_STATE_DIM:
            raise ValueError(f"state dimension d={self.d} outside 1..{MAX_STATE_DIM}")
        if self.n < 1:
            raise ValueError("control dimension must be >= 1")
        self.controls = np.atleast_2d(np.asarray(self.controls, float))
        if self.controls.shape[1] != self.n:
            raise ValueError("control grid does not match control dimension")
        if self.L <= 0:
            raise ValueError("declared bound L must be positive")

    @property
    def n_controls(self):
        return self.controls.shape[0]


def reach_radius(coeffs, x0_max, T, margin=0.0):
    """Radius of a box certain to contain every Euler trajectory.

    Uses |beta| <= a + b|x| and Gronwall: |X_t| <= (|x0| + a t) e^{b t}.
    """
    a, b = coeffs.drift_growth
    return float((abs(x0_max) + a * T) * np.exp(b * T) + margin)


def probe_lattice(radius, d, n_points=None):
    """Centered cubic probe lattice of about 2^d * 33 points."""
    if n_points is None:
        n_points = int(np.ceil((2.0**d * 33.0) ** (1.0 / d)))
        if n_points % 2 == 0:
            n_points += 1  # keep 0 in the lattice: kinks sit there
    axis = np.linspace(-radius, radius, n_points)
    if d == 1:
        return axis[:, None]
    grids = np.meshgrid(*([axis] * d), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=-1)


# ---------------------------------------------------------------------------
# registry

_REGISTRY = {}


def register_scenario(name, builder):
    """Register a coefficient-set builder under a scenario name."""
    if not callable(builder):
        raise ValueError("builder must be callable")
    _REGISTRY[name] = builder


def scenario(name, **params):
    """Instantiate a registered scenario; unknown names raise KeyError."""
    try:
        builder = _REGISTRY[name]
    except KeyError:
        raise KeyError(
            f"unknown scenario {name!r}; known: {sorted(_REGISTRY)}"
        ) from None
    return builder(**params)


def scenario_names():
    return sorted(_REGISTRY)


def _clip_dist(x, cap=10.0):
    return np.clip(np.linalg.norm(x, axis=-1), 0.0, cap)


def _eikonal(n_points=21, cap=10.0):
    def beta(t, x, v, w):
        return np.zeros_like(x) + np.asarray(v, float)

    def f(t, x, v, w):
        return np.zeros(x.shape[:-1])

    def G(x, w):
        return _clip_dist(x, cap)

    return CoefficientSet(
        name="eikonal",
        d=1,
        n=1,
        controls=control_grid(-1.0, 1.0, n_points),
        beta=beta,
        f=f,
        G=G,
        L=cap + 2.0,
        lip_x=1.0,
        drift_growth=(1.0, 0.0),
        deterministic=True,
        params={"n_points": n_points, "cap": cap},
    )


def _linear_drift(n_points=21, pull=0.5, cap=10.0):
    def beta(t, x, v, w):
        return -pull * x + np.asarray(v, float)

    def f(t, x, v, w):
        vv = float(np.sum(np.square(v)))
        return np.full(x.shape[:-1], 0.1 * vv)

    def G(x, w):
        return _clip_dist(x, cap)

    return CoefficientSet(
        name="linear-drift",
        d=1,
        n=1,
        controls=control_grid(-1.0, 1.0, n_points),
        beta=beta,
        f=f,
        G=G,
        L=cap + 5.0,
        lip_x=1.0,
        drift_growth=(1.0, pull),
        deterministic=True,
        params={"n_points": n_points, "pull": pull, "cap": cap},
    )


def _random_target(n_points=21, cap=10.0):
    # terminal cost: distance to a target revealed at the horizon
    def beta(t, x, v, w):
        return np.zeros_like(x) + np.asarray(v, float)

    def f(t, x, v, w):
        return np.zeros(x.shape[:-1])

    def G(x, w):
        target = np.tanh(w.terminal[:, 0])
        return np.clip(np.abs(x[..., 0] - target), 0.0, cap)

    return CoefficientSet(
        name="random-target",
        d=1,
        n=1,
        controls=control_grid(-1.0, 1.0, n_points),
        beta=beta,
        f=f,
        G=G,
        L=cap + 2.0,
        lip_x=1.0,
        drift_growth=(1.0, 0.0),
        deterministic=False,
        m_required=1,
        params={"n_points": n_points, "cap": cap},
    )


def _constant_run_cost(n_points=3):
    def beta(t, x, v, w):
        return np.zeros_like(x)

    def f(t, x, v, w):
        return np.ones(x.shape[:-1])

    def G(x, w):
        return np.zeros(x.shape[:-1])

    return CoefficientSet(
        name="constant-run-cost",
        d=1,
        n=1,
        controls=control_grid(-1.0, 1.0, n_points),
        beta=beta,
        f=f,
        G=G,
        L=1.0,
        lip_x=1.0,
        drift_growth=(0.0, 0.0),
        deterministic=True,
        params={"n_points": n_points},
    )


def _zeros(n_points=3):
    def beta(t, x, v, w):
        return np.zeros_like(x)

    def f(t, x, v, w):
        return np.zeros(x.shape[:-1])

    def G(x, w):
        return np.zeros(x.shape[:-1])

    return CoefficientSet(
        name="zeros",
        d=1,
        n=1,
        controls=control_grid(-1.0, 1.0, n_points),
        beta=beta,
        f=f,
        G=G,
        L=1.0,
        lip_x=1.0,
        drift_growth=(0.0, 0.0),
        deterministic=True,
        params={"n_points": n_points},
    )


register_scenario("eikonal", _eikonal)
register_scenario("linear-drift", _linear_drift)
register_scenario("random-target", _random_target)
register_scenario("constant-run-cost", _constant_run_cost)
register_scenario("zeros", _zeros)


# ---------------------------------------------------------------------------
# declared-bound audit

def a1_audit(coeffs, ensemble=None, radius=None, n_times=5, pair_step=1):
    """Empirical check of the declared uniform bound on sampled probes.

    Evaluates |beta|, |f|, |G| and their spatial difference quotients on
    a probe lattice at a few knots (per path when the set reads the
    ensemble) and compares against coeffs.L.  Returns a report dict
    with observed maxima; ``passed`` is True when all stay <= L.
    """
    if radius is None:
        radius = reach_radius(coeffs, 1.0, 1.0 if ensemble is None else ensemble.grid.T)
    probes = probe_lattice(radius, coeffs.d)
    if ensemble is not None:
        times = np.linspace(0.0, ensemble.grid.T, n_times)
        knots = sorted({ensemble.grid.index_of(round(t / ensemble.grid.dt) * ensemble.grid.dt) for t in times})
    else:
        knots = [0]

    x = probes[:, None, :]  # (n_probes, 1, d) broadcasting against paths
    sup_val = 0.0
    sup_quot = 0.0
    for k in knots:
        t = 0.0 if ensemble is None else ensemble.grid.knots[k]
        w = None if coeffs.deterministic else ensemble.slice_at(k)
        wT = None if coeffs.deterministic else ensemble.slice_at(k, terminal_ok=True)
        for v in coeffs.controls:
            b = np.asarray(coeffs.beta(t, x, v, w))
            c = np.asarray(coeffs.f(t, x, v, w))
            sup_val = max(sup_val, float(np.abs(b).max()), float(np.abs(c).max()))
            sup_quot = max(sup_quot, _max_quotient(b, probes, pair_step))
            sup_quot = max(sup_quot, _max_quotient(c[..., None], probes, pair_step))
        g = np.asarray(coeffs.G(x, wT))
        sup_val = max(sup_val, float(np.abs(g).max()))
        sup_quot = max(sup_quot, _max_quotient(g[..., None], probes, pair_step))

    return {
        "L": coeffs.L,
        "sup_value": sup_val,
        "sup_quotient": sup_quot,
        "radius": radius,
        "passed": bool(sup_val <= coeffs.L + 1e-12 and sup_quot <= coeffs.L + 1e-9),
    }


def _max_quotient(vals, probes, step):
    # difference quotients along consecutive probe rows
    dv = np.abs(vals[step:] - vals[:-step]).max(axis=tuple(range(1, vals.ndim)))
    dx = np.linalg.norm(probes[step:] - probes[:-step], axis=-1)
    ok = dx > 0
    if not ok.any():
        return 0.0
    return float((dv[ok] / dx[ok]).max())
