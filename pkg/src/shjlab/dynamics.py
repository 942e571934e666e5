"""Euler integration of controlled random ODEs.

States follow dX = beta(t, X, theta_t) dt, path by path, with an
optional independent small-noise term delta * dB for regularized runs.
Restarting the scheme from a stored knot state reproduces the original
tail bit for bit (the flow property of the explicit scheme), which is
what the audits below check, together with growth in the initial
condition and time-increment bounds.

A policy here is any object with
    indices_at(k, t, states, ensemble) -> int or int array
    collapsed -> bool   (True when the choice never reads the path)
"""

from __future__ import annotations

import numpy as np

from .exceptions import IntegrationError

__all__ = ["StateTrajectoryBatch", "integrate", "flow_audit"]


class StateTrajectoryBatch:
    """Euler trajectories started at knot k0 from a batch of points.

    states maps recorded knot -> (n_starts, n_eff, d) array, where
    n_eff is 1 for collapsed (fully deterministic) runs and n_paths
    otherwise.  cost_at maps recorded knot -> running-cost integral
    accumulated on [t_k0, t_k].
    """

    __slots__ = ("grid", "k0", "collapsed", "noise_level", "states", "cost_at",
                 "controls", "n_starts", "n_eff")

    def __init__(self, grid, k0, collapsed, noise_level, states, cost_at, controls):
        self.grid = grid
        self.k0 = k0
        self.collapsed = collapsed
        self.noise_level = noise_level
        self.states = states
        self.cost_at = cost_at
        self.controls = controls
        final = states[grid.n_steps]
        self.n_starts, self.n_eff = final.shape[0], final.shape[1]

    @property
    def terminal(self):
        return self.states[self.grid.n_steps]

    @property
    def total_cost(self):
        return self.cost_at[self.grid.n_steps]


def _dense_indices(idx, shape):
    """Expand control indices to a dense (n_starts, n_eff) int array."""
    return np.broadcast_to(np.asarray(idx, int), shape)


def integrate(coeffs, ensemble, policy, xi, *, k0=0, noise_level=0.0,
              noise_ensemble=None, store_knots="all", check_every=1):
    """Run the explicit Euler scheme from knot k0.

    Parameters
    ----------
    coeffs : coefficient set (possibly mollified / tensor-form).
    ensemble : WienerEnsemble driving coefficients and policy features.
    policy : control policy (see module docstring).
    xi : starting states; (d,), (n_starts, d), or (n_starts, n_paths, d)
        for pre-paired starts.
    noise_level, noise_ensemble : amplitude and source of the optional
        independent Brownian perturbation added to the state.
    store_knots : "all", or an iterable of knots to record (k0 and the
        horizon are always kept).

    Returns StateTrajectoryBatch.
    """
    grid = ensemble.grid
    n = grid.n_steps
    dt = grid.dt
    xi = np.asarray(xi, float)
    if xi.ndim == 1:
        xi = xi[None, :]
    if xi.ndim == 2:
        xi = xi[:, None, :]
    if xi.shape[-1] != coeffs.d:
        raise ValueError(f"starting states must have d={coeffs.d} components")
    if noise_level and noise_ensemble is None:
        raise ValueError("noise_level > 0 needs a noise ensemble")
    if noise_ensemble is not None and noise_level:
        if noise_ensemble.m != coeffs.d or noise_ensemble.grid != grid:
            raise ValueError("noise ensemble must be d-dimensional on the same grid")

    collapsed = (coeffs.deterministic and policy.collapsed
                 and noise_level == 0.0 and xi.shape[1] == 1)
    n_eff = 1 if collapsed else ensemble.n_paths
    n_starts = xi.shape[0]
    X = np.broadcast_to(xi, (n_starts, n_eff, coeffs.d)).astype(float).copy()

    if store_knots == "all":
        keep = set(range(k0, n + 1))
    else:
        keep = set(int(j) for j in store_knots) | {k0, n}

    states = {}
    cost_at = {}
    controls = {}
    cost = np.zeros((n_starts, n_eff))
    if k0 in keep:
        states[k0] = X.copy()
        cost_at[k0] = cost.copy()

    for k in range(k0, n):
        t = grid.knots[k]
        w = None if coeffs.deterministic else ensemble.slice_at(k)
        idx = _dense_indices(policy.indices_at(k, t, X, ensemble), (n_starts, n_eff))
        drift = np.empty_like(X)
        fval = np.empty((n_starts, n_eff))
        for j in np.unique(idx):
            v = coeffs.controls[int(j)]
            mask = idx == j
            b = np.broadcast_to(np.asarray(coeffs.beta(t, X, v, w)), X.shape)
            c = np.broadcast_to(np.asarray(coeffs.f(t, X, v, w)), (n_starts, n_eff))
            drift = np.where(mask[..., None], b, drift)
            fval = np.where(mask, c, fval)
        cost = cost + fval * dt
        X = X + drift * dt
        if noise_level:
            X = X + noise_level * noise_ensemble.increments[:, k, :]
        if check_every and (k - k0) % check_every == 0 and not np.isfinite(X).all():
            raise IntegrationError(f"non-finite state at knot {k + 1}")
        if k + 1 in keep:
            states[k + 1] = X.copy()
            cost_at[k + 1] = cost.copy()
        controls[k] = idx

    if not np.isfinite(X).all():
        raise IntegrationError("non-finite state at the horizon")
    return StateTrajectoryBatch(grid, k0, collapsed, noise_level, states, cost_at,
                                controls)


def flow_audit(coeffs, ensemble, policy, xi, xi_hat=None, *, restart_knot=None):
    """Audit the Euler flow: restart identity, growth, increments, stability.

    Checks, with K = e^{LT}(1 + LT) and the declared L:
      restart    re-integrating from a stored mid-knot state reproduces
                 the stored tail bit for bit;
      growth     max_t |X_t| <= K (1 + |xi|);
      increment  |X_s - X_t| <= K (1 + |xi|) (s - t) on adjacent knots;
      stability  max_t |X_t - X_hat_t| <= e^{LT} |xi - xi_hat| when a
                 perturbed start xi_hat is supplied.

    Returns a report dict with observed ratios and a global ``passed``.
    """
    grid = ensemble.grid
    T = grid.T
    K = float(np.exp(coeffs.L * T) * (1.0 + coeffs.L * T))
    batch = integrate(coeffs, ensemble, policy, xi)
    if restart_knot is None:
        restart_knot = grid.n_steps // 2

    rerun = integrate(coeffs, ensemble, policy,
                      batch.states[restart_knot], k0=restart_knot)
    # restart states enter as (n_starts, n_eff, d), matching the stored tail
    restart_exact = all(
        np.array_equal(rerun.states[k], batch.states[k])
        for k in range(restart_knot, grid.n_steps + 1)
    )

    xi_arr = np.asarray(xi, float).reshape(-1, coeffs.d)
    xi_norm = np.linalg.norm(xi_arr, axis=-1)  # (n_starts,)
    all_states = np.stack([batch.states[k] for k in range(grid.n_steps + 1)])
    norms = np.linalg.norm(all_states, axis=-1)  # (n_knots, n_starts, n_eff)
    growth_ratio = float((norms.max(axis=(0, 2)) / (K * (1.0 + xi_norm))).max())

    steps = np.linalg.norm(np.diff(all_states, axis=0), axis=-1)
    inc_ratio = float(
        (steps.max(axis=(0, 2)) / (K * (1.0 + xi_norm) * grid.dt)).max()
    )

    report = {
        "K": K,
        "restart_exact": bool(restart_exact),
        "growth_ratio": growth_ratio,
        "increment_ratio": inc_ratio,
    }
    if xi_hat is not None:
        other = integrate(coeffs, ensemble, policy, xi_hat)
        gap0 = np.linalg.norm(
            np.asarray(xi, float).reshape(-1, coeffs.d)
            - np.asarray(xi_hat, float).reshape(-1, coeffs.d), axis=-1)
        gaps = np.stack([
            np.linalg.norm(other.states[k] - batch.states[k], axis=-1).max(axis=-1)
            for k in range(grid.n_steps + 1)
        ])
        ratio = gaps.max(axis=0) / np.maximum(gap0, 1e-300)
        report["stability_ratio"] = float(ratio.max() / np.exp(coeffs.L * T))
        report["stability_constant"] = float(ratio.max())
    report["passed"] = bool(
        restart_exact and growth_ratio <= 1.0 and inc_ratio <= 1.0
        and report.get("stability_ratio", 0.0) <= 1.0
    )
    return report
