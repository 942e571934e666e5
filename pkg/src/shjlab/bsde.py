"""Least-squares Monte-Carlo backward SDE solver and cost majorants.

All drivers in scope read only the path prefix, never (Y, Z), so one
backward sweep suffices:

    Y_k = E_k[ Y_{k+1} + g(t_k) dt ],     Z_k = E_k[ Y_{k+1} dW_k ] / dt,

with the conditional expectations realized as cross-path projections.
On top of the solver sit the approximation-error bound process, the
fixed-policy cost surface, and their sum: a field that dominates the
exact cost and satisfies the supersolution-side residual inequality.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fields import AdaptedField
from .probspace import CondExpOperator
from .valuefn import ValueSurface, default_basis

__all__ = [
    "BsdeSpec",
    "BsdeSolution",
    "solve_bsde",
    "error_bound_bsde",
    "policy_cost_surface",
    "cost_majorant",
]


@dataclass
class BsdeSpec:
    """Terminal condition plus driver on a fixed ensemble.

    Parameters
    ----------
    ensemble : WienerEnsemble
        Carries the filtration, the regression features, and the
        increments used for the Z extraction.  Product-space problems
        pass a merged ensemble.
    terminal : (n_paths,) array
        Horizon value, measurable at the last knot.
    generator : None, callable, or array
        Driver g.  A callable receives (t, path_slice) and returns a
        scalar or (n_paths,) array; an array is (n_steps,) or
        (n_steps, n_paths) of pre-evaluated driver values; None means
        zero driver.
    """

    ensemble: object
    terminal: np.ndarray
    generator: object = None

    def __post_init__(self):
        self.terminal = np.asarray(self.terminal, float)
        if self.terminal.shape != (self.ensemble.n_paths,):
            raise ValueError(
                f"terminal must have shape ({self.ensemble.n_paths},)"
            )
        if not np.all(np.isfinite(self.terminal)):
            raise ValueError("terminal condition must be finite")

    def driver_at(self, k):
        """Driver values at knot k, broadcast to (n_paths,)."""
        n_paths = self.ensemble.n_paths
        if self.generator is None:
            return np.zeros(n_paths)
        if callable(self.generator):
            t = self.ensemble.grid.knots[k]
            g = np.asarray(self.generator(t, self.ensemble.slice_at(k)), float)
        else:
            g = np.asarray(self.generator, float)[k]
        return np.broadcast_to(g, (n_paths,))


@dataclass
class BsdeSolution:
    """Backward solution samples.

    Y has a row per knot (terminal row equals the terminal condition
    bit-exactly); Z rows exist at knots 0..n-1.  driver keeps the
    evaluated generator so downstream drift assembly reuses it.
    """

    grid: object
    Y: np.ndarray            # (n_steps + 1, n_paths)
    Z: np.ndarray            # (n_steps, n_paths, m)
    driver: np.ndarray       # (n_steps, n_paths)
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_paths(self):
        return self.Y.shape[1]

    def mean(self):
        return self.Y.mean(axis=1)

    def sup_rms(self):
        """max_k sqrt(E Y_k^2); the ladder norm for the error bounds."""
        return float(np.max(np.sqrt(np.mean(self.Y**2, axis=1))))


def solve_bsde(spec, basis=None):
    """One backward least-squares sweep.

    Parameters
    ----------
    spec : BsdeSpec
    basis : RegressionBasis, optional
        Defaults to degree-3 polynomials of the current Brownian value
        (all coordinates for product ensembles).

    Returns
    -------
    BsdeSolution with per-knot regression residuals in diagnostics.
    """
    ens = spec.ensemble
    grid = ens.grid
    n, dt = grid.n_steps, grid.dt
    if basis is None:
        basis = default_basis(m=ens.m)

    Y = np.empty((n + 1, ens.n_paths))
    Z = np.zeros((n, ens.n_paths, ens.m))
    driver = np.empty((n, ens.n_paths))
    resid = np.zeros(n + 1)
    ridge_any = False

    Y[n] = spec.terminal
    for k in range(n - 1, -1, -1):
        g = spec.driver_at(k)
        driver[k] = g
        op = CondExpOperator(ens, k, basis)
        pY = op.apply(Y[k + 1])
        Y[k] = pY + dt * op.apply(g)
        # centering by the projection leaves the covariation identity
        # intact and keeps Z exactly zero for deterministic integrands
        dW = ens.increments[:, k, :]
        Z[k] = op.apply(((Y[k + 1] - pY)[:, None] * dW).T).T / dt
        ridge_any = ridge_any or op.used_ridge
        resid[k] = float(np.sqrt(np.mean((Y[k + 1] + g * dt - Y[k]) ** 2)))

    return BsdeSolution(grid, Y, Z, driver, {
        "residual_rms": resid,
        "used_ridge": ridge_any,
        "basis": list(basis.names),
    })


def error_bound_bsde(errors, gain, ensemble, basis=None):
    """Bound process for a coefficient approximation.

    Terminal condition is the terminal-cost gap; the driver is the
    running gap plus ``gain`` times the drift gap, the gain being the
    Lipschitz constant the gradient argument consumes.  All data are
    nonnegative, so Y dominates zero up to regression noise.
    """
    if errors.df.shape[0] != ensemble.grid.n_steps:
        raise ValueError("error processes were built on a different grid")
    spec = BsdeSpec(ensemble, errors.dG,
                    errors.df + float(gain) * errors.dbeta)
    sol = solve_bsde(spec, basis=basis)
    sol.diagnostics["gain"] = float(gain)
    return sol


def policy_cost_surface(coeffs, ensemble, policy, lattice, *, basis=None,
                        store_knots="all", tag="u"):
    """Cost-to-go of a fixed policy on a lattice, by backward recursion.

    Same sweep as the value recursion with the minimization replaced by
    the policy's control choice, so the result is the conditional cost
    field u(s, x) of that policy under ``coeffs``.

    Parameters
    ----------
    coeffs : coefficient set (typically a mollified or tensor-form one).
    ensemble : WienerEnsemble.
    policy : ControlPolicy; feedback policies are read at the lattice
        points themselves.
    lattice : BoxLattice.
    store_knots : "all" or iterable of knots to retain pathwise.

    Returns a ValueSurface tagged ``tag`` (no argmin tables).
    """
    grid = ensemble.grid
    n, dt = grid.n_steps, grid.dt
    collapsed = coeffs.deterministic and policy.collapsed
    regress = not coeffs.deterministic
    n_eff = 1 if collapsed else (ensemble.n_paths if regress else 1)
    if basis is None and regress:
        basis = default_basis(m=ensemble.m)
    if store_knots == "all":
        keep = set(range(n + 1))
    else:
        keep = set(int(j) for j in store_knots) | {0, n}

    x_eval = lattice.points[:, None, :]
    states = np.broadcast_to(x_eval, (lattice.n_points, n_eff, lattice.d))
    wT = None if coeffs.deterministic else ensemble.slice_at(n, terminal_ok=True)
    U = np.broadcast_to(np.asarray(coeffs.G(x_eval, wT), float),
                        (lattice.n_points, n_eff)).copy()

    mean = np.full((n + 1, lattice.n_points), np.nan)
    se = np.zeros((n + 1, lattice.n_points))
    slices = {}
    resid_rms = np.zeros(n)
    clamped = evals = 0

    mean[n] = U.mean(axis=1)
    if n_eff > 1:
        se[n] = U.std(axis=1, ddof=1) / np.sqrt(n_eff)
    if n in keep:
        slices[n] = U.copy()

    for k in range(n - 1, -1, -1):
        t = grid.knots[k]
        w = None if coeffs.deterministic else ensemble.slice_at(k)
        idx = np.broadcast_to(
            np.asarray(policy.indices_at(k, t, states, ensemble), int),
            (lattice.n_points, n_eff),
        )
        raw = np.empty((lattice.n_points, n_eff))
        for j in np.unique(idx):
            mask = idx == j
            v = coeffs.controls[j]
            b = np.asarray(coeffs.beta(t, x_eval, v, w), float)
            pos = x_eval + dt * b
            tgt, nc = lattice.interp(U, pos)
            clamped += nc
            evals += tgt.size
            fv = np.asarray(coeffs.f(t, x_eval, v, w), float)
            vals = np.broadcast_to(fv * dt + tgt, raw.shape)
            raw[mask] = vals[mask]
        if regress:
            op = CondExpOperator(ensemble, k, basis)
            U = op.apply(raw)
            resid_rms[k] = float(np.sqrt(np.mean((raw - U) ** 2)))
        else:
            U = raw
        mean[k] = raw.mean(axis=-1)
        if n_eff > 1:
            se[k] = raw.std(axis=-1, ddof=1) / np.sqrt(n_eff)
        if k in keep:
            slices[k] = U.copy()

    diagnostics = {
        "clamp_fraction": clamped / max(evals, 1),
        "residual_rms": resid_rms,
        "n_eff": n_eff,
    }
    return ValueSurface(grid, lattice, tag, mean, se, slices, None,
                        collapsed or not regress, ensemble.n_paths, diagnostics)


def cost_majorant(surface, bound, coeffs, policy, ensemble):
    """Policy cost plus its error bound, with an analytic drift part.

    The drift density of the sum field is assembled from the recursion
    that produced each part: the cost surface contributes
    -(beta . Du + f) at the policy's control, the bound process
    contributes minus its own driver.  No noise integrand is attached;
    residual checks only need the drift and the spatial gradient.

    Parameters
    ----------
    surface : ValueSurface from policy_cost_surface (pathwise slices at
        every knot of ``bound``'s grid that the field should carry).
    bound : BsdeSolution from error_bound_bsde on the same grid.
    coeffs : the coefficient set the surface was recursed under.
    policy : the same policy.
    ensemble : the shared ensemble.

    Returns an AdaptedField sampled wherever the surface kept slices.
    """
    grid = ensemble.grid
    if surface.grid != grid or bound.grid != grid:
        raise ValueError("surface, bound and ensemble grids differ")
    if bound.n_paths != ensemble.n_paths:
        raise ValueError("bound was solved on a different path count")

    lattice = surface.lattice
    n_paths = ensemble.n_paths
    x_eval = lattice.points[:, None, :]
    values = {}
    drift = {}
    for k in sorted(surface.slices):
        u_k = surface.pathwise(k)
        values[k] = np.broadcast_to(u_k, (lattice.n_points, n_paths)) \
            + bound.Y[k][None, :]
        if k == grid.n_steps:
            continue
        t = grid.knots[k]
        w = None if coeffs.deterministic else ensemble.slice_at(k)
        n_eff = u_k.shape[1]
        states = np.broadcast_to(x_eval, (lattice.n_points, n_eff, lattice.d))
        idx = np.broadcast_to(
            np.asarray(policy.indices_at(k, t, states, ensemble), int),
            (lattice.n_points, n_eff),
        )
        cube = u_k.reshape(tuple(lattice.counts) + (n_eff,))
        grad = np.empty((lattice.n_points, n_eff, lattice.d))
        for a in range(lattice.d):
            grad[..., a] = np.gradient(cube, lattice.h, axis=a).reshape(
                lattice.n_points, n_eff
            )
        adv = np.empty((lattice.n_points, n_eff))
        for j in np.unique(idx):
            mask = idx == j
            v = coeffs.controls[j]
            b = np.asarray(coeffs.beta(t, x_eval, v, w), float)
            fv = np.asarray(coeffs.f(t, x_eval, v, w), float)
            term = np.broadcast_to(
                np.sum(np.broadcast_to(b, grad.shape) * grad, axis=-1) + fv,
                adv.shape,
            )
            adv[mask] = term[mask]
        drift[k] = -np.broadcast_to(adv, (lattice.n_points, n_paths)) \
            - bound.driver[k][None, :]

    diagnostics = {
        "tag_parts": (surface.tag, "bound"),
        "bound_sup_rms": bound.sup_rms(),
        "residual_rms": {
            k: float(surface.diagnostics["residual_rms"][k]
                     + bound.diagnostics["residual_rms"][k])
            for k in range(grid.n_steps)
        },
    }
    return AdaptedField(grid, lattice, values, drift, None,
                        tag=f"{surface.tag}+bound", diagnostics=diagnostics)
