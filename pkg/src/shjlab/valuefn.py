"""Cost functionals and dynamic-programming value surfaces.

The value of the control problem is computed backward on a state
lattice: the terminal slice is the pathwise terminal cost, and each
step minimizes (running cost) * dt + E[next slice at the Euler image]
over the finite control grid, with conditional expectations replaced
by cross-path least-squares projections.  Path-independent problems
collapse to a single effective path and need no regression at all.

Ties in every minimization break toward the lowest control index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import integrate
from .exceptions import AccuracyError, CapacityError
from .probspace import CondExpOperator, polynomial_basis
from .coeffs import reach_radius

__all__ = [
    "BoxLattice",
    "ControlPolicy",
    "ValueSurface",
    "CostEstimate",
    "default_basis",
    "cost_J",
    "value_V",
    "value_audit",
]

# pathwise slices stored at every knot only below this element count
AUTO_STORE_BUDGET = 80_000_000


class BoxLattice:
    """Uniform box lattice in 1..3 dimensions with multilinear interpolation."""

    def __init__(self, lo, hi, h):
        lo = np.atleast_1d(np.asarray(lo, float))
        hi = np.atleast_1d(np.asarray(hi, float))
        if lo.shape != hi.shape or not (hi > lo).all():
            raise ValueError("need lo < hi per axis")
        self.d = lo.size
        if self.d > 3:
            raise ValueError("lattice dimension capped at 3")
        self.h = float(h)
        if self.h <= 0:
            raise ValueError("spacing must be positive")
        self.counts = np.maximum(np.round((hi - lo) / self.h).astype(int) + 1, 2)
        self.lo = lo
        self.hi = lo + (self.counts - 1) * self.h
        self.axes = [self.lo[a] + self.h * np.arange(self.counts[a])
                     for a in range(self.d)]
        if self.d == 1:
            self.points = self.axes[0][:, None]
        else:
            grids = np.meshgrid(*self.axes, indexing="ij")
            self.points = np.stack([g.ravel() for g in grids], axis=-1)
        self.n_points = self.points.shape[0]
        self.strides = np.ones(self.d, int)
        for a in range(self.d - 2, -1, -1):
            self.strides[a] = self.strides[a + 1] * self.counts[a + 1]

    @classmethod
    def centered(cls, radius, h, d=1):
        return cls(np.full(d, -radius), np.full(d, radius), h)

    @classmethod
    def for_problem(cls, coeffs, T, x0_max, h, margin=0.0):
        """Lattice sized to the reachable set from |x0| <= x0_max."""
        r = reach_radius(coeffs, x0_max, T, margin=margin + h)
        return cls.centered(r, h, coeffs.d)

    def nearest_flat(self, pos):
        """Flat index of the nearest lattice point, clamped to the box."""
        pos = np.asarray(pos, float)
        flat = np.zeros(pos.shape[:-1], int)
        for a in range(self.d):
            i = np.clip(np.round((pos[..., a] - self.lo[a]) / self.h).astype(int),
                        0, self.counts[a] - 1)
            flat = flat + i * self.strides[a]
        return flat

    def interp(self, values, pos):
        """Multilinear interpolation of pathwise lattice fields.

        values : (n_points, n_eff) one field column per effective path.
        pos : (..., E, d) with E == n_eff, or E == 1, or n_eff == 1.
        Returns (vals, n_clamped) where vals broadcasts (..., max(E, n_eff))
        and n_clamped counts evaluation points outside the box.
        """
        pos = np.asarray(pos, float)
        idx = []
        frac = []
        out_mask = None
        for a in range(self.d):
            u = (pos[..., a] - self.lo[a]) / self.h
            bad = (u < 0.0) | (u > self.counts[a] - 1)
            out_mask = bad if out_mask is None else (out_mask | bad)
            u = np.clip(u, 0.0, self.counts[a] - 1.0)
            i = np.minimum(u.astype(int), self.counts[a] - 2)
            idx.append(i)
            frac.append(u - i)
        n_clamped = int(out_mask.sum())

        n_eff = values.shape[1]
        eff_ids = np.arange(n_eff)
        vals = 0.0
        for corner in range(1 << self.d):
            flat = 0
            weight = 1.0
            for a in range(self.d):
                if corner >> a & 1:
                    flat = flat + (idx[a] + 1) * self.strides[a]
                    weight = weight * frac[a]
                else:
                    flat = flat + idx[a] * self.strides[a]
                    weight = weight * (1.0 - frac[a])
            vals = vals + weight * values[flat, eff_ids]
        return vals, n_clamped


class ControlPolicy:
    """Adapted control selection: constant, open-loop, or lattice feedback."""

    def __init__(self, kind, data, collapsed, adapted=True):
        self.kind = kind
        self.data = data
        self.collapsed = collapsed
        self.adapted = adapted

    @classmethod
    def constant(cls, index):
        return cls("constant", int(index), True)

    @classmethod
    def open_loop(cls, indices, adapted=True):
        """indices: (n_steps,) shared or (n_steps, n_paths) per path.

        The adapted flag is the caller's declaration that per-path rows
        were built from path history only; audits may override it.
        """
        indices = np.asarray(indices, int)
        if indices.ndim not in (1, 2):
            raise ValueError("open-loop indices must be 1- or 2-dimensional")
        return cls("open-loop", indices, indices.ndim == 1, adapted)

    @classmethod
    def feedback(cls, surface):
        """Greedy policy reading a value surface's stored argmin tables."""
        if surface.argmin is None:
            raise ValueError("surface carries no argmin tables")
        return cls("feedback", surface, surface.collapsed)

    def indices_at(self, k, t, states, ensemble):
        if self.kind == "constant":
            return self.data
        if self.kind == "open-loop":
            return self.data[k]
        surface = self.data
        table = surface.argmin.get(k)
        if table is None:
            raise ValueError(f"no argmin table stored at knot {k}")
        flat = surface.lattice.nearest_flat(states)
        eff = np.arange(table.shape[1])
        return table[flat, eff]

    def materialize(self, batch):
        """Dense (n_steps, n_eff) control indices actually applied in a run."""
        n = batch.grid.n_steps
        rows = [batch.controls[k][0] if batch.controls[k].shape[0] == 1
                else batch.controls[k].max(axis=0) for k in range(batch.k0, n)]
        return np.stack(rows)


@dataclass
class ValueSurface:
    """Backward-induction estimates of a value (or fixed-policy cost) field.

    mean/se rows exist at every knot; pathwise slices (n_points, n_eff)
    and argmin tables only at the stored knots.  n_eff == 1 marks a
    collapsed (path-independent) surface.
    """

    grid: object
    lattice: BoxLattice
    tag: str
    mean: np.ndarray
    se: np.ndarray
    slices: dict
    argmin: dict | None
    collapsed: bool
    n_paths: int
    diagnostics: dict = field(default_factory=dict)

    def pathwise(self, k):
        try:
            return self.slices[int(k)]
        except KeyError:
            raise KeyError(f"knot {k} not stored; kept: {sorted(self.slices)}") from None

    def at_states(self, k, states):
        """Interpolate the knot-k slice at per-path states (..., E, d)."""
        vals, _ = self.lattice.interp(self.pathwise(k), states)
        return vals

    def mean_at(self, k, x):
        vals, _ = self.lattice.interp(self.mean[int(k)][:, None], np.atleast_2d(x)[:, None, :])
        return vals[:, 0]


@dataclass
class CostEstimate:
    """Conditional cost of one policy from a batch of starting states."""

    start_knot: int
    starts: np.ndarray
    per_path: np.ndarray   # (n_starts, n_eff) conditional estimates
    raw: np.ndarray        # (n_starts, n_eff) pathwise cost realizations
    mean: np.ndarray       # (n_starts,)
    se: np.ndarray         # (n_starts,)
    info: dict


def default_basis(degree=3, m=1):
    if m == 1:
        return polynomial_basis(degree)
    return polynomial_basis(degree, coords=tuple(range(m)))


def cost_J(coeffs, ensemble, policy, starts, *, start_knot=0, basis=None,
           noise_level=0.0, noise_ensemble=None):
    """Pathwise cost of a fixed policy, conditioned at the start knot.

    Integrates the controlled dynamics from each start, accumulates the
    running cost, adds the terminal cost, and projects onto the basis at
    the start knot (sample mean at knot 0).
    """
    grid = ensemble.grid
    starts = np.atleast_2d(np.asarray(starts, float))
    batch = integrate(coeffs, ensemble, policy, starts, k0=start_knot,
                      noise_level=noise_level, noise_ensemble=noise_ensemble,
                      store_knots=[start_knot])
    wT = None if coeffs.deterministic else ensemble.slice_at(grid.n_steps, terminal_ok=True)
    terminal = np.broadcast_to(np.asarray(coeffs.G(batch.terminal, wT)),
                               batch.total_cost.shape)
    raw = batch.total_cost + terminal

    info = {"collapsed": batch.collapsed}
    if batch.collapsed:
        per_path = raw.copy()
        mean = raw[:, 0].copy()
        se = np.zeros(starts.shape[0])
    else:
        if basis is None:
            basis = default_basis(m=ensemble.m)
        op = CondExpOperator(ensemble, start_knot, basis)
        per_path = op.apply(raw)
        info["used_ridge"] = op.used_ridge
        info["residual_rms"] = float(np.sqrt(np.mean((raw - per_path) ** 2)))
        mean = raw.mean(axis=1)
        se = raw.std(axis=1, ddof=1) / np.sqrt(raw.shape[1])
    return CostEstimate(start_knot, starts, per_path, raw, mean, se, info)


def value_V(coeffs, ensemble, lattice, *, basis=None, noise_level=0.0,
            noise_ensemble=None, store_knots="auto", keep_argmin=True,
            clamp_tol=0.01, tag="V"):
    """Backward dynamic-programming value surface on a lattice.

    Parameters
    ----------
    coeffs : coefficient set (base, mollified, or tensor-form).
    ensemble : WienerEnsemble carrying the coefficient filtration.
    lattice : BoxLattice covering the reachable set.
    basis : RegressionBasis for the cross-path projections (degree-3
        polynomials of the current Brownian value by default).
    noise_level, noise_ensemble : optional independent state noise
        delta * dB added to every Euler image (regularized problems).
    store_knots : "auto", "all", or iterable of knots at which pathwise
        slices (and argmin tables) are retained.
    clamp_tol : lattice-exit budget; exceeding it raises AccuracyError.

    Returns a ValueSurface whose terminal slice is the exact pathwise
    terminal cost.
    """
    grid = ensemble.grid
    n = grid.n_steps
    dt = grid.dt
    if noise_level and noise_ensemble is None:
        raise ValueError("noise_level > 0 needs a noise ensemble")

    collapsed = coeffs.deterministic and noise_level == 0.0
    regress = not coeffs.deterministic
    n_eff = 1 if collapsed else (ensemble.n_paths if regress else 1)
    # deterministic problem + noise keeps a collapsed slice through mean
    # projections; the effective column count stays 1
    if basis is None and regress:
        basis = default_basis(m=ensemble.m)

    if store_knots == "all":
        keep = set(range(n + 1))
    elif store_knots == "auto":
        per_knot = lattice.n_points * max(n_eff, 1)
        if (n + 1) * per_knot <= AUTO_STORE_BUDGET:
            keep = set(range(n + 1))
        else:
            stride = max(1, n // 8)
            keep = set(range(0, n + 1, stride)) | {0, n}
    else:
        keep = set(int(j) for j in store_knots) | {0, n}
    if lattice.n_points * max(ensemble.n_paths, 1) > AUTO_STORE_BUDGET:
        raise CapacityError("lattice x paths working set exceeds budget")

    x_eval = lattice.points[:, None, :]
    wT = None if coeffs.deterministic else ensemble.slice_at(n, terminal_ok=True)
    V = np.broadcast_to(np.asarray(coeffs.G(x_eval, wT), float),
                        (lattice.n_points, n_eff)).copy()

    mean = np.full((n + 1, lattice.n_points), np.nan)
    se = np.zeros((n + 1, lattice.n_points))
    slices = {}
    argmins = {} if keep_argmin else None
    resid_rms = np.zeros(n)
    ridge_any = False
    clamped = 0
    evals = 0

    mean[n] = V.mean(axis=1)
    if regress:
        se[n] = V.std(axis=1, ddof=1) / np.sqrt(n_eff)
    if n in keep:
        slices[n] = V.copy()

    idx_dtype = np.int8 if coeffs.n_controls <= 127 else np.int16
    for k in range(n - 1, -1, -1):
        t = grid.knots[k]
        w = None if coeffs.deterministic else ensemble.slice_at(k)
        op = CondExpOperator(ensemble, k, basis) if regress else None
        dB = (noise_level * noise_ensemble.increments[:, k, :]
              if noise_level else None)

        best = best_raw = best_idx = None
        for j in range(coeffs.n_controls):
            v = coeffs.controls[j]
            b = np.asarray(coeffs.beta(t, x_eval, v, w), float)
            pos = x_eval + dt * b
            if dB is not None:
                pos = pos + dB
            tgt, nc = lattice.interp(V, pos)
            clamped += nc
            evals += tgt.size
            fv = np.asarray(coeffs.f(t, x_eval, v, w), float)
            raw = fv * dt + tgt
            if op is not None:
                cont = op.apply(tgt)
                total = fv * dt + cont
            elif noise_level:
                total = raw.mean(axis=-1, keepdims=True)
            else:
                total = raw
            if best is None:
                best = total
                best_raw = raw
                best_idx = np.zeros(total.shape, idx_dtype)
            else:
                better = total < best
                best = np.where(better, total, best)
                best_raw = np.where(np.broadcast_to(better, raw.shape), raw, best_raw)
                best_idx = np.where(better, idx_dtype(j), best_idx)

        V = best
        if op is not None:
            ridge_any = ridge_any or op.used_ridge
            resid_rms[k] = float(np.sqrt(np.mean((best_raw - best) ** 2)))
        mean[k] = best_raw.mean(axis=-1)
        if best_raw.shape[-1] > 1:
            se[k] = best_raw.std(axis=-1, ddof=1) / np.sqrt(best_raw.shape[-1])
        if k in keep:
            slices[k] = V.copy()
        if argmins is not None and k in keep:
            argmins[k] = best_idx.copy()

    frac = clamped / max(evals, 1)
    if frac > clamp_tol:
        raise AccuracyError(
            f"{100 * frac:.2f}% of lattice evaluations left the box (budget "
            f"{100 * clamp_tol:.1f}%); enlarge the lattice"
        )
    diagnostics = {
        "clamp_fraction": frac,
        "residual_rms": resid_rms,
        "used_ridge": ridge_any,
        "n_eff": n_eff,
    }
    return ValueSurface(grid, lattice, tag, mean, se, slices, argmins,
                        collapsed or not regress, ensemble.n_paths, diagnostics)


def value_audit(coeffs, ensemble, surface, starts, *, policies=None, basis=None,
                subgrid=None, abs_tol=0.01, eps_report_tol=0.05,
                lipschitz_bound=None):
    """Structural checks on a value surface.

    * supermartingale residuals E[V(s~, X_s~) + running cost] - E[V(s, X_s)]
      are >= -(abs_tol + 3 SE) for every audited policy and knot pair,
      expectations taken over paths and the start batch jointly; the
      per-start extreme is reported separately as a diagnostic (it
      carries the O(h) lattice bias concentrated at terminal-cost kinks);
    * sup |V| stays within L (T + 1) (+ 3 SE);
    * lattice Lipschitz quotients stay within the declared bound
      e^{LT} L (T + 1);
    * the greedy argmin policy is eps_report-optimal at the starts.

    Returns a report dict with observed extremes and per-check flags.
    """
    grid = ensemble.grid
    T = grid.T
    L = coeffs.L
    if lipschitz_bound is None:
        lipschitz_bound = float(np.exp(L * T) * L * (T + 1.0))
    starts = np.atleast_2d(np.asarray(starts, float))
    if subgrid is None:
        stride = max(1, grid.n_steps // 8)
        subgrid = [k for k in range(0, grid.n_steps + 1, stride) if k in surface.slices]
        if grid.n_steps not in subgrid:
            subgrid.append(grid.n_steps)
    if policies is None:
        policies = {
            "greedy": ControlPolicy.feedback(surface),
            "last-control": ControlPolicy.constant(coeffs.n_controls - 1),
        }

    worst = np.inf
    worst_info = None
    worst_pointwise = np.inf
    for name, policy in policies.items():
        batch = integrate(coeffs, ensemble, policy, starts, store_knots=subgrid)
        vals = {s: surface.at_states(s, batch.states[s]) for s in subgrid}
        costs = {s: batch.cost_at[s] for s in subgrid}
        for a, s in enumerate(subgrid):
            for s2 in subgrid[a + 1:]:
                term = vals[s2] + (costs[s2] - costs[s]) - vals[s]
                per_path = term.mean(axis=0)      # paths shared across starts
                n_eff = term.shape[-1]
                r = float(per_path.mean())
                sig = (float(per_path.std(ddof=1)) / np.sqrt(n_eff)
                       if n_eff > 1 else 0.0)
                margin = r + abs_tol + 3.0 * sig
                if margin < worst:
                    worst = float(margin)
                    worst_info = {"policy": name, "pair": (s, s2),
                                  "residual": r, "se": sig}
                per_start = term.mean(axis=-1)
                worst_pointwise = min(worst_pointwise,
                                      float(per_start.min()) + abs_tol)
    supermartingale_ok = worst >= 0.0

    sup_V = float(np.nanmax(np.abs(surface.mean)))
    se_max = float(surface.se.max())
    bound_ok = sup_V <= L * (T + 1.0) + 3.0 * se_max

    lip = 0.0
    for k in surface.slices:
        sl = surface.slices[k]
        axis_vals = sl.reshape(tuple(surface.lattice.counts) + (sl.shape[1],))
        for a in range(surface.lattice.d):
            dv = np.abs(np.diff(axis_vals, axis=a)).max() if axis_vals.shape[a] > 1 else 0.0
            lip = max(lip, float(dv) / surface.lattice.h)
    lipschitz_ok = lip <= lipschitz_bound + 1e-9

    greedy = ControlPolicy.feedback(surface)
    est = cost_J(coeffs, ensemble, greedy, starts, basis=basis)
    v0 = np.array([surface.mean_at(0, s[None, :])[0] for s in starts])
    gaps = est.mean - v0
    eps_obs = float(gaps.max())
    eps_ok = bool((gaps <= eps_report_tol + 3.0 * (est.se + surface.se[0].max())).all())

    return {
        "supermartingale_margin": worst,
        "supermartingale_worst": worst_info,
        "supermartingale_pointwise": worst_pointwise,
        "supermartingale_ok": bool(supermartingale_ok),
        "sup_value": sup_V,
        "value_bound": L * (T + 1.0),
        "bound_ok": bool(bound_ok),
        "lipschitz_observed": lip,
        "lipschitz_bound": lipschitz_bound,
        "lipschitz_ok": bool(lipschitz_ok),
        "eps_report": eps_obs,
        "eps_ok": eps_ok,
        "passed": bool(supermartingale_ok and bound_ok and lipschitz_ok and eps_ok),
    }
