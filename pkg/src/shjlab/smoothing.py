"""Smoothing machinery for coefficient sets.

Three constructions live here:

* compactly supported bump kernel and discrete mollification of a
  coefficient set at integer level l (kernel support shrinks as 1/l);
* the convex linear-growth penalty obtained by mollifying the hinge
  distance to the unit ball;
* piecewise tensor-form approximants of path-dependent coefficients
  (separable products of a path factor read at fixed knots and a
  spatial profile), fitted by least squares on sampled probes.

Discrete kernels are renormalized to unit mass after quadrature, so
mollification preserves constants and affine maps exactly and never
inflates a Lipschitz constant.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

from .coeffs import CoefficientSet, probe_lattice, reach_radius

__all__ = [
    "bump_kernel",
    "kernel_quadrature",
    "MollifiedSet",
    "mollify",
    "linear_growth_penalty",
    "ApproximationErrors",
    "error_processes",
    "FunctionalApproximant",
    "fit_functional_approximant",
]

_SPHERE_AREA = {1: 2.0, 2: 2.0 * np.pi, 3: 4.0 * np.pi}
_NORMALIZER_CACHE = {}


def _bump_normalizer(d):
    """1 / integral of exp(1/(|x|^2-1)) over the unit ball, via radial quadrature."""
    if d not in _NORMALIZER_CACHE:
        if d not in _SPHERE_AREA:
            raise ValueError("bump kernel implemented for d in {1, 2, 3}")
        val, err = quad(
            lambda r: np.exp(1.0 / (r * r - 1.0)) * r ** (d - 1), 0.0, 1.0,
            epsabs=1e-14, epsrel=1e-13,
        )
        total = _SPHERE_AREA[d] * val
        if err > 1e-10 * total:
            raise ArithmeticError("bump normalization quadrature did not converge")
        _NORMALIZER_CACHE[d] = 1.0 / total
    return _NORMALIZER_CACHE[d]


def bump_kernel(x, level=1):
    """Smooth bump rho_l(x) = l^d rho(l x), supported on |x| < 1/l.

    rho(x) = c exp(1/(|x|^2 - 1)) on the open unit ball, zero outside,
    with c fixed so that rho has unit mass.
    """
    x = np.atleast_2d(np.asarray(x, float))
    d = x.shape[-1]
    c = _bump_normalizer(d)
    u = float(level) * x
    r2 = np.sum(u * u, axis=-1)
    out = np.zeros(r2.shape)
    inside = r2 < 1.0
    out[inside] = c * np.exp(1.0 / (r2[inside] - 1.0))
    return out * float(level) ** d


def kernel_quadrature(d, level=1, n_nodes=17):
    """Discrete mollification kernel: nodes on the ball of radius 1/level.

    Tensor Gauss-Legendre nodes weighted by the bump and renormalized to
    unit mass.  Returns (nodes, weights) with nodes.shape == (q, d).
    """
    if n_nodes < 2:
        raise ValueError("n_nodes must be >= 2")
    xi, wi = np.polynomial.legendre.leggauss(int(n_nodes))
    if d == 1:
        nodes = xi[:, None]
        w = wi.copy()
    else:
        grids = np.meshgrid(*([xi] * d), indexing="ij")
        nodes = np.stack([g.ravel() for g in grids], axis=-1)
        w = np.ones(nodes.shape[0])
        for axis_w in np.meshgrid(*([wi] * d), indexing="ij"):
            w = w * axis_w.ravel()
    r2 = np.sum(nodes * nodes, axis=-1)
    inside = r2 < 1.0
    nodes = nodes[inside]
    dens = np.exp(1.0 / (r2[inside] - 1.0))
    w = w[inside] * dens
    w = w / w.sum()
    return nodes / float(level), w


def mollify(fn, level, d, n_nodes=17):
    """Mollified version of a spatial map: x -> sum_q w_q fn(x - y_q).

    fn must accept arrays shaped (..., d) with arbitrary leading axes.
    Preserves suprema, Lipschitz constants and affine maps exactly
    because the discrete kernel has unit mass and symmetric nodes.
    """
    nodes, weights = kernel_quadrature(d, level, n_nodes)

    def smoothed(x, *args, **kwargs):
        x = np.asarray(x, float)
        shifted = x[None, ...] - nodes.reshape((-1,) + (1,) * (x.ndim - 1) + (nodes.shape[1],))
        vals = np.asarray(fn(shifted, *args, **kwargs))
        return np.tensordot(weights, vals, axes=(0, 0))

    return smoothed


class MollifiedSet:
    """Coefficient set with beta, f, G replaced by spatial mollifications.

    Drop-in replacement for the base CoefficientSet (same calling
    conventions, same declared constants); the kink-smoothing radius is
    1/level.
    """

    def __init__(self, base, level, n_nodes=17):
        if int(level) < 1:
            raise ValueError("mollification level must be >= 1")
        self.base = base
        self.level = int(level)
        self.nodes, self.weights = kernel_quadrature(base.d, self.level, n_nodes)
        self.name = f"{base.name}|mollified l={self.level}"
        for attr in ("d", "n", "controls", "L", "lip_x", "drift_growth",
                     "deterministic", "m_required", "params"):
            setattr(self, attr, getattr(base, attr))

    @property
    def n_controls(self):
        return self.base.n_controls

    def _smooth(self, fn, x, *args):
        x = np.asarray(x, float)
        shifted = x[None, ...] - self.nodes.reshape(
            (-1,) + (1,) * (x.ndim - 1) + (self.base.d,)
        )
        vals = np.asarray(fn(shifted, *args))
        return np.tensordot(self.weights, vals, axes=(0, 0))

    def beta(self, t, x, v, w):
        return self._smooth(lambda xs: self.base.beta(t, xs, v, w), x)

    def f(self, t, x, v, w):
        return self._smooth(lambda xs: self.base.f(t, xs, v, w), x)

    def G(self, x, w):
        return self._smooth(lambda xs: self.base.G(xs, w), x)


def linear_growth_penalty(x, n_nodes=17):
    """Convex penalty h and its gradient Dh.

    h(x) = integral of (|y| - 1)+ against the unit bump centered at x;
    it vanishes on a neighborhood of 0, grows like |x| - 1 far out
    (so h(x) > |x| - 2 everywhere), and |Dh| <= 1.

    Parameters
    ----------
    x : (..., d) array of evaluation points.

    Returns
    -------
    h : (...) values, Dh : (..., d) gradients.
    """
    x = np.asarray(x, float)
    if x.ndim == 1:
        x = x[:, None]
    d = x.shape[-1]
    nodes, weights = kernel_quadrature(d, 1, n_nodes)
    shifted = x[None, ...] - nodes.reshape((-1,) + (1,) * (x.ndim - 1) + (d,))
    dist = np.linalg.norm(shifted, axis=-1)
    hinge = np.maximum(dist - 1.0, 0.0)
    h = np.tensordot(weights, hinge, axes=(0, 0))
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = np.where(dist[..., None] > 0, shifted / np.maximum(dist[..., None], 1e-300), 0.0)
    grad_terms = np.where((dist > 1.0)[..., None], unit, 0.0)
    Dh = np.tensordot(weights, grad_terms, axes=(0, 0))
    return h, Dh


# ---------------------------------------------------------------------------
# sup-distance error processes


@dataclass
class ApproximationErrors:
    """Per-path adapted gaps between a base set and its approximation.

    dG has shape (n_paths,); df and dbeta have shape (n_steps, n_paths)
    and hold, for each knot, the probe-lattice supremum of the relevant
    coefficient gap evaluated at the policy's control (or the supremum
    over the whole control grid when no policy is given).
    """

    dG: np.ndarray
    df: np.ndarray
    dbeta: np.ndarray
    radius: float
    sup_over_controls: bool
    note: str = ""

    def scale(self, gain):
        """L2 size ||dG|| + ||df + gain * dbeta|| used by error-bound ladders."""
        l2_G = float(np.sqrt(np.mean(self.dG**2)))
        mix = self.df + gain * self.dbeta
        l2_mix = float(np.sqrt(np.mean(np.mean(mix, axis=0) ** 2)))
        return l2_G + l2_mix


def error_processes(base, approx, ensemble, policy_indices=None, radius=None,
                    n_probes=None):
    """Probe-lattice sup distances between base and approximate coefficients.

    Parameters
    ----------
    base, approx : coefficient-set-like objects (approx is typically a
        MollifiedSet or FunctionalApproximant of base).
    ensemble : WienerEnsemble supplying the path argument and the grid.
    policy_indices : None, (n_steps,) or (n_steps, n_paths) int array
        Controls at which the running gaps are evaluated; None takes the
        supremum over the whole control grid.
    radius : probe lattice radius; defaults to the reachable-set radius
        from |x0| <= 1.
    """
    grid = ensemble.grid
    if radius is None:
        radius = reach_radius(base, 1.0, grid.T)
    probes = probe_lattice(radius, base.d, n_probes)[:, None, :]
    n_steps, n_paths = grid.n_steps, ensemble.n_paths
    stochastic = not (base.deterministic and approx.deterministic)

    wT = ensemble.slice_at(grid.n_steps, terminal_ok=True) if stochastic else None
    gap = np.abs(np.asarray(approx.G(probes, wT)) - np.asarray(base.G(probes, wT)))
    dG = np.broadcast_to(gap.max(axis=0), (n_paths,)).copy()

    if policy_indices is not None:
        policy_indices = np.asarray(policy_indices, int)
        if policy_indices.ndim == 1:
            policy_indices = policy_indices[:, None]

    df = np.zeros((n_steps, n_paths))
    dbeta = np.zeros((n_steps, n_paths))
    for k in range(n_steps):
        t = grid.knots[k]
        w = ensemble.slice_at(k) if stochastic else None
        if policy_indices is None:
            idx_list = range(base.n_controls)
        else:
            idx_list = np.unique(policy_indices[k])
        for j in idx_list:
            v = base.controls[int(j)]
            fb = np.abs(
                np.asarray(approx.f(t, probes, v, w)) - np.asarray(base.f(t, probes, v, w))
            ).max(axis=0)
            bb = np.abs(
                np.asarray(approx.beta(t, probes, v, w)) - np.asarray(base.beta(t, probes, v, w))
            ).max(axis=(0, -1))
            fb = np.broadcast_to(fb, (n_paths,))
            bb = np.broadcast_to(bb, (n_paths,))
            if policy_indices is None:
                df[k] = np.maximum(df[k], fb)
                dbeta[k] = np.maximum(dbeta[k], bb)
            else:
                mask = (policy_indices[k] == j) if policy_indices.shape[1] > 1 else slice(None)
                df[k][mask] = fb[mask] if policy_indices.shape[1] > 1 else fb[0]
                dbeta[k][mask] = bb[mask] if policy_indices.shape[1] > 1 else bb[0]

    return ApproximationErrors(
        dG=dG, df=df, dbeta=dbeta, radius=float(radius),
        sup_over_controls=policy_indices is None,
    )


# ---------------------------------------------------------------------------
# piecewise tensor-form approximants


@dataclass
class FunctionalApproximant:
    """Coefficients rewritten as sums of (path factor) x (spatial profile).

    The time axis is cut at functional knots; on each piece the running
    coefficients read path history no later than the piece's left knot
    (here: registry running coefficients are path-free, so the delayed
    read is exact).  The terminal cost is separated as a sum of hat
    functions of the terminal Brownian value times spatial slices, each
    slice a mollified x-profile, so the spatial Lipschitz constant never
    exceeds the base one.

    Duck-typed as a coefficient set: beta, f, G plus the declared
    constants, so solvers take it wherever they take a CoefficientSet.
    """

    base: CoefficientSet
    mollified: MollifiedSet
    fn_knots: np.ndarray          # functional knot times, len n_intervals + 1
    eps_target: float
    w_grid: np.ndarray | None     # hat centers for the terminal separation
    slices: np.ndarray | None     # (n_terms, n_fine) spatial profiles
    x_fine: np.ndarray | None     # fine spatial grid carrying the slices
    achieved: dict = field(default_factory=dict)
    accuracy_ok: bool = True

    def __post_init__(self):
        for attr in ("d", "n", "controls", "L", "lip_x", "drift_growth",
                     "m_required", "params"):
            setattr(self, attr, getattr(self.base, attr))
        self.name = f"{self.base.name}|tensor eps={self.eps_target:g}"
        self.deterministic = self.base.deterministic and self.w_grid is None

    @property
    def n_controls(self):
        return self.base.n_controls

    @property
    def n_terms(self):
        return 1 if self.w_grid is None else int(self.w_grid.size)

    def beta(self, t, x, v, w):
        return self.mollified.beta(t, x, v, w)

    def f(self, t, x, v, w):
        return self.mollified.f(t, x, v, w)

    def _hat_weights(self, s):
        """Piecewise-linear partition of unity on the w grid, (n_terms, ...)."""
        wg = self.w_grid
        s = np.clip(np.asarray(s, float), wg[0], wg[-1])
        step = wg[1] - wg[0]
        cell = np.clip(((s - wg[0]) / step).astype(int), 0, wg.size - 2)
        frac = (s - wg[cell]) / step
        return cell, frac

    def G(self, x, w):
        if self.w_grid is None:
            return self.mollified.G(x, w)
        x = np.asarray(x, float)
        s = w.at(self.fn_knots[-1])[:, 0]
        cell, frac = self._hat_weights(s)
        lo = self._slice_eval(cell, x)
        hi = self._slice_eval(cell + 1, x)
        return (1.0 - frac) * lo + frac * hi

    def _slice_eval(self, term_idx, x):
        # linear interpolation of the stored profiles on the fine x grid
        xf = self.x_fine
        pos = np.clip(np.asarray(x, float)[..., 0], xf[0], xf[-1])
        step = xf[1] - xf[0]
        cell = np.clip(((pos - xf[0]) / step).astype(int), 0, xf.size - 2)
        frac = (pos - xf[cell]) / step
        sl = self.slices
        return (1.0 - frac) * sl[term_idx, cell] + frac * sl[term_idx, cell + 1]

    def payoff_grid(self, x_vals, w_vals):
        """Terminal plane on a tensor grid: rows over x, columns over
        the terminal Brownian value (d = m = 1 only)."""
        x_vals = np.asarray(x_vals, float)
        w_vals = np.asarray(w_vals, float)
        if self.w_grid is None:
            g = np.asarray(self.mollified.G(x_vals[:, None], None), float)
            return np.repeat(g[:, None], w_vals.size, axis=1)
        cell, frac = self._hat_weights(w_vals)
        xf = self.x_fine
        pos = np.clip(x_vals, xf[0], xf[-1])
        step = xf[1] - xf[0]
        xc = np.clip(((pos - xf[0]) / step).astype(int), 0, xf.size - 2)
        xfr = (pos - xf[xc]) / step
        prof = (1.0 - xfr)[None, :] * self.slices[:, xc] \
            + xfr[None, :] * self.slices[:, xc + 1]
        return (1.0 - frac)[None, :] * prof[cell, :].T \
            + frac[None, :] * prof[cell + 1, :].T


def fit_functional_approximant(base, ensemble, n_intervals=4, eps_target=0.1, *,
                               max_terms=400, n_nodes=17, level=None,
                               x_radius=None, n_x_probes=41):
    """Fit a piecewise tensor-form approximant to a coefficient set.

    The spatial side is mollified at a level chosen from eps_target (or
    given); a path-dependent terminal cost is separated by regressing
    per-path evaluations onto hat functions of the terminal Brownian
    value, least squares over sampled (path, x) probes, half of the
    paths held out for the reported error.

    Raises ValueError for path-dependent running coefficients: those
    need a custom approximant registered alongside the scenario.
    """
    if n_intervals < 4:
        raise ValueError("need more than 3 time pieces")
    grid = ensemble.grid
    if grid.n_steps % n_intervals:
        raise ValueError("n_intervals must divide n_steps so pieces end on knots")
    if base.d != 1 and not base.deterministic:
        raise ValueError("path-dependent separation implemented for d=1")
    fn_knots = grid.knots[:: grid.n_steps // n_intervals]

    if level is None:
        level = max(1, int(np.ceil(1.5 * base.lip_x / eps_target)))
    moll = MollifiedSet(base, level, n_nodes)

    if x_radius is None:
        x_radius = reach_radius(base, 1.0, grid.T, margin=1.0)

    det_G = base.deterministic
    w_grid = slices = x_fine = None
    if not det_G:
        wT = ensemble.value_at(grid.n_steps)[:, 0]
        lo, hi = float(wT.min()) - 0.1, float(wT.max()) + 0.1
        # cell width sized so the path-direction increment stays below eps/2
        n_cells = int(np.ceil((hi - lo) * 2.0 * base.lip_x / eps_target))
        n_cells = int(np.clip(n_cells, 4, max_terms - 1))
        w_grid = np.linspace(lo, hi, n_cells + 1)

        # fine spatial grid carrying the slices; step follows the kink scale
        h_fine = max(0.5 / level, 1e-3)
        x_fine = np.arange(-x_radius, x_radius + h_fine, h_fine)

        # probe the payoff at designer-chosen terminal values through a
        # synthetic one-step ensemble, so every hat cell is sampled
        s_fit = np.linspace(lo, hi, 4 * n_cells + 1)
        targets = _terminal_matrix(moll, grid.T, ensemble.m, x_fine, s_fit)
        design = _hat_design(w_grid, s_fit)
        coef, *_ = np.linalg.lstsq(design, targets, rcond=None)
        slices = coef  # (n_terms, n_fine)

    out = FunctionalApproximant(
        base=base, mollified=moll, fn_knots=fn_knots, eps_target=float(eps_target),
        w_grid=w_grid, slices=slices, x_fine=x_fine,
    )

    # achieved error against the *base* coefficients, held-out material:
    # the fit itself only saw synthetic terminal values, never these paths
    probes = probe_lattice(min(x_radius, reach_radius(base, 1.0, grid.T)), base.d, n_x_probes)
    ach = {}
    wT_slice = ensemble.slice_at(grid.n_steps, terminal_ok=True)
    gap = np.abs(
        np.asarray(out.G(probes[:, None, :], wT_slice)) -
        np.asarray(base.G(probes[:, None, :], wT_slice))
    )
    ach["G_sup"] = float(gap.max())
    ach["G_l2"] = float(np.sqrt(np.mean(gap**2)))
    sup_f = sup_b = 0.0
    for tk in fn_knots[:-1]:
        w = None if base.deterministic else ensemble.slice_at(grid.index_of(tk))
        for v in base.controls[:: max(1, base.n_controls // 7)]:
            sup_f = max(sup_f, float(np.abs(
                np.asarray(out.f(tk, probes[:, None, :], v, w)) -
                np.asarray(base.f(tk, probes[:, None, :], v, w))).max()))
            sup_b = max(sup_b, float(np.abs(
                np.asarray(out.beta(tk, probes[:, None, :], v, w)) -
                np.asarray(base.beta(tk, probes[:, None, :], v, w))).max()))
    ach["f_sup"] = sup_f
    ach["beta_sup"] = sup_b
    out.achieved = ach
    out.accuracy_ok = bool(max(ach["G_sup"], sup_f, sup_b) <= eps_target)
    return out


def _hat_design(w_grid, s):
    cell = np.clip(((s - w_grid[0]) / (w_grid[1] - w_grid[0])).astype(int), 0, w_grid.size - 2)
    frac = (s - w_grid[cell]) / (w_grid[1] - w_grid[0])
    design = np.zeros((s.size, w_grid.size))
    rows = np.arange(s.size)
    design[rows, cell] = 1.0 - frac
    design[rows, cell + 1] = frac
    return design


def _terminal_matrix(moll, T, m, x_fine, s_fit):
    """Payoff values at prescribed terminal Brownian values, (n_fit, n_fine)."""
    from .probspace import TimeGrid, WienerEnsemble

    inc = np.zeros((s_fit.size, 1, m))
    inc[:, 0, 0] = s_fit
    synth = WienerEnsemble(TimeGrid(T, 1), m, s_fit.size, 0, inc)
    wT = synth.slice_at(1, terminal_ok=True)
    vals = np.asarray(moll.G(x_fine[:, None, None], wT))  # (n_fine, n_fit)
    return vals.T
