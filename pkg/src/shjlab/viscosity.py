"""Hamiltonian, decomposition estimation, residual checks, envelopes.

The one-sided solution tests work on sampled fields: attach (or
estimate) a drift density, form the pointwise residual

    R(t, x) = - drift - min_v [ beta(t,x,v) . Du(t,x) + f(t,x,v) ],

and ask for a sign at every probe, with tolerance for Monte-Carlo
noise and finite differences.  The envelope construction squeezes the
value function between two such fields built from a perturbed value
surface plus nonnegative correction processes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bsde import BsdeSpec, error_bound_bsde, solve_bsde
from .fields import AdaptedField
from .probspace import CondExpOperator
from .smoothing import error_processes
from .valuefn import BoxLattice, default_basis, value_V

__all__ = [
    "hamiltonian",
    "estimate_decomposition",
    "residual_check",
    "EnvelopePair",
    "build_envelopes",
    "sandwich_report",
    "HjbFdSolution",
    "solve_hjb_fd_1d",
]


def hamiltonian(coeffs, t, x, p, w=None):
    """Minimum of beta . p + f over the control grid.

    Parameters
    ----------
    coeffs : coefficient set.
    t : float
    x, p : arrays broadcastable to a common (..., d) shape.
    w : PathSlice or None for path-dependent coefficients.

    Returns
    -------
    (value, argmin) with the leading (...) shape; ties keep the lowest
    control index.
    """
    x = np.asarray(x, float)
    p = np.asarray(p, float)
    best = best_idx = None
    for j in range(coeffs.n_controls):
        v = coeffs.controls[j]
        b = np.asarray(coeffs.beta(t, x, v, w), float)
        fv = np.asarray(coeffs.f(t, x, v, w), float)
        val = np.sum(np.broadcast_to(b, np.broadcast_shapes(b.shape, p.shape))
                     * p, axis=-1) + fv
        if best is None:
            best = np.asarray(val, float).copy()
            best_idx = np.zeros(best.shape, int)
        else:
            better = val < best
            best = np.where(better, val, best)
            best_idx = np.where(better, j, best_idx)
    return best, best_idx


def estimate_decomposition(afield, ensemble, basis=None, min_ratio=10):
    """Fit drift and noise integrands to a sampled field.

    Per knot pair (k, k+1) and lattice point, the cross-path increment
    is regressed on features times (dt, dW_k); the fitted combinations
    evaluated along each path become the drift and noise samples.

    Parameters
    ----------
    afield : AdaptedField sampled on consecutive knots.
    ensemble : the ensemble the field was sampled on.
    basis : RegressionBasis for the conditioning features (degree-2
        polynomials of the current Brownian value by default).
    min_ratio : required paths-per-column margin.

    Returns a new AdaptedField carrying the estimated decomposition;
    diagnostics hold per-knot coefficient tables, their standard
    errors, and residual norms.
    """
    ks = afield.knots
    if ks != list(range(ks[0], ks[-1] + 1)):
        raise ValueError("decomposition needs consecutive sampled knots")
    if basis is None:
        basis = default_basis(degree=2, m=ensemble.m)
    grid = afield.grid
    dt = grid.dt
    n_paths = ensemble.n_paths
    m = ensemble.m

    drift = {}
    noise = {}
    coef_tab = {}
    se_tab = {}
    resid_rms = {}
    for k in ks[:-1]:
        phi = basis.design(ensemble, k, None)          # (n_paths, F)
        n_cols = phi.shape[1] * (1 + m)
        if n_paths < min_ratio * n_cols:
            raise ValueError(
                f"{n_paths} paths cannot support {n_cols} regression columns"
            )
        dW = ensemble.increments[:, k, :]              # (n_paths, m)
        cols = [phi * dt]
        cols += [phi * dW[:, c:c + 1] for c in range(m)]
        design = np.hstack(cols)
        du = (afield.at(k + 1) - afield.at(k)).T       # (n_paths, n_points)
        coef, *_ = np.linalg.lstsq(design, du, rcond=None)
        fit = design @ coef
        resid = du - fit
        resid_rms[k] = float(np.sqrt(np.mean(resid**2)))
        F = phi.shape[1]
        drift[k] = (phi @ coef[:F]).T
        nz = np.empty((afield.lattice.n_points, n_paths, m))
        for c in range(m):
            nz[..., c] = (phi @ coef[F * (1 + c):F * (2 + c)]).T
        noise[k] = nz
        coef_tab[k] = coef
        # per-column standard errors from the shared normal matrix
        gram_inv = np.linalg.pinv(design.T @ design)
        dof = max(n_paths - n_cols, 1)
        sigma2 = np.sum(resid**2, axis=0) / dof
        se_tab[k] = np.sqrt(np.outer(np.diag(gram_inv), sigma2))

    diagnostics = dict(afield.diagnostics)
    diagnostics.update({
        "residual_rms": resid_rms,
        "coef": coef_tab,
        "coef_se": se_tab,
        "basis": list(basis.names),
    })
    return AdaptedField(grid, afield.lattice, dict(afield.values), drift,
                        noise, tag=afield.tag, diagnostics=diagnostics)


def residual_check(afield, coeffs, ensemble, side="super", *, tol=0.02,
                   basis=None, knots=None, conditional=True):
    """One-sided residual report for a field with a drift part.

    side = "super" passes when every probe satisfies
    mean R >= -(tol + 3 SE); side = "sub" symmetrically from above.
    The terminal samples are compared against the exact terminal cost
    (>= for super, <= for sub, slack 1e-9).

    Returns a report dict; `passed` combines the residual sign and the
    terminal comparison.
    """
    if side not in ("super", "sub"):
        raise ValueError("side must be 'super' or 'sub'")
    if afield.drift is None:
        raise ValueError("field carries no drift part; estimate one first")
    grid = afield.grid
    n = grid.n_steps
    if knots is None:
        knots = [k for k in afield.knots if k in afield.drift]
    if basis is None and conditional:
        basis = default_basis(degree=2, m=ensemble.m)

    x_pts = afield.lattice.points
    probe_mean = {}
    probe_se = {}
    cond_extreme = {}
    worst = None
    for k in knots:
        t = grid.knots[k]
        w = ensemble.slice_at(k)
        du = afield.gradient(k)                       # (n_points, n_paths, d)
        ham, _ = hamiltonian(coeffs, t, x_pts[:, None, :], du, w)
        R = -afield.drift[k] - ham                    # (n_points, n_paths)
        mu = R.mean(axis=1)
        se = (R.std(axis=1, ddof=1) / np.sqrt(R.shape[1])
              if R.shape[1] > 1 else np.zeros_like(mu))
        probe_mean[k] = mu
        probe_se[k] = se
        if conditional:
            ce = CondExpOperator(ensemble, k, basis).apply(R)
            cond_extreme[k] = (float(ce.min()), float(ce.max()))
        stat = mu + 3 * se if side == "super" else mu - 3 * se
        j = int(np.argmin(stat)) if side == "super" else int(np.argmax(stat))
        cand = (float(stat[j]), k, j, float(mu[j]), float(se[j]))
        if worst is None or (
            cand[0] < worst[0] if side == "super" else cand[0] > worst[0]
        ):
            worst = cand

    wT = ensemble.slice_at(n, terminal_ok=True)
    g_term = np.broadcast_to(
        np.asarray(coeffs.G(x_pts[:, None, :], wT), float),
        afield.at(n).shape,
    )
    term_gap = afield.at(n) - g_term
    if side == "super":
        terminal_margin = float(term_gap.min())
        terminal_ok = terminal_margin >= -1e-9
        margin = worst[0]
        residual_ok = margin >= -tol
    else:
        terminal_margin = float(term_gap.max())
        terminal_ok = terminal_margin <= 1e-9
        margin = worst[0]
        residual_ok = margin <= tol
    return {
        "side": side,
        "tol": tol,
        "margin": margin,
        "worst": {"knot": worst[1], "point": worst[2],
                  "mean": worst[3], "se": worst[4]},
        "probe_mean": probe_mean,
        "probe_se": probe_se,
        "conditional_extremes": cond_extreme,
        "terminal_margin": terminal_margin,
        "terminal_ok": terminal_ok,
        "residual_ok": residual_ok,
        "passed": residual_ok and terminal_ok,
    }


@dataclass
class EnvelopePair:
    """Perturbed value surface with its upper and lower envelopes."""

    V_eps: object
    upper: AdaptedField
    lower: AdaptedField
    params: dict
    reports: dict = field(default_factory=dict)

    def width(self, k):
        """Pathwise envelope gap at a knot; nonnegative by construction."""
        return self.upper.at(k) - self.lower.at(k)


def build_envelopes(base, approx, ens_w, ens_b, eps, delta_n, *,
                    lattice=None, x0_max=2.0, h=0.05, basis=None,
                    store_knots="auto", drift_knots="auto", run_checks=True,
                    tol=0.02, clamp_tol=0.05):
    """Envelope fields squeezing the value function.

    The perturbed surface adds independent noise delta_n dB to the
    approximant dynamics; its empirical gradient bound feeds the
    correction constant, and two bound processes (the approximation
    error one and the noise one) are added/subtracted after shifting
    the surface by the accumulated noise.

    Parameters
    ----------
    base : exact coefficient set.
    approx : FunctionalApproximant for it, reported error <= eps.
    ens_w, ens_b : independent ensembles on the same grid and path
        count; ens_b must have m == base.d.
    eps, delta_n : approximation size and noise level (> 0).
    lattice : optional BoxLattice; by default sized from the reachable
        set plus the noise wander.
    drift_knots : "auto" (a ~9-knot subgrid), "all", or iterable; the
        drift part is assembled (and residual-checked) only there.
    run_checks : attach one-sided residual reports for both envelopes.

    Returns an EnvelopePair.
    """
    if delta_n <= 0:
        raise ValueError("delta_n must be positive")
    if ens_w.grid != ens_b.grid or ens_w.n_paths != ens_b.n_paths:
        raise ValueError("need matching grids and path counts for W and B")
    if ens_b.m != base.d:
        raise ValueError(f"noise ensemble must have m == d == {base.d}")
    ach = approx.achieved
    worst_err = max(ach.get("G_sup", np.inf), ach.get("f_sup", 0.0),
                    ach.get("beta_sup", 0.0))
    if not approx.accuracy_ok or worst_err > eps:
        raise ValueError(
            f"approximant error {worst_err:.4g} exceeds eps={eps:g}; "
            f"achieved={ach}"
        )

    grid = ens_w.grid
    n = grid.n_steps
    T = grid.T
    if lattice is None:
        margin = 0.25 + 4.0 * delta_n * np.sqrt(T)
        lattice = BoxLattice.for_problem(base, T, x0_max, h, margin=margin)

    V_eps = value_V(approx, ens_w, lattice, basis=basis,
                    noise_level=delta_n, noise_ensemble=ens_b,
                    store_knots=store_knots, clamp_tol=clamp_tol, tag="Veps")
    if drift_knots == "all":
        want_drift = set(range(n))
    elif drift_knots == "auto":
        want_drift = set(range(0, n, max(1, n // 8)))
    else:
        want_drift = set(int(j) for j in drift_knots)

    # empirical gradient bound over every stored slice
    L_tilde = 0.0
    for k, sl in V_eps.slices.items():
        cube = sl.reshape(tuple(lattice.counts) + (sl.shape[1],))
        for a in range(lattice.d):
            d_a = np.abs(np.diff(cube, axis=a)) / lattice.h
            if d_a.size:
                L_tilde = max(L_tilde, float(d_a.max()))
    K_bar = 4.0 * base.L * (L_tilde + 1.0)

    radius = float(np.max(np.abs(np.concatenate([lattice.lo, lattice.hi]))))
    errors = error_processes(base, approx, ens_w, radius=radius)
    bound = error_bound_bsde(errors, gain=L_tilde, ensemble=ens_w)

    b_terminal = np.linalg.norm(ens_b.value_at(n), axis=1)
    noise_mag = solve_bsde(BsdeSpec(
        ens_b, b_terminal,
        lambda t, w: np.linalg.norm(w.current, axis=1),
    ))

    x_pts = lattice.points
    up_vals, lo_vals = {}, {}
    up_drift, lo_drift = {}, {}
    clamped = evals = 0
    for k in sorted(V_eps.slices):
        sl = V_eps.pathwise(k)
        B_k = ens_b.value_at(k)
        pos = x_pts[:, None, :] - delta_n * B_k[None, :, :]
        center, nc = lattice.interp(sl, pos)
        clamped += nc
        evals += center.size
        corr = bound.Y[k][None, :] + delta_n * K_bar * noise_mag.Y[k][None, :]
        up_vals[k] = center + corr
        lo_vals[k] = center - corr
        if k == n or k not in want_drift:
            continue
        t = grid.knots[k]
        cube = sl.reshape(tuple(lattice.counts) + (sl.shape[1],))
        p_shift = np.empty(pos.shape)
        for a in range(lattice.d):
            g_a = np.gradient(cube, lattice.h, axis=a).reshape(sl.shape)
            p_shift[..., a], _ = lattice.interp(g_a, pos)
        w = None if approx.deterministic else ens_w.slice_at(k)
        ham, _ = hamiltonian(approx, t, pos, p_shift, w)
        b_mag = np.linalg.norm(B_k, axis=1)[None, :]
        up_drift[k] = -ham - bound.driver[k][None, :] \
            - delta_n * K_bar * b_mag
        lo_drift[k] = -ham + bound.driver[k][None, :] \
            + delta_n * K_bar * b_mag

    params = {
        "eps": float(eps),
        "delta_n": float(delta_n),
        "L_tilde": L_tilde,
        "K_bar": K_bar,
        "bound_sup_rms": bound.sup_rms(),
        "noise_mag_start": float(noise_mag.Y[0].mean()),
        "clamp_fraction": clamped / max(evals, 1),
        "approx_achieved": dict(ach),
    }
    upper = AdaptedField(grid, lattice, up_vals, up_drift, None, tag="upper",
                         diagnostics={"corr": "plus"})
    lower = AdaptedField(grid, lattice, lo_vals, lo_drift, None, tag="lower",
                         diagnostics={"corr": "minus"})
    pair = EnvelopePair(V_eps, upper, lower, params)
    if run_checks:
        pair.reports["upper"] = residual_check(
            upper, base, ens_w, "super", tol=tol, conditional=False)
        pair.reports["lower"] = residual_check(
            lower, base, ens_w, "sub", tol=tol, conditional=False)
    return pair


def sandwich_report(pair, surface, knots=None):
    """Probe-wise ordering and gap statistics against a value surface.

    The surface must live on the same lattice points as the pair.
    Ordering passes when the upper envelope clears the value mean and
    the value clears the lower one, each with a 3 SE cushion; the gap
    statistics feed the ladder fit.
    """
    up, lo = pair.upper, pair.lower
    if not np.allclose(surface.lattice.points, up.lattice.points):
        raise ValueError("surface and envelopes use different lattices")
    if knots is None:
        knots = [k for k in up.knots if k in surface.slices]
    upper_margin = np.inf
    lower_margin = np.inf
    gap_upper = gap_lower = 0.0
    per_knot = {}
    for k in knots:
        v_sl = surface.pathwise(k)
        u_k = up.at(k)
        l_k = lo.at(k)
        v_b = np.broadcast_to(v_sl, u_k.shape)
        m_up = u_k.mean(axis=1)
        m_lo = l_k.mean(axis=1)
        m_v = surface.mean[k]
        se_up = u_k.std(axis=1, ddof=1) / np.sqrt(u_k.shape[1])
        se_v = surface.se[k]
        mu_margin = float(np.min(m_up - m_v + 3 * (se_up + se_v)))
        ml_margin = float(np.min(m_v - m_lo + 3 * (se_up + se_v)))
        gu = float(np.max(np.mean(np.abs(u_k - v_b), axis=1)))
        gl = float(np.max(np.mean(np.abs(l_k - v_b), axis=1)))
        per_knot[k] = {"upper_margin": mu_margin, "lower_margin": ml_margin,
                       "gap_upper": gu, "gap_lower": gl}
        upper_margin = min(upper_margin, mu_margin)
        lower_margin = min(lower_margin, ml_margin)
        gap_upper = max(gap_upper, gu)
        gap_lower = max(gap_lower, gl)
    return {
        "upper_margin": upper_margin,
        "lower_margin": lower_margin,
        "gap_upper": gap_upper,
        "gap_lower": gap_lower,
        "order_ok": upper_margin >= 0.0 and lower_margin >= 0.0,
        "per_knot": per_knot,
    }


@dataclass
class HjbFdSolution:
    """Finite-difference plane at the interval start."""

    x_axis: np.ndarray
    y_axis: np.ndarray
    u: np.ndarray            # (nx, ny)
    t_start: float
    diagnostics: dict

    def value_at(self, x, y):
        """Bilinear read-off; clamps to the computational box."""
        xa, ya = self.x_axis, self.y_axis
        x = np.clip(np.asarray(x, float), xa[0], xa[-1])
        y = np.clip(np.asarray(y, float), ya[0], ya[-1])
        hx = xa[1] - xa[0]
        hy = ya[1] - ya[0]
        i = np.clip(((x - xa[0]) / hx).astype(int), 0, xa.size - 2)
        j = np.clip(((y - ya[0]) / hy).astype(int), 0, ya.size - 2)
        fx = (x - xa[i]) / hx
        fy = (y - ya[j]) / hy
        u = self.u
        return ((1 - fx) * (1 - fy) * u[i, j] + fx * (1 - fy) * u[i + 1, j]
                + (1 - fx) * fy * u[i, j + 1] + fx * fy * u[i + 1, j + 1])


def _pad_linear(u, axis):
    # ghost layers from linear extrapolation: zero curvature at the faces
    lo = 2 * u.take([0], axis) - u.take([1], axis)
    hi = 2 * u.take([-1], axis) - u.take([-2], axis)
    return np.concatenate([lo, u, hi], axis)


def solve_hjb_fd_1d(approx, x_axis, y_axis, interval, delta_n, *,
                    payoff=None, n_tsteps=None, cfl=0.8):
    """Explicit finite-difference solve of the regularized equation.

    On the last functional interval the frozen-prefix coefficients are
    deterministic, the terminal Brownian value becomes an extra state
    coordinate y with unit diffusion, and the artificial noise adds
    delta_n^2/2 curvature in x:

        u_t + min_v [ beta u_x + f ] + 1/2 u_yy + delta_n^2/2 u_xx = 0.

    Upwind first differences follow the drift sign; both curvature
    terms are centered; the time step is CFL-limited with automatic
    substepping.  Box faces use linear extrapolation (flagged in the
    diagnostics, not a physical boundary condition).

    Parameters
    ----------
    approx : coefficient set whose beta/f are path-free; the terminal
        plane defaults to approx.payoff_grid(x_axis, y_axis).
    x_axis, y_axis : uniform axes.
    interval : (t_start, t_end).
    delta_n : noise level (>= 0).
    payoff : optional (nx, ny) override of the terminal plane.
    n_tsteps : optional floor on the number of time steps.

    Returns an HjbFdSolution at t_start.
    """
    x_axis = np.asarray(x_axis, float)
    y_axis = np.asarray(y_axis, float)
    t0, t1 = float(interval[0]), float(interval[1])
    if not t1 > t0:
        raise ValueError("need t_end > t_start")
    hx = x_axis[1] - x_axis[0]
    hy = y_axis[1] - y_axis[0]
    if payoff is None:
        payoff = approx.payoff_grid(x_axis, y_axis)
    u = np.array(payoff, float)
    if u.shape != (x_axis.size, y_axis.size):
        raise ValueError(f"terminal plane must be {(x_axis.size, y_axis.size)}")

    x_col = x_axis[:, None]
    drifts = []
    runnings = []
    for j in range(approx.n_controls):
        v = approx.controls[j]
        b = np.broadcast_to(
            np.asarray(approx.beta(t0, x_col, v, None), float),
            (x_axis.size, 1))[:, 0]
        fv = np.broadcast_to(
            np.asarray(approx.f(t0, x_col, v, None), float),
            (x_axis.size,))
        drifts.append(b)
        runnings.append(fv)
    b_max = max(float(np.max(np.abs(b))) for b in drifts)

    rate = b_max / hx + delta_n**2 / hx**2 + 1.0 / hy**2
    n_sub = max(int(np.ceil((t1 - t0) * rate / cfl)), int(n_tsteps or 1), 1)
    dt = (t1 - t0) / n_sub

    for _ in range(n_sub):
        px = _pad_linear(u, 0)
        py = _pad_linear(u, 1)
        u_xx = (px[2:] - 2 * u + px[:-2]) / hx**2
        u_yy = (py[:, 2:] - 2 * u + py[:, :-2]) / hy**2
        d_fwd = (px[2:] - u) / hx
        d_bwd = (u - px[:-2]) / hx
        ham = None
        for b, fv in zip(drifts, runnings):
            bp = np.maximum(b, 0.0)[:, None]
            bm = np.minimum(b, 0.0)[:, None]
            cand = bp * d_fwd + bm * d_bwd + fv[:, None]
            ham = cand if ham is None else np.minimum(ham, cand)
        u = u + dt * (ham + 0.5 * u_yy + 0.5 * delta_n**2 * u_xx)

    return HjbFdSolution(x_axis, y_axis, u, t0, {
        "substeps": n_sub,
        "cfl_rate": rate,
        "boundary": "linear-extrapolation",
    })
