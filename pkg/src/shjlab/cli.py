"""Experiment runner: config in, seeded pipelines out, tables on disk.

Every output table carries the config hash in a comment line; data go
to files, progress to stderr.  Re-running an identical config rewrites
byte-identical tables regardless of the worker count, because workers
only spread independent ladder items whose results are merged in a
fixed order.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import dataclasses
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .bsde import (BsdeSpec, cost_majorant, error_bound_bsde,
                   policy_cost_surface, solve_bsde)
from .coeffs import reach_radius, scenario, scenario_names
from .exceptions import AccuracyError
from .fields import sample_adapted_field
from .probspace import TimeGrid, sample_ensemble
from .smoothing import (MollifiedSet, bump_kernel, error_processes,
                        fit_functional_approximant, linear_growth_penalty)
from .valuefn import BoxLattice, ControlPolicy, value_V, value_audit
from .viscosity import (build_envelopes, estimate_decomposition,
                        residual_check, sandwich_report)

__all__ = ["ExperimentConfig", "run", "main", "PIPELINES"]

PIPELINES = (
    "simulate", "value", "bsde", "mollify", "jhat", "envelopes",
    "viscosity-check", "full-uniqueness",
)


@dataclass
class ExperimentConfig:
    """Serializable description of one experiment family."""

    scenario: str = "eikonal"
    T: float = 1.0
    n_steps: int = 32
    n_paths: int = 4000
    n_paths_bsde: int = 100000
    seed_w: int = 20240901
    seed_b: int = 20241001
    x0_max: float = 2.0
    lattice_h: float = 0.01
    ladder_h: float = 0.05
    lattice_margin: float = 0.25
    basis_degree: int = 3
    levels: tuple = (4, 8, 16)
    eps_ladder: tuple = (0.2, 0.1, 0.05)
    delta_ladder: tuple = (0.2, 0.1, 0.05)
    n_intervals: int = 4
    tolerance_scale: float = 1.0

    def __post_init__(self):
        if self.T <= 0 or self.n_steps < 1 or min(self.n_paths,
                                                  self.n_paths_bsde) < 2:
            raise ValueError("T, n_steps, path counts must be positive")
        for name in ("levels", "eps_ladder", "delta_ladder"):
            vals = tuple(getattr(self, name))
            setattr(self, name, vals)
            if not vals or any(v <= 0 for v in vals):
                raise ValueError(f"{name} must be nonempty and positive")
        if min(self.lattice_h, self.ladder_h) <= 0:
            raise ValueError("lattice spacings must be positive")
        if self.seed_w == self.seed_b:
            raise ValueError("seed_w and seed_b must differ")
        if self.tolerance_scale <= 0:
            raise ValueError("tolerance_scale must be positive")

    def to_json(self):
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def digest(self):
        canon = json.dumps(dataclasses.asdict(self), sort_keys=True,
                           separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _say(msg):
    print(msg, file=sys.stderr)


def _fmt(v):
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"


def _write_csv(path, digest, columns, rows):
    with open(path, "w") as fh:
        fh.write(f"# config {digest}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _write_json(path, payload):
    def default(o):
        if isinstance(o, (np.floating, np.integer)):
            return o.item()
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, (np.bool_,)):
            return bool(o)
        raise TypeError(f"not serializable: {type(o)}")
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=default)
        fh.write("\n")


def _grid_ens(cfg):
    grid = TimeGrid(cfg.T, cfg.n_steps)
    coeffs = scenario(cfg.scenario)
    m = max(coeffs.m_required, 1)
    ens = sample_ensemble(grid, m, cfg.n_paths, cfg.seed_w)
    return grid, coeffs, ens


def _lattice(cfg, coeffs, h=None, extra_margin=0.0):
    # one Euler step of drift headroom: backward steps from edge points
    # leave the reachable set by up to |beta| dt before clamping.  Snap
    # to whole cells so the origin stays a lattice point.
    a, b = coeffs.drift_growth
    radius = reach_radius(coeffs, cfg.x0_max, cfg.T)
    fan = (a + b * radius) * cfg.T / cfg.n_steps
    h = cfg.lattice_h if h is None else h
    extra = h * np.ceil((fan + extra_margin) / h)
    return BoxLattice.for_problem(
        coeffs, cfg.T, cfg.x0_max, h, margin=cfg.lattice_margin + extra,
    )


def _pipe_simulate(cfg, out, scale, workers):
    grid, coeffs, ens = _grid_ens(cfg)
    ens.save(os.path.join(out, "ensemble_w.bin"))
    rows = []
    for k in range(grid.n_steps + 1):
        w = ens.value_at(k)
        for c in range(ens.m):
            rows.append((k, grid.knots[k], c, w[:, c].mean(),
                         w[:, c].var(ddof=1) if k else 0.0))
    _write_csv(os.path.join(out, "simulate_summary.csv"), cfg.digest(),
               ("knot", "t", "coord", "mean", "var"), rows)
    # terminal variance should match the horizon within sampling error
    vT = ens.value_at(grid.n_steps).var(ddof=1, axis=0)
    band = 4.0 * cfg.T * np.sqrt(2.0 / (cfg.n_paths - 1)) * scale
    return {"terminal_variance": bool(np.all(np.abs(vT - cfg.T) <= band))}


def _pipe_value(cfg, out, scale, workers):
    grid, coeffs, ens = _grid_ens(cfg)
    lat = _lattice(cfg, coeffs)
    surface = value_V(coeffs, ens, lat, clamp_tol=0.05)
    rows = []
    for k in range(grid.n_steps + 1):
        for i in range(lat.n_points):
            rows.append((k, grid.knots[k], i) + tuple(lat.points[i])
                        + (surface.mean[k, i], surface.se[k, i]))
    cols = ("knot", "t", "point") + tuple(f"x{a}" for a in range(lat.d)) \
        + ("mean", "se")
    _write_csv(os.path.join(out, "value_surface.csv"), cfg.digest(), cols, rows)

    starts = np.linspace(-cfg.x0_max, cfg.x0_max, 5)[:, None]
    audit = value_audit(coeffs, ens, surface, starts,
                        abs_tol=0.01 * scale, eps_report_tol=0.05 * scale)
    _write_json(os.path.join(out, "value_report.json"), {
        "supermartingale_margin": audit["supermartingale_margin"],
        "supermartingale_pointwise": audit["supermartingale_pointwise"],
        "sup_value": audit["sup_value"],
        "value_bound": audit["value_bound"],
        "lipschitz_observed": audit["lipschitz_observed"],
        "lipschitz_bound": audit["lipschitz_bound"],
        "eps_report": audit["eps_report"],
        "passed": audit["passed"],
    })
    return {"value_audit": bool(audit["passed"])}


def _pipe_bsde(cfg, out, scale, workers):
    grid = TimeGrid(cfg.T, cfg.n_steps)
    ens = sample_ensemble(grid, 1, cfg.n_paths_bsde, cfg.seed_w)
    ens_b = sample_ensemble(grid, 1, cfg.n_paths_bsde, cfg.seed_b)
    n = grid.n_steps

    mart = solve_bsde(BsdeSpec(ens, ens.value_at(n)[:, 0]))
    y_sol = solve_bsde(BsdeSpec(
        ens_b, np.abs(ens_b.value_at(n)[:, 0]),
        lambda t, w: np.abs(w.current[:, 0]),
    ))
    rows = []
    for case, sol in (("terminal_w", mart), ("noise_magnitude", y_sol)):
        for k in range(n + 1):
            zbar = sol.Z[k, :, 0].mean() if k < n else 0.0
            rows.append((case, k, grid.knots[k], sol.Y[k].mean(),
                         sol.Y[k].std(ddof=1) / np.sqrt(sol.n_paths), zbar))
    _write_csv(os.path.join(out, "bsde_summary.csv"), cfg.digest(),
               ("case", "knot", "t", "mean_Y", "se_Y", "mean_Z"), rows)

    rms = max(float(np.sqrt(np.mean((mart.Y[k] - ens.value_at(k)[:, 0])**2)))
              for k in range(n + 1))
    z_gap = float(np.max(np.abs(mart.Z.mean(axis=1) - 1.0)))
    y0 = float(y_sol.Y[0].mean())
    y_exact = (5.0 / 3.0) * np.sqrt(2.0 / np.pi)
    checks = {
        "martingale_y": rms <= 0.02 * scale,
        "martingale_z": z_gap <= 0.05 * scale,
        "noise_magnitude_start": abs(y0 - y_exact) <= 0.02 * scale,
    }
    _write_json(os.path.join(out, "bsde_report.json"), {
        "martingale_rms": rms, "z_gap": z_gap, "y0": y0,
        "y0_exact": y_exact, "checks": checks,
    })
    return checks


def _pipe_mollify(cfg, out, scale, workers):
    grid, coeffs, ens = _grid_ens(cfg)
    d = coeffs.d
    # unit mass of the kernel via tensor Gauss-Legendre, an independent
    # route from the radial normalizer inside bump_kernel
    xi, wi = np.polynomial.legendre.leggauss(64)
    axes = np.meshgrid(*([xi] * d), indexing="ij")
    nodes = np.stack([a.ravel() for a in axes], axis=-1)
    wts = np.ones(nodes.shape[0])
    for aw in np.meshgrid(*([wi] * d), indexing="ij"):
        wts = wts * aw.ravel()
    mass_err = abs(float(np.sum(wts * bump_kernel(nodes))) - 1.0)

    probe = np.linspace(-3.0, 3.0, 201)[:, None]
    h_vals, dh_vals = linear_growth_penalty(probe)
    h0 = float(linear_growth_penalty(np.zeros((1, d)))[0][0])
    h3 = float(linear_growth_penalty(np.full((1, d), 3.0))[0][0])
    dh_max = float(np.max(np.abs(dh_vals)))

    radius = float(np.max(np.abs(_lattice(cfg, coeffs).points)))
    xs = np.linspace(-radius, radius, 241)[:, None]
    wT = None if coeffs.deterministic else ens.slice_at(grid.n_steps,
                                                        terminal_ok=True)
    base_g = np.asarray(coeffs.G(xs[:, None, :], wT), float)
    rows = []
    gaps = []
    for level in cfg.levels:
        ml = MollifiedSet(coeffs, level=level)
        gap = float(np.max(np.abs(
            np.asarray(ml.G(xs[:, None, :], wT), float) - base_g)))
        gaps.append(gap)
        rows.append((level, gap, coeffs.lip_x / level))
    _write_csv(os.path.join(out, "mollify_ladder.csv"), cfg.digest(),
               ("level", "sup_gap", "bound"), rows)
    slope = float(np.polyfit(np.log(cfg.levels), np.log(gaps), 1)[0])
    checks = {
        "unit_mass": mass_err <= 1e-8 * scale,
        "penalty_origin": abs(h0) <= 1e-9 * scale,
        "penalty_at_3": abs(h3 - 2.0) <= 1e-6 * scale,
        "penalty_gradient": dh_max <= 1.0 + 1e-9 * scale,
        "ladder_bound": all(g <= coeffs.lip_x / l + 1e-12
                            for g, l in zip(gaps, cfg.levels)),
        "ladder_slope": abs(slope + 1.0) <= 0.3 * scale,
    }
    _write_json(os.path.join(out, "mollify_report.json"), {
        "mass_err": mass_err, "h0": h0, "h3": h3, "dh_max": dh_max,
        "gaps": dict(zip(map(str, cfg.levels), gaps)), "slope": slope,
        "checks": checks,
    })
    return checks


def _jhat_item(cfg, scale, coeffs, ens, lat, pol, base_cost, level, radius):
    ml = MollifiedSet(coeffs, level=level)
    errors = error_processes(coeffs, ml, ens, radius=radius)
    gain = float(np.exp(coeffs.L * cfg.T) * coeffs.L * (cfg.T + 1.0))
    bound = error_bound_bsde(errors, gain=gain, ensemble=ens)
    u_l = policy_cost_surface(ml, ens, pol, lat, tag=f"u{level}")
    jh = cost_majorant(u_l, bound, ml, pol, ens)
    rep = residual_check(jh, coeffs, ens, "super",
                         tol=0.02 * scale, conditional=False)
    norm_gap = float(np.max(np.abs(
        np.stack([jh.at(k).mean(axis=1) for k in jh.knots])
        - base_cost.mean)))
    delta = errors.scale(gain)
    return {
        "level": level,
        "delta": float(delta),
        "bound_sup": bound.sup_rms(),
        "residual_margin": rep["margin"],
        "terminal_margin": rep["terminal_margin"],
        "passed_super": bool(rep["passed"]),
        "norm_gap": norm_gap,
        "C": bound.sup_rms() / float(delta) if delta > 0 else 0.0,
    }


def _pipe_jhat(cfg, out, scale, workers):
    grid, coeffs, ens = _grid_ens(cfg)
    lat = _lattice(cfg, coeffs, h=cfg.ladder_h)
    surface = value_V(coeffs, ens, lat, clamp_tol=0.05)
    pol = ControlPolicy.feedback(surface)
    base_cost = policy_cost_surface(coeffs, ens, pol, lat, tag="J")
    radius = float(np.max(np.abs(lat.points)))

    def item(level):
        return _jhat_item(cfg, scale, coeffs, ens, lat, pol, base_cost,
                          level, radius)

    results = _ordered_map(item, cfg.levels, workers)
    _write_csv(os.path.join(out, "jhat_ladder.csv"), cfg.digest(),
               ("level", "delta", "bound_sup", "residual_margin",
                "terminal_margin", "passed_super", "norm_gap", "C"),
               [tuple(r[k] for k in ("level", "delta", "bound_sup",
                                     "residual_margin", "terminal_margin",
                                     "passed_super", "norm_gap", "C"))
                for r in results])
    cs = [r["C"] for r in results if r["C"] > 0]
    gaps = [r["norm_gap"] for r in results]
    checks = {
        "residual_super": all(r["passed_super"] for r in results),
        "norm_decreasing": all(gaps[i] >= gaps[i + 1] - 1e-12
                               for i in range(len(gaps) - 1)),
        "C_stable": (max(cs) / min(cs) <= 2.0) if cs else True,
    }
    _write_json(os.path.join(out, "jhat_report.json"),
                {"items": results, "checks": checks})
    return checks


def _envelope_item(cfg, scale, coeffs, ens_w, ens_b, lat, surface, eps, delta):
    fa = fit_functional_approximant(
        coeffs, ens_w, n_intervals=cfg.n_intervals, eps_target=eps,
        x_radius=float(np.max(np.abs(lat.points))),
    )
    pair = build_envelopes(coeffs, fa, ens_w, ens_b, eps, delta,
                           lattice=lat, tol=0.02 * scale)
    rep = sandwich_report(pair, surface)
    return {
        "eps": eps,
        "delta": delta,
        "L_tilde": pair.params["L_tilde"],
        "K_bar": pair.params["K_bar"],
        "gap_upper": rep["gap_upper"],
        "gap_lower": rep["gap_lower"],
        "upper_margin": rep["upper_margin"],
        "lower_margin": rep["lower_margin"],
        "order_ok": bool(rep["order_ok"]),
        "upper_passed": bool(pair.reports["upper"]["passed"]),
        "lower_passed": bool(pair.reports["lower"]["passed"]),
    }


def _envelope_grid(cfg, out, scale, workers):
    grid, coeffs, ens_w = _grid_ens(cfg)
    ens_b = sample_ensemble(grid, coeffs.d, cfg.n_paths, cfg.seed_b)
    extra = 4.0 * max(cfg.delta_ladder) * np.sqrt(cfg.T)
    lat = _lattice(cfg, coeffs, h=cfg.ladder_h, extra_margin=extra)
    surface = value_V(coeffs, ens_w, lat, clamp_tol=0.05)
    items = [(eps, delta) for eps in cfg.eps_ladder
             for delta in cfg.delta_ladder]

    def item(pt):
        return _envelope_item(cfg, scale, coeffs, ens_w, ens_b, lat,
                              surface, *pt)

    results = _ordered_map(item, items, workers)
    _write_csv(os.path.join(out, "envelope_grid.csv"), cfg.digest(),
               ("eps", "delta", "L_tilde", "K_bar", "gap_upper", "gap_lower",
                "upper_margin", "lower_margin", "order_ok", "upper_passed",
                "lower_passed"),
               [tuple(r[k] for k in ("eps", "delta", "L_tilde", "K_bar",
                                     "gap_upper", "gap_lower", "upper_margin",
                                     "lower_margin", "order_ok",
                                     "upper_passed", "lower_passed"))
                for r in results])
    return results


def _pipe_envelopes(cfg, out, scale, workers):
    results = _envelope_grid(cfg, out, scale, workers)
    coeffs = scenario(cfg.scenario)
    lip_v = float(np.exp(coeffs.L * cfg.T) * coeffs.L * (cfg.T + 1.0))
    checks = {
        "ordering": all(r["order_ok"] for r in results),
        "residual_sides": all(r["upper_passed"] and r["lower_passed"]
                              for r in results),
        "gradient_bound": all(0.0 < r["L_tilde"] <= lip_v for r in results),
    }
    _write_json(os.path.join(out, "envelopes_report.json"),
                {"items": results, "checks": checks})
    return checks


def _pipe_viscosity_check(cfg, out, scale, workers):
    grid, coeffs, ens = _grid_ens(cfg)
    lat = BoxLattice.centered(cfg.x0_max, 0.5, coeffs.d)

    probe = sample_adapted_field(
        lambda t, x, w: np.broadcast_to(w.current[:, 0] ** 2,
                                        (x.shape[0], w.n_paths)),
        grid, lat, ens, tag="w_sq")
    est = estimate_decomposition(probe, ens)
    drift_vals = np.concatenate([est.drift[k].ravel() for k in est.drift])
    corr = min(
        float(np.corrcoef(est.noise[k][0, :, 0],
                          2.0 * ens.value_at(k)[:, 0])[0, 1])
        for k in range(1, grid.n_steps)
    )
    checks = {
        "drift_recovery": abs(float(drift_vals.mean()) - 1.0) <= 0.05 * scale,
        "noise_correlation": corr >= 0.99,
    }

    rows = []
    if cfg.scenario == "eikonal":
        lo = cfg.T + 0.3
        lat_far = BoxLattice(np.array([lo]), np.array([lo + 1.4]), 0.1)
        exact = sample_adapted_field(
            lambda t, x, w: np.broadcast_to(
                np.maximum(np.abs(x[:, :, 0]) - (cfg.T - t), 0.0),
                (x.shape[0], w.n_paths)),
            grid, lat_far, ens, tag="V_exact")
        est2 = estimate_decomposition(exact, ens)
        rep = residual_check(est2, coeffs, ens, "super",
                             tol=0.03 * scale, conditional=False)
        for k, mu in rep["probe_mean"].items():
            for i in range(mu.size):
                rows.append((k, grid.knots[k], i, lat_far.points[i, 0],
                             mu[i], rep["probe_se"][k][i]))
        checks["exact_solution_residual"] = bool(rep["passed"])
    _write_csv(os.path.join(out, "residual_table.csv"), cfg.digest(),
               ("knot", "t", "point", "x", "mean", "se"), rows)
    _write_json(os.path.join(out, "viscosity_report.json"), {
        "drift_mean": float(drift_vals.mean()),
        "noise_corr_min": corr,
        "checks": checks,
    })
    return checks


def _pipe_full_uniqueness(cfg, out, scale, workers):
    checks = {}
    checks.update({f"mollify.{k}": v
                   for k, v in _pipe_mollify(cfg, out, scale, workers).items()})
    checks.update({f"jhat.{k}": v
                   for k, v in _pipe_jhat(cfg, out, scale, workers).items()})
    results = _envelope_grid(cfg, out, scale, workers)
    xs = [r["eps"] + r["delta"] for r in results]
    gaps = [r["gap_upper"] + r["gap_lower"] for r in results]
    slope = float(np.polyfit(np.log(xs), np.log(gaps), 1)[0])
    K1 = max(g / x for g, x in zip(gaps, xs))
    checks["envelopes.ordering"] = all(r["order_ok"] for r in results)
    checks["envelopes.residual_sides"] = all(
        r["upper_passed"] and r["lower_passed"] for r in results)
    checks["sandwich.slope"] = abs(slope - 1.0) <= 0.3 * scale
    # comparison: every super-passing majorant clears the lower envelope
    checks["comparison.margins"] = all(r["lower_margin"] >= 0.0
                                       for r in results)
    _write_json(os.path.join(out, "uniqueness_report.json"), {
        "K1": K1, "slope": slope,
        "grid": results, "checks": checks,
    })
    return checks


def _ordered_map(fn, items, workers):
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


_RUNNERS = {
    "simulate": _pipe_simulate,
    "value": _pipe_value,
    "bsde": _pipe_bsde,
    "mollify": _pipe_mollify,
    "jhat": _pipe_jhat,
    "envelopes": _pipe_envelopes,
    "viscosity-check": _pipe_viscosity_check,
    "full-uniqueness": _pipe_full_uniqueness,
}


def run(config, pipeline, out_dir, *, workers=None, tolerance_scale=None):
    """Execute one pipeline; returns (exit_code, checks dict)."""
    if pipeline not in _RUNNERS:
        _say(f"unknown pipeline {pipeline!r}; choose from {PIPELINES}")
        return 2, {}
    try:
        coeffs = scenario(config.scenario)
    except KeyError as exc:
        _say(str(exc))
        return 2, {}
    del coeffs
    os.makedirs(out_dir, exist_ok=True)
    scale = config.tolerance_scale * (tolerance_scale or 1.0)
    workers = workers if workers is not None else (os.cpu_count() or 1)
    _say(f"[{pipeline}] scenario={config.scenario} hash={config.digest()} "
         f"workers={workers}")
    try:
        checks = _RUNNERS[pipeline](config, out_dir, scale, workers)
    except (AccuracyError, ValueError) as exc:
        _say(f"[{pipeline}] failed: {exc}")
        return 1, {"error": str(exc)}
    manifest = {
        "pipeline": pipeline,
        "config": json.loads(config.to_json()),
        "config_hash": config.digest(),
        "package_version": __version__,
        "numpy_version": np.__version__,
        "checks": checks,
        "workers": workers,
    }
    _write_json(os.path.join(out_dir, "manifest.json"), manifest)
    failed = [k for k, v in checks.items() if not v]
    if failed:
        _say(f"[{pipeline}] failing checks: {', '.join(failed)}")
        return 1, checks
    _say(f"[{pipeline}] all {len(checks)} checks passed")
    return 0, checks


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="shjlab",
        description="stochastic control / viscosity-residual experiments",
    )
    parser.add_argument("--config", help="JSON config path")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--pipeline", default="value",
                        help=f"one of {', '.join(PIPELINES)}")
    parser.add_argument("--scenario", default=None,
                        help=f"scenario override ({', '.join(scenario_names())})")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the W seed (B seed follows)")
    parser.add_argument("--workers", type=int, default=None)
    parser.add_argument("--tolerance-scale", type=float, default=None)
    args = parser.parse_args(argv)

    try:
        if args.config:
            with open(args.config) as fh:
                cfg = ExperimentConfig.from_json(fh.read())
        else:
            cfg = ExperimentConfig()
        if args.scenario is not None:
            cfg = dataclasses.replace(cfg, scenario=args.scenario)
        if args.seed is not None:
            cfg = dataclasses.replace(cfg, seed_w=args.seed,
                                      seed_b=args.seed + 1000003)
    except (OSError, ValueError, TypeError, json.JSONDecodeError) as exc:
        _say(f"bad config: {exc}")
        return 2

    code, _ = run(cfg, args.pipeline, args.out, workers=args.workers,
                  tolerance_scale=args.tolerance_scale)
    return code


if __name__ == "__main__":
    sys.exit(main())
