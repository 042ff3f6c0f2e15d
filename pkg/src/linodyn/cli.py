"""Command-line interface: simulate, recover, fit, infer, experiment."""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .degraded import AGGREGATED, TIME_SCALED, DegradedSpec, degrade, g_map
from .errors import (
    ComplexSpectrumError,
    LinodynError,
    NearDegenerateError,
    NonPositiveEigenvalueError,
    SingularWindowError,
)
from .estimation import FitOptions, fit
from .identifiability import recover_exact
from .inference import estimate_noise_variance, infer, sandwich
from .model import (
    NoiseSpec,
    SystemParams,
    pack,
    read_csv,
    simulate_observations,
    unpack,
    write_csv,
)
from .simulation import ExperimentConfig, preset_params, run_experiment


def _parse_degrade(text, base_delta_t=None):
    """Parse 'aggregated:K' / 'timescale:K' CLI flags."""
    kind, _, value = text.partition(":")
    if not value:
        raise ValueError(f"degrade spec {text!r} must look like aggregated:5")
    if kind == "aggregated":
        return DegradedSpec(mode=AGGREGATED, k=int(value),
                            base_delta_t=base_delta_t)
    if kind in ("timescale", "time_scaled"):
        return DegradedSpec(mode=TIME_SCALED, k=float(value))
    raise ValueError(f"unknown degrade mode {kind!r}")


def _params_from_json(path):
    with open(path) as fh:
        doc = json.load(fh)
    return SystemParams(x0=np.asarray(doc["x0"], dtype=float),
                        A=np.asarray(doc["A"], dtype=float))


def _cmd_simulate(args):
    if args.params:
        params = _params_from_json(args.params)
    else:
        params = preset_params(args.preset)
    noise = None if args.sigma is None else NoiseSpec.isotropic(
        args.sigma, params.dim, args.seed)
    obs = simulate_observations(params, args.n, args.T, noise)
    write_csv(obs, args.out)
    if args.degrade:
        spec = _parse_degrade(args.degrade, base_delta_t=obs.delta_t)
        degraded = degrade(obs, spec)
        stem, dot, ext = args.out.rpartition(".")
        out2 = (stem or args.out) + "_degraded" + (dot + ext if stem else ".csv")
        write_csv(degraded, out2)
        print(out2)
    print(args.out)
    return 0


def _cmd_recover(args):
    obs = read_csv(args.obs)
    try:
        params = recover_exact(obs)
    except (SingularWindowError, ComplexSpectrumError,
            NearDegenerateError, NonPositiveEigenvalueError) as err:
        print(f"recovery failed: {err}", file=sys.stderr)
        return 2
    doc = {"x0": list(params.x0), "A": [list(row) for row in params.A]}
    _emit(doc, args.out)
    return 0


def _load_fit_options(path):
    with open(path) as fh:
        doc = json.load(fh)
    kw = {}
    for key in ("grad_tol", "step_tol", "max_iters"):
        if key in doc:
            kw[key] = doc[key]
    return FitOptions(init=np.asarray(doc["init"], dtype=float),
                      bounds_lower=np.asarray(doc["bounds_lower"], dtype=float),
                      bounds_upper=np.asarray(doc["bounds_upper"], dtype=float),
                      **kw)


def _cmd_fit(args):
    obs = read_csv(args.obs)
    opts = _load_fit_options(args.options)
    result = fit(obs, opts)
    doc = {
        "theta_hat": list(result.theta_hat),
        "objective": result.objective,
        "grad_norm": result.grad_norm,
        "iterations": result.iterations,
        "converged": result.converged,
        "active_bounds": [int(i) for i in result.active_bounds],
    }
    _emit(doc, args.out)
    return 0


def _cmd_infer(args):
    obs = read_csv(args.obs)
    with open(args.fit) as fh:
        fit_doc = json.load(fh)
    theta_hat_fit = np.asarray(fit_doc["theta_hat"], dtype=float)
    n_used = obs.n
    spec = None
    if args.path != "original":
        spec = _parse_degrade(args.path, base_delta_t=None)
    if args.sigma == "estimate":
        noise_var = estimate_noise_variance(theta_hat_fit, obs)
    else:
        text = args.sigma.partition(":")[2] or args.sigma
        noise_var = np.asarray([float(v) for v in text.split(",")], dtype=float)
        if noise_var.shape[0] == 1:
            noise_var = np.full(obs.d, noise_var[0])
    if spec is None:
        theta_hat = theta_hat_fit
        T = obs.t_end - obs.t_start
        cov = sandwich(theta_hat, T, noise_var, panels=args.panels)
    elif spec.mode == TIME_SCALED:
        theta_hat = g_map(theta_hat_fit, spec)
        T = (obs.t_end - obs.t_start) / spec.k
        cov = sandwich(theta_hat, T, noise_var, degraded=spec,
                       panels=args.panels)
    else:
        # the degraded CSV only determines the original grid up to the
        # dropped remainder; reconstruct the divisible-count grid.
        base_dt = obs.delta_t / spec.k
        spec = DegradedSpec(mode=AGGREGATED, k=spec.k, base_delta_t=base_dt)
        theta_hat = g_map(theta_hat_fit, spec)
        n_orig = obs.n * spec.k
        T = (n_orig - 1) * base_dt
        cov = sandwich(theta_hat, T, noise_var, degraded=spec,
                       n_original=n_orig, panels=args.panels)
    theta_ref = pack(_params_from_json(args.ref)) if args.ref else None
    outcome = infer(theta_hat, cov, n_used, args.alpha, theta_ref=theta_ref)
    doc = {
        "alpha": outcome.alpha,
        "n_used": outcome.n_used,
        "path": cov.path,
        "theta_hat": list(theta_hat),
        "ci_lower": list(outcome.ci_lower),
        "ci_upper": list(outcome.ci_upper),
        "edge_rejections": outcome.edge_rejections.astype(int).tolist(),
        "cr_statistic": outcome.cr_statistic,
        "cr_critical": outcome.cr_critical,
        "theta_in_cr": outcome.theta_in_cr,
    }
    _emit(doc, args.out)
    return 0


def _cmd_experiment(args):
    with open(args.config) as fh:
        doc = json.load(fh)
    degrade_spec = None
    if doc.get("degrade"):
        dd = doc["degrade"]
        degrade_spec = DegradedSpec(mode=dd["mode"], k=dd["k"],
                                    base_delta_t=dd.get("base_delta_t"))
    preset = doc["preset"]
    if isinstance(preset, dict):
        preset = SystemParams(x0=np.asarray(preset["x0"], dtype=float),
                              A=np.asarray(preset["A"], dtype=float))
    kw = {}
    for key in ("replications", "noise_sigma", "T", "alpha", "seed_base",
                "init_offset", "bound_halfwidth", "panels", "workers",
                "noise_free"):
        if key in doc:
            kw[key] = doc[key]
    config = ExperimentConfig(preset=preset,
                              sample_sizes=doc["sample_sizes"],
                              degrade=degrade_spec, **kw)
    try:
        rows, _ = run_experiment(config, out_dir=args.out)
    except LinodynError as err:
        print(f"experiment failed: {err}", file=sys.stderr)
        return 3
    for row in rows:
        print(f"n={row.sample_size} n_tilde={row.n_tilde} "
              f"mse={row.mse:.6g} cr={row.within_cr_rate:.1f}% "
              f"failures={row.failures}")
    return 0


def _emit(doc, out):
    text = json.dumps(doc, indent=2)
    if out:
        with open(out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="linodyn",
        description="Linear ODE system identification and inference tools")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="sample a (noisy) trajectory to CSV")
    p.add_argument("--preset", default="d3", help="preset system id")
    p.add_argument("--params", help="JSON file with x0 and A (overrides preset)")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--sigma", type=float, default=None,
                   help="noise standard deviation; omit for noise-free")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--degrade", help="aggregated:K or timescale:K")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("recover",
                       help="closed-form recovery from noise-free CSV")
    p.add_argument("--obs", required=True)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_recover)

    p = sub.add_parser("fit", help="least-squares fit of a CSV")
    p.add_argument("--obs", required=True)
    p.add_argument("--options", required=True,
                   help="JSON with init, bounds_lower, bounds_upper, tolerances")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("infer", help="confidence sets and edge tests")
    p.add_argument("--fit", required=True, help="fit result JSON")
    p.add_argument("--obs", required=True, help="the CSV the fit used")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--sigma", default="estimate",
                   help="'known:v1,...' (variances) or 'estimate'")
    p.add_argument("--path", default="original",
                   help="original, aggregated:K or timescale:K")
    p.add_argument("--ref", help="JSON params for a CR membership check")
    p.add_argument("--panels", type=int, default=1024)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("experiment", help="replication sweep from a config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_experiment)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
