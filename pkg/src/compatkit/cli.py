"""Single executable exposing every workflow as a subcommand.

Exit codes: 0 success, 1 usage error, 2 input/data error, 3 solver failure,
4 compatibility condition fails (phi = 0) under --fail-on-zero.  Errors print
one machine-parsable line on stderr: ``code=<int> msg=<string>``.

Active-set indices are 1-based on this boundary (converted internally).
Every run that writes an output file writes a manifest next to it
(``<out>.manifest.json``) recording the resolved configuration, tool version,
timestamps, and SHA-256 digests of the inputs.  ``--config FILE`` supplies
any subcommand's flags from a JSON object keyed by flag destination names;
explicit flags override the file.  The ``COMPATKIT_LOG`` environment variable
(error/warn/info/debug) controls log verbosity.
"""

from __future__ import annotations

import argparse
import datetime
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .bnb import BnbConfig, Formulation, phi_bnb
from .compound import CompoundSymmetry, population_phi_sq, witness_vector
from .enumeration import S_MAX_DEFAULT, phi_enumerate
from .errors import (
    ActiveSetTooLarge,
    CompatKitError,
    InputDataError,
    NumericalBreakdown,
    SolverFailure,
)
from .io import dump_json, parse_active_spec, read_matrix_csv, read_vector_csv, sha256_file
from .lasso import estimate_active_set, lambda_bound
from .model import ActiveSet, CompatResult, EPS_ZERO, GramMatrix, gram, standardize
from .simulate import (
    SimConfig,
    phi_curve,
    run_grid,
    write_curve_csv,
    write_records_csv,
)

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_SOLVER = 3
EXIT_CONDITION_FAILS = 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); we map usage errors to 1
        raise UsageError(message)


def _utc_now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).replace(microsecond=0).isoformat()


def _write_manifest(out_path: str, subcommand: str, args: argparse.Namespace,
                    inputs: list[str], started: str) -> None:
    resolved = {
        k: v for k, v in sorted(vars(args).items())
        if k not in ("func",) and not k.startswith("_")
    }
    manifest = {
        "subcommand": subcommand,
        "config": resolved,
        "version": __version__,
        "started_utc": started,
        "finished_utc": _utc_now(),
        "inputs": {path: sha256_file(path) for path in inputs if path and os.path.exists(path)},
    }
    dump_json(f"{out_path}.manifest.json", manifest)


def _emit(payload: dict, args: argparse.Namespace, subcommand: str,
          inputs: list[str], started: str) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    out = getattr(args, "out", None)
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
        _write_manifest(out, subcommand, args, inputs, started)
    else:
        print(text)


def _result_payload(result: CompatResult, one_based_active: list[int]) -> dict:
    # wall-clock time lives in the manifest timestamps, not here: result files
    # must be byte-identical across reruns of a deterministic computation
    gap_base = max(result.phi_sq, 1e-12)
    return {
        "phi_sq": result.phi_sq,
        "phi": result.phi,
        "status": result.status.value,
        "condition_holds": result.condition_holds,
        "eps_zero": EPS_ZERO,
        "lower_bound": result.lower_bound,
        "gap": (result.phi_sq - result.lower_bound) / gap_base,
        "subproblems_solved": result.subproblems_solved,
        "active": one_based_active,
        "minimizer": [float(v) for v in result.minimizer],
        "pattern": list(result.pattern.signs) if result.pattern is not None else None,
    }


def _load_gram(args) -> GramMatrix:
    if getattr(args, "design", None):
        raw = read_matrix_csv(args.design)
        return gram(standardize(raw).design)
    values = read_matrix_csv(args.gram)
    return GramMatrix(values)


def _int_list(text: str) -> list[int]:
    try:
        return [int(tok) for tok in str(text).split(",") if tok.strip()]
    except ValueError as exc:
        raise UsageError(f"expected a comma-separated integer list, got {text!r}") from exc


def _float_list(text: str) -> list[float]:
    try:
        return [float(tok) for tok in str(text).split(",") if tok.strip()]
    except ValueError as exc:
        raise UsageError(f"expected a comma-separated number list, got {text!r}") from exc


def cmd_phi_qp(args) -> int:
    started = _utc_now()
    g = _load_gram(args)
    spec = parse_active_spec(args.active)
    spec.active.validate_against(g.p)
    result = phi_enumerate(g, spec.active, threads=args.threads, s_max=args.s_max,
                           stop_on_zero=args.stop_on_zero)
    payload = _result_payload(result, [i + 1 for i in spec.active.indices])
    inputs = [p for p in (getattr(args, "gram", None), getattr(args, "design", None), args.active) if p]
    _emit(payload, args, "phi-qp", inputs, started)
    if args.fail_on_zero and not result.condition_holds:
        return EXIT_CONDITION_FAILS
    return EXIT_OK


def cmd_phi_miqp(args) -> int:
    started = _utc_now()
    g = _load_gram(args)
    spec = parse_active_spec(args.active)
    spec.active.validate_against(g.p)
    cfg = BnbConfig(
        formulation=Formulation(args.formulation),
        big_m=args.big_m,
        warm_starts_k=args.K,
        time_limit=None if args.time_limit <= 0 else args.time_limit,
        gap_tol=args.gap_tol,
        node_limit=args.node_limit,
        seed=args.seed,
    )
    stats: dict = {}
    result = phi_bnb(g, spec.active, cfg, stats=stats)
    payload = _result_payload(result, [i + 1 for i in spec.active.indices])
    payload.update(
        incumbent=result.phi_sq,
        nodes_expanded=stats.get("nodes_expanded", 0),
        warm_start_value=stats.get("warm_start_value"),
        formulation=args.formulation,
        warm_starts_k=args.K,
        time_limit=args.time_limit,
        seed=args.seed,
    )
    if payload["warm_start_value"] is not None and not np.isfinite(payload["warm_start_value"]):
        payload["warm_start_value"] = None
    inputs = [p for p in (getattr(args, "gram", None), getattr(args, "design", None), args.active) if p]
    _emit(payload, args, "phi-miqp", inputs, started)
    if args.fail_on_zero and not result.condition_holds:
        return EXIT_CONDITION_FAILS
    return EXIT_OK


def cmd_analytic_bound(args) -> int:
    started = _utc_now()
    cs = CompoundSymmetry(rho=args.rho, p=args.p)
    bound = population_phi_sq(cs, args.s)
    payload = {
        "rho": args.rho,
        "s": args.s,
        "p": args.p,
        "lower": bound.lower,
        "upper": bound.upper,
        "phi_lower": bound.phi_lower,
        "phi_upper": bound.phi_upper,
    }
    if bound.exact:
        payload["exact"] = bound.value
    _emit(payload, args, "analytic-bound", [], started)
    return EXIT_OK


def cmd_estimate_active_set(args) -> int:
    started = _utc_now()
    X = read_matrix_csv(args.x)
    y = read_vector_csv(args.y)
    est = estimate_active_set(X, y, delta=args.delta, folds=args.folds, seed=args.seed)
    payload = {
        "active": [i + 1 for i in est.s_hat.indices],  # 1-based for display
        "s_hat_size": est.s_hat.s,
        "sigma_sq": est.sigma_sq_hat,
        "lambda_cv": est.lambda_cv,
        "lambda_train": est.lambda_train,
        "s_cv": est.s_cv,
        "beta_train": [float(b) for b in est.beta_train],
        "delta": args.delta,
        "folds": args.folds,
        "seed": args.seed,
    }
    _emit(payload, args, "estimate-active-set", [args.x, args.y], started)
    return EXIT_OK


def _sim_config_from_args(args) -> SimConfig:
    bnb = None
    if args.solver == "bnb":
        bnb = BnbConfig(
            formulation=Formulation(args.bnb_formulation),
            warm_starts_k=args.bnb_K,
            time_limit=None if args.bnb_time_limit <= 0 else args.bnb_time_limit,
            seed=args.seed,
        )
    return SimConfig(
        n_grid=tuple(_int_list(args.n_grid)),
        p_grid=tuple(_int_list(args.p_grid)),
        rho_grid=tuple(_float_list(args.rho_grid)),
        s=args.s,
        seed=args.seed,
        coef_low=args.coef_low,
        coef_high=args.coef_high,
        snr=args.snr,
        delta=args.delta,
        replications=args.replications,
        solver=args.solver,
        bnb=bnb,
        s_max=args.s_max,
    )


# grid presets: desk trims the largest cells; full is the paper-scale sweep
_PRESETS = {
    "desk": {"n_grid": "100,200,500,1000", "p_grid": "20,50,200", "rho_grid": "0,0.4,0.8"},
    "full": {
        "n_grid": "100,200,300,400,500,750,1000,1500,2000",
        "p_grid": "20,50,100,200,500,1000,2000,5000",
        "rho_grid": "0,0.4,0.8",
    },
}


def cmd_simulate(args) -> int:
    started = _utc_now()
    if args.preset:
        preset = _PRESETS[args.preset]
        for key, value in preset.items():
            if getattr(args, key) is None:
                setattr(args, key, value)
        if args.preset == "full":
            log.warning(
                "the full grid reaches p = 5000; dense solves at that size take "
                "hours per cell, and --solver bnb with a time limit is the "
                "intended configuration there"
            )
    if not args.n_grid or not args.p_grid or not args.rho_grid:
        raise UsageError("simulate needs --n-grid, --p-grid and --rho-grid "
                         "(flags, --config, or --preset)")
    cfg = _sim_config_from_args(args)
    count = write_records_csv(args.out, run_grid(cfg, workers=args.threads))
    _write_manifest(args.out, "simulate", args, [], started)
    log.info("wrote %d records to %s", count, args.out)
    return EXIT_OK


def cmd_phi_curve(args) -> int:
    started = _utc_now()
    X = read_matrix_csv(args.x)
    y = read_vector_csv(args.y)
    spec = parse_active_spec(args.active)
    steps = _int_list(args.steps)
    if args.beta_ref:
        beta_ref = read_vector_csv(args.beta_ref)
    elif spec.beta_train is not None:
        beta_ref = spec.beta_train
    else:
        raise UsageError(
            "phi-curve needs a reference coefficient vector: pass --beta-ref or an "
            "--active file produced by estimate-active-set"
        )
    sigma_sq = args.sigma_sq if args.sigma_sq is not None else spec.sigma_sq
    if sigma_sq is None:
        raise UsageError("phi-curve needs --sigma-sq (or an --active file that records it)")
    points = phi_curve(
        X, y, spec.active, steps, sigma_sq, beta_ref, delta=args.delta, s_max=args.s_max
    )
    write_curve_csv(args.out, points)
    _write_manifest(args.out, "phi-curve", args,
                    [args.x, args.y, args.active if os.path.exists(args.active) else None,
                     args.beta_ref], started)
    return EXIT_OK


def _selftest_checks():
    yield "identity gram (p=10, s=3)", lambda: _check_close(
        phi_enumerate(GramMatrix(np.eye(10)), ActiveSet((0, 4, 8))).phi_sq, 1.0, 1e-6
    )

    def even_case():
        cs = CompoundSymmetry(0.4, 20)
        res = phi_enumerate(cs.gram(), ActiveSet((0, 1)))
        return _check_close(res.phi_sq, 0.6, 1e-4)

    yield "compound symmetry even (rho=0.4, s=2)", even_case

    def odd_case():
        cs = CompoundSymmetry(0.3, 20)
        res = phi_enumerate(cs.gram(), ActiveSet((0, 1, 2)))
        upper = population_phi_sq(cs, 3).upper
        w = witness_vector(cs, 3)
        wobj = 3 * float(w @ cs.matrix() @ w)
        ok = (0.7 - 1e-6 <= res.phi_sq <= upper + 1e-6) and abs(wobj - upper) <= 1e-12
        return ok, f"phi_sq={res.phi_sq:.6f} in [0.7, {upper:.6f}]"

    yield "compound symmetry odd bracket (rho=0.3, s=3)", odd_case

    def bnb_case():
        rng = np.random.Generator(np.random.PCG64(2024))
        X = rng.standard_normal((40, 8))
        g = gram(standardize(X).design)
        a = ActiveSet((0, 2, 5, 7))
        ref = phi_enumerate(g, a).phi_sq
        diffs = []
        for form in (Formulation.SOS1, Formulation.BIG_M):
            got = phi_bnb(g, a, BnbConfig(formulation=form, warm_starts_k=2, seed=5,
                                          time_limit=None)).phi_sq
            diffs.append(abs(got - ref))
        ok = max(diffs) <= 1e-5
        return ok, f"max |bnb - enum| = {max(diffs):.2e}"

    yield "branch-and-bound vs enumeration (s=4)", bnb_case

    def lambda_case():
        got = lambda_bound(float(np.sqrt(1.268e-4)), 1009, 475, 0.1)
        ok = abs(got - 3.085e-3) / 3.085e-3 <= 1e-3
        return ok, f"lambda_train={got:.6e}"

    yield "penalty formula reproduction", lambda_case


def _check_close(got: float, want: float, tol: float):
    return abs(got - want) <= tol, f"got {got:.8f}, want {want:.8f} ± {tol:g}"


def cmd_selftest(args) -> int:
    all_ok = True
    for name, check in _selftest_checks():
        try:
            ok, detail = check()
        except Exception as exc:  # a crash is a failure, not an abort
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        all_ok &= ok
        print(f"{'PASS' if ok else 'FAIL'}  {name}  [{detail}]")
    print("selftest:", "all checks passed" if all_ok else "FAILURES present")
    return EXIT_OK if all_ok else EXIT_SOLVER


def _add_common_gram_flags(sp):
    sp.add_argument("--gram", help="CSV file holding the p x p Gram (or population covariance) matrix")
    sp.add_argument("--design", help="CSV file holding raw n x p data; standardized internally")
    sp.add_argument("--active",
                    help="active set: comma-separated 1-based indices, a JSON array file, "
                         "or estimate-active-set output")
    sp.add_argument("--out", help="write the JSON result here (plus a manifest)")
    sp.add_argument("--fail-on-zero", action="store_true",
                    help="exit 4 when the compatibility condition fails (phi = 0)")
    sp.add_argument("--s-max", type=int, default=S_MAX_DEFAULT, help=argparse.SUPPRESS)


def build_parser() -> _Parser:
    parser = _Parser(prog="compatkit", description=__doc__)
    parser.add_argument("--version", action="version", version=f"compatkit {__version__}")
    sub = parser.add_subparsers(dest="subcommand", metavar="SUBCOMMAND")
    parser.sub_map = {}

    sp = sub.add_parser("phi-qp", parents=[], help="exact phi by sign-pattern enumeration")
    _add_common_gram_flags(sp)
    sp.add_argument("--threads", type=int, default=1, help="enumeration worker threads")
    sp.add_argument("--stop-on-zero", action="store_true",
                    help="stop scanning patterns once one certifies phi = 0")
    sp.add_argument("--config", help="JSON file supplying any of this subcommand's flags")
    sp.set_defaults(func=cmd_phi_qp)
    parser.sub_map["phi-qp"] = sp

    sp = sub.add_parser("phi-miqp", help="branch-and-bound MIQP upper bound / exact phi")
    _add_common_gram_flags(sp)
    sp.add_argument("--formulation", choices=[f.value for f in Formulation], default="sos1")
    sp.add_argument("--K", type=int, default=20, help="number of Bernoulli warm-start sign vectors")
    sp.add_argument("--time-limit", type=float, default=60.0,
                    help="wall-clock limit in seconds; <= 0 means no limit")
    sp.add_argument("--gap-tol", type=float, default=1e-6)
    sp.add_argument("--node-limit", type=int, default=1_000_000)
    sp.add_argument("--big-m", type=float, default=1.0)
    sp.add_argument("--seed", type=int, default=None, help="warm-start RNG seed (explicit for reproducibility)")
    sp.add_argument("--config", help="JSON file supplying any of this subcommand's flags")
    sp.set_defaults(func=cmd_phi_miqp)
    parser.sub_map["phi-miqp"] = sp

    sp = sub.add_parser("analytic-bound", help="closed-form compound-symmetry phi^2 bracket")
    sp.add_argument("--rho", type=float, default=None)
    sp.add_argument("--s", type=int, default=None)
    sp.add_argument("--p", type=int, default=None)
    sp.add_argument("--out")
    sp.add_argument("--config", help="JSON file supplying any of this subcommand's flags")
    sp.set_defaults(func=cmd_analytic_bound)
    parser.sub_map["analytic-bound"] = sp

    sp = sub.add_parser("estimate-active-set", help="CV + theoretical-penalty support estimation")
    sp.add_argument("--x", help="training design CSV (rows = observations)")
    sp.add_argument("--y", help="training response CSV (one column)")
    sp.add_argument("--delta", type=float, default=0.1)
    sp.add_argument("--folds", type=int, default=10)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--out")
    sp.add_argument("--config", help="JSON file supplying any of this subcommand's flags")
    sp.set_defaults(func=cmd_estimate_active_set)
    parser.sub_map["estimate-active-set"] = sp

    sp = sub.add_parser("simulate", help="Monte Carlo grid over (n, p, rho)")
    sp.add_argument("--n-grid", default=None, help="comma list, e.g. 100,200,500")
    sp.add_argument("--p-grid", default=None, help="comma list, e.g. 20,50,200")
    sp.add_argument("--rho-grid", default=None, help="comma list, e.g. 0,0.4,0.8")
    sp.add_argument("--preset", choices=sorted(_PRESETS), default=None,
                    help="fill the grids with the desk-scale or full paper-scale sweep")
    sp.add_argument("--s", type=int, default=5)
    sp.add_argument("--replications", type=int, default=1)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--coef-low", type=float, default=1.0)
    sp.add_argument("--coef-high", type=float, default=2.0)
    sp.add_argument("--snr", type=float, default=1.0)
    sp.add_argument("--delta", type=float, default=0.1)
    sp.add_argument("--solver", choices=["enum", "bnb"], default="enum")
    sp.add_argument("--bnb-formulation", choices=[f.value for f in Formulation], default="sos1")
    sp.add_argument("--bnb-K", type=int, default=20)
    sp.add_argument("--bnb-time-limit", type=float, default=60.0)
    sp.add_argument("--s-max", type=int, default=S_MAX_DEFAULT, help=argparse.SUPPRESS)
    sp.add_argument("--threads", type=int, default=1, help="grid worker processes")
    sp.add_argument("--out", help="records CSV path")
    sp.add_argument("--config", help="JSON file supplying any of this subcommand's flags")
    sp.set_defaults(func=cmd_simulate)
    parser.sub_map["simulate"] = sp

    sp = sub.add_parser("phi-curve", help="phi_n, MSE and bound over growing data prefixes")
    sp.add_argument("--x")
    sp.add_argument("--y")
    sp.add_argument("--active")
    sp.add_argument("--steps", help="comma list of prefix sizes")
    sp.add_argument("--sigma-sq", type=float, default=None)
    sp.add_argument("--beta-ref", help="reference coefficient CSV; defaults to the "
                                       "beta_train carried by the --active file")
    sp.add_argument("--delta", type=float, default=0.1)
    sp.add_argument("--s-max", type=int, default=S_MAX_DEFAULT, help=argparse.SUPPRESS)
    sp.add_argument("--out", help="curve CSV path")
    sp.add_argument("--config", help="JSON file supplying any of this subcommand's flags")
    sp.set_defaults(func=cmd_phi_curve)
    parser.sub_map["phi-curve"] = sp

    sp = sub.add_parser("selftest", help="fast built-in verification checks")
    sp.set_defaults(func=cmd_selftest)

    return parser


# flags that must be present after merging command line and --config file
_REQUIRED = {
    "phi-qp": ("active",),
    "phi-miqp": ("active", "seed"),
    "analytic-bound": ("rho", "s", "p"),
    "estimate-active-set": ("x", "y", "seed"),
    "simulate": ("seed", "out"),
    "phi-curve": ("x", "y", "active", "steps", "out"),
}


def _parse(parser: _Parser, argv: list[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            with open(config_path, encoding="utf-8") as fh:
                overrides = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise InputDataError(f"cannot read config {config_path}: {exc}") from exc
        if not isinstance(overrides, dict):
            raise InputDataError(f"{config_path}: config must be a JSON object")
        known = set(vars(args))
        unknown = set(overrides) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        parser.sub_map[args.subcommand].set_defaults(**overrides)
        args = parser.parse_args(argv)  # explicit flags still win
    for dest in _REQUIRED.get(getattr(args, "subcommand", "") or "", ()):
        if getattr(args, dest, None) is None:
            raise UsageError(f"--{dest.replace('_', '-')} is required (flag or config)")
    return args


def _setup_logging() -> None:
    level_name = os.environ.get("COMPATKIT_LOG", "warn").lower()
    level = {"error": logging.ERROR, "warn": logging.WARNING,
             "info": logging.INFO, "debug": logging.DEBUG}.get(level_name, logging.WARNING)
    logging.basicConfig(level=level, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def _fail(code: int, msg: str) -> int:
    line = " ".join(str(msg).split())
    print(f"code={code} msg={line}", file=sys.stderr)
    return code


def dispatch(argv: list[str]) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = _parse(parser, argv)
        if not getattr(args, "subcommand", None):
            raise UsageError("a subcommand is required (see --help)")
        if args.subcommand in ("phi-qp", "phi-miqp") and not (
            getattr(args, "gram", None) or getattr(args, "design", None)
        ):
            raise UsageError("provide --gram or --design")
        return args.func(args)
    except UsageError as exc:
        return _fail(EXIT_USAGE, str(exc))
    except ActiveSetTooLarge as exc:
        return _fail(EXIT_DATA, f"{exc}; try the phi-miqp subcommand")
    except (SolverFailure, NumericalBreakdown) as exc:
        return _fail(EXIT_SOLVER, str(exc))
    except (CompatKitError, OSError) as exc:
        return _fail(EXIT_DATA, str(exc))


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
