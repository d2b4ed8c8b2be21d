"""Command-line entry point: run simulation studies, estimate effects on CSV
data, generate datasets, and print ground-truth oracles.

Configuration comes from an optional JSON file with sections "dgp",
"estimation", and "study"; command-line flags override file values. Every
output file is paired with a <name>.manifest.json recording the fully
resolved configuration and seed needed to reproduce it.
"""

import argparse
import csv
import datetime
import json
import sys
from dataclasses import asdict

import numpy as np

from . import __version__
from .data import STRATA, validate_dataset
from .errors import (
    ConfigError,
    DataValidationError,
    EstimationError,
    ProxistrataError,
    StudyError,
)
from .estimation import EstimationConfig, bootstrap
from .models import OutcomeCase
from .simulation import (
    DgpConfig,
    bridge_grid_residual,
    dataset_to_csv,
    derive_true_bridge,
    generate,
    oracle_true_effects,
    run_study,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ESTIMATION = 3
EXIT_IO = 4

# outcome case -> the generator's (theta_a, theta_w)
_CASE_SLOPES = {"i": (0.0, 0.0), "ii": (1.0, 0.0), "iii": (0.0, 1.0), "iv": (1.0, 1.0)}


def _load_config_file(path):
    if path is None:
        return {}
    try:
        with open(path) as handle:
            cfg = json.load(handle)
    except OSError as exc:
        raise _IoFailure(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return cfg


class _IoFailure(Exception):
    pass


def _resolve_case(file_cfg, args):
    """The outcome case: flag wins, then the config file (top level or the
    estimation section), then case i."""
    case = getattr(args, "case", None)
    if case is None:
        case = file_cfg.get("case") or file_cfg.get("estimation", {}).get("case")
    return OutcomeCase.parse(case or "i").value


def _build_dgp(file_cfg, args):
    section = dict(file_cfg.get("dgp", {}))
    known = set(DgpConfig.__dataclass_fields__)
    bad = set(section) - known
    if bad:
        raise ConfigError(f"unknown dgp config fields: {sorted(bad)}")
    values = section
    if getattr(args, "n", None) is not None:
        values["n"] = args.n
    if getattr(args, "zeta_u", None) is not None:
        values["zeta_u"] = args.zeta_u
    if getattr(args, "seed", None) is not None:
        values["seed"] = args.seed
    # the case pins the generator's proxy slopes unless set explicitly
    case = _resolve_case(file_cfg, args)
    slopes = _CASE_SLOPES[case]
    values.setdefault("theta_a", slopes[0])
    values.setdefault("theta_w", slopes[1])
    for key in ("intercepts_z0", "intercepts_z1"):
        if key in values:
            values[key] = tuple(values[key])
    try:
        return DgpConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _build_estimation(file_cfg, args, default_bootstrap=200):
    section = dict(file_cfg.get("estimation", {}))
    section.pop("case", None)
    known = set(EstimationConfig.__dataclass_fields__)
    bad = set(section) - known
    if bad:
        raise ConfigError(f"unknown estimation config fields: {sorted(bad)}")
    values = section
    values["outcome_case"] = _resolve_case(file_cfg, args)
    if getattr(args, "bootstrap", None) is not None:
        values["bootstrap_reps"] = args.bootstrap
    values.setdefault("bootstrap_reps", default_bootstrap)
    if getattr(args, "seed", None) is not None:
        values["seed"] = args.seed
    if getattr(args, "integral", None) is not None:
        values["integral_method"] = _normalize_integral(args.integral)
    if getattr(args, "estimator", None) is not None:
        values["estimator"] = args.estimator
    return EstimationConfig(**values)


def _normalize_integral(flag):
    if flag in ("closed", "closed_form"):
        return "closed_form"
    if flag.startswith("quad:") or flag.startswith("quadrature:"):
        return "quadrature:" + flag.split(":", 1)[1]
    raise ConfigError(f"bad --integral value {flag!r}; expected 'closed' or 'quad:K'")


def _write_manifest(out_path, command, resolved, seed, started, outputs):
    manifest = {
        "command": command,
        "artifact_version": __version__,
        "seed": seed,
        "config": resolved,
        "started_at": started,
        "finished_at": _now(),
        "outputs": outputs,
    }
    path = str(out_path) + ".manifest.json"
    with open(path, "w") as handle:
        json.dump(manifest, handle, indent=2, sort_keys=True, default=_json_default)
        handle.write("\n")
    return path


def _json_default(obj):
    if isinstance(obj, OutcomeCase):
        return obj.value
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _now():
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _resolved(dgp=None, est=None, extra=None):
    out = {}
    if dgp is not None:
        d = asdict(dgp)
        d["gamma_a"], d["gamma_z"], d["gamma_c2"] = dgp.gamma_a, dgp.gamma_z, dgp.gamma_c2
        out["dgp"] = d
    if est is not None:
        out["estimation"] = asdict(est)
    if extra:
        out.update(extra)
    return out


def cmd_simulate(args):
    file_cfg = _load_config_file(args.config)
    dgp = _build_dgp(file_cfg, args)
    est = _build_estimation(file_cfg, args)
    study = dict(file_cfg.get("study", {}))
    reps = args.reps if args.reps is not None else study.get("reps", 500)
    master_seed = args.seed if args.seed is not None else study.get("seed", dgp.seed)
    workers = args.threads if args.threads is not None else study.get("workers")

    started = _now()
    summary = run_study(dgp, est, reps=reps, master_seed=master_seed, workers=workers)
    out = args.out or "study.csv"
    try:
        with open(out, "w", newline="") as handle:
            handle.write(summary.to_csv_string())
    except OSError as exc:
        raise _IoFailure(f"cannot write {out}: {exc}") from exc
    resolved = _resolved(dgp, est, {"study": {"reps": reps, "seed": master_seed,
                                              "workers": workers}})
    manifest = _write_manifest(out, "simulate", resolved, master_seed, started, [out])
    print(f"wrote {out} and {manifest}")
    return EXIT_OK


def cmd_generate(args):
    file_cfg = _load_config_file(args.config)
    dgp = _build_dgp(file_cfg, args)
    started = _now()
    latent = generate(dgp)
    out = args.out or "dataset.csv"
    try:
        dataset_to_csv(latent.data, out)
    except OSError as exc:
        raise _IoFailure(f"cannot write {out}: {exc}") from exc
    manifest = _write_manifest(out, "generate", _resolved(dgp), dgp.seed, started, [out])
    print(f"wrote {out} and {manifest}")
    return EXIT_OK


def _read_dataset_csv(path, columns):
    roles = {"z": "z", "s": "s", "y": "y", "a": "a", "w": "w"}
    roles.update({k: v for k, v in columns.items() if k in roles})
    c_cols = columns.get("c")
    try:
        with open(path, newline="") as handle:
            reader = csv.DictReader(handle)
            if reader.fieldnames is None:
                raise DataValidationError([("csv", "missing header row")])
            header = list(reader.fieldnames)
            rows = list(reader)
    except OSError as exc:
        raise _IoFailure(f"cannot read {path}: {exc}") from exc
    for role, name in roles.items():
        if name not in header:
            raise DataValidationError([(f"column {name}", f"missing from CSV (role {role})")])
    if c_cols is None:
        c_cols = sorted(
            (name for name in header if name.startswith("c") and name[1:].isdigit()),
            key=lambda s: int(s[1:]))
    else:
        for name in c_cols:
            if name not in header:
                raise DataValidationError([(f"column {name}", "missing from CSV (role c)")])

    def col(name):
        try:
            return np.array([float(r[name]) if r[name] != "" else np.nan for r in rows])
        except (ValueError, TypeError) as exc:
            raise DataValidationError([(f"column {name}", f"non-numeric value: {exc}")]) from None

    c = np.column_stack([col(name) for name in c_cols]) if c_cols else np.empty((len(rows), 0))
    return validate_dataset(z=col(roles["z"]), s=col(roles["s"]), y=col(roles["y"]),
                            a=col(roles["a"]), w=col(roles["w"]), c=c)


def cmd_estimate(args):
    file_cfg = _load_config_file(args.config)
    est = _build_estimation(file_cfg, args, default_bootstrap=200)
    data = _read_dataset_csv(args.data, file_cfg.get("columns", {}))
    started = _now()
    fit = bootstrap(data, est)
    payload = {
        "delta": {g.label: fit.effects.delta[g] for g in STRATA},
        "ci": None if fit.effects.ci_lower is None else {
            g.label: [fit.effects.ci_lower[g], fit.effects.ci_upper[g]] for g in STRATA},
        "mu": {f"z{z}_{g.label}": fit.effects.mu[(z, g)] for z in (0, 1) for g in STRATA},
        "diagnostics": {
            "n": data.n,
            "clipped_weight_units": fit.weights.clipped_units,
            "bootstrap_reps": fit.effects.bootstrap_reps,
            "bootstrap_failures": fit.effects.boot_failures,
            "steps": _solver_diag(fit.diagnostics),
        },
    }
    out = args.out or "estimates.json"
    try:
        with open(out, "w") as handle:
            json.dump(payload, handle, indent=2, sort_keys=True, default=_json_default)
            handle.write("\n")
    except OSError as exc:
        raise _IoFailure(f"cannot write {out}: {exc}") from exc
    resolved = _resolved(est=est, extra={"data": str(args.data)})
    manifest = _write_manifest(out, "estimate", resolved, est.seed, started, [out])
    print(f"wrote {out} and {manifest}")
    return EXIT_OK


def _solver_diag(diag):
    out = {}
    for step, d in diag.items():
        if isinstance(d, dict):
            out[step] = {k: v for k, v in d.items()
                         if isinstance(v, (int, float, bool, str))}
        else:
            out[step] = d
    return out


def cmd_oracle(args):
    file_cfg = _load_config_file(args.config)
    dgp = _build_dgp(file_cfg, args)
    started = _now()
    alpha_star = derive_true_bridge(dgp)
    residual = bridge_grid_residual(dgp, alpha_star)
    truth, mc_err = oracle_true_effects(dgp, n_mc=args.n_mc, seed=dgp.seed + 1)
    payload = {
        "delta": {g.label: truth[g] for g in STRATA},
        "mc_error": {g.label: mc_err[g] for g in STRATA},
        "alpha_star": {
            "alpha0": alpha_star[0], "log_gap": alpha_star[1], "alpha_w": alpha_star[2],
            "alpha_c": alpha_star[3], "alpha_c2": alpha_star[4],
        },
        "bridge_grid_residual": residual,
    }
    text = json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n"
    if args.out:
        try:
            with open(args.out, "w") as handle:
                handle.write(text)
        except OSError as exc:
            raise _IoFailure(f"cannot write {args.out}: {exc}") from exc
        _write_manifest(args.out, "oracle", _resolved(dgp), dgp.seed, started, [args.out])
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="proxistrata",
        description="Principal causal effects with negative-control proxies")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_case=True):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--n", type=int, help="sample size")
        p.add_argument("--zeta-u", dest="zeta_u", type=float,
                       help="latent confounder strength")
        if with_case:
            p.add_argument("--case", choices=["i", "ii", "iii", "iv"],
                           help="outcome case")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--out", help="output path")

    p_sim = sub.add_parser("simulate", help="run a Monte Carlo study, write a summary CSV")
    common(p_sim)
    p_sim.add_argument("--reps", type=int, help="Monte Carlo replications (>= 2)")
    p_sim.add_argument("--bootstrap", type=int, help="bootstrap replicates per rep")
    p_sim.add_argument("--threads", type=int, help="worker processes")
    p_sim.add_argument("--integral", help="closed | quad:K")
    p_sim.add_argument("--estimator", choices=["bridge", "naive"],
                       help="full pipeline or the ignorability baseline")
    p_sim.set_defaults(func=cmd_simulate)

    p_gen = sub.add_parser("generate", help="write one simulated dataset as CSV")
    common(p_gen)
    p_gen.set_defaults(func=cmd_generate)

    p_est = sub.add_parser("estimate", help="estimate effects from a CSV dataset")
    p_est.add_argument("data", help="input CSV (columns z,s,y,a,w,c1..cp)")
    p_est.add_argument("--config", help="JSON config file")
    p_est.add_argument("--case", choices=["i", "ii", "iii", "iv"], help="outcome case")
    p_est.add_argument("--bootstrap", type=int, help="bootstrap replicates")
    p_est.add_argument("--seed", type=int, help="seed")
    p_est.add_argument("--integral", help="closed | quad:K")
    p_est.add_argument("--estimator", choices=["bridge", "naive"])
    p_est.add_argument("--out", help="output JSON path")
    p_est.set_defaults(func=cmd_estimate)

    p_orc = sub.add_parser("oracle", help="print ground-truth effects and bridge parameters")
    common(p_orc)
    p_orc.add_argument("--n-mc", dest="n_mc", type=int, default=1_000_000,
                       help="Monte Carlo draws for the truth")
    p_orc.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DataValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (EstimationError, StudyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    except _IoFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ProxistrataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION


if __name__ == "__main__":
    sys.exit(main())
