"""Command-line entry point: ``scorekf <command> [options]``.

Exit codes: 0 success, 2 configuration/usage error, 3 an ordering invariant
was violated beyond its confidence interval, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import warnings
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .crlb import RegimeWarning, crlb, goggin_stationary_J, kf_stationary_J, kf_suboptimality_gap
from .fisher_numeric import GridSpec, clt_rate_experiment
from .harness import ExperimentConfig, classify_regime, load_config_file, rate_fit_bias, rate_fit_mse_gap, run_experiment
from .noise_models import NoiseModel
from .regimes_report import DEFAULT_N, DEFAULT_RATIOS, build_regime_map, rows_as_dicts, summarize
from .state_space import SystemParams, simulate

EXIT_OK, EXIT_CONFIG, EXIT_VIOLATION, EXIT_NUMERIC = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


# ----------------------------------------------------------------------
# output helpers
# ----------------------------------------------------------------------
def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return ""
    return str(v)


def csv_text(header: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def config_digest(cfg: dict) -> str:
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canon.encode()).hexdigest()


class Outputs:
    """Writes command outputs plus a ``<command>.manifest.json`` next to them."""

    def __init__(self, out_dir: str, command: str, cfg: dict, seed: int | None):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.cfg = cfg
        self.seed = seed
        self.paths: list[str] = []
        self.started = datetime.now(timezone.utc).isoformat()

    def write(self, name: str, text: str) -> Path:
        path = self.dir / name
        path.write_text(text)
        self.paths.append(str(path))
        return path

    def manifest_name(self) -> str:
        return f"{self.command}.manifest.json"

    def finish(self) -> None:
        manifest = {
            "command": self.command,
            "config": self.cfg,
            "config_digest": config_digest(self.cfg),
            "master_seed": self.seed,
            "tool_version": __version__,
            "started": self.started,
            "finished": datetime.now(timezone.utc).isoformat(),
            "outputs": self.paths,
        }
        (self.dir / self.manifest_name()).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _int_list(text: str) -> list[int]:
    try:
        return [int(float(t)) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _noise_arg(text: str) -> dict:
    """'logistic', 'student_t:5' or a JSON object."""
    text = text.strip()
    if text.startswith("{"):
        return json.loads(text)
    if ":" in text:
        fam, dof = text.split(":", 1)
        return {"family": fam, "dof": int(dof)}
    return {"family": text}


def _model(spec) -> NoiseModel:
    try:
        return NoiseModel.from_config(_noise_arg(spec) if isinstance(spec, str) else spec)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad noise model {spec!r}: {exc}") from exc


def _file_cfg(args) -> dict:
    if not args.config:
        return {}
    try:
        return load_config_file(args.config)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read config {args.config}: {exc}") from exc


def _pick(args, cfg: dict, attr: str, key: str, default=None):
    val = getattr(args, attr, None)
    if val is not None:
        return val
    return cfg.get(key, default)


def _seed(args, cfg) -> int:
    return int(_pick(args, cfg, "seed", "seed", 0))


def _system(args, cfg) -> SystemParams:
    N = _pick(args, cfg, "n", "N")
    s = _pick(args, cfg, "s", "s_N")
    if N is None or s is None:
        raise ConfigError("both N (--n) and s_N (--s) are required")
    obs = _pick(args, cfg, "obs", "obs_noise", {"family": "gaussian"})
    sig = _pick(args, cfg, "signal", "signal_noise", {"family": "gaussian"})
    try:
        return SystemParams(int(N), float(s), _model(sig), _model(obs))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


# ----------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------
def cmd_simulate(args) -> int:
    cfg = _file_cfg(args)
    params = _system(args, cfg)
    horizon = _pick(args, cfg, "horizon", "horizon")
    if horizon is None or int(horizon) < 1:
        raise ConfigError("--horizon must be a positive integer")
    seed = _seed(args, cfg)
    x0 = float(_pick(args, cfg, "x0", "x0", 0.0))
    traj = simulate(params, int(horizon), x0=x0, rng_seed=seed)
    run_cfg = {"N": params.N, "s_N": params.s_N, "horizon": int(horizon), "x0": x0,
               "obs_noise": params.obs_noise.to_config(), "signal_noise": params.signal_noise.to_config()}
    out = Outputs(args.out, "simulate", run_cfg, seed)
    out.write("trajectory.csv", traj.to_csv())
    out.finish()
    return EXIT_OK


COMPARE_HEADER = ["filter", "N", "s_N", "regime", "mse", "mse_ci", "bias", "bias_ci", "crlb_lb",
                  "replications", "seed", "mse_oracle"]


def compare_verdict(res) -> dict:
    """Ordering checks on matched replications; a violation is a significant reversal."""
    names = set(res.sq_errors)
    regime = classify_regime(res.config.params)
    checks: dict[str, Any] = {}

    def significantly_greater(a, b):
        d, ci = res.paired(a, b)
        return d - ci > 0, d, ci

    violations = []
    if {"gf", "kf"} <= names:
        sq_gf, sq_kf = res.sq_errors["gf"], res.sq_errors["kf"]
        scale = max(float(abs(sq_kf).max()), 1e-300)
        checks["gf_equals_kf"] = bool(float(abs(sq_gf - sq_kf).max()) <= 1e-9 * scale)
        kf_worse, d, ci = significantly_greater("kf", "gf")
        checks["gf_beats_kf"] = bool(kf_worse)
        checks["kf_minus_gf"] = [d, ci]
        if regime.label.value == "Balanced" and significantly_greater("gf", "kf")[0]:
            violations.append("gf_worse_than_kf")
    trivial = [t for t in ("trivial_mean", "trivial_obs") if t in names]
    if "kf" in names and trivial:
        best = min(trivial, key=lambda t: res.get(t).mse)
        if significantly_greater("kf", best)[0]:
            violations.append(f"kf_worse_than_{best}")
    if "oracle" in names:
        for other in names - {"oracle"}:
            if significantly_greater("oracle", other)[0]:
                violations.append(f"oracle_worse_than_{other}")
    checks["regime"] = regime.label.value
    checks["violations"] = sorted(violations)
    checks["ok"] = not violations
    return checks


def cmd_compare(args) -> int:
    cfg = _file_cfg(args)
    params = _system(args, cfg)
    reps = int(_pick(args, cfg, "replications", "replications", 20))
    if reps < 2:
        raise ConfigError("replications must be at least 2 (the CI needs a spread)")
    filters = _pick(args, cfg, "filters", "filters", ["kf", "gf", "cgf", "trivial_mean", "trivial_obs"])
    if isinstance(filters, str):
        filters = [f for f in filters.split(",") if f]
    measured = _pick(args, cfg, "measured_steps", "measured_steps")
    horizon = _pick(args, cfg, "horizon", "horizon")
    burn = _pick(args, cfg, "burn_in", "burn_in")
    tau = _pick(args, cfg, "tau", "tau_override")
    try:
        kw = dict(
            replications=reps, filters=filters, seed=_seed(args, cfg),
            gain_mode=_pick(args, cfg, "gain_mode", "gain_mode", "recursive"),
            particles=int(_pick(args, cfg, "particles", "particles", 0)),
            tau_override=None if tau in (None, "auto") else int(tau),
        )
        if burn is not None:
            kw["burn_in"] = int(burn)
        if horizon is not None:
            kw["horizon"] = int(horizon)
        elif measured is None:
            measured = 20_000
        config = ExperimentConfig.build(
            params.N, params.s_N, params.obs_noise, params.signal_noise,
            measured_steps=None if horizon is not None else int(measured), **kw,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    res = run_experiment(config, threads=args.threads)
    regime = classify_regime(params).label.value
    oracle = res.get("oracle").mse if "oracle" in res.sq_errors else None
    rows = [
        [e.filter_mode, params.N, params.s_N, regime, e.mse, e.ci_half_width, e.bias,
         e.bias_ci_half_width, res.lower_bound, e.replications, config.seed, oracle]
        for e in res.estimates
    ]
    verdict = compare_verdict(res)
    out = Outputs(args.out, "compare", config.to_dict(), config.seed)
    out.write("compare.csv", csv_text(COMPARE_HEADER, rows))
    out.write("verdict.json", json.dumps(verdict, indent=2, sort_keys=True) + "\n")
    out.finish()
    return EXIT_OK if verdict["ok"] else EXIT_VIOLATION


def cmd_crlb(args) -> int:
    cfg = _file_cfg(args)
    Ns = args.n_list or ([_pick(args, cfg, "n", "N")] if _pick(args, cfg, "n", "N") is not None else None)
    ss = args.s_list or ([_pick(args, cfg, "s", "s_N")] if _pick(args, cfg, "s", "s_N") is not None else None)
    if not Ns or not ss:
        raise ConfigError("crlb needs --n/--s or --n-list/--s-list")
    obs = _model(_pick(args, cfg, "obs", "obs_noise", {"family": "gaussian"}))
    sig = _model(_pick(args, cfg, "signal", "signal_noise", {"family": "gaussian"}))
    tau_arg = str(_pick(args, cfg, "tau", "tau_override", "auto"))
    rows = []
    for N in Ns:
        for s in ss:
            try:
                p = SystemParams(int(N), float(s), sig, obs)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
            tau = None if tau_arg == "auto" else int(tau_arg)
            with warnings.catch_warnings():
                warnings.simplefilter("always", RegimeWarning)
                res = crlb(p, tau)
            gap = kf_suboptimality_gap(p)
            rows.append([p.N, p.s_N, res.tau, res.barJ_inf, res.lower_bound, res.unbatched_bound,
                         goggin_stationary_J(p), kf_stationary_J(p), gap.rel_gap])
    header = ["N", "s_N", "tau", "barJ_inf", "lower_bound", "unbatched_bound", "J_gf", "J_kf", "rel_gap"]
    out = Outputs(args.out, "crlb", {"N": Ns, "s_N": ss, "tau": tau_arg, "obs_noise": obs.to_config(),
                                     "signal_noise": sig.to_config()}, None)
    out.write("crlb.csv", csv_text(header, rows))
    out.finish()
    return EXIT_OK


def cmd_fisher_clt(args) -> int:
    cfg = _file_cfg(args)
    model = _model(_pick(args, cfg, "model", "model", {"family": "logistic"}))
    taus = args.taus or cfg.get("taus") or [4, 8, 16, 32, 64]
    N = int(_pick(args, cfg, "n", "N", 10**6))
    points = int(_pick(args, cfg, "points", "n_points", 2**14))
    try:
        reports, slope = clt_rate_experiment(model, N, taus, GridSpec(n_points=points))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    rows = [[r.tau, r.variance, r.fisher, r.delta, slope] for r in reports]
    out = Outputs(args.out, "fisher-clt", {"model": model.to_config(), "taus": list(taus), "N": N,
                                           "n_points": points}, None)
    out.write("fisher_clt.csv", csv_text(["tau", "variance", "fisher", "delta", "slope_fit"], rows))
    out.finish()
    return EXIT_OK


def cmd_regimes(args) -> int:
    cfg = _file_cfg(args)
    Ns = args.n_list or cfg.get("N_list") or list(DEFAULT_N)
    ratios = args.ratios or cfg.get("s_ratio_list") or list(DEFAULT_RATIOS)
    obs = _model(_pick(args, cfg, "obs", "obs_noise", {"family": "logistic"}))
    sig = _model(_pick(args, cfg, "signal", "signal_noise", {"family": "gaussian"}))
    cutoff = float(_pick(args, cfg, "cutoff", "cutoff", 10.0))
    rows = build_regime_map(Ns, ratios, obs, sig, cutoff)
    dicts = rows_as_dicts(rows)
    header = list(dicts[0])
    out = Outputs(args.out, "regimes", {"N_list": list(Ns), "s_ratio_list": list(ratios), "cutoff": cutoff,
                                        "obs_noise": obs.to_config(), "signal_noise": sig.to_config()}, None)
    out.write("regimes.csv", csv_text(header, [[d[k] for k in header] for d in dicts]))
    out.write("regimes_summary.json", json.dumps(summarize(rows), indent=2, sort_keys=True) + "\n")
    out.finish()
    return EXIT_OK


def cmd_rates(args) -> int:
    cfg = _file_cfg(args)
    obs = _model(_pick(args, cfg, "obs", "obs_noise", {"family": "logistic"}))
    sig = _model(_pick(args, cfg, "signal", "signal_noise", {"family": "gaussian"}))
    Ns = args.n_list or cfg.get("N_list") or [1000, 10000, 100000]
    rule = _pick(args, cfg, "s_rule", "s_rule", "sqrtN")
    reps = int(_pick(args, cfg, "replications", "replications", 20))
    steps = int(_pick(args, cfg, "measured_steps", "measured_steps", 100_000))
    per_n = _pick(args, cfg, "steps_per_N", "steps_per_N")
    per_n = None if per_n is None else float(per_n)
    kind = _pick(args, cfg, "kind", "kind", "bias")
    seed = _seed(args, cfg)
    try:
        if kind == "bias":
            fit = rate_fit_bias(obs, Ns, rule, reps, seed, args.mode or "gf", sig, steps, args.threads, per_n)
        elif kind == "mse_gap":
            fit = rate_fit_mse_gap(obs, Ns, rule, reps, seed, sig, steps, args.threads, per_n)
        else:
            raise ConfigError(f"unknown rate kind {kind!r}")
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    header = list(fit.points[0]) + ["slope", "inconclusive"]
    rows = [[p[k] for k in fit.points[0]] + [fit.slope, fit.inconclusive] for p in fit.points]
    out = Outputs(args.out, "rates", {"kind": kind, "N_list": list(Ns), "s_rule": rule, "replications": reps,
                                      "measured_steps": steps, "steps_per_N": per_n, "obs_noise": obs.to_config(),
                                      "signal_noise": sig.to_config()}, seed)
    out.write(f"rates_{kind}.csv", csv_text(header, rows))
    out.finish()
    return EXIT_OK


# ----------------------------------------------------------------------
# parser
# ----------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON or TOML config file")
    common.add_argument("--seed", type=int, help="master seed (u64)")
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker threads")
    common.add_argument("--out", default=".", help="output directory")

    system = argparse.ArgumentParser(add_help=False)
    system.add_argument("--n", type=int, help="N (gamma = 1 - 1/N)")
    system.add_argument("--s", type=float, help="observation noise scale s_N")
    system.add_argument("--obs", type=_noise_arg, help="observation noise, e.g. logistic or student_t:5")
    system.add_argument("--signal", type=_noise_arg, help="signal noise family")

    parser = argparse.ArgumentParser(prog="scorekf", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common, system], help="simulate one trajectory")
    p.add_argument("--horizon", type=int)
    p.add_argument("--x0", type=float)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare", parents=[common, system], help="Monte Carlo comparison of the filter bank")
    p.add_argument("--horizon", type=int, help="total steps per replication, burn-in included")
    p.add_argument("--measured-steps", dest="measured_steps", type=int, help="post-burn-in steps")
    p.add_argument("--burn-in", dest="burn_in", type=int)
    p.add_argument("--replications", type=int)
    p.add_argument("--filters", help="comma-separated filter modes")
    p.add_argument("--tau", help="batch size for naive_batch and the bound; 'auto' = round(s_N)")
    p.add_argument("--gain-mode", dest="gain_mode", choices=["recursive", "stationary"])
    p.add_argument("--particles", type=int, help="particle-filter oracle size (0 disables)")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("crlb", parents=[common, system], help="lower bounds and closed-form filter errors")
    p.add_argument("--tau", help="batch size or 'auto' (= round(s_N))")
    p.add_argument("--n-list", dest="n_list", type=_int_list)
    p.add_argument("--s-list", dest="s_list", type=_float_list)
    p.set_defaults(func=cmd_crlb)

    p = sub.add_parser("fisher-clt", parents=[common], help="standardized Fisher information of batched noise")
    p.add_argument("--model", type=_noise_arg)
    p.add_argument("--taus", type=_int_list)
    p.add_argument("--n", type=int)
    p.add_argument("--points", type=int)
    p.set_defaults(func=cmd_fisher_clt)

    p = sub.add_parser("regimes", parents=[common], help="closed-form regime map")
    p.add_argument("--n-list", dest="n_list", type=_int_list)
    p.add_argument("--ratios", type=_float_list, help="s_N / sqrt(N) grid")
    p.add_argument("--obs", type=_noise_arg)
    p.add_argument("--signal", type=_noise_arg)
    p.add_argument("--cutoff", type=float)
    p.set_defaults(func=cmd_regimes)

    p = sub.add_parser("rates", parents=[common], help="bias / MSE-gap rate fits across N")
    p.add_argument("--kind", choices=["bias", "mse_gap"])
    p.add_argument("--n-list", dest="n_list", type=_int_list)
    p.add_argument("--s-rule", dest="s_rule", help="sqrtN, nquarter or a number")
    p.add_argument("--replications", type=int)
    p.add_argument("--measured-steps", dest="measured_steps", type=int)
    p.add_argument("--steps-per-n", dest="steps_per_N", type=float, help="measured steps as a multiple of N")
    p.add_argument("--mode", choices=["kf", "gf", "cgf"])
    p.add_argument("--obs", type=_noise_arg)
    p.add_argument("--signal", type=_noise_arg)
    p.set_defaults(func=cmd_rates)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads is not None and args.threads < 1:
        parser.error("--threads must be positive")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"scorekf {args.command}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ArithmeticError as exc:
        print(f"scorekf {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"scorekf {args.command}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
