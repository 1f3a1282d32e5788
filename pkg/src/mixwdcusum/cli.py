"""Command-line front end.

Subcommands: gen, detect, kl, mtfa, wadd, calibrate, curve, plus replay,
which re-runs a manifest. Options can come from a sectioned ``key = value``
config file (``--config``); explicit flags override it.

Exit codes: 0 success (for ``detect``: alarm raised), 1 ``detect`` reached
the end of input without an alarm, 2 usage error, 3 configuration error,
4 calibration failure, 5 censoring budget exceeded, 6 I/O error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import logging
import math
import sys
import time
from pathlib import Path

from . import __version__
from .detector import DetectorParams, default_params, init_state, step
from .distributions import ConfigurationError, DensityPair, Gaussian
from .experiments import (CalibrationError, CensoringError, CurveRow, CurveSetup, McEstimate,
                          calibrate_threshold, check_censoring, curve, estimate_mtfa, estimate_wadd)
from .mixture import estimate_kl
from .model import (NetworkConfig, PhaseSchedule, TrialRng, gen_stream, make_policy,
                    read_stream_csv, write_stream_csv)

EXIT_OK = 0
EXIT_NO_ALARM = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_CALIBRATION = 4
EXIT_CENSORED = 5
EXIT_IO = 6

log = logging.getLogger("mixwdcusum")

DEFAULTS = {
    "pre_mean": 0.0, "pre_variance": 1.0, "post_mean": 1.0, "post_variance": 1.0,
    "nu1": 1, "policy": "uniform", "workers": 1, "tolerance": 0.05,
    "mtfa_trials": 2500, "wadd_trials": 2000, "kl_trials": 100_000,
}

# config-file section/key -> resolved parameter name
CONFIG_KEYS = {
    ("pair", "pre_mean"): "pre_mean", ("pair", "pre_variance"): "pre_variance",
    ("pair", "post_mean"): "post_mean", ("pair", "post_variance"): "post_variance",
    ("network", "l"): "L", ("network", "m"): "m", ("network", "n"): "n",
    ("detector", "m"): "det_m", ("detector", "n"): "det_n", ("detector", "rho"): "rho",
    ("detector", "threshold"): "threshold", ("detector", "gamma"): "gamma",
    ("schedule", "d"): "d", ("schedule", "nu1"): "nu1", ("schedule", "steps"): "steps",
    ("grid", "gamma"): "gamma_grid", ("grid", "log_gamma"): "log_gamma_grid",
    ("grid", "calibrate"): "calibrate",
    ("run", "seed"): "seed", ("run", "trials"): "trials", ("run", "mtfa_trials"): "mtfa_trials",
    ("run", "wadd_trials"): "wadd_trials", ("run", "kl_trials"): "kl_trials",
    ("run", "policy"): "policy", ("run", "tolerance"): "tolerance", ("run", "workers"): "workers",
    ("run", "horizon"): "horizon", ("run", "mtfa_horizon"): "mtfa_horizon",
    ("run", "wadd_horizon"): "wadd_horizon", ("run", "target"): "target",
}

INT_KEYS = {"L", "m", "n", "det_m", "det_n", "nu1", "steps", "seed", "trials", "mtfa_trials",
            "wadd_trials", "kl_trials", "workers", "horizon", "mtfa_horizon", "wadd_horizon",
            "trial", "phase"}
FLOAT_KEYS = {"pre_mean", "pre_variance", "post_mean", "post_variance", "threshold", "gamma",
              "tolerance", "target"}


def _int_list(text) -> list[int]:
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    text = str(text).strip()
    return [int(v) for v in text.replace(";", ",").split(",") if v.strip()] if text else []


def _float_list(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    return [float(v) for v in str(text).replace(";", ",").split(",") if v.strip()]


def _coerce(key, value):
    if value is None:
        return None
    if key in INT_KEYS:
        return int(value)
    if key in FLOAT_KEYS:
        return float(value)
    if key == "d":
        return _int_list(value)
    if key in ("rho", "gamma_grid", "log_gamma_grid"):
        return _float_list(value)
    if key == "calibrate":
        if isinstance(value, bool):
            return value
        return str(value).strip().lower() in ("1", "true", "yes", "on")
    return value


def load_config(path) -> dict:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except FileNotFoundError:
        raise
    except configparser.Error as exc:
        raise ConfigurationError(f"{path}: {exc}") from exc
    out = {}
    for section in cp.sections():
        for key, value in cp.items(section):
            name = CONFIG_KEYS.get((section.lower(), key.lower()))
            if name is None:
                raise ConfigurationError(f"{path}: unknown key [{section}] {key}")
            try:
                out[name] = _coerce(name, value)
            except ValueError as exc:
                raise ConfigurationError(f"{path}: bad value for [{section}] {key}: {value!r}") from exc
    if "seed" not in out:
        raise ConfigurationError(f"{path}: [run] seed is required")
    return out


# -- resolution helpers -----------------------------------------------------


def _need(p, key):
    if p.get(key) is None:
        raise ConfigurationError(f"missing required option --{key.replace('_', '-')}")
    return p[key]


def _pair(p) -> DensityPair:
    return DensityPair(Gaussian(p["pre_mean"], p["pre_variance"]),
                       Gaussian(p["post_mean"], p["post_variance"]))


def _config(p) -> NetworkConfig:
    return NetworkConfig(_need(p, "L"), _need(p, "m"), _need(p, "n"))


def _detector_config(p) -> NetworkConfig:
    cfg = _config(p)
    if p.get("det_m") is None and p.get("det_n") is None:
        return cfg
    return NetworkConfig(cfg.L, p.get("det_m") or cfg.m, p.get("det_n") or cfg.n)


def _durations(p, cfg) -> tuple[int, ...]:
    d = p.get("d")
    if d is None:
        d = [0] * cfg.n_transient
    if len(d) != cfg.n_transient:
        raise ConfigurationError(f"--d needs {cfg.n_transient} durations, got {len(d)}")
    return tuple(d)


def _params(p, cfg) -> DetectorParams:
    if p.get("threshold") is not None:
        b = p["threshold"]
        if p.get("rho") is not None:
            rho = tuple(p["rho"])
        elif cfg.n_transient:
            if not b > 1:
                raise ConfigurationError("with --threshold <= 1 give --rho explicitly")
            rho = (1.0 / b,) * cfg.n_transient
        else:
            rho = ()
        params = DetectorParams(rho, b)
    elif p.get("gamma") is not None:
        params = default_params(p["gamma"], cfg)
        if p.get("rho") is not None:
            params = DetectorParams(tuple(p["rho"]), params.b)
    else:
        raise ConfigurationError("give --gamma or --threshold")
    params.check(cfg)
    return params


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _row(p, cfg, dc, *, gamma=None, b=None, calibrated=False, mtfa: McEstimate | None = None,
         wadd: McEstimate | None = None, theory=None, d=(), policy="") -> list[str]:
    ref = wadd or mtfa
    censored = sum(e.censored_count for e in (mtfa, wadd) if e is not None)
    return [
        _fmt(gamma), _fmt(b), str(int(calibrated)),
        _fmt(mtfa.mean if mtfa else None), _fmt(mtfa.stderr if mtfa else None),
        _fmt(wadd.mean if wadd else None), _fmt(wadd.stderr if wadd else None), _fmt(theory),
        _fmt(ref.trials), str(censored), _fmt(ref.horizon), _fmt(ref.seed),
        str(cfg.L), str(cfg.m), str(cfg.n), ";".join(str(x) for x in d), policy,
        str(dc.m), str(dc.n),
    ]


def _write_csv(out, header, rows):
    w = csv.writer(out, lineterminator="\n")
    w.writerow(header.split(",") if isinstance(header, str) else header)
    w.writerows(rows)


# -- subcommands ------------------------------------------------------------


def run_gen(p, out, inp=None) -> int:
    pair, cfg = _pair(p), _config(p)
    d = _durations(p, cfg)
    nu1 = p.get("nu1")
    schedule = PhaseSchedule(None if nu1 in (None, 0) else nu1, d)
    policy = make_policy(p["policy"], cfg, schedule)
    rng = TrialRng.from_seed(_need(p, "seed"), p.get("trial") or 0)
    stream = gen_stream(pair, cfg, schedule, policy, rng)
    write_stream_csv((next(stream) for _ in range(_need(p, "steps"))), cfg.L, out)
    return EXIT_OK


def run_detect(p, out, inp=None) -> int:
    pair, cfg = _pair(p), _detector_config(p)
    params = _params(p, cfg)
    horizon = p.get("horizon")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["k", "W"] + [f"omega_{i}" for i in range(1, cfg.n_phases + 1)] + ["alarm"])
    state = init_state(cfg)
    for _, values in read_stream_csv(inp):
        state = step(state, params, pair, cfg, values)
        alarm = state.W >= params.b
        w.writerow([str(state.k), repr(state.W)] + [repr(float(v)) for v in state.omega[1:]] + [str(int(alarm))])
        if alarm:
            return EXIT_OK
        if horizon and state.k >= horizon:
            break
    return EXIT_NO_ALARM


def run_kl(p, out, inp=None) -> int:
    pair, cfg = _pair(p), _config(p)
    trials = p.get("trials") or p["kl_trials"]
    phases = [p["phase"]] if p.get("phase") else range(1, cfg.n_phases + 1)
    rows = []
    for i in phases:
        e = estimate_kl(pair, cfg, i, trials, _need(p, "seed"))
        rows.append([str(e.phase), str(e.size), repr(e.estimate), repr(e.stderr), str(e.trials), str(e.seed)])
    _write_csv(out, "phase,size,estimate_nats,stderr,trials,seed", rows)
    return EXIT_OK


def run_mtfa(p, out, inp=None) -> int:
    pair, cfg = _pair(p), _config(p)
    dc = _detector_config(p)
    params = _params(p, dc)
    trials = p.get("trials") or p["mtfa_trials"]
    gamma = p.get("gamma")
    horizon = p.get("horizon") or int(math.ceil(5000 * (gamma or math.exp(params.b))))
    est = estimate_mtfa(params, pair, dc, trials, horizon, _need(p, "seed"), workers=p["workers"])
    _write_csv(out, CurveRow.CSV_HEADER, [_row(p, cfg, dc, gamma=gamma, b=params.b, mtfa=est)])
    check_censoring(est, "MTFA")
    return EXIT_OK


def run_wadd(p, out, inp=None) -> int:
    pair, cfg = _pair(p), _config(p)
    dc = _detector_config(p)
    params = _params(p, dc)
    d = _durations(p, cfg)
    trials = p.get("trials") or p["wadd_trials"]
    horizon = p.get("horizon") or 100_000
    est = estimate_wadd(params, pair, cfg, PhaseSchedule(1, d), p["policy"], trials, horizon,
                        _need(p, "seed"), detector_config=dc, workers=p["workers"])
    _write_csv(out, CurveRow.CSV_HEADER,
               [_row(p, cfg, dc, gamma=p.get("gamma"), b=params.b, wadd=est, d=d, policy=p["policy"])])
    check_censoring(est, "WADD")
    return EXIT_OK


def run_calibrate(p, out, inp=None) -> int:
    pair, cfg = _pair(p), _config(p)
    dc = _detector_config(p)
    target = p.get("target") or p.get("gamma")
    if target is None:
        raise ConfigurationError("give --target")
    trials = p.get("trials") or p["mtfa_trials"]
    cal = calibrate_threshold(target, pair, dc, trials, p["tolerance"], _need(p, "seed"),
                              workers=p["workers"], horizon=p.get("horizon"))
    _write_csv(out, CurveRow.CSV_HEADER,
               [_row(p, cfg, dc, gamma=target, b=cal.b, calibrated=True, mtfa=cal.estimate)])
    return EXIT_OK


def _gamma_grid(p) -> list[float]:
    if p.get("gamma_grid"):
        return list(p["gamma_grid"])
    if p.get("log_gamma_grid"):
        return [math.exp(v) for v in p["log_gamma_grid"]]
    raise ConfigurationError("curve needs [grid] gamma or log_gamma")


def run_curve(p, out, inp=None) -> int:
    pair, cfg = _pair(p), _config(p)
    dc = _detector_config(p)
    d = _durations(p, cfg)
    trials = p.get("trials")
    setup = CurveSetup(
        pair, cfg, d, detector_config=dc, policy=p["policy"],
        mtfa_trials=trials or p["mtfa_trials"], wadd_trials=trials or p["wadd_trials"],
        kl_trials=p["kl_trials"], tolerance_rel=p["tolerance"],
        mtfa_horizon=p.get("mtfa_horizon"), wadd_horizon=p.get("wadd_horizon"), workers=p["workers"],
    )
    rows = curve(_gamma_grid(p), setup, bool(p.get("calibrate")), _need(p, "seed"))
    _write_csv(out, CurveRow.CSV_HEADER, [r.csv_fields() for r in rows])
    return EXIT_OK


COMMANDS = {
    "gen": run_gen, "detect": run_detect, "kl": run_kl, "mtfa": run_mtfa,
    "wadd": run_wadd, "calibrate": run_calibrate, "curve": run_curve,
}


# -- argument parsing -------------------------------------------------------


def _add_common(sp, network=True):
    sp.add_argument("--config", help="sectioned key = value config file")
    sp.add_argument("--output", "-o", help="output CSV path (default stdout)")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--pre-mean", type=float)
    sp.add_argument("--pre-variance", type=float)
    sp.add_argument("--post-mean", type=float)
    sp.add_argument("--post-variance", type=float)
    if network:
        sp.add_argument("--L", type=int, dest="L")
        sp.add_argument("--m", type=int)
        sp.add_argument("--n", type=int)


def _add_detector(sp):
    sp.add_argument("--gamma", type=float, help="target MTFA; sets b = log(gamma), rho = 1/b")
    sp.add_argument("--threshold", type=float, help="threshold b (rho = 1/b unless --rho)")
    sp.add_argument("--rho", help="comma-separated rho_1..rho_{n-m}")
    sp.add_argument("--det-m", type=int, help="initial size assumed by the detector")
    sp.add_argument("--det-n", type=int, help="final size assumed by the detector")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mixwdcusum", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("gen", help="dump a labelled observation stream")
    _add_common(sp)
    sp.add_argument("--d", help="transient durations, comma-separated")
    sp.add_argument("--nu1", type=int, help="first changepoint; 0 means never")
    sp.add_argument("--steps", type=int)
    sp.add_argument("--trial", type=int, help="trial index under the master seed")
    sp.add_argument("--policy", choices=["prefix", "uniform", "rotating"])

    sp = sub.add_parser("detect", help="run the detector over a stream CSV")
    _add_common(sp)
    _add_detector(sp)
    sp.add_argument("--input", "-i", help="stream CSV (default stdin)")
    sp.add_argument("--horizon", type=int)

    sp = sub.add_parser("kl", help="Monte Carlo KL numbers per phase")
    _add_common(sp)
    sp.add_argument("--trials", type=int)
    sp.add_argument("--phase", type=int)

    for name, text in (("mtfa", "estimate mean time to false alarm"),
                       ("wadd", "estimate worst-path delay at nu1 = 1")):
        sp = sub.add_parser(name, help=text)
        _add_common(sp)
        _add_detector(sp)
        sp.add_argument("--trials", type=int)
        sp.add_argument("--horizon", type=int)
        sp.add_argument("--workers", type=int)
        if name == "wadd":
            sp.add_argument("--d")
            sp.add_argument("--policy", choices=["prefix", "uniform", "rotating"])

    sp = sub.add_parser("calibrate", help="find b with MTFA matching a target")
    _add_common(sp)
    sp.add_argument("--det-m", type=int)
    sp.add_argument("--det-n", type=int)
    sp.add_argument("--target", type=float)
    sp.add_argument("--trials", type=int)
    sp.add_argument("--tolerance", type=float)
    sp.add_argument("--horizon", type=int)
    sp.add_argument("--workers", type=int)

    sp = sub.add_parser("curve", help="WADD vs MTFA tradeoff over a gamma grid")
    _add_common(sp)
    sp.add_argument("--det-m", type=int)
    sp.add_argument("--det-n", type=int)
    sp.add_argument("--d")
    sp.add_argument("--trials", type=int, help="overrides both MTFA and WADD trial counts")
    sp.add_argument("--kl-trials", type=int)
    sp.add_argument("--policy", choices=["prefix", "uniform", "rotating"])
    sp.add_argument("--calibrate", action="store_true", default=None)
    sp.add_argument("--workers", type=int)

    sp = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    sp.add_argument("manifest")
    sp.add_argument("--output", "-o", help="write here instead of the recorded path")
    return ap


NON_PARAM_ARGS = {"command", "config", "output", "input", "verbose", "manifest"}


def resolve(args: argparse.Namespace) -> dict:
    p = dict(DEFAULTS)
    if getattr(args, "config", None):
        p.update(load_config(args.config))
    for key, value in vars(args).items():
        if key in NON_PARAM_ARGS or value is None:
            continue
        try:
            p[key] = _coerce(key, value)
        except ValueError as exc:
            raise ConfigurationError(f"bad value for --{key}: {value!r}") from exc
    return p


def manifest_path(output: str) -> Path:
    return Path(str(output) + ".manifest.json")


def _execute(command, params, output, input_path=None) -> int:
    fn = COMMANDS[command]
    buf = io.StringIO()
    started = time.perf_counter()
    inp = None
    try:
        if command == "detect":
            inp = open(input_path) if input_path else sys.stdin
        status = fn(params, buf, inp)
    finally:
        if inp is not None and inp is not sys.stdin:
            inp.close()
        text = buf.getvalue()
        if output:
            Path(output).write_text(text)
        else:
            sys.stdout.write(text)
    if output:
        manifest = {
            "subcommand": command,
            "params": params,
            "seed": params.get("seed"),
            "version": __version__,
            "input": str(input_path) if input_path else None,
            "outputs": [str(output)],
            "wall_clock_seconds": round(time.perf_counter() - started, 3),
        }
        manifest_path(output).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return status


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "replay":
            with open(args.manifest) as fh:
                m = json.load(fh)
            output = args.output or m["outputs"][0]
            return _execute(m["subcommand"], m["params"], output, m.get("input"))
        params = resolve(args)
        return _execute(args.command, params, args.output, getattr(args, "input", None))
    except (ConfigurationError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CalibrationError as exc:
        print(f"calibration failed: {exc}", file=sys.stderr)
        return EXIT_CALIBRATION
    except CensoringError as exc:
        print(f"censoring budget exceeded: {exc}", file=sys.stderr)
        return EXIT_CENSORED
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
