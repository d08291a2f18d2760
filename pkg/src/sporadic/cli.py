"""Command line front end: ``design``, ``verify``, ``simulate`` and ``sweep``.

Exit codes: 0 success, 2 infeasible design or failed verification,
3 invalid input, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .analysis import verify_certificate
from .codesign import CodesignOptions, design
from .hybridsim import TransmissionPolicy, decay_estimate, empirical_l2_ratio, simulate, sweep_T2
from .lmi import Certificate
from .model import (
    ControllerParams,
    DimensionError,
    HolderParams,
    PlantModel,
    assemble_closed_loop,
    eta_from_yhat,
    zoh_holder,
)
from .reference import load_json

EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_INVALID = 3
EXIT_NUMERICAL = 4

log = logging.getLogger("sporadic")

OPTION_KEYS = (
    "T1", "r", "delta_bar", "bisection_tol", "cc_max_iter", "cc_trace_tol", "cc_stall_tol", "cc_init",
    "cc_projection_factor", "cc_projection_min_iter", "eps_strict", "verify_slack",
    "pole_decay", "pole_speed", "pole_damping",
)


class ConfigError(ValueError):
    pass


def _read_json(path: str) -> dict:
    if path.startswith("builtin:"):
        try:
            return load_json(path.split(":", 1)[1] + ".json")
        except FileNotFoundError:
            raise ConfigError(f"{path}: no such bundled file") from None
    try:
        with open(path) as f:
            data = json.load(f)
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return data


def _require(cfg: dict, key: str, where: str = "config"):
    if key not in cfg:
        raise ConfigError(f"{where}: missing field '{key}'")
    return cfg[key]


def _number(cfg: dict, key: str, where: str = "config") -> float:
    v = _require(cfg, key, where)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}: field '{key}' must be a number")
    return float(v)


def _plant(cfg: dict) -> PlantModel:
    try:
        return PlantModel.from_json_dict(_require(cfg, "plant"))
    except (DimensionError, ValueError, TypeError) as exc:
        raise ConfigError(f"plant: {exc}") from None


def options_from_config(cfg: dict, T2: float | None = None) -> CodesignOptions:
    kw = {k: cfg[k] for k in OPTION_KEYS if k in cfg}
    unknown = set(cfg) - set(OPTION_KEYS) - {"plant", "T2", "gamma", "T2_grid", "comment"}
    if unknown:
        raise ConfigError(f"config: unknown field(s) {', '.join(sorted(unknown))}")
    try:
        return CodesignOptions(gamma=_number(cfg, "gamma"), T2=_number(cfg, "T2") if T2 is None else T2, **kw)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"config: {exc}") from None


def _write(text: str, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


# ---------------------------------------------------------------------------


def cmd_design(args) -> int:
    cfg = _read_json(args.config)
    plant = _plant(cfg)
    options = options_from_config(cfg)

    def progress(rec):
        if rec.phase != "cc":
            log.info("%s delta=%.6g %s %s", rec.phase, rec.delta, rec.status, rec.note)

    res = design(plant, options, progress=progress)
    if not res:
        out = {"feasible": False, "reason": res.reason, "log": [r.to_dict() for r in res.log]}
        _write(json.dumps(out, indent=2) + "\n", args.out)
        log.error("%s", res.reason)
        return EXIT_NUMERICAL if res.numerical else EXIT_INFEASIBLE
    out = {"feasible": True, "T1": options.T1, "T2": options.T2, "gamma": options.gamma,
           "verify_slack": options.verify_slack}
    out.update(res.to_json_dict())
    _write(json.dumps(out, indent=2) + "\n", args.out)
    log.info("design found at delta=%.6g, trace(F F_i)=%.10g", res.delta, res.trace)
    return EXIT_OK


def load_design(path: str):
    data = _read_json(path)
    try:
        plant = PlantModel.from_json_dict(_require(data, "plant", path))
        ctrl = ControllerParams.from_json_dict(_require(data, "controller", path))
        hold = HolderParams.from_json_dict(_require(data, "holder", path))
        cert = Certificate.from_json_dict(_require(data, "certificate", path))
    except (DimensionError, ValueError, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path}: {exc}") from None
    return data, plant, ctrl, hold, cert


def cmd_verify(args) -> int:
    data, plant, ctrl, hold, cert = load_design(args.config)
    cl = assemble_closed_loop(plant, ctrl, hold)
    slack = args.slack if args.slack is not None else float(data.get("verify_slack", 0.0))
    report = verify_certificate(cert, cl, slack=slack)
    _write(report.to_json() + "\n", args.out)
    return EXIT_OK if report.passed else EXIT_INFEASIBLE


def _disturbance(spec: dict | None, n_d: int):
    if not spec or spec.get("kind", "none") == "none":
        return None
    kind = spec["kind"]
    amp = np.asarray(spec.get("amplitude", 1.0), dtype=float) * np.ones(n_d)
    if kind == "pulse":
        t0, t1 = float(spec.get("start", 0.0)), float(spec.get("stop", 1.0))
        return lambda t: amp if t0 <= t < t1 else 0 * amp
    if kind == "decaying-sine":
        w, rate = float(spec.get("freq", 1.0)), float(spec.get("rate", 0.5))
        return lambda t: amp * math.sin(w * t) * math.exp(-rate * t)
    raise ConfigError(f"scenario: unknown disturbance kind '{kind}'")


DEFAULT_SCENARIO = {"x_p0": [0.8, 0.1, -0.52], "t_end": 50.0, "dt": 0.01}


def cmd_simulate(args) -> int:
    data, plant, ctrl, hold, cert = load_design(args.config)
    scen = dict(DEFAULT_SCENARIO)
    if args.scenario:
        scen.update(_read_json(args.scenario))
    if args.zoh:
        hold = zoh_holder(plant, ctrl)
    cl = assemble_closed_loop(plant, ctrl, hold)
    T2 = float(data.get("T2") or cert.T2)
    T1 = float(scen.get("T1", data.get("T1") or 0.1 * T2))
    try:
        xp0 = np.asarray(_require(scen, "x_p0", "scenario"), dtype=float)
        xc0 = np.asarray(scen.get("x_c0", np.zeros(ctrl.n_c)), dtype=float)
        yhat0 = np.asarray(scen.get("yhat0", np.zeros(plant.n_y)), dtype=float)
        if xp0.shape != (plant.n_p,) or xc0.shape != (ctrl.n_c,) or yhat0.shape != (plant.n_y,):
            raise ConfigError("scenario: initial state has wrong dimensions")
        tau0 = float(scen.get("tau0", T2))
        t_end = float(scen["t_end"])
        kind = args.policy or scen.get("policy", "sinusoidal")
        kind = {"random": "random", "uniform-random": "random"}.get(kind, kind)
        seed = args.seed if args.seed is not None else scen.get("seed", 0)
        policy = TransmissionPolicy(kind, T1, T2, value=scen.get("interval"), seed=seed)
        d = _disturbance(scen.get("disturbance"), plant.n_d)
        arc = simulate(cl, (np.concatenate([xp0, xc0]), eta_from_yhat(xp0, yhat0, plant), tau0), policy,
                       t_end, d=d, dt=float(scen.get("dt", 0.01)))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"scenario: {exc}") from None
    summary = arc.summary()
    dist = arc.distance
    summary["diverging"] = bool(dist.max() > 10 * dist[0]) if dist[0] > 0 else False
    if dist[0] > 0:
        summary["kappa_hat"], summary["lambda_hat"] = decay_estimate(arc)
    summary["l2"] = empirical_l2_ratio(arc, cert.gamma, alpha=math.sqrt(cert.chi2) if cert.chi2 > 0 else 0.0)
    summary["zoh"] = bool(args.zoh)
    summary["policy"] = kind
    if args.out and args.out != "-":
        arc.to_csv(args.out)
        Path(args.out).with_suffix(".json").write_text(json.dumps(summary, indent=2) + "\n")
    else:
        arc.to_csv(sys.stdout)
        sys.stderr.write(json.dumps(summary, indent=2) + "\n")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _read_json(args.config)
    plant = _plant(cfg)
    grid = _require(cfg, "T2_grid")
    if not isinstance(grid, list) or not grid:
        raise ConfigError("config: 'T2_grid' must be a non-empty list")
    options = options_from_config(cfg, T2=float(grid[0]))
    rows = sweep_T2(plant, options.gamma, grid, options, workers=args.workers)
    cols = ["T2", "feasible", "norm_E", "norm_H", "max_re_spec_H", "delta"]

    def fmt(v):
        return str(v).lower() if isinstance(v, bool) else f"{v:.17g}"

    lines = []
    w = csv.writer(_Lines(lines), lineterminator="\n")
    w.writerow(cols)
    for row in rows:
        w.writerow([fmt(row[c]) for c in cols])
    _write("".join(lines), args.out)
    return EXIT_OK if any(r["feasible"] for r in rows) else EXIT_INFEASIBLE


class _Lines:
    def __init__(self, buf):
        self.buf = buf

    def write(self, s):
        self.buf.append(s)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sporadic", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("design", help="run the co-design algorithm")
    p.add_argument("--config", required=True, help="JSON config (or builtin:unicycle)")
    p.add_argument("--out", help="output JSON path (default stdout)")
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("verify", help="check a design's certificate")
    p.add_argument("--config", required=True, help="design JSON (or builtin:reference_design)")
    p.add_argument("--out")
    p.add_argument("--slack", type=float, help="scale-relative slack (default: from the design file)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("simulate", help="simulate a design")
    p.add_argument("--config", required=True, help="design JSON")
    p.add_argument("--scenario", help="scenario JSON")
    p.add_argument("--out", help="CSV path; the summary goes next to it as .json")
    p.add_argument("--zoh", action="store_true", help="replace the holder by a zero-order hold")
    p.add_argument("--policy", choices=["constant", "random", "sinusoidal"])
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="design over a grid of T2 values")
    p.add_argument("--config", required=True, help="design config with a 'T2_grid' list")
    p.add_argument("--out")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
