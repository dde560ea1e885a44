"""Batch front end: ``cpmcf {verify-lemmas,falsify,flow,geometry}``.

Each subcommand reads an optional JSON config (``--config``), merges it over
the command defaults, validates the result before any computation, writes the
resolved config to ``<out>/config.json`` and then its artifacts beside it.
Re-running with the echoed config reproduces the outputs.

Exit codes: 0 success, 2 verification failure (verify-lemmas, falsify),
3 inconclusive flow, 4 aborted flow, 64 configuration error.
"""
from __future__ import annotations

import argparse
import copy
import json
import math
import os
import sys
import time

import numpy as np

from . import flow, oracles, pinching, tolerances
from .ambient import Dimensions
from .errors import CPMCFError, ConfigError, ContractViolation, DegenerateImmersionError, UnsupportedDimensionError
from .flow import Classification, FlowConfig
from .immersion import (build_clifford_torus, build_geodesic_sphere, build_totally_geodesic, extract_geometry,
                        load_snapshot, perturb, random_unitary)

SCHEMA = "cpmcf-config/1"
COMMANDS = ("verify-lemmas", "falsify", "flow", "geometry")

EXIT_OK = 0
EXIT_FAILED = 2
EXIT_INCONCLUSIVE = 3
EXIT_ABORTED = 4
EXIT_CONFIG = 64

PRESETS = {
    "sphere": {"m": 2, "r": 0.6, "resolution": 24, "pole_margin": None, "rotation_seed": None},
    "totally_geodesic": {"kind": "CP_half_n", "n": 2, "q": 2, "resolution": 64, "rotation_seed": None},
    "clifford": {"m": 2, "resolution": 32, "rotation_seed": None},
    "snapshot": {"path": None},
}
PERTURB_DEFAULTS = {"amplitude": 0.0, "modes": 2, "seed": None}

# flow settings each preset needs to make sense out of the box
PRESET_FLOW = {
    "sphere": {},
    "totally_geodesic": {"waive_pinching": True, "max_steps": 50},
    "clifford": {"waive_pinching": True, "max_steps": 100},
    "snapshot": {},
}


def _base(command):
    return {"schema": SCHEMA, "command": command, "seed": 0, "threads": 1}


def default_config(command, preset="sphere"):
    """Fully populated default config for one subcommand."""
    cfg = _base(command)
    if command == "verify-lemmas":
        g = pinching.GridSpec()
        cfg.update({"phi_n": list(pinching.PHI_N), "psi_n": list(pinching.PSI_N), "eps": list(pinching.EPS_SET),
                    "grid": {"n_linear": g.n_linear, "x_linear": g.x_linear, "n_log": g.n_log, "x_max": g.x_max},
                    "tolerances": {"strict_rel": tolerances.DEFAULT.strict_rel,
                                   "equality_abs": tolerances.DEFAULT.equality_abs}})
    elif command == "falsify":
        s = oracles.SampleSpec()
        cfg.update({"dims": [list(d) for d in s.dims], "count": s.count, "scales": list(s.scales),
                    "inequalities": list(oracles.CATALOG), "pinched_only": s.pinched_only, "codazzi": s.codazzi,
                    "h_aligned": s.h_aligned, "eps": s.eps,
                    "tolerances": {"slack_leak": tolerances.DEFAULT.slack_leak,
                                   "confirm_abs": tolerances.DEFAULT.confirm_abs,
                                   "strict_rel": tolerances.DEFAULT.strict_rel}})
    elif command == "flow":
        fc = FlowConfig().to_dict()
        fc.pop("threads")
        fc.update(PRESET_FLOW[preset])
        cfg.update({"immersion": _immersion_defaults(preset), "flow": fc})
    elif command == "geometry":
        cfg.update({"immersion": _immersion_defaults(preset), "gradients": True, "eps": 0.0})
    else:
        raise ConfigError(f"unknown command {command!r}")
    return cfg


def _immersion_defaults(preset):
    if preset not in PRESETS:
        raise ConfigError(f"unknown immersion preset {preset!r}; choose from {sorted(PRESETS)}")
    d = {"preset": preset}
    d.update(copy.deepcopy(PRESETS[preset]))
    d["perturb"] = dict(PERTURB_DEFAULTS)
    return d


# ---------------------------------------------------------------------------
# config resolution and validation


def _merge(defaults, user, path=""):
    """Recursively overlay `user` on `defaults`, rejecting unknown keys and type changes."""
    out = {}
    for k in user:
        if k not in defaults:
            raise ConfigError(f"unknown config key {path + k!r}")
    for k, dv in defaults.items():
        if k not in user:
            out[k] = copy.deepcopy(dv)
            continue
        uv = user[k]
        if isinstance(dv, dict):
            if not isinstance(uv, dict):
                raise ConfigError(f"config key {path + k!r} must be an object")
            out[k] = _merge(dv, uv, path + k + ".")
        else:
            _check_type(path + k, dv, uv)
            out[k] = uv
    return out


def _check_type(key, dv, uv):
    if uv is None or dv is None:
        return
    if isinstance(dv, bool):
        ok = isinstance(uv, bool)
    elif isinstance(dv, (int, float)):
        ok = isinstance(uv, (int, float)) and not isinstance(uv, bool)
    elif isinstance(dv, str):
        ok = isinstance(uv, str)
    elif isinstance(dv, list):
        ok = isinstance(uv, list)
    else:
        ok = True
    if not ok:
        raise ConfigError(f"config key {key!r} has the wrong type ({type(uv).__name__})")


def resolve_config(command, user=None, seed=None, threads=None):
    """Defaults + user config + command-line overrides, validated."""
    user = dict(user or {})
    if "schema" in user and user["schema"] != SCHEMA:
        raise ConfigError(f"unsupported config schema {user['schema']!r}; expected {SCHEMA!r}")
    if user.get("command", command) != command:
        raise ConfigError(f"config is for {user['command']!r}, not {command!r}")
    preset = "sphere"
    if command in ("flow", "geometry"):
        imm = user.get("immersion") or {}
        if not isinstance(imm, dict):
            raise ConfigError("config key 'immersion' must be an object")
        preset = imm.get("preset", "sphere")
    cfg = _merge(default_config(command, preset), user)
    cfg["schema"], cfg["command"] = SCHEMA, command
    if seed is not None:
        cfg["seed"] = int(seed)
    if threads is not None:
        cfg["threads"] = int(threads)
    _validate(cfg)
    return cfg


def _int_list(cfg, key, lo):
    v = cfg[key]
    if not v or not all(isinstance(x, int) and not isinstance(x, bool) for x in v):
        raise ConfigError(f"{key!r} must be a nonempty list of integers")
    if min(v) < lo:
        raise ConfigError(f"{key!r} entries must be >= {lo}")


def _validate(cfg):
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError("seed must be a nonnegative integer")
    if not isinstance(cfg["threads"], int) or cfg["threads"] < 0:
        raise ConfigError("threads must be a nonnegative integer (0 = auto)")
    cmd = cfg["command"]
    if cmd == "verify-lemmas":
        _int_list(cfg, "phi_n", 3)
        try:
            _int_list(cfg, "psi_n", 6)
        except ConfigError as e:
            raise ConfigError(f"{e} (psi is defined for n >= 6)")
        if not cfg["eps"] or not all(isinstance(e, (int, float)) and 0 < e < 1 for e in cfg["eps"]):
            raise ConfigError("'eps' must be a nonempty list of numbers in (0, 1)")
        g = cfg["grid"]
        if g["n_linear"] < 2 or g["n_log"] < 1 or not 0 < g["x_linear"] < g["x_max"]:
            raise ConfigError("grid needs n_linear >= 2, n_log >= 1 and 0 < x_linear < x_max")
        for k, v in cfg["tolerances"].items():
            if not v >= 0:
                raise ConfigError(f"tolerance {k!r} must be nonnegative")
    elif cmd == "falsify":
        try:
            for d in cfg["dims"]:
                Dimensions(*d)
        except (TypeError, ContractViolation) as e:
            raise ConfigError(f"bad dims entry: {e}")
        if not isinstance(cfg["count"], int) or cfg["count"] < 1:
            raise ConfigError("count must be a positive integer")
        if not cfg["scales"] or not all(s > 0 for s in cfg["scales"]):
            raise ConfigError("scales must be a nonempty list of positive numbers")
        bad = [i for i in cfg["inequalities"] if i not in oracles.CATALOG]
        if bad or not cfg["inequalities"]:
            raise ConfigError(f"unknown inequalities {bad}; catalogue: {list(oracles.CATALOG)}")
        if not 0 <= cfg["eps"] < 1:
            raise ConfigError("eps must lie in [0, 1)")
    elif cmd in ("flow", "geometry"):
        _validate_immersion(cfg["immersion"])
        if cmd == "flow":
            try:
                fc = FlowConfig.from_dict(dict(cfg["flow"], threads=cfg["threads"]))
                fc.eta_for(_immersion_dims(cfg["immersion"]).n)
            except TypeError as e:
                raise ConfigError(str(e))
        elif not 0 <= cfg["eps"] < 1:
            raise ConfigError("eps must lie in [0, 1)")


def _resolution(v, ndim):
    if isinstance(v, int) and not isinstance(v, bool):
        v = [v] * ndim
    if not isinstance(v, list) or len(v) != ndim or not all(isinstance(x, int) and x >= 8 for x in v):
        raise ConfigError(f"resolution must be an integer >= 8 or a list of {ndim} such integers")
    return tuple(v)


def _immersion_dims(imm):
    p = imm["preset"]
    try:
        if p == "sphere":
            return Dimensions(2 * imm["m"] - 1, 1)
        if p == "totally_geodesic":
            return Dimensions(imm["n"], imm["q"])
        if p == "clifford":
            return Dimensions(imm["m"], imm["m"])
    except (TypeError, ContractViolation) as e:
        raise ConfigError(f"bad immersion dimensions: {e}")
    with open(imm["path"], "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
    return Dimensions(header["n"], header["q"])


def _validate_immersion(imm):
    p = imm["preset"]
    if p not in PRESETS:
        raise ConfigError(f"unknown immersion preset {p!r}")
    if p == "snapshot":
        if not imm["path"] or not os.path.isfile(imm["path"]):
            raise ConfigError(f"snapshot file not found: {imm['path']!r}")
    dims = _immersion_dims(imm)
    if p != "snapshot":
        _resolution(imm["resolution"], dims.n)
    if p == "sphere" and not 0 < imm["r"] < math.pi / 2:
        raise ConfigError("sphere radius must lie in (0, pi/2)")
    if p == "totally_geodesic":
        if imm["kind"] not in ("RP_n", "CP_half_n"):
            raise ConfigError("kind must be 'RP_n' or 'CP_half_n'")
        if imm["kind"] == "CP_half_n" and dims.n % 2:
            raise ConfigError("CP_half_n needs n even")
        if imm["kind"] == "RP_n" and dims.n > dims.m:
            raise ConfigError("RP_n needs n <= m")
    a = imm["perturb"]["amplitude"]
    if not 0 <= a <= 0.1 * math.pi / 2:
        raise ConfigError("perturb.amplitude must lie in [0, 0.1 * pi / 2]")


def build_immersion(imm, seed=0):
    """Construct the configured immersion; returns (immersion, center or None)."""
    p = imm["preset"]
    rot = None
    if p != "snapshot" and imm.get("rotation_seed") is not None:
        rot = random_unitary(_immersion_dims(imm).m + 1, imm["rotation_seed"])
    center = None
    if p == "sphere":
        im = build_geodesic_sphere(imm["m"], imm["r"], _resolution(imm["resolution"], 2 * imm["m"] - 1),
                                   rotation=rot, pole_margin=imm["pole_margin"])
        center = np.zeros(imm["m"] + 1, dtype=complex)
        center[0] = 1.0
        if rot is not None:
            center = rot @ center
    elif p == "totally_geodesic":
        dims = Dimensions(imm["n"], imm["q"])
        im = build_totally_geodesic(imm["kind"], dims, _resolution(imm["resolution"], dims.n), rotation=rot)
    elif p == "clifford":
        im = build_clifford_torus(imm["m"], _resolution(imm["resolution"], imm["m"]), rotation=rot)
    else:
        im, _ = load_snapshot(imm["path"])
    pt = imm["perturb"]
    if pt["amplitude"] > 0:
        im = perturb(im, pt["amplitude"], modes=pt["modes"], seed=seed if pt["seed"] is None else pt["seed"])
    return im, center


# ---------------------------------------------------------------------------
# commands


def _write(out, name, text):
    with open(os.path.join(out, name), "w", newline="") as fh:
        fh.write(text)


def _num(x):
    """JSON-safe number: NaN and infinities become null."""
    x = float(x)
    return x if math.isfinite(x) else None


def _echo(cfg, out):
    os.makedirs(out, exist_ok=True)
    _write(out, "config.json", json.dumps(cfg, indent=1, sort_keys=True) + "\n")


def cmd_verify_lemmas(cfg, out):
    prev = tolerances.set_tolerances(**cfg["tolerances"])
    try:
        g = cfg["grid"]
        grid = pinching.GridSpec(int(g["n_linear"]), float(g["x_linear"]), int(g["n_log"]), float(g["x_max"]))
        eps = tuple(float(e) for e in cfg["eps"])
        try:
            report = pinching.verify_appendix(tuple(cfg["phi_n"]), eps, grid, tuple(cfg["psi_n"]))
        except UnsupportedDimensionError as e:
            raise ConfigError(str(e))
        ok = pinching.appendix_verdict(report, eps)
    finally:
        tolerances.set_tolerances(**vars(prev))
    _write(out, "appendix.json", report.to_json() + "\n")
    _write(out, "appendix.csv", report.to_csv())
    fails = report.failures()
    print(f"verify-lemmas: {len(report.records)} records, {len(fails)} failing")
    for r in fails:
        print(f"  FAIL {r.inequality} n={r.n} eps={r.eps:g} min_slack={r.min_slack:.4g} at x={r.argmin_x:.4g}")
    print("largest passing eps per n:", {k: v for k, v in report.largest_passing_eps.items()})
    print("PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_FAILED


def cmd_falsify(cfg, out):
    prev = tolerances.set_tolerances(**cfg["tolerances"])
    try:
        spec = oracles.SampleSpec(dims=tuple(tuple(d) for d in cfg["dims"]), count=cfg["count"],
                                  scales=tuple(cfg["scales"]), seed=cfg["seed"], pinched_only=cfg["pinched_only"],
                                  codazzi=cfg["codazzi"], h_aligned=cfg["h_aligned"], eps=float(cfg["eps"]),
                                  threads=cfg["threads"])
        reports = oracles.falsify_catalog(spec, cfg["inequalities"])
    finally:
        tolerances.set_tolerances(**vars(prev))
    _write(out, "reports.json", json.dumps([r.to_dict() for r in reports], indent=1) + "\n")
    _write(out, "summary.csv", oracles.reports_to_csv(reports))
    cdir = os.path.join(out, "counterexamples")
    n_conf = 0
    for r in reports:
        for k, rec in enumerate(r.confirmed):
            os.makedirs(cdir, exist_ok=True)
            _write(cdir, f"{r.inequality}_n{r.n}_q{r.q}_{k}.json", json.dumps(rec, indent=1) + "\n")
            n_conf += 1
        print(f"{'PASS' if r.passed else 'FAIL'} {r.inequality} (n={r.n}, q={r.q}) samples={r.samples} "
              f"min_normalized_slack={r.min_normalized_slack:.3g} candidates={r.candidates} "
              f"confirmed={r.confirmed_count}")
    ok = all(r.passed for r in reports)
    print(f"confirmed counterexamples: {n_conf}")
    return EXIT_OK if ok else EXIT_FAILED


def cmd_flow(cfg, out):
    im, center = build_immersion(cfg["immersion"], cfg["seed"])
    fc = FlowConfig.from_dict(dict(cfg["flow"], threads=cfg["threads"]))
    t0 = time.perf_counter()
    res = flow.run(im, fc, out_dir=out, center=center)
    last = res.trajectory[-1] if res.trajectory else None
    summary = {"classification": res.classification.value, "steps": res.final_state.step,
               "t": res.final_state.t, "monitored": len(res.trajectory),
               "final_max_h2": None if last is None else _num(last.max_h2)}
    _write(out, "summary.json", json.dumps(summary, indent=1) + "\n")
    print(f"classification: {res.classification.value} after {res.final_state.step} steps, "
          f"t = {res.final_state.t:.6g} ({time.perf_counter() - t0:.1f} s)")
    return {Classification.INCONCLUSIVE: EXIT_INCONCLUSIVE,
            Classification.ABORTED: EXIT_ABORTED}.get(res.classification, EXIT_OK)


def geometry_rows(geom, dims, eps=0.0):
    """Per-node scalar fields (with the pinching margin) as CSV text."""
    fields = geom.scalar_fields()
    rep = pinching.classify_and_check(geom.inv.normh2, geom.inv.normH2, dims, eps)
    fields["pinching_margin"] = rep.margin
    names = list(fields)
    shape = geom.shape
    idx = np.indices(shape).reshape(len(shape), -1).T
    cols = [np.asarray(fields[k], dtype=float).reshape(-1) for k in names]
    lines = [",".join([f"i{a}" for a in range(len(shape))] + names)]
    for r in range(idx.shape[0]):
        lines.append(",".join([str(int(v)) for v in idx[r]] + [repr(float(c[r])) for c in cols]))
    return "\n".join(lines) + "\n", rep


def cmd_geometry(cfg, out):
    im, _ = build_immersion(cfg["immersion"], cfg["seed"])
    geom = extract_geometry(im, gradients=cfg["gradients"], threads=cfg["threads"])
    text, rep = geometry_rows(geom, im.dims, cfg["eps"])
    _write(out, "geometry.csv", text)
    summary = {"n": im.dims.n, "q": im.dims.q, "case": rep.case.tag.value, "verdict": rep.verdict.value,
               "min_margin": _num(rep.min_margin), "nodes": im.n_nodes}
    for k, v in geom.scalar_fields().items():
        summary[f"min_{k}"] = _num(np.min(v))
        summary[f"max_{k}"] = _num(np.max(v))
    _write(out, "summary.json", json.dumps(summary, indent=1) + "\n")
    print(f"geometry: {im.n_nodes} nodes, case {rep.case.tag.value}, pinching {rep.verdict.value}, "
          f"max|h|^2 = {summary['max_normh2']:.6g}, max|H|^2 = {summary['max_normH2']:.6g}")
    return EXIT_OK


HANDLERS = {"verify-lemmas": cmd_verify_lemmas, "falsify": cmd_falsify, "flow": cmd_flow, "geometry": cmd_geometry}


def build_parser():
    ap = argparse.ArgumentParser(prog="cpmcf", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for c in COMMANDS:
        p = sub.add_parser(c)
        p.add_argument("--config", help="JSON config file (merged over the defaults)")
        p.add_argument("--out", default=None, help="output directory (default: cpmcf-<command>)")
        p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        p.add_argument("--threads", type=int, default=None, help="worker threads, 0 = auto")
        p.add_argument("--print-defaults", action="store_true", help="print the default config and exit")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    out = args.out or f"cpmcf-{args.command}"
    try:
        user = {}
        if args.config:
            try:
                with open(args.config) as fh:
                    user = json.load(fh)
            except (OSError, json.JSONDecodeError) as e:
                raise ConfigError(f"cannot read config {args.config!r}: {e}")
            if not isinstance(user, dict):
                raise ConfigError("config must be a JSON object")
        if args.print_defaults:
            preset = (user.get("immersion") or {}).get("preset", "sphere")
            print(json.dumps(default_config(args.command, preset), indent=1, sort_keys=True))
            return EXIT_OK
        cfg = resolve_config(args.command, user, seed=args.seed, threads=args.threads)
        _echo(cfg, out)
        return HANDLERS[args.command](cfg, out)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ContractViolation, DegenerateImmersionError) as e:
        print(f"input error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except CPMCFError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ABORTED


if __name__ == "__main__":
    sys.exit(main())
