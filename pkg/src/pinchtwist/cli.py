"""Batch front end: JSON experiment configs in, JSON reports and CSV tables out.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 a simple-spectrum prediction contradicted by the measured spectrum.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import MISSING
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .cocycle import (
    bunching_constant,
    check_fiber_bunched,
    spectrum_ensemble,
    spectrum_gap_report,
)
from .criterion import CriterionConfig, criterion_verdict, cross_validate
from .errors import ConfigError, NumericalFailure, PinchTwistError
from .shift import (
    PeriodicWord,
    locally_constant_cocycle,
    make_homoclinic,
    shift_from_dict,
    simplicity_check_shift,
)
from .smooth import (
    check_clearance,
    derivative_cocycle,
    homoclinic_linear,
    map_from_dict,
    near_identity_cocycle,
    newton_refine_periodic,
    restricted_cocycle,
    spectral_projector,
    wrap,
)
from .verdict import SCHEMA_VERSION, _jsonable, config_hash

log = logging.getLogger("pinchtwist")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_INCONSISTENT = 0, 2, 3, 4
THREADS_ENV = "PINCHTWIST_THREADS"
SWEEP_SUCCESS_FRACTION = 0.9

PARAMS = {
    "spectrum": {"N": 100_000, "k": 1, "orbits": 1, "x0": None, "gap_tol": 1e-3},
    "bunching": {"chi": None, "N": 20, "samples": 100},
    "shift-check": {"P": [0], "insertion": "1", "rel_gap": 1e-4, "minor_tol": 1e-6,
                    "N": 50, "cross_validate": None},
    "smooth-check": {"periodic": None, "homoclinic": None, "cross_validate": None,
                     **{k: (None if f.default is MISSING else f.default)
                        for k, f in CriterionConfig.__dataclass_fields__.items()
                        if k != "seed"}},
}
CROSS_DEFAULTS = {"N": 100_000, "gap_tol": 1e-3, "orbits": 1}


# --- configuration --------------------------------------------------------------

def _schema():
    text = resources.files("pinchtwist").joinpath("schemas/config.schema.json").read_text()
    return json.loads(text)


def _path_of(err):
    return ".".join(str(p) for p in err.absolute_path) or "<root>"


def load_config(source) -> dict:
    """Parse and validate a config from a path or a dict."""
    if isinstance(source, dict):
        cfg = copy.deepcopy(source)
    else:
        path = Path(source)
        if not path.is_file():
            raise ConfigError(f"config file {path} does not exist")
        try:
            cfg = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed JSON at line {exc.lineno} column {exc.colno}: "
                              f"{exc.msg}") from exc
    validator = jsonschema.Draft202012Validator(_schema())
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise ConfigError(f"invalid field '{_path_of(e)}': {e.message}")
    return cfg


def _params(cfg, command):
    given = dict(cfg.get("params", {}))
    defaults = PARAMS[command]
    unknown = sorted(set(given) - set(defaults))
    if unknown:
        raise ConfigError(f"invalid field 'params.{unknown[0]}': not a {command} parameter")
    out = {**defaults, **given}
    missing = [k for k, v in out.items() if v is None and k == "chi"]
    if missing:
        raise ConfigError(f"invalid field 'params.{missing[0]}': required for {command}")
    return out


def _resolve_perturbations(map_spec, homoclinic_m):
    """Expand ``"homoclinic"`` centres and ``"unstable"`` planes."""
    spec = copy.deepcopy(map_spec)
    probe = map_from_dict({k: v for k, v in spec.items() if k != "perturbations"})
    L = probe.linear_part
    for p in spec.get("perturbations", []):
        if p["z"] == "homoclinic":
            if homoclinic_m is None:
                raise ConfigError("invalid field 'system.map.perturbations': centre "
                                  "'homoclinic' needs params.homoclinic.m")
            p["z"] = homoclinic_linear(L, homoclinic_m).point.tolist()
        if p["plane"] == "unstable":
            P = spectral_projector(L, True)
            U = np.linalg.svd(P)[0][:, :int(round(np.trace(P)))]
            if U.shape[1] != 2:
                raise ConfigError("invalid field 'system.map.perturbations.plane': the "
                                  "unstable space is not two-dimensional")
            p["plane"] = U.tolist()
    return spec


def build_system(system, params=None):
    """Return ``(cocycle, base_map_or_None)`` from the ``system`` block."""
    params = params or {}
    coc_spec = system.get("cocycle", {"type": "derivative"})
    kind = coc_spec["type"]
    try:
        if "shift" in system:
            if kind != "locally_constant":
                raise ConfigError("invalid field 'system.cocycle.type': shift systems take "
                                  "'locally_constant'")
            shift, table = shift_from_dict(system["shift"])
            weights = system["shift"].get("weights")
            return locally_constant_cocycle(shift, table, weights=weights), None
        m = (params.get("homoclinic") or {}).get("m")
        f = map_from_dict(_resolve_perturbations(system["map"], m))
        if kind == "derivative":
            return derivative_cocycle(f), f
        if kind == "restricted":
            return restricted_cocycle(f, coc_spec.get("side", "uu"), coc_spec.get("k", 1),
                                      coc_spec.get("bundle_steps", 100)), f
        if kind == "near_identity":
            return near_identity_cocycle(f, coc_spec.get("eps", 0.01)), f
        raise ConfigError(f"invalid field 'system.cocycle.type': {kind!r} needs a shift")
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid field 'system': {exc}") from exc


# --- commands ---------------------------------------------------------------------

def _spectrum(coc, N, k, seed, orbits, threads, x0=None):
    x0s = None if x0 is None else [np.asarray(x0, dtype=float)] * orbits
    return spectrum_ensemble(coc, N, k, seed, orbits, threads, x0s)


def run_spectrum(cfg, threads):
    p = _params(cfg, "spectrum")
    coc, _ = build_system(cfg["system"], p)
    est = _spectrum(coc, p["N"], p["k"], cfg["seed"], p["orbits"], threads, p["x0"])
    gap = spectrum_gap_report(est, p["gap_tol"])
    return {"spectrum": est.to_dict(),
            "gap_report": {"simple": gap.simple, "multiplicities": gap.multiplicities,
                           "gaps": gap.gaps, "resolution": gap.resolution}}


def run_bunching(cfg, threads):
    p = _params(cfg, "bunching")
    coc, _ = build_system(cfg["system"], p)
    fit = check_fiber_bunched(coc, p["chi"], p["N"], p["samples"], cfg["seed"])
    c_hat, _ = bunching_constant(coc, p["N"], p["samples"], cfg["seed"])
    return {"bunched": fit.ok, "fitted_C": fit.fitted_C, "fitted_lambda": fit.fitted_lambda,
            "chi": p["chi"], "conformality_estimate": c_hat}


def _cross(report, coc, spec, seed, threads):
    if spec is None:
        return None
    opts = {**CROSS_DEFAULTS, **spec}
    est = _spectrum(coc, opts["N"], 1, seed, opts["orbits"], threads)
    result = cross_validate(report, est, opts["gap_tol"])
    return {"result": result, "spectrum": est.to_dict()}


def run_shift_check(cfg, threads):
    p = _params(cfg, "shift-check")
    if "shift" not in cfg["system"]:
        raise ConfigError("invalid field 'system.shift': required for shift-check")
    system = copy.deepcopy(cfg["system"])
    system.setdefault("cocycle", {"type": "locally_constant"})
    coc, _ = build_system(system, p)
    shift = coc.meta["shift"]
    P = PeriodicWord(tuple(p["P"]))
    try:
        shift.check_word(P.symbols + P.symbols[:1])
        U = make_homoclinic(shift, P, p["insertion"])
    except ValueError as exc:
        raise ConfigError(f"invalid field 'params.insertion': {exc}") from exc
    report = simplicity_check_shift(coc, P, U, p["rel_gap"], p["minor_tol"], p["N"])
    out = {"report": report.to_dict()}
    cross = _cross(report, coc, p["cross_validate"], cfg["seed"], threads)
    if cross is not None:
        out["cross_validation"] = cross
    return out


def run_smooth_check(cfg, threads):
    p = _params(cfg, "smooth-check")
    if "map" not in cfg["system"]:
        raise ConfigError("invalid field 'system.map': required for smooth-check")
    system = copy.deepcopy(cfg["system"])
    system.setdefault("cocycle", {"type": "restricted", "side": "uu", "k": 1})
    coc, f = build_system(system, p)
    hom = p["homoclinic"] or {}
    if "m" not in hom:
        raise ConfigError("invalid field 'params.homoclinic.m': required for smooth-check")
    per = p["periodic"] or {"point": [0.0] * f.dim, "period": 1}
    try:
        z = homoclinic_linear(f.linear_part, hom["m"])
    except ValueError as exc:
        raise ConfigError(f"invalid field 'params.homoclinic.m': {exc}") from exc
    for rot in getattr(f, "rotations", ()):
        # the linear homoclinic orbit survives only if the twist is centred on it
        # or misses it entirely
        off_centre = np.linalg.norm(wrap(rot.z - z.point)) > 1e-12
        if off_centre and rot.contains(z.point):
            raise ConfigError("invalid field 'system.map.perturbations': support "
                              "contains the homoclinic point off centre")
        try:
            check_clearance(rot, z, 200)
        except ValueError as exc:
            raise ConfigError(f"invalid field 'system.map.perturbations': {exc}") from exc
    pp = newton_refine_periodic(f, np.asarray(per["point"], dtype=float), per["period"])
    crit = CriterionConfig.from_dict({**{k: p[k] for k in CriterionConfig.__dataclass_fields__
                                         if k in p}, "seed": cfg["seed"]})
    report = criterion_verdict(coc, pp, z, crit)
    out = {"report": report.to_dict()}
    cross = _cross(report, coc, p["cross_validate"], cfg["seed"], threads)
    if cross is not None:
        out["cross_validation"] = cross
    return out


COMMANDS = {
    "spectrum": run_spectrum,
    "bunching": run_bunching,
    "shift-check": run_shift_check,
    "smooth-check": run_smooth_check,
}


# --- sweeps -------------------------------------------------------------------------

def _set_path(cfg, dotted, value):
    keys = dotted.split(".")
    node = cfg
    try:
        for k in keys[:-1]:
            node = node[int(k)] if isinstance(node, list) else node[k]
        last = keys[-1]
        if isinstance(node, list):
            node[int(last)] = value
        else:
            if last not in node:
                raise KeyError(last)
            node[last] = value
    except (KeyError, IndexError, ValueError, TypeError) as exc:
        raise ConfigError(f"invalid field 'sweep.parameter': {dotted!r} does not "
                          f"address an existing value") from exc


def _row_summary(command, payload):
    row = {"verdict": "", "exponents": [], "std_errors": [], "gaps": [],
           "pinching_min_gap": "", "twisting_min_minor": ""}
    if command == "spectrum":
        row["exponents"] = payload["spectrum"]["exponents"]
        row["std_errors"] = payload["spectrum"]["std_errors"]
        row["gaps"] = payload["gap_report"]["gaps"]
    elif command == "bunching":
        row["verdict"] = "bunched" if payload["bunched"] else "not-bunched"
    else:
        rep = payload["report"]
        row["verdict"] = rep["verdict"]
        row["pinching_min_gap"] = rep["pinching"].get("min_gap")
        row["twisting_min_minor"] = rep["twisting"].get("min_minor")
        if "cross_validation" in payload:
            sp = payload["cross_validation"]["spectrum"]
            row["exponents"], row["std_errors"] = sp["exponents"], sp["std_errors"]
    return row


def run_sweep(cfg, threads):
    sw = cfg["sweep"]
    grid = sw["grid"]
    if not grid:
        raise ConfigError("invalid field 'sweep.grid': empty grid")
    base = {k: v for k, v in cfg.items() if k not in ("sweep", "output")}
    base["command"] = sw["command"]
    _set_path(copy.deepcopy(base), sw["parameter"], grid[0])  # validate the path early

    def one(i):
        row_cfg = copy.deepcopy(base)
        _set_path(row_cfg, sw["parameter"], grid[i])
        row_cfg["seed"] = cfg["seed"] + i
        try:
            payload = COMMANDS[sw["command"]](load_config(row_cfg), 1)
            return {"status": "ok", "error": "", **_row_summary(sw["command"], payload)}
        except (PinchTwistError, np.linalg.LinAlgError) as exc:
            empty = _row_summary("bunching", {"bunched": False})
            empty["verdict"] = ""
            return {"status": "failed", "error": f"{type(exc).__name__}: {exc}", **empty}

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(one, range(len(grid))))
    else:
        rows = [one(i) for i in range(len(grid))]
    for i, r in enumerate(rows):
        r.update(index=i, parameter=sw["parameter"], value=grid[i], seed=cfg["seed"] + i)
    ok = sum(r["status"] == "ok" for r in rows)
    return {"rows": rows, "succeeded": ok, "total": len(rows)}, rows


CSV_FIXED = ["index", "parameter", "value", "seed", "status", "verdict",
             "pinching_min_gap", "twisting_min_minor"]


def sweep_csv(rows) -> str:
    """One row per grid point; list-valued fields are spread over numbered columns."""
    width = {k: max((len(r[k]) for r in rows), default=0)
             for k in ("exponents", "std_errors", "gaps")}
    header = list(CSV_FIXED)
    for k, stem in (("exponents", "exponent"), ("std_errors", "std_error"), ("gaps", "gap")):
        header += [f"{stem}_{j + 1}" for j in range(width[k])]
    header.append("error")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        line = [r[k] for k in CSV_FIXED]
        for k in ("exponents", "std_errors", "gaps"):
            vals = [repr(float(v)) for v in r[k]]
            line += vals + [""] * (width[k] - len(vals))
        line.append(r["error"])
        w.writerow(line)
    return buf.getvalue()


# --- entry points ---------------------------------------------------------------------

def run(config, threads=1):
    """Run a config; returns ``(exit_code, run_report, csv_text_or_None)``."""
    start = time.perf_counter()
    cfg = load_config(config)
    command = cfg["command"]
    table = None
    if command == "sweep":
        payload, rows = run_sweep(cfg, threads)
        table = sweep_csv(rows)
        code = EXIT_OK if payload["succeeded"] >= SWEEP_SUCCESS_FRACTION * payload["total"] \
            else EXIT_NUMERIC
    else:
        payload = COMMANDS[command](cfg, threads)
        code = EXIT_OK
        cross = payload.get("cross_validation")
        if cross is not None and cross["result"] == "inconsistent":
            code = EXIT_INCONSISTENT
    report = {
        "schema_version": SCHEMA_VERSION,
        "tool_version": __version__,
        "command": command,
        "config_hash": config_hash(cfg),
        "payload": json.loads(json.dumps(payload, default=_jsonable)),
        "wall_time": time.perf_counter() - start,
    }
    return code, report, table


def payload_bytes(report) -> bytes:
    """Canonical serialisation of everything except the wall time."""
    body = {k: v for k, v in report.items() if k != "wall_time"}
    return json.dumps(body, sort_keys=True, separators=(",", ":")).encode()


def _threads(flag):
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    return max(1, flag)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="pinchtwist", description=__doc__.splitlines()[0])
    ap.add_argument("--config", required=True, help="experiment config (JSON)")
    ap.add_argument("--out", help="report path; sweeps also write <out>.csv")
    ap.add_argument("--threads", type=int, default=1,
                    help=f"worker threads (overridden by ${THREADS_ENV})")
    ap.add_argument("--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        threads = _threads(args.threads)
        code, report, table = run(args.config, threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFailure, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except PinchTwistError as exc:
        print(f"config error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    text = json.dumps(report, sort_keys=True, indent=2) + "\n"
    cfg_out = {}
    try:
        cfg_out = json.loads(Path(args.config).read_text()).get("output", {})
    except (OSError, ValueError, AttributeError):
        pass
    out = args.out or cfg_out.get("report")
    if out:
        Path(out).write_text(text)
        log.info("report written to %s", out)
    else:
        sys.stdout.write(text)
    if table is not None:
        csv_path = cfg_out.get("csv") or (str(Path(out).with_suffix(".csv")) if out else None)
        if csv_path:
            Path(csv_path).write_text(table)
            log.info("table written to %s", csv_path)
    if code == EXIT_INCONSISTENT:
        print("cross-validation inconsistent: simple spectrum predicted but not measured",
              file=sys.stderr)
    return code
