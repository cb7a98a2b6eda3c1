"""Command-line entry point: ``arboreal <subcommand> [--config FILE] [flags]``.

Parameters come from typed defaults, then an INI file section named
after the subcommand, then command-line flags.  Results go to CSV (or
stdout) with a JSON manifest next to the CSV.  Exit codes: 0 success,
1 an invariant check failed, 2 invalid configuration.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import io
import json
import math
import os
import platform
import sys
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__

MANIFEST_SCHEMA = 1
EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG = 0, 1, 2


class ConfigError(ValueError):
    pass


class CheckFailed(RuntimeError):
    def __init__(self, message: str, details: dict | None = None):
        super().__init__(message)
        self.details = details or {}


# ------------------------------------------------------------------ typed parameters


def fmt(x) -> str:
    """Round-trippable decimal."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "%.17g" % x
    return str(x)


def _tokens(text: str) -> list[str]:
    return [t for t in text.replace(",", " ").split() if t]


@dataclass(frozen=True)
class Param:
    kind: str            # int | float | str | bool | ints | floats
    default: object = None
    help: str = ""
    multi: bool = False  # accept several command-line tokens

    def parse(self, raw):
        if raw is None:
            return None
        if isinstance(raw, list):
            raw = " ".join(raw)
        raw = str(raw).strip()
        try:
            if self.kind == "int":
                return int(raw)
            if self.kind == "float":
                return float(raw)
            if self.kind == "bool":
                low = raw.lower()
                if low in ("1", "true", "yes", "on"):
                    return True
                if low in ("0", "false", "no", "off"):
                    return False
                raise ValueError(raw)
            if self.kind == "ints":
                return tuple(int(t) for t in _tokens(raw))
            if self.kind == "floats":
                return tuple(float(t) for t in _tokens(raw))
        except ValueError as exc:
            raise ConfigError(f"cannot parse {raw!r} as {self.kind}") from exc
        return raw

    def format(self, value) -> str:
        if isinstance(value, tuple):
            return ",".join(fmt(v) for v in value)
        return fmt(value)


GRAPH = Param("str", "builtin:c3", "builtin name (edge, cN, pN, kN, torus:d,L,N) or edge-list file")

SCHEMAS: dict[str, dict[str, Param]] = {
    "exact-check": {"graph": GRAPH, "beta": Param("float", 1.0), "h": Param("float", 0.0),
                    "origin": Param("int", 0), "tolerance": Param("float", 1e-10)},
    "ward-check": {"graph": GRAPH, "beta": Param("float", 1.0), "h": Param("float", 0.0),
                   "tolerance": Param("float", 1e-12)},
    "sample": {"graph": GRAPH, "torus": Param("ints", None, "d L N (overrides graph)"),
               "beta": Param("float", 1.0), "h": Param("float", 0.0), "seed": Param("int", 0),
               "sweeps": Param("int", 10_000), "burnin": Param("int", 1_000), "stride": Param("int", 1),
               "batches": Param("int", 64), "origin": Param("int", 0),
               "points": Param("str", "all", "'all' or vertex indices", multi=True),
               "observables": Param("str", "all", "'all' or comma list", multi=True)},
    "frd": {"d": Param("int", 2), "L": Param("int", 2), "N": Param("int", 3), "m2": Param("float", 0.5),
            "backend": Param("str", "polynomial"), "order": Param("int", 6), "tol": Param("float", 1e-12)},
    "flow": {"d": Param("int", 3), "L": Param("int", 2), "N": Param("int", 4), "m2": Param("float", 0.25),
             "case": Param("int", 1), "a": Param("ints", None), "b": Param("ints", None),
             "z0": Param("float", 0.0), "y0": Param("float", 0.0), "a0": Param("float", 0.0),
             "b0": Param("float", 0.0), "lam": Param("float", 1.0), "backend": Param("str", "polynomial"),
             "tolerance": Param("float", 1e-9)},
    "green": {"d": Param("int", 3), "side": Param("int", 16), "m2": Param("float", 0.0),
              "points": Param("ints", None, "flattened offsets, d per point"),
              "zd": Param("bool", False, "extrapolate to the infinite lattice"),
              "sides": Param("ints", (32, 64, 128))},
    "theta-scan": {"d": Param("int", 3), "side": Param("int", 12), "betas": Param("floats", (0.2, 1.0, 10.0)),
                   "h": Param("float", 0.02), "sweeps": Param("int", 4000), "burnin": Param("int", None),
                   "seed": Param("int", 0), "batches": Param("int", 32), "workers": Param("int", 1)},
    "decay-fit": {"d": Param("int", 2), "side": Param("int", 32), "beta": Param("float", 0.5),
                  "h": Param("float", 0.5), "radii": Param("ints", (1, 2, 3, 4, 5, 6)),
                  "sweeps": Param("int", 20_000), "burnin": Param("int", None), "seed": Param("int", 0),
                  "batches": Param("int", 32)},
}


def load_config(text: str, subcommand: str) -> dict:
    """Parse an INI document; only the section named after ``subcommand`` is allowed."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    schema = SCHEMAS[subcommand]
    extra_sections = [s for s in cp.sections() if s != subcommand]
    if extra_sections:
        raise ConfigError(f"unknown section(s): {', '.join(extra_sections)}")
    out = {}
    if cp.has_section(subcommand):
        for key, raw in cp.items(subcommand):
            if key not in schema:
                raise ConfigError(f"unknown key {key!r} in section [{subcommand}]")
            out[key] = schema[key].parse(raw)
    return out


def dump_config(subcommand: str, params: dict) -> str:
    schema = SCHEMAS[subcommand]
    lines = [f"[{subcommand}]"]
    for key, value in params.items():
        if value is not None:
            lines.append(f"{key} = {schema[key].format(value)}")
    return "\n".join(lines) + "\n"


def resolve(subcommand: str, file_values: dict, flag_values: dict) -> dict:
    schema = SCHEMAS[subcommand]
    params = {k: p.default for k, p in schema.items()}
    params.update(file_values)
    params.update({k: v for k, v in flag_values.items() if v is not None})
    return params


def config_hash(subcommand: str, params: dict) -> str:
    return hashlib.sha256(dump_config(subcommand, params).encode()).hexdigest()


# ------------------------------------------------------------------ output


def atomic_write(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def versions() -> dict:
    import numba
    import scipy

    return {"arboreal": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__}


# ------------------------------------------------------------------ subcommands
# each returns (csv header, csv rows, report dict); raises CheckFailed on invariant failure


def _load_graph(spec: str):
    from .lattice import builtin_graph, read_edgelist

    if spec.startswith("builtin:") or not Path(spec).exists():
        return builtin_graph(spec)
    return read_edgelist(Path(spec))


def _cmd_exact_check(p):
    from .exact import matrix_forest_determinant, rooted_forest_sum, summarize
    from .grassmann import H02Model, dictionary_check

    g = _load_graph(p["graph"])
    s = summarize(g, p["beta"], p["h"], p["origin"])
    o = p["origin"]
    rows = [("partition_function", "", s.Z), ("ghost_connection", o, s.ghost[o]),
            ("mean_tree_size", o, s.mean_tree_size)]
    rows += [("connection", x, v) for x, v in enumerate(s.connection[o])]
    rows += [("tau", x, v) for x, v in enumerate(s.tau)]
    rows += [("sigma", x, v) for x, v in enumerate(s.sigma)]
    checks = {"rooted_forest_vs_determinant": abs(rooted_forest_sum(g, p["beta"], p["h"])
                                                  - matrix_forest_determinant(g, p["beta"], p["h"]))
              / max(1.0, abs(matrix_forest_determinant(g, p["beta"], p["h"])))}
    if g.n <= H02Model.MAX_VERTICES:
        checks.update(dictionary_check(g, p["beta"], p["h"]))
    worst = max(checks.values())
    report = {"checks": checks, "max_discrepancy": worst, "tolerance": p["tolerance"]}
    if not worst <= p["tolerance"]:
        raise CheckFailed("identity check exceeded tolerance", report)
    return ("quantity", "argument", "value"), rows, report


def _cmd_ward_check(p):
    from .grassmann import ward_check

    g = _load_graph(p["graph"])
    rep = ward_check(g, p["beta"], p["h"])
    worst = max(rep.values())
    report = {"checks": rep, "max_discrepancy": worst, "tolerance": p["tolerance"]}
    rows = [(k, v) for k, v in rep.items()]
    if not worst <= p["tolerance"]:
        raise CheckFailed("Ward identity exceeded tolerance", report)
    return ("check", "discrepancy"), rows, report


def _cmd_sample(p):
    from .lattice import Torus
    from .mcmc import ChainConfig, run_chain

    if p["torus"]:
        if len(p["torus"]) != 3:
            raise ConfigError("torus needs three integers d L N")
        g = Torus(*p["torus"]).graph()
    else:
        g = _load_graph(p["graph"])
    if p["points"].strip().lower() == "all":
        points = tuple(range(g.n))
    else:
        points = tuple(int(t) for t in _tokens(p["points"]))
    cfg = ChainConfig(g, p["beta"], p["h"], seed=p["seed"], sweeps=p["sweeps"], burnin=p["burnin"],
                      stride=p["stride"], origin=p["origin"], points=points, batches=p["batches"])
    est = run_chain(cfg)
    wanted = None if p["observables"].strip().lower() == "all" else set(_tokens(p["observables"]))
    rows = [(name, arg, e.value, e.stderr, est.batches, p["seed"])
            for name, arg, e in est.rows() if wanted is None or name in wanted]
    report = {"measurements": est.measurements, "acceptance": est.acceptance,
              "size_total": est.size_total, "connection_count_total": int(est.connection_counts.sum())}
    return ("observable", "argument", "estimate", "stderr", "batches", "seed"), rows, report


def _cmd_frd(p):
    from .frd import decompose
    from .lattice import Torus

    t = Torus(p["d"], p["L"], p["N"])
    dec = decompose(t, p["m2"], p["backend"], order=p["order"], tol=p["tol"])
    rep = dec.verify()
    offsets = t.offset_grid()
    rows = []
    for j in range(1, t.N + 1):
        k = dec.kernel(j).ravel()
        for i in range(t.volume):
            rows.append((j, " ".join(str(int(c)) for c in offsets[i]), k[i]))
    report = {"backend": dec.backend, "t_N": dec.t_N, "gap": dec.gap,
              "residuals": {"reconstruction": rep.reconstruction, "range_violation": rep.range_violation,
                            "min_symbol": rep.min_symbol, "gap_ratio": rep.gap_ratio,
                            "scaling_constant": rep.scaling_constant},
              "passed": rep.passed}
    if not rep.ok:
        raise CheckFailed("decomposition contract failed", report)
    return ("scale", "offset", "value"), rows, report


def _cmd_flow(p):
    from .lattice import Torus
    from .rgflow import green_target, run_flow

    t = Torus(p["d"], p["L"], p["N"])
    a = p["a"] or (0,) * t.d
    b = p["b"] or (1,) + (0,) * (t.d - 1)
    if len(a) != t.d or len(b) != t.d:
        raise ConfigError("a and b need d coordinates")
    r = run_flow(t, p["m2"], case=p["case"], a=a, b=b, z0=p["z0"], y0=p["y0"], a0=p["a0"], b0=p["b0"],
                 lam=p["lam"], backend=p["backend"])
    rows = []
    for row in r.rows:
        c, s, o = row.bulk, row.rescaled, row.obs
        rows.append((row.j, c.z, c.y, c.a, c.b, c.u, s.y, s.a, s.b, o.q, o.r, o.gamma_a, o.gamma_b, o.eta,
                     row.C00, row.lapC0, row.Cab))
    o = r.final_obs
    last = r.rows[-1].bulk
    rows.append((t.N + 1, last.z, last.y, last.a, last.b, last.u, "", "", "", o.q, o.r, o.gamma_a, o.gamma_b,
                 o.eta, r.t_N / t.volume, 0.0, r.t_N / t.volume))
    target = green_target(t, p["m2"], a, b, p["case"]) * (p["lam"] ** 2)
    report = {"t_N": r.t_N, "j_ab": r.j_ab, "final_q": o.q, "green_target": target,
              "pipeline_gap": r.pipeline_gap(), "susceptibility": r.chi}
    free = p["a0"] == 0 and p["b0"] == 0
    if free:
        report["free_discrepancy"] = abs(o.q - target)
        if not report["free_discrepancy"] <= p["tolerance"]:
            raise CheckFailed("free flow does not reproduce the Green function", report)
    header = ("j", "z", "y", "a", "b", "u", "y_hat", "a_hat", "b_hat", "q", "r", "gamma_a", "gamma_b", "eta",
              "C00", "lapC0", "Cab")
    return header, rows, report


def _cmd_green(p):
    from .freefield import green, zd_green_reference
    from .lattice import Torus

    d = p["d"]
    flat = p["points"] or (0,) * d
    if len(flat) % d:
        raise ConfigError("points must hold d coordinates per point")
    pts = [tuple(flat[i:i + d]) for i in range(0, len(flat), d)]
    rows, report = [], {}
    if p["zd"]:
        for x in pts:
            ref = zd_green_reference(d, x, p["sides"])
            rows.append((" ".join(map(str, x)), ref.value, ref.spread))
        return ("point", "value", "spread"), rows, {"sides": list(p["sides"])}
    g = green(Torus(d, p["side"], 1), p["m2"])
    for x in pts:
        rows.append((" ".join(map(str, x)), g.at(x), 0.0))
    report["zero_mode_removed"] = g.zero_mode_removed
    return ("point", "value", "spread"), rows, report


def _cmd_theta_scan(p):
    from .mcmc import theta_scan

    pts = theta_scan(p["d"], p["side"], list(p["betas"]), p["h"], p["sweeps"], burnin=p["burnin"],
                     seed=p["seed"], batches=p["batches"], workers=p["workers"])
    rows = [(q.beta, q.theta, q.stderr, q.mean_tree_size, q.acceptance) for q in pts]
    return ("beta", "theta", "stderr", "mean_tree_size", "acceptance"), rows, {}


def _cmd_decay_fit(p):
    from .mcmc import decay_fit

    fit = decay_fit(p["d"], p["side"], p["beta"], p["h"], p["radii"], sweeps=p["sweeps"], burnin=p["burnin"],
                    seed=p["seed"], batches=p["batches"])
    rows = list(zip(fit.radii, fit.estimates, fit.stderr))
    report = {"slope": fit.slope, "intercept": fit.intercept, "r2": fit.r2, "flagged": fit.flagged}
    if fit.flagged:
        raise CheckFailed("insufficient signal above the noise floor", report)
    return ("radius", "estimate", "stderr"), rows, report


COMMANDS = {
    "exact-check": _cmd_exact_check, "ward-check": _cmd_ward_check, "sample": _cmd_sample, "frd": _cmd_frd,
    "flow": _cmd_flow, "green": _cmd_green, "theta-scan": _cmd_theta_scan, "decay-fit": _cmd_decay_fit,
}


# ------------------------------------------------------------------ driver


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="arboreal", description="Arboreal gas toolkit")
    sub = ap.add_subparsers(dest="subcommand", required=True)
    for name, schema in SCHEMAS.items():
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="INI file with a section named after the subcommand")
        sp.add_argument("--out", help="CSV path (manifest and report written alongside); stdout if omitted")
        for key, prm in schema.items():
            nargs = "+" if prm.kind in ("ints", "floats") or prm.multi else None
            sp.add_argument(f"--{key}", dest=key, default=None, nargs=nargs, help=prm.help or None)
    return ap


def _error(record: dict, out: Path | None, code: int) -> int:
    text = json.dumps(_jsonable(record), sort_keys=True)
    print(text, file=sys.stderr)
    if out is not None:
        try:
            atomic_write(out.with_suffix(".error.json"), text + "\n")
        except OSError:
            pass
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_CONFIG
    name = args.subcommand
    schema = SCHEMAS[name]
    out = Path(args.out) if args.out else None
    try:
        file_values = load_config(Path(args.config).read_text(), name) if args.config else {}
        flags = {k: schema[k].parse(getattr(args, k)) for k in schema}
        params = resolve(name, file_values, flags)
    except (ConfigError, OSError) as exc:
        return _error({"status": "config_error", "subcommand": name, "error": str(exc)}, out, EXIT_CONFIG)

    start = time.perf_counter()
    status, code, report, rows, header = "ok", EXIT_OK, {}, [], ()
    try:
        header, rows, report = COMMANDS[name](params)
    except ConfigError as exc:
        return _error({"status": "config_error", "subcommand": name, "error": str(exc)}, out, EXIT_CONFIG)
    except CheckFailed as exc:
        status, code, report = "check_failed", EXIT_CHECK_FAILED, exc.details
        report = dict(report, error=str(exc))
    except (ValueError, ArithmeticError, RuntimeError) as exc:
        return _error({"status": "error", "subcommand": name, "error": f"{type(exc).__name__}: {exc}"},
                      out, EXIT_CHECK_FAILED)
    wall = time.perf_counter() - start

    manifest = {"schema": MANIFEST_SCHEMA, "subcommand": name, "status": status,
                "config": {k: schema[k].format(v) for k, v in params.items() if v is not None},
                "config_hash": config_hash(name, params), "seed": params.get("seed"),
                "versions": versions(), "wall_time_s": wall, "report": report}
    text = csv_text(header, rows) if header else ""
    if out is None:
        sys.stdout.write(text)
        print(json.dumps(_jsonable(manifest), sort_keys=True), file=sys.stderr)
    else:
        atomic_write(out, text)
        atomic_write(out.with_suffix(".manifest.json"), json.dumps(_jsonable(manifest), indent=2, sort_keys=True) + "\n")
    if code != EXIT_OK:
        _error({"status": status, "subcommand": name, "report": report}, out, code)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
