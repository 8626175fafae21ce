"""Command-line front end: ``volterrajump run|validate|list-experiments``.

Each experiment is one JSON document::

    {"schema_version": 1, "experiment": "kernel-check", "seed": 7, ...}

Outputs go to ``--out-dir`` (default ``out/<experiment>``): one or more CSV
files plus ``manifest.json`` with the resolved configuration, seed,
software versions, verified hypotheses and SHA-256 digests of the CSV
files. Numbers in CSV files are written with 17 significant digits, so a
rerun with the same configuration and seed reproduces the files byte for
byte.

Exit codes: 0 success, 2 configuration error, 3 hypothesis-check failure,
4 explosion flag raised during simulation.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import io
import json
import math
import os
import platform
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Mapping

import numpy as np
import scipy

from . import __version__
from .engine import (EulerCoefficients, SolutionSample, martingale_residuals, pathwise_uniqueness_probe,
                     simulate_euler_batch, simulate_general, simulate_pure_jump)
from .expr import ExprError
from .factors import factor_convergence_experiment
from .generator import TestFunction
from .hawkes import ScalingSchedule, scaling_limit_experiment
from .kernels import Kernel, slobodeckij_certificate
from .rng import GridSpec, SeedSpec
from .triplet import CONDITIONS, HypothesisError, PSDError, Triplet, check_growth

__all__ = ["main", "EXPERIMENTS", "ConfigError", "run_config", "load_config"]

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_HYPOTHESIS, EXIT_EXPLOSION = 0, 2, 3, 4


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending entry."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message if field is None else f"field '{field}': {message}")
        self.field = field


@dataclass(frozen=True)
class Experiment:
    name: str
    required: tuple
    optional: tuple
    summary: str
    run: Callable


EXPERIMENTS: dict[str, Experiment] = {}


def register(name: str, required, optional, summary: str):
    def deco(fn):
        EXPERIMENTS[name] = Experiment(name, tuple(required), tuple(optional), summary, fn)
        return fn
    return deco


# ----------------------------------------------------------------------
# config helpers
# ----------------------------------------------------------------------


def load_config(path: str | os.PathLike) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}") from None
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    return cfg


def _get(cfg: Mapping, key: str, kind=None, default: Any = ..., *, check=None):
    if key not in cfg:
        if default is ...:
            raise ConfigError("required field is missing", key)
        return default
    v = cfg[key]
    if kind is not None:
        try:
            if kind is int and (isinstance(v, bool) or not float(v).is_integer()):
                raise ValueError
            v = kind(v)
        except (TypeError, ValueError):
            raise ConfigError(f"expected {kind.__name__}, got {v!r}", key) from None
    if check is not None and not check(v):
        raise ConfigError(f"value {v!r} is out of range", key)
    return v


def _kernel(cfg, key="kernel") -> Kernel:
    try:
        return Kernel.from_json(_get(cfg, key))
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc), key) from None


def _triplet(cfg, key="triplet") -> Triplet:
    try:
        return Triplet.from_json(_get(cfg, key))
    except ConfigError:
        raise
    except (ValueError, TypeError, ExprError) as exc:
        raise ConfigError(str(exc), key) from None


def _seed(cfg) -> int:
    return _get(cfg, "seed", int, 0, check=lambda v: 0 <= v < 2 ** 64)


def _positive(v) -> bool:
    return v > 0


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _growth_checks(cfg, triplet: Triplet) -> list[dict]:
    """Optional ``"growth_checks": [{"condition": ..., "constant": ...}]``."""
    out = []
    for i, item in enumerate(_get(cfg, "growth_checks", None, [])):
        where = f"growth_checks[{i}]"
        if not isinstance(item, Mapping):
            raise ConfigError("expected an object with condition and constant", where)
        cond = item.get("condition")
        if cond not in CONDITIONS:
            raise ConfigError(f"condition must be one of {', '.join(CONDITIONS)}", where + ".condition")
        try:
            const = float(item["constant"])
        except (KeyError, TypeError, ValueError):
            raise ConfigError("numeric constant required", where + ".constant") from None
        try:
            rep = check_growth(triplet, cond, const)
        except PSDError as exc:
            raise HypothesisError("diffusion_psd", str(exc)) from None
        out.append(rep.to_json())
        if not rep.passed:
            raise HypothesisError(cond, f"max ratio {rep.max_ratio:.6g} exceeds declared constant {const:.6g}")
    return out


def _map(fn, items, threads: int):
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


# ----------------------------------------------------------------------
# experiments
# ----------------------------------------------------------------------


@register("kernel-check", ["kernel", "p", "eta", "T"], ["method"],
          "regularity certificate of a kernel: singular and Slobodeckij integrals")
def _kernel_check(cfg, ctx):
    kernel = _kernel(cfg)
    p = _get(cfg, "p", float, check=lambda v: v >= 2)
    eta = _get(cfg, "eta", float, check=lambda v: 0 < v < 1)
    T = _get(cfg, "T", float, check=_positive)
    method = _get(cfg, "method", str, "auto", check=lambda v: v in ("auto", "closed_form", "quadrature"))
    cert = slobodeckij_certificate(kernel, p, eta, T, method=method)
    c = cert.to_json()
    keys = ["p", "eta", "horizon", "value_singular_integral", "value_slobodeckij_integral", "c_K_bound",
            "method", "quadrature_error_estimate"]
    files = {"certificate.csv": _csv(keys, [[getattr(cert, k) for k in keys]])}
    hyp = {"kernel_regularity": c}
    if not cert.finite:
        raise HypothesisError("kernel_regularity", f"certificate is not finite: {cert.diagnostic}")
    return files, hyp, False


@register("simulate", ["kernel", "triplet", "T", "steps"],
          ["g0", "scheme", "level", "intensity_bound", "max_events", "growth_checks"],
          "sample paths of X = g0 + K * Z (exact_jump, approx or euler scheme)")
def _simulate(cfg, ctx):
    kernel = _kernel(cfg)
    triplet = _triplet(cfg)
    if (triplet.d, triplet.k) != kernel.dims:
        raise ConfigError(f"triplet dimensions {(triplet.d, triplet.k)} do not match kernel {kernel.dims}",
                          "triplet")
    T = _get(cfg, "T", float, check=_positive)
    steps = _get(cfg, "steps", int, check=_positive)
    scheme = _get(cfg, "scheme", str, "exact_jump", check=lambda v: v in ("exact_jump", "approx", "euler"))
    g0 = cfg.get("g0", 0.0)
    hyp = {"growth_checks": _growth_checks(cfg, triplet)}
    grid = GridSpec(T, steps)
    seeds = [SeedSpec(ctx["seed"], i) for i in range(ctx["replicates"])]
    max_events = _get(cfg, "max_events", int, 1_000_000, check=_positive)
    if scheme == "euler":
        coeffs = EulerCoefficients.from_triplet(triplet, _get(cfg, "intensity_bound", float, None))
        X = simulate_euler_batch(g0, kernel, coeffs, grid, seeds)
        exploded = [not np.all(np.isfinite(x)) for x in X]
        events = [0] * len(seeds)
    else:
        if scheme == "exact_jump":
            if not (triplet.is_pure_jump or (triplet.nu is None and not triplet.has_drift
                                            and not triplet.has_diffusion)):
                raise ConfigError("exact_jump needs a pure-jump triplet (b = 'pure_jump', no a); "
                                  "use scheme 'approx' with a level", "scheme")

            def one(s):
                return simulate_pure_jump(g0, kernel, triplet.nu, T, grid, s, max_events=max_events)
        else:
            level = _get(cfg, "level", int, check=_positive)

            def one(s):
                return simulate_general(g0, kernel, triplet, level, T, grid, s, max_events=max_events)
        samples = _map(one, seeds, ctx["threads"])
        X = np.stack([s.X for s in samples])
        exploded = [s.exploded for s in samples]
        events = [s.flags.get("n_events", 0) for s in samples]
    d = kernel.dims[0]
    rows = []
    for r, x in enumerate(X):
        for t, v in zip(grid.times, x):
            rows.append([r, t] + list(v))
    files = {"paths.csv": _csv(["replicate", "t"] + [f"x{i + 1}" for i in range(d)], rows),
             "replicates.csv": _csv(["replicate", "n_events", "exploded"],
                                    [[r, e, x] for r, (e, x) in enumerate(zip(events, exploded))])}
    return files, hyp, any(exploded)


@register("hawkes-scale", ["kernel", "g0", "levels", "T"],
          ["exponents", "limit_rates", "steps", "checkpoints", "reference_replicates", "reference_steps",
           "mode", "certificate", "bootstrap"],
          "rescaled nonlinear Hawkes processes against the square-root Volterra limit")
def _hawkes_scale(cfg, ctx):
    kernel = _kernel(cfg)
    levels = _get(cfg, "levels")
    if not isinstance(levels, list) or not levels or not all(isinstance(n, int) and n > 0 for n in levels):
        raise ConfigError("expected a nonempty list of positive integers", "levels")
    T = _get(cfg, "T", float, check=_positive)
    d = kernel.dims[0]
    exps = _get(cfg, "exponents", None, [1] * d)
    if not isinstance(exps, list) or len(exps) != d or not all(0 < float(b) < 2 for b in exps):
        raise ConfigError(f"expected {d} exponents in (0, 2)", "exponents")
    rates = _get(cfg, "limit_rates", None, None)
    try:
        sched = ScalingSchedule.power_law(levels, exps, rates)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc), "limit_rates") from None
    cert = _get(cfg, "certificate", None, None)
    if cert is not None and (not isinstance(cert, list) or len(cert) != 2):
        raise ConfigError("expected [eta, p]", "certificate")
    mode = _get(cfg, "mode", str, "clamp", check=lambda v: v in ("clamp", "abs"))
    rep = scaling_limit_experiment(
        cfg["g0"], kernel, sched, T, ctx["replicates"], ctx["seed"],
        checkpoints=_get(cfg, "checkpoints", None, None), steps=_get(cfg, "steps", int, 20, check=_positive),
        reference_replicates=_get(cfg, "reference_replicates", int, None),
        reference_steps=_get(cfg, "reference_steps", int, 400, check=_positive), mode=mode,
        certificate=None if cert is None else (float(cert[0]), float(cert[1])),
        n_boot=_get(cfg, "bootstrap", int, 200, check=_positive))
    hyp = {"schedule": rep.schedule.to_json(), "level_inputs": rep.hypotheses, "reference": rep.reference,
           "w1_nonincreasing_within_noise": {format(c, "g"): rep.nonincreasing_within_noise(c)
                                             for c in sorted({r.checkpoint for r in rep.rows})}}
    return {"convergence.csv": rep.to_csv()}, hyp, False


@register("markov-approx", ["kernel", "triplet", "levels", "T"],
          ["g0", "steps", "checkpoints", "certificate", "intensity_bound"],
          "exponential-sum factor approximations of a target kernel, coupled-noise gaps")
def _markov_approx(cfg, ctx):
    kernel = _kernel(cfg)
    triplet = _triplet(cfg)
    levels = _get(cfg, "levels")
    if not isinstance(levels, list) or not all(isinstance(n, int) and n > 0 for n in levels):
        raise ConfigError("expected a list of positive integers", "levels")
    cert = _get(cfg, "certificate", None, [0.2, 2.0])
    try:
        rep = factor_convergence_experiment(
            kernel, triplet, levels, _get(cfg, "T", float, check=_positive), ctx["replicates"], ctx["seed"],
            g0=cfg.get("g0", 0.0), steps=_get(cfg, "steps", int, 200, check=_positive),
            checkpoints=_get(cfg, "checkpoints", None, None),
            certificate=None if cert is None else (float(cert[0]), float(cert[1])),
            intensity_bound=_get(cfg, "intensity_bound", float, None))
    except ValueError as exc:
        raise ConfigError(str(exc), "kernel") from None
    hyp = {"levels_certified": [r.level for r in rep.rows if r.certificate_finite],
           "levels_skipped": {str(r.level): r.diagnostic for r in rep.rows if r.skipped}}
    return {"factors.csv": rep.to_csv()}, hyp, False


@register("uniqueness-probe", ["kernel", "triplet", "T", "steps"],
          ["g0", "g0_other", "lipschitz", "intensity_bound"],
          "two Euler solvers on coupled noise; distance and resolvent Gronwall bound")
def _uniqueness(cfg, ctx):
    kernel = _kernel(cfg)
    triplet = _triplet(cfg)
    T = _get(cfg, "T", float, check=_positive)
    grid = GridSpec(T, _get(cfg, "steps", int, check=_positive))
    lip = _get(cfg, "lipschitz", None, None)
    if lip is not None and (not isinstance(lip, list) or len(lip) != 2):
        raise ConfigError("expected [L_b, L_sigma]", "lipschitz")
    coeffs = EulerCoefficients.from_triplet(triplet, _get(cfg, "intensity_bound", float, None))
    res = pathwise_uniqueness_probe(cfg.get("g0", 0.0), kernel, coeffs, T, grid, SeedSpec(ctx["seed"], 0),
                                    g0_other=cfg.get("g0_other"), replicates=ctx["replicates"],
                                    lipschitz=None if lip is None else (float(lip[0]), float(lip[1])))
    files = {"distances.csv": _csv(["replicate", "l2_distance"], list(enumerate(res.distances))),
             "mean_square.csv": _csv(["t", "mean_square_gap", "gronwall_bound"],
                                     [[t, m, "" if res.bound is None else b] for t, m, b in
                                      zip(grid.times, res.mean_square,
                                          res.bound if res.bound is not None else [None] * len(grid.times))])}
    hyp = {"within_gronwall_bound": res.within_bound}
    if res.within_bound is False:
        raise HypothesisError("gronwall_bound", "mean-square gap exceeds the resolvent comparison bound")
    return files, hyp, bool(not np.all(np.isfinite(res.distances)))


def _test_function(spec: Mapping, k: int, where: str) -> TestFunction:
    kind = spec.get("kind")
    try:
        if kind == "polynomial_bump":
            return TestFunction.polynomial_bump(k, float(spec.get("radius", 1.0)), int(spec.get("power", 6)),
                                                spec.get("center"))
        if kind == "bump":
            return TestFunction.bump(k, float(spec.get("radius", 1.0)), spec.get("center"))
        if kind == "cutoff_polynomial":
            return TestFunction.cutoff_polynomial(k, quadratic=spec.get("quadratic"), linear=spec.get("linear"),
                                                  constant=float(spec.get("constant", 0.0)),
                                                  inner=float(spec.get("inner", 1.0)),
                                                  outer=float(spec.get("outer", 2.0)), center=spec.get("center"))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), where) from None
    raise ConfigError("kind must be polynomial_bump, bump or cutoff_polynomial", where + ".kind")


@register("martingale-check", ["kernel", "triplet", "T", "steps", "test_functions", "checkpoints"],
          ["g0", "scheme", "level", "max_events"],
          "martingale-problem residuals f(Z_t) - f(Z_0) - int A f ds over replicates")
def _martingale(cfg, ctx):
    kernel = _kernel(cfg)
    triplet = _triplet(cfg)
    T = _get(cfg, "T", float, check=_positive)
    grid = GridSpec(T, _get(cfg, "steps", int, check=_positive))
    fns = _get(cfg, "test_functions")
    if not isinstance(fns, list) or not fns:
        raise ConfigError("expected a nonempty list", "test_functions")
    tfs = [_test_function(f, triplet.k, f"test_functions[{i}]") for i, f in enumerate(fns)]
    cps = _get(cfg, "checkpoints")
    if not isinstance(cps, list) or not all(isinstance(c, (int, float)) and 0 < c <= T for c in cps):
        raise ConfigError("expected times in (0, T]", "checkpoints")
    scheme = _get(cfg, "scheme", str, "exact_jump", check=lambda v: v in ("exact_jump", "approx"))
    max_events = _get(cfg, "max_events", int, 1_000_000, check=_positive)
    g0 = cfg.get("g0", 0.0)
    seeds = [SeedSpec(ctx["seed"], i) for i in range(ctx["replicates"])]
    if scheme == "exact_jump":
        if not triplet.is_pure_jump:
            raise ConfigError("exact_jump needs a pure-jump triplet", "scheme")

        def one(s):
            return simulate_pure_jump(g0, kernel, triplet.nu, T, grid, s, max_events=max_events)
        model = triplet
    else:
        level = _get(cfg, "level", int, check=_positive)
        from .generator import approximate_triplet

        model = approximate_triplet(triplet, level).triplet

        def one(s):
            return simulate_general(g0, kernel, triplet, level, T, grid, s, max_events=max_events)
    samples: list[SolutionSample] = _map(one, seeds, ctx["threads"])
    rows = []
    for f in tfs:
        for st in martingale_residuals(samples, model, f, cps):
            rows.append([f.name, st.s, st.t, st.mean, st.stderr, st.z, abs(st.z) <= 3.0])
    files = {"martingale.csv": _csv(["function", "s", "t", "mean", "stderr", "z", "within_3se"], rows)}
    return files, {"test_functions": [f.name for f in tfs]}, any(s.exploded for s in samples)


# ----------------------------------------------------------------------
# driver
# ----------------------------------------------------------------------


def _check_common(cfg: Mapping) -> Experiment:
    ver = cfg.get("schema_version", SCHEMA_VERSION)
    if ver != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema version {ver!r} (expected {SCHEMA_VERSION})", "schema_version")
    name = cfg.get("experiment")
    if name not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {name!r}; run list-experiments", "experiment")
    exp = EXPERIMENTS[name]
    known = set(exp.required) | set(exp.optional) | {"schema_version", "experiment", "seed", "replicates"}
    for key in exp.required:
        if key not in cfg:
            raise ConfigError("required field is missing", key)
    for key in cfg:
        if key not in known:
            raise ConfigError(f"unknown field for experiment {name}", key)
    return exp


def run_config(cfg: dict, *, seed: int | None = None, replicates: int | None = None, threads: int = 1):
    """Execute an experiment configuration.

    Returns ``(files, manifest, exploded)`` where ``files`` maps CSV names to
    their text. Raises :class:`ConfigError` or
    :class:`volterrajump.triplet.HypothesisError`.
    """
    exp = _check_common(cfg)
    cfg = dict(cfg)
    if seed is not None:
        cfg["seed"] = seed
    if replicates is not None:
        cfg["replicates"] = replicates
    ctx = {"seed": _seed(cfg), "replicates": _get(cfg, "replicates", int, 1, check=_positive),
           "threads": max(1, int(threads))}
    files, hyp, exploded = exp.run(cfg, ctx)
    manifest = {"experiment": exp.name, "schema_version": SCHEMA_VERSION, "seed": ctx["seed"],
                "replicates": ctx["replicates"], "config": cfg, "hypotheses": hyp,
                "versions": {"volterrajump": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                             "python": platform.python_version()},
                "outputs": {name: hashlib.sha256(text.encode()).hexdigest() for name, text in files.items()},
                "exploded": bool(exploded)}
    return files, manifest, exploded


def _write(out_dir: Path, files: Mapping[str, str], manifest: dict):
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (out_dir / name).write_text(text)
    manifest = dict(manifest, created=_dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"))
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_json_default)
                                           + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    return str(o)


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="volterrajump", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in (("run", "run an experiment config"), ("validate", "check a config without running")):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("config")
        sp.add_argument("--seed", type=int, help="override the master seed")
        sp.add_argument("--replicates", type=int, help="override the replicate count")
        sp.add_argument("--out-dir", help="output directory (default out/<experiment>)")
        sp.add_argument("--threads", type=int, default=1, help="worker threads for per-replicate simulation")
    sub.add_parser("list-experiments", help="print the experiment catalog")
    return p


def _validate(cfg: Mapping) -> dict:
    """Parse every field and run the cheap hypothesis checks."""
    exp = _check_common(cfg)
    _seed(cfg)
    _get(cfg, "replicates", int, 1, check=_positive)
    for key in ("T", "steps"):
        if key in cfg:
            _get(cfg, key, float if key == "T" else int, check=_positive)
    out: dict[str, Any] = {"experiment": exp.name}
    if "kernel" in cfg:
        _kernel(cfg)
    if "triplet" in cfg:
        tr = _triplet(cfg)
        out["growth_checks"] = _growth_checks(cfg, tr)
    if exp.name == "hawkes-scale":
        d = _kernel(cfg).dims[0]
        sched = ScalingSchedule.power_law(cfg["levels"], cfg.get("exponents", [1] * d), cfg.get("limit_rates"))
        out["schedule"] = sched.require(None, d).to_json()
    return out


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    if args.command == "list-experiments":
        for exp in EXPERIMENTS.values():
            print(f"{exp.name}: {exp.summary}")
            print(f"    required: {', '.join(exp.required)}")
            if exp.optional:
                print(f"    optional: {', '.join(exp.optional)}")
        return EXIT_OK
    try:
        cfg = load_config(args.config)
        if args.command == "validate":
            info = _validate(cfg)
            print(json.dumps(info, sort_keys=True, default=_json_default))
            return EXIT_OK
        files, manifest, exploded = run_config(cfg, seed=args.seed, replicates=args.replicates,
                                               threads=args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except HypothesisError as exc:
        print(f"hypothesis check failed ({exc.condition}): {exc}", file=sys.stderr)
        return EXIT_HYPOTHESIS
    out_dir = Path(args.out_dir) if args.out_dir else Path("out") / manifest["experiment"]
    _write(out_dir, files, manifest)
    print(f"wrote {', '.join(sorted(files))} and manifest.json to {out_dir}")
    if exploded:
        print("explosion flag raised in at least one replicate", file=sys.stderr)
        return EXIT_EXPLOSION
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
