"""Command-line front end.

Exit status: 0 success, 1 usage or config error, 2 a mathematical check
failed (inadmissible measure, envelope violated, invalid certificate).
Every output file is written to a temporary name and renamed into place;
``manifest.json`` is written last and lists the sha256 of every artifact.
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
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, load
from .density import (NonQuadraticTail, InsufficientTailMass, PointMassError, drift_constant,
                      estimate_density, tail_decay_fit, verify_upper_envelope)
from .fundamental import FundamentalSolution
from .malliavin import scaling_experiment
from .noise import truncation_diagnostic
from .phi import InadmissibleMeasure, certify_gamma, gamma_grid, phi, phi_profile
from .solver import simulate_ensemble
from .spectral import IndeterminateIntegral, SpectralMeasure, dalang_integral

EXIT_OK, EXIT_USAGE, EXIT_FAIL = 0, 1, 2
NATURAL_GAMMA = {"heat": 1.0, "wave": 3.0, "damped_wave": 3.0}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- output helpers -----------------------------------------------------------------


def atomic_write(path: Path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return v


def csv_bytes(columns, rows, config_hash=None, seed=None) -> bytes:
    buf = io.StringIO()
    buf.write(f"# tool=spdelab {__version__} config_hash={config_hash or 'none'} "
              f"seed={'none' if seed is None else seed}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue().encode()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def json_bytes(obj) -> bytes:
    return (json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n").encode()


class Outputs:
    """Collects artifacts in a directory and seals them with a manifest."""

    def __init__(self, out_dir, command: str, cfg: ExperimentConfig | None = None, seed=None):
        self.dir = Path(out_dir) if out_dir else None
        self.command = command
        self.cfg = cfg
        self.seed = seed
        self.files = {}

    @property
    def config_hash(self):
        return self.cfg.hash if self.cfg else None

    def csv(self, name, columns, rows):
        self._put(name, csv_bytes(columns, rows, self.config_hash, self.seed))

    def json(self, name, obj):
        self._put(name, json_bytes({"tool": "spdelab", "version": __version__,
                                    "config_hash": self.config_hash, **obj}))

    def _put(self, name, data: bytes):
        if self.dir is None:
            return
        atomic_write(self.dir / name, data)
        self.files[name] = hashlib.sha256(data).hexdigest()

    def seal(self, **info):
        if self.dir is None:
            return
        manifest = {"tool": "spdelab", "version": __version__, "command": self.command,
                    "config_hash": self.config_hash, "seed": self.seed,
                    "config": self.cfg.to_dict() if self.cfg else None,
                    "files": self.files, **info}
        atomic_write(self.dir / "manifest.json", json_bytes(manifest))


def read_samples(path) -> np.ndarray:
    """First column of a CSV, skipping comment and header lines."""
    vals = []
    with open(path, newline="") as fh:
        for row in csv.reader(line for line in fh if not line.startswith("#")):
            if not row:
                continue
            try:
                vals.append(float(row[0]))
            except ValueError:
                if vals:
                    raise
    return np.asarray(vals)


def read_manifest(run_dir) -> dict:
    p = Path(run_dir) / "manifest.json"
    if not p.is_file():
        raise UsageError(f"{run_dir} has no manifest.json")
    return json.loads(p.read_text())


# -- command helpers ----------------------------------------------------------------


def _load_cfg(args, check_admissible=True) -> ExperimentConfig:
    if not getattr(args, "config", None):
        raise UsageError("--config is required")
    cfg = load(args.config, check_admissible=check_admissible)
    return cfg.with_overrides(seed=getattr(args, "seed", None), samples=getattr(args, "samples", None),
                              threads=getattr(args, "threads", None))


def _measure_from_args(args) -> SpectralMeasure:
    spec = {"kind": args.measure, "dim": args.dim}
    if args.beta is not None:
        spec["beta"] = args.beta
    if args.ell is not None:
        spec["ell"] = args.ell
    return SpectralMeasure.from_dict(spec)


def _out_dir(args, cfg=None):
    return args.out or (cfg.out if cfg else None)


def _print_json(obj):
    sys.stdout.write(json_bytes(obj).decode())


# -- commands -----------------------------------------------------------------------


def cmd_check_measure(args) -> int:
    cfg = None
    if args.config:
        cfg = _load_cfg(args, check_admissible=False)
        mu = cfg.measure
    elif args.measure:
        mu = _measure_from_args(args)
    else:
        raise UsageError("give --config or --measure")
    try:
        value = dalang_integral(mu, args.eta)
    except IndeterminateIntegral as exc:
        value = math.nan
        note = str(exc)
    else:
        note = ""
    finite = bool(math.isfinite(value))
    report = {"kind": mu.kind, "dim": mu.dim, "eta": args.eta,
              "value": value if finite else None, "finite": finite}
    if note:
        report["note"] = note
    _print_json(report)
    out = Outputs(_out_dir(args, cfg), "check-measure", cfg)
    out.json("check_measure.json", report)
    out.seal(measure=mu.to_dict())
    return EXIT_OK if finite else EXIT_FAIL


def cmd_phi(args) -> int:
    cfg = None
    if args.config:
        cfg = _load_cfg(args, check_admissible=False)
        sol, mu = cfg.operator, cfg.measure
    elif args.operator and args.measure:
        sol = FundamentalSolution(args.operator, args.dim)
        mu = _measure_from_args(args)
    else:
        raise UsageError("give --config or both --operator and --measure")
    if args.t_max < 0 or args.points < 1:
        raise UsageError("--t-max must be >= 0 and --points >= 1")
    times = np.array([0.0]) if args.t_max == 0 else np.linspace(0.0, args.t_max, args.points + 1)
    prof = phi_profile(mu, sol, times, method=args.method)
    rows = list(prof.rows())
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["t", "phi", "psi", "method", "err"])
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    out = Outputs(_out_dir(args, cfg), "phi", cfg)
    out.csv("phi.csv", ["t", "phi", "psi", "method", "err"], rows)
    status = EXIT_OK
    info = {"operator": sol.to_dict(), "measure": mu.to_dict()}
    if args.gamma is not None:
        cert = certify_gamma(phi_profile(mu, sol, gamma_grid(), method=args.method), args.gamma)
        out.json("gamma_certificate.json", cert.to_dict())
        info["gamma_certificate"] = {"gamma": cert.gamma, "valid": cert.valid}
        sys.stderr.write(f"gamma={cert.gamma:g} certificate {'VALID' if cert.valid else 'INVALID'}"
                         f"{': ' + cert.diagnostic if cert.diagnostic else ''}\n")
        status = EXIT_OK if cert.valid else EXIT_FAIL
    out.seal(**info)
    return status


def _need_grid(cfg):
    if cfg.grid is None:
        raise UsageError("config has no [grid] table")


def cmd_simulate(args) -> int:
    cfg = _load_cfg(args)
    _need_grid(cfg)
    out_dir = _out_dir(args, cfg)
    if not out_dir:
        raise UsageError("--out is required for simulate")
    ens = simulate_ensemble(cfg.grid, cfg.measure, cfg.operator, cfg.coeffs, cfg.data,
                            cfg.samples, cfg.seed, cfg.t_obs, cfg.x_obs, threads=cfg.threads)
    out = Outputs(out_dir, "simulate", cfg, cfg.seed)
    out.csv("samples.csv", ["u"], ((v,) for v in ens.values))
    c3 = drift_constant(cfg.coeffs, cfg.operator, cfg.t_obs)
    out.seal(samples=ens.n, scheme=ens.scheme, grid=cfg.grid.to_dict(), t_obs=ens.t_obs,
             x_obs=list(ens.x_obs), i0=ens.i0, phi_truncated=ens.phi_truncated,
             phi=phi(cfg.measure, cfg.operator, cfg.t_obs), c3=c3,
             truncation=truncation_diagnostic(cfg.grid, cfg.measure, cfg.operator, cfg.t_obs),
             mean=float(ens.values.mean()), variance=float(ens.values.var(ddof=1)))
    sys.stderr.write(f"simulated {ens.n} paths with {ens.scheme} -> {out_dir}\n")
    return EXIT_OK


def _density_inputs(args):
    """Samples plus (phi, i0, c3, horizon, config, seed) from a run or explicit flags."""
    if args.run:
        man = read_manifest(args.run)
        if man.get("command") != "simulate":
            raise UsageError(f"{args.run} is not a simulate run")
        x = read_samples(Path(args.run) / "samples.csv")
        from .config import from_dict
        cfg = from_dict(man["config"])
        phi_v = args.phi if args.phi is not None else man["phi_truncated"]
        i0 = args.i0 if args.i0 is not None else man["i0"]
        c3 = args.c3 if args.c3 is not None else man["c3"]
        return x, phi_v, i0, c3, man["t_obs"], cfg, man.get("seed")
    if args.input:
        if args.phi is None:
            raise UsageError("--phi is required with --input")
        return (read_samples(args.input), args.phi, args.i0 or 0.0, args.c3 or 0.0,
                args.horizon, None, None)
    raise UsageError("give --run DIR or --input FILE")


def _density_common(args, command):
    x, phi_v, i0, c3, horizon, cfg, seed = _density_inputs(args)
    bwf = args.bandwidth_factor or (cfg.bandwidth_factor if cfg else 1.0)
    try:
        est = estimate_density(x, bandwidth_factor=bwf, min_samples=args.min_samples)
    except PointMassError as exc:
        sys.stderr.write(f"point mass: {exc}\n")
        return None, EXIT_FAIL
    fit = verify_upper_envelope(est, phi_v, i0, c3, horizon)
    report = {**fit.to_dict(), "horizon": horizon, "n": est.n, "bandwidth": est.bandwidth}
    try:
        report["tail_fit"] = tail_decay_fit(est, i0, phi_v, fit.c2).to_dict()
    except (InsufficientTailMass, NonQuadraticTail) as exc:
        report["tail_fit"] = {"refused": str(exc)}
    out = Outputs(args.out, command, cfg, seed)
    out.csv("density.csv", ["z", "p_hat", "ci", "bound"],
            zip(est.centers, est.density, est.ci, fit.bound))
    out.json("density.json", report)
    out.seal(source=str(args.run or args.input), status=fit.status)
    _print_json(report)
    return fit, EXIT_OK


def cmd_density(args) -> int:
    _, code = _density_common(args, "density")
    return code


def cmd_verify(args) -> int:
    fit, code = _density_common(args, "verify-upper-bound")
    if fit is None:
        return code
    if not fit.passed:
        sys.stderr.write(f"upper envelope FAILED: {fit.violations} violations, worst bin at "
                         f"z = {fit.worst_bin}\n")
        return EXIT_FAIL
    return EXIT_OK


def cmd_malliavin(args) -> int:
    cfg = _load_cfg(args)
    _need_grid(cfg)
    mcfg = cfg.extra.get("malliavin", {})
    deltas = args.deltas or mcfg.get("deltas")
    if not deltas:
        raise UsageError("give --deltas or [malliavin] deltas")
    paths = args.samples or mcfg.get("paths") or cfg.samples
    lo, hi = mcfg.get("slope_band", (0.85, 1.15))
    max_ratio = float(mcfg.get("max_ratio", 5.0))
    rep = scaling_experiment(cfg.grid, cfg.measure, cfg.operator, cfg.coeffs, cfg.data,
                             deltas, int(paths), cfg.seed, x_obs=cfg.x_obs)
    out = Outputs(_out_dir(args, cfg), "malliavin-scaling", cfg, cfg.seed)
    out.csv("scaling.csv", ["delta", "phi_delta", "mean_sq_norm"],
            zip(rep.deltas, rep.phi_delta, rep.mean_sq_norm))
    out.csv("inverse_moment.csv", ["t", "phi_t", "mean_inv_sq_norm", "product"],
            zip(rep.t_grid, rep.phi_t, rep.mean_inv_norm, rep.product))
    ok = lo <= rep.slope <= hi and rep.ratio < max_ratio
    summary = {**rep.to_dict(), "slope_band": [lo, hi], "max_ratio": max_ratio,
               "status": "PASS" if ok else "FAILED"}
    out.json("scaling.json", summary)
    out.seal(status=summary["status"])
    _print_json({k: summary[k] for k in ("slope", "slope_se", "ratio", "positivity_failures",
                                         "status")})
    return EXIT_OK if ok else EXIT_FAIL


def _find_runs(root: Path):
    runs = []
    for p in sorted([root, *root.iterdir()] if root.is_dir() else []):
        if p.is_dir() and (p / "manifest.json").is_file() and p.name != "report":
            runs.append(p)
    return runs


def cmd_report(args) -> int:
    root = Path(args.run_dir)
    runs = _find_runs(root)
    if not runs:
        raise UsageError(f"no completed runs under {root}")
    mans = [(p, read_manifest(p)) for p in runs]
    hashes = {m.get("config_hash") for _, m in mans}
    if len(hashes) != 1 or None in hashes:
        raise UsageError(f"refusing to merge runs with different config hashes: "
                         f"{sorted(str(h) for h in hashes)}")
    (config_hash,) = hashes
    for p, m in mans:
        for name, digest in m.get("files", {}).items():
            data = (p / name).read_bytes()
            if hashlib.sha256(data).hexdigest() != digest:
                raise UsageError(f"{p / name} does not match its manifest checksum")
    from .config import from_dict
    cfg = from_dict(mans[0][1]["config"])
    out = Outputs(args.out or root / "report", "report", cfg)
    bundle = {"runs": [{"path": str(p), **{k: m.get(k) for k in ("command", "seed", "samples",
                                                                    "status")}}
                       for p, m in mans],
              "manifests": [m for _, m in mans]}
    sims = [(p, m) for p, m in mans if m["command"] == "simulate"]
    if sims:
        seeds = [m["seed"] for _, m in sims]
        if len(set(seeds)) != len(seeds):
            raise UsageError(f"runs share seeds {seeds}; pooling would duplicate paths")
        x = np.concatenate([read_samples(p / "samples.csv") for p, _ in sims])
        m0 = sims[0][1]
        est = estimate_density(x, bandwidth_factor=cfg.bandwidth_factor,
                               min_samples=args.min_samples)
        fit = verify_upper_envelope(est, m0["phi_truncated"], m0["i0"], m0["c3"], m0["t_obs"])
        out.csv("density_vs_bound.csv", ["z", "p_hat", "ci", "bound"],
                zip(est.centers, est.density, est.ci, fit.bound))
        bundle["pooled"] = {"n": int(x.size), "seeds": seeds, "envelope": fit.to_dict()}
    try:
        times = np.linspace(0.0, cfg.t_obs or 1.0, 41)
        prof = phi_profile(cfg.measure, cfg.operator, times)
        out.csv("phi_vs_t.csv", ["t", "phi", "psi", "method", "err"], list(prof.rows()))
        g = NATURAL_GAMMA[cfg.operator.kind]
        cert = certify_gamma(phi_profile(cfg.measure, cfg.operator, gamma_grid()), g)
        bundle["gamma_certificate"] = cert.to_dict()
    except (InadmissibleMeasure, IndeterminateIntegral) as exc:
        bundle["gamma_certificate"] = {"refused": str(exc)}
    scal = [(p, m) for p, m in mans if m["command"] == "malliavin-scaling"]
    for i, (p, _) in enumerate(scal):
        rows = [r for r in csv.reader(l for l in (p / "scaling.csv").read_text().splitlines()
                                      if not l.startswith("#"))][1:]
        out.csv(f"scaling_{i}.csv", ["delta", "phi_delta", "mean_sq_norm"], rows)
    out.json("report.json", bundle)
    out.seal(merged=len(mans), config_hash_checked=config_hash)
    _print_json({"runs": len(mans), "pooled_n": bundle.get("pooled", {}).get("n")})
    return EXIT_OK


def cmd_acceptance(args) -> int:
    from .acceptance import run_all
    results = run_all(cache_dir=args.cache, only=args.only, threads=args.threads or 2)
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL


# -- parser -------------------------------------------------------------------------


def _common(p, samples=True):
    p.add_argument("--config", help="TOML experiment file")
    p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    if samples:
        p.add_argument("--samples", type=int, help="override run.samples")
    p.add_argument("--out", help="output directory")
    p.add_argument("--threads", type=int, help="worker threads (speed only)")


def _measure_flags(p):
    p.add_argument("--measure", choices=["white", "riesz", "exponential"])
    p.add_argument("--dim", type=int, default=1)
    p.add_argument("--beta", type=float)
    p.add_argument("--ell", type=float)


def _density_flags(p):
    p.add_argument("--run", help="simulate output directory")
    p.add_argument("--input", help="CSV of samples (first column)")
    p.add_argument("--phi", type=float)
    p.add_argument("--i0", type=float)
    p.add_argument("--c3", type=float)
    p.add_argument("--horizon", type=float, default=1.0)
    p.add_argument("--bandwidth-factor", type=float)
    p.add_argument("--min-samples", type=int, default=10_000)
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="spdelab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"spdelab {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check-measure", help="Dalang integral of a measure")
    _common(p)
    _measure_flags(p)
    p.add_argument("--eta", type=float, default=1.0)
    p.set_defaults(func=cmd_check_measure)

    p = sub.add_parser("phi", help="tabulate Phi(t) and Psi(t)")
    _common(p)
    p.add_argument("--operator", choices=["heat", "wave", "damped_wave"])
    _measure_flags(p)
    p.add_argument("--t-max", type=float, required=True)
    p.add_argument("--points", type=int, default=50)
    p.add_argument("--method", choices=["auto", "closed", "quadrature"], default="auto")
    p.add_argument("--gamma", type=float, help="also certify Phi(tau) >= C tau^gamma")
    p.set_defaults(func=cmd_phi)

    p = sub.add_parser("simulate", help="sample u(t*, x*) over independent paths")
    _common(p)
    p.set_defaults(func=cmd_simulate)

    for name, func in (("density", cmd_density), ("verify-upper-bound", cmd_verify)):
        p = sub.add_parser(name, help="density estimate and Gaussian envelope fit")
        _density_flags(p)
        p.set_defaults(func=func)

    p = sub.add_parser("malliavin-scaling", help="window-norm scaling of the derivative")
    _common(p)
    p.add_argument("--deltas", type=float, nargs="+")
    p.set_defaults(func=cmd_malliavin)

    p = sub.add_parser("report", help="merge runs into one bundle")
    p.add_argument("run_dir")
    p.add_argument("--out")
    p.add_argument("--min-samples", type=int, default=10_000)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("acceptance", help="run the acceptance criteria")
    p.add_argument("--cache", help="directory for cached ensembles")
    p.add_argument("--only", type=int, nargs="+")
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_acceptance)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InadmissibleMeasure as exc:
        sys.stderr.write(f"inadmissible: {exc}\n")
        return EXIT_FAIL
    except (UsageError, ConfigError, FileNotFoundError, ValueError, NotImplementedError) as exc:
        sys.stderr.write(f"spdelab {args.command}: {exc}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
