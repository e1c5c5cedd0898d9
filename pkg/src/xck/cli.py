"""Command line entry point ``xck``.

Every subcommand reads one JSON scenario config (``schema_version`` is
mandatory) and writes its outputs under ``--out``. Exit codes: 0 all checks
pass, 1 a check failed, 2 bad config or unmet precondition, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import entropy as ent
from .equilibria import (
    build_family,
    charge_of_phi,
    equilibrium_density,
    partition_z,
    phi_of_charge,
)
from .errors import (
    ConfigError,
    EmptyFugacityIntervalError,
    IntegrationError,
    KernelError,
    PreconditionError,
    SupercriticalChargeError,
    WindowMismatchError,
    XckError,
)
from .evolution import (
    IntegratorConfig,
    Trajectory,
    clamp_fraction,
    evolve,
    exponential_lower_bound_violation,
    l11_growth_violation,
)
from .kernels import check_extended_bd, kernel_from_spec, truncate
from .lattice import Density, Window, embed
from .oracles import heat_abs_charge_lower, heat_green, heat_green_time_integral

log = logging.getLogger("xck")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3
MASS_TOLERANCE = 1e-12
CONSERVATION_TOLERANCE = 1e-10
EXP_SLACK = 1e-9
CLAMP_LIMIT = 1e-3
DISSIPATION_TOLERANCE = 1e-3
INTEGRAL_TOLERANCE = 1e-4
BD_TOLERANCE = 1e-9
FINE_RECORD_STEP = 1e-3
SUBCOMMANDS = ("simulate", "equilibrium", "validate-kernel", "entropy-report", "heat-oracle", "stability")

_CONFIG_ERRORS = (ConfigError, PreconditionError, EmptyFugacityIntervalError, SupercriticalChargeError,
                  KernelError, WindowMismatchError)


def fmt(x) -> str:
    return f"{float(x):.17g}"


# config -----------------------------------------------------------------------


@dataclass
class Scenario:
    raw: dict
    path: Path
    digest: str
    kernel_spec: dict | None
    n: int
    initial: dict
    integrator: dict
    diagnostics: dict = field(default_factory=dict)

    def kernel(self):
        if self.kernel_spec is None:
            raise ConfigError("config has no 'kernel' section")
        return kernel_from_spec(self.kernel_spec)

    def integrator_config(self) -> IntegratorConfig:
        try:
            return IntegratorConfig(**self.integrator)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad integrator section: {exc}") from None

    def section(self, name: str) -> dict:
        sec = self.raw.get(name, {}) or {}
        if not isinstance(sec, dict):
            raise ConfigError(f"section {name!r} must be an object")
        return sec


def load_config(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    if "schema_version" not in raw:
        raise ConfigError(f"{path}: missing mandatory 'schema_version'")
    if raw["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(f"{path}: unsupported schema_version {raw['schema_version']!r}")
    n = raw.get("n", 20)
    if not isinstance(n, int) or isinstance(n, bool) or n < 1:
        raise ConfigError(f"window size n must be an integer >= 1, got {n!r}")
    integ = raw.get("integrator", {"t_end": 1.0})
    if not isinstance(integ, dict):
        raise ConfigError("section 'integrator' must be an object")
    return Scenario(
        raw=raw,
        path=path,
        digest=hashlib.sha256(text.encode()).hexdigest(),
        kernel_spec=raw.get("kernel"),
        n=n,
        initial=raw.get("initial", {"type": "delta", "k": 0}),
        integrator=integ,
        diagnostics=raw.get("diagnostics", {}) or {},
    )


def _resolve_phi(family, sec: dict) -> float:
    if "phi" in sec:
        return float(sec["phi"])
    if "charge" in sec:
        return phi_of_charge(family, float(sec["charge"]))
    raise ConfigError("expected 'phi' or 'charge'")


def build_initial(sc: Scenario, kernel) -> Density:
    try:
        return _build_initial(sc, kernel)
    except KeyError as exc:
        raise ConfigError(f"initial condition is missing field {exc}") from None


def _build_initial(sc: Scenario, kernel) -> Density:
    spec = sc.initial
    kind = spec.get("type")
    n = sc.n
    base_dir = sc.path.parent
    if kind == "delta":
        k = int(spec.get("k", 0))
        if abs(k) > n:
            raise ConfigError(f"delta site {k} outside window n={n}")
        f = Density.delta(n, k)
    elif kind == "two_point":
        sites = [int(s) for s in spec["sites"]]
        weights = [float(w) for w in spec.get("weights", [0.5, 0.5])]
        if len(sites) != 2 or len(weights) != 2:
            raise ConfigError("two_point needs two sites and two weights")
        v = np.zeros(2 * n + 1)
        for s, w in zip(sites, weights):
            if abs(s) > n:
                raise ConfigError(f"site {s} outside window n={n}")
            v[s + n] += w
        f = Density(n, v)
    elif kind in ("equilibrium", "perturbed_equilibrium"):
        family = build_family(kernel)
        phi = _resolve_phi(family, spec)
        f = equilibrium_density(family, phi, n).as_density(normalize=True)
        if kind == "perturbed_equilibrium":
            f = ent.perturb(f, float(spec.get("delta", 0.1)))
    elif kind == "csv":
        p = Path(spec["path"])
        p = p if p.is_absolute() else base_dir / p
        if not p.exists():
            raise ConfigError(f"initial condition file {p} does not exist")
        try:
            f = Density.from_csv(p)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if f.n > n:
            raise ConfigError(f"initial condition needs n >= {f.n}, config has n={n}")
        f = embed(f, n)
    else:
        raise ConfigError(f"unknown initial condition type {kind!r}")
    if abs(f.mass - 1.0) > MASS_TOLERANCE:
        if f.mass <= 0:
            raise ConfigError("initial condition has no mass")
        log.warning("initial condition has mass %.17g; renormalizing to 1", f.mass)
        f = f.normalized()
    return f


# output helpers ----------------------------------------------------------------


def _versions() -> dict:
    try:
        from importlib.metadata import version
        pkg = version("artifact")
    except Exception:  # not installed, e.g. run from a source tree
        pkg = "unknown"
    return {"xck": pkg, "numpy": np.__version__, "python": platform.python_version()}


def write_manifest(out: Path, sc: Scenario, command: str, checks: dict, started: float, extra=None) -> None:
    manifest = {
        "command": command,
        "config_sha256": sc.digest,
        "config": sc.raw,
        "versions": _versions(),
        "wall_time_s": time.perf_counter() - started,
        "checks": checks,
        "passed": all(c["pass"] is not False for c in checks.values()),
    }
    if extra:
        manifest.update(extra)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def _check(value: float, limit: float, *, judged: bool = True) -> dict:
    """Check record; ``judged=False`` keeps the value but marks the check skipped."""
    if not judged:
        return {"value": float(value), "limit": float(limit), "pass": None,
                "status": f"skipped: recording step above {FINE_RECORD_STEP:g}"}
    return {"value": float(value), "limit": float(limit), "pass": bool(value <= limit)}


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([x if isinstance(x, (str, int)) else fmt(x) for x in row])


# subcommands ----------------------------------------------------------------------


def cmd_simulate(sc: Scenario, out: Path, threads: int) -> int:
    started = time.perf_counter()
    kernel = sc.kernel()
    diag = sc.diagnostics
    # fail on missing equilibria before spending time on the run
    family = phi = None
    if diag.get("entropy_phi") is not None or diag.get("ckp_alpha") is not None:
        family = build_family(kernel)
        phi = float(diag.get("entropy_phi", 1.0))
        if not family.contains(phi):
            raise PreconditionError(f"entropy reference phi={phi} outside I_K={family.interval}")
    f0 = build_initial(sc, kernel)
    cfg = sc.integrator_config()
    kern = truncate(kernel, sc.n)
    traj = evolve(kern, f0, cfg)

    dm, dq = traj.conservation_drift()
    checks = {
        "mass_conservation": _check(dm, CONSERVATION_TOLERANCE),
        "charge_conservation": _check(dq, CONSERVATION_TOLERANCE),
        "clamp_fraction": _check(clamp_fraction(traj), CLAMP_LIMIT),
        "exponential_lower_bound": _check(exponential_lower_bound_violation(traj), EXP_SLACK),
        "l11_growth": _check(l11_growth_violation(traj), 0.0),
    }
    columns = [traj.times, traj.masses(), traj.charges(), traj.abs_charges(), traj.l11_norms()]
    header = ["t", "mass", "charge", "abs_charge", "l11", "clamp_count"]
    if family is not None:
        ref = equilibrium_density(family, phi, sc.n).as_density(normalize=True)
        if diag.get("entropy_phi") is not None:
            rep = ent.dissipation_check(traj, ref, kern)
            checks["entropy_nonincreasing"] = _check(rep.monotone_violation, ent.MONOTONE_SLACK)
            # both defects are quadrature errors; only judged on a fine recording grid
            fine = np.max(np.diff(traj.times), initial=0.0) <= FINE_RECORD_STEP * (1 + 1e-9)
            checks["entropy_dissipation_defect"] = _check(rep.dissipation_defect, DISSIPATION_TOLERANCE, judged=fine)
            checks["entropy_integral_defect"] = _check(rep.integral_defect, INTEGRAL_TOLERANCE, judged=fine)
            bound = ent.trajectory_l11_bound(traj, family, phi, ref)
            checks["l11_trajectory_bound"] = _check(bound.sup_l11, bound.bound)
            header += ["entropy", "wN"]
            columns += [rep.h_series, rep.w_series]
        if diag.get("ckp_alpha") is not None:
            alpha = float(diag["ckp_alpha"])
            worst = max(ent.ckp_check(v, ref, lambda k: alpha * (1 + np.abs(k))) for v in traj.values[1:])
            checks["ckp"] = _check(worst.lhs, worst.rhs)
    lb = diag.get("lower_bound")
    if lb:
        k0 = int(lb.get("k0", int(np.argmax(f0.values)) - sc.n))
        cert = ent.lower_bound_certificate(kern.c_upper, kern.c_lower, f0.mass, f0[k0], k0,
                                           lb.get("sequence", ent.GEOMETRIC), float(lb.get("t0", 1.0)),
                                           int(lb.get("l_max", 5)), window=sc.n)
        worst, _ = ent.certificate_violation(cert, traj)
        checks["lower_bound_certificate"] = _check(worst, EXP_SLACK)

    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for i in range(len(traj)):
        row = [c[i] for c in columns[:5]] + [int(traj.clamp_counts[i])] + [c[i] for c in columns[5:]]
        rows.append(row)
    write_csv(out / "trajectory.csv", header, rows)
    if diag.get("dump_states"):
        sdir = out / "states"
        sdir.mkdir(exist_ok=True)
        for i, d in enumerate(traj.states):
            d.to_csv(sdir / f"state_{i:06d}.csv")
    write_manifest(out, sc, "simulate", checks, started,
                   {"steps": traj.steps, "halvings": traj.halvings, "records": len(traj)})
    return _report(checks)


def cmd_equilibrium(sc: Scenario, out: Path, threads: int) -> int:
    started = time.perf_counter()
    family = build_family(sc.kernel())
    phi = _resolve_phi(family, sc.section("equilibrium") or {"phi": 1.0})
    eq = equilibrium_density(family, phi, sc.n)
    payload = {
        "kappa": family.kappa,
        "lambda_plus": family.lambda_plus,
        "lambda_minus": family.lambda_minus,
        "phi_minus": family.phi_minus,
        "phi_plus": family.phi_plus,
        "phi": phi,
        "Z": partition_z(family, phi),
        "charge": charge_of_phi(family, phi),
        "tail_mass": eq.tail_mass,
    }
    out.mkdir(parents=True, exist_ok=True)
    (out / "equilibrium.json").write_text(json.dumps(payload, indent=2) + "\n")
    eq.as_density().to_csv(out / "equilibrium.csv")
    write_manifest(out, sc, "equilibrium", {}, started)
    print(json.dumps(payload))
    return EXIT_OK


def cmd_validate_kernel(sc: Scenario, out: Path, threads: int) -> int:
    started = time.perf_counter()
    window = int(sc.section("validate").get("window", max(sc.n, 1)))
    report = check_extended_bd(sc.kernel(), window)
    out.mkdir(parents=True, exist_ok=True)
    (out / "kernel_report.json").write_text(json.dumps(report.as_dict(), indent=2) + "\n")
    checks = {"extended_bd": _check(report.bd_max_violation, BD_TOLERANCE)}
    checks["extended_bd"]["pass"] = report.bd_max_violation < BD_TOLERANCE
    write_manifest(out, sc, "validate-kernel", checks, started)
    print(json.dumps(report.as_dict()))
    return _report(checks)


def _load_run(run_dir: Path):
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.exists():
        raise ConfigError(f"{run_dir} is not a run directory (no manifest.json)")
    manifest = json.loads(manifest_path.read_text())
    raw = manifest.get("config", {})
    sdir = run_dir / "states"
    files = sorted(sdir.glob("state_*.csv")) if sdir.is_dir() else []
    if not files:
        raise ConfigError(f"{run_dir} has no dumped states; rerun with diagnostics.dump_states")
    times = []
    with open(run_dir / "trajectory.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            times.append(float(row["t"]))
    if len(times) != len(files):
        raise ConfigError(f"{run_dir}: {len(times)} trajectory rows but {len(files)} state files")
    return raw, np.array(times), [Density.from_csv(p) for p in files]


def cmd_entropy_report(sc_path: Path, out: Path | None, threads: int) -> int:
    run_dir = sc_path if sc_path.is_dir() else sc_path.parent
    raw, times, states = _load_run(run_dir)
    sc = Scenario(raw, run_dir / "manifest.json", "", raw.get("kernel"), int(raw.get("n", states[0].n)),
                  raw.get("initial", {}), raw.get("integrator", {}), raw.get("diagnostics", {}) or {})
    sc.digest = hashlib.sha256(json.dumps(raw, sort_keys=True).encode()).hexdigest()
    kernel = sc.kernel()
    family = build_family(kernel)
    phi = float(sc.diagnostics.get("entropy_phi", 1.0))
    n = states[0].n
    ref = equilibrium_density(family, phi, n).as_density(normalize=True)
    kern = truncate(kernel, n)
    traj = Trajectory(times, np.array([s.values for s in states]), Window(n), kern, np.zeros(len(times), int))
    rep = ent.dissipation_check(traj, ref, kern)
    out = run_dir if out is None else out
    out.mkdir(parents=True, exist_ok=True)
    (out / "entropy_report.json").write_text(json.dumps(rep.as_dict(), indent=2, default=_json_default) + "\n")
    write_csv(out / "entropy.csv", ["t", "H", "wN"], zip(rep.times, rep.h_series, rep.w_series))
    fine = np.max(np.diff(times), initial=0.0) <= FINE_RECORD_STEP * (1 + 1e-9)
    checks = {
        "entropy_nonincreasing": _check(rep.monotone_violation, ent.MONOTONE_SLACK),
        "entropy_dissipation_defect": _check(rep.dissipation_defect, DISSIPATION_TOLERANCE, judged=fine),
        "entropy_integral_defect": _check(rep.integral_defect, INTEGRAL_TOLERANCE, judged=fine),
    }
    print(json.dumps(rep.as_dict(), default=_json_default))
    return _report(checks)


def cmd_heat_oracle(sc: Scenario, out: Path, threads: int) -> int:
    started = time.perf_counter()
    sec = sc.section("heat_oracle")
    times = [float(t) for t in sec.get("times", [0.5, 1.0, 2.0])]
    if any(t < 0 for t in times):
        raise ConfigError("heat oracle times must be nonnegative")
    f00 = float(sec.get("f0_at_0", 1.0))
    q0 = float(sec.get("q0_abs", 0.0))
    rows = [(t, heat_green(t, 0), heat_green_time_integral(t), heat_abs_charge_lower(t, f00, q0)) for t in times]
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "heat_oracle.csv", ["t", "G0", "G0_integral", "abs_charge_lower"], rows)
    write_manifest(out, sc, "heat-oracle", {}, started)
    return EXIT_OK


def cmd_stability(sc: Scenario, out: Path, threads: int) -> int:
    started = time.perf_counter()
    kernel = sc.kernel()
    family = build_family(kernel)
    sec = sc.section("stability")
    phi = _resolve_phi(family, sec) if ("phi" in sec or "charge" in sec) else 1.0
    deltas = [float(d) for d in sec.get("deltas", [0.1, 0.03, 0.01])]
    if any(d < 0 for d in deltas):
        raise ConfigError("deltas must be nonnegative")
    cfg = sc.integrator_config() if "integrator" in sc.raw else IntegratorConfig(t_end=float(sec.get("t_end", 5.0)))
    rows = ent.stability_probe(kernel, family, phi, deltas, cfg.t_end, n=sc.n, cfg=cfg, threads=threads)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "stability.csv", ["delta", "h0", "deviation", "bound", "alpha", "holds"],
              [(r.delta, r.h0, r.deviation, r.bound, r.alpha, int(r.holds)) for r in rows])
    checks = {f"delta={fmt(r.delta)}": {"value": r.deviation, "limit": r.bound, "pass": bool(r.holds)} for r in rows}
    write_manifest(out, sc, "stability", checks, started, {"phi": phi})
    return _report(checks)


def _report(checks: dict) -> int:
    failed = [name for name, c in checks.items() if c["pass"] is False]
    for name in failed:
        c = checks[name]
        print(f"check failed: {name} (value {c['value']:.3e}, limit {c['limit']:.3e})", file=sys.stderr)
    return EXIT_CHECK if failed else EXIT_OK


_HANDLERS = {
    "simulate": cmd_simulate,
    "equilibrium": cmd_equilibrium,
    "validate-kernel": cmd_validate_kernel,
    "heat-oracle": cmd_heat_oracle,
    "stability": cmd_stability,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="xck", description="Charge-exchange kinetics toolkit")
    ap.add_argument("command", choices=SUBCOMMANDS)
    ap.add_argument("--config", required=True, help="scenario JSON (run directory for entropy-report)")
    ap.add_argument("--out", default=None, help="output directory")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def thread_count(cli_value: int) -> int:
    env = os.environ.get("XCK_THREADS")
    if env:
        try:
            value = int(env)
        except ValueError:
            raise ConfigError(f"XCK_THREADS must be an integer, got {env!r}") from None
    else:
        value = cli_value
    if value < 1:
        raise ConfigError(f"thread count must be >= 1, got {value}")
    return value


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        threads = thread_count(args.threads)
        if args.command == "entropy-report":
            return cmd_entropy_report(Path(args.config), Path(args.out) if args.out else None, threads)
        sc = load_config(args.config)
        out = Path(args.out or sc.raw.get("output_dir") or f"xck_out/{args.command}")
        return _HANDLERS[args.command](sc, out, threads)
    except _CONFIG_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IntegrationError, XckError, FloatingPointError, OverflowError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
