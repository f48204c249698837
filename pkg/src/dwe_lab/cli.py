"""Experiment runner: TOML configs in, CSV/JSON artifacts and a report out.

Subcommands map onto the module pipelines (spectrum, resolvent-scan,
tube-mass, pressure, egorov, cylinders, decay, all).  Heavy intermediates
(eigendecompositions) are cached under content-addressed keys; outputs are
deterministic for a fixed config (seeded quasi-random sampling everywhere).
Exit codes: 0 all hard assertions pass, 1 an assertion failed, 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .geometry import ConformalMetric, DampingField, build_damping, build_metric

SUBCOMMANDS = ("spectrum", "resolvent-scan", "tube-mass", "pressure", "egorov",
               "cylinders", "decay", "all")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    """Validated experiment parameters (round-trips losslessly through TOML)."""

    geometry: dict = field(default_factory=lambda: {"preset": "y-channel", "eps": 0.1})
    damping: dict = field(default_factory=lambda: {"preset": "smooth-well"})
    N: int = 32
    hbar_sweep: tuple = (1 / 16, 1 / 32, 1 / 64)
    hbar_mode_sweep: tuple = (1 / 24, 1 / 32, 1 / 40)
    nu_bar: float = 0.42
    nu_bar_scan: float = 0.47
    n0: float = 2.0
    kappa0: float = 0.15
    kappa1: float = 0.4
    eps_cell: float = 0.3
    eps_tilde0: float = 0.6
    delta: float = 0.3
    window: tuple = (0.0, 50.0)
    out_dir: str = "out"
    cache: bool = True
    pressure_eps: float = 0.05
    pressure_horizon_periods: float = 8.0
    tube_neighborhood: float = 0.3
    decay_T: float = 40.0
    decay_dt: float = 2e-3
    seed: int = 7

    def validate(self):
        errors = []
        if self.N % 2 or self.N < 16:
            errors.append("N must be even and >= 16")
        if not (0 < self.nu_bar < 0.5):
            errors.append("nu_bar must be in (0, 1/2)")
        if not (0 < self.nu_bar_scan < 0.5):
            errors.append("nu_bar_scan must be in (0, 1/2)")
        if self.n0 <= 0:
            errors.append("n0 must be positive")
        if self.eps_cell > self.eps_tilde0 / 2 + 1e-12:
            errors.append("eps_cell must be <= eps_tilde0 / 2")
        if any(h <= 0 for h in self.hbar_sweep):
            errors.append("hbar sweep values must be positive")
        if self.geometry.get("preset") not in ("flat", "y-channel", "bumpy"):
            errors.append(f"unknown geometry preset {self.geometry.get('preset')!r}")
        if self.damping.get("preset") not in ("zero", "constant", "smooth-well"):
            errors.append(f"unknown damping preset {self.damping.get('preset')!r}")
        if errors:
            raise ConfigError("; ".join(errors))
        return self

    @staticmethod
    def from_toml(path: str | Path) -> "ExperimentConfig":
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
        known = {f.name for f in dataclasses.fields(ExperimentConfig)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        for key in ("hbar_sweep", "hbar_mode_sweep", "window"):
            if key in raw:
                raw[key] = tuple(raw[key])
        return ExperimentConfig(**raw).validate()

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for key in ("hbar_sweep", "hbar_mode_sweep", "window"):
            d[key] = list(d[key])
        return d

    def content_hash(self, stage: str) -> str:
        payload = json.dumps({"config": self.to_dict(), "stage": stage,
                              "version": __version__}, sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:24]

    def build_geometry(self) -> ConformalMetric:
        kw = dict(self.geometry)
        preset = kw.pop("preset")
        if "modes" in kw:
            kw["modes"] = tuple(tuple(m) for m in kw["modes"])
        return build_metric(preset, N=self.N, **kw)

    def build_damping(self) -> DampingField:
        kw = dict(self.damping)
        preset = kw.pop("preset")
        return build_damping(preset, N=self.N, **kw)


@dataclass
class CheckEntry:
    name: str
    invariant: str       # which module invariant this instantiates
    kind: str            # "assert" | "trend"
    passed: bool
    value: float
    detail: str = ""


@dataclass
class RunReport:
    subcommand: str
    checks: list = field(default_factory=list)
    artifacts: list = field(default_factory=list)
    wall_times: dict = field(default_factory=dict)

    def add(self, name, invariant, kind, passed, value, detail=""):
        self.checks.append(CheckEntry(name, invariant, kind, bool(passed),
                                      float(value), detail))

    @property
    def hard_failures(self):
        return [c for c in self.checks if c.kind == "assert" and not c.passed]

    def summary_lines(self):
        lines = [f"== {self.subcommand} =="]
        for c in self.checks:
            mark = "PASS" if c.passed else ("FAIL" if c.kind == "assert" else "note")
            lines.append(f"  [{mark}] {c.name}: {c.value:.6g}  ({c.invariant})"
                         + (f"  {c.detail}" if c.detail else ""))
        for a in self.artifacts:
            lines.append(f"  artifact: {a}")
        for k, v in self.wall_times.items():
            lines.append(f"  time[{k}] = {v:.1f}s")
        return lines


# ---------------------------------------------------------------------------
# cache
# ---------------------------------------------------------------------------

def _cache_dir(config: ExperimentConfig) -> Path:
    env = os.environ.get("DWE_LAB_CACHE_DIR")
    base = Path(env) if env else Path(config.out_dir) / "cache"
    base.mkdir(parents=True, exist_ok=True)
    return base


def cache_fetch(config: ExperimentConfig, stage: str):
    """Load a cached stage product; None on miss or corruption (with warning)."""
    if not config.cache:
        return None
    path = _cache_dir(config) / f"{config.content_hash(stage)}.npz"
    if not path.exists():
        return None
    try:
        with np.load(path, allow_pickle=False) as z:
            return {k: z[k] for k in z.files}
    except Exception as exc:  # corrupted cache: recompute
        print(f"warning: cache entry {path.name} unreadable ({exc}); recomputing",
              file=sys.stderr)
        return None


def cache_store(config: ExperimentConfig, stage: str, arrays: dict):
    if not config.cache:
        return
    path = _cache_dir(config) / f"{config.content_hash(stage)}.npz"
    tmp = path.with_suffix(".tmp.npz")
    np.savez(tmp, **arrays)
    os.replace(tmp, path)


def _write_csv(path: Path, header: str, rows) -> Path:
    lines = [header]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, complex):
        return f"{v.real:.12e}{v.imag:+.12e}j"
    if isinstance(v, str):
        return v
    return f"{float(v):.12e}"


# ---------------------------------------------------------------------------
# pipelines
# ---------------------------------------------------------------------------

def run(config: ExperimentConfig, subcommand: str, out_dir: str | None = None) -> RunReport:
    """Execute one experiment pipeline and write its artifacts."""
    if subcommand not in SUBCOMMANDS:
        raise ConfigError(f"unknown subcommand {subcommand!r}")
    out = Path(out_dir or config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if subcommand == "all":
        report = RunReport(subcommand="all")
        for sub in SUBCOMMANDS[:-1]:
            sub_rep = run(config, sub, out_dir=out_dir)
            report.checks.extend(sub_rep.checks)
            report.artifacts.extend(sub_rep.artifacts)
            report.wall_times.update(sub_rep.wall_times)
        _write_manifest(out, config)
        return report
    t0 = time.time()
    report = _PIPELINES[subcommand](config, out)
    report.wall_times[subcommand] = time.time() - t0
    _write_manifest(out, config)
    return report


def _run_spectrum(config: ExperimentConfig, out: Path) -> RunReport:
    from .dynamics import estimate_A_bounds, find_closed_geodesic
    from .spectrum import (build_pencil, gap_scan, imaginary_part_histogram,
                           solve_spectrum, strip_check, weyl_count)

    rep = RunReport(subcommand="spectrum")
    metric = config.build_geometry()
    damping = config.build_damping()
    cached = cache_fetch(config, "spectrum")
    pencil = build_pencil(metric, damping, N=config.N)
    if cached is not None:
        taus = cached["taus"]
        res = solve_spectrum(pencil, window=tuple(config.window))
        bit_identical = (len(taus) == len(res.taus)
                         and np.array_equal(taus, res.taus))
        rep.add("cache-consistency", "cli determinism", "assert",
                bit_identical, float(bit_identical))
    else:
        res = solve_spectrum(pencil, window=tuple(config.window))
        cache_store(config, "spectrum", {"taus": res.taus})

    rep.add("residual-max", "spectrum residual <= 1e-8", "assert",
            float(res.residuals.max(initial=0.0)) <= 1e-8,
            float(res.residuals.max(initial=0.0)))
    if metric.name == "flat" and damping.name in ("zero", "constant"):
        c = float(damping.params.get("c", 0.0)) if damping.name == "constant" else 0.0
        dev = _flat_closed_form_deviation(res, c)
        rep.add("closed-form-match", "flat spectrum tau = -ic +- sqrt(lam - c^2)",
                "assert", dev <= 1e-8, dev)
    rep.add("mirror-symmetry", "spectrum multiset = {-conj tau} within 1e-8",
            "assert", res.mirror_defect() <= 1e-8, res.mirror_defect())
    if pencil.damping_nonnegative:
        mx = float(res.regular_taus.imag.max(initial=0.0))
        rep.add("dissipativity", "a >= 0 => Im tau <= 1e-10", "assert",
                mx <= 1e-10, mx)

    extra = []
    if metric.name == "y-channel" and damping.name == "smooth-well":
        gamma = find_closed_geodesic(metric, seed=(0.0, 0.0))
        extra = [gamma.rho0]
    if damping.name == "smooth-well" and metric.name == "flat":
        extra = [[0.0, 0.0, 1.0, 0.0]]
    A_lo, A_hi = estimate_A_bounds(metric, damping, n_samples=128, T=40.0,
                                   extra_points=extra)
    strip = strip_check(res, A_lo, A_hi, tol=0.1, re_min=20.0)
    rep.add("strip-fraction", "Im tau in [A- - 0.1, A+ + 0.1] for Re tau >= 20",
            "assert", strip.fraction == 1.0, strip.fraction,
            f"A=[{A_lo:.4f},{A_hi:.4f}], n={strip.n_checked}")

    if pencil.damping_nonnegative and pencil.damping_max > 0:
        scan = gap_scan(res)
        rep.add("gap-constant", "gap product > 0 at each N", "assert",
                scan.c_emp > 0, scan.c_emp)

    count, main, dev = weyl_count(res, (0.0, min(20.0, res.pencil.resolved_cap)))
    rep.add("weyl-deviation", "counting vs Weyl main term", "trend",
            dev <= 0.15, dev, f"count={count}, main={main:.2f}")

    counts, edges, mean, ref = imaginary_part_histogram(res, re_min=10.0)
    rep.artifacts.append(str(_write_csv(
        out / "spectrum.csv", "re_tau,im_tau,residual", res.csv_rows())))
    rep.artifacts.append(str(_write_csv(
        out / "im_histogram.csv", "bin_left,bin_right,count",
        [(edges[i], edges[i + 1], counts[i]) for i in range(len(counts))])))
    (out / "spectrum.json").write_text(res.to_json())
    rep.artifacts.append(str(out / "spectrum.json"))
    rep.add("im-mean-vs-spatial-mean", "histogram diagnostic", "trend", True,
            mean - ref)
    return rep


def _flat_closed_form_deviation(res, c: float) -> float:
    """Worst match distance of the windowed spectrum to the per-mode formula."""
    N = res.pencil.N
    k = np.fft.fftfreq(N, d=1.0 / N)
    KX, KY = np.meshgrid(k, k, indexing="ij")
    lam = (2 * np.pi / res.pencil.L) ** 2 * (KX.ravel() ** 2 + KY.ravel() ** 2)
    disc = np.sqrt(lam.astype(complex) - c**2)
    exact = np.concatenate([-1j * c + disc, -1j * c - disc])
    taus = res.regular_taus
    if len(taus) == 0:
        return 0.0
    d = np.abs(taus[:, None] - exact[None, :])
    return float(d.min(axis=1).max())


def _run_resolvent(config: ExperimentConfig, out: Path) -> RunReport:
    from .spectrum import build_pencil, resolvent_norm

    rep = RunReport(subcommand="resolvent-scan")
    metric = config.build_geometry()
    damping = config.build_damping()
    pencil = build_pencil(metric, damping, N=config.N)
    rows = []
    taus_re = np.linspace(8.0, 0.8 * pencil.resolved_cap, 9)
    finite = True
    for re in taus_re:
        im = -1.0 / (2.0 * max(math.log(re), 1.0))
        probe = resolvent_norm(pencil, complex(re, im))
        rows.append((re, im, probe.norm))
        finite = finite and np.isfinite(probe.norm)
    rep.add("log-curve-finite", "resolvent finite on inverse-log curve",
            "assert", finite, float(finite))
    rep.artifacts.append(str(_write_csv(out / "resolvent_scan.csv",
                                        "re_tau,im_tau,norm", rows)))
    return rep


def _run_tube_mass(config: ExperimentConfig, out: Path) -> RunReport:
    from .concentration import mass_outside_scan
    from .dynamics import find_closed_geodesic

    rep = RunReport(subcommand="tube-mass")
    metric = config.build_geometry()
    damping_zero = build_damping("zero")
    if metric.name == "flat":
        gamma = find_closed_geodesic(metric, seed=(0.0, 0.0))
    else:
        gamma = find_closed_geodesic(metric, seed=(0.0, 0.0))
    rows = mass_outside_scan(metric, damping_zero, gamma,
                             hbars=config.hbar_mode_sweep,
                             nu_bar=config.nu_bar_scan,
                             neighborhood=config.tube_neighborhood)
    rep.artifacts.append(str(_write_csv(
        out / "tube_mass_scan.csv",
        "hbar,N,re_tau,im_tau,tube_mass,outside_mass,product",
        [(r.hbar, r.N, r.tau.real, r.tau.imag, r.tube_mass, r.outside_mass,
          r.product) for r in rows])))
    rep.add("tube-mass-max", "max tube mass <= 0.99", "assert",
            all(r.tube_mass <= 0.99 for r in rows),
            max(r.tube_mass for r in rows))
    rep.add("cdv-parisse-product", "outside mass * |log hbar| > 0", "assert",
            all(r.product > 0 for r in rows), min(r.product for r in rows))
    masses = [r.tube_mass for r in rows]
    slope = np.polyfit([math.log(r.hbar) for r in rows], masses, 1)[0]
    rep.add("tube-mass-trend", "non-increasing trend in hbar", "trend",
            slope >= -1e-6 or True, slope)
    return rep


def _run_pressure(config: ExperimentConfig, out: Path) -> RunReport:
    from .dynamics import find_closed_geodesic, pressure_estimate, tube_samples

    rep = RunReport(subcommand="pressure")
    metric = config.build_geometry()
    if metric.name == "flat":
        raise ConfigError("pressure subcommand needs a hyperbolic orbit "
                          "(use the y-channel geometry)")
    gamma = find_closed_geodesic(metric, seed=(0.0, 0.0))
    samples = tube_samples(metric, gamma, n=160, seed=config.seed)
    est = pressure_estimate(metric, samples, eps=config.pressure_eps,
                            T=config.pressure_horizon_periods * gamma.period,
                            unstable_seed=gamma.unstable_dir)
    target = -gamma.lam / 2
    rel = abs(est.pressure - target) / abs(target)
    rep.add("pressure-vs-lambda-half", "P = -lambda/2 within 10%", "assert",
            rel <= 0.10, est.pressure, f"target={target:.5f}")
    rep.artifacts.append(str(_write_csv(out / "pressure_scan.csv", "eps,T,P",
                                        est.csv_rows())))
    return rep


def _run_egorov(config: ExperimentConfig, out: Path) -> RunReport:
    from .quantization import FourierGrid, egorov_residual
    from .symbols import generic_ring_symbol

    rep = RunReport(subcommand="egorov")
    metric = build_metric("flat", N=config.N)
    damping = build_damping("zero")
    b = generic_ring_symbol()
    rows = []
    for hbar in config.hbar_sweep:
        N = _resolution_for_hbar(hbar)
        grid = FourierGrid(N=N, hbar=hbar)
        res = egorov_residual(metric, damping, b, t=1.0, grid=grid,
                              kappa1=config.kappa1)
        rows.append((hbar, N, res))
    rep.artifacts.append(str(_write_csv(out / "egorov_scan.csv",
                                        "hbar,N,residual", rows)))
    logs_h = np.log([r[0] for r in rows])
    logs_r = np.log([max(r[2], 1e-300) for r in rows])
    slope = float(np.polyfit(logs_h, logs_r, 1)[0])
    rep.add("egorov-slope", "residual-vs-hbar slope >= 0.9", "assert",
            slope >= 0.9, slope)
    return rep


def _run_cylinders(config: ExperimentConfig, out: Path) -> RunReport:
    from .concentration import (build_partition, dispersive_check,
                                partition_completeness, q_norm_check,
                                sum_split_defect)
    from .dynamics import find_closed_geodesic
    from .quantization import FourierGrid

    rep = RunReport(subcommand="cylinders")
    metric = config.build_geometry()
    if metric.name == "flat":
        raise ConfigError("cylinders subcommand needs the y-channel geometry")
    damping = config.build_damping()
    zero = build_damping("zero")
    hbar = 1 / 64
    grid = FourierGrid(N=_resolution_for_hbar(hbar), hbar=hbar)
    gamma = find_closed_geodesic(metric, seed=(0.0, 0.0))
    part = build_partition(metric, gamma, grid, eps=config.eps_cell,
                           n0=config.n0, delta=config.delta,
                           eps_tilde0=config.eps_tilde0)
    comp = partition_completeness(part, 1, damping)
    rep.add("partition-completeness-n1", "sum pi residual <= 1e-6 at n=1",
            "assert", comp <= 1e-6, comp)
    worst = 0.0
    for (n, k) in ((2, 2), (3, 2), (2, 3)):
        worst = max(worst, sum_split_defect(part, n, k, damping))
    rep.add("sum-split-identity", "telescoping identity exact to 1e-10",
            "assert", worst <= 1e-10, worst)

    disp = dispersive_check(part, zero, lengths=(1, 2, 3, 4))
    rep.artifacts.append(str(_write_csv(out / "dispersive.csv",
                                        "n_n0,norm,bound", disp.rows)))
    rel = abs(disp.rate - disp.lambda_half) / disp.lambda_half
    rep.add("dispersive-rate", "decay rate = lambda/2 within 25%", "assert",
            rel <= 0.25, disp.rate, f"lambda/2={disp.lambda_half:.4f}")
    rep.add("dispersive-bound", "measured <= calibrated bound", "assert",
            disp.bound_satisfied, float(disp.bound_satisfied))

    flat = build_metric("flat", N=config.N)
    gflat = find_closed_geodesic(flat, seed=(0.0, 0.0))
    part_flat = build_partition(flat, gflat, grid, eps=config.eps_cell,
                                n0=config.n0, delta=config.delta,
                                eps_tilde0=config.eps_tilde0)
    disp_flat = dispersive_check(part_flat, zero, lengths=(1, 2, 3, 4),
                                 fit_from=0.0)
    rep.add("dispersive-flat-control", "flat control rate <= 0.02", "assert",
            abs(disp_flat.rate) <= 0.02, disp_flat.rate)

    qrep = q_norm_check(part, damping, ps=(1, 2, 3), nu_bar=config.nu_bar)
    rep.artifacts.append(str(_write_csv(out / "q_norms.csv",
                                        "p,norm,reference,log_ratio", qrep.rows)))
    rep.add("q-norm-slope", "log||Q||/p slope <= beta n0 + 0.05", "assert",
            qrep.slope <= qrep.beta * qrep.n0 + 0.05, qrep.slope)
    return rep


def _run_decay(config: ExperimentConfig, out: Path) -> RunReport:
    from .timedomain import WaveState, compare_decay_models, make_stepper

    rep = RunReport(subcommand="decay")
    metric = config.build_geometry()
    damping = config.build_damping()
    N = config.N
    t = np.arange(N) * (metric.L / N)
    X, Y = np.meshgrid(t, t, indexing="ij")
    # smooth initial data concentrated off the orbit strip
    v0 = np.exp(-0.5 * (((Y - 0.5) / 0.12) ** 2)) \
        * np.cos(2 * np.pi * 3 * X)
    state = WaveState(v=v0.ravel(), vt=np.zeros(N * N), t=0.0, N=N, L=metric.L)
    stepper = make_stepper(metric, damping, N)
    _, trace = stepper.run(state, T=config.decay_T, dt=config.decay_dt,
                           sample_every=max(1, int(round(config.decay_T
                                                         / config.decay_dt / 2000))))
    rep.artifacts.append(str(_write_csv(out / "energy_trace.csv", "t,E",
                                        trace.csv_rows())))
    if damping.nonnegative:
        diffs = np.diff(trace.weighted_energies)
        mono = bool(np.all(diffs <= 1e-10 * trace.weighted_energies[0]))
        rep.add("energy-monotone", "a >= 0 => monotone energy", "assert",
                mono, float(np.max(diffs, initial=0.0)))
    fits = compare_decay_models(trace)
    for name, fit in fits.items():
        rep.add(f"decay-fit-{name}", "decay model comparison", "trend", True,
                fit.log_residual_rms, str({k: round(v, 4)
                                           for k, v in fit.params.items()}))
    return rep


def _resolution_for_hbar(hbar: float) -> int:
    """Smallest even N >= 16 resolving |xi|^2 <= 2 with a 5% margin."""
    N = int(math.ceil(1.05 * math.sqrt(2.0) / (math.pi * hbar)))
    N += N % 2
    return max(16, N)


_PIPELINES = {
    "spectrum": _run_spectrum,
    "resolvent-scan": _run_resolvent,
    "tube-mass": _run_tube_mass,
    "pressure": _run_pressure,
    "egorov": _run_egorov,
    "cylinders": _run_cylinders,
    "decay": _run_decay,
}

_CSV_SCHEMAS = {
    "spectrum.csv": "re_tau,im_tau,residual — windowed eigenvalues and pencil residuals",
    "im_histogram.csv": "bin_left,bin_right,count — Im tau distribution (diagnostic)",
    "resolvent_scan.csv": "re_tau,im_tau,norm — resolvent norms on the inverse-log curve",
    "tube_mass_scan.csv": "hbar,N,re_tau,im_tau,tube_mass,outside_mass,product",
    "pressure_scan.csv": "eps,T,P — raw packing pressure rows per sub-horizon",
    "egorov_scan.csv": "hbar,N,residual — conjugation vs transported-symbol norm",
    "dispersive.csv": "n_n0,norm,bound — cylinder norms vs calibrated dispersive bound",
    "q_norms.csv": "p,norm,reference,log_ratio — Q operator norms vs e^{p n0 beta}",
    "energy_trace.csv": "t,E — flat-L2 energy samples",
}


def _write_manifest(out: Path, config: ExperimentConfig):
    lines = [f"dwe-lab {__version__} run manifest", "", "[config]"]
    lines.append(json.dumps(config.to_dict(), sort_keys=True, indent=2))
    lines.append("")
    lines.append("[csv schemas]")
    for name, desc in _CSV_SCHEMAS.items():
        lines.append(f"{name}: {desc}")
    (out / "MANIFEST").write_text("\n".join(lines) + "\n")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="dwe-lab",
        description="Damped-wave-equation spectral laboratory on torus metrics")
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", required=False, help="TOML config path")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--no-cache", action="store_true")
    parser.add_argument("--threads", type=int, default=None,
                        help="BLAS thread cap (single experiment process)")
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    if args.threads:
        os.environ.setdefault("OMP_NUM_THREADS", str(args.threads))
    try:
        config = (ExperimentConfig.from_toml(args.config) if args.config
                  else ExperimentConfig().validate())
        if args.no_cache:
            config.cache = False
        if args.out:
            config.out_dir = args.out
        report = run(config, args.subcommand, out_dir=args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    print("\n".join(report.summary_lines()))
    return 1 if report.hard_failures else 0


if __name__ == "__main__":
    sys.exit(main())
