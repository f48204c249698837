"""Tube cutoffs, quantum partitions, and cylinder-operator norm measurements.

Everything here is specialized to a tubular neighborhood of one closed
geodesic: the tube cutoff lives at distance scale hbar^nu_bar from the orbit
in the (position, unit-momentum) product metric; the partition tiles that
tube with flow-adapted cells along the orbit plus one complement cell, built
so the cell symbols sum to exactly 1 (the complement quantization is then
I - sum pi_alpha and every combinatorial operator identity holds to
roundoff).  Cylinder operators alternate propagator steps with the quantized
cells; their norms carry the hyperbolic dispersive decay.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._linalg import spectral_norm
from .dynamics import ClosedGeodesic, birkhoff_average, flow, flow_points
from .geometry import ConformalMetric, DampingField, build_damping, smoothstep
from .quantization import (
    FourierGrid,
    OperatorMatrix,
    SymbolField,
    build_P,
    propagator,
    quantize_antiwick,
    quantize_kn,
)

__all__ = [
    "TubeCutoff",
    "PartitionOfUnity",
    "CylinderOperator",
    "ConcentrationError",
    "build_tube_cutoff",
    "tube_mass",
    "mass_outside_scan",
    "build_partition",
    "cylinder_operator",
    "cylinder_norm_profile",
    "partition_completeness",
    "sum_split_defect",
    "dispersive_check",
    "q_norm_check",
    "invariance_residual",
    "grid_state_to_coeffs",
]


class ConcentrationError(ValueError):
    pass


def grid_state_to_coeffs(u: np.ndarray, grid: FourierGrid) -> np.ndarray:
    """Unitary map from grid values to Fourier coefficients (l2 preserved)."""
    N = grid.N
    return np.fft.fft2(np.asarray(u).reshape(N, N)).ravel() / N


class _OrbitDistance:
    """Distance to the orbit set in the (x, xi/|xi|_g) product metric."""

    def __init__(self, metric: ConformalMetric, gamma: ClosedGeodesic,
                 n_samples: int = 256, dir_weight: float = 1.0,
                 family: bool | None = None):
        self.metric = metric
        self.L = metric.L
        self.dir_weight = dir_weight  # scales the direction components
        pts = gamma.orbit_samples(metric, n_samples)
        phi = metric.phi(pts[:, 0], pts[:, 1])
        self.ox = pts[:, 0]
        self.oy = pts[:, 1]
        # unit metric-norm direction: xi * e^{phi} / |xi|
        scale = np.exp(phi) / np.hypot(pts[:, 2], pts[:, 3])
        self.ou = pts[:, 2] * scale
        self.ov = pts[:, 3] * scale
        # horizontal orbits (constant y and direction) admit a closed form:
        # the along-orbit offset never helps, so d = dist in (y, u) alone
        self.horizontal = (np.ptp(self.oy) < 1e-9 and np.ptp(self.ou) < 1e-9
                           and np.ptp(self.ov) < 1e-9)
        # a parabolic (non-isolated) orbit sits in a neutral family of
        # translates; the invariant set is the family closure, so the
        # distance drops the neutral transverse coordinate
        self.family = gamma.parabolic if family is None else family
        if self.family and not self.horizontal:
            raise ConcentrationError(
                "neutral-family distance implemented for horizontal orbits only")

    def __call__(self, x, y, xix, xiy):
        shape = np.broadcast(x, y, xix, xiy).shape
        x = np.broadcast_to(np.asarray(x, dtype=float), shape).ravel()
        y = np.broadcast_to(np.asarray(y, dtype=float), shape).ravel()
        xix = np.broadcast_to(np.asarray(xix, dtype=float), shape).ravel()
        xiy = np.broadcast_to(np.asarray(xiy, dtype=float), shape).ravel()
        phi = self.metric.phi(x, y)
        r = np.hypot(xix, xiy)
        safe = np.where(r > 1e-12, r, 1.0)
        ux = xix / safe * np.exp(phi)
        uy = xiy / safe * np.exp(phi)
        L = self.L
        w2 = self.dir_weight**2
        if self.horizontal:
            if self.family:
                dy = np.zeros_like(y)
            else:
                dy = np.abs(y - self.oy[0]) % L
                dy = np.minimum(dy, L - dy)
            out = np.sqrt(dy**2 + w2 * ((ux - self.ou[0]) ** 2
                                        + (uy - self.ov[0]) ** 2))
        else:
            out = np.empty(x.shape)
            chunk = max(1, (1 << 22) // self.ox.shape[0])
            for s in range(0, x.shape[0], chunk):
                e = min(s + chunk, x.shape[0])
                dx = np.abs(x[s:e, None] - self.ox[None, :]) % L
                dx = np.minimum(dx, L - dx)
                dy = np.abs(y[s:e, None] - self.oy[None, :]) % L
                dy = np.minimum(dy, L - dy)
                du = ux[s:e, None] - self.ou[None, :]
                dv = uy[s:e, None] - self.ov[None, :]
                out[s:e] = np.sqrt(dx**2 + dy**2
                                   + w2 * (du**2 + dv**2)).min(axis=1)
        out[r <= 1e-12] = 10.0
        return out.reshape(shape)


@dataclass(frozen=True)
class TubeCutoff:
    """(orbit, hbar, nu_bar)-localized cutoff symbol.

    Equals 1 within hbar^nu_bar / 2 of the orbit on the unit cosphere, 0
    beyond 2 hbar^nu_bar, is homogeneous in the mid energy window and vanishes
    outside 1/4 <= |xi|_g^2 <= 2.
    """

    nu_bar: float
    hbar: float
    symbol: SymbolField
    width: float               # hbar^nu_bar
    gamma: ClosedGeodesic
    metric: ConformalMetric
    distance: object = field(repr=False, default=None)

    def __call__(self, x, y, xix, xiy):
        return self.symbol(x, y, xix, xiy)


def build_tube_cutoff(metric: ConformalMetric, gamma: ClosedGeodesic,
                      hbar: float, nu_bar: float,
                      orbit_samples: int = 256) -> TubeCutoff:
    """Construct the tube cutoff around the orbit at scale hbar^nu_bar."""
    if not (0.0 < nu_bar < 0.5):
        raise ConcentrationError("nu_bar must lie in (0, 1/2)")
    width = hbar**nu_bar
    if 2.0 * width > 0.49 * metric.L:
        raise ConcentrationError(
            f"tube support radius 2 hbar^nu_bar = {2 * width:.3f} exceeds the "
            f"injectivity scale of the torus (L/2 = {metric.L / 2})")
    dist = _OrbitDistance(metric, gamma, orbit_samples)
    phimax = float(metric.phi.grid_values(64).max())
    r = math.sqrt(2.0) * math.exp(phimax) * 1.001

    def fn(x, y, xix, xiy):
        s2 = np.exp(-2.0 * metric.phi(x, y)) * (np.asarray(xix) ** 2
                                                + np.asarray(xiy) ** 2)
        # energy window: 0 outside [1/4, 2], 1 on [1/2, 3/2]
        win = smoothstep((s2 - 0.25) / 0.25) * (1.0 - smoothstep((s2 - 1.5) / 0.5))
        s = dist(x, y, xix, xiy) / width
        prof = 1.0 - smoothstep((s - 0.5) / 1.5)
        return win * prof

    sym = SymbolField(fn, xi_support=((-r, r), (-r, r)), nu_bar=nu_bar,
                      name=f"tube(nu={nu_bar})")
    return TubeCutoff(nu_bar=nu_bar, hbar=hbar, symbol=sym, width=width,
                      gamma=gamma, metric=metric, distance=dist)


@dataclass(frozen=True)
class TubeMassResult:
    mass: float
    quantization_slop: float


def tube_mass(psi_coeffs: np.ndarray, theta: TubeCutoff, grid: FourierGrid,
              slop: float | None = None,
              aw_matrix: np.ndarray | None = None) -> TubeMassResult:
    """<Op_AW(Theta) psi, psi> for a normalized state, with the measured slop.

    The slop is ||Op_AW(Theta) - Op_KN(Theta)|| (pass it in when scanning many
    states against one cutoff, likewise the anti-Wick matrix).
    """
    c = np.asarray(psi_coeffs, dtype=complex)
    c = c / np.linalg.norm(c)
    A = aw_matrix if aw_matrix is not None else quantize_antiwick(theta.symbol, grid).matrix
    mass = float(np.real(np.vdot(c, A @ c)))
    if slop is None:
        K = quantize_kn(theta.symbol, grid).matrix
        slop = spectral_norm(A - K)
    return TubeMassResult(mass=mass, quantization_slop=float(slop))


# ---------------------------------------------------------------------------
# quantum partition
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class PartitionOfUnity:
    """Flow-adapted tube cells along the orbit plus the complement cell.

    The cell symbols and the complement symbol sum to exactly 1, so the
    quantized family satisfies sum_alpha pi_alpha = Id to roundoff (the
    complement is quantized as the exact difference).
    """

    symbols: list            # SymbolField per cell alpha in W
    pi: list                 # Hermitian matrices per cell, complement last
    n0: float
    eps: float
    delta: float
    grid: FourierGrid
    metric: ConformalMetric
    gamma: ClosedGeodesic
    centers: np.ndarray      # along-orbit cell centers (x coordinate)
    tube_fn: object = field(repr=False, default=None)
    bump_fns: list = field(repr=False, default=None)

    @property
    def n_cells(self) -> int:
        return len(self.symbols)

    @property
    def alphabet(self) -> list:
        return list(range(self.n_cells)) + ["inf"]

    def pi_of(self, letter):
        if letter == "inf":
            return self.pi[-1]
        return self.pi[letter]

    def symbol_values(self, letter, x, y, xix, xiy):
        """Evaluate the cell symbol P_alpha (complement included) at points."""
        if letter == "inf":
            total = np.zeros(np.broadcast(x, y, xix, xiy).shape)
            for s in self.symbols:
                total = total + s(x, y, xix, xiy)
            return 1.0 - total
        return self.symbols[letter](x, y, xix, xiy)

    def cell_of_point(self, x, y, xix, xiy):
        """Letter with the largest symbol value at one phase-space point."""
        vals = [float(np.max(s(x, y, xix, xiy))) for s in self.symbols]
        best = int(np.argmax(vals))
        if vals[best] < 0.5:
            return "inf"
        return best


def build_partition(metric: ConformalMetric, gamma: ClosedGeodesic,
                    grid: FourierGrid, eps: float = 0.2, n0: float = 2.0,
                    delta: float = 0.3, eps_tilde0: float | None = None,
                    eps_dir: float | None = None, plateau: float = 0.7,
                    orbit_samples: int = 256) -> PartitionOfUnity:
    """Build the quantum partition for a tubular cover of the orbit.

    eps is the transverse position width and the along-orbit cell scale; it
    must stay below half the shadowing-tube calibration eps_tilde0 (default
    0.4 for the single-orbit models used here).  eps_dir is the cell width in
    the unit-momentum direction: flow-adapted cells are thinner in direction
    than in position, otherwise the cell's own momentum spread shears mass
    out of the tube and drowns the hyperbolic decay; but the plateau area
    eps * eps_dir must stay a few hbar above the uncertainty floor or the
    cuts bleed every admissible state.  `plateau` is the fraction of eps
    where the transverse cut still equals 1.
    """
    eps_tilde0 = 0.4 if eps_tilde0 is None else eps_tilde0
    if eps > eps_tilde0 / 2 + 1e-12:
        raise ConcentrationError(
            f"cell size eps={eps} above eps_tilde0/2 = {eps_tilde0 / 2}")
    eps_dir = eps / 1.5 if eps_dir is None else eps_dir
    L = metric.L
    # flow-adapted cells: along-orbit length = one propagation step's travel,
    # so the cell count is period / n0 (a single wrap-around cell once n0
    # exceeds the period)
    m = max(1, int(math.ceil(gamma.period / n0)))
    centers = (np.arange(m) + 0.5) * (L / m)
    dist = _OrbitDistance(metric, gamma, orbit_samples, dir_weight=eps / eps_dir)

    def tube_fn(x, y, xix, xiy):
        d = dist(x, y, xix, xiy)
        return 1.0 - smoothstep((d / eps - plateau) / (1.0 - plateau))

    def window_fn(x, y, xix, xiy):
        s2 = np.exp(-2.0 * metric.phi(np.asarray(x), np.asarray(y))) \
            * (np.asarray(xix) ** 2 + np.asarray(xiy) ** 2)
        return smoothstep((s2 - 0.25) / 0.25) * (1.0 - smoothstep((s2 - 1.5) / 0.5))

    # smooth partition of the x-circle: normalized overlapping bumps
    # (degenerates to the constant 1 for a single wrap-around cell)
    halfwidth = 0.75 * (L / m)

    def raw_bump(x, c):
        d = np.abs((np.asarray(x) - c + L / 2) % L - L / 2)
        return 1.0 - smoothstep((d / halfwidth - 0.35) / 0.65)

    def bump(x, c):
        if m == 1:
            return np.ones(np.broadcast(x, x).shape, dtype=float)
        total = np.zeros(np.broadcast(x, x).shape, dtype=float)
        for cc in centers:
            total = total + raw_bump(x, cc)
        return raw_bump(x, c) / total

    phimax = float(metric.phi.grid_values(64).max())
    r = math.sqrt(2.0) * math.exp(phimax) * 1.001
    symbols = []
    for c in centers:
        def fn(x, y, xix, xiy, _c=c):
            return bump(x, _c) * tube_fn(x, y, xix, xiy) * window_fn(x, y, xix, xiy)
        symbols.append(SymbolField(fn, xi_support=((-r, r), (-r, r)),
                                   name=f"cell({c:.3f})"))

    pis = []
    total = np.zeros((grid.n, grid.n), dtype=complex)
    for s in symbols:
        M = quantize_kn(s, grid, hermitize=True).matrix
        pis.append(M)
        total += M
    pis.append(np.eye(grid.n) - total)
    return PartitionOfUnity(symbols=symbols, pi=pis, n0=n0, eps=eps, delta=delta,
                            grid=grid, metric=metric, gamma=gamma,
                            centers=centers, tube_fn=tube_fn,
                            bump_fns=[lambda x, _c=c: bump(x, _c) for c in centers])


@dataclass(eq=False)
class CylinderOperator:
    """Pi_gamma = U^{n0} pi_{gamma_{n-1}} ... U^{n0} pi_{gamma_0} for a word."""

    word: tuple
    matrix: np.ndarray
    matrix_tilde: np.ndarray
    norm: float
    norm_tilde: float
    n0: float
    hbar: float


def _partition_propagators(partition: PartitionOfUnity,
                           damping: DampingField, z: complex = 0.5):
    P = build_P(partition.metric, damping, partition.grid, z)
    U = propagator(P, partition.n0).matrix
    Uinv = propagator(P, -partition.n0).matrix
    return U, Uinv


def cylinder_operator(partition: PartitionOfUnity, word, damping: DampingField,
                      z: complex = 0.5, U: np.ndarray | None = None,
                      Uinv: np.ndarray | None = None) -> CylinderOperator:
    """Assemble the cylinder operator for one word over the alphabet."""
    if U is None or Uinv is None:
        U, Uinv = _partition_propagators(partition, damping, z)
    M = np.eye(partition.grid.n, dtype=complex)
    for letter in word:
        M = U @ (partition.pi_of(letter) @ M)
    Mt = M.copy()
    for _ in range(len(word)):
        Mt = Mt @ Uinv
    return CylinderOperator(word=tuple(word), matrix=M, matrix_tilde=Mt,
                            norm=spectral_norm(M), norm_tilde=spectral_norm(Mt),
                            n0=partition.n0, hbar=partition.grid.hbar)


def cylinder_norm_profile(partition: PartitionOfUnity, word, damping: DampingField,
                          z: complex = 0.5) -> list[tuple[int, float]]:
    """Norms of all prefixes of a word (incremental assembly, one pass)."""
    U, _ = _partition_propagators(partition, damping, z)
    M = np.eye(partition.grid.n, dtype=complex)
    rows = []
    for j, letter in enumerate(word):
        M = U @ (partition.pi_of(letter) @ M)
        rows.append((j + 1, spectral_norm(M)))
    return rows


def partition_completeness(partition: PartitionOfUnity, n: int,
                           damping: DampingField, chi: SymbolField | None = None,
                           z: complex = 0.5) -> float:
    """|| (sum over words of length n of Pi_gamma - U^{n n0}) Op(chi_slab) ||.

    With the exact-complement construction the word sum telescopes to
    U^{n n0} identically, so this measures pure accumulation roundoff.
    """
    grid = partition.grid
    U, _ = _partition_propagators(partition, damping, z)
    pisum = np.zeros((grid.n, grid.n), dtype=complex)
    for piM in partition.pi:
        pisum += piM
    step = U @ pisum
    S = np.eye(grid.n, dtype=complex)
    for _ in range(n):
        S = step @ S
    Un = np.eye(grid.n, dtype=complex)
    for _ in range(n):
        Un = U @ Un
    if chi is None:
        from .quantization import energy_window_symbol
        chi = energy_window_symbol(partition.metric,
                                   inner=(0.5, 0.75), outer=(1.25, 1.5),
                                   name="slab")
    C = quantize_kn(chi, grid, hermitize=True).matrix
    return spectral_norm((S - Un) @ C)


def sum_split_defect(partition: PartitionOfUnity, n: int, k: int,
                     damping: DampingField, subset=None, z: complex = 0.5) -> float:
    """Exactness of the telescoping decomposition of the complement word sum.

    With B_all = sum over all length-n words of Pi and B_lam the sum over a
    distinguished subset Lambda_n (default: the orbit-following word), the
    length-nk complement sum B_all^k - B_lam^k must equal the telescoping
    triple sum over the position of the first non-Lambda block -- a pure
    operator identity, independent of any analysis.
    """
    grid = partition.grid
    U, _ = _partition_propagators(partition, damping, z)
    if subset is None:
        subset = {tuple(orbit_word(partition, n))}
    subset = {tuple(s) for s in subset}

    pisum = np.zeros((grid.n, grid.n), dtype=complex)
    for piM in partition.pi:
        pisum += piM
    step = U @ pisum
    B_all = np.eye(grid.n, dtype=complex)
    for _ in range(n):
        B_all = step @ B_all

    B_lam = np.zeros((grid.n, grid.n), dtype=complex)
    for w in subset:
        M = np.eye(grid.n, dtype=complex)
        for letter in w:
            M = U @ (partition.pi_of(letter) @ M)
        B_lam += M
    B_c = B_all - B_lam

    lhs = _matpow(B_all, k) - _matpow(B_lam, k)
    rhs = np.zeros((grid.n, grid.n), dtype=complex)
    for j in range(k):
        rhs += _matpow(B_lam, k - 1 - j) @ B_c @ _matpow(B_all, j)
    return spectral_norm(lhs - rhs)


def _matpow(M: np.ndarray, k: int) -> np.ndarray:
    out = np.eye(M.shape[0], dtype=complex)
    for _ in range(k):
        out = M @ out
    return out


def orbit_word(partition: PartitionOfUnity, n: int, start_time: float = 0.0):
    """The letter sequence visited by the orbit at times start + j*n0."""
    gamma = partition.gamma
    metric = partition.metric
    word = []
    rho = gamma.rho0
    if start_time > 0:
        rho = flow(metric, rho, start_time).final
    for j in range(n):
        letter = partition.cell_of_point(rho[0] % metric.L, rho[1] % metric.L,
                                         rho[2], rho[3])
        word.append(letter)
        rho = flow(metric, rho, partition.n0).final
    return word


@dataclass(frozen=True)
class DispersiveReport:
    rows: tuple                 # (n*n0, measured norm, calibrated bound)
    rate: float                 # fitted decay rate of log norm vs n*n0
    lambda_half: float
    inf_tube_damping: float
    ehrenfest_time: float
    bound_satisfied: bool
    C_k: float


def dispersive_check(partition: PartitionOfUnity, damping: DampingField,
                     lengths=(1, 2, 3, 4), z: complex = 0.5,
                     fit_from: float | None = None) -> DispersiveReport:
    """Measured cylinder norms along the orbit word vs the dispersive bound.

    The bound is C_k hbar^{-d/2} prod_j sup_{cell_j on the orbit}
    exp(int_0^{n0} (log J^u / 2 - a)), with C_k calibrated at the shortest
    length; the decay-rate fit runs over lengths past the Ehrenfest time.
    """
    gamma = partition.gamma
    metric = partition.metric
    grid = partition.grid
    n0 = partition.n0
    nmax = max(lengths)
    word = orbit_word(partition, nmax)
    rows_all = cylinder_norm_profile(partition, word, damping, z)
    lam = gamma.lam if gamma.hyperbolic else 0.0

    # per-letter bound factor: sup over orbit phases in the cell of
    # exp(-lam n0 / 2 - int_0^{n0} a along the orbit from that phase)
    npts = 512
    pts = gamma.orbit_samples(metric, npts)
    phases = np.arange(npts) * (gamma.period / npts)
    _, aints = flow_points(metric, damping, pts, n0)
    factors = []
    for j, letter in enumerate(word):
        if letter == "inf":
            sup = math.exp(-lam * n0 / 2.0)
        else:
            vals = partition.symbols[letter](pts[:, 0], pts[:, 1],
                                             pts[:, 2], pts[:, 3])
            inside = vals > 0.1
            if not np.any(inside):
                inside = np.ones(npts, dtype=bool)
            sup = float(np.max(np.exp(-lam * n0 / 2.0 - aints[inside])))
        factors.append(sup)

    a_on_tube = float(np.min(aints / n0))
    d = 2
    prefactor = grid.hbar ** (-d / 2)
    norms = {n: rows_all[n - 1][1] for n in lengths}
    prods = {}
    run = 1.0
    for j in range(nmax):
        run *= factors[j]
        prods[j + 1] = run
    n_first = min(lengths)
    C_k = norms[n_first] / (prefactor * prods[n_first])
    rows = []
    ok = True
    for n in sorted(lengths):
        bound = C_k * prefactor * prods[n]
        rows.append((n * n0, norms[n], bound))
        if norms[n] > bound * (1.0 + 1e-9):
            ok = False
    ehr = abs(math.log(grid.hbar)) / lam if lam > 0 else math.inf
    fit_from = ehr if fit_from is None else fit_from
    ts = np.array([r[0] for r in rows])
    ls = np.log([r[1] for r in rows])
    sel = ts >= fit_from - 1e-9
    if np.sum(sel) >= 2:
        rate = -float(np.polyfit(ts[sel], ls[sel], 1)[0])
    else:
        rate = -float(np.polyfit(ts, ls, 1)[0])
    return DispersiveReport(rows=tuple(rows), rate=rate, lambda_half=lam / 2.0,
                            inf_tube_damping=a_on_tube, ehrenfest_time=ehr,
                            bound_satisfied=ok, C_k=float(C_k))


# ---------------------------------------------------------------------------
# Q-norm and tube-word machinery
# ---------------------------------------------------------------------------

def tube_words(partition: PartitionOfUnity, p: int, nu_bar: float = 0.42,
               n_samples: int = 64) -> list:
    """Words whose backward refined set meets the hbar^nu_bar tube.

    Sampled constructively: tube points are flowed backward and their cell
    itinerary recorded; gamma_j = cell(g^{-(p-j) n0} rho).
    """
    gamma = partition.gamma
    metric = partition.metric
    width = partition.grid.hbar**nu_bar
    base = gamma.orbit_samples(metric, n_samples)
    rng = np.random.default_rng(11)
    jit = rng.standard_normal(base.shape)
    jit /= np.linalg.norm(jit, axis=1, keepdims=True)
    pts = np.vstack([base, base + 0.4 * width * jit])
    words = set()
    for rho in pts:
        seq = []
        cur = rho.copy()
        for j in range(p):
            back = flow(metric, cur * np.array([1, 1, -1, -1]), partition.n0).final
            cur = back * np.array([1, 1, -1, -1])
            letter = partition.cell_of_point(cur[0] % metric.L, cur[1] % metric.L,
                                             cur[2], cur[3])
            seq.append(letter)
        words.add(tuple(reversed(seq)))
    return sorted(words, key=str)


@dataclass(frozen=True)
class QNormReport:
    rows: tuple          # (p, norm, e^{p n0 beta}, log-ratio)
    slope: float         # fitted slope of log ||Q|| vs p
    beta: float
    n0: float
    ehrenfest_gate: float


def q_norm_check(partition: PartitionOfUnity, damping: DampingField,
                 ps=(1, 2, 3, 4), nu_bar: float = 0.42,
                 z: complex = 0.5) -> QNormReport:
    """Norms of Q_{X_p} = U_0^{-p n0} sum_{gamma in Lambda_p} Pi_gamma vs e^{p n0 beta}."""
    grid = partition.grid
    metric = partition.metric
    beta = birkhoff_average(metric, damping, partition.gamma.rho0,
                            partition.gamma.period)
    U, _ = _partition_propagators(partition, damping, z)
    zero = build_damping("zero", L=metric.L)
    P0 = build_P(metric, zero, grid, z)
    rows = []
    pmax = max(ps)
    words_by_p = {p: tube_words(partition, p, nu_bar) for p in ps}
    for p in sorted(ps):
        S = np.zeros((grid.n, grid.n), dtype=complex)
        for w in words_by_p[p]:
            M = np.eye(grid.n, dtype=complex)
            for letter in w:
                M = U @ (partition.pi_of(letter) @ M)
            S += M
        U0inv = propagator(P0, -p * partition.n0).matrix
        Q = U0inv @ S
        nrm = spectral_norm(Q)
        rows.append((p, nrm, math.exp(p * partition.n0 * beta),
                     math.log(max(nrm, 1e-300)) - p * partition.n0 * beta))
    ps_arr = np.array([r[0] for r in rows], dtype=float)
    lognorm = np.log([max(r[1], 1e-300) for r in rows])
    slope = float(np.polyfit(ps_arr, lognorm, 1)[0])
    lam = partition.gamma.lam if partition.gamma.hyperbolic else 1.0
    ehr = abs(math.log(grid.hbar)) / max(lam, 1e-9) / partition.n0
    return QNormReport(rows=tuple(rows), slope=slope, beta=beta,
                       n0=partition.n0, ehrenfest_gate=ehr)


# ---------------------------------------------------------------------------
# eigenmode scans
# ---------------------------------------------------------------------------

def invariance_residual(psi_grid: np.ndarray, tau: complex, b: SymbolField,
                        t: float, metric: ConformalMetric, damping: DampingField,
                        grid: FourierGrid) -> float:
    """Defect of mu(b) = mu(b o g^t e^{-2 beta t - 2 int a}) for one eigenmode.

    beta = Im z / hbar with z = (hbar tau)^2 / 2; the transported symbol is
    evaluated by flowing the quantization samples.
    """
    if abs(t) > 2.0:
        raise ConcentrationError("invariance check limited to |t| <= 2")
    hbar = grid.hbar
    z = (hbar * tau) ** 2 / 2.0
    beta = float(z.imag / hbar)
    c = grid_state_to_coeffs(psi_grid, grid)
    c = c / np.linalg.norm(c)
    A = quantize_kn(b, grid, hermitize=True).matrix
    lhs = float(np.real(np.vdot(c, A @ c)))

    from .quantization import _kn_from_values, _transport_active_modes
    xi = grid.xi
    active = _transport_active_modes(metric, b, grid)
    X = grid.xgrid
    vals = np.empty((len(active), grid.n))
    chunk = max(1, (1 << 21) // grid.n * 4)
    for s in range(0, len(active), chunk):
        idx = active[s:s + chunk]
        pts = np.empty((len(idx) * grid.n, 4))
        pts[:, 0] = np.tile(X[:, 0], len(idx))
        pts[:, 1] = np.tile(X[:, 1], len(idx))
        pts[:, 2] = np.repeat(xi[idx, 0], grid.n)
        pts[:, 3] = np.repeat(xi[idx, 1], grid.n)
        flowed, aint = flow_points(metric, damping, pts, t, dt=1e-2)
        bt = np.asarray(b(flowed[:, 0] % grid.L, flowed[:, 1] % grid.L,
                          flowed[:, 2], flowed[:, 3]), dtype=float)
        vals[s:s + chunk] = (bt * np.exp(-2.0 * beta * t - 2.0 * aint)
                             ).reshape(len(idx), grid.n)
    M = _kn_from_values(vals, active, grid)
    M = 0.5 * (M + M.conj().T)
    rhs = float(np.real(np.vdot(c, M @ c)))
    return abs(lhs - rhs)


@dataclass(frozen=True)
class MassScanRow:
    hbar: float
    N: int
    tau: complex
    tube_mass: float
    outside_mass: float
    product: float      # outside_mass * |log hbar|


def mass_outside_scan(metric: ConformalMetric, damping: DampingField,
                      gamma: ClosedGeodesic, hbars, nu_bar: float = 0.47,
                      neighborhood: float = 0.3, min_modes: int = 5,
                      window_rel: float = 0.15) -> list[MassScanRow]:
    """Outside-U mass of the maximal-tube-mass eigenmode per hbar window.

    U is the fixed position-space neighborhood |dist to orbit projection| <=
    `neighborhood`; the product with |log hbar| is the slow-concentration
    observable.
    """
    from .spectrum import build_pencil, solve_spectrum

    rows = []
    for hbar in hbars:
        tau0 = 1.0 / hbar
        N = _resolution_for_tau(tau0, metric.L)
        grid = FourierGrid(N=N, hbar=hbar, L=metric.L)
        pencil = build_pencil(metric, damping, N=N)
        res = solve_spectrum(pencil, window=(tau0 * (1 - window_rel),
                                             tau0 * (1 + window_rel)))
        sel = np.nonzero(res.regular)[0]
        if len(sel) < min_modes:
            raise ConcentrationError(
                f"only {len(sel)} modes in the window at hbar={hbar}")
        theta = build_tube_cutoff(metric, gamma, hbar, nu_bar)
        A = quantize_antiwick(theta.symbol, grid).matrix
        t = np.arange(N) * (metric.L / N)
        X, Y = np.meshgrid(t, t, indexing="ij")
        ydist = np.abs((Y.ravel() - gamma.rho0[1] + metric.L / 2) % metric.L
                       - metric.L / 2)
        inside = ydist <= neighborhood
        best = None
        for i in sel:
            u = res.modes[:, i]
            c = grid_state_to_coeffs(u, grid)
            c /= np.linalg.norm(c)
            mass = float(np.real(np.vdot(c, A @ c)))
            if best is None or mass > best[0]:
                best = (mass, i, u)
        mass, i, u = best
        w = np.abs(u) ** 2
        outside = float(np.sum(w[~inside]) / np.sum(w))
        rows.append(MassScanRow(hbar=hbar, N=N, tau=complex(res.taus[i]),
                                tube_mass=mass, outside_mass=outside,
                                product=outside * abs(math.log(hbar))))
    return rows


def _resolution_for_tau(tau: float, L: float) -> int:
    N = int(math.ceil(tau * 4.0 * L / (2.0 * math.pi) * 1.15))
    N += N % 2
    return max(16, N)
