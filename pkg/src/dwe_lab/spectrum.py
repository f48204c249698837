"""Quadratic eigenvalue problem (-Delta_g - tau^2 - 2 i tau a) u = 0.

The pencil lives in the grid-value basis where the damping multiplier is
literally diagonal; the stiffness K = -Delta_g = e^{-2 phi} (-Delta_flat) is
materialized densely from the DFT synthesis matrix.  The discretization is
not self-adjoint in the flat inner product (it is in the e^{2 phi}-weighted
one); eigenpair residuals and singular values are the ground truth here.
Eigenvalues come from shifted-QR on a balanced companion linearization.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import ConformalMetric, DampingField

__all__ = [
    "QuadraticPencil",
    "SpectrumResult",
    "ResolventProbe",
    "SpectrumError",
    "build_pencil",
    "linearize",
    "solve_spectrum",
    "strip_check",
    "resolvent_norm",
    "gap_scan",
    "weyl_count",
    "imaginary_part_histogram",
    "z_of_tau",
]

RESIDUAL_TOL = 1e-8
ZERO_MODE_TOL = 1e-8


class SpectrumError(RuntimeError):
    pass


def z_of_tau(hbar: float, tau: complex) -> complex:
    """Semiclassical rescaling z = (hbar tau)^2 / 2."""
    return (hbar * tau) ** 2 / 2.0


@dataclass(eq=False)
class QuadraticPencil:
    """Stiffness K = -Delta_g and diagonal damping values on the N x N grid."""

    K: np.ndarray
    a_diag: np.ndarray
    N: int
    L: float
    weight: np.ndarray  # e^{2 phi} grid values (flattened)
    area_g: float
    damping_nonnegative: bool
    damping_max: float
    metric_name: str = ""
    damping_name: str = ""

    @property
    def n(self) -> int:
        return self.K.shape[0]

    @property
    def resolved_cap(self) -> float:
        return (2.0 * np.pi / self.L) * self.N / 4.0

    def weighted_hermitian_defect(self) -> float:
        """Max entry of W K - (W K)^H with W = diag(e^{2 phi}); ~0 by construction."""
        WK = self.weight[:, None] * self.K
        return float(np.max(np.abs(WK - WK.conj().T)))

    def apply(self, tau: complex, u: np.ndarray) -> np.ndarray:
        return self.K @ u - tau**2 * u - 2j * tau * (self.a_diag * u)


def _dft_synthesis(N: int, L: float):
    t = np.arange(N) * (L / N)
    k = np.fft.fftfreq(N, d=1.0 / N)
    om = 2.0 * np.pi * k / L
    X, Y = np.meshgrid(t, t, indexing="ij")
    WX, WY = np.meshgrid(om, om, indexing="ij")
    E = np.exp(1j * (X.ravel()[:, None] * WX.ravel()[None, :]
                     + Y.ravel()[:, None] * WY.ravel()[None, :]))
    w2 = WX.ravel() ** 2 + WY.ravel() ** 2
    return E, w2


def build_pencil(metric: ConformalMetric, damping: DampingField,
                 N: int | None = None) -> QuadraticPencil:
    """Assemble the quadratic pencil for a metric/damping pair at resolution N."""
    N = N or metric.N
    E, w2 = _dft_synthesis(N, metric.L)
    n = N * N
    K_flat = (E * w2[None, :]) @ E.conj().T / n
    K_flat = 0.5 * (K_flat + K_flat.conj().T)
    t = np.arange(N) * (metric.L / N)
    X, Y = np.meshgrid(t, t, indexing="ij")
    conf = np.exp(-2.0 * metric.phi(X.ravel(), Y.ravel()))
    K = conf[:, None] * K_flat
    a_diag = np.asarray(damping(X.ravel(), Y.ravel()), dtype=float)
    weight = 1.0 / conf
    area = float(np.mean(weight) * metric.L**2)
    return QuadraticPencil(K=K, a_diag=a_diag, N=N, L=metric.L, weight=weight,
                           area_g=area,
                           damping_nonnegative=bool(damping.nonnegative),
                           damping_max=float(np.max(np.abs(a_diag))),
                           metric_name=metric.name, damping_name=damping.name)


def linearize(pencil: QuadraticPencil) -> np.ndarray:
    """First companion form tau [u; w] = [[0, I], [K, -2iA]] [u; w], w = tau u.

    The w block is scaled by the characteristic frequency (2 pi / L) N / 4 to
    balance the matrix before QR.
    """
    n = pencil.n
    wc = pencil.resolved_cap
    C = np.zeros((2 * n, 2 * n), dtype=complex)
    C[:n, n:] = wc * np.eye(n)
    C[n:, :n] = pencil.K / wc
    C[n:, n:] = -2j * np.diag(pencil.a_diag)
    return C


@dataclass(eq=False)
class SpectrumResult:
    """Windowed eigenpairs (sorted by Re tau) plus the full eigenvalue list."""

    taus: np.ndarray           # windowed eigenvalues
    modes: np.ndarray          # (n, m) grid-value eigenvectors, unit l2 norm
    residuals: np.ndarray
    full_taus: np.ndarray      # all 2n companion eigenvalues
    window: tuple[float, float]
    pencil: QuadraticPencil
    zero_mode: np.ndarray      # bool tags for the k=0 exceptional pair
    excluded: int = 0

    @property
    def regular(self) -> np.ndarray:
        return ~self.zero_mode

    @property
    def regular_taus(self) -> np.ndarray:
        """Eigenvalues with the k=0 exceptional pair excluded."""
        return self.taus[self.regular]

    @property
    def betas(self) -> np.ndarray:
        """Per-mode damping rates Im tau."""
        return self.taus.imag

    def z_values(self, hbar: float) -> np.ndarray:
        return (hbar * self.taus) ** 2 / 2.0

    def mirror_defect(self) -> float:
        """Max distance from {-conj(tau)} to the full spectrum (multiset symmetry)."""
        if len(self.taus) == 0:
            return 0.0
        mirror = -np.conj(self.taus)
        d = np.abs(mirror[:, None] - self.full_taus[None, :])
        return float(d.min(axis=1).max())

    def mode_grid(self, i: int) -> np.ndarray:
        return self.modes[:, i].reshape(self.pencil.N, self.pencil.N)

    def to_json(self) -> str:
        return json.dumps({
            "window": list(self.window),
            "N": self.pencil.N,
            "taus": [[float(t.real), float(t.imag)] for t in self.taus],
            "residuals": [float(r) for r in self.residuals],
            "excluded": self.excluded,
        })

    def csv_rows(self):
        return [(float(t.real), float(t.imag), float(r))
                for t, r in zip(self.taus, self.residuals)]


def solve_spectrum(pencil: QuadraticPencil, window: tuple[float, float] | None = None,
                   residual_tol: float = RESIDUAL_TOL) -> SpectrumResult:
    """Solve the pencil by dense QR on the companion and filter to the window.

    Retained eigenpairs satisfy residual <= residual_tol; pairs beyond the
    resolved band |tau| <= (2 pi / L) N / 4 are discretization artifacts and
    are excluded from the windowed set (the full eigenvalue list is kept for
    the mirror-symmetry check).

    The k = 0 constant mode carries the exceptional pair {tau = 0, tau of the
    damped partner}; for a = 0 that pair is a defective double root which QR
    splits at the sqrt(machine-eps) scale, so the zero-mode tag goes by
    eigenvector content (overlap with the constant function), not by |tau|
    alone.
    """
    C = linearize(pencil)
    taus, V = np.linalg.eig(C)
    n = pencil.n
    cap = pencil.resolved_cap * (1.0 + 1e-9) + 1e-6
    if window is None:
        window = (-cap, cap)
    keep = ((taus.real >= window[0]) & (taus.real <= window[1])
            & (np.abs(taus) <= cap))
    idx = np.nonzero(keep)[0]
    modes = V[:n, idx]
    norms = np.linalg.norm(modes, axis=0)
    modes = modes / norms
    res = np.array([
        np.linalg.norm(pencil.apply(taus[j], modes[:, i]))
        for i, j in enumerate(idx)
    ])
    good = res <= residual_tol
    excluded = int(np.sum(~good))
    idx = idx[good]
    modes = modes[:, good]
    res = res[good]
    order = np.argsort(taus[idx].real, kind="stable")
    tau_w = taus[idx][order]
    modes = modes[:, order]
    const_overlap = np.abs(modes.sum(axis=0)) / math.sqrt(n)
    exceptional_cap = 2.0 * pencil.damping_max + 1e-5
    zero_mode = (np.abs(tau_w) <= ZERO_MODE_TOL) | (
        (const_overlap >= 0.99) & (np.abs(tau_w) <= exceptional_cap))
    return SpectrumResult(
        taus=tau_w,
        modes=modes,
        residuals=res[order],
        full_taus=taus,
        window=window,
        pencil=pencil,
        zero_mode=zero_mode,
        excluded=excluded,
    )


@dataclass(frozen=True)
class StripReport:
    fraction: float
    n_checked: int
    offenders: tuple
    A_minus: float
    A_plus: float
    tol: float
    re_min: float


def strip_check(result: SpectrumResult, A_minus: float, A_plus: float,
                tol: float = 0.1, re_min: float = 20.0) -> StripReport:
    """Fraction of eigenvalues with Re tau >= re_min inside [A- - tol, A+ + tol]."""
    sel = result.taus.real >= re_min
    taus = result.taus[sel]
    inside = (taus.imag >= A_minus - tol) & (taus.imag <= A_plus + tol)
    offenders = tuple(complex(t) for t in taus[~inside])
    frac = float(np.mean(inside)) if len(taus) else 1.0
    return StripReport(fraction=frac, n_checked=int(len(taus)), offenders=offenders,
                       A_minus=A_minus, A_plus=A_plus, tol=tol, re_min=re_min)


@dataclass(frozen=True)
class ResolventProbe:
    tau: complex
    norm: float
    sigma_min: float
    infinite: bool


def resolvent_norm(pencil: QuadraticPencil, tau: complex,
                   singular_floor: float = 1e-13) -> ResolventProbe:
    """||(-Delta_g - 2 i a tau - tau^2)^{-1}|| = 1 / sigma_min, by full SVD."""
    M = (pencil.K - 2j * tau * np.diag(pencil.a_diag)
         - tau**2 * np.eye(pencil.n))
    smin = float(np.linalg.svd(M, compute_uv=False)[-1])
    infinite = smin < singular_floor
    norm = math.inf if infinite else 1.0 / smin
    return ResolventProbe(tau=tau, norm=norm, sigma_min=smin, infinite=infinite)


@dataclass(frozen=True)
class GapScan:
    c_emp: float
    argmin_tau: complex
    products: tuple


def gap_scan(result: SpectrumResult) -> GapScan:
    """min over nonzero tau_n of (-Im tau_n) log(1 + |tau_n|) (empirical gap constant)."""
    p = result.pencil
    if not p.damping_nonnegative or p.damping_max <= 0.0:
        raise SpectrumError("gap_scan requires damping a >= 0, a not identically 0")
    sel = (np.abs(result.taus) > ZERO_MODE_TOL) & result.regular
    taus = result.taus[sel]
    if len(taus) == 0:
        raise SpectrumError("empty spectrum window")
    products = (-taus.imag) * np.log1p(np.abs(taus))
    i = int(np.argmin(products))
    return GapScan(c_emp=float(products[i]), argmin_tau=complex(taus[i]),
                   products=tuple(float(x) for x in products))


def weyl_count(result: SpectrumResult, interval: tuple[float, float]):
    """Counting function vs the Weyl main term (Area_g / 4 pi)(l2^2 - l1^2)."""
    l1, l2 = interval
    sel = ((result.taus.real >= l1) & (result.taus.real <= l2)
           & (result.taus.real > 0) & result.regular)
    count = int(np.sum(sel))
    main = result.pencil.area_g / (4.0 * np.pi) * (l2**2 - l1**2)
    if count == 0 and main == 0:
        return count, main, 0.0
    dev = abs(count - main) / max(main, 1e-300)
    return count, main, float(dev)


def imaginary_part_histogram(result: SpectrumResult, re_min: float = 0.0,
                             bins: int = 24):
    """Histogram of Im tau for Re tau >= re_min, with the spatial-mean reference."""
    sel = (result.taus.real >= re_min) & result.regular
    vals = result.taus[sel].imag
    counts, edges = np.histogram(vals, bins=bins)
    mean = float(vals.mean()) if len(vals) else 0.0
    p = result.pencil
    ref = -float(np.sum(p.a_diag * p.weight) / np.sum(p.weight))
    return counts, edges, mean, ref
