"""Torus geometry: conformal metrics and damping profiles as finite Fourier series.

All fields live on the flat torus [0, L)^2 and are stored as band-limited
Fourier series, so derivatives are exact and every downstream consumer
(geodesic integrator, quantizer, wave stepper) sees smooth data.  The metric
is g = e^{2*phi} (dx^2 + dy^2); its Gauss curvature follows from the 2-D
conformal identity K = -e^{-2*phi} Lap(phi).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ConformalMetric",
    "DampingField",
    "GeometryError",
    "build_metric",
    "build_damping",
    "curvature",
]


class GeometryError(ValueError):
    """Raised for invalid geometry or damping specifications."""


def _as_coeff_arrays(coeffs: dict[tuple[int, int], complex]):
    """Split a {wavevector: amplitude} map into flat integer/complex arrays."""
    if not coeffs:
        return (np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64),
                np.zeros(0, dtype=np.complex128))
    items = sorted(coeffs.items())
    kx = np.array([k[0] for k, _ in items], dtype=np.int64)
    ky = np.array([k[1] for k, _ in items], dtype=np.int64)
    c = np.array([v for _, v in items], dtype=np.complex128)
    return kx, ky, c


def _check_hermitian(coeffs: dict[tuple[int, int], complex], tol: float = 0.0) -> None:
    for (kx, ky), c in coeffs.items():
        conj = coeffs.get((-kx, -ky))
        if conj is None or abs(np.conj(conj) - c) > tol:
            raise GeometryError(
                f"coefficient map is not Hermitian-symmetric at k=({kx},{ky})"
            )


@dataclass(frozen=True)
class FourierField:
    """Real-valued band-limited field on the torus, f(x) = sum_k c_k e^{2*pi*i*k.x/L}.

    Immutable; evaluation and differentiation are exact term-by-term sums.
    """

    L: float
    coeffs: dict[tuple[int, int], complex]

    def __post_init__(self):
        _check_hermitian(self.coeffs)

    @property
    def band_limit(self) -> int:
        if not self.coeffs:
            return 0
        return max(max(abs(k[0]), abs(k[1])) for k in self.coeffs)

    def coeff_arrays(self):
        return _as_coeff_arrays(self.coeffs)

    def __call__(self, x, y):
        """Evaluate at points (periodic; x, y broadcastable arrays)."""
        return self.derivative(0, 0, x, y)

    def derivative(self, nx: int, ny: int, x, y):
        """Exact partial derivative d^nx_x d^ny_y f at points."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        out = np.zeros(np.broadcast(x, y).shape, dtype=np.complex128)
        two_pi_over_L = 2.0 * np.pi / self.L
        for (kx, ky), c in self.coeffs.items():
            factor = (1j * two_pi_over_L * kx) ** nx * (1j * two_pi_over_L * ky) ** ny
            out += c * factor * np.exp(1j * two_pi_over_L * (kx * x + ky * y))
        return out.real

    def grid_values(self, n: int):
        """Values on the n x n uniform grid (row index = x, column = y)."""
        t = np.arange(n) * (self.L / n)
        X, Y = np.meshgrid(t, t, indexing="ij")
        return self(X, Y)


@dataclass(frozen=True)
class ConformalMetric:
    """Conformal torus metric g = e^{2*phi}(dx^2 + dy^2).

    Parameters
    ----------
    L : float
        Torus side length.
    phi : FourierField
        Conformal factor as a finite Fourier series (real-valued).
    N : int
        Default grid resolution per axis for discrete consumers.
    """

    L: float
    phi: FourierField
    N: int = 32
    name: str = "custom"

    def __post_init__(self):
        if self.L <= 0:
            raise GeometryError("torus side length must be positive")
        if self.phi.L != self.L:
            raise GeometryError("phi series has mismatched period")

    @property
    def band_limit(self) -> int:
        return self.phi.band_limit

    def conformal_factor(self, x, y):
        return self.phi(x, y)

    def area(self) -> float:
        """Riemannian area integral of e^{2*phi} over the torus (grid quadrature)."""
        n = 4 * self.N
        vals = np.exp(2.0 * self.phi.grid_values(n))
        return float(vals.mean() * self.L**2)

    def geodesic_length_y0(self) -> float:
        """Metric length of the horizontal circle {y=0} (trapezoid-exact quadrature)."""
        n = 4096
        x = np.arange(n) * (self.L / n)
        return float(np.mean(np.exp(self.phi(x, np.zeros_like(x)))) * self.L)

    def to_json(self) -> str:
        rec = {
            "L": self.L,
            "N": self.N,
            "coeffs": [
                {"kx": int(k[0]), "ky": int(k[1]), "re": float(c.real), "im": float(c.imag)}
                for k, c in sorted(self.phi.coeffs.items())
            ],
        }
        return json.dumps(rec)

    @staticmethod
    def from_json(text: str) -> "ConformalMetric":
        rec = json.loads(text)
        coeffs = {
            (int(e["kx"]), int(e["ky"])): complex(e["re"], e["im"])
            for e in rec["coeffs"]
        }
        return ConformalMetric(L=float(rec["L"]), phi=FourierField(float(rec["L"]), coeffs),
                               N=int(rec["N"]))


@dataclass(frozen=True)
class DampingField:
    """Damping coefficient a(x) >= 0 (or real-valued) on the torus.

    Either a finite Fourier series or a smooth closed-form profile; both
    expose exact point evaluation.  min/max are recorded over a 4N x 4N
    refinement grid at construction.
    """

    L: float
    series: FourierField | None
    profile: object | None  # callable (x, y) -> a, used when series is None
    nonnegative: bool
    min_value: float = 0.0
    max_value: float = 0.0
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __call__(self, x, y):
        if self.series is not None:
            return self.series(x, y)
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return self.profile(x, y)

    def grid_values(self, n: int):
        t = np.arange(n) * (self.L / n)
        X, Y = np.meshgrid(t, t, indexing="ij")
        return self(X, Y)

    def mean(self) -> float:
        vals = self.grid_values(256)
        return float(vals.mean())


def _refinement_extrema(field_fn, L: float, n: int):
    t = np.arange(n) * (L / n)
    X, Y = np.meshgrid(t, t, indexing="ij")
    vals = np.asarray(field_fn(X, Y), dtype=float)
    return float(vals.min()), float(vals.max())


def build_metric(preset: str, *, L: float = 1.0, N: int = 32, eps: float = 0.1,
                 modes: tuple[tuple[int, int], ...] = ((1, 1),)) -> ConformalMetric:
    """Construct a named metric preset.

    Presets
    -------
    flat
        phi = 0 everywhere; zero curvature.
    y-channel
        phi(x, y) = -eps * cos(2*pi*y/L).  The circle {y=0} is a closed
        geodesic with constant negative curvature along it; requires eps > 0.
    bumpy
        phi = eps * sum over `modes` of cos(2*pi*k.x/L).
    """
    if preset == "flat":
        return ConformalMetric(L=L, phi=FourierField(L, {}), N=N, name="flat")
    if preset == "y-channel":
        if eps <= 0:
            raise GeometryError("y-channel requires eps > 0 (hyperbolicity)")
        coeffs = {(0, 1): -0.5 * eps + 0j, (0, -1): -0.5 * eps + 0j}
        return ConformalMetric(L=L, phi=FourierField(L, coeffs), N=N, name="y-channel")
    if preset == "bumpy":
        coeffs: dict[tuple[int, int], complex] = {}
        for (mx, my) in modes:
            if (mx, my) == (0, 0):
                raise GeometryError("bumpy modes must be nonzero wavevectors")
            coeffs[(mx, my)] = coeffs.get((mx, my), 0.0) + 0.5 * eps
            coeffs[(-mx, -my)] = coeffs.get((-mx, -my), 0.0) + 0.5 * eps
        return ConformalMetric(L=L, phi=FourierField(L, coeffs), N=N, name="bumpy")
    raise GeometryError(f"unknown metric preset: {preset!r}")


def curvature(metric: ConformalMetric, n: int | None = None):
    """Gauss curvature K = -e^{-2*phi} Lap(phi) on the n x n grid (exact Fourier derivatives)."""
    n = n or metric.N
    t = np.arange(n) * (metric.L / n)
    X, Y = np.meshgrid(t, t, indexing="ij")
    return curvature_at(metric, X, Y)


def curvature_at(metric: ConformalMetric, x, y):
    """Pointwise Gauss curvature at arbitrary points."""
    lap = metric.phi.derivative(2, 0, x, y) + metric.phi.derivative(0, 2, x, y)
    return -np.exp(-2.0 * metric.phi(x, y)) * lap


def smoothstep(s):
    """C-infinity monotone step: 0 for s<=0, 1 for s>=1 (exp-based)."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = (s > 0) & (s < 1)
    upper = s >= 1
    sv = s[inside]
    a = np.exp(-1.0 / sv)
    b = np.exp(-1.0 / (1.0 - sv))
    out[inside] = a / (a + b)
    out[upper] = 1.0
    return out


_smooth_transition = smoothstep


class _WellProfile:
    """Smooth periodic damping well: exactly zero on a strip around a line, positive outside."""

    def __init__(self, L, center, half_width, outer_radius, depth, axis):
        self.L = L
        self.center = center
        self.half_width = half_width
        self.outer_radius = outer_radius
        self.depth = depth
        self.axis = axis

    def __call__(self, x, y):
        u = y if self.axis == "y" else x
        d = np.abs((np.asarray(u, dtype=float) - self.center + self.L / 2) % self.L
                   - self.L / 2)
        s = (d - self.half_width) / (self.outer_radius - self.half_width)
        return self.depth * _smooth_transition(s)


def build_damping(preset: str, *, L: float = 1.0, c: float = 0.5,
                  center: float = 0.0, half_width: float = 0.1,
                  outer_radius: float = 0.25, depth: float = 0.5,
                  axis: str = "y", require_nonnegative: bool = True,
                  N: int = 32) -> DampingField:
    """Construct a named damping preset.

    Presets
    -------
    zero
        a = 0.
    constant
        a = c.
    smooth-well
        a vanishes identically on the strip dist(u, center) <= half_width
        (u = y for axis="y"), rises smoothly, and equals `depth` beyond
        `outer_radius`.  Built from a C-infinity periodic bump, so the zero
        strip is exact, not approximate.
    """
    if preset == "zero":
        series = FourierField(L, {})
        return DampingField(L=L, series=series, profile=None, nonnegative=True,
                            min_value=0.0, max_value=0.0, name="zero")
    if preset == "constant":
        if require_nonnegative and c < 0:
            raise GeometryError("constant damping is negative but nonnegative was requested")
        series = FourierField(L, {(0, 0): complex(c)})
        return DampingField(L=L, series=series, profile=None, nonnegative=c >= 0,
                            min_value=c, max_value=c, name="constant", params={"c": c})
    if preset == "smooth-well":
        if not (0 < half_width < outer_radius < L / 2):
            raise GeometryError("smooth-well needs 0 < half_width < outer_radius < L/2")
        prof = _WellProfile(L, center, half_width, outer_radius, depth, axis)
        lo, hi = _refinement_extrema(prof, L, 4 * N)
        if require_nonnegative and lo < -1e-12:
            raise GeometryError("smooth-well profile goes negative")
        return DampingField(L=L, series=None, profile=prof, nonnegative=lo >= -1e-12,
                            min_value=lo, max_value=hi, name="smooth-well",
                            params={"center": center, "half_width": half_width,
                                    "outer_radius": outer_radius, "depth": depth,
                                    "axis": axis})
    raise GeometryError(f"unknown damping preset: {preset!r}")


def gauss_bonnet_defect(metric: ConformalMetric, n: int | None = None) -> float:
    """Discrete integral of K dA_g; identically zero on the torus up to roundoff."""
    n = n or metric.N
    K = curvature(metric, n)
    t = np.arange(n) * (metric.L / n)
    X, Y = np.meshgrid(t, t, indexing="ij")
    dA = np.exp(2.0 * metric.phi(X, Y)) * (metric.L / n) ** 2
    return float(np.sum(K * dA))
