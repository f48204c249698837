"""Finite-dimensional quantization on the torus Fourier grid.

Operators act on Fourier-coefficient vectors indexed in FFT layout
(k in {-N/2, ..., N/2 - 1} per axis, n = N^2 states).  Position multipliers
are materialized as transform-multiply-transform matrices, Kohn-Nirenberg
symbols column-by-column via FFT, and the positivity-preserving quantization
as a discrete coherent-state frame (a quadrature of the anti-Wick integral,
positive semidefinite by construction for nonnegative symbols, with the
Gaussian-smoothed symbol as its leading Kohn-Nirenberg reduction).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from ._linalg import spectral_norm
from .dynamics import flow_points
from .geometry import ConformalMetric, DampingField

__all__ = [
    "FourierGrid",
    "WaveFunction",
    "OperatorMatrix",
    "SymbolField",
    "QuantizationError",
    "AliasingError",
    "PropagatorOverflow",
    "laplace_beltrami",
    "multiplication_operator",
    "quantize_kn",
    "quantize_antiwick",
    "build_P",
    "propagator",
    "egorov_residual",
]


class QuantizationError(ValueError):
    pass


class AliasingError(QuantizationError):
    """Metric band limit too large for the grid resolution."""


class PropagatorOverflow(QuantizationError):
    """exp(-itP/hbar) would overflow; unphysical parameter combination."""


class SupportWindowError(QuantizationError):
    """Symbol support left the resolved frequency window under the flow."""


@dataclass(frozen=True)
class FourierGrid:
    """N x N Fourier grid with semiclassical parameter hbar.

    Modes follow FFT layout; the resolved momentum window per axis is
    |xi| <= hbar * pi * N / L.
    """

    N: int
    hbar: float
    L: float = 1.0

    def __post_init__(self):
        if self.N % 2 != 0 or self.N < 16:
            raise QuantizationError("N must be even and >= 16")
        if self.hbar <= 0:
            raise QuantizationError("hbar must be positive")

    @property
    def n(self) -> int:
        return self.N * self.N

    @property
    def mode_ints(self) -> tuple[np.ndarray, np.ndarray]:
        k = np.fft.fftfreq(self.N, d=1.0 / self.N).astype(np.int64)
        KX, KY = np.meshgrid(k, k, indexing="ij")
        return KX.ravel(), KY.ravel()

    @property
    def omega(self) -> np.ndarray:
        kx, ky = self.mode_ints
        return (2.0 * np.pi / self.L) * np.stack([kx, ky], axis=1).astype(float)

    @property
    def xi(self) -> np.ndarray:
        return self.hbar * self.omega

    @property
    def xgrid(self) -> np.ndarray:
        t = np.arange(self.N) * (self.L / self.N)
        X, Y = np.meshgrid(t, t, indexing="ij")
        return np.stack([X.ravel(), Y.ravel()], axis=1)

    @property
    def xi_max(self) -> float:
        return self.hbar * np.pi * self.N / self.L

    def coeffs_to_grid(self, c: np.ndarray) -> np.ndarray:
        return (np.fft.ifft2(c.reshape(self.N, self.N)) * self.n).ravel()

    def grid_to_coeffs(self, u: np.ndarray) -> np.ndarray:
        return (np.fft.fft2(u.reshape(self.N, self.N)) / self.n).ravel()


@dataclass(frozen=True)
class WaveFunction:
    """State as Fourier coefficients; reported norm is the coefficient l2 norm."""

    coeffs: np.ndarray
    grid: FourierGrid
    norm: float = field(default=0.0)

    def __post_init__(self):
        actual = float(np.linalg.norm(self.coeffs))
        if self.norm == 0.0:
            object.__setattr__(self, "norm", actual)
        elif abs(self.norm - actual) > 1e-12 * max(actual, 1.0):
            raise QuantizationError("declared norm differs from coefficient l2 norm")

    def normalized(self) -> "WaveFunction":
        return WaveFunction(self.coeffs / self.norm, self.grid)


@dataclass(eq=False)
class OperatorMatrix:
    """Dense operator in the Fourier-coefficient basis, with provenance tag."""

    matrix: np.ndarray
    provenance: str
    hbar: float
    grid: FourierGrid | None = None
    _eig: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        if not np.all(np.isfinite(self.matrix)):
            raise QuantizationError("operator matrix has non-finite entries")

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def norm(self) -> float:
        return spectral_norm(self.matrix)

    def eig(self):
        """Cached eigendecomposition (w, V, Vinv, cond estimate)."""
        if self._eig is None:
            w, V = np.linalg.eig(self.matrix)
            Vinv = np.linalg.inv(V)
            cond = float(np.linalg.norm(V, 1) * np.linalg.norm(Vinv, 1))
            self._eig = (w, V, Vinv, cond)
        return self._eig


@dataclass(frozen=True)
class SymbolField:
    """Phase-space symbol b(x, y, xi_x, xi_y) with declared momentum support box.

    `xi_support` is ((xi_x lo, xi_x hi), (xi_y lo, xi_y hi)) or None for
    unbounded; `nu_bar` tags hbar^nu_bar-scale symbols (tube cutoffs).
    """

    fn: object
    xi_support: tuple | None = None
    nu_bar: float | None = None
    name: str = "symbol"

    def __call__(self, x, y, xix, xiy):
        return self.fn(x, y, xix, xiy)

    def mode_active(self, xi: np.ndarray) -> np.ndarray:
        if self.xi_support is None:
            return np.ones(xi.shape[0], dtype=bool)
        (ax, bx), (ay, by) = self.xi_support
        return ((xi[:, 0] >= ax) & (xi[:, 0] <= bx)
                & (xi[:, 1] >= ay) & (xi[:, 1] <= by))

    def check_support(self, rng_seed: int = 0, n: int = 512, box_margin: float = 0.5,
                      L: float = 1.0) -> float:
        """Max |b| sampled outside the declared support box (should be 0)."""
        if self.xi_support is None:
            return 0.0
        rng = np.random.default_rng(rng_seed)
        (ax, bx), (ay, by) = self.xi_support
        xs = rng.uniform(0, L, size=(n, 2))
        xis = rng.uniform([ax - box_margin, ay - box_margin],
                          [bx + box_margin, by + box_margin], size=(n, 2))
        outside = ((xis[:, 0] < ax) | (xis[:, 0] > bx)
                   | (xis[:, 1] < ay) | (xis[:, 1] > by))
        if not np.any(outside):
            return 0.0
        vals = self(xs[outside, 0], xs[outside, 1], xis[outside, 0], xis[outside, 1])
        return float(np.max(np.abs(vals)))


def constant_symbol(value: float = 1.0, grid: FourierGrid | None = None) -> SymbolField:
    def fn(x, y, xix, xiy):
        return np.full(np.broadcast(x, y, xix, xiy).shape, float(value))
    return SymbolField(fn, xi_support=None, name=f"const({value})")


def energy_window_symbol(metric: ConformalMetric,
                         inner: tuple[float, float] = (0.25, 0.5),
                         outer: tuple[float, float] = (1.5, 2.0),
                         name: str = "energy-window") -> SymbolField:
    """Smooth cutoff chi(|xi|_g^2): 1 on [inner[1], outer[0]], 0 outside [inner[0], outer[1]]."""
    from .geometry import smoothstep

    phimax = float(metric.phi.grid_values(64).max())
    r = math.sqrt(outer[1]) * math.exp(phimax) * 1.001

    def fn(x, y, xix, xiy):
        e2 = np.exp(-2.0 * metric.phi(x, y))
        s2 = e2 * (np.asarray(xix) ** 2 + np.asarray(xiy) ** 2)
        rise = smoothstep((s2 - inner[0]) / (inner[1] - inner[0]))
        fall = 1.0 - smoothstep((s2 - outer[0]) / (outer[1] - outer[0]))
        return rise * fall

    return SymbolField(fn, xi_support=((-r, r), (-r, r)), name=name)


# ---------------------------------------------------------------------------
# matrix assembly
# ---------------------------------------------------------------------------

def multiplication_operator(f_grid: np.ndarray, grid: FourierGrid,
                            provenance: str = "symbol") -> OperatorMatrix:
    """Matrix of pointwise multiplication by f (transform-multiply-transform)."""
    N = grid.N
    fhat = np.fft.fft2(np.asarray(f_grid, dtype=complex).reshape(N, N)) / grid.n
    kx, ky = grid.mode_ints
    M = np.empty((grid.n, grid.n), dtype=complex)
    chunk = max(1, (1 << 22) // grid.n)
    for s in range(0, grid.n, chunk):
        e = min(s + chunk, grid.n)
        dx = (kx[s:e, None] - kx[None, :]) % N
        dy = (ky[s:e, None] - ky[None, :]) % N
        M[s:e] = fhat[dx, dy]
    return OperatorMatrix(M, provenance, grid.hbar, grid)


def laplace_beltrami(metric: ConformalMetric, grid: FourierGrid,
                     symmetrized: bool = False) -> OperatorMatrix:
    """Matrix of Delta_g = e^{-2 phi} Delta_flat in the Fourier basis.

    With ``symmetrized=True`` the unitarily equivalent realization
    e^{-phi} Delta_flat e^{-phi} is returned instead (the conjugation by the
    isometry L^2(e^{2 phi} dx) -> L^2(dx)); it shares the spectrum and the
    principal symbol but is exactly Hermitian, which keeps undamped
    propagators unitary in the coefficient l2 norm.
    """
    if metric.band_limit > grid.N // 4:
        raise AliasingError(
            f"metric band limit {metric.band_limit} exceeds N/4 = {grid.N // 4}")
    X = grid.xgrid
    w2 = np.sum(grid.omega**2, axis=1)
    if symmetrized:
        half = np.exp(-metric.phi(X[:, 0], X[:, 1]))
        Mh = multiplication_operator(half, grid).matrix
        M = Mh @ (-w2[:, None] * Mh)
        M = 0.5 * (M + M.conj().T)
        return OperatorMatrix(M, "laplacian", grid.hbar, grid)
    conf = np.exp(-2.0 * metric.phi(X[:, 0], X[:, 1]))
    Mconf = multiplication_operator(conf, grid).matrix
    return OperatorMatrix(Mconf * (-w2)[None, :], "laplacian", grid.hbar, grid)


def _kn_from_values(values, active, grid) -> np.ndarray:
    """KN matrix columns from symbol values: values[i, j] = b(x_j, xi_{active[i]})."""
    N = grid.N
    M = np.zeros((grid.n, grid.n), dtype=complex)
    if len(active) == 0:
        return M
    X = grid.xgrid
    omega = grid.omega
    chunk = max(1, (1 << 22) // grid.n)
    for s in range(0, len(active), chunk):
        idx = active[s:s + chunk]
        phase = np.exp(1j * (omega[idx, 0][:, None] * X[None, :, 0]
                             + omega[idx, 1][:, None] * X[None, :, 1]))
        g = (values[s:s + chunk] * phase).reshape(-1, N, N)
        cols = np.fft.fft2(g, axes=(1, 2)).reshape(-1, grid.n) / grid.n
        M[:, idx] = cols.T
    return M


def quantize_kn(b: SymbolField, grid: FourierGrid,
                hermitize: bool = False) -> OperatorMatrix:
    """Kohn-Nirenberg quantization: (Op b)u(x) = sum_k b(x, hbar w_k) u_k e^{i w_k x}.

    ``hermitize=True`` returns the ordering-symmetrized (Op + Op^H)/2, which
    for real symbols reproduces Weyl-like midpoint behavior (the principal
    symbol is unchanged, the first-order ordering defect cancels).
    """
    xi = grid.xi
    active = np.nonzero(b.mode_active(xi))[0]
    X = grid.xgrid
    vals = np.empty((len(active), grid.n))
    chunk = max(1, (1 << 22) // grid.n)
    for s in range(0, len(active), chunk):
        idx = active[s:s + chunk]
        vals[s:s + chunk] = b(X[None, :, 0], X[None, :, 1],
                              xi[idx, 0][:, None], xi[idx, 1][:, None])
    M = _kn_from_values(vals, active, grid)
    if hermitize:
        M = 0.5 * (M + M.conj().T)
    return OperatorMatrix(M, "symbol", grid.hbar, grid)


def quantize_antiwick(b: SymbolField, grid: FourierGrid, oversample: int = 2,
                      xi_step_factor: float = 0.6) -> OperatorMatrix:
    """Positivity-preserving quantization via a discrete coherent-state frame.

    Op(b) = sum over a phase-space quadrature grid of w * b(x_j, xi_q)
    |chi_{j,q}><chi_{j,q}| with periodized Gaussian states of width sqrt(hbar)
    in both position and momentum.  For b >= 0 the matrix is a nonnegative
    combination of rank-one projectors, so positivity holds to roundoff; the
    weight w is calibrated so that b == 1 maps to the identity.
    """
    hbar = grid.hbar
    L = grid.L
    N = grid.N
    sq = math.sqrt(hbar)
    h_xi = xi_step_factor * sq
    pad = 6.5 * sq

    if b.xi_support is not None:
        (ax, bx), (ay, by) = b.xi_support
    else:
        ax = ay = -grid.xi_max
        bx = by = grid.xi_max
    qx = _xi_nodes(ax - pad, bx + pad, h_xi)
    qy = _xi_nodes(ay - pad, by + pad, h_xi)

    nxs = oversample * N
    t = np.arange(nxs) * (L / nxs)
    XG, YG = np.meshgrid(t, t, indexing="ij")
    xf = XG.ravel()
    yf = YG.ravel()

    # band of mode offsets that survive the Gaussian overlap
    B = int(math.ceil((L / (2.0 * math.pi)) * math.sqrt(180.0 / hbar)))
    B = min(B, N - 1)
    offs = np.arange(-B, B + 1)

    # x-DFT of b(. , xi_q) for every quadrature node, restricted to the band
    Bt = np.empty((offs.size, offs.size, qx.size, qy.size), dtype=complex)
    chunk = max(1, (1 << 21) // (nxs * nxs))
    nodes = [(i, j) for i in range(qx.size) for j in range(qy.size)]
    for s in range(0, len(nodes), chunk):
        blk = nodes[s:s + chunk]
        qxv = np.array([qx[i] for i, _ in blk])
        qyv = np.array([qy[j] for _, j in blk])
        vals = b(xf[None, :], yf[None, :], qxv[:, None], qyv[:, None])
        F = np.fft.fft2(np.asarray(vals, dtype=complex).reshape(-1, nxs, nxs),
                        axes=(1, 2))
        band = F[:, offs % nxs, :][:, :, offs % nxs]
        for m, (i, j) in enumerate(blk):
            Bt[:, :, i, j][...] = band[m]

    # per-axis Gaussian profiles eta[k, q] = exp(-(hbar w_k - xi_q)^2 / (2 hbar))
    kints = np.fft.fftfreq(N, d=1.0 / N).astype(int)
    wvals = 2.0 * np.pi * kints / L
    etax = np.exp(-(hbar * wvals[:, None] - qx[None, :]) ** 2 / (2.0 * hbar))
    etay = np.exp(-(hbar * wvals[:, None] - qy[None, :]) ** 2 / (2.0 * hbar))

    kxi, kyi = grid.mode_ints
    kx_mod = kxi % N
    ky_mod = kyi % N
    w = h_xi * h_xi / (nxs * nxs * math.pi * hbar)

    out = np.zeros((grid.n, grid.n), dtype=complex)
    kmin, kmax = -N // 2, N // 2 - 1
    for dyi, dy in enumerate(offs):
        ky_ok = (kyi + dy >= kmin) & (kyi + dy <= kmax)
        # contract the qy axis once per dy: G[dxi, ky_col, qx];
        # EYrow holds eta for the shifted row modes ky+dy, indexed by column ky
        EYrow = np.exp(-(hbar * (wvals + 2.0 * np.pi * dy / L)[:, None]
                         - qy[None, :]) ** 2 / (2.0 * hbar))
        EYprod = EYrow * etay  # (N, nqy), row ky -> eta_{ky+dy} eta_{ky}
        G = np.einsum("kq,dpq->dkp", EYprod, Bt[:, dyi, :, :], optimize=True)
        for dxi, dx in enumerate(offs):
            ok = ky_ok & (kxi + dx >= kmin) & (kxi + dx <= kmax)
            cols = np.nonzero(ok)[0]
            if cols.size == 0:
                continue
            EXrow = np.exp(-(hbar * (wvals + 2.0 * np.pi * dx / L)[:, None]
                             - qx[None, :]) ** 2 / (2.0 * hbar))
            EXprod = EXrow * etax  # (N, nqx)
            vals = np.einsum("cq,cq->c", EXprod[kx_mod[cols], :],
                             G[dxi, ky_mod[cols], :], optimize=True)
            rows = ((kxi[cols] + dx) % N) * N + ((kyi[cols] + dy) % N)
            out[rows, cols] = w * vals
    out = 0.5 * (out + out.conj().T)
    return OperatorMatrix(out, "symbol", grid.hbar, grid)


def _xi_nodes(lo: float, hi: float, step: float) -> np.ndarray:
    n = int(math.ceil((hi - lo) / step)) + 1
    return lo + step * np.arange(n)


# ---------------------------------------------------------------------------
# semiclassical operator and propagator
# ---------------------------------------------------------------------------

def build_P(metric: ConformalMetric, damping: DampingField, grid: FourierGrid,
            z: complex = 0.5) -> OperatorMatrix:
    """P(hbar, z) = -hbar^2 Delta_g / 2 - i hbar sqrt(2z) a(x).

    Uses the symmetrized (unitarily equivalent) Laplacian realization so the
    Hermitian part is exactly -hbar^2 Delta_g / 2 and undamped propagators
    stay unitary.
    """
    lap = laplace_beltrami(metric, grid, symmetrized=True).matrix
    X = grid.xgrid
    a_grid = np.asarray(damping(X[:, 0], X[:, 1]), dtype=float)
    if np.max(np.abs(a_grid)) == 0.0:
        A = np.zeros((grid.n, grid.n), dtype=complex)
    else:
        A = multiplication_operator(a_grid, grid).matrix
    P = -(grid.hbar**2 / 2.0) * lap - 1j * grid.hbar * np.sqrt(2.0 * complex(z)) * A
    return OperatorMatrix(P, "pencil", grid.hbar, grid)


def propagator(P: OperatorMatrix, t: float, hbar: float | None = None,
               cond_threshold: float = 1e12) -> OperatorMatrix:
    """U^t = exp(-i t P / hbar) by diagonalization, scaling-and-squaring fallback."""
    hbar = hbar if hbar is not None else P.hbar
    if not np.isfinite(t):
        raise QuantizationError("propagator time must be finite")
    M = P.matrix
    offdiag = M - np.diag(np.diag(M))
    if np.max(np.abs(offdiag)) == 0.0:
        w = np.diag(M)
        _overflow_guard(w, t, hbar)
        U = np.diag(np.exp(-1j * t * w / hbar))
        return OperatorMatrix(U, "propagator", hbar, P.grid)
    w, V, Vinv, cond = P.eig()
    _overflow_guard(w, t, hbar)
    if cond > cond_threshold:
        U = scipy.linalg.expm(-1j * t * M / hbar)
    else:
        U = (V * np.exp(-1j * t * w / hbar)[None, :]) @ Vinv
    return OperatorMatrix(U, "propagator", hbar, P.grid)


def _overflow_guard(w, t, hbar):
    growth = abs(t) * float(np.max(np.abs(w.imag))) / hbar
    if growth > 700.0:
        raise PropagatorOverflow(
            f"|t| * |Im spec| / hbar = {growth:.1f} > 700; refuse to exponentiate")


# ---------------------------------------------------------------------------
# Egorov residual
# ---------------------------------------------------------------------------

def egorov_residual(metric: ConformalMetric, damping: DampingField, b: SymbolField,
                    t: float, grid: FourierGrid, kappa1: float = 0.2,
                    z: complex = 0.5, dt: float = 1e-2) -> float:
    """Norm of (U^t)* Op(b) U^t - Op(b o g^t . e^{-2 int_0^t a o g^tau dtau}).

    The transported symbol is evaluated by flowing every (grid point, active
    mode) phase-space sample forward for time t while accumulating the damping
    integral along the way.  Both sides use the ordering-symmetrized
    quantization (the paper-side statements are ordering-insensitive at
    leading order, and the symmetrized ordering removes the first-order
    Kohn-Nirenberg defect that would otherwise dominate the residual).
    """
    if abs(t) > kappa1 * abs(math.log(grid.hbar)):
        raise QuantizationError(
            f"|t|={abs(t)} exceeds kappa1 |log hbar| = {kappa1 * abs(math.log(grid.hbar)):.3f}")
    P = build_P(metric, damping, grid, z)
    U = propagator(P, t).matrix
    A = quantize_kn(b, grid, hermitize=True).matrix

    xi = grid.xi
    active = _transport_active_modes(metric, b, grid)
    X = grid.xgrid
    ngrid = grid.n
    vals = np.empty((len(active), ngrid))
    chunk = max(1, (1 << 19) // ngrid * 8)
    for s in range(0, len(active), chunk):
        idx = active[s:s + chunk]
        pts = np.empty((len(idx) * ngrid, 4))
        pts[:, 0] = np.tile(X[:, 0], len(idx))
        pts[:, 1] = np.tile(X[:, 1], len(idx))
        pts[:, 2] = np.repeat(xi[idx, 0], ngrid)
        pts[:, 3] = np.repeat(xi[idx, 1], ngrid)
        flowed, aint = flow_points(metric, damping, pts, t, dt)
        bt = np.asarray(b(flowed[:, 0] % grid.L, flowed[:, 1] % grid.L,
                          flowed[:, 2], flowed[:, 3]), dtype=float)
        vals[s:s + chunk] = (bt * np.exp(-2.0 * aint)).reshape(len(idx), ngrid)

    _check_window(vals, active, xi, grid)
    Op_bt = _kn_from_values(vals, active, grid)
    Op_bt = 0.5 * (Op_bt + Op_bt.conj().T)
    D = U.conj().T @ A @ U - Op_bt
    return spectral_norm(D)


def _transport_active_modes(metric, b, grid):
    """Modes whose flowed momentum can meet the symbol support (metric-norm bands)."""
    xi = grid.xi
    if b.xi_support is None:
        return np.arange(grid.n)
    (ax, bx), (ay, by) = b.xi_support
    corners = np.abs(np.array([[ax, ay], [ax, by], [bx, ay], [bx, by]]))
    rmax = float(np.max(np.hypot(corners[:, 0], corners[:, 1])))
    vals = metric.phi.grid_values(64)
    spread = math.exp(2.0 * (float(vals.max()) - float(vals.min())))
    spacing = 2.0 * np.pi * grid.hbar / grid.L
    r = np.hypot(xi[:, 0], xi[:, 1])
    return np.nonzero(r <= rmax * spread + 4.0 * spacing)[0]


def _check_window(vals, active, xi, grid):
    if len(active) == grid.n:
        return
    r = np.hypot(xi[active, 0], xi[active, 1])
    edge = r >= r.max() - 2.0 * np.pi * grid.hbar / grid.L - 1e-12
    vmax = float(np.max(np.abs(vals))) if vals.size else 0.0
    if vmax == 0.0:
        return
    if float(np.max(np.abs(vals[edge]))) > 1e-6 * vmax:
        raise SupportWindowError(
            "transported symbol support reaches the resolved window edge")
