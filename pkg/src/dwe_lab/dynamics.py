"""Geodesic-flow dynamics: trajectories, closed orbits, Birkhoff data, pressure.

The flow is the Hamiltonian flow of p0(x, xi) = e^{-2 phi(x)} |xi|^2 / 2 on the
cotangent bundle of the torus, integrated by fixed-step RK4 (energy drift is
monitored rather than enforced).  Closed geodesics are located by Newton
iteration on a Poincare return map, their transverse monodromy comes from the
variational flow, and topological pressure over a tubular sample set is
estimated by greedy (eps, T)-separated packing with a 1/T extrapolation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .geometry import ConformalMetric, DampingField

__all__ = [
    "PhaseSpacePoint",
    "Trajectory",
    "ClosedGeodesic",
    "DynamicsReport",
    "FlowError",
    "NewtonError",
    "ShadowingEscape",
    "flow",
    "flow_points",
    "birkhoff_average",
    "estimate_A_bounds",
    "find_closed_geodesic",
    "unstable_jacobian",
    "pressure_estimate",
    "shadow_average_check",
    "halton_sphere_samples",
    "tube_samples",
]

DEFAULT_DT = 1e-3
DRIFT_TOL_PER_TIME = 1e-9


class FlowError(RuntimeError):
    """Energy drift beyond tolerance (dt too large for this metric)."""


class NewtonError(RuntimeError):
    """Poincare-map Newton iteration failed to converge."""


class ShadowingEscape(RuntimeError):
    """A shadowing test point left the tube around the reference orbit."""

    def __init__(self, msg, escape_time, excess):
        super().__init__(msg)
        self.escape_time = escape_time
        self.excess = excess


def _phi_arrays(metric: ConformalMetric):
    kx, ky, c = metric.phi.coeff_arrays()
    return kx, ky, np.ascontiguousarray(c.real), np.ascontiguousarray(c.imag)


def _damping_descriptor(damping: DampingField):
    """Pack a DampingField into the kernel descriptor (kind, series, well params)."""
    empty = np.zeros(0, dtype=np.int64)
    emptyf = np.zeros(0)
    if damping.series is not None:
        kx, ky, c = damping.series.coeff_arrays()
        return 0, kx, ky, np.ascontiguousarray(c.real), np.ascontiguousarray(c.imag), np.zeros(4)
    p = damping.params
    kind = 1 if p.get("axis", "y") == "y" else 2
    dpar = np.array([p["center"], p["half_width"], p["outer_radius"], p["depth"]])
    return kind, empty, empty, emptyf, emptyf, dpar


def hamiltonian(metric: ConformalMetric, states) -> np.ndarray:
    """p0 = e^{-2 phi} |xi|^2 / 2 evaluated on an (m, 4) state array."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    phi = metric.phi(states[:, 0], states[:, 1])
    return np.exp(-2.0 * phi) * (states[:, 2] ** 2 + states[:, 3] ** 2) / 2.0


def unit_speed_momentum(metric: ConformalMetric, x, y, theta):
    """Momentum of metric-unit length |xi|_g = 1 in direction theta at (x, y)."""
    r = np.exp(metric.phi(x, y))
    return r * np.cos(theta), r * np.sin(theta)


@dataclass(frozen=True)
class PhaseSpacePoint:
    """Point rho = (x, xi) on T*M with position reduced mod L."""

    x: tuple[float, float]
    xi: tuple[float, float]
    L: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "x", (self.x[0] % self.L, self.x[1] % self.L))

    def as_array(self) -> np.ndarray:
        return np.array([self.x[0], self.x[1], self.xi[0], self.xi[1]])


@dataclass(frozen=True)
class Trajectory:
    """RK4 trajectory samples with the recorded relative energy drift."""

    times: np.ndarray
    states: np.ndarray  # (n, 4), positions reduced mod L
    dt: float
    energy_drift: float
    L: float

    def state(self, i: int) -> np.ndarray:
        return self.states[i]

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def _as_state(rho) -> np.ndarray:
    if isinstance(rho, PhaseSpacePoint):
        return rho.as_array()
    return np.asarray(rho, dtype=float).reshape(4).copy()


def flow(metric: ConformalMetric, rho, T: float, dt: float = DEFAULT_DT) -> Trajectory:
    """Integrate the geodesic flow for time T and return the sampled trajectory.

    Raises FlowError when the p0 drift exceeds 100x the calibrated budget
    (1e-9 per unit time at the default step).
    """
    if T <= 0 or dt <= 0:
        raise ValueError("flow requires T > 0 and dt > 0")
    z0 = _as_state(rho)
    if np.hypot(z0[2], z0[3]) == 0.0:
        raise ValueError("flow requires nonzero momentum")
    nsteps = max(1, int(round(T / dt)))
    pk = _phi_arrays(metric)
    samples = K.flow_traj(z0, nsteps, dt, *pk, metric.L)
    times = np.arange(nsteps + 1) * dt
    p0 = hamiltonian(metric, samples)
    drift = float(np.max(np.abs(p0 - p0[0])))
    budget = DRIFT_TOL_PER_TIME * max(T, 1.0)
    if drift > 100.0 * budget:
        raise FlowError(
            f"energy drift {drift:.3e} exceeds 100x budget {budget:.3e}; reduce dt"
        )
    wrapped = samples.copy()
    wrapped[:, 0] %= metric.L
    wrapped[:, 1] %= metric.L
    return Trajectory(times=times, states=wrapped, dt=dt, energy_drift=drift, L=metric.L)


def _flow_batch_aint(metric, damping, states, T, dt):
    nsteps = max(1, int(round(T / dt)))
    pk = _phi_arrays(metric)
    dk = _damping_descriptor(damping)
    out, aint = K.flow_batch(np.atleast_2d(np.asarray(states, dtype=float)).copy(),
                             nsteps, dt, *pk, metric.L, *dk)
    return out, aint, nsteps * dt


def flow_points(metric: ConformalMetric, damping: DampingField, states,
                T: float, dt: float = DEFAULT_DT):
    """Flow a batch of phase-space points for time T.

    Returns (final states, int_0^T a along each path); the damping integral
    rides in the RK4 tableau so its quadrature error matches the integrator.
    """
    out, aint, _ = _flow_batch_aint(metric, damping, states, T, dt)
    return out, aint


def birkhoff_average(metric: ConformalMetric, damping: DampingField, rho,
                     T: float, dt: float = DEFAULT_DT) -> float:
    """Finite-horizon Birkhoff average of -a along the trajectory of rho."""
    z0 = _as_state(rho).reshape(1, 4)
    _, aint, Teff = _flow_batch_aint(metric, damping, z0, T, dt)
    return float(-aint[0] / Teff)


def halton_sphere_samples(metric: ConformalMetric, n: int, skip: int = 20) -> np.ndarray:
    """Quasi-random (Halton) initial conditions on the unit cosphere S*M."""
    idx = np.arange(skip, skip + n)
    u = _halton(idx, 2)
    v = _halton(idx, 3)
    w = _halton(idx, 5)
    x = u * metric.L
    y = v * metric.L
    theta = 2.0 * np.pi * w
    px, py = unit_speed_momentum(metric, x, y, theta)
    return np.stack([x, y, px, py], axis=1)


def _halton(idx: np.ndarray, base: int) -> np.ndarray:
    out = np.zeros(idx.shape, dtype=float)
    f = 1.0
    i = idx.astype(np.int64) + 1
    while np.any(i > 0):
        f /= base
        out += f * (i % base)
        i //= base
    return out


def estimate_A_bounds(metric: ConformalMetric, damping: DampingField,
                      n_samples: int = 128, T: float = 40.0,
                      dt: float = DEFAULT_DT, extra_points=()) -> tuple[float, float]:
    """Finite-horizon estimate of the extremal Birkhoff averages (A-, A+) of -a.

    Quasi-random cosphere samples can be augmented with known extremal orbits
    (e.g. an undamped closed geodesic) through ``extra_points``.
    """
    if n_samples < 100:
        raise ValueError("estimate_A_bounds requires n_samples >= 100")
    pts = halton_sphere_samples(metric, n_samples)
    if len(extra_points):
        extra = np.atleast_2d(np.asarray(extra_points, dtype=float))
        pts = np.vstack([pts, extra])
    _, aint, Teff = _flow_batch_aint(metric, damping, pts, T, dt)
    avgs = -aint / Teff
    return float(avgs.min()), float(avgs.max())


# ---------------------------------------------------------------------------
# closed geodesics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClosedGeodesic:
    """Periodic orbit record with transverse monodromy and unstable-Jacobian samples."""

    rho0: np.ndarray          # representative point on S*M, shape (4,)
    period: float
    monodromy: np.ndarray     # reduced 2x2 transverse return-map derivative
    lam: float                # Lyapunov exponent per unit time
    hyperbolic: bool
    parabolic: bool
    ju_times: np.ndarray      # sample times over one period
    ju_log_growth: np.ndarray # log |Phi_t v_u| along one period (v_u unit)
    unstable_dir: np.ndarray | None  # 4-vector spanning E^u at rho0
    stable_dir: np.ndarray | None
    L: float = 1.0

    def orbit_samples(self, metric: ConformalMetric, n: int = 256,
                      dt: float = DEFAULT_DT) -> np.ndarray:
        """(n, 4) states equally spaced in time along one period (positions mod L)."""
        traj = flow(metric, self.rho0, self.period, dt=self.period / (n))
        return traj.states[:-1]

    def log_growth(self, t: float) -> float:
        """log |Phi_t v_u| extended to all t >= 0 by the Floquet relation."""
        if not self.hyperbolic:
            raise ValueError("unstable growth undefined for non-hyperbolic orbit")
        k, r = divmod(t, self.period)
        base = k * self.lam * self.period
        return base + float(np.interp(r, self.ju_times, self.ju_log_growth))

    def to_json(self) -> str:
        return json.dumps({
            "rho0": list(map(float, self.rho0)),
            "period": self.period,
            "monodromy": [list(map(float, row)) for row in self.monodromy],
            "lyapunov": self.lam,
            "hyperbolic": self.hyperbolic,
            "parabolic": self.parabolic,
        })


@dataclass(frozen=True)
class DynamicsReport:
    """Summary of the dynamical quantities feeding the spectral checks."""

    A_minus: float
    A_plus: float
    beta: float
    pressure: float
    n_samples: int
    horizon: float

    def __post_init__(self):
        if self.A_minus > self.A_plus + 1e-12:
            raise ValueError("A- must not exceed A+")


def _section_state(metric, x0, y, xi_y, energy=0.5):
    phi = float(metric.phi(x0, y))
    rad = 2.0 * energy * math.exp(2.0 * phi) - xi_y**2
    if rad <= 0:
        raise NewtonError("section point incompatible with energy shell")
    return np.array([x0, y, math.sqrt(rad), xi_y])


def _return_map(metric, x0, y, xi_y, dt, energy=0.5):
    """Follow the flow from the section {x = x0} to the next crossing x = x0 + L."""
    pk = _phi_arrays(metric)
    z = _section_state(metric, x0, y, xi_y, energy)
    target = x0 + metric.L
    t = 0.0
    chunk = 256
    max_time = 50.0 * metric.L
    prev = z.copy()
    while True:
        samples = K.flow_traj(z, chunk, dt, *pk, metric.L)
        xs = samples[:, 0]
        if np.any(samples[:, 2] <= 0):
            raise NewtonError("lost section transversality (xi_x <= 0)")
        hit = np.nonzero(xs >= target)[0]
        if hit.size:
            i = int(hit[0])
            prev = samples[i - 1] if i > 0 else prev
            t_prev = t + max(i - 1, 0) * dt
            break
        prev = samples[-1].copy()
        z = samples[-1].copy()
        t += chunk * dt
        if t > max_time:
            raise NewtonError("no section return within the time budget")
    # refine the crossing with bisection on a partial RK4 step from `prev`
    lo, hi = 0.0, dt
    zc = prev
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        zt = K.flow_traj(prev, 1, mid, *pk, metric.L)[-1]
        if zt[0] >= target:
            hi = mid
            zc = zt
        else:
            lo = mid
        if hi - lo < 1e-15:
            break
    t_cross = t_prev + hi
    return np.array([zc[1], zc[3]]), t_cross


def find_closed_geodesic(metric: ConformalMetric, seed=(0.0, 0.0), x0: float = 0.0,
                         dt: float = DEFAULT_DT, energy: float = 0.5,
                         fd_step: float = 1e-6, tol: float = 1e-10,
                         max_iter: int = 50) -> ClosedGeodesic:
    """Locate a closed geodesic crossing the section {x = x0} by Newton shooting.

    The return map acts on the section coordinates (y, xi_y) at fixed p0;
    the transverse monodromy is obtained afterwards from the variational flow
    around the converged orbit, not from the Newton finite differences.
    """
    u = np.array(seed, dtype=float)
    period = None
    for _ in range(max_iter):
        ru, period = _return_map(metric, x0, u[0], u[1], dt, energy)
        res = ru - u
        if np.max(np.abs(res)) < tol:
            break
        J = np.empty((2, 2))
        for j in range(2):
            d = np.zeros(2)
            d[j] = fd_step
            rp, _ = _return_map(metric, x0, u[0] + d[0], u[1] + d[1], dt, energy)
            J[:, j] = (rp - ru) / fd_step
        A = J - np.eye(2)
        try:
            step = np.linalg.solve(A, -res)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(A, -res, rcond=None)[0]
        u = u + step
    else:
        raise NewtonError(f"Newton did not converge in {max_iter} iterations")

    rho0 = _section_state(metric, x0, u[0], u[1], energy)
    # monodromy by integrating the variational equations around the orbit;
    # even step count so the half-period lands on a sample
    n = 2 * max(1, int(math.ceil(period / (2.0 * dt))))
    dt_adj = period / n
    pk = _phi_arrays(metric)
    zT, Phi = K.monodromy_flow(rho0, n, dt_adj, *pk, metric.L)

    M = _reduce_monodromy(metric, rho0, Phi, energy)
    tr = float(np.trace(M))
    parabolic = abs(tr - 2.0) <= 1e-8
    hyperbolic = abs(tr) > 2.0 and not parabolic
    mu = np.linalg.eigvals(M)
    lam = float(np.log(np.max(np.abs(mu))) / period)

    unstable_dir = stable_dir = None
    ju_times = np.arange(n + 1) * dt_adj
    ju_log = np.zeros(n + 1)
    if hyperbolic:
        evals, evecs = np.linalg.eig(M)
        iu = int(np.argmax(np.abs(evals)))
        isv = int(np.argmin(np.abs(evals)))
        e1, e2 = _section_basis(metric, rho0, energy)
        vu = evecs[:, iu].real
        vs = evecs[:, isv].real
        unstable_dir = vu[0] * e1 + vu[1] * e2
        unstable_dir = unstable_dir / np.linalg.norm(unstable_dir)
        stable_dir = vs[0] * e1 + vs[1] * e2
        stable_dir = stable_dir / np.linalg.norm(stable_dir)
        _, _, norms = K.var_flow(rho0, unstable_dir, n, dt_adj, *pk, metric.L)
        ju_log = np.log(norms)
    return ClosedGeodesic(rho0=rho0, period=period, monodromy=M, lam=lam,
                          hyperbolic=hyperbolic, parabolic=parabolic,
                          ju_times=ju_times, ju_log_growth=ju_log,
                          unstable_dir=unstable_dir, stable_dir=stable_dir,
                          L=metric.L)


def _section_basis(metric, rho0, energy=0.5):
    """Tangent basis of the section-within-shell at rho0, in (y, xi_y) chart."""
    x0, y0, xix, xiy = rho0
    phi = float(metric.phi(x0, y0))
    phi_y = float(metric.phi.derivative(0, 1, x0, y0))
    e1 = np.array([0.0, 1.0, 2.0 * energy * math.exp(2.0 * phi) * phi_y / xix, 0.0])
    e2 = np.array([0.0, 0.0, -xiy / xix, 1.0])
    return e1, e2


def _vector_field(metric, z):
    phi = float(metric.phi(z[0], z[1]))
    fx = float(metric.phi.derivative(1, 0, z[0], z[1]))
    fy = float(metric.phi.derivative(0, 1, z[0], z[1]))
    e2 = math.exp(-2.0 * phi)
    p2 = z[2] ** 2 + z[3] ** 2
    return np.array([e2 * z[2], e2 * z[3], p2 * e2 * fx, p2 * e2 * fy])


def _reduce_monodromy(metric, rho0, Phi, energy=0.5):
    """Project the 4x4 fundamental matrix to the 2x2 transverse return derivative."""
    e1, e2 = _section_basis(metric, rho0, energy)
    X = _vector_field(metric, rho0)
    M = np.empty((2, 2))
    for j, e in enumerate((e1, e2)):
        w = Phi @ e
        w = w - (w[0] / X[0]) * X
        M[0, j] = w[1]
        M[1, j] = w[3]
    return M


def unstable_jacobian(gamma: ClosedGeodesic, t: float, base_time: float = 0.0) -> float:
    """Unstable Jacobian J^u_t at g^{base_time}(rho0), from the stored growth samples.

    J^u_t(rho) = |det dg^{-t}|_{E^u(g^t rho)}| = |Phi_{base} v_u| / |Phi_{base+t} v_u|,
    which makes the multiplicative cocycle property exact by construction.
    """
    if not gamma.hyperbolic:
        raise ValueError("unstable Jacobian requires a hyperbolic orbit")
    if t < 0:
        raise ValueError("t must be nonnegative")
    return math.exp(gamma.log_growth(base_time) - gamma.log_growth(base_time + t))


# ---------------------------------------------------------------------------
# topological pressure by separated-set packing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PressureEstimate:
    """Packing pressure rows (one per sub-horizon) and the 1/T extrapolation."""

    pressure: float
    eps: float
    T: float
    rows: tuple  # (eps, T_sub, P_raw, packing_count)
    weight: str

    def csv_rows(self):
        return [(self.eps, r[1], r[2]) for r in self.rows]


def tube_samples(metric: ConformalMetric, gamma: ClosedGeodesic, n: int,
                 radius: float = 0.0, seed: int = 7,
                 dt: float = DEFAULT_DT) -> np.ndarray:
    """Sample points in a tubular neighborhood of the orbit (phase-spread + jitter)."""
    base = gamma.orbit_samples(metric, n, dt)
    if radius > 0.0:
        rng = np.random.default_rng(seed)
        jit = rng.standard_normal(base.shape)
        jit[:, 2:] *= 0.5
        base = base + radius * jit / np.linalg.norm(jit, axis=1, keepdims=True)
    return base


def pressure_estimate(metric: ConformalMetric, samples, eps: float, T: float,
                      dt: float = DEFAULT_DT, weight: str = "half-log-ju",
                      damping: DampingField | None = None,
                      unstable_seed=None, stride: int = 10,
                      sub_fractions=(0.25, 0.5, 0.75, 1.0)) -> PressureEstimate:
    """Estimate topological pressure over a tubular sample set.

    A greedy maximal (eps, T)-separated packing is built at each sub-horizon;
    the raw packing value (1/T) log sum exp(int weight) carries a log|F|/T
    entropy bias that is removed by extrapolating linearly in 1/T across the
    sub-horizons (|F| is T-independent for a fixed orbit neighborhood).

    weight: "half-log-ju" (default), "zero", or "half-log-ju-minus-a"
    (requires ``damping``).
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    m = samples.shape[0]
    if m == 0:
        raise ValueError("pressure_estimate needs a nonempty sample set")
    if weight not in ("half-log-ju", "zero", "half-log-ju-minus-a"):
        raise ValueError(f"unknown weight spec {weight!r}")
    if weight == "half-log-ju-minus-a" and damping is None:
        raise ValueError("weight 'half-log-ju-minus-a' requires a damping field")

    nsteps = int(round(T / dt))
    nsteps = stride * max(1, nsteps // stride)
    pk = _phi_arrays(metric)
    trajs = K.traj_samples_batch(samples.copy(), nsteps, stride, dt, *pk, metric.L)
    nsamp = trajs.shape[1]
    sample_times = np.arange(nsamp) * (stride * dt)

    # log-growth of a transverse vector under the variational flow, per sample
    lognorms = np.zeros((m, nsteps + 1))
    if weight != "zero":
        if unstable_seed is None:
            unstable_seed = np.array([0.0, 1.0, 0.0, 1.0]) / math.sqrt(2.0)
        v0 = np.asarray(unstable_seed, dtype=float)
        v0 = v0 / np.linalg.norm(v0)
        for j in range(m):
            _, _, norms = K.var_flow(samples[j].copy(), v0.copy(), nsteps, dt,
                                     *pk, metric.L)
            lognorms[j] = np.log(norms)

    aints = np.zeros((m, nsamp))
    if weight == "half-log-ju-minus-a":
        avals = damping(trajs[:, :, 0], trajs[:, :, 1])
        aints[:, 1:] = np.cumsum(
            0.5 * (avals[:, 1:] + avals[:, :-1]) * (stride * dt), axis=1)

    # running pairwise max distance, snapshot at each sub-horizon
    sub_idx = sorted({max(1, int(round(f * nsamp)) - 1) for f in sub_fractions})
    sep = np.zeros((m, m))
    snapshots = {}
    Lt = metric.L
    for it in range(nsamp):
        P = trajs[:, it, :]
        dx = np.abs(P[:, None, 0] - P[None, :, 0]) % Lt
        dx = np.minimum(dx, Lt - dx)
        dy = np.abs(P[:, None, 1] - P[None, :, 1]) % Lt
        dy = np.minimum(dy, Lt - dy)
        du = P[:, None, 2] - P[None, :, 2]
        dv = P[:, None, 3] - P[None, :, 3]
        d = np.sqrt(dx**2 + dy**2 + du**2 + dv**2)
        np.maximum(sep, d, out=sep)
        if it in sub_idx:
            snapshots[it] = sep.copy()

    rows = []
    for it in sub_idx:
        Tsub = sample_times[it]
        if Tsub <= 0:
            continue
        istep = int(round(Tsub / dt))
        W = np.zeros(m)
        if weight != "zero":
            W = -0.5 * lognorms[:, istep]
        if weight == "half-log-ju-minus-a":
            W = W - aints[:, it]
        chosen = _greedy_packing(W, snapshots[it], eps)
        if not chosen:
            raise ValueError("sample set empty after packing")
        Wc = W[chosen]
        lse = float(np.log(np.sum(np.exp(Wc - Wc.max()))) + Wc.max())
        rows.append((eps, Tsub, lse / Tsub, len(chosen)))

    Ts = np.array([r[1] for r in rows])
    Ps = np.array([r[2] for r in rows])
    if len(rows) >= 2:
        A = np.stack([np.ones_like(Ts), 1.0 / Ts], axis=1)
        coef, *_ = np.linalg.lstsq(A, Ps, rcond=None)
        p_inf = float(coef[0])
    else:
        p_inf = float(Ps[-1])
    return PressureEstimate(pressure=p_inf, eps=eps, T=float(Ts[-1]),
                            rows=tuple(rows), weight=weight)


def _greedy_packing(W, sep, eps):
    """Greedy maximal separated set: heaviest first, stable index tie-break.

    Weights are quantized at 1e-9 for the ordering so that near-ties keep the
    sample order; appending samples then never dethrones an earlier pick,
    which keeps the packing sum monotone under sample-set growth.
    """
    m = W.shape[0]
    order = np.lexsort((np.arange(m), -np.round(W, 9)))
    chosen: list[int] = []
    for i in order:
        ok = True
        for j in chosen:
            if sep[i, j] <= eps:
                ok = False
                break
        if ok:
            chosen.append(int(i))
    return chosen


# ---------------------------------------------------------------------------
# shadowing check
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ShadowResult:
    excess: float
    horizon: float
    beta: float
    max_tube_distance: float


def shadow_average_check(metric: ConformalMetric, damping: DampingField,
                         gamma: ClosedGeodesic, rho2, p: float,
                         dt: float = DEFAULT_DT, tube: float = 0.2,
                         stride: int = 10) -> ShadowResult:
    """Excess of the damping Birkhoff integral of a shadowing point over beta*p.

    beta is the Birkhoff average of -a on the reference orbit.  Raises
    ShadowingEscape (with the escape time and the excess up to escape) when the
    trajectory of rho2 leaves the tube around the orbit.
    """
    z2 = _as_state(rho2)
    beta = birkhoff_average(metric, damping, gamma.rho0, gamma.period, dt)
    nsteps = stride * max(1, int(round(p / dt)) // stride)
    pk = _phi_arrays(metric)
    traj = K.traj_samples_batch(z2.reshape(1, 4), nsteps, stride, dt, *pk, metric.L)[0]
    times = np.arange(traj.shape[0]) * (stride * dt)

    orbit = gamma.orbit_samples(metric, 512, dt)
    dists = _distance_to_orbit(traj, orbit, metric.L)
    avals = damping(traj[:, 0], traj[:, 1])
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (avals[1:] + avals[:-1])
                                           * (stride * dt))])
    escaped = np.nonzero(dists > tube)[0]
    if escaped.size:
        i = int(escaped[0])
        t_esc = float(times[i])
        excess = float(-cum[i] - beta * times[i])
        raise ShadowingEscape(
            f"shadowing point left the tube at t={t_esc:.3f}", t_esc, excess)
    horizon = float(times[-1])
    excess = float(-cum[-1] - beta * horizon)
    return ShadowResult(excess=excess, horizon=horizon, beta=beta,
                        max_tube_distance=float(dists.max()))


def _distance_to_orbit(traj, orbit, L):
    """Distance of each trajectory sample to the orbit set, in (x, xi/|xi|) coords."""
    tu = traj[:, 2:] / np.linalg.norm(traj[:, 2:], axis=1, keepdims=True)
    ou = orbit[:, 2:] / np.linalg.norm(orbit[:, 2:], axis=1, keepdims=True)
    dx = np.abs(traj[:, None, 0] - orbit[None, :, 0]) % L
    dx = np.minimum(dx, L - dx)
    dy = np.abs(traj[:, None, 1] - orbit[None, :, 1]) % L
    dy = np.minimum(dy, L - dy)
    du = tu[:, None, 0] - ou[None, :, 0]
    dv = tu[:, None, 1] - ou[None, :, 1]
    d = np.sqrt(dx**2 + dy**2 + du**2 + dv**2)
    return d.min(axis=1)
