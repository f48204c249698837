"""Time integration of the damped wave equation v_tt = Delta_g v - 2 a v_t.

The wave part is advanced exactly per step in the eigenbasis of the
symmetrized spatial operator e^{-phi}(-Delta_flat)e^{-phi} (a trigonometric
rotation per eigenmode), and the damping enters as an exact exponential
contraction of v_t over each half step (Strang splitting).  The wave substep
conserves its quadratic energy to roundoff, and the damping substep strictly
contracts, so for a >= 0 the scheme is dissipative step by step; overall
accuracy is second order in dt from the splitting alone.

Energies: E_flat = (||grad v||^2 + ||v_t||^2)/2 in the flat L2 norm (the
global-chart definition); the scheme's exactly monotone quantity is the
weighted form E_g with kinetic term ||e^{phi} v_t||^2.  The two coincide on
flat metrics and differ by a bounded conformal factor band otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from .geometry import ConformalMetric, DampingField

__all__ = [
    "WaveState",
    "EnergyTrace",
    "WaveStepper",
    "CFLError",
    "step_wave",
    "energy",
    "decay_fit",
    "make_stepper",
]

ENERGY_FLOOR = 1e-14


class CFLError(ValueError):
    """Time step above the spectral stability surrogate bound."""


@dataclass(frozen=True)
class WaveState:
    """Displacement and velocity on the N x N grid at time t."""

    v: np.ndarray
    vt: np.ndarray
    t: float
    N: int
    L: float = 1.0

    def __post_init__(self):
        if not (np.all(np.isfinite(self.v)) and np.all(np.isfinite(self.vt))):
            raise ValueError("wave state has non-finite entries")


@dataclass
class EnergyTrace:
    """Sampled (t, E_flat) pairs plus the weighted energy used for monotonicity."""

    times: np.ndarray
    energies: np.ndarray
    weighted_energies: np.ndarray

    def csv_rows(self):
        return list(zip(self.times.tolist(), self.energies.tolist()))


def cfl_bound(metric: ConformalMetric, N: int) -> float:
    phimin = float(metric.phi.grid_values(4 * N).min())
    return 0.5 * (metric.L / N) * math.exp(phimin) / math.pi


def energy(state: WaveState) -> float:
    """E = (||grad v||^2 + ||v_t||^2)/2 by exact Parseval sums (flat L2)."""
    N, L = state.N, state.L
    vh = np.fft.fft2(state.v.reshape(N, N)) / (N * N)
    k = np.fft.fftfreq(N, d=1.0 / N)
    om = 2.0 * np.pi * k / L
    WX, WY = np.meshgrid(om, om, indexing="ij")
    grad2 = float(np.sum((WX**2 + WY**2) * np.abs(vh) ** 2)) * L**2
    kin = float(np.sum(np.abs(state.vt) ** 2)) / (N * N) * L**2
    return 0.5 * (grad2 + kin)


class WaveStepper:
    """Precomputed exact-wave Strang stepper for one (metric, damping, N) triple."""

    def __init__(self, metric: ConformalMetric, damping: DampingField, N: int):
        self.metric = metric
        self.damping = damping
        self.N = N
        self.L = metric.L
        n = N * N
        t = np.arange(N) * (metric.L / N)
        X, Y = np.meshgrid(t, t, indexing="ij")
        self.phi_grid = metric.phi(X.ravel(), Y.ravel())
        self.a_grid = np.asarray(damping(X.ravel(), Y.ravel()), dtype=float)
        self.a_max = float(np.max(np.abs(self.a_grid)))
        self.has_damping = self.a_max > 0.0
        self.cfl = cfl_bound(metric, N)

        k = np.fft.fftfreq(N, d=1.0 / N)
        om = 2.0 * np.pi * k / metric.L
        WX, WY = np.meshgrid(om, om, indexing="ij")
        w2 = (WX**2 + WY**2).ravel()
        if metric.band_limit == 0:
            # flat (or constant-phi) metric: the eigenbasis is the Fourier basis
            scale = math.exp(-2.0 * float(self.phi_grid[0]))
            self.flat = True
            self.lam = scale * w2
            self.Q = None
        else:
            self.flat = False
            E = _dft_matrix(N, metric.L)
            Kflat = (E * w2[None, :]) @ E.conj().T / n
            half = np.exp(-self.phi_grid)
            Dsym = half[:, None] * Kflat.real * half[None, :]
            Dsym = 0.5 * (Dsym + Dsym.T)
            lam, Q = np.linalg.eigh(Dsym)
            self.lam = np.clip(lam, 0.0, None)
            self.Q = Q

    # -- basis transforms: state (v, vt) <-> eigencoords of w = e^{phi} v
    def _to_eigen(self, v, vt):
        w = np.exp(self.phi_grid) * v
        wt = np.exp(self.phi_grid) * vt
        if self.flat:
            N = self.N
            return (np.fft.fft2(w.reshape(N, N)).ravel(),
                    np.fft.fft2(wt.reshape(N, N)).ravel())
        return self.Q.T @ w, self.Q.T @ wt

    def _from_eigen(self, wh, wth):
        if self.flat:
            N = self.N
            w = np.fft.ifft2(wh.reshape(N, N)).ravel().real
            wt = np.fft.ifft2(wth.reshape(N, N)).ravel().real
        else:
            w = self.Q @ wh
            wt = self.Q @ wth
        return np.exp(-self.phi_grid) * w, np.exp(-self.phi_grid) * wt

    def _wave_rotation(self, dt):
        sl = np.sqrt(self.lam)
        c = np.cos(sl * dt)
        s = np.where(self.lam > 1e-300, np.sin(sl * dt) / np.where(sl > 0, sl, 1.0), dt)
        return c, s

    def _check_dt(self, dt):
        if abs(dt) > self.cfl:
            raise CFLError(f"dt={dt} exceeds the stability surrogate {self.cfl:.3e}")

    def step(self, state: WaveState, dt: float) -> WaveState:
        self._check_dt(dt)
        wh, wth = self._to_eigen(state.v, state.vt)
        damp = np.exp(-2.0 * self.a_grid * dt) if self.has_damping else None
        wh, wth = self._strang(wh, wth, dt, damp)
        v, vt = self._from_eigen(wh, wth)
        return WaveState(v=v, vt=vt, t=state.t + dt, N=self.N, L=self.L)

    def _strang(self, wh, wth, dt, damp):
        c, s = self._wave_rotation(dt)
        if damp is not None:
            wth = self._apply_damp(wth, damp)
        wh, wth = c * wh + s * wth, -self.lam * s * wh + c * wth
        if damp is not None:
            wth = self._apply_damp(wth, damp)
        return wh, wth

    def _apply_damp(self, wth, damp):
        # half-step contraction e^{-a dt} of v_t' = -2 a v_t, pointwise in
        # position space (a commutes with e^{phi})
        if self.flat:
            N = self.N
            wt = np.fft.ifft2(wth.reshape(N, N)).ravel()
            return np.fft.fft2((np.sqrt(damp) * wt).reshape(N, N)).ravel()
        wt = self.Q @ wth
        return self.Q.T @ (np.sqrt(damp) * wt)

    def run(self, state: WaveState, T: float, dt: float,
            sample_every: int = 100) -> tuple[WaveState, EnergyTrace]:
        """Advance for time T, sampling energies every `sample_every` steps.

        Negative dt steps backwards (T is always the positive duration).
        """
        self._check_dt(dt)
        nsteps = max(1, int(round(abs(T / dt))))
        wh, wth = self._to_eigen(state.v, state.vt)
        c, s = self._wave_rotation(dt)
        damp = np.exp(-2.0 * self.a_grid * dt) if self.has_damping else None
        times = [state.t]
        energies = [energy(state)]
        weighted = [self._weighted_energy(wh, wth)]
        for step in range(1, nsteps + 1):
            wh, wth = self._strang_cached(wh, wth, c, s, damp)
            if step % sample_every == 0 or step == nsteps:
                v, vt = self._from_eigen(wh, wth)
                st = WaveState(v=v, vt=vt, t=state.t + step * dt, N=self.N, L=self.L)
                times.append(st.t)
                energies.append(energy(st))
                weighted.append(self._weighted_energy(wh, wth))
        v, vt = self._from_eigen(wh, wth)
        final = WaveState(v=v, vt=vt, t=state.t + nsteps * dt, N=self.N, L=self.L)
        trace = EnergyTrace(times=np.array(times), energies=np.array(energies),
                            weighted_energies=np.array(weighted))
        return final, trace

    def _strang_cached(self, wh, wth, c, s, damp):
        if damp is not None:
            wth = self._apply_damp(wth, damp)
        wh, wth = c * wh + s * wth, -self.lam * s * wh + c * wth
        if damp is not None:
            wth = self._apply_damp(wth, damp)
        return wh, wth

    def _weighted_energy(self, wh, wth):
        # conserved by the wave substep: (<D w, w> + ||w_t||^2)/2 in eigencoords
        scale = (self.L**2 / (self.N**2)) if not self.flat else self.L**2 / self.N**4
        return 0.5 * scale * float(np.sum(self.lam * np.abs(wh) ** 2)
                                   + np.sum(np.abs(wth) ** 2))


_STEPPER_CACHE: dict = {}


def make_stepper(metric: ConformalMetric, damping: DampingField,
                 N: int | None = None) -> WaveStepper:
    N = N or metric.N
    key = (metric.to_json(), damping.name, repr(sorted(damping.params.items())), N)
    if key not in _STEPPER_CACHE:
        _STEPPER_CACHE[key] = WaveStepper(metric, damping, N)
    return _STEPPER_CACHE[key]


def step_wave(metric: ConformalMetric, damping: DampingField, state: WaveState,
              dt: float) -> WaveState:
    """Advance one time step (kick-rotate-kick with exact damping factors)."""
    return make_stepper(metric, damping, state.N).step(state, dt)


def _dft_matrix(N, L):
    t = np.arange(N) * (L / N)
    k = np.fft.fftfreq(N, d=1.0 / N)
    om = 2.0 * np.pi * k / L
    X, Y = np.meshgrid(t, t, indexing="ij")
    WX, WY = np.meshgrid(om, om, indexing="ij")
    return np.exp(1j * (X.ravel()[:, None] * WX.ravel()[None, :]
                        + Y.ravel()[:, None] * WY.ravel()[None, :]))


# ---------------------------------------------------------------------------
# decay model fitting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DecayFit:
    model: str
    params: dict
    log_residual_rms: float


def decay_fit(trace: EnergyTrace, model: str) -> DecayFit:
    """Least-squares fit of log E against a decay model.

    Models: "exponential" (log E = b - r t), "stretched" (log E = b - s t^p,
    p free with the 1/2 prior as starting point), "power" (log E = b - p log t).
    Diagnostic only: no model-selection assertion.
    """
    if len(trace.times) < 1000:
        raise ValueError("decay_fit needs a trace with >= 1000 samples")
    keep = trace.energies > ENERGY_FLOOR
    t = trace.times[keep]
    logE = np.log(trace.energies[keep])
    if model == "exponential":
        A = np.stack([np.ones_like(t), -t], axis=1)
        coef, *_ = np.linalg.lstsq(A, logE, rcond=None)
        resid = logE - A @ coef
        return DecayFit("exponential", {"b": coef[0], "rate": coef[1]},
                        float(np.sqrt(np.mean(resid**2))))
    if model == "stretched":
        pos = t > 0
        t2, y = t[pos], logE[pos]

        def f(tt, b, s, p):
            return b - s * tt**p

        p0 = (y[0], max((y[0] - y[-1]) / max(np.sqrt(t2[-1]), 1e-9), 1e-6), 0.5)
        popt, _ = scipy.optimize.curve_fit(f, t2, y, p0=p0, maxfev=20000)
        resid = y - f(t2, *popt)
        return DecayFit("stretched", {"b": popt[0], "scale": popt[1],
                                      "exponent": popt[2]},
                        float(np.sqrt(np.mean(resid**2))))
    if model == "power":
        pos = t > 0
        A = np.stack([np.ones_like(t[pos]), -np.log(t[pos])], axis=1)
        coef, *_ = np.linalg.lstsq(A, logE[pos], rcond=None)
        resid = logE[pos] - A @ coef
        return DecayFit("power", {"b": coef[0], "power": coef[1]},
                        float(np.sqrt(np.mean(resid**2))))
    raise ValueError(f"unknown decay model {model!r}")


def compare_decay_models(trace: EnergyTrace) -> dict:
    return {m: decay_fit(trace, m) for m in ("exponential", "stretched", "power")}
