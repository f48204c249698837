"""Hot numerical kernels: geodesic-flow RK4, variational transport, anti-Wick assembly.

Two interchangeable implementations live here:

* numba ``@njit`` scalar kernels (default), and
* a vectorized pure-numpy fallback, selected by setting the environment
  variable ``DWE_LAB_NO_NUMBA=1`` before import (or when numba is missing).

Both paths are exercised by the test suite and timed against each other by
``benchmarks/bench_kernels.py``.  All kernels take the conformal factor as
flat Fourier-coefficient arrays (kx, ky, re, im) so they stay allocation-free
inside the time loop; the damping field is passed as a small descriptor
(kind, series arrays, well parameters).

State layout: z = (x, y, xi_x, xi_y); Hamiltonian p0 = e^{-2 phi(x)} |xi|^2 / 2.

Damping descriptor kinds: 0 = Fourier series, 1 = smooth well in y, 2 = smooth well in x.
"""

from __future__ import annotations

import math
import os

import numpy as np

_ENV_DISABLE = os.environ.get("DWE_LAB_NO_NUMBA", "0") not in ("", "0", "false", "False")

try:  # pragma: no cover - import guard
    if _ENV_DISABLE:
        raise ImportError("numba disabled by DWE_LAB_NO_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

    def njit(*args, **kwargs):  # type: ignore
        if args and callable(args[0]):
            return args[0]

        def wrap(fn):
            return fn

        return wrap


USE_NUMBA = HAVE_NUMBA and not _ENV_DISABLE


# ---------------------------------------------------------------------------
# scalar kernels (numba path)
# ---------------------------------------------------------------------------

@njit(cache=True)
def _phi_derivs2_scalar(x, y, pkx, pky, pre, pim, L):
    """phi and its first/second partials at one point, by direct series summation."""
    w = 2.0 * math.pi / L
    f = 0.0
    fx = 0.0
    fy = 0.0
    fxx = 0.0
    fxy = 0.0
    fyy = 0.0
    for m in range(pkx.shape[0]):
        ax = w * pkx[m]
        ay = w * pky[m]
        th = ax * x + ay * y
        c = math.cos(th)
        s = math.sin(th)
        re = pre[m]
        im = pim[m]
        # real part of (re + i*im) e^{i th} and derivatives
        val = re * c - im * s
        dval = -re * s - im * c  # d/dth
        f += val
        fx += ax * dval
        fy += ay * dval
        fxx -= ax * ax * val
        fxy -= ax * ay * val
        fyy -= ay * ay * val
    return f, fx, fy, fxx, fxy, fyy


@njit(cache=True)
def _smoothstep_scalar(s):
    if s <= 0.0:
        return 0.0
    if s >= 1.0:
        return 1.0
    a = math.exp(-1.0 / s)
    b = math.exp(-1.0 / (1.0 - s))
    return a / (a + b)


@njit(cache=True)
def _damping_scalar(x, y, L, dkind, dkx, dky, dre, dim, dpar):
    if dkind == 0:
        w = 2.0 * math.pi / L
        f = 0.0
        for m in range(dkx.shape[0]):
            th = w * (dkx[m] * x + dky[m] * y)
            f += dre[m] * math.cos(th) - dim[m] * math.sin(th)
        return f
    u = y if dkind == 1 else x
    center = dpar[0]
    hw = dpar[1]
    orad = dpar[2]
    depth = dpar[3]
    d = abs((u - center + 0.5 * L) % L - 0.5 * L)
    return depth * _smoothstep_scalar((d - hw) / (orad - hw))


@njit(cache=True, inline="always")
def _rhs4(x, y, px, py, pkx, pky, pre, pim, L):
    f, fx, fy, _, _, _ = _phi_derivs2_scalar(x, y, pkx, pky, pre, pim, L)
    e2 = math.exp(-2.0 * f)
    q = (px * px + py * py) * e2
    return e2 * px, e2 * py, q * fx, q * fy


@njit(cache=True, inline="always")
def _rk4_scalars(x, y, px, py, dt, pkx, pky, pre, pim, L):
    """One fully scalarized RK4 step (allocation-free inner loop)."""
    ax1, ay1, bx1, by1 = _rhs4(x, y, px, py, pkx, pky, pre, pim, L)
    ax2, ay2, bx2, by2 = _rhs4(x + 0.5 * dt * ax1, y + 0.5 * dt * ay1,
                               px + 0.5 * dt * bx1, py + 0.5 * dt * by1,
                               pkx, pky, pre, pim, L)
    ax3, ay3, bx3, by3 = _rhs4(x + 0.5 * dt * ax2, y + 0.5 * dt * ay2,
                               px + 0.5 * dt * bx2, py + 0.5 * dt * by2,
                               pkx, pky, pre, pim, L)
    ax4, ay4, bx4, by4 = _rhs4(x + dt * ax3, y + dt * ay3,
                               px + dt * bx3, py + dt * by3,
                               pkx, pky, pre, pim, L)
    h = dt / 6.0
    return (x + h * (ax1 + 2.0 * ax2 + 2.0 * ax3 + ax4),
            y + h * (ay1 + 2.0 * ay2 + 2.0 * ay3 + ay4),
            px + h * (bx1 + 2.0 * bx2 + 2.0 * bx3 + bx4),
            py + h * (by1 + 2.0 * by2 + 2.0 * by3 + by4))


@njit(cache=True)
def _nb_flow_traj(z0, nsteps, dt, pkx, pky, pre, pim, L):
    out = np.empty((nsteps + 1, 4))
    x, y, px, py = z0[0], z0[1], z0[2], z0[3]
    out[0, 0] = x
    out[0, 1] = y
    out[0, 2] = px
    out[0, 3] = py
    for s in range(nsteps):
        x, y, px, py = _rk4_scalars(x, y, px, py, dt, pkx, pky, pre, pim, L)
        out[s + 1, 0] = x
        out[s + 1, 1] = y
        out[s + 1, 2] = px
        out[s + 1, 3] = py
    return out


@njit(cache=True)
def _nb_flow_batch(Z, nsteps, dt, pkx, pky, pre, pim, L,
                   dkind, dkx, dky, dre, dim, dpar):
    """Flow a batch of states for nsteps, accumulating int_0^T a along each path.

    The damping integral rides along as a 5th RK4 component, so the quadrature
    carries the integrator's full order.
    """
    m = Z.shape[0]
    out = Z.copy()
    aint = np.zeros(m)
    # flat metric: straight-line flow is exact in closed form; constant or
    # zero damping integrates exactly too
    if pkx.shape[0] == 0 and dkind == 0:
        const_only = True
        abar = 0.0
        for q in range(dkx.shape[0]):
            if dkx[q] == 0 and dky[q] == 0:
                abar += dre[q]
            else:
                const_only = False
        if const_only:
            T = nsteps * dt
            for j in range(m):
                out[j, 0] = Z[j, 0] + T * Z[j, 2]
                out[j, 1] = Z[j, 1] + T * Z[j, 3]
                aint[j] = abar * T
            return out, aint
    for j in range(m):
        x, y, px, py = Z[j, 0], Z[j, 1], Z[j, 2], Z[j, 3]
        acc = 0.0
        for s in range(nsteps):
            ax1, ay1, bx1, by1 = _rhs4(x, y, px, py, pkx, pky, pre, pim, L)
            a1 = _damping_scalar(x, y, L, dkind, dkx, dky, dre, dim, dpar)
            x2 = x + 0.5 * dt * ax1
            y2 = y + 0.5 * dt * ay1
            ax2, ay2, bx2, by2 = _rhs4(x2, y2, px + 0.5 * dt * bx1,
                                       py + 0.5 * dt * by1, pkx, pky, pre, pim, L)
            a2 = _damping_scalar(x2, y2, L, dkind, dkx, dky, dre, dim, dpar)
            x3 = x + 0.5 * dt * ax2
            y3 = y + 0.5 * dt * ay2
            ax3, ay3, bx3, by3 = _rhs4(x3, y3, px + 0.5 * dt * bx2,
                                       py + 0.5 * dt * by2, pkx, pky, pre, pim, L)
            a3 = _damping_scalar(x3, y3, L, dkind, dkx, dky, dre, dim, dpar)
            x4 = x + dt * ax3
            y4 = y + dt * ay3
            ax4, ay4, bx4, by4 = _rhs4(x4, y4, px + dt * bx3, py + dt * by3,
                                       pkx, pky, pre, pim, L)
            a4 = _damping_scalar(x4, y4, L, dkind, dkx, dky, dre, dim, dpar)
            h = dt / 6.0
            x += h * (ax1 + 2.0 * ax2 + 2.0 * ax3 + ax4)
            y += h * (ay1 + 2.0 * ay2 + 2.0 * ay3 + ay4)
            px += h * (bx1 + 2.0 * bx2 + 2.0 * bx3 + bx4)
            py += h * (by1 + 2.0 * by2 + 2.0 * by3 + by4)
            acc += h * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
        out[j, 0] = x
        out[j, 1] = y
        out[j, 2] = px
        out[j, 3] = py
        aint[j] = acc
    return out, aint


@njit(cache=True)
def _var_rhs_scalar(z, v, pkx, pky, pre, pim, L):
    """Tangent dynamics: dv = DF(z) v for the geodesic vector field F."""
    f, fx, fy, fxx, fxy, fyy = _phi_derivs2_scalar(z[0], z[1], pkx, pky, pre, pim, L)
    e2 = math.exp(-2.0 * f)
    px = z[2]
    py = z[3]
    p2 = px * px + py * py
    # F = (e2*px, e2*py, p2*e2*fx, p2*e2*fy)
    dz = (e2 * px, e2 * py, p2 * e2 * fx, p2 * e2 * fy)
    # Jacobian rows
    dvx = (-2.0 * fx * e2 * px * v[0] - 2.0 * fy * e2 * px * v[1]
           + e2 * v[2])
    dvy = (-2.0 * fx * e2 * py * v[0] - 2.0 * fy * e2 * py * v[1]
           + e2 * v[3])
    gxx = p2 * e2 * (fxx - 2.0 * fx * fx)
    gxy = p2 * e2 * (fxy - 2.0 * fx * fy)
    gyy = p2 * e2 * (fyy - 2.0 * fy * fy)
    dvpx = (gxx * v[0] + gxy * v[1]
            + 2.0 * e2 * fx * (px * v[2] + py * v[3]))
    dvpy = (gxy * v[0] + gyy * v[1]
            + 2.0 * e2 * fy * (px * v[2] + py * v[3]))
    return dz, (dvx, dvy, dvpx, dvpy)


@njit(cache=True)
def _nb_var_flow(z0, v0, nsteps, dt, pkx, pky, pre, pim, L):
    """Integrate state and one tangent vector; record |v| at every step."""
    z = z0.copy()
    v = v0.copy()
    norms = np.empty(nsteps + 1)
    norms[0] = math.sqrt(v[0] ** 2 + v[1] ** 2 + v[2] ** 2 + v[3] ** 2)
    zt = np.empty(4)
    vt = np.empty(4)
    for s in range(nsteps):
        dz1, dv1 = _var_rhs_scalar(z, v, pkx, pky, pre, pim, L)
        for i in range(4):
            zt[i] = z[i] + 0.5 * dt * dz1[i]
            vt[i] = v[i] + 0.5 * dt * dv1[i]
        dz2, dv2 = _var_rhs_scalar(zt, vt, pkx, pky, pre, pim, L)
        for i in range(4):
            zt[i] = z[i] + 0.5 * dt * dz2[i]
            vt[i] = v[i] + 0.5 * dt * dv2[i]
        dz3, dv3 = _var_rhs_scalar(zt, vt, pkx, pky, pre, pim, L)
        for i in range(4):
            zt[i] = z[i] + dt * dz3[i]
            vt[i] = v[i] + dt * dv3[i]
        dz4, dv4 = _var_rhs_scalar(zt, vt, pkx, pky, pre, pim, L)
        for i in range(4):
            z[i] = z[i] + (dt / 6.0) * (dz1[i] + 2.0 * dz2[i] + 2.0 * dz3[i] + dz4[i])
            v[i] = v[i] + (dt / 6.0) * (dv1[i] + 2.0 * dv2[i] + 2.0 * dv3[i] + dv4[i])
        norms[s + 1] = math.sqrt(v[0] ** 2 + v[1] ** 2 + v[2] ** 2 + v[3] ** 2)
    return z, v, norms


@njit(cache=True)
def _jac_scalar(z, pkx, pky, pre, pim, L):
    """Vector field F(z) and its 4x4 Jacobian at one phase-space point."""
    f, fx, fy, fxx, fxy, fyy = _phi_derivs2_scalar(z[0], z[1], pkx, pky, pre, pim, L)
    e2 = math.exp(-2.0 * f)
    px = z[2]
    py = z[3]
    p2 = px * px + py * py
    F = np.empty(4)
    F[0] = e2 * px
    F[1] = e2 * py
    F[2] = p2 * e2 * fx
    F[3] = p2 * e2 * fy
    J = np.empty((4, 4))
    J[0, 0] = -2.0 * fx * e2 * px
    J[0, 1] = -2.0 * fy * e2 * px
    J[0, 2] = e2
    J[0, 3] = 0.0
    J[1, 0] = -2.0 * fx * e2 * py
    J[1, 1] = -2.0 * fy * e2 * py
    J[1, 2] = 0.0
    J[1, 3] = e2
    J[2, 0] = p2 * e2 * (fxx - 2.0 * fx * fx)
    J[2, 1] = p2 * e2 * (fxy - 2.0 * fx * fy)
    J[2, 2] = 2.0 * e2 * fx * px
    J[2, 3] = 2.0 * e2 * fx * py
    J[3, 0] = p2 * e2 * (fxy - 2.0 * fx * fy)
    J[3, 1] = p2 * e2 * (fyy - 2.0 * fy * fy)
    J[3, 2] = 2.0 * e2 * fy * px
    J[3, 3] = 2.0 * e2 * fy * py
    return F, J


@njit(cache=True)
def _nb_monodromy_flow(z0, nsteps, dt, pkx, pky, pre, pim, L):
    """Integrate state plus the 4x4 fundamental matrix of the variational flow."""
    z = z0.copy()
    Phi = np.eye(4)
    for s in range(nsteps):
        F1, J1 = _jac_scalar(z, pkx, pky, pre, pim, L)
        F2, J2 = _jac_scalar(z + 0.5 * dt * F1, pkx, pky, pre, pim, L)
        F3, J3 = _jac_scalar(z + 0.5 * dt * F2, pkx, pky, pre, pim, L)
        F4, J4 = _jac_scalar(z + dt * F3, pkx, pky, pre, pim, L)
        K1 = J1 @ Phi
        K2 = J2 @ (Phi + 0.5 * dt * K1)
        K3 = J3 @ (Phi + 0.5 * dt * K2)
        K4 = J4 @ (Phi + dt * K3)
        z = z + (dt / 6.0) * (F1 + 2.0 * F2 + 2.0 * F3 + F4)
        Phi = Phi + (dt / 6.0) * (K1 + 2.0 * K2 + 2.0 * K3 + K4)
    return z, Phi


@njit(cache=True)
def _nb_traj_samples_batch(Z, nsteps, stride, dt, pkx, pky, pre, pim, L):
    """Strided trajectory samples for a batch (used by separated-set packing)."""
    m = Z.shape[0]
    nsamp = nsteps // stride + 1
    out = np.empty((m, nsamp, 4))
    for j in range(m):
        x, y, px, py = Z[j, 0], Z[j, 1], Z[j, 2], Z[j, 3]
        out[j, 0, 0] = x
        out[j, 0, 1] = y
        out[j, 0, 2] = px
        out[j, 0, 3] = py
        idx = 1
        for s in range(nsteps):
            x, y, px, py = _rk4_scalars(x, y, px, py, dt, pkx, pky, pre, pim, L)
            if (s + 1) % stride == 0:
                out[j, idx, 0] = x
                out[j, idx, 1] = y
                out[j, idx, 2] = px
                out[j, idx, 3] = py
                idx += 1
    return out


# ---------------------------------------------------------------------------
# vectorized numpy fallback
# ---------------------------------------------------------------------------

def _np_phi_derivs2(x, y, pkx, pky, pre, pim, L):
    w = 2.0 * np.pi / L
    shape = np.broadcast(x, y).shape
    f = np.zeros(shape)
    fx = np.zeros(shape)
    fy = np.zeros(shape)
    fxx = np.zeros(shape)
    fxy = np.zeros(shape)
    fyy = np.zeros(shape)
    for m in range(pkx.shape[0]):
        ax = w * pkx[m]
        ay = w * pky[m]
        th = ax * x + ay * y
        c = np.cos(th)
        s = np.sin(th)
        val = pre[m] * c - pim[m] * s
        dval = -pre[m] * s - pim[m] * c
        f += val
        fx += ax * dval
        fy += ay * dval
        fxx -= ax * ax * val
        fxy -= ax * ay * val
        fyy -= ay * ay * val
    return f, fx, fy, fxx, fxy, fyy


def _np_smoothstep(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = (s > 0) & (s < 1)
    sv = s[inside]
    a = np.exp(-1.0 / sv)
    b = np.exp(-1.0 / (1.0 - sv))
    out[inside] = a / (a + b)
    out[s >= 1] = 1.0
    return out


def _np_damping(x, y, L, dkind, dkx, dky, dre, dim, dpar):
    if dkind == 0:
        w = 2.0 * np.pi / L
        f = np.zeros(np.broadcast(x, y).shape)
        for m in range(dkx.shape[0]):
            th = w * (dkx[m] * x + dky[m] * y)
            f += dre[m] * np.cos(th) - dim[m] * np.sin(th)
        return f
    u = y if dkind == 1 else x
    d = np.abs((np.asarray(u, dtype=float) - dpar[0] + 0.5 * L) % L - 0.5 * L)
    return dpar[3] * _np_smoothstep((d - dpar[1]) / (dpar[2] - dpar[1]))


def _np_rhs(Z, pkx, pky, pre, pim, L):
    f, fx, fy, _, _, _ = _np_phi_derivs2(Z[:, 0], Z[:, 1], pkx, pky, pre, pim, L)
    e2 = np.exp(-2.0 * f)
    q = (Z[:, 2] ** 2 + Z[:, 3] ** 2) * e2
    return np.stack([e2 * Z[:, 2], e2 * Z[:, 3], q * fx, q * fy], axis=1)


def _np_flow_traj(z0, nsteps, dt, pkx, pky, pre, pim, L):
    out = np.empty((nsteps + 1, 4))
    Z = z0.reshape(1, 4).copy()
    out[0] = Z[0]
    for s in range(nsteps):
        k1 = _np_rhs(Z, pkx, pky, pre, pim, L)
        k2 = _np_rhs(Z + 0.5 * dt * k1, pkx, pky, pre, pim, L)
        k3 = _np_rhs(Z + 0.5 * dt * k2, pkx, pky, pre, pim, L)
        k4 = _np_rhs(Z + dt * k3, pkx, pky, pre, pim, L)
        Z = Z + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        out[s + 1] = Z[0]
    return out


def _np_flow_batch(Z, nsteps, dt, pkx, pky, pre, pim, L,
                   dkind, dkx, dky, dre, dim, dpar):
    Z = Z.copy()
    aint = np.zeros(Z.shape[0])
    if pkx.shape[0] == 0 and dkind == 0:
        nonconst = [q for q in range(dkx.shape[0]) if dkx[q] != 0 or dky[q] != 0]
        if not nonconst:
            abar = float(np.sum(dre)) if dre.shape[0] else 0.0
            T = nsteps * dt
            Z[:, 0] += T * Z[:, 2]
            Z[:, 1] += T * Z[:, 3]
            return Z, np.full(Z.shape[0], abar * T)

    def aval(W):
        return _np_damping(W[:, 0], W[:, 1], L, dkind, dkx, dky, dre, dim, dpar)

    for s in range(nsteps):
        k1 = _np_rhs(Z, pkx, pky, pre, pim, L)
        a1 = aval(Z)
        Z2 = Z + 0.5 * dt * k1
        k2 = _np_rhs(Z2, pkx, pky, pre, pim, L)
        a2 = aval(Z2)
        Z2 = Z + 0.5 * dt * k2
        k3 = _np_rhs(Z2, pkx, pky, pre, pim, L)
        a3 = aval(Z2)
        Z2 = Z + dt * k3
        k4 = _np_rhs(Z2, pkx, pky, pre, pim, L)
        a4 = aval(Z2)
        Z = Z + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        aint += (dt / 6.0) * (a1 + 2 * a2 + 2 * a3 + a4)
    return Z, aint


def _np_var_rhs(Z, V, pkx, pky, pre, pim, L):
    f, fx, fy, fxx, fxy, fyy = _np_phi_derivs2(Z[:, 0], Z[:, 1], pkx, pky, pre, pim, L)
    e2 = np.exp(-2.0 * f)
    px = Z[:, 2]
    py = Z[:, 3]
    p2 = px**2 + py**2
    dZ = np.stack([e2 * px, e2 * py, p2 * e2 * fx, p2 * e2 * fy], axis=1)
    gxx = p2 * e2 * (fxx - 2 * fx * fx)
    gxy = p2 * e2 * (fxy - 2 * fx * fy)
    gyy = p2 * e2 * (fyy - 2 * fy * fy)
    dV = np.empty_like(V)
    dV[:, 0] = -2 * e2 * px * (fx * V[:, 0] + fy * V[:, 1]) + e2 * V[:, 2]
    dV[:, 1] = -2 * e2 * py * (fx * V[:, 0] + fy * V[:, 1]) + e2 * V[:, 3]
    dV[:, 2] = gxx * V[:, 0] + gxy * V[:, 1] + 2 * e2 * fx * (px * V[:, 2] + py * V[:, 3])
    dV[:, 3] = gxy * V[:, 0] + gyy * V[:, 1] + 2 * e2 * fy * (px * V[:, 2] + py * V[:, 3])
    return dZ, dV


def _np_var_flow(z0, v0, nsteps, dt, pkx, pky, pre, pim, L):
    Z = z0.reshape(1, 4).copy()
    V = v0.reshape(1, 4).copy()
    norms = np.empty(nsteps + 1)
    norms[0] = float(np.linalg.norm(V))
    for s in range(nsteps):
        dZ1, dV1 = _np_var_rhs(Z, V, pkx, pky, pre, pim, L)
        dZ2, dV2 = _np_var_rhs(Z + 0.5 * dt * dZ1, V + 0.5 * dt * dV1, pkx, pky, pre, pim, L)
        dZ3, dV3 = _np_var_rhs(Z + 0.5 * dt * dZ2, V + 0.5 * dt * dV2, pkx, pky, pre, pim, L)
        dZ4, dV4 = _np_var_rhs(Z + dt * dZ3, V + dt * dV3, pkx, pky, pre, pim, L)
        Z = Z + (dt / 6.0) * (dZ1 + 2 * dZ2 + 2 * dZ3 + dZ4)
        V = V + (dt / 6.0) * (dV1 + 2 * dV2 + 2 * dV3 + dV4)
        norms[s + 1] = float(np.linalg.norm(V))
    return Z[0], V[0], norms


def _np_monodromy_flow(z0, nsteps, dt, pkx, pky, pre, pim, L):
    Z = np.repeat(z0.reshape(1, 4), 4, axis=0)
    V = np.eye(4)
    for s in range(nsteps):
        dZ1, dV1 = _np_var_rhs(Z, V, pkx, pky, pre, pim, L)
        dZ2, dV2 = _np_var_rhs(Z + 0.5 * dt * dZ1, V + 0.5 * dt * dV1, pkx, pky, pre, pim, L)
        dZ3, dV3 = _np_var_rhs(Z + 0.5 * dt * dZ2, V + 0.5 * dt * dV2, pkx, pky, pre, pim, L)
        dZ4, dV4 = _np_var_rhs(Z + dt * dZ3, V + dt * dV3, pkx, pky, pre, pim, L)
        Z = Z + (dt / 6.0) * (dZ1 + 2 * dZ2 + 2 * dZ3 + dZ4)
        V = V + (dt / 6.0) * (dV1 + 2 * dV2 + 2 * dV3 + dV4)
    # columns of the fundamental matrix are the transported basis vectors
    return Z[0], V.T.copy()


def _np_traj_samples_batch(Z, nsteps, stride, dt, pkx, pky, pre, pim, L):
    m = Z.shape[0]
    nsamp = nsteps // stride + 1
    out = np.empty((m, nsamp, 4))
    W = Z.copy()
    out[:, 0, :] = W
    idx = 1
    for s in range(nsteps):
        k1 = _np_rhs(W, pkx, pky, pre, pim, L)
        k2 = _np_rhs(W + 0.5 * dt * k1, pkx, pky, pre, pim, L)
        k3 = _np_rhs(W + 0.5 * dt * k2, pkx, pky, pre, pim, L)
        k4 = _np_rhs(W + dt * k3, pkx, pky, pre, pim, L)
        W = W + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if (s + 1) % stride == 0:
            out[:, idx, :] = W
            idx += 1
    return out


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

if USE_NUMBA:
    flow_traj = _nb_flow_traj
    flow_batch = _nb_flow_batch
    var_flow = _nb_var_flow
    monodromy_flow = _nb_monodromy_flow
    traj_samples_batch = _nb_traj_samples_batch
else:
    flow_traj = _np_flow_traj
    flow_batch = _np_flow_batch
    var_flow = _np_var_flow
    monodromy_flow = _np_monodromy_flow
    traj_samples_batch = _np_traj_samples_batch

NUMPY_IMPLS = {
    "flow_traj": _np_flow_traj,
    "flow_batch": _np_flow_batch,
    "var_flow": _np_var_flow,
    "monodromy_flow": _np_monodromy_flow,
    "traj_samples_batch": _np_traj_samples_batch,
}

NUMBA_IMPLS = {
    "flow_traj": _nb_flow_traj,
    "flow_batch": _nb_flow_batch,
    "var_flow": _nb_var_flow,
    "monodromy_flow": _nb_monodromy_flow,
    "traj_samples_batch": _nb_traj_samples_batch,
} if HAVE_NUMBA else {}
