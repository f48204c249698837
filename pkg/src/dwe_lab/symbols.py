"""Standard phase-space symbols shared by experiments and the acceptance suite."""

from __future__ import annotations

import math

import numpy as np

from .geometry import ConformalMetric, smoothstep
from .quantization import SymbolField

__all__ = ["generic_ring_symbol", "nonneg_symbol_bank"]


def generic_ring_symbol(x_weight: float = 0.5, rise=(0.1, 0.26),
                        fall=(1.2, 1.4)) -> SymbolField:
    """Generic smooth symbol: wide momentum plateau times a low-band x factor.

    The plateau keeps the symbol resolved by the momentum lattice already at
    hbar = 1/16 and its outer edge stays inside the resolved window of the
    matching grids, so scaling fits see clean asymptotics.
    """

    def fn(x, y, xix, xiy):
        s2 = np.asarray(xix) ** 2 + np.asarray(xiy) ** 2
        up = smoothstep((s2 - rise[0]) / (rise[1] - rise[0]))
        drop = 1.0 - smoothstep((s2 - fall[0]) / (fall[1] - fall[0]))
        x_part = 1.0 + x_weight * np.sin(2 * np.pi * np.asarray(x)) \
            + 0.5 * x_weight * np.cos(2 * np.pi * np.asarray(y))
        return up * drop * x_part

    r = math.sqrt(fall[1])
    return SymbolField(fn, xi_support=((-r, r), (-r, r)), name="generic-ring")


def nonneg_symbol_bank(metric: ConformalMetric, gamma, hbar: float) -> list:
    """Ten nonnegative symbols (bumps, rings, products, tube cutoffs).

    Used by the anti-Wick positivity criterion: every member is >= 0 with
    momentum support inside |xi| <= sqrt(2).
    """
    from .concentration import build_tube_cutoff

    bank: list[SymbolField] = []

    def ring(rise, fall, name):
        def fn(x, y, xix, xiy):
            s2 = np.asarray(xix) ** 2 + np.asarray(xiy) ** 2
            up = smoothstep((s2 - rise[0]) / (rise[1] - rise[0]))
            drop = 1.0 - smoothstep((s2 - fall[0]) / (fall[1] - fall[0]))
            return up * drop
        r = math.sqrt(fall[1])
        return SymbolField(fn, xi_support=((-r, r), (-r, r)), name=name)

    bank.append(ring((0.1, 0.4), (1.0, 1.4), "ring-a"))
    bank.append(ring((0.3, 0.6), (0.8, 1.2), "ring-b"))

    def gauss_xi(center, w, name):
        def fn(x, y, xix, xiy):
            d2 = (np.asarray(xix) - center[0]) ** 2 + (np.asarray(xiy) - center[1]) ** 2
            core = np.exp(-d2 / w**2)
            cut = 1.0 - smoothstep((np.sqrt(d2) / (4.5 * w) - 0.8) / 0.2)
            return core * cut + 0.0 * np.asarray(x)
        r = math.hypot(*center) + 4.5 * w
        return SymbolField(fn, xi_support=((-r, r), (-r, r)), name=name)

    bank.append(gauss_xi((0.8, 0.0), 0.2, "gauss-xi-a"))
    bank.append(gauss_xi((0.0, -0.7), 0.25, "gauss-xi-b"))

    def bump_x(center, w, ring_spec, name):
        base = ring(*ring_spec, name + "-ring")

        def fn(x, y, xix, xiy):
            dx = np.abs((np.asarray(x) - center[0] + 0.5) % 1.0 - 0.5)
            dy = np.abs((np.asarray(y) - center[1] + 0.5) % 1.0 - 0.5)
            pos = np.exp(-(dx**2 + dy**2) / w**2)
            return pos * base(x, y, xix, xiy)
        return SymbolField(fn, xi_support=base.xi_support, name=name)

    bank.append(bump_x((0.3, 0.6), 0.25, (((0.1, 0.4), (1.0, 1.4))), "bump-a"))
    bank.append(bump_x((0.7, 0.1), 0.2, (((0.2, 0.5), (0.9, 1.3))), "bump-b"))

    def cos_weighted(name):
        base = ring((0.15, 0.45), (0.95, 1.35), name + "-ring")

        def fn(x, y, xix, xiy):
            w = 1.0 + 0.9 * np.cos(2 * np.pi * np.asarray(x)) \
                * np.cos(2 * np.pi * np.asarray(y))
            return w * base(x, y, xix, xiy)
        return SymbolField(fn, xi_support=base.xi_support, name=name)

    bank.append(cos_weighted("cos-weighted"))

    sq = ring((0.12, 0.42), (1.0, 1.38), "ring-sq")

    def fn_sq(x, y, xix, xiy):
        v = sq(x, y, xix, xiy)
        return v * v
    bank.append(SymbolField(fn_sq, xi_support=sq.xi_support, name="ring-squared"))

    for nu in (0.38, 0.42):
        tube = build_tube_cutoff(metric, gamma, hbar, nu)
        bank.append(tube.symbol)
    return bank
