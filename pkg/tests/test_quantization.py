import numpy as np
import pytest

from dwe_lab.geometry import ConformalMetric, FourierField, build_damping, build_metric
from dwe_lab.quantization import (
    AliasingError,
    FourierGrid,
    OperatorMatrix,
    PropagatorOverflow,
    QuantizationError,
    SymbolField,
    WaveFunction,
    build_P,
    constant_symbol,
    egorov_residual,
    energy_window_symbol,
    laplace_beltrami,
    multiplication_operator,
    propagator,
    quantize_antiwick,
    quantize_kn,
)
from dwe_lab._linalg import spectral_norm


@pytest.fixture(scope="module")
def grid16():
    return FourierGrid(N=16, hbar=1 / 16)


@pytest.fixture(scope="module")
def grid32():
    return FourierGrid(N=32, hbar=1 / 64)


def gaussian_ring_symbol(x_weight=0.0, rise=(0.1, 0.7), fall=(0.75, 1.35)):
    """Smooth test symbol supported in the annulus rise[0] <= |xi|^2 <= fall[1].

    Wide transitions keep the symbol's momentum features broader than the
    sqrt(hbar) coherent-state width at the grids used here, and the outer edge
    stays several sqrt(hbar) inside the resolved window, so neither smoothing
    saturation nor window truncation pollutes the comparisons.
    """
    from dwe_lab.geometry import smoothstep

    def fn(x, y, xix, xiy):
        s2 = np.asarray(xix) ** 2 + np.asarray(xiy) ** 2
        up = smoothstep((s2 - rise[0]) / (rise[1] - rise[0]))
        drop = 1.0 - smoothstep((s2 - fall[0]) / (fall[1] - fall[0]))
        xi_part = up * drop
        x_part = 1.0 + x_weight * np.sin(2 * np.pi * np.asarray(x)) \
            + 0.5 * x_weight * np.cos(2 * np.pi * np.asarray(y))
        return xi_part * x_part

    r = np.sqrt(fall[1])
    return SymbolField(fn, xi_support=((-r, r), (-r, r)), name="ring")


class TestFourierGrid:
    def test_validation(self):
        with pytest.raises(QuantizationError):
            FourierGrid(N=15, hbar=0.1)
        with pytest.raises(QuantizationError):
            FourierGrid(N=8, hbar=0.1)
        with pytest.raises(QuantizationError):
            FourierGrid(N=16, hbar=0.0)

    def test_roundtrip(self, grid16):
        rng = np.random.default_rng(3)
        c = rng.standard_normal(grid16.n) + 1j * rng.standard_normal(grid16.n)
        back = grid16.grid_to_coeffs(grid16.coeffs_to_grid(c))
        assert np.allclose(back, c, atol=1e-12)

    def test_wavefunction_norm_invariant(self, grid16):
        c = np.zeros(grid16.n, dtype=complex)
        c[3] = 2.0
        psi = WaveFunction(c, grid16)
        assert psi.norm == pytest.approx(2.0, abs=1e-14)
        with pytest.raises(QuantizationError):
            WaveFunction(c, grid16, norm=1.0)


class TestLaplaceBeltrami:
    def test_flat_diagonal(self, grid16):
        m = build_metric("flat", N=16)
        lap = laplace_beltrami(m, grid16).matrix
        w2 = np.sum(grid16.omega**2, axis=1)
        assert np.allclose(lap, np.diag(-w2), atol=1e-12)

    def test_constant_conformal_scaling(self, grid16):
        c = 0.3
        phi = FourierField(1.0, {(0, 0): complex(c)})
        m = ConformalMetric(L=1.0, phi=phi, N=16)
        lap = laplace_beltrami(m, grid16).matrix
        w2 = np.sum(grid16.omega**2, axis=1)
        assert np.allclose(lap, np.exp(-2 * c) * np.diag(-w2), atol=1e-10)

    def test_annihilates_constants(self, grid16):
        m = build_metric("y-channel", eps=0.1, N=16)
        lap = laplace_beltrami(m, grid16).matrix
        const = np.zeros(grid16.n, dtype=complex)
        const[0] = 1.0  # k = (0,0) mode
        assert np.max(np.abs(lap @ const)) < 1e-10

    def test_aliasing_guard(self, grid16):
        m = build_metric("bumpy", eps=0.01, modes=((5, 0),), N=16)
        with pytest.raises(AliasingError):
            laplace_beltrami(m, grid16)


class TestQuantizeKN:
    def test_identity(self, grid16):
        M = quantize_kn(constant_symbol(1.0), grid16).matrix
        assert np.allclose(M, np.eye(grid16.n), atol=1e-12)

    def test_pure_multiplier_diagonal(self, grid16):
        def fn(x, y, xix, xiy):
            return np.asarray(xix) ** 2 + 0.5 * np.asarray(xiy) ** 2
        b = SymbolField(fn, xi_support=None)
        M = quantize_kn(b, grid16).matrix
        xi = grid16.xi
        expect = xi[:, 0] ** 2 + 0.5 * xi[:, 1] ** 2
        assert np.allclose(M, np.diag(expect), atol=1e-12)

    def test_position_symbol_eigenvalues_in_range(self, grid16):
        def fn(x, y, xix, xiy):
            return 1.0 + 0.3 * np.cos(2 * np.pi * np.asarray(x)) \
                + 0.0 * np.asarray(xix)
        b = SymbolField(fn, xi_support=None)
        M = quantize_kn(b, grid16).matrix
        ev = np.linalg.eigvals(M)
        X = grid16.xgrid
        vals = fn(X[:, 0], X[:, 1], 0.0, 0.0)
        assert np.max(np.abs(ev.imag)) < 1e-10
        assert ev.real.min() >= vals.min() - 1e-10
        assert ev.real.max() <= vals.max() + 1e-10

    def test_linearity(self, grid16):
        b1 = gaussian_ring_symbol(0.7)
        b2 = gaussian_ring_symbol(0.0)
        rng = np.random.default_rng(5)
        a1, a2 = rng.standard_normal(2)

        def combo(x, y, xix, xiy):
            return a1 * b1(x, y, xix, xiy) + a2 * b2(x, y, xix, xiy)

        bc = SymbolField(combo, xi_support=b1.xi_support)
        M = quantize_kn(bc, grid16).matrix
        M12 = a1 * quantize_kn(b1, grid16).matrix + a2 * quantize_kn(b2, grid16).matrix
        assert np.max(np.abs(M - M12)) < 1e-12


class TestQuantizeAntiWick:
    def test_identity(self, grid16):
        full = grid16.xi_max
        one = SymbolField(lambda x, y, u, v: np.ones(np.broadcast(x, y, u, v).shape),
                          xi_support=((-full, full), (-full, full)))
        M = quantize_antiwick(one, grid16).matrix
        assert np.max(np.abs(M - np.eye(grid16.n))) < 1e-10

    def test_hermitian_for_real_symbol(self, grid16):
        M = quantize_antiwick(gaussian_ring_symbol(0.9), grid16).matrix
        assert np.max(np.abs(M - M.conj().T)) <= 1e-12

    def test_positive_semidefinite(self, grid16):
        M = quantize_antiwick(gaussian_ring_symbol(0.9), grid16).matrix
        ev = np.linalg.eigvalsh(M)
        assert ev.min() >= -1e-10

    def test_norm_bounded_by_sup(self, grid16):
        b = gaussian_ring_symbol(0.9)
        M = quantize_antiwick(b, grid16).matrix
        sup = 1.9 * 1.0  # x-part max = 1 + 0.9, xi part <= 1
        assert spectral_norm(M) <= sup + 1e-8

    def test_momentum_symbol_matches_smoothing_oracle(self, grid16):
        # b depending on xi only: matrix is diagonal with entries equal to the
        # Gaussian-smoothed symbol at hbar*omega_k (independent quadrature oracle)
        def fn(x, y, xix, xiy):
            return np.exp(-((np.asarray(xix) - 0.6) ** 2
                            + np.asarray(xiy) ** 2) / 0.1) + 0 * np.asarray(x)
        b = SymbolField(fn, xi_support=((-1.8, 1.8), (-1.8, 1.8)))
        M = quantize_antiwick(b, grid16).matrix
        off = M - np.diag(np.diag(M))
        assert np.max(np.abs(off)) < 1e-8
        hbar = grid16.hbar
        u = np.linspace(-3, 3, 1201)
        du = u[1] - u[0]
        for k in [0, 1, 5, 17]:
            xi0 = grid16.xi[k]
            gx = np.exp(-((xi0[0] + u) - 0.6) ** 2 / 0.1)
            wx = np.exp(-u**2 / hbar)
            gy = np.exp(-(xi0[1] + u) ** 2 / 0.1)
            oracle = (np.sum(gx * wx) * du / np.sqrt(np.pi * hbar)) * \
                     (np.sum(gy * wx) * du / np.sqrt(np.pi * hbar))
            assert M[k, k].real == pytest.approx(oracle, abs=1e-6)

    def test_antiwick_close_to_kn(self, grid16, grid32):
        diffs = []
        for g in (grid16, grid32):
            b = gaussian_ring_symbol(0.5)
            d = spectral_norm(quantize_antiwick(b, g).matrix
                              - quantize_kn(b, g).matrix)
            diffs.append(d)
        # decreasing in hbar with log-log slope >= 0.4
        slope = (np.log(diffs[0]) - np.log(diffs[1])) / (np.log(1 / 16) - np.log(1 / 64))
        assert slope >= 0.4
        # C sqrt(hbar) envelope with the calibrated constant for this symbol
        assert diffs[0] <= 3.0 * np.sqrt(1 / 16)
        assert diffs[1] <= 3.0 * np.sqrt(1 / 64)


class TestBuildP:
    def test_zero_damping_hermitian(self, grid16):
        m = build_metric("y-channel", eps=0.1, N=16)
        P = build_P(m, build_damping("zero"), grid16).matrix
        # flat-inner-product Hermitian only for flat metric; check flat case
        mflat = build_metric("flat", N=16)
        Pf = build_P(mflat, build_damping("zero"), grid16).matrix
        assert np.max(np.abs(Pf - Pf.conj().T)) < 1e-12

    def test_constant_damping_antihermitian_part(self, grid16):
        m = build_metric("flat", N=16)
        P = build_P(m, build_damping("constant", c=0.5), grid16, z=0.5).matrix
        anti = 0.5 * (P - P.conj().T)
        expect = -1j * grid16.hbar * 0.5 * np.eye(grid16.n)
        assert np.max(np.abs(anti - expect)) < 1e-12

    def test_flat_spectrum_closed_form(self, grid16):
        m = build_metric("flat", N=16)
        P = build_P(m, build_damping("zero"), grid16).matrix
        w2 = np.sum(grid16.omega**2, axis=1)
        expect = np.sort(grid16.hbar**2 * w2 / 2)
        assert np.allclose(np.sort(np.linalg.eigvals(P).real), expect, atol=1e-10)

    def test_hermitian_part_is_laplacian_part(self, grid16):
        m = build_metric("y-channel", eps=0.1, N=16)
        a = build_damping("constant", c=0.3)
        P = build_P(m, a, grid16, z=0.5).matrix
        lap = laplace_beltrami(m, grid16, symmetrized=True).matrix
        H = 0.5 * (P + P.conj().T)
        assert np.max(np.abs(H - (-(grid16.hbar**2 / 2) * lap))) < 1e-10

    def test_symmetrized_laplacian_same_spectrum(self, grid16):
        m = build_metric("y-channel", eps=0.1, N=16)
        lit = np.sort(np.linalg.eigvals(laplace_beltrami(m, grid16).matrix).real)
        sym = np.sort(np.linalg.eigvalsh(
            laplace_beltrami(m, grid16, symmetrized=True).matrix))
        assert np.allclose(lit, sym, atol=1e-8)


class TestPropagator:
    def test_time_zero_identity(self, grid16):
        m = build_metric("flat", N=16)
        P = build_P(m, build_damping("zero"), grid16)
        U = propagator(P, 0.0).matrix
        assert np.allclose(U, np.eye(grid16.n), atol=1e-14)

    def test_unitary_without_damping(self, grid16):
        m = build_metric("y-channel", eps=0.1, N=16)
        P = build_P(m, build_damping("zero"), grid16)
        U = propagator(P, 1.0).matrix
        assert spectral_norm(U.conj().T @ U - np.eye(grid16.n)) <= 1e-8

    def test_group_law(self, grid16):
        m = build_metric("y-channel", eps=0.1, N=16)
        P = build_P(m, build_damping("constant", c=0.4), grid16)
        U1 = propagator(P, 1.0).matrix
        U2 = propagator(P, 2.0).matrix
        assert spectral_norm(U2 - U1 @ U1) <= 1e-8

    def test_constant_damping_contraction(self, grid16):
        m = build_metric("flat", N=16)
        c = 0.5
        P = build_P(m, build_damping("constant", c=c), grid16, z=0.5)
        U = propagator(P, 1.3).matrix
        rng = np.random.default_rng(11)
        psi = rng.standard_normal(grid16.n) + 1j * rng.standard_normal(grid16.n)
        ratio = np.linalg.norm(U @ psi) / np.linalg.norm(psi)
        assert ratio == pytest.approx(np.exp(-1.3 * c), abs=1e-8)

    def test_overflow_guard(self, grid16):
        m = build_metric("flat", N=16)
        P = build_P(m, build_damping("constant", c=1.0), grid16)
        with pytest.raises(PropagatorOverflow):
            propagator(P, -1e5)


class TestEgorov:
    def test_multiplier_commutes_flat(self, grid16):
        m = build_metric("flat", N=16)
        a = build_damping("zero")

        def fn(x, y, xix, xiy):
            s2 = np.asarray(xix) ** 2 + np.asarray(xiy) ** 2
            return np.exp(-2.0 * (s2 - 1.0) ** 2) + 0 * np.asarray(x)
        b = SymbolField(fn, xi_support=((-2.0, 2.0), (-2.0, 2.0)))
        res = egorov_residual(m, a, b, t=0.5, grid=grid16, kappa1=0.4)
        assert res <= 1e-10

    def test_constant_damping_exact(self, grid16):
        m = build_metric("flat", N=16)
        a = build_damping("constant", c=0.3)
        res = egorov_residual(m, a, constant_symbol(1.0), t=0.8, grid=grid16,
                              kappa1=0.4)
        assert res <= 1e-8

    def test_residual_scales_with_hbar(self, grid16, grid32):
        m = build_metric("flat", N=16)
        m32 = build_metric("flat", N=32)
        a = build_damping("zero")
        b = gaussian_ring_symbol(0.6)
        r16 = egorov_residual(m, a, b, t=1.0, grid=grid16, kappa1=0.4)
        r64 = egorov_residual(m32, a, b, t=1.0, grid=grid32, kappa1=0.4)
        slope = (np.log(r16) - np.log(r64)) / (np.log(1 / 16) - np.log(1 / 64))
        assert slope >= 0.8

    def test_time_window_guard(self, grid16):
        m = build_metric("flat", N=16)
        with pytest.raises(QuantizationError):
            egorov_residual(m, build_damping("zero"), constant_symbol(), t=3.0,
                            grid=grid16, kappa1=0.2)


def test_energy_window_symbol_support(grid16):
    m = build_metric("y-channel", eps=0.1, N=16)
    chi = energy_window_symbol(m)
    assert chi.check_support(L=1.0) == 0.0
    # equals 1 on the unit shell
    vals = chi(np.array([0.1]), np.array([0.3]),
               np.array([np.exp(float(m.phi(0.1, 0.3)))]), np.array([0.0]))
    assert vals[0] == pytest.approx(1.0, abs=1e-12)


def test_operator_matrix_rejects_nonfinite():
    with pytest.raises(QuantizationError):
        OperatorMatrix(np.array([[np.inf, 0.0], [0.0, 1.0]]), "symbol", 0.1)
