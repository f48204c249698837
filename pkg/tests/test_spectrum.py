import numpy as np
import pytest

from dwe_lab.geometry import build_damping, build_metric
from dwe_lab.spectrum import (
    SpectrumError,
    build_pencil,
    gap_scan,
    imaginary_part_histogram,
    linearize,
    resolvent_norm,
    solve_spectrum,
    strip_check,
    weyl_count,
    z_of_tau,
)


def flat_exact_taus(N, c, L=1.0):
    """Closed-form spectrum of the flat-torus pencil with constant damping c."""
    k = np.fft.fftfreq(N, d=1.0 / N)
    KX, KY = np.meshgrid(k, k, indexing="ij")
    lam = (2 * np.pi / L) ** 2 * (KX.ravel() ** 2 + KY.ravel() ** 2)
    taus = []
    for lk in lam:
        disc = np.sqrt(complex(lk - c**2))
        taus.append(-1j * c + disc)
        taus.append(-1j * c - disc)
    return np.array(taus)


@pytest.fixture(scope="module")
def flat16_pencils():
    m = build_metric("flat", N=16)
    return {
        0.0: build_pencil(m, build_damping("zero"), N=16),
        0.5: build_pencil(m, build_damping("constant", c=0.5), N=16),
    }


@pytest.fixture(scope="module")
def flat16_results(flat16_pencils):
    return {c: solve_spectrum(p) for c, p in flat16_pencils.items()}


class TestPencil:
    def test_weighted_hermitian(self):
        m = build_metric("y-channel", eps=0.1, N=16)
        p = build_pencil(m, build_damping("zero"), N=16)
        scale = np.max(np.abs(p.K))
        assert p.weighted_hermitian_defect() <= 1e-10 * scale

    def test_scalar_toy_quadratic_formula(self):
        # n=1 toy: eigenvalues of [[0, w], [lam/w, -2ic]] are -ic +- sqrt(lam - c^2)
        lam, c = 9.0, 0.8
        C = np.array([[0.0, 1.0], [lam, -2j * c]])
        ev = np.linalg.eigvals(C)
        expect = np.array([-1j * c + np.sqrt(lam - c**2),
                           -1j * c - np.sqrt(lam - c**2)])
        assert np.allclose(np.sort_complex(ev), np.sort_complex(expect), atol=1e-12)

    def test_companion_eigen_pairs_without_damping(self, flat16_pencils):
        C = linearize(flat16_pencils[0.0])
        ev = np.linalg.eigvals(C)
        # eigenvalues come in +- pairs
        d = np.abs(ev[:, None] + ev[None, :])
        assert np.all(d.min(axis=1) < 1e-7)


class TestSolveSpectrum:
    def test_flat_zero_damping_closed_form(self, flat16_results):
        res = flat16_results[0.0]
        exact = flat_exact_taus(16, 0.0)
        cap = res.pencil.resolved_cap
        exact = exact[(np.abs(exact) <= cap + 1e-6) & (np.abs(exact) > 1e-9)]
        # the defective k=0 double root is tagged as the exceptional pair
        assert int(np.sum(res.zero_mode)) == 2
        reg = res.regular_taus
        d = np.abs(reg[:, None] - exact[None, :])
        assert reg.shape[0] == exact.shape[0]
        assert d.min(axis=1).max() < 1e-8

    def test_flat_constant_damping_closed_form(self, flat16_results):
        res = flat16_results[0.5]
        exact = flat_exact_taus(16, 0.5)
        cap = res.pencil.resolved_cap
        exact = exact[np.abs(exact) <= cap + 1e-9]
        d = np.abs(res.taus[:, None] - exact[None, :])
        assert d.min(axis=1).max() < 1e-8
        # k = 0 exceptional pair: tau = 0 and tau = -i
        zero_like = res.taus[np.abs(res.taus.real) < 1e-9]
        assert any(abs(t) < 1e-8 for t in zero_like)
        assert any(abs(t + 1j) < 1e-8 for t in zero_like)

    def test_residuals_enforced(self, flat16_results):
        for res in flat16_results.values():
            assert np.all(res.residuals <= 1e-8)

    def test_mirror_symmetry(self, flat16_results):
        for res in flat16_results.values():
            assert res.mirror_defect() <= 1e-8

    def test_mirror_symmetry_ychannel_well(self):
        m = build_metric("y-channel", eps=0.1, N=16)
        a = build_damping("smooth-well", N=16)
        res = solve_spectrum(build_pencil(m, a, N=16))
        assert res.mirror_defect() <= 1e-8
        assert np.all(res.residuals <= 1e-8)

    def test_dissipativity(self):
        m = build_metric("flat", N=16)
        a = build_damping("smooth-well", N=16)
        res = solve_spectrum(build_pencil(m, a, N=16))
        assert np.max(res.regular_taus.imag) <= 1e-10
        assert np.max(res.taus.imag) <= 1e-6

    def test_zero_damping_real_spectrum(self, flat16_results):
        res = flat16_results[0.0]
        assert np.max(np.abs(res.regular_taus.imag)) <= 1e-10

    def test_refinement_stability_flat(self):
        m16 = build_metric("flat", N=16)
        m32 = build_metric("flat", N=32)
        a = build_damping("constant", c=0.5)
        r16 = solve_spectrum(build_pencil(m16, a, N=16))
        r32 = solve_spectrum(build_pencil(m32, a, N=32))
        t16 = r16.regular_taus
        d = np.abs(t16[:, None] - r32.taus[None, :])
        assert d.min(axis=1).max() <= 1e-6

    def test_refinement_stability_ychannel(self):
        a = build_damping("zero")
        r16 = solve_spectrum(build_pencil(build_metric("y-channel", eps=0.1, N=16), a, N=16))
        r32 = solve_spectrum(build_pencil(build_metric("y-channel", eps=0.1, N=32), a, N=32))
        t16 = r16.regular_taus
        d = np.abs(t16[:, None] - r32.taus[None, :])
        assert d.min(axis=1).max() <= 1e-6

    def test_beta_and_z_utilities(self, flat16_results):
        res = flat16_results[0.5]
        assert np.allclose(res.betas, res.taus.imag)
        hbar = 1 / 16
        z = res.z_values(hbar)
        assert np.allclose(z, (hbar * res.taus) ** 2 / 2)
        assert z_of_tau(hbar, 16.0) == pytest.approx(0.5, abs=1e-12)


class TestStrip:
    def test_constant_damping_strip(self, flat16_results):
        res = flat16_results[0.5]
        rep = strip_check(res, -0.5, -0.5, tol=0.1, re_min=20.0)
        assert rep.fraction == 1.0
        assert rep.n_checked > 0

    def test_zero_damping_strip(self, flat16_results):
        res = flat16_results[0.0]
        rep = strip_check(res, 0.0, 0.0, tol=0.1, re_min=20.0)
        assert rep.fraction == 1.0


class TestResolvent:
    def test_flat_diagonal_closed_form(self, flat16_pencils):
        p = flat16_pencils[0.0]
        tau = 10.0
        lam = np.unique(np.round(np.linalg.eigvalsh(p.K.real), 10))
        expect = 1.0 / np.min(np.abs(lam - tau**2))
        probe = resolvent_norm(p, tau)
        assert probe.norm == pytest.approx(expect, rel=1e-8)

    def test_far_below_strip_finite(self, flat16_pencils):
        p = flat16_pencils[0.5]
        probe = resolvent_norm(p, 5.0 - 10.0j)
        assert np.isfinite(probe.norm)
        assert probe.norm < 1.0

    def test_near_eigenvalue_blows_up(self, flat16_pencils):
        p = flat16_pencils[0.0]
        tau = 2 * np.pi + 1e-6
        probe = resolvent_norm(p, tau)
        assert probe.norm > 1e4

    def test_eigenvalue_distance_scaling(self, flat16_pencils):
        # resolvent norm ~ Theta(1/d) approaching a simple eigenvalue (normal case)
        p = flat16_pencils[0.0]
        ds = np.array([1e-2, 1e-3, 1e-4])
        norms = [resolvent_norm(p, 2 * np.pi + d).norm for d in ds]
        slope = np.polyfit(np.log(ds), np.log(norms), 1)[0]
        assert slope == pytest.approx(-1.0, abs=0.05)


class TestGapScan:
    def test_constant_damping(self, flat16_results):
        res = flat16_results[0.5]
        scan = gap_scan(res)
        assert scan.c_emp > 0
        # min attained at smallest regular |tau_n| (product grows with |tau|)
        nz = res.regular_taus[np.abs(res.regular_taus) > 1e-8]
        assert abs(scan.argmin_tau) <= np.min(np.abs(nz)) + 1e-6
        # closed form: product = c log(1 + |tau|) at the lowest shell
        expect = 0.5 * np.log1p(np.min(np.abs(nz)))
        assert scan.c_emp == pytest.approx(expect, rel=1e-6)

    def test_smooth_well_positive(self):
        m = build_metric("flat", N=16)
        a = build_damping("smooth-well", N=16)
        scan = gap_scan(solve_spectrum(build_pencil(m, a, N=16)))
        assert scan.c_emp > 0

    def test_rejects_zero_damping(self, flat16_results):
        with pytest.raises(SpectrumError):
            gap_scan(flat16_results[0.0])


class TestWeyl:
    def test_flat_lattice_count(self, flat16_results):
        res = flat16_results[0.0]
        count, main, dev = weyl_count(res, (0.0, 20.0))
        # lattice-point oracle: tau = 2 pi |k|
        ks = np.arange(-8, 8)
        KX, KY = np.meshgrid(ks, ks, indexing="ij")
        taus = 2 * np.pi * np.sqrt(KX**2 + KY**2).ravel()
        oracle = int(np.sum((taus > 0) & (taus <= 20.0)))
        assert count == oracle
        assert dev <= 0.15

    def test_conformal_area_used(self):
        c = 0.2
        from dwe_lab.geometry import ConformalMetric, FourierField
        m = ConformalMetric(L=1.0, phi=FourierField(1.0, {(0, 0): complex(c)}), N=16)
        p = build_pencil(m, build_damping("zero"), N=16)
        assert p.area_g == pytest.approx(np.exp(2 * c), rel=1e-12)

    def test_empty_interval(self, flat16_results):
        count, main, dev = weyl_count(flat16_results[0.0], (0.0, 0.0))
        assert count == 0 and main == 0


class TestHistogram:
    def test_constant_point_mass(self, flat16_results):
        counts, edges, mean, ref = imaginary_part_histogram(flat16_results[0.5],
                                                            re_min=5.0)
        assert mean == pytest.approx(-0.5, abs=1e-8)
        assert ref == pytest.approx(-0.5, abs=1e-12)

    def test_zero_point_mass(self, flat16_results):
        counts, edges, mean, ref = imaginary_part_histogram(flat16_results[0.0])
        assert mean == pytest.approx(0.0, abs=1e-10)
        assert ref == 0.0
