import numpy as np
import pytest

from h2beats import quantum
from h2beats.constants import C_CM_FS
from h2beats.molecule import H2P_X_MORSE, levels_from_morse
from h2beats.quantum import (
    GridSpec,
    GridTooNarrowError,
    build_joint_state,
    coherence,
    coherence_scan,
    entropy,
    locate_coherence_zeros,
    purity,
    reduce_to_ion,
)

D_E_89 = 1130.1
TAU_HALF = 1.0 / (2.0 * C_CM_FS * D_E_89)  # 14.758 fs: coherence zero
TAU_FULL = 1.0 / (C_CM_FS * D_E_89)        # 29.516 fs: coherence maximum


def dm_at(levels, pulse, tau):
    return reduce_to_ion(build_joint_state(levels, pulse.with_delay(tau)))


class TestJointState:
    def test_zero_delay_real_gaussian(self, levels_8_9, wide_pulse):
        js = build_joint_state(levels_8_9, wide_pulse.with_delay(0.0))
        expected = np.sqrt(0.5) * wide_pulse.single_pulse(
            levels_8_9.energy[0] + js.eps_grid
        )
        np.testing.assert_allclose(js.amps[0].imag, 0.0)
        np.testing.assert_allclose(js.amps[0].real, expected, rtol=1e-12)

    def test_fringe_zeros_spaced_by_inverse_delay(self, levels_8_9, wide_pulse):
        tau = 40.0
        js = build_joint_state(levels_8_9, wide_pulse.with_delay(tau))
        row = js.amps[0].real
        eps = js.eps_grid
        # stay in the Gaussian core where crossings are well resolved
        mid = wide_pulse.center - levels_8_9.energy[0]
        core = np.abs(eps - mid) < 2 * wide_pulse.sigma
        i = np.nonzero(core[:-1] & (np.sign(row[:-1]) * np.sign(row[1:]) < 0))[0]
        # linear interpolation of each crossing position
        x0 = eps[i] - row[i] * (eps[i + 1] - eps[i]) / (row[i + 1] - row[i])
        # cos(pi c (eps + E_v) tau) vanishes every 1/(c tau) along eps
        np.testing.assert_allclose(np.diff(x0), 1.0 / (C_CM_FS * tau), rtol=1e-3)

    def test_half_fringe_offset_at_half_period_delay(self, levels_8_9, wide_pulse):
        # cross-correlate the two fringe combs: intensity patterns are offset
        # by half a fringe when tau = 1/(2 c dE)
        js = build_joint_state(levels_8_9, wide_pulse.with_delay(TAU_HALF))
        comb8 = np.abs(js.amps[0]) ** 2
        comb9 = np.abs(js.amps[1]) ** 2
        comb8 = comb8 - comb8.mean()
        comb9 = comb9 - comb9.mean()
        corr = np.correlate(comb8, comb9, mode="same")
        lags = (np.arange(len(corr)) - len(corr) // 2) * (js.eps_grid[1] - js.eps_grid[0])
        fringe = 1.0 / (C_CM_FS * TAU_HALF)  # intensity fringe period in eps
        win = np.abs(lags) < 0.75 * fringe
        best = lags[win][np.argmax(corr[win])]
        assert abs(abs(best) - fringe / 2.0) < 0.03 * fringe

    def test_grid_too_narrow_raises(self, levels_8_9, wide_pulse):
        with pytest.raises(ValueError):
            GridSpec(n_sigma=4.0)
        # bypass the GridSpec floor to exercise the tail check in the builder
        spec = GridSpec.__new__(GridSpec)
        object.__setattr__(spec, "n_sigma", 5.0)
        object.__setattr__(spec, "points_per_fringe", 16)
        object.__setattr__(spec, "min_points", 512)
        with pytest.raises(GridTooNarrowError):
            build_joint_state(levels_8_9, wide_pulse.with_delay(0.0), spec)


class TestReduce:
    def test_brute_force_oracle_on_coarse_grid(self, levels_8_9, wide_pulse):
        js = build_joint_state(levels_8_9, wide_pulse.with_delay(17.0))
        # decimate to a coarse 64-point grid and re-wrap
        idx = np.linspace(0, len(js.eps_grid) - 1, 64).astype(int)
        coarse = quantum.JointState(
            eps_grid=js.eps_grid[idx],
            amps=js.amps[:, idx],
            ip_ref=js.ip_ref,
            levels=js.levels,
        )
        got = reduce_to_ion(coarse).rho
        # explicit double-loop trapezoid sum
        eps = coarse.eps_grid
        w = np.full(len(eps), eps[1] - eps[0])
        w[0] *= 0.5
        w[-1] *= 0.5
        n = len(levels_8_9)
        ref = np.zeros((n, n), dtype=complex)
        for i in range(n):
            for j in range(n):
                acc = 0.0
                for k in range(len(eps)):
                    acc += coarse.amps[i, k] * np.conj(coarse.amps[j, k]) * w[k]
                ref[i, j] = acc
        ref = ref / np.trace(ref).real
        np.testing.assert_allclose(got, ref, atol=1e-12)

    def test_full_coherence_at_zero_delay(self, wide_pulse):
        # gap << bandwidth: overlap of the offset Gaussians stays near 1
        lv = levels_from_morse(H2P_X_MORSE, 8, 9)
        dm = dm_at(lv, wide_pulse, 0.0)
        assert coherence(dm, 8, 9) > 0.99

    def test_coherence_zero_at_half_period(self, levels_8_9, wide_pulse):
        g_zero = coherence(dm_at(levels_8_9, wide_pulse, TAU_HALF), 8, 9)
        gs = [
            coherence(dm_at(levels_8_9, wide_pulse, t), 8, 9)
            for t in np.linspace(11.0, 102.0, 16)
        ]
        assert g_zero < 1e-3 * max(gs)

    def test_diagonal_invariant_under_delay(self, levels_7_10, ev_pulse):
        diags = np.array([
            np.diag(dm_at(levels_7_10, ev_pulse, t).rho).real
            for t in (11.0, 29.0, 45.0, 102.0)
        ])
        assert np.ptp(diags, axis=0).max() / diags.mean() < 1e-6

    def test_hermitian_and_psd(self, levels_7_10, ev_pulse):
        for t in (0.0, 14.758, 29.0, 77.3):
            rho = dm_at(levels_7_10, ev_pulse, t).rho
            np.testing.assert_allclose(rho, rho.conj().T, atol=1e-14)
            assert np.linalg.eigvalsh(rho).min() >= -1e-10

    @pytest.mark.parametrize("tau", [0.0, 1.0, 3.0, 7.0, 14.758, 29.0, 77.0])
    @pytest.mark.parametrize("populations", [None, [4.0, 3.0, 2.0, 1.0]])
    def test_closed_form_gaussian_oracle(self, wide_pulse, tau, populations):
        # For Gaussian F0 the reduction has a closed form: with
        # D = E_v - E_v', mean offset of the product Gaussian removed,
        #   rho_vv' ~ sqrt(p_v p_v') exp(-D^2/(4 s^2))
        #            * [cos(pi c D tau) + exp(-(pi c s tau)^2) cos(2 pi c w0 tau)]
        # which needs no quadrature at all.
        lv = levels_from_morse(H2P_X_MORSE, 7, 10, populations=populations)
        p = wide_pulse.with_delay(tau)
        c = C_CM_FS
        n = len(lv)
        ref = np.zeros((n, n))
        for i in range(n):
            for j in range(n):
                d = lv.energy[i] - lv.energy[j]
                slow = np.cos(np.pi * c * d * tau)
                fast = np.exp(-((np.pi * c * p.sigma * tau) ** 2)) * np.cos(
                    2.0 * np.pi * c * p.center * tau
                )
                ref[i, j] = (
                    np.sqrt(lv.populations[i] * lv.populations[j])
                    * np.exp(-(d**2) / (4.0 * p.sigma**2))
                    * (slow + fast)
                )
        ref = ref / np.trace(ref)
        got = reduce_to_ion(build_joint_state(lv, p)).rho
        np.testing.assert_allclose(got.real, ref, atol=2e-7)
        np.testing.assert_allclose(got.imag, 0.0, atol=1e-12)

    def test_two_level_purity_entropy_follow_coherence(self, levels_8_9, wide_pulse):
        # equal populations: purity = (1 + g^2)/2 and the entropy is the
        # binary entropy of the eigenvalues (1 +- g)/2
        for tau in (0.0, 9.0, 14.758, 21.0, 29.516):
            dm = dm_at(levels_8_9, wide_pulse, tau)
            g = coherence(dm, 8, 9)
            assert purity(dm) == pytest.approx((1.0 + g**2) / 2.0, abs=1e-9)
            lam = np.array([(1.0 + g) / 2.0, (1.0 - g) / 2.0])
            lam = lam[lam > 0]
            assert entropy(dm) == pytest.approx(float(-(lam * np.log(lam)).sum()), abs=1e-9)

    def test_factorization_envelope(self, levels_8_9, wide_pulse):
        # |rho_01(tau)| = |cos(pi c dE tau)| x scale, valid once the fast
        # term has died off (c sigma tau >= 5)
        tau_min = 5.0 / (C_CM_FS * wide_pulse.sigma)
        taus = np.linspace(max(tau_min, 11.0), 90.0, 25)
        mags = np.array([abs(dm_at(levels_8_9, wide_pulse, t).rho[0, 1]) for t in taus])
        env = np.abs(np.cos(np.pi * C_CM_FS * D_E_89 * taus))
        ref = np.argmax(env)
        scale = mags[ref] / env[ref]
        np.testing.assert_allclose(mags, scale * env, atol=1e-3)


class TestQuantifiers:
    def test_pure_state(self, levels_8_9):
        rho = np.array([[0.5, 0.5], [0.5, 0.5]], dtype=complex)
        dm = quantum.IonDensityMatrix(rho=rho, levels=levels_8_9)
        assert purity(dm) == pytest.approx(1.0, abs=1e-12)
        assert entropy(dm) == pytest.approx(0.0, abs=1e-12)
        assert coherence(dm, 8, 9) == pytest.approx(1.0, abs=1e-12)

    def test_maximal_mixture(self, levels_7_10):
        n = len(levels_7_10)
        dm = quantum.IonDensityMatrix(rho=np.eye(n, dtype=complex) / n, levels=levels_7_10)
        assert purity(dm) == pytest.approx(1.0 / n, abs=1e-12)
        assert entropy(dm) == pytest.approx(np.log(n), abs=1e-12)
        assert coherence(dm, 7, 9) == 0.0

    def test_two_level_entangled_point(self, levels_8_9, wide_pulse):
        dm = dm_at(levels_8_9, wide_pulse, TAU_HALF)
        assert purity(dm) == pytest.approx(0.5, abs=1e-3)
        assert entropy(dm) == pytest.approx(np.log(2.0), abs=3e-3)

    def test_rejects_unnormalized(self, levels_8_9):
        with pytest.raises(ValueError):
            quantum.IonDensityMatrix(rho=np.eye(2, dtype=complex), levels=levels_8_9)


class TestCoherenceScan:
    def test_paper_grid_row_count(self, levels_8_9, wide_pulse):
        taus = np.arange(11.0, 102.1, 3.0)
        scan = coherence_scan(levels_8_9, wide_pulse, taus)
        assert len(taus) == 31
        assert scan.g.shape == (31, 1)
        assert scan.pairs == ((8, 9),)

    def test_single_delay(self, levels_8_9, wide_pulse):
        scan = coherence_scan(levels_8_9, wide_pulse, [29.0])
        assert scan.g.shape == (1, 1)

    def test_contrast_between_29_and_45fs(self, wide_pulse):
        lv = levels_from_morse(H2P_X_MORSE, 8, 10)
        scan = coherence_scan(lv, wide_pulse, [29.0, 45.0], pairs=[(8, 9), (8, 10)])
        g = {(8, 9): scan.g[:, 0], (8, 10): scan.g[:, 1]}
        assert g[(8, 9)][0] / g[(8, 9)][1] > 7.0
        ratio = g[(8, 10)][0] / g[(8, 10)][1]
        assert 1.0 / 1.2 < ratio < 1.2

    def test_first_two_zeros(self, levels_8_9, wide_pulse):
        zeros = locate_coherence_zeros(levels_8_9, wide_pulse, (8, 9), tau_max=50.0)
        assert len(zeros) >= 2
        assert zeros[0] == pytest.approx(14.758, abs=0.05)
        assert zeros[1] == pytest.approx(44.275, abs=0.05)

    def test_workers_match_serial(self, levels_8_9, wide_pulse):
        taus = [11.0, 29.0, 45.0]
        serial = coherence_scan(levels_8_9, wide_pulse, taus)
        threaded = coherence_scan(levels_8_9, wide_pulse, taus, workers=3)
        np.testing.assert_array_equal(serial.g, threaded.g)

    def test_rejects_empty_and_negative(self, levels_8_9, wide_pulse):
        with pytest.raises(ValueError):
            coherence_scan(levels_8_9, wide_pulse, [])
        with pytest.raises(ValueError):
            coherence_scan(levels_8_9, wide_pulse, [-1.0])


def test_coherence_zero_spacing_29_51fs(levels_8_9, wide_pulse):
    # zeros of g(8,9) are spaced by the full intensity-oscillation period
    zeros = locate_coherence_zeros(levels_8_9, wide_pulse, (8, 9), tau_max=105.0)
    assert len(zeros) >= 3
    np.testing.assert_allclose(np.diff(zeros), TAU_FULL, atol=0.1)
