import numpy as np
import pytest

from h2beats import probe, quantum
from h2beats.constants import C_CM_FS
from h2beats.molecule import H2P_X_MORSE, levels_from_morse
from h2beats.optics import PulsePair
from h2beats.probe import (
    NormalizationBand,
    ProbeKernel,
    beta0_baseline,
    default_kernel,
    momentum_distribution,
    simulate_beta0,
    simulate_scan,
)

X = np.arange(1.0, 111.0)
TAU = np.arange(-50.0, 800.1, 4.0)


def make_dm(levels, g=1.0, phases=None):
    """Density matrix with uniform populations and coherence g on all pairs."""
    n = len(levels)
    rho = np.full((n, n), g / n, dtype=complex)
    np.fill_diagonal(rho, 1.0 / n)
    if phases is not None:
        for (i, j), ph in phases.items():
            rho[i, j] = abs(rho[i, j]) * np.exp(1j * ph)
            rho[j, i] = np.conj(rho[i, j])
    return quantum.IonDensityMatrix(rho=rho, levels=levels)


@pytest.fixture(scope="module")
def two_levels():
    return levels_from_morse(H2P_X_MORSE, 8, 9)


@pytest.fixture(scope="module")
def three_levels():
    return levels_from_morse(H2P_X_MORSE, 7, 9)


class TestProbeKernel:
    def test_default_layout(self, three_levels):
        k = default_kernel(three_levels)
        assert len(k) == 3
        np.testing.assert_allclose(np.diff(k.centers), 6.0)
        np.testing.assert_allclose(k.widths, 8.0)

    def test_rejects_non_monotone_centers(self):
        with pytest.raises(ValueError):
            ProbeKernel(centers=[60.0, 58.0], widths=[8.0, 8.0])

    def test_rejects_nonpositive_width(self):
        with pytest.raises(ValueError):
            ProbeKernel(centers=[60.0, 66.0], widths=[8.0, 0.0])


class TestSimulateBeta0:
    def test_single_level_constant_in_tau(self):
        lv = levels_from_morse(H2P_X_MORSE, 8, 9)
        rho = np.diag([1.0, 0.0]).astype(complex)
        dm = quantum.IonDensityMatrix(rho=rho, levels=lv)
        k = default_kernel(lv)
        b0 = simulate_beta0(dm, k, TAU, X)
        assert np.ptp(b0, axis=1).max() < 1e-15 * b0.max()

    def test_two_level_full_contrast_cosine(self, two_levels):
        dm = make_dm(two_levels, g=1.0)
        k = ProbeKernel(centers=[70.0, 70.0 + 1e-9], widths=[8.0, 8.0])
        b0 = simulate_beta0(dm, k, TAU, X)
        # where the kernels coincide, modulation depth approaches 1
        row = b0[69]
        depth = (row.max() - row.min()) / (row.max() + row.min())
        assert depth > 0.999
        d_e = two_levels.energy[1] - two_levels.energy[0]
        # K = 1 at the shared center: beta0 = 1 + cos(2 pi c dE tau) exactly
        expected = 1.0 + np.cos(2 * np.pi * C_CM_FS * d_e * TAU)
        np.testing.assert_allclose(row, expected, atol=1e-8)

    def test_beta0_non_negative(self, three_levels):
        dm = make_dm(three_levels, g=1.0)
        b0 = simulate_beta0(dm, default_kernel(three_levels), TAU, X)
        assert b0.min() >= 0.0

    def test_mismatched_kernel_raises(self, three_levels, two_levels):
        dm = make_dm(three_levels)
        with pytest.raises(ValueError):
            simulate_beta0(dm, default_kernel(two_levels), TAU, X)

    def test_beat_amplitude_proportional_to_coherence(self, two_levels):
        # doubling |rho_01| doubles the FFT peak amplitude (power x4)
        k = default_kernel(two_levels)
        d_e = two_levels.energy[1] - two_levels.energy[0]
        freqs = np.fft.rfftfreq(len(TAU), d=4.0) / C_CM_FS
        peak_bin = np.argmin(np.abs(freqs - d_e))
        amps = []
        for g in (0.2, 0.4):
            b0 = simulate_beta0(make_dm(two_levels, g=g), k, TAU, X)
            sig = b0.sum(axis=0)
            spec = np.abs(np.fft.rfft(sig - sig.mean()))
            amps.append(spec[peak_bin])
        assert amps[1] / amps[0] == pytest.approx(2.0, rel=1e-3)

    def test_no_coherence_flat_in_tau(self, three_levels):
        dm = make_dm(three_levels, g=0.0)
        b0 = simulate_beta0(dm, default_kernel(three_levels), TAU, X)
        assert np.ptp(b0, axis=1).max() <= 1e-12 * b0.max()

    def test_three_level_envelope_period(self, three_levels):
        # gaps 1262.5 and 1130.1 -> envelope beat period 1/(c*132.4)
        dm = make_dm(three_levels, g=1.0)
        k = ProbeKernel(centers=[70.0, 70.0 + 1e-9, 70.0 + 2e-9], widths=[8.0] * 3)
        tau = np.arange(0.0, 800.0, 2.0)
        row = simulate_beta0(dm, k, tau, X)[69]
        from h2beats.analysis import beat_envelope

        env = beat_envelope(row, 2.0, (1000.0, 1400.0))
        # envelope minima (collapse) recur with the difference-frequency period
        interior = slice(20, -20)
        idx = np.arange(len(tau))[interior]
        e = env[interior]
        minima = idx[1:-1][(e[1:-1] < e[:-2]) & (e[1:-1] < e[2:])]
        # keep deep minima only
        minima = [i for i in minima if env[i] < 0.2 * env.max()]
        spacing = np.diff(tau[minima])
        expected = 1.0 / (C_CM_FS * 132.4)
        assert np.all(np.abs(spacing - expected) < 6.0)


class TestBaselineInvariance:
    def test_tau_average_matches_population_term(self, two_levels, three_levels):
        for lv in (two_levels, three_levels):
            dm = make_dm(lv, g=0.7)
            k = default_kernel(lv)
            base = beta0_baseline(dm, k, X)
            np.testing.assert_allclose(base, (np.diag(dm.rho).real *
                                              lv.probe_weights**2) @ k.evaluate(X))

    def test_baseline_invariant_across_two_pulse_delay(self, three_levels):
        pulse = PulsePair(center=201639.0, sigma=4843.85, tau_xx=0.0)
        k = default_kernel(three_levels)
        bases = []
        for tau_xx in (11.0, 29.0, 45.0, 102.0):
            dm = quantum.reduce_to_ion(
                quantum.build_joint_state(three_levels, pulse.with_delay(tau_xx))
            )
            bases.append(beta0_baseline(dm, k, X))
        bases = np.asarray(bases)
        assert np.ptp(bases, axis=0).max() / bases.max() < 1e-6


class TestSimulateScan:
    def test_beta2_constant_base_pure_cos2(self, two_levels):
        dm = make_dm(two_levels, g=0.0)  # no beats: modulation is 1
        scan = simulate_scan(dm, default_kernel(two_levels), TAU, 2.0, 0.0, X)
        np.testing.assert_allclose(scan.beta2, 2.0, atol=1e-12)
        np.testing.assert_allclose(scan.beta4, 0.0, atol=1e-12)
        dist = momentum_distribution(scan, 70.0, TAU[3])
        # beta2 = 2: P2(cos 90deg) = -1/2 -> distribution vanishes at 90 deg
        assert dist(np.pi / 2.0) == pytest.approx(0.0, abs=1e-12)

    def test_column_count_on_paper_grid(self, two_levels):
        scan = simulate_scan(make_dm(two_levels), default_kernel(two_levels),
                             TAU, 0.6, 0.15, X)
        assert scan.beta0.shape == (len(X), 213)

    def test_dominant_beat_period_near_30fs(self):
        lv = levels_from_morse(H2P_X_MORSE, 7, 10)
        dm = make_dm(lv, g=1.0)
        # a fully coherent 4-level scan drives the beta2 modulation past 2,
        # which is exactly what the clip diagnostic is for
        with pytest.warns(RuntimeWarning, match="clipping"):
            scan = simulate_scan(dm, default_kernel(lv), TAU, 0.6, 0.15, X)
        sig = scan.beta0.sum(axis=0)
        spec = np.abs(np.fft.rfft(sig - sig.mean()))
        freqs = np.fft.rfftfreq(len(TAU), d=4.0)
        # nearest-neighbor beats dominate: period close to 30 fs
        period = 1.0 / freqs[np.argmax(spec)]
        assert 26.0 < period < 33.0

    def test_same_beat_frequencies_in_all_orders(self, two_levels):
        dm = make_dm(two_levels, g=1.0)
        scan = simulate_scan(dm, default_kernel(two_levels), TAU, 0.6, 0.15, X)
        d_e = two_levels.energy[1] - two_levels.energy[0]
        freqs = np.fft.rfftfreq(len(TAU), d=4.0) / C_CM_FS
        peak_bin = np.argmin(np.abs(freqs - d_e))
        for order in ("beta0", "beta2", "beta4"):
            sig = scan.order(order).sum(axis=0)
            spec = np.abs(np.fft.rfft(sig - sig.mean()))
            assert np.argmax(spec[1:]) + 1 == pytest.approx(peak_bin, abs=1)

    def test_norm_band_static(self, two_levels):
        dm = make_dm(two_levels, g=1.0)
        band = NormalizationBand(center=25.0, width=8.0, amplitude=2.0)
        scan = simulate_scan(dm, default_kernel(two_levels), TAU, 0.6, 0.15, X,
                             norm_band=band)
        low = scan.beta0[X <= 20]
        # only the far Gaussian tails of the beat channels reach the band
        assert np.ptp(low, axis=1).max() < 1e-4 * low.max()


def test_write_scan_csv_round_readable(tmp_path, two_levels):
    import json

    scan = simulate_scan(make_dm(two_levels, g=0.5), default_kernel(two_levels),
                         TAU, 0.6, 0.15, X, tau_xx=29.0)
    kernel = default_kernel(two_levels)
    paths = probe.write_scan_csv(scan, tmp_path, prefix="s29", kernel=kernel)
    assert len(paths) == 4
    manifest = json.loads((tmp_path / "s29_manifest.json").read_text())
    assert manifest["tau_xx_fs"] == 29.0
    assert manifest["files"] == ["s29_beta0.csv", "s29_beta2.csv", "s29_beta4.csv"]
    assert manifest["kernel"]["centers_px"][0] == 58.0
    body = (tmp_path / "s29_beta0.csv").read_text().splitlines()
    assert len(body) == 1 + len(X)


class TestMomentumDistribution:
    def test_isotropic(self, two_levels):
        scan = simulate_scan(make_dm(two_levels, g=0.0), default_kernel(two_levels),
                             TAU, 0.0, 0.0, X)
        dist = momentum_distribution(scan, 60.0, TAU[0])
        theta = np.linspace(0, np.pi, 7)
        np.testing.assert_allclose(dist(theta), dist(0.0))

    def test_solid_angle_integral_equals_4pi_beta0(self, two_levels):
        scan = simulate_scan(make_dm(two_levels, g=0.3), default_kernel(two_levels),
                             TAU, 0.6, 0.15, X)
        ix, it = 65, 40
        dist = momentum_distribution(scan, float(X[ix]), float(TAU[it]))
        theta = np.linspace(0.0, np.pi, 20001)
        integral = 2 * np.pi * np.trapezoid(dist(theta) * np.sin(theta), theta)
        assert integral == pytest.approx(4 * np.pi * scan.beta0[ix, it], rel=1e-7)

    def test_off_grid_raises(self, two_levels):
        scan = simulate_scan(make_dm(two_levels), default_kernel(two_levels),
                             TAU, 0.6, 0.15, X)
        with pytest.raises(KeyError):
            momentum_distribution(scan, 60.5, TAU[0])
