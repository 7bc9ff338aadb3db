"""Pipeline orchestration: scenario in, figure/table artifacts out.

The full chain per two-pulse delay is

    density matrix -> beta maps -> [VMI render + Poisson + inversion] ->
    flux normalization -> FTPS -> beat-band extraction

repeated over ``n_scans`` noise realizations.  Beat-band intensities are then
tracked against the two-pulse delay, fitted to sinusoids per beta order and
combined into splitting estimates, closing the loop back to the configured
level spacings.

All randomness flows from the scenario seed through ``numpy`` SeedSequence
spawn keys indexed by (stream, repeat, delay index, frame index), so results
are independent of execution order and worker count.
"""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import __version__, analysis, optics, probe, quantum, vmi
from .constants import C_CM_FS
from .errors import NumericsError
from .fileio import fmt, write_csv, write_json, write_matrix_csv
from .scenario import Scenario, scenario_hash
from .stab import run_loop

# RNG stream identifiers for SeedSequence spawn keys
_STREAM_VMI = 0
_STREAM_SIGNAL = 1
_STREAM_STAB = 2


def _rng(seed, *key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


class PipelineError(NumericsError):
    """A stage failed; the message carries the stage and artifacts so far."""


@dataclass
class _Stage:
    name: str
    artifacts: list

    def fail(self, exc) -> PipelineError:
        listing = ", ".join(str(p) for p in self.artifacts) or "none"
        return PipelineError(
            f"stage '{self.name}' failed: {exc} (artifacts written so far: {listing})"
        )


def run_coherence_scan(scenario: Scenario, out_dir, threads: int = 1) -> dict:
    """Coherence/purity/entropy versus two-pulse delay, plus located zeros."""
    os.makedirs(out_dir, exist_ok=True)
    artifacts = []
    stage = _Stage("coherence-scan", artifacts)
    try:
        levels = scenario.levels()
        pulse = scenario.pulse_template()
        taus = scenario.tau_xx_list()
        pairs = scenario.pairs()
        scan = quantum.coherence_scan(
            levels, pulse, taus, pairs=pairs,
            ip_ref=scenario.pulse.ip_ref_cm1, workers=max(threads, 1),
        )
        csv_path = os.path.join(out_dir, "coherence_scan.csv")
        write_csv(csv_path, scan.column_names(), scan.rows())
        artifacts.append(csv_path)

        zeros = {}
        for pair in pairs:
            z = quantum.locate_coherence_zeros(
                levels, pulse, pair, tau_max=float(taus.max()),
                ip_ref=scenario.pulse.ip_ref_cm1,
            )
            zeros[f"({pair[0]},{pair[1]})"] = [round(float(t), 4) for t in z]
        json_path = os.path.join(out_dir, "coherence_zeros.json")
        write_json(json_path, {"zeros_fs": zeros, "tau_max_fs": float(taus.max())})
        artifacts.append(json_path)
    except NumericsError as exc:
        raise stage.fail(exc) from exc
    return {"artifacts": artifacts, "rows": len(taus)}


def _beta_maps_to_b(scan_maps, v_grid, op):
    """(beta0, beta2, beta4) maps -> projected coefficients per delay column."""
    beta0, beta2, beta4 = scan_maps
    r2 = 4.0 * np.pi * v_grid**2
    n_t = beta0.shape[1]
    a = np.zeros((n_t, op.n_l, op.r_max))
    a[:, 0, :] = (beta0 / r2[:, None]).T
    a[:, 1, :] = a[:, 0, :] * beta2.T
    a[:, 2, :] = a[:, 0, :] * beta4.T
    b = a.reshape(n_t, -1) @ op.M.T
    return b.reshape(n_t, op.n_l, op.r_max)


def _invert_counts(counts, center, op, a0_floor_frac=0.02):
    """Poisson frame -> recovered beta maps for one delay column."""
    img = vmi.VMIImage(pixels=counts, center=center)
    inverted = vmi.image_to_coeffs(img, op)
    a = inverted.dist.a
    r = inverted.dist.radii
    beta0 = 4.0 * np.pi * r**2 * a[0]
    floor = a0_floor_frac * max(a[0].max(), 1e-300)
    ok = a[0] > floor
    beta2 = np.where(ok, a[1] / np.where(ok, a[0], 1.0), 0.0)
    beta4 = np.where(ok, a[2] / np.where(ok, a[0], 1.0), 0.0)
    return beta0, beta2, beta4


def _observe_tau_xx(scenario, op, dm, i_tau, tau_xx, skip_vmi):
    """All noise realizations of the observed beta maps at one delay.

    Returns (scan, observed) where observed[repeat] = (beta0, beta2, beta4),
    beta0 already normalized by the static low-momentum band.
    """
    v_grid = scenario.v_grid()
    tau_nir = scenario.tau_nir_grid()
    kernel = scenario.kernel()
    scan = probe.simulate_scan(
        dm, kernel, tau_nir,
        scenario.probe.beta2_base, scenario.probe.beta4_base,
        v_grid, norm_band=scenario.norm_band(), tau_xx=tau_xx,
    )
    band = np.abs(v_grid - scenario.probe.norm_band_center_px) <= scenario.probe.norm_band_width_px
    n_scans = scenario.analysis.n_scans
    observed = []
    if skip_vmi or not scenario.vmi.enabled:
        noise = scenario.analysis.signal_noise
        for rep in range(n_scans):
            rng = _rng(scenario.seed, _STREAM_SIGNAL, rep, i_tau)
            maps = []
            for m in (scan.beta0, scan.beta2, scan.beta4):
                if noise > 0:
                    maps.append(m * (1.0 + rng.normal(0.0, noise, m.shape)))
                else:
                    maps.append(m.copy())
            b0, b2, b4 = maps
            norm = b0[band].mean(axis=0)
            observed.append((b0 / norm[None, :], b2, b4))
    else:
        b_stack = _beta_maps_to_b((scan.beta0, scan.beta2, scan.beta4), v_grid, op)
        exposure = scenario.vmi.exposure
        rec0 = [np.empty((op.r_max, len(tau_nir))) for _ in range(n_scans)]
        rec2 = [np.empty((op.r_max, len(tau_nir))) for _ in range(n_scans)]
        rec4 = [np.empty((op.r_max, len(tau_nir))) for _ in range(n_scans)]
        # constant counts-per-intensity conversion across the scan: the total
        # yield genuinely oscillates with the pump-probe delay
        dets = [vmi.render_image(op, b_stack[i]) for i in range(len(tau_nir))]
        mean_total = np.mean([d.pixels.sum() for d in dets])
        for i_nir in range(len(tau_nir)):
            det = dets[i_nir]
            lam = det.pixels * (exposure / mean_total)
            for rep in range(n_scans):
                rng = _rng(scenario.seed, _STREAM_VMI, rep, i_tau, i_nir)
                counts = rng.poisson(lam).astype(float)
                b0, b2, b4 = _invert_counts(counts, det.center, op)
                rec0[rep][:, i_nir] = b0
                rec2[rep][:, i_nir] = b2
                rec4[rep][:, i_nir] = b4
        for rep in range(n_scans):
            norm = rec0[rep][band].mean(axis=0)
            norm = np.where(norm > 0, norm, 1.0)
            observed.append((rec0[rep] / norm[None, :], rec2[rep], rec4[rep]))
    return scan, observed


_WORKER_STATE: dict = {}


def _init_worker(scenario, op, use_vmi, figure_idx):
    _WORKER_STATE.update(
        scenario=scenario, op=op, use_vmi=use_vmi, figure_idx=set(figure_idx)
    )


def _delay_task(args):
    """One two-pulse delay: observe all repeats, reduce to beat peaks.

    Runs inside a worker process; the heavyweight observed maps are returned
    only for the showcase delays that the figure stage needs.
    """
    i_tau, tau, dm = args
    scenario = _WORKER_STATE["scenario"]
    op = _WORKER_STATE["op"]
    use_vmi = _WORKER_STATE["use_vmi"]
    levels = scenario.levels()
    tau_nir = scenario.tau_nir_grid()
    v_grid = scenario.v_grid()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        scan, observed = _observe_tau_xx(scenario, op, dm, i_tau, tau, not use_vmi)
        results = []
        for maps in observed:
            _, peaks = _ftps_and_peaks(scenario, levels, maps, tau_nir, v_grid)
            results.append(peaks)
    keep_maps = observed[0] if i_tau in _WORKER_STATE["figure_idx"] else None
    return scan, keep_maps, results


def _signal_window(scenario) -> tuple:
    """Radial rows carrying the two-color channels, +/- 2 kernel widths."""
    k = scenario.kernel()
    return (
        max(k.centers.min() - 2.0 * k.widths.max(), 1.0),
        min(k.centers.max() + 2.0 * k.widths.max(), float(scenario.vmi.r_max)),
    )


def _ftps_and_peaks(scenario, levels, maps, tau_nir, v_grid):
    """FTPS of observed maps -> per-order, per-pair BeatPeak lists."""
    beta0, beta2, beta4 = maps
    obs_scan = probe.BetaScan(
        tau_xx=float("nan"), tau_ni_grid=tau_nir, v_grid=v_grid,
        beta0=np.clip(beta0, 0.0, None),
        beta2=np.clip(beta2, -1.0, 2.0),
        beta4=beta4,
    )
    ftps = analysis.compute_ftps(
        obs_scan, window=scenario.analysis.window,
        pad_factor=scenario.analysis.pad_factor,
    )
    window = _signal_window(scenario)
    peaks = {}
    for order in analysis.BETA_ORDERS:
        peaks[order] = analysis.extract_beats(
            ftps[order], levels, scenario.pairs(),
            band_bins=scenario.analysis.band_bins, v_window=window,
        )
    return ftps, peaks


def run_full_pipeline(
    scenario: Scenario,
    out_dir,
    skip_vmi: bool = False,
    threads: int = 1,
    save_images: bool | None = None,
) -> dict:
    """End-to-end run producing the beat-closure report and figure analogs."""
    os.makedirs(out_dir, exist_ok=True)
    artifacts = []
    save_images = scenario.vmi.save_images if save_images is None else save_images
    use_vmi = scenario.vmi.enabled and not skip_vmi

    levels = scenario.levels()
    pulse = scenario.pulse_template()
    taus = scenario.tau_xx_list()
    tau_nir = scenario.tau_nir_grid()
    v_grid = scenario.v_grid()
    pairs = scenario.pairs()
    literature = {
        (a, b): float(abs(levels.energy[levels.index(a)] - levels.energy[levels.index(b)]))
        for a, b in pairs
    }

    stage = _Stage("setup", artifacts)
    try:
        levels_csv = os.path.join(out_dir, "levels.csv")
        levels.to_csv(levels_csv)
        artifacts.append(levels_csv)
        op = vmi.build_operator(scenario.vmi.r_max, scenario.vmi.l_max) if use_vmi else None
    except (NumericsError, ValueError) as exc:
        raise stage.fail(exc) from exc

    # ---- quantum stage: density matrices per two-pulse delay --------------
    stage = _Stage("quantum", artifacts)
    try:
        dms = []
        for tau in taus:
            js = quantum.build_joint_state(
                levels, pulse.with_delay(float(tau)),
                ip_ref=scenario.pulse.ip_ref_cm1,
            )
            dms.append(quantum.reduce_to_ion(js))
        run_coherence_scan(scenario, out_dir, threads=threads)
        artifacts.append(os.path.join(out_dir, "coherence_scan.csv"))
        artifacts.append(os.path.join(out_dir, "coherence_zeros.json"))
    except NumericsError as exc:
        raise stage.fail(exc) from exc

    # ---- probe + VMI + FTPS per delay, possibly across processes ----------
    stage = _Stage("probe+vmi+ftps", artifacts)
    figure_idx = {
        int(np.argmin(np.abs(taus - tau_fig)))
        for tau_fig in scenario.analysis.figure_delays_fs
    }
    try:
        if threads > 1:
            with ProcessPoolExecutor(
                max_workers=threads,
                initializer=_init_worker,
                initargs=(scenario, op, use_vmi, figure_idx),
            ) as pool:
                per_tau = list(pool.map(
                    _delay_task, ((i, float(taus[i]), dms[i]) for i in range(len(taus)))
                ))
        else:
            _init_worker(scenario, op, use_vmi, figure_idx)
            per_tau = [_delay_task((i, float(taus[i]), dms[i])) for i in range(len(taus))]
    except (NumericsError, ValueError) as exc:
        raise stage.fail(exc) from exc

    # ---- figure artifacts --------------------------------------------------
    stage = _Stage("figures", artifacts)
    try:
        spectrum_grid = np.linspace(
            pulse.center - 4 * pulse.sigma, pulse.center + 4 * pulse.sigma, 2001
        )
        for tau_fig in scenario.analysis.figure_delays_fs:
            i_tau = int(np.argmin(np.abs(taus - tau_fig)))
            tag = f"tauxx_{fmt(taus[i_tau])}fs"
            spec_path = os.path.join(out_dir, f"xuv_spectrum_{tag}.csv")
            optics.export_spectrum_csv(
                spec_path, pulse.with_delay(float(taus[i_tau])), spectrum_grid
            )
            artifacts.append(spec_path)

            scan, maps, _ = per_tau[i_tau]
            assert maps is not None  # figure delays always keep their maps
            for order, exact, obs in zip(
                analysis.BETA_ORDERS, (scan.beta0, scan.beta2, scan.beta4), maps
            ):
                path = os.path.join(out_dir, f"fig2_{order}_{tag}.csv")
                write_matrix_csv(path, "v_px/tau_nir_fs", v_grid, tau_nir, obs)
                artifacts.append(path)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                ftps, _ = _ftps_and_peaks(scenario, levels, maps, tau_nir, v_grid)
            for order in analysis.BETA_ORDERS:
                path = os.path.join(out_dir, f"fig2_ftps_{order}_{tag}.csv")
                write_matrix_csv(
                    path, "v_px/freq_cm1", v_grid, ftps[order].freq_cm1, ftps[order].power
                )
                artifacts.append(path)
            if save_images and use_vmi:
                # regenerate the repeat-0 frames of this delay (same spawn
                # keys as the analysis pass, so the frames are identical)
                frame_dir = os.path.join(out_dir, f"frames_{tag}")
                os.makedirs(frame_dir, exist_ok=True)
                b_stack = _beta_maps_to_b(
                    (scan.beta0, scan.beta2, scan.beta4), v_grid, op
                )
                dets = [vmi.render_image(op, b_stack[i]) for i in range(len(tau_nir))]
                mean_total = np.mean([d.pixels.sum() for d in dets])
                for i_nir, det in enumerate(dets):
                    rng = _rng(scenario.seed, _STREAM_VMI, 0, i_tau, i_nir)
                    counts = rng.poisson(
                        det.pixels * (scenario.vmi.exposure / mean_total)
                    ).astype(float)
                    frame = vmi.VMIImage(pixels=counts, center=det.center,
                                         exposure=scenario.vmi.exposure)
                    vmi.write_pgm16(
                        os.path.join(frame_dir, f"frame_{i_nir:04d}.pgm"), frame
                    )
                artifacts.append(frame_dir)
    except (NumericsError, ValueError) as exc:
        raise stage.fail(exc) from exc

    # ---- beat tracks, fits, report ----------------------------------------
    stage = _Stage("analysis", artifacts)
    try:
        n_scans = scenario.analysis.n_scans
        # intensity[order][pair] -> (n_tau, n_scans); centroids likewise
        intensity = {o: {p: np.zeros((len(taus), n_scans)) for p in pairs}
                     for o in analysis.BETA_ORDERS}
        centroid = {p: np.zeros((len(taus), n_scans)) for p in pairs}
        for i_tau, (_, _, results) in enumerate(per_tau):
            for rep, peaks in enumerate(results):
                for order in analysis.BETA_ORDERS:
                    for peak in peaks[order]:
                        intensity[order][peak.pair][i_tau, rep] = peak.intensity
                        if order == "beta0":
                            centroid[peak.pair][i_tau, rep] = peak.centroid_cm1

        # column 2: intensity-weighted centroid statistics (beta0 only)
        rayleigh = 1.0 / (C_CM_FS * (tau_nir[-1] - tau_nir[0] + tau_nir[1] - tau_nir[0]))
        col2 = {}
        for p in pairs:
            w = intensity["beta0"][p].ravel()
            c = centroid[p].ravel()
            wsum = w.sum()
            mean = float((w * c).sum() / wsum)
            var = float((w * (c - mean) ** 2).sum() / wsum)
            col2[p] = (mean, float(np.sqrt(var)) if var > 0 else rayleigh / 2.0)

        # column 3: per-order sinusoid fits of the mean track, combined
        col3 = {}
        fits = {}
        ensemble_sigma = {}
        for p in pairs:
            estimates = []
            for order in analysis.BETA_ORDERS:
                track = intensity[order][p]
                mean = track.mean(axis=1)
                sem = track.std(axis=1, ddof=1) / np.sqrt(n_scans) if n_scans > 1 else None
                fit = analysis.fit_beat_oscillation(p, taus, mean, sigma=sem)
                fits[(order, p)] = fit
                # a noise-floor track can fit a spurious period with a small
                # formal sigma; require significant modulation and a period in
                # the neighborhood of the band the track was extracted from
                sig_b = float(np.sqrt(max(fit.covariance[1, 1], 0.0)))
                plausible = (
                    fit.identifiable
                    and fit.amplitude >= 3.0 * max(sig_b, 1e-300)
                    and abs(fit.d_e_cm1 - literature[p]) <= 0.25 * literature[p]
                )
                if plausible:
                    estimates.append((fit.d_e_cm1, fit.d_e_sigma_cm1))
            col3[p] = analysis.combine_orders(estimates)
            if n_scans > 1:
                per_rep = []
                for rep in range(n_scans):
                    try:
                        f = analysis.fit_beat_oscillation(
                            p, taus, intensity["beta0"][p][:, rep]
                        )
                        if f.identifiable:
                            per_rep.append(f.d_e_cm1)
                    except NumericsError:
                        continue
                ensemble_sigma[p] = float(np.std(per_rep, ddof=1)) if len(per_rep) > 1 else None
            else:
                ensemble_sigma[p] = None

        def _num(x):
            return float(x) if np.isfinite(x) else None

        tracks_payload = {}
        for p in pairs:
            path = os.path.join(out_dir, f"fig3_track_{p[0]}_{p[1]}.csv")
            header = ["tau_xx_fs"]
            cols = [taus]
            for order in analysis.BETA_ORDERS:
                header += [f"{order}_intensity", f"{order}_sem"]
                track = intensity[order][p]
                cols.append(track.mean(axis=1))
                cols.append(track.std(axis=1, ddof=1) / np.sqrt(n_scans)
                            if n_scans > 1 else np.zeros(len(taus)))
            write_csv(path, header, zip(*cols))
            artifacts.append(path)
            tracks_payload[f"({p[0]},{p[1]})"] = {
                order: {
                    "offset": _num(fits[(order, p)].offset),
                    "amplitude": _num(fits[(order, p)].amplitude),
                    "period_fs": _num(fits[(order, p)].period_fs),
                    "phase_rad": _num(fits[(order, p)].phase_rad),
                    "d_e_cm1": _num(fits[(order, p)].d_e_cm1),
                    "d_e_sigma_cm1": _num(fits[(order, p)].d_e_sigma_cm1),
                    "identifiable": fits[(order, p)].identifiable,
                }
                for order in analysis.BETA_ORDERS
            }
        tracks_json = os.path.join(out_dir, "beat_tracks.json")
        write_json(tracks_json, tracks_payload)
        artifacts.append(tracks_json)

        report = analysis.table1_report(pairs, literature, col2, col3)
        for row in report["rows"]:
            p = tuple(row["pair"])
            row["ensemble_sigma_cm1"] = ensemble_sigma[p]
            row["fit_period_fs"] = {
                order: (float(t) if np.isfinite(t) else None)
                for order in analysis.BETA_ORDERS
                for t in [fits[(order, p)].period_fs]
            }
        report["expected_period_fs"] = {
            f"({a},{b})": 1.0 / (C_CM_FS * literature[(a, b)]) for a, b in pairs
        }
        report_json = os.path.join(out_dir, "table1_report.json")
        write_json(report_json, report)
        artifacts.append(report_json)
        report_csv = os.path.join(out_dir, "table1_report.csv")
        write_csv(
            report_csv,
            ["assignment", "col2_cm1", "col2_sigma_cm1", "col3_cm1",
             "col3_sigma_cm1", "literature_cm1", "col2_pass", "col3_pass"],
            (
                [r["assignment"], r["col2_cm1"], r["col2_sigma_cm1"], r["col3_cm1"],
                 r["col3_sigma_cm1"], r["literature_cm1"], r["col2_pass"], r["col3_pass"]]
                for r in report["rows"]
            ),
        )
        artifacts.append(report_csv)
    except (NumericsError, ValueError) as exc:
        raise stage.fail(exc) from exc

    manifest = {
        "package_version": __version__,
        "scenario": scenario.to_dict(),
        "scenario_sha256": scenario_hash(scenario),
        "seed": scenario.seed,
        "vmi_enabled": bool(use_vmi),
        "artifacts": sorted(os.path.basename(a) for a in artifacts),
        "all_pass": report["all_pass"],
    }
    write_json(os.path.join(out_dir, "manifest.json"), manifest)
    return report


def run_stabilize(scenario: Scenario, out_dir) -> dict:
    """Closed-loop stabilization run: residual series CSV + summary JSON."""
    os.makedirs(out_dir, exist_ok=True)
    s = scenario.stab
    pid = scenario.pid()
    rng = _rng(scenario.seed, _STREAM_STAB, 0)
    run = run_loop(
        scenario.drift_model(), pid,
        n_steps=s.n_steps, phase_noise_rad=s.phase_noise_rad,
        wavelength_m=s.wavelength_nm * 1e-9,
        frame_shape=(s.frame_rows, s.frame_cols),
        carrier=s.carrier_cycles / s.frame_cols,
        contrast=s.contrast, pixel_noise=s.pixel_noise, rng=rng,
    )
    series_path = os.path.join(out_dir, "stab_residuals.csv")
    write_csv(
        series_path,
        ["step", "true_delay_as", "measured_phase_rad", "residual_as"],
        (
            [k, run.true_delay_as[k], run.measured_phase_rad[k], run.residual_as[k]]
            for k in range(len(run.residual_as))
        ),
    )
    summary = {
        "rms_as": run.rms_as(),
        "p95_as": run.p95_as(),
        "n_steps": s.n_steps,
        "settle_steps": run.settle_steps,
        "gains": {"k_p": pid.k_p, "k_i": pid.k_i, "k_d": pid.k_d},
        "loop_rate_hz": s.loop_rate_hz,
    }
    summary_path = os.path.join(out_dir, "stab_summary.json")
    write_json(summary_path, summary)
    return {"artifacts": [series_path, summary_path], **summary}


def run_invert(paths, r_max, l_max, out_dir, center=None, keep_going=False) -> dict:
    """Batch Abel inversion of PGM frames into coefficient CSVs."""
    os.makedirs(out_dir, exist_ok=True)
    op = vmi.build_operator(r_max, l_max)
    done, failed = [], []
    for path in paths:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                img = vmi.read_pgm16(path)
                if center is not None:
                    img = vmi.VMIImage(pixels=img.pixels, center=center,
                                       exposure=img.exposure)
                result = vmi.image_to_coeffs(img, op)
        except (ValueError, OSError, NumericsError) as exc:
            failed.append({"path": str(path), "error": str(exc)})
            if not keep_going:
                break
            continue
        base = os.path.splitext(os.path.basename(path))[0]
        out_csv = os.path.join(out_dir, f"{base}_coeffs.csv")
        header = ["r"] + [f"a{l}" for l in op.l_values]
        rows = (
            [int(r), *[result.dist.a[li][i] for li in range(op.n_l)]]
            for i, r in enumerate(result.dist.radii)
        )
        write_csv(out_csv, header, rows)
        done.append({"path": str(path), "coeffs": out_csv,
                     "residual_rms": result.residual_rms})
    summary = {
        "n_done": len(done), "n_failed": len(failed),
        "r_max": r_max, "l_max": l_max,
        "operator_condition_number": op.condition_number,
        "done": done, "failed": failed,
    }
    write_json(os.path.join(out_dir, "invert_summary.json"), summary)
    return summary
