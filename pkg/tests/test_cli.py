import hashlib
import json
import os

import numpy as np
import pytest

from h2beats import vmi
from h2beats.cli import main

FAST_SCENARIO = """
seed = 777

[delays]
tau_xx_list_fs = [11.0, 17.0, 23.0, 29.0, 35.0, 41.0, 47.0, 53.0]
tau_nir_stop_fs = 350.0

[molecule]
v_lo = 8
v_hi = 9

[analysis]
pairs = [[8, 9]]
figure_delays_fs = [29.0]
n_scans = 2

[vmi]
enabled = false

[stab]
n_steps = 600
"""


@pytest.fixture()
def fast_config(tmp_path):
    cfg = tmp_path / "scenario.toml"
    cfg.write_text(FAST_SCENARIO)
    return str(cfg)


def tree_digest(root):
    """Hash of every file's bytes under root, path-keyed."""
    digest = {}
    for dirpath, _, files in os.walk(root):
        for name in sorted(files):
            path = os.path.join(dirpath, name)
            rel = os.path.relpath(path, root)
            with open(path, "rb") as fh:
                digest[rel] = hashlib.sha256(fh.read()).hexdigest()
    return digest


class TestCoherenceScan:
    def test_paper_grid_row_count(self, tmp_path):
        out = tmp_path / "out"
        code = main(["coherence-scan", "--out", str(out)])
        assert code == 0
        lines = (out / "coherence_scan.csv").read_text().strip().splitlines()
        assert len(lines) == 1 + 31

    def test_single_delay(self, tmp_path):
        cfg = tmp_path / "one.toml"
        cfg.write_text(
            "[delays]\ntau_xx_list_fs = [29.0]\n"
            "[analysis]\nfigure_delays_fs = [29.0]\n"
        )
        out = tmp_path / "out"
        assert main(["coherence-scan", "--config", str(cfg), "--out", str(out)]) == 0
        lines = (out / "coherence_scan.csv").read_text().strip().splitlines()
        assert len(lines) == 2

    def test_zeros_for_8_9(self, fast_config, tmp_path):
        out = tmp_path / "out"
        assert main(["coherence-scan", "--config", fast_config, "--out", str(out)]) == 0
        zeros = json.loads((out / "coherence_zeros.json").read_text())["zeros_fs"]["(8,9)"]
        assert any(abs(z - 14.758) < 0.05 for z in zeros)
        assert any(abs(z - 44.275) < 0.05 for z in zeros)

    def test_config_error_exit_2(self, tmp_path):
        cfg = tmp_path / "bad.toml"
        cfg.write_text("[molecule]\nomega_e = -5.0\n")
        assert main(["coherence-scan", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


class TestFullPipeline:
    def test_skip_vmi_runs_and_reports(self, fast_config, tmp_path, capsys):
        out = tmp_path / "out"
        code = main(["full-pipeline", "--config", fast_config, "--out", str(out),
                     "--skip-vmi"])
        assert code == 0
        report = json.loads((out / "table1_report.json").read_text())
        assert {r["assignment"] for r in report["rows"]} == {"(8,9)"}
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["vmi_enabled"] is False
        assert "table1_report.csv" in manifest["artifacts"]
        assert "fig2_beta0_tauxx_29fs.csv" in manifest["artifacts"]

    def test_deterministic_byte_identical(self, fast_config, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert main(["full-pipeline", "--config", fast_config, "--out", str(out1),
                     "--skip-vmi"]) == 0
        assert main(["full-pipeline", "--config", fast_config, "--out", str(out2),
                     "--skip-vmi"]) == 0
        assert tree_digest(out1) == tree_digest(out2)

    def test_seed_changes_outputs(self, fast_config, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        main(["full-pipeline", "--config", fast_config, "--out", str(out1), "--skip-vmi"])
        main(["full-pipeline", "--config", fast_config, "--out", str(out2),
              "--skip-vmi", "--seed", "9"])
        d1, d2 = tree_digest(out1), tree_digest(out2)
        assert d1["fig2_beta0_tauxx_29fs.csv"] != d2["fig2_beta0_tauxx_29fs.csv"]

    def test_threads_do_not_change_outputs(self, fast_config, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        main(["full-pipeline", "--config", fast_config, "--out", str(out1), "--skip-vmi"])
        main(["full-pipeline", "--config", fast_config, "--out", str(out2),
              "--skip-vmi", "--threads", "3"])
        assert tree_digest(out1) == tree_digest(out2)

    def test_save_images_writes_invertible_frames(self, tmp_path):
        cfg = tmp_path / "mini.toml"
        cfg.write_text(
            "seed = 11\n"
            "[molecule]\nv_lo = 8\nv_hi = 9\n"
            "[delays]\n"
            "tau_xx_list_fs = [11.0, 17.0, 23.0, 29.0, 35.0, 41.0, 47.0, 53.0]\n"
            "tau_nir_stop_fs = 100.0\n"
            "[probe]\nfirst_center_px = 40.0\n"
            "[vmi]\nr_max = 70\nexposure = 30000.0\n"
            "[analysis]\npairs = [[8, 9]]\nfigure_delays_fs = [29.0]\nn_scans = 2\n"
        )
        out = tmp_path / "out"
        code = main(["full-pipeline", "--config", str(cfg), "--out", str(out),
                     "--save-images"])
        assert code == 0
        frames = sorted((out / "frames_tauxx_29fs").glob("*.pgm"))
        assert len(frames) == 38  # -50..98 step 4
        inv_out = tmp_path / "inv"
        code = main(["invert", str(frames[0]), "--out", str(inv_out),
                     "--r-max", "70", "--l-max", "6"])
        assert code == 0


class TestInvert:
    @pytest.fixture()
    def frames(self, tmp_path, operator_small, rng):
        r = np.arange(1, 61, dtype=float)
        a = np.zeros((4, 60))
        a[0] = np.exp(-0.5 * ((r - 35) / 6.0) ** 2)
        a[1] = 0.4 * a[0]
        b = vmi.project(operator_small, vmi.LegendreDist3D(a=a, l_values=(0, 2, 4, 6)))
        paths = []
        for k in range(3):
            img = vmi.render_image(operator_small, b, exposure=30000.0, rng=rng)
            p = tmp_path / f"frame{k}.pgm"
            vmi.write_pgm16(p, img)
            paths.append(str(p))
        return paths

    def test_batch_inversion(self, frames, tmp_path):
        out = tmp_path / "coeffs"
        code = main(["invert", *frames, "--out", str(out), "--r-max", "60", "--l-max", "6"])
        assert code == 0
        summary = json.loads((out / "invert_summary.json").read_text())
        assert summary["n_done"] == 3 and summary["n_failed"] == 0
        first = (out / "frame0_coeffs.csv").read_text().splitlines()
        assert first[0] == "r,a0,a2,a4,a6"
        assert len(first) == 61

    def test_malformed_frame_keep_going(self, frames, tmp_path):
        bad = tmp_path / "bad.pgm"
        bad.write_bytes(b"P5\n9 9\n255\n" + b"\x01" * 81)
        out = tmp_path / "coeffs"
        code = main(["invert", frames[0], str(bad), frames[1], "--out", str(out),
                     "--r-max", "60", "--l-max", "6", "--keep-going"])
        assert code == 3
        summary = json.loads((out / "invert_summary.json").read_text())
        assert summary["n_done"] == 2 and summary["n_failed"] == 1

    def test_malformed_frame_stops_without_flag(self, frames, tmp_path):
        bad = tmp_path / "bad.pgm"
        bad.write_bytes(b"not a pgm")
        out = tmp_path / "coeffs"
        code = main(["invert", str(bad), frames[0], "--out", str(out),
                     "--r-max", "60", "--l-max", "6"])
        assert code == 3
        summary = json.loads((out / "invert_summary.json").read_text())
        assert summary["n_done"] == 0

    def test_bad_center_flag(self, frames, tmp_path):
        code = main(["invert", frames[0], "--out", str(tmp_path / "o"),
                     "--center", "oops"])
        assert code == 2


class TestStabilizeSim:
    def test_summary_has_rms(self, fast_config, tmp_path):
        out = tmp_path / "out"
        code = main(["stabilize-sim", "--config", fast_config, "--out", str(out)])
        assert code == 0
        summary = json.loads((out / "stab_summary.json").read_text())
        assert summary["rms_as"] < 10.0
        lines = (out / "stab_residuals.csv").read_text().splitlines()
        assert lines[0] == "step,true_delay_as,measured_phase_rad,residual_as"
        assert len(lines) == 1 + 600
